"""Collaborative disease/symptom generation for automatic diagnosis, desk scale."""

from .corpus import (
    Corpus,
    PatientRecord,
    PrefixIndex,
    SymptomStatus,
    SyntheticConfig,
    Vocab,
    generate_synthetic,
    load_corpus,
    write_corpus,
)
from .augmentation import ExpandedSample, expand_record
from .model import CoadModel, ModelConfig, chain_positions
from .training import TrainConfig, train
from .dialogue import DialogueSession, SimulatedPatient, run_episode
from .evaluation import MetricsReport, Protocol, combined_score, evaluate, run_experiment

__all__ = [
    "Corpus",
    "PatientRecord",
    "PrefixIndex",
    "SymptomStatus",
    "SyntheticConfig",
    "Vocab",
    "generate_synthetic",
    "load_corpus",
    "write_corpus",
    "ExpandedSample",
    "expand_record",
    "CoadModel",
    "ModelConfig",
    "chain_positions",
    "TrainConfig",
    "train",
    "DialogueSession",
    "SimulatedPatient",
    "run_episode",
    "MetricsReport",
    "Protocol",
    "combined_score",
    "evaluate",
    "run_experiment",
]

__version__ = "0.1.0"

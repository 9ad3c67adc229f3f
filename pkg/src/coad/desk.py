"""Frozen desk-scale experiment configuration.

The self-contained benchmark everything is verified against: an 8-disease /
30-symptom synthetic corpus (500 train / 100 test), the two-block desk model,
and the training budget used for the variant grid. Tests and the experiment
scripts import these so there is exactly one definition of the setup.

Geometry notes, learned the hard way at this scale:
- implicit counts are pushed near the evaluation turn budget so a policy
  cannot harvest recall by simply out-spending a model that stops honestly;
- characteristic profiles are nearly always fully present, which keeps
  "nothing left to ask" predictable from the transcript and the end token
  learnable;
- record length is a function of the kept profile (see SyntheticConfig), for
  the same reason.
"""

from __future__ import annotations

from .corpus import Corpus, SyntheticConfig, Vocab, generate_synthetic
from .model import ModelConfig
from .training import TrainConfig

ACCEPTANCE_CORPUS = SyntheticConfig(
    n_diseases=8,
    n_symptoms=30,
    profile_size=13,
    profile_presence=0.97,
    negative_status_prob=0.15,
    explicit_range=(2, 3),
    implicit_range=(10, 10),
    n_train=500,
    n_test=100,
    seed=2026,
)

# limited-turn budget the headline claim is evaluated at
ACCEPTANCE_T_MAX = 10
ACCEPTANCE_SEEDS = (1, 2, 3, 4, 5)


def make_acceptance_corpus() -> Corpus:
    return generate_synthetic(ACCEPTANCE_CORPUS)


def desk_model_config(vocab: Vocab, seed: int = 0) -> ModelConfig:
    return ModelConfig(
        n_symptom_tokens=vocab.n_symptom_tokens,
        n_diseases=vocab.n_diseases,
        layers=2,
        hidden=64,
        heads=2,
        ff=256,
        dropout=0.1,
        max_len=64,
        seed=seed,
        dtype="float32",
    )


def acceptance_train_config(variant: str = "full", seed: int = 1) -> TrainConfig:
    return TrainConfig(
        variant=variant,
        learning_rate=2.5e-3,
        batch_size=16,
        steps=3000,
        grad_clip=1.0,
        seed=seed,
        weight_formula="group",
        final_s_label="end",
    )

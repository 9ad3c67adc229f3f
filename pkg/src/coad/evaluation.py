"""Metrics and the train/evaluate experiment grid.

Four numbers describe a run: disease accuracy (Ac), implicit-symptom recall
(Rc), their harmonic mean (the combined score Cs), and mean inquiry turns (T).
Reports average Ac/Rc/T over training seeds and recompute Cs from the averaged
Ac and Rc, so the harmonic-mean identity holds for every emitted cell; the
per-seed breakdown keeps its own per-seed Cs values.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import Corpus, PatientRecord, SymptomStatus, Vocab
from .dialogue import EpisodeResult, run_episode
from .model import CoadModel, ModelConfig
from .training import TrainConfig, train

__all__ = [
    "combined_score",
    "episode_metrics",
    "evaluate_split",
    "evaluate",
    "SeedMetrics",
    "MetricsReport",
    "Protocol",
    "CellResult",
    "ExperimentReport",
    "run_experiment",
]


def combined_score(ac: float, rc: float) -> float:
    """Harmonic mean of disease accuracy and symptom recall; 0 when both vanish."""
    if ac + rc <= 0.0:
        return 0.0
    return 2.0 * ac * rc / (ac + rc)


def episode_metrics(
    episode: EpisodeResult, record: PatientRecord, recall_positive_only: bool = False
) -> tuple[int, float, int]:
    """(hit, recall fraction, turns) for one episode against its source record.

    Recall counts inquired implicit symptoms over all implicit symptoms, or
    over the positively-stated ones when ``recall_positive_only`` is set.
    Records with an empty denominator score recall 1.0 by convention.
    """
    hit = int(episode.predicted == record.disease)
    targets = {
        sid
        for sid, status in record.implicit
        if not recall_positive_only or status == SymptomStatus.PRESENT
    }
    if targets:
        recall = len(targets & set(episode.inquired)) / len(targets)
    else:
        recall = 1.0
    return hit, recall, episode.turns


def evaluate_split(
    model: CoadModel,
    records: tuple[PatientRecord, ...],
    vocab: Vocab,
    mode: str,
    t_max: int,
    recall_positive_only: bool = False,
) -> tuple[dict, list[EpisodeResult]]:
    """Run every record as an episode; returns aggregate stats and the episodes."""
    if not records:
        raise ValueError("cannot evaluate an empty test set")
    hits, recalls, turns = [], [], []
    episodes = []
    for record in records:
        episode = run_episode(model, record, mode, t_max, vocab)
        hit, recall, t = episode_metrics(episode, record, recall_positive_only)
        hits.append(hit)
        recalls.append(recall)
        turns.append(t)
        episodes.append(episode)
    ac = float(np.mean(hits))
    rc = float(np.mean(recalls))
    stats = {"ac": ac, "rc": rc, "cs": combined_score(ac, rc), "t": float(np.mean(turns))}
    return stats, episodes


@dataclass(frozen=True)
class SeedMetrics:
    seed: int
    ac: float
    rc: float
    cs: float
    t: float


@dataclass
class MetricsReport:
    ac: float
    rc: float
    cs: float
    t: float
    per_seed: list[SeedMetrics]
    config: dict = field(default_factory=dict)

    @classmethod
    def from_seed_metrics(cls, per_seed: list[SeedMetrics], config: dict | None = None) -> "MetricsReport":
        ac = float(np.mean([m.ac for m in per_seed]))
        rc = float(np.mean([m.rc for m in per_seed]))
        t = float(np.mean([m.t for m in per_seed]))
        return cls(ac=ac, rc=rc, cs=combined_score(ac, rc), t=t, per_seed=per_seed, config=config or {})


def evaluate(
    models,
    records: tuple[PatientRecord, ...],
    vocab: Vocab,
    mode: str,
    t_max: int,
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5),
    recall_positive_only: bool = False,
) -> MetricsReport:
    """Per-seed evaluation over the full test set, averaged into one report.

    ``models`` is a single model or a seed-keyed mapping. Decoding is greedy,
    so with a single model every seed row is identical; seeds matter when each
    one carries its own trained model.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    per_seed = []
    for seed in seeds:
        model = models[seed] if isinstance(models, dict) else models
        stats, _ = evaluate_split(model, records, vocab, mode, t_max, recall_positive_only)
        per_seed.append(SeedMetrics(seed=seed, **stats))
    return MetricsReport.from_seed_metrics(
        per_seed, config={"mode": mode, "t_max": t_max, "recall_positive_only": recall_positive_only}
    )


@dataclass(frozen=True)
class Protocol:
    mode: str = "limited"
    t_max_values: tuple[int, ...] = (10,)
    variants: tuple[str, ...] = ("full", "no_d", "no_s", "plain")
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)


@dataclass
class CellResult:
    variant: str
    mode: str
    t_max: int
    ac: float
    rc: float
    cs: float
    t: float
    per_seed: list[SeedMetrics]


@dataclass
class ExperimentReport:
    cells: list[CellResult]
    config: dict

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "cells": [
                {
                    "variant": c.variant,
                    "mode": c.mode,
                    "t_max": c.t_max,
                    "Ac": round(c.ac, 6),
                    "Rc": round(c.rc, 6),
                    "Cs": round(c.cs, 6),
                    "T": round(c.t, 6),
                    "per_seed": [
                        {
                            "seed": m.seed,
                            "Ac": round(m.ac, 6),
                            "Rc": round(m.rc, 6),
                            "Cs": round(m.cs, 6),
                            "T": round(m.t, 6),
                        }
                        for m in c.per_seed
                    ],
                }
                for c in self.cells
            ],
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    def to_table(self) -> str:
        """Aligned text table: one row per variant, metric columns per budget."""
        budgets = sorted({(c.mode, c.t_max) for c in self.cells})
        variants = []
        for c in self.cells:
            if c.variant not in variants:
                variants.append(c.variant)
        header = ["variant"]
        for mode, t_max in budgets:
            tag = f"{mode}@{t_max}"
            header.extend([f"Ac[{tag}]", f"Rc[{tag}]", f"Cs[{tag}]", f"T[{tag}]"])
        rows = [header]
        lookup = {(c.variant, c.mode, c.t_max): c for c in self.cells}
        for variant in variants:
            row = [variant]
            for mode, t_max in budgets:
                c = lookup.get((variant, mode, t_max))
                if c is None:
                    row.extend(["-"] * 4)
                else:
                    row.extend([f"{c.ac:.3f}", f"{c.rc:.3f}", f"{c.cs:.3f}", f"{c.t:.2f}"])
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
        return "\n".join(lines)


def _run_job(args) -> list[tuple[str, int, str, int, dict]]:
    """Train one (variant, seed) model and evaluate every budget cell."""
    corpus, model_cfg, base_cfg, variant, seed, protocol, recall_positive_only = args
    cfg = replace(base_cfg, variant=variant, seed=seed)
    run_model_cfg = replace(model_cfg, seed=seed)
    result = train(corpus, run_model_cfg, cfg)
    out = []
    for t_max in protocol.t_max_values:
        stats, _ = evaluate_split(
            result.model, corpus.test, corpus.vocab, protocol.mode, t_max, recall_positive_only
        )
        out.append((variant, seed, protocol.mode, t_max, stats))
    return out


def run_experiment(
    corpus: Corpus,
    model_cfg: ModelConfig,
    base_train_cfg: TrainConfig,
    protocol: Protocol,
    workers: int | None = None,
    recall_positive_only: bool = False,
) -> ExperimentReport:
    """Train per (variant, seed), evaluate every (mode, t_max) cell, assemble a report.

    Jobs are independent and may run in a process pool (``workers`` > 1); the
    report is identical either way because each job is seeded on its own.
    """
    jobs = [
        (corpus, model_cfg, base_train_cfg, variant, seed, protocol, recall_positive_only)
        for variant in protocol.variants
        for seed in protocol.seeds
    ]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]

    by_cell: dict[tuple[str, str, int], list[SeedMetrics]] = {}
    for rows in results:
        for variant, seed, mode, t_max, stats in rows:
            by_cell.setdefault((variant, mode, t_max), []).append(SeedMetrics(seed=seed, **stats))
    cells = []
    for variant in protocol.variants:
        for t_max in protocol.t_max_values:
            per_seed = sorted(by_cell[(variant, protocol.mode, t_max)], key=lambda m: m.seed)
            agg = MetricsReport.from_seed_metrics(per_seed)
            cells.append(
                CellResult(
                    variant=variant, mode=protocol.mode, t_max=t_max,
                    ac=agg.ac, rc=agg.rc, cs=agg.cs, t=agg.t, per_seed=per_seed,
                )
            )
    config = {
        "model": asdict(model_cfg),
        "train": asdict(base_train_cfg),
        "protocol": asdict(protocol),
        "recall_positive_only": recall_positive_only,
    }
    return ExperimentReport(cells=cells, config=config)

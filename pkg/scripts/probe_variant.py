#!/usr/bin/env python3
"""Quick single-variant probe: train once, evaluate several protocols."""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from coad.corpus import SyntheticConfig, generate_synthetic
from coad.evaluation import evaluate_split
from coad.model import ModelConfig
from coad.training import TrainConfig, train


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--variant", default="full")
    ap.add_argument("--steps", type=int, default=800)
    ap.add_argument("--learning-rate", type=float, default=2e-3)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--corpus-seed", type=int, default=2026)
    ap.add_argument("--explicit-min", type=int, default=1)
    ap.add_argument("--explicit-max", type=int, default=2)
    ap.add_argument("--implicit-min", type=int, default=2)
    ap.add_argument("--implicit-max", type=int, default=5)
    ap.add_argument("--profile-size", type=int, default=6)
    ap.add_argument("--profile-presence", type=float, default=0.75)
    ap.add_argument("--negative-prob", type=float, default=0.15)
    ap.add_argument("--dropout", type=float, default=0.1)
    ap.add_argument("--final-s-label", default="end")
    args = ap.parse_args()

    corpus = generate_synthetic(
        SyntheticConfig(
            n_diseases=8, n_symptoms=30,
            profile_size=args.profile_size, profile_presence=args.profile_presence,
            negative_status_prob=args.negative_prob,
            explicit_range=(args.explicit_min, args.explicit_max), implicit_range=(args.implicit_min, args.implicit_max),
            n_train=500, n_test=100, seed=args.corpus_seed,
        )
    )
    model_cfg = ModelConfig(
        n_symptom_tokens=corpus.vocab.n_symptom_tokens, n_diseases=corpus.vocab.n_diseases,
        layers=2, hidden=64, heads=2, ff=256, dropout=args.dropout, max_len=64, seed=args.seed,
    )
    cfg = TrainConfig(
        variant=args.variant, learning_rate=args.learning_rate, batch_size=args.batch_size,
        steps=args.steps, seed=args.seed, final_s_label=args.final_s_label,
    )
    t0 = time.time()
    result = train(corpus, model_cfg, cfg)
    print(f"trained {args.variant} steps={args.steps} in {time.time()-t0:.0f}s "
          f"final_loss={result.final_loss:.4f} sym={result.log[-1]['loss_sym']:.4f} dis={result.log[-1]['loss_dis']:.4f}")
    for mode, t_max in (("limited", 10), ("fixed", 10), ("limited", 20), ("limited", 5)):
        stats, eps = evaluate_split(result.model, corpus.test, corpus.vocab, mode, t_max)
        turns = [e.turns for e in eps]
        print(f"  {mode}@{t_max}: Ac={stats['ac']:.3f} Rc={stats['rc']:.3f} Cs={stats['cs']:.3f} "
              f"T={stats['t']:.2f} (turn spread {min(turns)}..{max(turns)})")
    return 0


if __name__ == "__main__":
    sys.exit(main())

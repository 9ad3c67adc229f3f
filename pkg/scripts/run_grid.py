#!/usr/bin/env python3
"""Train/evaluate the full variant grid on the frozen desk benchmark.

Defaults reproduce the headline experiment exactly (all four variants, seeds
1..5, limited turns); flags shrink the grid for quick probes or point it at a
corpus file of your own.
"""

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from coad.corpus import load_corpus
from coad.desk import (
    ACCEPTANCE_SEEDS,
    ACCEPTANCE_T_MAX,
    acceptance_train_config,
    desk_model_config,
    make_acceptance_corpus,
)
from coad.evaluation import Protocol, run_experiment


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus", default=None, help="corpus file; default: the frozen synthetic benchmark")
    ap.add_argument("--seeds", type=int, nargs="+", default=list(ACCEPTANCE_SEEDS))
    ap.add_argument("--variants", default="full,no_d,no_s,plain")
    ap.add_argument("--steps", type=int, default=None, help="override the frozen step budget")
    ap.add_argument("--mode", default="limited")
    ap.add_argument("--t-max", type=int, nargs="+", default=[ACCEPTANCE_T_MAX])
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default=None, help="write the JSON report here")
    args = ap.parse_args()

    corpus = load_corpus(args.corpus) if args.corpus else make_acceptance_corpus()
    train_cfg = acceptance_train_config()
    if args.steps:
        train_cfg = replace(train_cfg, steps=args.steps)
    protocol = Protocol(
        mode=args.mode,
        t_max_values=tuple(args.t_max),
        variants=tuple(args.variants.split(",")),
        seeds=tuple(args.seeds),
    )
    t0 = time.time()
    report = run_experiment(corpus, desk_model_config(corpus.vocab), train_cfg, protocol, workers=args.workers)
    elapsed = time.time() - t0
    print(report.to_table())
    print(f"\nelapsed: {elapsed:.1f}s")
    if args.out:
        payload = report.to_json_dict()
        payload["elapsed_seconds"] = round(elapsed, 1)
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True))
        print(f"report written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

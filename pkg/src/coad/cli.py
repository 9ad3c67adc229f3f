"""Operator surface: one binary, subcommands for every stage of the pipeline.

Exit codes: 0 success, 2 usage (argparse or config conflicts), 3 data errors
(missing/malformed corpus or checkpoint files), 4 runtime failures. Results go
to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path


from .augmentation import DISEASE_IGNORE, expand_record
from .checkpoint import CheckpointError
from .corpus import (
    CorpusError,
    PrefixIndex,
    SyntheticConfig,
    Vocab,
    generate_synthetic,
    load_corpus,
    write_corpus,
)
from .dialogue import run_interactive
from .engine import EngineError
from .evaluation import CellResult, ExperimentReport, Protocol, evaluate, run_experiment
from .model import CoadModel, ModelConfig, chain_positions
from .training import REFERENCE_PRESETS, TrainConfig, TrainingDiverged, train

USAGE_EXIT = 2
DATA_EXIT = 3
RUNTIME_EXIT = 4


class UsageConflict(Exception):
    pass


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, default=2, help="decoder blocks")
    p.add_argument("--hidden", type=int, default=64, help="hidden width")
    p.add_argument("--heads", type=int, default=2, help="attention heads")
    p.add_argument("--ff", type=int, default=256, help="feed-forward width")
    p.add_argument("--dropout", type=float, default=0.1, help="dropout rate")
    p.add_argument("--max-len", type=int, default=64, help="maximum input length")
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=("full", "no_d", "no_s", "plain"), default="full")
    p.add_argument("--learning-rate", type=float, default=2e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--steps", type=int, default=1500)
    p.add_argument("--grad-clip", type=float, default=1.0, help="global-norm clip; 0 disables")
    p.add_argument("--weight-formula", choices=("group", "target", "shifted"), default="group")
    p.add_argument("--final-s-label", choices=("end", "ignore"), default="end")
    p.add_argument(
        "--preset",
        choices=sorted(REFERENCE_PRESETS),
        default=None,
        help="published learning-rate/batch-size preset; other flags still apply",
    )


def _model_config(args, vocab: Vocab, seed: int) -> ModelConfig:
    return ModelConfig(
        n_symptom_tokens=vocab.n_symptom_tokens,
        n_diseases=vocab.n_diseases,
        layers=args.layers,
        hidden=args.hidden,
        heads=args.heads,
        ff=args.ff,
        dropout=args.dropout,
        max_len=args.max_len,
        seed=seed,
        dtype=args.dtype,
    )


def _train_config(args, seed: int) -> TrainConfig:
    kwargs = dict(
        variant=args.variant,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        steps=args.steps,
        grad_clip=None if args.grad_clip == 0 else args.grad_clip,
        seed=seed,
        weight_formula=args.weight_formula,
        final_s_label=args.final_s_label,
    )
    if args.preset:
        kwargs.update(REFERENCE_PRESETS[args.preset])
    return TrainConfig(**kwargs)


def cmd_gen_data(args) -> int:
    config = SyntheticConfig(
        n_diseases=args.diseases,
        n_symptoms=args.symptoms,
        profile_size=args.profile_size,
        profile_presence=args.profile_presence,
        negative_status_prob=args.negative_prob,
        explicit_range=(args.explicit_min, args.explicit_max),
        implicit_range=(args.implicit_min, args.implicit_max),
        n_train=args.train_size,
        n_test=args.test_size,
        seed=args.seed,
    )
    corpus = generate_synthetic(config)
    write_corpus(corpus, args.out)
    stats = corpus.stats()
    print(f"wrote {args.out}")
    print("corpus statistics")
    print(f"  # Disease       {stats['diseases']}")
    print(f"  # Symptom       {stats['symptoms']}")
    print(f"  Symptom type    {stats['symptom_type']}")
    print(f"  Average length  {stats['average_length']:.2f}")
    print(f"  # Training      {stats['train']}")
    print(f"  # Test          {stats['test']}")
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    train_cfg = _train_config(args, args.seed)
    model_cfg = _model_config(args, corpus.vocab, args.seed)
    result = train(corpus, model_cfg, train_cfg)
    extra = {
        "vocab": {"symptoms": list(corpus.vocab.symptoms), "diseases": list(corpus.vocab.diseases)},
        "train": asdict(train_cfg),
    }
    result.model.save(args.out, extra_config=extra)
    if args.log:
        result.write_log(args.log)
    print(f"trained variant={train_cfg.variant} steps={train_cfg.steps} final_loss={result.final_loss:.4f}")
    print(f"checkpoint written to {args.out}")
    return 0


def _vocab_from_echo(echo: dict) -> Vocab:
    voc = echo.get("vocab")
    if not voc:
        raise CheckpointError("checkpoint carries no vocabulary echo")
    return Vocab(symptoms=tuple(voc["symptoms"]), diseases=tuple(voc["diseases"]))


def cmd_evaluate(args) -> int:
    corpus = load_corpus(args.corpus)
    t_values = tuple(args.t_max)
    if args.mode == "fixed" and 0 in t_values:
        raise UsageConflict("fixed mode with a turn budget of 0 asks for nothing")
    if args.checkpoint:
        cells = []
        for path in args.checkpoint:
            model, echo = CoadModel.load(path)
            vocab = _vocab_from_echo(echo)
            if vocab.symptoms != corpus.vocab.symptoms or vocab.diseases != corpus.vocab.diseases:
                raise CorpusError(f"checkpoint {path} vocabulary does not match the corpus")
            variant = echo.get("train", {}).get("variant", Path(path).stem)
            seed = echo.get("train", {}).get("seed", 0)
            for t_max in t_values:
                report = evaluate(
                    model, corpus.test, vocab, args.mode, t_max,
                    seeds=(seed,), recall_positive_only=args.recall_positive_only,
                )
                cells.append(
                    CellResult(
                        variant=variant, mode=args.mode, t_max=t_max,
                        ac=report.ac, rc=report.rc, cs=report.cs, t=report.t,
                        per_seed=report.per_seed,
                    )
                )
        report_obj = ExperimentReport(cells=cells, config={"mode": args.mode, "t_max": list(t_values)})
    else:
        protocol = Protocol(
            mode=args.mode,
            t_max_values=t_values,
            variants=tuple(args.variants.split(",")),
            seeds=tuple(args.seeds),
        )
        base_train = _train_config(args, args.seed)
        model_cfg = _model_config(args, corpus.vocab, args.seed)
        report_obj = run_experiment(
            corpus, model_cfg, base_train, protocol,
            workers=args.workers, recall_positive_only=args.recall_positive_only,
        )
    print(report_obj.to_table())
    if args.report:
        report_obj.write_json(args.report)
        print(f"report written to {args.report}", file=sys.stderr)
    return 0


def cmd_inspect_sample(args) -> int:
    corpus = load_corpus(args.corpus)
    records = corpus.train if args.split == "train" else corpus.test
    if not 0 <= args.index < len(records):
        raise UsageConflict(f"record index {args.index} outside the {args.split} split (size {len(records)})")
    record = records[args.index]
    index = PrefixIndex(corpus.train)
    sample = expand_record(
        record, index, corpus.vocab,
        final_s_label=args.final_s_label, weight_formula=args.weight_formula,
    )
    vocab = corpus.vocab
    positions = chain_positions(record.n_explicit, record.n_implicit)
    print(f"sample: split={args.split} index={args.index}")
    print(f"record: N={record.n_explicit} M={record.n_implicit} disease='{vocab.disease_name(record.disease)}'")
    rows = [("pos", "chain", "token", "status", "group", "s-label", "d-label", "weight")]
    p = sample.prefix_len
    for i, (sid, status) in enumerate(sample.repeated_tokens):
        if i < p:
            rows.append((str(i), str(positions[i]), vocab.symptom_name(sid), str(status), "-", "-", "-", "-"))
        else:
            r = i - p
            d = sample.d_labels[r]
            rows.append(
                (
                    str(i),
                    str(positions[i]),
                    vocab.symptom_name(sid),
                    str(status),
                    str(sample.group_of[r]),
                    vocab.symptom_name(sample.s_labels[r]),
                    "#" if d == DISEASE_IGNORE else vocab.disease_name(d),
                    f"{sample.weights[r]:g}",
                )
            )
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    print("mask (# visible, . blocked):")
    for q in range(sample.total_len):
        bits = "".join("#" if sample.mask[q, k] else "." for k in range(sample.total_len))
        print(f"  {q:>3} {bits}")
    return 0


def _parse_explicit(spec: str, vocab: Vocab) -> list[tuple[int, int]]:
    tokens = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            name, raw_status = part.rsplit("=", 1)
            status = int(raw_status)
        else:
            name, status = part, 1
        if status not in (0, 1, 2):
            raise UsageConflict(f"status must be 0, 1, or 2: {part!r}")
        tokens.append((vocab.symptom_id(name.strip()), status))
    if not tokens:
        raise UsageConflict("no explicit symptoms given")
    return tokens


def cmd_diagnose(args) -> int:
    model, echo = CoadModel.load(args.checkpoint)
    vocab = _vocab_from_echo(echo)
    if args.mode == "fixed" and args.t_max == 0:
        raise UsageConflict("fixed mode with a turn budget of 0 asks for nothing")
    explicit = _parse_explicit(args.explicit, vocab)
    run_interactive(model, vocab, explicit, args.mode, args.t_max)
    return 0


def cmd_serve(args) -> int:
    from .service import build_server  # deferred: keeps CLI import light

    model, echo = CoadModel.load(args.checkpoint)
    vocab = _vocab_from_echo(echo)
    server = build_server(
        model, vocab, host=args.host, port=args.port,
        static_dir=args.static_dir, idle_ttl=args.idle_ttl,
    )
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}/ (ctrl-c to stop)", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coad",
        description="Collaborative disease/symptom generation for automatic diagnosis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("gen-data", help="generate a synthetic corpus file", formatter_class=fmt)
    p.add_argument("--out", default="corpus.jsonl", help="output corpus path")
    p.add_argument("--diseases", type=int, default=8)
    p.add_argument("--symptoms", type=int, default=30)
    p.add_argument("--profile-size", type=int, default=6)
    p.add_argument("--profile-presence", type=float, default=0.75)
    p.add_argument("--negative-prob", type=float, default=0.15)
    p.add_argument("--explicit-min", type=int, default=1)
    p.add_argument("--explicit-max", type=int, default=2)
    p.add_argument("--implicit-min", type=int, default=2)
    p.add_argument("--implicit-max", type=int, default=5)
    p.add_argument("--train-size", type=int, default=500)
    p.add_argument("--test-size", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one variant on a corpus", formatter_class=fmt)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default="model.ckpt", help="checkpoint path")
    p.add_argument("--log", default=None, help="write the JSONL training log here")
    p.add_argument("--seed", type=int, default=1)
    _add_train_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "evaluate",
        help="evaluate checkpoints, or train+evaluate a variant grid",
        formatter_class=fmt,
    )
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", action="append", default=None, help="repeatable; skip to train in-process")
    p.add_argument("--variants", default="full,no_d,no_s,plain", help="comma list for the in-process grid")
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    p.add_argument("--mode", choices=("limited", "fixed"), default="limited")
    p.add_argument("--t-max", type=int, nargs="+", default=[10])
    p.add_argument("--recall-positive-only", action="store_true")
    p.add_argument("--workers", type=int, default=None, help="process pool size for the grid")
    p.add_argument("--report", default=None, help="write the machine-readable report here")
    p.add_argument("--seed", type=int, default=1, help="base seed for in-process training")
    _add_train_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-sample", help="dump one expanded training sample", formatter_class=fmt)
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--final-s-label", choices=("end", "ignore"), default="end")
    p.add_argument("--weight-formula", choices=("group", "target", "shifted"), default="group")
    p.set_defaults(func=cmd_inspect_sample)

    p = sub.add_parser("diagnose", help="interactive diagnosis in the terminal", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--explicit", required=True, help="comma list of name[=status], e.g. 'headache,cough=2'")
    p.add_argument("--mode", choices=("limited", "fixed"), default="limited")
    p.add_argument("--t-max", type=int, default=10)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("serve", help="run the HTTP diagnosis service", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static-dir", default=None, help="serve this directory at / (the web client)")
    p.add_argument("--idle-ttl", type=float, default=1800.0, help="session idle expiry in seconds")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageConflict as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (CorpusError, FileNotFoundError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except (EngineError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())

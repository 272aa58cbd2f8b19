"""Command-line entry point: ``unipred <subcommand> ...``.

Exit codes: 0 success, 2 bad spec/config, 3 capacity exceeded, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .augmentation import AugmentSpec, prop1_gain
from .corpus import ingest_corpus
from .errors import CapacityError, DomainError, NumericalError, SpecError
from .fsmp import TrueLawPredictor, uniform_predictor
from .harness import ExperimentSpec, run
from .kvconfig import load_kv
from .limits import theorem2_check
from .markov import exact_conditional_entropy, generate, load_source, theorem1_limit
from .plotting import plot
from .seqcore import load_dataset, save_dataset
from .transformer import ModelConfig, TrainOptions, save_checkpoint, train

EXIT_SPEC, EXIT_CAPACITY, EXIT_NUMERICAL = 2, 3, 4


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _load_experiment(args, predictor: str | None = None) -> ExperimentSpec:
    spec = ExperimentSpec.load(args.spec)
    if predictor is not None and spec.predictor != predictor:
        raise SpecError(f"{args.command} expects predictor = {predictor}, got {spec.predictor}")
    if args.seed is not None:
        spec.seeds = [args.seed]
    return spec


def _print_summary(records, base: str) -> None:
    key = "test_loss_bits" if base == "bits" else "test_loss_nats"
    for r in records:
        print(f"k={r.k} n={r.n} seed={r.seed} mode={r.mode or '-'} t0={r.t0 or '-'} "
              f"{key}={getattr(r, key):.6f} status={r.status}")


def cmd_gen_data(args) -> int:
    src = load_source(args.spec)
    d = generate(src, args.n, args.seed or 0)
    save_dataset(d, args.out)
    print(f"wrote {len(d)} samples to {args.out}")
    return 0


def _run_experiment(args, predictor: str | None) -> int:
    spec = _load_experiment(args, predictor)
    records = run(spec, workers=args.workers, output=args.out)
    _print_summary(records, args.base)
    return 0


def cmd_fsmp_run(args) -> int:
    return _run_experiment(args, "fsmp")


def cmd_sweep(args) -> int:
    return _run_experiment(args, None)


def cmd_augment_exp(args) -> int:
    spec = _load_experiment(args, "transformer")
    if spec.t0 == [None]:
        spec.t0 = [0, spec.n_pos - 1]
    records = run(spec, workers=args.workers, output=args.out)
    _print_summary(records, args.base)
    for t0 in spec.t0:
        for n in spec.n:
            gain = prop1_gain(max(1, n // spec.n_pos), AugmentSpec(int(t0), spec.n_pos))
            print(f"prop1_gain n_batches={max(1, n // spec.n_pos)} t0={t0}: {gain:.6g}")
    return 0


def cmd_train(args) -> int:
    cfg = load_kv(args.spec)
    d = load_dataset(args.data)
    model_keys = {"d_model", "ffn_hidden", "heads", "span", "layers", "mode", "use_ffn",
                  "positional", "residual"}
    opt_keys = {"steps", "n_pos", "batch_size", "lr", "t0", "shuffle_augmented"}
    unknown = set(cfg) - model_keys - opt_keys - {"seed"}
    if unknown:
        raise SpecError(f"unknown config keys: {sorted(unknown)}")
    model_kw = {k: v for k, v in cfg.items() if k in model_keys}
    d_model = model_kw.get("d_model", 64)
    opts = TrainOptions(seed=args.seed if args.seed is not None else cfg.get("seed", 0),
                        **{k: v for k, v in cfg.items() if k in opt_keys})
    try:
        config = ModelConfig(n_inputs=d.input_vocab.size, n_labels=d.label_vocab.size,
                             d_in=d_model, max_len=max(opts.n_pos, model_kw.get("span", 5)),
                             **model_kw)
    except (TypeError, DomainError) as exc:
        raise SpecError(str(exc)) from None
    result = train(config, d, opts)
    out = Path(args.out)
    save_checkpoint(result.params, out)
    trace = out.with_suffix(".loss.csv")
    with open(trace, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "train_loss_nats"])
        w.writerows(enumerate(result.losses))
    print(f"final train loss {result.losses[-1]:.6f} nats; checkpoint {out}; trace {trace}")
    return 0


def cmd_limits(args) -> int:
    src = load_source(args.spec)
    ks = _int_list(args.k) if args.k else list(range(src.order + 2))
    print(f"{'k':>4} {'H_k':>12} {'limit':>12} {'uniform slack':>14} {'true-law slack':>15}  ({args.base})")
    for k in ks:
        h = exact_conditional_entropy(src, k, args.base)
        lim = theorem1_limit(src, k, args.base)
        _, _, s_uni = theorem2_check(uniform_predictor(k, src.n_labels), src, k, args.base)
        _, _, s_true = theorem2_check(TrueLawPredictor(src, k), src, k, args.base)
        print(f"{k:>4} {h:>12.6f} {lim:>12.6f} {s_uni:>14.6f} {s_true:>15.6f}")
    return 0


def cmd_plot(args) -> int:
    out = plot(args.csv, args.x, args.y, series=args.series, out=args.out, log_x=args.log_x)
    print(out)
    return 0


def cmd_ingest(args) -> int:
    d = ingest_corpus(args.path, args.tokenizer, args.vocab_cap)
    save_dataset(d, args.out)
    print(f"{len(d)} samples, vocabulary {d.input_vocab.size}, written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--base", choices=("bits", "nats"), default="bits")

    parser = argparse.ArgumentParser(prog="unipred", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="sample a dataset from a source spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True, help="dataset path stem")
    p.set_defaults(func=cmd_gen_data)

    for name, func, hint in (("fsmp-run", cmd_fsmp_run, "count-estimator sweep"),
                             ("sweep", cmd_sweep, "any experiment sweep"),
                             ("augment-exp", cmd_augment_exp, "n x t0 augmentation grid")):
        p = sub.add_parser(name, parents=[common], help=hint)
        p.add_argument("--spec", required=True)
        p.add_argument("--out", default=None, help="CSV path (overrides the spec)")
        p.set_defaults(func=func)

    p = sub.add_parser("train", parents=[common], help="train one transformer")
    p.add_argument("--spec", required=True, help="model/training config")
    p.add_argument("--data", required=True, help="dataset path stem")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("limits", parents=[common], help="entropy limits for a source spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--k", default=None, help="comma-separated spans")
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("plot", parents=[common], help="SVG line plot from a results CSV")
    p.add_argument("csv")
    p.add_argument("--x", default="n")
    p.add_argument("--y", default="test_loss_bits")
    p.add_argument("--series", default="k")
    p.add_argument("--log-x", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("ingest", parents=[common], help="turn a text file into a dataset")
    p.add_argument("path")
    p.add_argument("--tokenizer", choices=("char", "whitespace"), default="char")
    p.add_argument("--vocab-cap", type=int, default=10000)
    p.add_argument("--out", required=True, help="dataset path stem")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SpecError, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except CapacityError as exc:
        print(f"capacity: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except NumericalError as exc:
        print(f"numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""Declarative sweeps over (k, n, seed, ...) with CSV output and a resume journal.

A sweep is described by flat ``key = value`` entries (see
:meth:`ExperimentSpec.from_config`). Every grid point runs independently
and deterministically from its seed; finished points are appended to the
CSV by a single writer and their content hash is logged to
``<output>.journal`` so a rerun skips them.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import ingest_corpus
from .errors import CapacityError, DomainError, NumericalError, SpecError
from .fsmp import (empirical_test_loss, exact_expected_test_loss, fit, identity_states,
                   window_sum_states)
from .kvconfig import load_kv
from .markov import generate, source_from_config, theorem1_limit
from .seqcore import LN2, split_dataset
from .transformer import ModelConfig, TrainOptions, TransformerPredictor, evaluate, train

SCHEMA_VERSION = 1
TEST_SEED_OFFSET = 1_000_003

_SOURCE_KEYS = ("source", "order", "threshold", "strict", "noise", "table", "input_size",
                "input_probs", "budget")


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass
class ExperimentSpec:
    predictor: str = "fsmp"
    source: dict | None = None
    corpus: str | None = None
    tokenizer: str = "char"
    vocab_cap: int = 256
    train_fraction: float = 0.9
    k: list = field(default_factory=lambda: [1])
    n: list = field(default_factory=lambda: [1000])
    seeds: list = field(default_factory=lambda: [0])
    mode: list = field(default_factory=lambda: ["attention"])
    use_ffn: list = field(default_factory=lambda: [True])
    t0: list = field(default_factory=lambda: [None])
    evaluation: str | None = None
    state_fn: str = "identity"
    alpha: float = 0.0
    include_warmup: bool = True
    test_n: int = 20000
    steps: int = 2000
    batch_size: int = 20
    n_pos: int = 100
    lr: float = 1e-3
    d_model: int = 64
    ffn_hidden: int = 128
    heads: int = 1
    layers: int = 1
    positional: str = "sinusoidal"
    residual: bool = True
    output: str = "results.csv"
    workers: int = 1

    def __post_init__(self):
        if self.predictor not in ("fsmp", "transformer"):
            raise SpecError("predictor must be 'fsmp' or 'transformer'")
        if (self.source is None) == (self.corpus is None):
            raise SpecError("give exactly one of a synthetic source or a corpus")
        if self.evaluation is None:
            self.evaluation = "exact" if self.source is not None else "empirical"
        if self.evaluation not in ("exact", "empirical"):
            raise SpecError("evaluation must be 'exact' or 'empirical'")
        if self.evaluation == "exact" and self.source is None:
            raise SpecError("exact evaluation needs a synthetic source")
        if self.state_fn not in ("identity", "window_sum"):
            raise SpecError("state_fn must be 'identity' or 'window_sum'")
        for name in ("k", "n", "seeds", "mode", "use_ffn", "t0"):
            setattr(self, name, _as_list(getattr(self, name)))
            if not getattr(self, name):
                raise SpecError(f"grid axis {name!r} is empty")
        if self.source is not None:
            source_from_config(self.source)

    @classmethod
    def from_config(cls, cfg: dict, base_dir=None) -> "ExperimentSpec":
        """Build from parsed config entries.

        Source keys (``source``, ``order``, ``threshold``, ``noise``, ...) may
        be inline, or ``source_file`` may point at a separate spec file.
        ``seeds = 20`` is shorthand for ``seeds = [0, ..., 19]``.
        """
        cfg = dict(cfg)
        base_dir = Path(base_dir) if base_dir else Path(".")
        source = None
        if "source_file" in cfg:
            p = Path(cfg.pop("source_file"))
            source = load_kv(p if p.is_absolute() else base_dir / p)
        elif "source" in cfg:
            source = {key: cfg.pop(key) for key in _SOURCE_KEYS if key in cfg}
        if "corpus" in cfg:
            p = Path(cfg["corpus"])
            cfg["corpus"] = str(p if p.is_absolute() else base_dir / p)
        if isinstance(cfg.get("seeds"), int):
            cfg["seeds"] = list(range(cfg["seeds"]))
        known = {f.name for f in fields(cls)}
        unknown = set(cfg) - known
        if unknown:
            raise SpecError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(source=source, **cfg)
        except TypeError as exc:
            raise SpecError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_config(load_kv(path), Path(path).parent)

    def points(self) -> list[dict]:
        if self.predictor == "fsmp":
            axes = itertools.product(self.k, self.n, self.seeds, [None], [None], [None])
        else:
            axes = itertools.product(self.k, self.n, self.seeds, self.mode, self.use_ffn, self.t0)
        return [dict(k=int(k), n=int(n), seed=int(s), mode=m, use_ffn=f, t0=t)
                for k, n, s, m, f, t in axes]

    def shared(self) -> dict:
        """Settings that affect results but are not grid axes."""
        d = asdict(self)
        for name in ("k", "n", "seeds", "mode", "use_ffn", "t0", "output", "workers"):
            d.pop(name)
        if self.predictor == "fsmp":
            for name in ("steps", "batch_size", "n_pos", "lr", "d_model", "ffn_hidden", "heads",
                         "layers", "positional", "residual"):
                d.pop(name)
        return d

    def point_id(self, point: dict) -> str:
        blob = json.dumps({"point": point, "shared": self.shared()}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ResultRecord:
    point_id: str
    predictor: str
    k: int
    n: int
    seed: int
    mode: str = ""
    use_ffn: str = ""
    t0: str = ""
    evaluation: str = ""
    alpha: float = 0.0
    steps: str = ""
    batch_size: str = ""
    n_pos: str = ""
    train_loss_nats: float = math.nan
    test_loss_nats: float = math.nan
    test_loss_bits: float = math.nan
    limit_nats: float = math.nan
    limit_bits: float = math.nan
    excess_nats: float = math.nan
    excess_bits: float = math.nan
    wall_time: float = 0.0
    status: str = "ok"
    code_version: str = __version__
    schema: int = SCHEMA_VERSION

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_row(cls, row: dict) -> "ResultRecord":
        kw = {}
        for f in fields(cls):
            v = row.get(f.name, "")
            if f.type == "int":
                kw[f.name] = int(v)
            elif f.type == "float":
                kw[f.name] = float(v) if v != "" else math.nan
            else:
                kw[f.name] = v
        return cls(**kw)


# ------------------------------------------------------------------- points

def _opt(v):
    return "" if v is None else str(v)


def _datasets(spec: ExperimentSpec, point: dict):
    """Train data (and held-out data for empirical evaluation) for one point."""
    n, seed = point["n"], point["seed"]
    if spec.source is not None:
        src = source_from_config(spec.source)
        train_d = generate(src, n, seed)
        test_d = generate(src, spec.test_n, seed + TEST_SEED_OFFSET) if spec.evaluation == "empirical" else None
        return src, train_d, test_d
    full = ingest_corpus(spec.corpus, spec.tokenizer, spec.vocab_cap)
    train_part, test_part = split_dataset(full, spec.train_fraction)
    if n > len(train_part):
        raise DomainError(f"n={n} exceeds the {len(train_part)} training tokens of the corpus")
    return None, train_part.slice(0, n), test_part


def run_point(spec: ExperimentSpec, point: dict) -> ResultRecord:
    rec = ResultRecord(point_id=spec.point_id(point), predictor=spec.predictor, k=point["k"],
                       n=point["n"], seed=point["seed"], mode=_opt(point["mode"]),
                       use_ffn=_opt(point["use_ffn"]), t0=_opt(point["t0"]),
                       evaluation=spec.evaluation, alpha=spec.alpha)
    start = time.perf_counter()
    try:
        src, train_d, test_d = _datasets(spec, point)
        k = point["k"]
        if spec.predictor == "fsmp":
            nx = train_d.input_vocab.size
            sf = identity_states(k, nx) if spec.state_fn == "identity" else window_sum_states(k, nx)
            model = fit(sf, train_d, alpha=spec.alpha, include_warmup=spec.include_warmup)
            rec.train_loss_nats = empirical_test_loss(model, train_d, "nats")
            predictor = model
            if spec.evaluation == "exact":
                rec.test_loss_nats = exact_expected_test_loss(model, src, "nats")
            else:
                rec.test_loss_nats = empirical_test_loss(model, test_d, "nats")
        else:
            rec.steps, rec.batch_size, rec.n_pos = str(spec.steps), str(spec.batch_size), str(spec.n_pos)
            cfg = ModelConfig(n_inputs=train_d.input_vocab.size, n_labels=train_d.label_vocab.size,
                              d_in=spec.d_model, d_model=spec.d_model, ffn_hidden=spec.ffn_hidden,
                              heads=spec.heads, span=k, layers=spec.layers, mode=point["mode"],
                              use_ffn=bool(point["use_ffn"]), positional=spec.positional,
                              residual=spec.residual, max_len=max(spec.n_pos, k))
            t0 = point["t0"]
            opts = TrainOptions(steps=spec.steps, n_pos=spec.n_pos, batch_size=spec.batch_size,
                                lr=spec.lr, seed=point["seed"],
                                t0=None if t0 is None else int(t0))
            result = train(cfg, train_d, opts)
            rec.train_loss_nats = float(np.mean(result.losses[-max(1, spec.steps // 20):]))
            if spec.evaluation == "exact":
                rec.test_loss_nats = exact_expected_test_loss(TransformerPredictor(result.params), src, "nats")
            else:
                rec.test_loss_nats = evaluate(result.params, test_d, spec.n_pos, "nats")
        rec.test_loss_bits = rec.test_loss_nats / LN2
        if src is not None:
            rec.limit_nats = theorem1_limit(src, k, "nats")
            rec.limit_bits = rec.limit_nats / LN2
            rec.excess_nats = rec.test_loss_nats - rec.limit_nats
            rec.excess_bits = rec.excess_nats / LN2
    except CapacityError as exc:
        rec.status = f"capacity: {exc}"
    except NumericalError as exc:
        rec.status = f"numerical: {exc}"
    except DomainError as exc:
        rec.status = f"domain: {exc}"
    rec.wall_time = time.perf_counter() - start
    return rec


def _run_point_args(args):
    return run_point(*args)


# ------------------------------------------------------------------ journal

def journal_path(output) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".journal")


def _read_journal(output) -> set:
    jp = journal_path(output)
    if not jp.exists():
        return set()
    return {line.strip() for line in jp.read_text().splitlines() if line.strip()}


def _read_records(output) -> dict:
    output = Path(output)
    if not output.exists():
        return {}
    with open(output, newline="") as fh:
        return {row["point_id"]: ResultRecord.from_row(row) for row in csv.DictReader(fh)}


class _Writer:
    """Appends a CSV row, then its journal line, flushing both."""

    def __init__(self, output):
        self.output = Path(output)
        self.output.parent.mkdir(parents=True, exist_ok=True)
        new = not self.output.exists() or self.output.stat().st_size == 0
        self.csv_fh = open(self.output, "a", newline="")
        self.writer = csv.DictWriter(self.csv_fh, fieldnames=ResultRecord.columns())
        if new:
            self.writer.writeheader()
        self.journal_fh = open(journal_path(self.output), "a")

    def write(self, rec: ResultRecord) -> None:
        self.writer.writerow(asdict(rec))
        self.csv_fh.flush()
        os.fsync(self.csv_fh.fileno())
        self.journal_fh.write(rec.point_id + "\n")
        self.journal_fh.flush()

    def close(self):
        self.csv_fh.close()
        self.journal_fh.close()


def run(spec: ExperimentSpec, workers: int | None = None, output=None) -> list[ResultRecord]:
    """Execute every grid point not already in the journal; return all records in grid order.

    ``run.last_computed`` holds how many points were actually computed.
    """
    output = Path(output or spec.output)
    workers = workers or spec.workers or 1
    points = spec.points()
    ids = [spec.point_id(p) for p in points]
    done = _read_journal(output)
    previous = _read_records(output)
    todo = [(pid, p) for pid, p in zip(ids, points) if pid not in done or pid not in previous]
    results = {pid: previous[pid] for pid in ids if pid in done and pid in previous}
    writer = _Writer(output)
    try:
        if workers <= 1 or len(todo) <= 1:
            for pid, p in todo:
                rec = run_point(spec, p)
                writer.write(rec)
                results[pid] = rec
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_run_point_args, (spec, p)) for _, p in todo]
                for fut in as_completed(futures):
                    rec = fut.result()
                    writer.write(rec)
                    results[rec.point_id] = rec
    finally:
        writer.close()
    run.last_computed = len(todo)
    return [results[pid] for pid in ids]


run.last_computed = 0


def load_results(output) -> list[ResultRecord]:
    return list(_read_records(output).values())


def mean_by(records, key_fields, value: str = "test_loss_bits") -> dict:
    """Average ``value`` over records sharing the same ``key_fields`` tuple."""
    acc: dict = {}
    for r in records:
        if r.status != "ok":
            continue
        key = tuple(getattr(r, f) for f in key_fields)
        acc.setdefault(key, []).append(getattr(r, value))
    return {k: float(np.mean(v)) for k, v in acc.items()}

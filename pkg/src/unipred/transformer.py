"""A from-scratch decoder-only transformer in numpy (float64).

Pipeline per position i: token embedding (+ sinusoidal position) ->
L x [span-k masked self-attention (or uniform aggregation over the same
window) -> optional ReLU FFN] -> output projection -> softmax. Attention
logits are scaled by 1/sqrt(d_model). Residual additions around the
attention and FFN sub-blocks are on by default (``residual=False`` drops
them); there is no layer normalisation.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augmentation import AugmentSpec, augment
from .errors import DomainError, NumericalError, SpecError
from .seqcore import Distribution, LabeledDataset, TokenSequence, log_losses, to_base

MODES = ("attention", "aggregation")
POSITIONAL = ("sinusoidal", "none")


@dataclass(frozen=True)
class ModelConfig:
    n_inputs: int = 2
    n_labels: int = 2
    d_in: int = 64
    d_model: int = 64
    ffn_hidden: int = 128
    heads: int = 1
    span: int = 5
    layers: int = 1
    mode: str = "attention"
    use_ffn: bool = True
    positional: str = "sinusoidal"
    residual: bool = True
    max_len: int = 1024

    def __post_init__(self):
        for name in ("n_inputs", "n_labels", "d_in", "d_model", "ffn_hidden", "heads",
                     "span", "layers", "max_len"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be a positive integer")
        if self.d_model % self.heads:
            raise DomainError("d_model must be divisible by the number of heads")
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}")
        if self.positional not in POSITIONAL:
            raise DomainError(f"positional must be one of {POSITIONAL}")
        if self.residual and self.d_in != self.d_model:
            raise DomainError("residual connections need d_in == d_model")


@dataclass(eq=False)
class TransformerParams:
    config: ModelConfig
    weights: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.weights[name]

    def names(self) -> list[str]:
        return list(self.weights)

    def copy(self) -> "TransformerParams":
        return TransformerParams(self.config, {k: v.copy() for k, v in self.weights.items()})


def init_params(config: ModelConfig, seed: int = 0) -> TransformerParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))

    def u(fan_in, shape):
        b = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-b, b, size=shape)

    w = {"embed": u(1, (config.n_inputs, config.d_in))}
    d_prev = config.d_in
    for i in range(config.layers):
        for name in ("wq", "wk", "wv"):
            w[f"l{i}.{name}"] = u(d_prev, (d_prev, config.d_model))
        if config.use_ffn:
            w[f"l{i}.w1"] = u(config.d_model, (config.d_model, config.ffn_hidden))
            w[f"l{i}.b1"] = np.zeros(config.ffn_hidden)
            w[f"l{i}.w2"] = u(config.ffn_hidden, (config.ffn_hidden, config.d_model))
            w[f"l{i}.b2"] = np.zeros(config.d_model)
        d_prev = config.d_model
    w["proj"] = u(config.d_model, (config.d_model, config.n_labels))
    return TransformerParams(config, w)


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def span_mask(length: int, span: int) -> np.ndarray:
    """True where position i may look at j: causal and within the last ``span`` positions."""
    i = np.arange(length)[:, None]
    j = np.arange(length)[None, :]
    return (j <= i) & (j >= i - span + 1)


def aggregation_weights(length: int, span: int) -> np.ndarray:
    m = span_mask(length, span).astype(np.float64)
    return m / m.sum(axis=1, keepdims=True)


# ------------------------------------------------------------------- forward

def _mix(h: ad.Tensor, w: dict, layer: int, cfg: ModelConfig) -> ad.Tensor:
    """Attention (or uniform aggregation) sub-block on a (B, T, d) batch."""
    B, T, _ = h.shape
    m, dh = cfg.heads, cfg.d_model // cfg.heads

    def split(t):
        return ad.transpose(ad.reshape(t, (B, T, m, dh)), (0, 2, 1, 3))

    v = split(h @ w[f"l{layer}.wv"])
    if cfg.mode == "attention":
        q = split(h @ w[f"l{layer}.wq"])
        k = split(h @ w[f"l{layer}.wk"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(cfg.d_model))
        weights = ad.masked_softmax(scores, span_mask(T, cfg.span))
    else:
        weights = ad.Tensor(aggregation_weights(T, cfg.span))
    out = ad.matmul(weights, v)
    return ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (B, T, cfg.d_model))


def _logits(params: TransformerParams, tokens: np.ndarray, tape: ad.Tape | None):
    cfg = params.config
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.n_inputs):
        raise DomainError(f"token ids must lie in [0, {cfg.n_inputs})")
    T = tokens.shape[1]
    if cfg.positional == "sinusoidal" and T > cfg.max_len:
        raise DomainError(f"sequence of length {T} exceeds max_len={cfg.max_len}")
    w = {name: ad.param(val, tape) for name, val in params.weights.items()}
    h = ad.embed(w["embed"], tokens)
    if cfg.positional == "sinusoidal":
        h = h + sinusoidal_encoding(T, cfg.d_in)
    for i in range(cfg.layers):
        mixed = _mix(h, w, i, cfg)
        h = h + mixed if cfg.residual else mixed
        if cfg.use_ffn:
            f = ad.relu(h @ w[f"l{i}.w1"] + w[f"l{i}.b1"]) @ w[f"l{i}.w2"] + w[f"l{i}.b2"]
            h = h + f if cfg.residual else f
    return h @ w["proj"], w


def forward_probs(params: TransformerParams, tokens: np.ndarray) -> np.ndarray:
    """Batched forward pass: (B, T) token ids -> (B, T, |V|) probabilities."""
    logits, _ = _logits(params, tokens, None)
    return ad.softmax(logits.value)


def forward(tokens: TokenSequence, params: TransformerParams, config: ModelConfig | None = None
            ) -> list[Distribution]:
    """Per-position label distributions for one sequence; row i predicts y_i."""
    if config is not None and config != params.config:
        raise DomainError("config does not match the parameters")
    if len(tokens) == 0:
        raise DomainError("empty sequence")
    probs = forward_probs(params, np.asarray(tokens.tokens)[None, :])[0]
    return [Distribution(row / row.sum()) for row in probs]


def _single_layer_inputs(X, params: TransformerParams, config: ModelConfig | None):
    cfg = config or params.config
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DomainError("X must be a nonempty (T, d_in) matrix")
    if X.shape[1] != cfg.d_in:
        raise DomainError(f"X has width {X.shape[1]}, expected d_in={cfg.d_in}")
    return cfg, ad.Tensor(X[None])


def attend(X, params: TransformerParams, config: ModelConfig | None = None, layer: int = 0
           ) -> np.ndarray:
    """Span-masked multi-head self-attention of one layer on a (T, d_in) input."""
    cfg, h = _single_layer_inputs(X, params, config)
    w = {n: ad.Tensor(v) for n, v in params.weights.items()}
    return _mix(h, w, layer, _with_mode(cfg, "attention")).value[0]


def aggregate(X, params: TransformerParams, config: ModelConfig | None = None, layer: int = 0
              ) -> np.ndarray:
    """Same as :func:`attend` with the softmax weights replaced by a window average."""
    cfg, h = _single_layer_inputs(X, params, config)
    w = {n: ad.Tensor(v) for n, v in params.weights.items()}
    return _mix(h, w, layer, _with_mode(cfg, "aggregation")).value[0]


def _with_mode(cfg: ModelConfig, mode: str) -> ModelConfig:
    return cfg if cfg.mode == mode else ModelConfig(**{**asdict(cfg), "mode": mode})


def loss_and_grads(params: TransformerParams, tokens: np.ndarray, labels: np.ndarray
                   ) -> tuple[float, dict]:
    """Mean cross-entropy (nats) of a batch and its gradient for every weight."""
    tape = ad.Tape()
    logits, w = _logits(params, tokens, tape)
    loss = ad.cross_entropy(logits, labels)
    tape.backward(loss)
    grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.value)) for n, t in w.items()}
    value = float(loss.value)
    tape.clear()
    return value, grads


def batch_loss(params: TransformerParams, tokens: np.ndarray, labels: np.ndarray) -> float:
    logits, _ = _logits(params, tokens, None)
    return float(ad.cross_entropy(logits, labels).value)


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class TrainOptions:
    steps: int = 2000
    n_pos: int = 100
    batch_size: int = 20
    lr: float = 1e-3
    seed: int = 0
    t0: int | None = None
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    shuffle_augmented: bool = False

    def __post_init__(self):
        if not (isinstance(self.lr, (int, float)) and math.isfinite(self.lr) and self.lr > 0):
            raise DomainError(f"lr must be a positive finite number, got {self.lr!r}")
        if self.steps < 0 or self.n_pos < 1 or self.batch_size < 1:
            raise DomainError("steps >= 0, n_pos >= 1 and batch_size >= 1 are required")


@dataclass(eq=False)
class TrainResult:
    params: TransformerParams
    losses: list
    options: TrainOptions
    wall_time: float = 0.0


class Adam:
    def __init__(self, weights: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {n: np.zeros_like(v) for n, v in weights.items()}
        self.v = {n: np.zeros_like(v) for n, v in weights.items()}
        self.t = 0

    def step(self, weights: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n, g in grads.items():
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            weights[n] -= self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)


def train(config: ModelConfig, d_train: LabeledDataset, opts: TrainOptions = TrainOptions()
          ) -> TrainResult:
    """Adam on mean cross-entropy over ``n_pos``-token windows of ``d_train``.

    Windows are the non-overlapping chunks of the stream, plus shifted
    copies when ``opts.t0`` is below ``n_pos - 1``. Each step draws
    ``batch_size`` windows with replacement.
    """
    if len(d_train) < opts.n_pos:
        raise DomainError(f"dataset of length {len(d_train)} is shorter than n_pos={opts.n_pos}")
    if d_train.input_vocab.size != config.n_inputs or d_train.label_vocab.size != config.n_labels:
        raise DomainError("dataset vocabularies do not match the model config")
    t0 = opts.n_pos - 1 if opts.t0 is None else opts.t0
    windows = augment(d_train, AugmentSpec(t0, opts.n_pos),
                      order="shuffle" if opts.shuffle_augmented else "round_robin", seed=opts.seed)
    params = init_params(config, opts.seed)
    optim = Adam(params.weights, opts.lr, opts.betas, opts.eps)
    rng = np.random.default_rng(np.random.SeedSequence([opts.seed, 2]))
    losses = []
    start = time.perf_counter()
    for step in range(opts.steps):
        idx = rng.integers(0, len(windows), size=opts.batch_size)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = loss_and_grads(params, windows.inputs[idx], windows.labels[idx])
        if not math.isfinite(loss):
            raise NumericalError(f"training diverged at step {step}: loss={loss}")
        losses.append(loss)
        optim.step(params.weights, grads)
    return TrainResult(params, losses, opts, time.perf_counter() - start)


def evaluate(params: TransformerParams, d_test: LabeledDataset, n_pos: int, base: str = "nats",
             batch: int = 64) -> float:
    """Mean log loss over the test stream cut into ``n_pos`` windows (context restarts per window)."""
    if len(d_test) == 0:
        raise DomainError("empty test set")
    x, y = d_test.x, d_test.y
    n_full = len(x) // n_pos
    total, count = 0.0, 0
    if n_full:
        xs = x[: n_full * n_pos].reshape(n_full, n_pos)
        ys = y[: n_full * n_pos].reshape(n_full, n_pos)
        for a in range(0, n_full, batch):
            p = forward_probs(params, xs[a: a + batch])
            total += float(log_losses(p.reshape(-1, p.shape[-1]), ys[a: a + batch].reshape(-1)).sum())
            count += ys[a: a + batch].size
    rest = len(x) - n_full * n_pos
    if rest:
        p = forward_probs(params, x[n_full * n_pos:][None, :])[0]
        total += float(log_losses(p, y[n_full * n_pos:]).sum())
        count += rest
    return float(to_base(total / count, base))


class TransformerPredictor:
    """Predictor view of a trained model: the window is fed as positions 0..w-1
    and the final position's distribution is returned."""

    def __init__(self, params: TransformerParams):
        self.params = params
        self.span = params.config.span
        self.n_labels = params.config.n_labels

    def predict_windows(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.int64)
        out = np.empty((len(windows), self.n_labels))
        for a in range(0, len(windows), 4096):
            out[a: a + 4096] = forward_probs(self.params, windows[a: a + 4096])[:, -1, :]
        return out

    def predict(self, window) -> Distribution:
        row = self.predict_windows(np.asarray(window, dtype=np.int64).reshape(1, -1))[0]
        return Distribution(row / row.sum())


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"NTCK"
_VERSION = 1


def save_checkpoint(params: TransformerParams, path) -> None:
    """Binary checkpoint: magic, version, JSON header (config, names, shapes), float64 data."""
    names = params.names()
    header = json.dumps({"config": asdict(params.config),
                         "tensors": [[n, list(params[n].shape)] for n in names]}).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<HI", _VERSION, len(header)) + header)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> TransformerParams:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise SpecError("not a transformer checkpoint")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != _VERSION:
        raise SpecError(f"unsupported checkpoint version {version}")
    header = json.loads(data[10: 10 + hlen])
    config = ModelConfig(**header["config"])
    off = 10 + hlen
    weights = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        weights[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    return TransformerParams(config, weights)

"""Deep recurrent forecaster trained with backpropagation through time.

One recurrent tanh layer feeds a stack of feedforward tanh layers and a
linear output::

    a_t = W h_{t-1} + U x_t + c1,   h_t = tanh(a_t)
    z_t = tanh(S_L ... tanh(S_1 h_t + s_1) ... + s_L)
    y_t = V z_t + c2

All operations are batched over windows: inputs have shape
``(batch, tau, n_in)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

LOGGER = logging.getLogger(__name__)

MODEL_VERSION = "h2sched-rnn 1"
HISTORY_HEADER = ("iteration", "train_mse", "val_mse", "test_mse")


class ModelFormatError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"training loss became non-finite ({loss}) at iteration {iteration}")
        self.iteration = iteration


@dataclass
class RnnModel:
    W: np.ndarray
    U: np.ndarray
    c1: np.ndarray
    stack: list[tuple[np.ndarray, np.ndarray]]
    V: np.ndarray
    c2: np.ndarray

    @property
    def n_hidden(self) -> int:
        return self.W.shape[0]

    @property
    def n_in(self) -> int:
        return self.U.shape[1]

    @property
    def n_out(self) -> int:
        return self.V.shape[0]

    @property
    def depth(self) -> int:
        return len(self.stack)

    def params(self) -> list[np.ndarray]:
        out = [self.W, self.U, self.c1]
        for S, s in self.stack:
            out += [S, s]
        return out + [self.V, self.c2]

    def param_names(self) -> list[str]:
        names = ["W", "U", "c1"]
        for i in range(self.depth):
            names += [f"stack[{i}].weight", f"stack[{i}].bias"]
        return names + ["V", "c2"]

    @classmethod
    def from_params(cls, params: Sequence[np.ndarray]) -> "RnnModel":
        params = list(params)
        W, U, c1 = params[:3]
        body = params[3:-2]
        stack = [(body[i], body[i + 1]) for i in range(0, len(body), 2)]
        return cls(W, U, c1, stack, params[-2], params[-1])

    def copy(self) -> "RnnModel":
        return RnnModel.from_params([p.copy() for p in self.params()])

    def validate(self) -> None:
        n_h, n_in = self.U.shape
        expect = {"W": (n_h, n_h), "c1": (n_h,), "V": (self.V.shape[0], n_h), "c2": (self.V.shape[0],)}
        for i in range(self.depth):
            expect[f"stack[{i}].weight"] = (n_h, n_h)
            expect[f"stack[{i}].bias"] = (n_h,)
        for name, p in zip(self.param_names(), self.params()):
            if name in expect and p.shape != expect[name]:
                raise ModelFormatError(f"{name} has shape {p.shape}, expected {expect[name]}")
            if not np.all(np.isfinite(p)):
                raise ModelFormatError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class Normalizer:
    mean: float
    std: float

    @classmethod
    def fit(cls, values: np.ndarray) -> "Normalizer":
        values = np.asarray(values, dtype=float)
        std = float(values.std())
        return cls(float(values.mean()), std if std > 0 else 1.0)

    def norm(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denorm(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    max_iterations: int = 1000
    patience: int = 30
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class WindowSet:
    """Windows of a series with their one-step-ahead targets, split three ways."""

    inputs: np.ndarray  # (n_windows, tau)
    targets: np.ndarray  # (n_windows, tau)
    splits: dict[str, np.ndarray] = field(default_factory=dict)  # name -> window indices

    @property
    def tau(self) -> int:
        return self.inputs.shape[1]

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[name]
        return self.inputs[idx][..., None], self.targets[idx][..., None]


@dataclass
class History:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    def val(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def write(self, stream) -> None:
        stream.write(",".join(HISTORY_HEADER) + "\n")
        for it, tr, va, te in self.rows:
            stream.write(f"{it},{tr!r},{va!r},{te!r}\n")


def init_model(n_in: int = 1, n_hidden: int = 5, n_out: int = 1, depth: int = 4, seed: int = 0) -> RnnModel:
    """Uniform [-0.5, 0.5] / sqrt(fan_in) weights, zero biases."""
    if min(n_in, n_hidden, n_out) < 1 or depth < 0:
        raise ValueError(f"invalid dims n_in={n_in} n_hidden={n_hidden} n_out={n_out} depth={depth}")
    rng = np.random.default_rng(seed)

    def draw(rows, cols, fan_in):
        return rng.uniform(-0.5, 0.5, size=(rows, cols)) / math.sqrt(fan_in)

    W = draw(n_hidden, n_hidden, n_hidden + n_in)
    U = draw(n_hidden, n_in, n_hidden + n_in)
    stack = [(draw(n_hidden, n_hidden, n_hidden), np.zeros(n_hidden)) for _ in range(depth)]
    V = draw(n_out, n_hidden, n_hidden)
    return RnnModel(W, U, np.zeros(n_hidden), stack, V, np.zeros(n_out))


def _as_batch(x: np.ndarray, n_in: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :, None] if n_in == 1 else x[None, None, :]
    elif x.ndim == 2:
        x = x[..., None] if n_in == 1 else x[None]
    bad = np.argwhere(~np.isfinite(x))
    if bad.size:
        raise ValueError(f"non-finite input at index {tuple(int(i) for i in bad[0])}")
    return x


@dataclass
class ForwardCache:
    x: np.ndarray  # (B, T, n_in)
    h: np.ndarray  # (B, T, n_h) recurrent states
    layers: list[np.ndarray]  # deep stack activations, each (B, T, n_h)
    y: np.ndarray  # (B, T, n_out)


def forward(model: RnnModel, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run every window from a zero hidden state; returns outputs and cached states."""
    x = _as_batch(x, model.n_in)
    B, T, _ = x.shape
    h = np.zeros((B, T, model.n_hidden))
    prev = np.zeros((B, model.n_hidden))
    xu = x @ model.U.T + model.c1
    for t in range(T):
        prev = np.tanh(prev @ model.W.T + xu[:, t])
        h[:, t] = prev
    layers = []
    z = h
    for S, s in model.stack:
        z = np.tanh(z @ S.T + s)
        layers.append(z)
    y = z @ model.V.T + model.c2
    return y, ForwardCache(x, h, layers, y)


def loss(targets, predictions) -> float:
    """Mean squared error per time step, averaged over windows."""
    targets = np.asarray(targets, dtype=float)
    predictions = np.asarray(predictions, dtype=float)
    if targets.shape != predictions.shape:
        raise ValueError(f"length mismatch: {targets.shape} vs {predictions.shape}")
    if targets.size == 0:
        raise ValueError("empty sequences")
    return float(np.mean((targets - predictions) ** 2))


def backward(model: RnnModel, cache: ForwardCache, targets: np.ndarray) -> list[np.ndarray]:
    """Exact gradients of ``loss(targets, cache.y)`` in ``model.params()`` order."""
    y = cache.y
    targets = np.asarray(targets, dtype=float).reshape(y.shape)
    dy = 2.0 * (y - targets) / y.size

    top = cache.layers[-1] if cache.layers else cache.h
    dV = np.einsum("bto,bth->oh", dy, top)
    dc2 = dy.sum(axis=(0, 1))
    dz = dy @ model.V

    stack_grads = []
    for i in range(model.depth - 1, -1, -1):
        S, _ = model.stack[i]
        z = cache.layers[i]
        below = cache.layers[i - 1] if i > 0 else cache.h
        dpre = dz * (1.0 - z**2)
        stack_grads.append((np.einsum("bti,btj->ij", dpre, below), dpre.sum(axis=(0, 1))))
        dz = dpre @ S
    stack_grads.reverse()

    h, x = cache.h, cache.x
    B, T, n_h = h.shape
    da = np.empty_like(h)
    carry = np.zeros((B, n_h))
    for t in range(T - 1, -1, -1):
        da_t = (dz[:, t] + carry) * (1.0 - h[:, t] ** 2)
        da[:, t] = da_t
        carry = da_t @ model.W
    h_prev = np.concatenate([np.zeros((B, 1, n_h)), h[:, :-1]], axis=1)
    dW = np.einsum("bti,btj->ij", da, h_prev)
    dU = np.einsum("bti,btj->ij", da, x)
    dc1 = da.sum(axis=(0, 1))

    grads = [dW, dU, dc1]
    for g in stack_grads:
        grads += list(g)
    return grads + [dV, dc2]


def loss_and_grad(model: RnnModel, x: np.ndarray, targets: np.ndarray) -> tuple[float, list[np.ndarray]]:
    # overflow surfaces as a non-finite loss, which callers check
    with np.errstate(over="ignore", invalid="ignore"):
        y, cache = forward(model, x)
        return loss(np.asarray(targets, dtype=float).reshape(y.shape), y), backward(model, cache, targets)


def numeric_grad(model: RnnModel, x: np.ndarray, targets: np.ndarray, eps: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of the loss, one parameter entry at a time."""
    out = []
    for p in model.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            up = loss(targets, forward(model, x)[0].reshape(np.shape(targets)))
            p[idx] = orig - eps
            down = loss(targets, forward(model, x)[0].reshape(np.shape(targets)))
            p[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        out.append(g)
    return out


def max_relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray], floor: float = 1e-8) -> float:
    """Largest entrywise ``|a - n| / max(|a|, |n|, floor)`` over all parameters."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max(initial=0.0)))
    return worst


def make_windows(
    series: np.ndarray,
    tau: int,
    stride: int = 1,
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> WindowSet:
    """Cut ``series`` into windows of ``tau`` inputs and shifted targets.

    Windows are shuffled with ``seed`` and assigned to train/validation/test
    in the given proportions.
    """
    series = np.asarray(series, dtype=float)
    if tau < 1 or stride < 1:
        raise ValueError("tau and stride must be positive")
    starts = np.arange(0, series.size - tau, stride)
    if starts.size < 3:
        raise ValueError(f"series of length {series.size} yields {starts.size} windows of tau={tau}; need >= 3")
    inputs = np.stack([series[s : s + tau] for s in starts])
    targets = np.stack([series[s + 1 : s + tau + 1] for s in starts])

    n = starts.size
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(max(n_train, 1), n - 2)
    n_val = min(max(n_val, 1), n - n_train - 1)
    splits = {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train : n_train + n_val]),
        "test": np.sort(order[n_train + n_val :]),
    }
    return WindowSet(inputs, targets, splits)


def prepare_windows(
    series: np.ndarray,
    tau: int,
    stride: int = 24,
    seed: int = 0,
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
) -> tuple[WindowSet, Normalizer]:
    """Window, split and z-score a raw series.

    The normalizer sees only the points covered by training windows.
    """
    series = np.asarray(series, dtype=float)
    raw = make_windows(series, tau, stride, fractions, seed)
    starts = np.arange(0, series.size - tau, stride)[raw.splits["train"]]
    covered = np.unique((starts[:, None] + np.arange(tau + 1)).ravel())
    normalizer = Normalizer.fit(series[covered])
    return WindowSet(normalizer.norm(raw.inputs), normalizer.norm(raw.targets), raw.splits), normalizer


def _clip(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm and norm > max_norm:
        return [g * (max_norm / norm) for g in grads]
    return grads


def evaluate(model: RnnModel, x: np.ndarray, targets: np.ndarray) -> float:
    return loss(targets, forward(model, x)[0])


def train(model: RnnModel, windows: WindowSet, config: TrainConfig) -> tuple[RnnModel, History]:
    """Full-batch gradient descent with reject-and-halve step control.

    A step that would raise the training loss is discarded and the learning
    rate halved, so recorded training MSE never increases. Returns the
    snapshot with the lowest validation MSE and the per-iteration history.
    Row 0 of the history describes the initial model.
    """
    x_tr, y_tr = windows.part("train")
    x_va, y_va = windows.part("val")
    x_te, y_te = windows.part("test")

    current = model.copy()
    cur_loss, grads = loss_and_grad(current, x_tr, y_tr)
    if not math.isfinite(cur_loss):
        raise TrainingDiverged(0, cur_loss)
    lr = config.learning_rate
    history = History()

    def record(it):
        history.rows.append((it, cur_loss, evaluate(current, x_va, y_va), evaluate(current, x_te, y_te)))

    record(0)
    best, best_val, since_best = current.copy(), history.rows[0][2], 0
    for it in range(1, config.max_iterations + 1):
        step = _clip(grads, config.clip_norm)
        cand = RnnModel.from_params([p - lr * g for p, g in zip(current.params(), step)])
        cand_loss, cand_grads = loss_and_grad(cand, x_tr, y_tr)
        if not math.isfinite(cand_loss):
            raise TrainingDiverged(it, cand_loss)
        if cand_loss > cur_loss:
            lr *= 0.5
        else:
            current, cur_loss, grads = cand, cand_loss, cand_grads
        record(it)
        val = history.rows[-1][2]
        if val < best_val:
            best, best_val, since_best = current.copy(), val, 0
        else:
            since_best += 1
            if config.patience and since_best >= config.patience:
                LOGGER.info("early stop at iteration %d (best val %.6g)", it, best_val)
                break
    return best, history


def _forecast_batch(model: RnnModel, normalizer: Normalizer, windows: np.ndarray, steps: int = 4) -> np.ndarray:
    """Recursive multi-step kg forecasts for each row of ``windows``; shape (B, steps)."""
    z = normalizer.norm(windows)
    out = np.empty((z.shape[0], steps))
    for k in range(steps):
        y, _ = forward(model, z)
        nxt = y[:, -1, 0]
        out[:, k] = np.maximum(normalizer.denorm(nxt), 0.0)
        z = np.concatenate([z[:, 1:], nxt[:, None]], axis=1)
    return out


def forecast_next_hour(model: RnnModel, normalizer: Normalizer, history: Sequence[float], tau: int, steps: int = 4) -> float:
    """Forecast kg consumed over the next hour (four quarters) from the last ``tau`` points."""
    history = np.asarray(history, dtype=float)
    if history.size < tau:
        raise ValueError(f"history has {history.size} points, need at least tau={tau}")
    return float(_forecast_batch(model, normalizer, history[None, -tau:], steps).sum())


def rolling_forecasts(model: RnnModel, normalizer: Normalizer, series: Sequence[float], tau: int, steps: int = 4) -> np.ndarray:
    """Next-hour forecast issued at every period ``k >= tau`` using points ``k-tau..k-1``."""
    series = np.asarray(series, dtype=float)
    if series.size <= tau:
        raise ValueError(f"series has {series.size} points, need more than tau={tau}")
    windows = np.stack([series[k - tau : k] for k in range(tau, series.size + 1)])
    return _forecast_batch(model, normalizer, windows, steps).sum(axis=1)


# -- serialization ---------------------------------------------------------


def _fmt_matrix(name: str, m: np.ndarray) -> list[str]:
    m2 = np.atleast_2d(m) if m.ndim == 2 else m[None, :]
    lines = [f"[{name}] {m.ndim} {' '.join(str(d) for d in m.shape)}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in m2]
    return lines


def save_model(model: RnnModel, path, normalizer: Normalizer | None = None) -> None:
    normalizer = normalizer or Normalizer(0.0, 1.0)
    lines = [
        MODEL_VERSION,
        "[dims]",
        f"n_in {model.n_in}",
        f"n_hidden {model.n_hidden}",
        f"n_out {model.n_out}",
        f"depth {model.depth}",
    ]
    for name, p in zip(model.param_names(), model.params()):
        lines += _fmt_matrix(name, p)
    lines += ["[normalizer]", f"mean {normalizer.mean!r}", f"std {normalizer.std!r}", "[end]"]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path, expect_hidden: int | None = None, expect_depth: int | None = None) -> tuple[RnnModel, Normalizer]:
    """Parse a model file; raises ModelFormatError naming the offending field."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MODEL_VERSION:
        raise ModelFormatError(f"version: expected {MODEL_VERSION!r}")
    pos = 1

    def take(what):
        nonlocal pos
        if pos >= len(lines):
            raise ModelFormatError(f"{what}: unexpected end of file")
        pos += 1
        return lines[pos - 1].strip()

    if take("dims") != "[dims]":
        raise ModelFormatError("dims: section header missing")
    dims = {}
    for key in ("n_in", "n_hidden", "n_out", "depth"):
        parts = take(key).split()
        if len(parts) != 2 or parts[0] != key:
            raise ModelFormatError(f"{key}: malformed dimension line")
        try:
            dims[key] = int(parts[1])
        except ValueError:
            raise ModelFormatError(f"{key}: not an integer") from None
    if expect_hidden is not None and dims["n_hidden"] != expect_hidden:
        raise ModelFormatError(f"n_hidden: file has {dims['n_hidden']}, config expects {expect_hidden}")
    if expect_depth is not None and dims["depth"] != expect_depth:
        raise ModelFormatError(f"depth: file has {dims['depth']}, config expects {expect_depth}")

    template = init_model(dims["n_in"], dims["n_hidden"], dims["n_out"], dims["depth"])
    params = []
    for name, ref in zip(template.param_names(), template.params()):
        head = take(name).split()
        if not head or head[0] != f"[{name}]":
            raise ModelFormatError(f"{name}: section header missing")
        try:
            shape = tuple(int(v) for v in head[2:])
        except ValueError:
            raise ModelFormatError(f"{name}: bad shape") from None
        if shape != ref.shape:
            raise ModelFormatError(f"{name}: shape {shape} does not match dims {ref.shape}")
        rows = shape[0] if len(shape) == 2 else 1
        try:
            data = [[float(v) for v in take(name).split()] for _ in range(rows)]
            arr = np.array(data, dtype=float).reshape(shape)
        except ValueError:
            raise ModelFormatError(f"{name}: malformed values") from None
        params.append(arr)
    if take("normalizer") != "[normalizer]":
        raise ModelFormatError("normalizer: section header missing")
    norm = {}
    for key in ("mean", "std"):
        parts = take(f"normalizer.{key}").split()
        if len(parts) != 2 or parts[0] != key:
            raise ModelFormatError(f"normalizer.{key}: malformed line")
        norm[key] = float(parts[1])
    if take("end") != "[end]":
        raise ModelFormatError("end: terminator missing (truncated file?)")
    model = RnnModel.from_params(params)
    model.validate()
    if not norm["std"] > 0:
        raise ModelFormatError("normalizer.std: must be positive")
    return model, Normalizer(norm["mean"], norm["std"])

"""Turning a configuration into a measured validation loss.

Chronological split with train-segment min-max scaling, RMSE in original
units, a self-contained numpy forecaster for desk-scale runs, and a stdio
JSON-line protocol ("metaopt-trainer/1") for external trainers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import math
import subprocess
import time

import numpy as np

from .dataset import SeriesDataset
from .errors import (
    ConstantFeature,
    EmptyInput,
    InvalidConfig,
    LengthMismatch,
    MissingValues,
    NonFiniteLoss,
    NonZeroExit,
    ProtocolViolation,
    TooShort,
    TrainerTimeout,
)
from .search_space import HyperparamConfig, SearchSpace, validate_config

TRAINER_PROTOCOL = "metaopt-trainer/1"

OPTIMIZER_NAMES = ("SGD", "Adam", "AdamW", "Adamax", "RMSprop")


@dataclass
class DataSplit:
    """Chronological split plus scaling learned on the training segment only."""

    boundary: int
    train_fraction: float
    horizon: int
    target_feature: str
    scaling: dict[str, tuple[float, float]]

    def scale(self, feature: str, values: np.ndarray) -> np.ndarray:
        lo, hi = self.scaling[feature]
        return (values - lo) / (hi - lo)

    def unscale(self, feature: str, values: np.ndarray) -> np.ndarray:
        lo, hi = self.scaling[feature]
        return values * (hi - lo) + lo


@dataclass
class EvalResult:
    loss: float
    t_train: float
    t_eval: float
    n_test: int
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TrainerSpec:
    """Which trainer evaluates configs: the builtin model or a subprocess."""

    kind: str = "builtin"
    command: tuple[str, ...] = ()
    timeout: float = 300.0
    data_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("builtin", "subprocess"):
            raise ValueError(f"bad trainer kind {self.kind!r}")
        if self.kind == "subprocess":
            if not self.command:
                raise ValueError("subprocess trainer needs a command")
            if self.timeout <= 0:
                raise ValueError("timeout must be positive")


def make_split(
    dataset: SeriesDataset,
    train_fraction: float,
    horizon: int,
    target_feature: str,
) -> DataSplit:
    """Boundary at floor(T * fraction); scaling fit on rows before it.

    Test-segment values are deliberately not clipped when scaled, so the
    split never leaks test range information.
    """
    t = len(dataset)
    if t < 10:
        raise TooShort(f"dataset length {t} < 10")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if target_feature not in dataset.feature_names:
        raise KeyError(f"unknown target feature {target_feature!r}")
    if dataset.has_missing():
        raise MissingValues("objective data must be complete; drop incomplete rows first")
    boundary = int(math.floor(t * train_fraction))
    if boundary < 1 or boundary >= t:
        raise TooShort(f"train fraction {train_fraction} leaves an empty segment")
    scaling = {}
    for name in dataset.feature_names:
        seg = dataset.values[name][:boundary]
        lo, hi = float(seg.min()), float(seg.max())
        if lo == hi:
            raise ConstantFeature(f"{name} is constant on the training segment")
        scaling[name] = (lo, hi)
    return DataSplit(
        boundary=boundary,
        train_fraction=train_fraction,
        horizon=horizon,
        target_feature=target_feature,
        scaling=scaling,
    )


def rmse(actual, predicted) -> float:
    """Root mean squared error over paired finite sequences."""
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape:
        raise LengthMismatch(f"{a.shape} vs {p.shape}")
    if a.size == 0:
        raise EmptyInput("empty sequences")
    if not (np.isfinite(a).all() and np.isfinite(p).all()):
        raise ValueError("non-finite values")
    return float(np.sqrt(np.mean((a - p) ** 2)))


# --- optimizers (standard update rules, one class per rule) ---


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g ** 2
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class AdamW(Adam):
    def __init__(self, lr: float, weight_decay: float = 0.01, **kw):
        super().__init__(lr, **kw)
        self.weight_decay = weight_decay

    def step(self, params, grads):
        for p in params:
            p -= self.lr * self.weight_decay * p  # decoupled decay
        super().step(params, grads)


class Adamax:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.u: list[np.ndarray] | None = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.u = [np.zeros_like(p) for p in params]
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        for p, g, m, u in zip(params, grads, self.m, self.u):
            m *= self.beta1
            m += (1 - self.beta1) * g
            np.maximum(self.beta2 * u, np.abs(g), out=u)
            p -= (self.lr / b1c) * m / (u + self.eps)


class RmsProp:
    def __init__(self, lr: float, alpha: float = 0.99, eps: float = 1e-8):
        self.lr, self.alpha, self.eps = lr, alpha, eps
        self.v: list[np.ndarray] | None = None

    def step(self, params, grads):
        if self.v is None:
            self.v = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.v):
            v *= self.alpha
            v += (1 - self.alpha) * g ** 2
            p -= self.lr * g / (np.sqrt(v) + self.eps)


def make_optimizer(name: str, lr: float):
    table = {
        "SGD": Sgd,
        "Adam": Adam,
        "AdamW": AdamW,
        "Adamax": Adamax,
        "RMSprop": RmsProp,
    }
    if name not in table:
        raise InvalidConfig(f"unknown optimizer {name!r}")
    return table[name](lr)


# --- windowed feed-forward forecaster ---


def build_windows(
    dataset: SeriesDataset, split: DataSplit, lag: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Flattened lag windows over all features, targets horizon steps ahead.

    Returns scaled train inputs/targets, scaled test inputs, and the test
    targets in original units together with their indices.
    """
    t = len(dataset)
    horizon = split.horizon
    scaled = np.column_stack(
        [split.scale(n, dataset.values[n]) for n in dataset.feature_names]
    )
    target_raw = dataset.values[split.target_feature]
    ends = np.arange(lag - 1, t - horizon)
    if len(ends) == 0:
        raise TooShort(f"no windows fit lag {lag} + horizon {horizon} in length {t}")
    windows = np.stack([scaled[e - lag + 1: e + 1].ravel() for e in ends])
    target_idx = ends + horizon
    is_train = target_idx < split.boundary
    is_test = ~is_train
    if not is_train.any() or not is_test.any():
        raise TooShort("split leaves an empty train or test window set")
    x_train = windows[is_train]
    y_train = split.scale(split.target_feature, target_raw[target_idx[is_train]])
    x_test = windows[is_test]
    y_test_raw = target_raw[target_idx[is_test]]
    return x_train, y_train, x_test, y_test_raw, target_idx[is_test]


class WindowForecaster:
    """Feed-forward net on flattened lag windows: tanh hidden layers, linear head."""

    def __init__(self, input_dim: int, hidden_size: int, num_layers: int,
                 rng: np.random.Generator):
        sizes = [input_dim] + [hidden_size] * num_layers + [1]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def forward(self, x: np.ndarray, dropout: float = 0.0,
                rng: np.random.Generator | None = None):
        """Returns predictions and the per-layer cache needed for backprop."""
        cache = []
        h = x
        n_hidden = len(self.weights) - 1
        for i in range(n_hidden):
            pre = h @ self.weights[i] + self.biases[i]
            tanh_out = np.tanh(pre)
            if dropout > 0.0 and rng is not None:
                mask = (rng.random(tanh_out.shape) >= dropout) / (1.0 - dropout)
                act = tanh_out * mask
            else:
                mask, act = None, tanh_out
            cache.append((h, tanh_out, mask))
            h = act
        pred = (h @ self.weights[-1] + self.biases[-1]).ravel()
        cache.append((h, None, None))
        return pred, cache

    def backward(self, cache, d_pred: np.ndarray) -> list[np.ndarray]:
        """Gradients in the same order as .params."""
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.biases)
        h_last = cache[-1][0]
        d_out = d_pred[:, None]
        w_grads[-1] = h_last.T @ d_out
        b_grads[-1] = d_out.sum(axis=0)
        d_h = d_out @ self.weights[-1].T
        for i in range(len(self.weights) - 2, -1, -1):
            h_in, tanh_out, mask = cache[i]
            if mask is not None:
                d_h = d_h * mask
            d_pre = d_h * (1.0 - tanh_out ** 2)
            w_grads[i] = h_in.T @ d_pre
            b_grads[i] = d_pre.sum(axis=0)
            d_h = d_pre @ self.weights[i].T
        return w_grads + b_grads


_REQUIRED_KEYS = ("lag", "hidden_size", "num_layers", "dropout", "lr",
                  "batch_size", "epochs", "optimizer")


def train_builtin_forecaster(
    config: HyperparamConfig,
    split: DataSplit,
    dataset: SeriesDataset,
    seed: int,
    space: SearchSpace | None = None,
) -> EvalResult:
    """Train the windowed forecaster and score it on the test segment.

    Fully deterministic for a given seed: weight init, batch shuffling and
    dropout masks all come from one seeded generator. Any non-finite weight
    or loss fails the trial instead of being clamped.
    """
    if space is not None:
        verdict = validate_config(space, config)
        if not verdict:
            raise InvalidConfig("; ".join(str(v) for v in verdict.violations))
    missing = [k for k in _REQUIRED_KEYS if k not in config.assignments]
    if missing:
        raise InvalidConfig(f"missing parameters: {missing}")

    lag = int(config["lag"])
    hidden = int(config["hidden_size"])
    layers = int(config["num_layers"])
    dropout = float(config["dropout"])
    lr = float(config["lr"])
    batch_size = int(config["batch_size"])
    epochs = int(config["epochs"])
    optimizer_name = str(config["optimizer"])
    if lag < 1 or hidden < 1 or layers < 1 or batch_size < 1 or epochs < 0:
        raise InvalidConfig("non-positive structural parameter")
    if not (0.0 <= dropout < 1.0):
        raise InvalidConfig(f"dropout {dropout} outside [0, 1)")

    x_train, y_train, x_test, y_test_raw, _ = build_windows(dataset, split, lag)

    rng = np.random.default_rng(seed)
    model = WindowForecaster(x_train.shape[1], hidden, layers, rng)
    opt = make_optimizer(optimizer_name, lr)

    t0 = time.monotonic()
    n = len(x_train)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence handled below
        for _ in range(epochs):
            perm = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = perm[start:start + batch_size]
                xb, yb = x_train[idx], y_train[idx]
                pred, cache = model.forward(xb, dropout=dropout, rng=rng)
                resid = pred - yb
                loss = float(np.mean(resid ** 2))
                if not math.isfinite(loss):
                    raise NonFiniteLoss(
                        "training loss became non-finite",
                        t_train=time.monotonic() - t0,
                        diagnostics={"stage": "train", "batch_loss": loss},
                    )
                d_pred = 2.0 * resid / len(yb)
                grads = model.backward(cache, d_pred)
                opt.step(model.params, grads)
            if any(not np.isfinite(p).all() for p in model.params):
                raise NonFiniteLoss(
                    "weights became non-finite",
                    t_train=time.monotonic() - t0,
                    diagnostics={"stage": "train"},
                )
    t_train = time.monotonic() - t0

    t1 = time.monotonic()
    pred_scaled, _ = model.forward(x_test)
    pred_raw = split.unscale(split.target_feature, pred_scaled)
    if not np.isfinite(pred_raw).all():
        raise NonFiniteLoss("non-finite predictions", t_train=t_train,
                            t_eval=time.monotonic() - t1)
    loss = rmse(y_test_raw, pred_raw)
    t_eval = time.monotonic() - t1
    return EvalResult(loss=loss, t_train=t_train, t_eval=t_eval,
                      n_test=len(y_test_raw))


def persistence_rmse(dataset: SeriesDataset, split: DataSplit, lag: int) -> float:
    """Repeat-last-value baseline on the same test windows, original units."""
    t = len(dataset)
    target = dataset.values[split.target_feature]
    ends = np.arange(lag - 1, t - split.horizon)
    target_idx = ends + split.horizon
    is_test = target_idx >= split.boundary
    return rmse(target[target_idx[is_test]], target[ends[is_test]])


# --- subprocess trainer protocol ---


def build_eval_request(
    config: HyperparamConfig,
    split: DataSplit,
    data_path: str,
    seed: int,
) -> dict:
    return {
        "protocol": TRAINER_PROTOCOL,
        "config": config.to_json_dict(),
        "data_path": data_path,
        "train_fraction": split.train_fraction,
        "horizon": split.horizon,
        "target_feature": split.target_feature,
        "seed": seed,
    }


def evaluate_subprocess(
    spec: TrainerSpec,
    config: HyperparamConfig,
    split: DataSplit,
    dataset: SeriesDataset,
    seed: int = 0,
) -> EvalResult:
    """One-request-one-reply JSON lines over stdio, with a hard timeout.

    Every failure mode (timeout, bad exit, malformed reply) surfaces as an
    ObjectiveFailure subclass so the run loop records a failed trial and
    keeps going.
    """
    if spec.kind != "subprocess":
        raise ValueError("spec.kind must be 'subprocess'")
    request = build_eval_request(config, split, spec.data_path, seed)
    line = json.dumps(request) + "\n"
    try:
        proc = subprocess.Popen(
            list(spec.command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
    except OSError as exc:
        raise ProtocolViolation(f"cannot launch trainer: {exc}")
    try:
        stdout, stderr = proc.communicate(input=line, timeout=spec.timeout)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.communicate()
        raise TrainerTimeout(
            f"trainer exceeded {spec.timeout}s",
            diagnostics={"command": list(spec.command)},
        )
    diagnostics = {"stderr": stderr[-2000:]} if stderr else {}

    reply_lines = [ln for ln in stdout.splitlines() if ln.strip()]
    if len(reply_lines) != 1:
        raise ProtocolViolation(
            f"expected exactly one reply line, got {len(reply_lines)}",
            diagnostics={**diagnostics, "stdout": stdout[-2000:]},
        )
    try:
        reply = json.loads(reply_lines[0])
    except json.JSONDecodeError as exc:
        raise ProtocolViolation(
            f"reply is not JSON: {exc}",
            diagnostics={**diagnostics, "stdout": stdout[-2000:]},
        )
    if not isinstance(reply, dict):
        raise ProtocolViolation("reply is not a JSON object", diagnostics=diagnostics)
    if "error" in reply:
        raise NonZeroExit(f"trainer error: {reply['error']}", diagnostics=diagnostics)
    if proc.returncode != 0:
        raise NonZeroExit(f"trainer exited {proc.returncode}", diagnostics=diagnostics)
    for key in ("loss", "t_train", "t_eval", "n_test"):
        if key not in reply:
            raise ProtocolViolation(f"reply missing {key!r}", diagnostics=diagnostics)
    loss = float(reply["loss"])
    if not math.isfinite(loss):
        raise NonFiniteLoss("trainer reported non-finite loss", diagnostics=diagnostics)
    return EvalResult(
        loss=loss,
        t_train=float(reply["t_train"]),
        t_eval=float(reply["t_eval"]),
        n_test=int(reply["n_test"]),
        diagnostics={**diagnostics, **reply.get("diagnostics", {})},
    )

#!/usr/bin/env python3
"""Bi-LSTM trainer speaking the "metaopt-trainer/1" stdio protocol.

Reads exactly one JSON request line from stdin, trains a bidirectional LSTM
forecaster on the referenced CSV with the requested hyperparameters, and
writes exactly one JSON reply line to stdout: either
{loss, t_train, t_eval, n_test} or {error: reason} with a non-zero exit.
Anything diagnostic goes to stderr; stdout stays protocol-clean.

Model: `num_layers` stacked bidirectional LSTM layers of `hidden_size` units,
inter-layer dropout (with a single layer, dropout moves to the output
projection instead, since stacked-layer dropout has nothing to act on), fed
lag windows over all features, predicting the target `horizon` steps ahead
from the final step's concatenated forward/backward hidden state through a
linear head. Min-max scaling is fit on the chronological train split only;
training minimizes MSE on scaled targets; the reported loss is test RMSE in
original units. CPU-only, all RNGs seeded from the request.
"""

import json
import math
import sys
import time

import numpy as np
import pandas as pd
import torch
from torch import nn

PROTOCOL = "metaopt-trainer/1"
CONFIG_KEYS = ("lag", "hidden_size", "num_layers", "dropout", "lr",
               "batch_size", "epochs", "optimizer")
OPTIMIZERS = {
    "SGD": torch.optim.SGD,
    "Adam": torch.optim.Adam,
    "AdamW": torch.optim.AdamW,
    "Adamax": torch.optim.Adamax,
    "RMSprop": torch.optim.RMSprop,
}


class RequestError(Exception):
    pass


def parse_request(line: str) -> dict:
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RequestError(f"request is not JSON: {exc}")
    if not isinstance(request, dict):
        raise RequestError("request must be a JSON object")
    if request.get("protocol") != PROTOCOL:
        raise RequestError(
            f"unknown protocol {request.get('protocol')!r}, expected {PROTOCOL!r}"
        )
    for key in ("config", "data_path", "train_fraction", "horizon",
                "target_feature", "seed"):
        if key not in request:
            raise RequestError(f"request missing {key!r}")
    config = request["config"]
    if sorted(config) != sorted(CONFIG_KEYS):
        raise RequestError(
            f"config keys must be exactly {sorted(CONFIG_KEYS)}, got {sorted(config)}"
        )
    if config["optimizer"] not in OPTIMIZERS:
        raise RequestError(f"unknown optimizer {config['optimizer']!r}")
    if not (0.0 <= float(config["dropout"]) < 1.0):
        raise RequestError(f"dropout {config['dropout']} outside [0, 1)")
    for key in ("lag", "hidden_size", "num_layers", "batch_size", "epochs"):
        if int(config[key]) < 1:
            raise RequestError(f"{key} must be a positive integer")
    if float(config["lr"]) < 0:
        raise RequestError("negative learning rate")
    return request


def load_table(path: str, target: str) -> tuple[np.ndarray, int]:
    df = pd.read_csv(path)
    drop = [c for c in df.columns
            if str(c).strip().lower() in ("time", "timestamp", "date", "datetime")]
    df = df.drop(columns=drop)
    if target not in df.columns:
        raise RequestError(f"target feature {target!r} not in {list(df.columns)}")
    df = df.apply(pd.to_numeric, errors="coerce").dropna(axis=0)
    if len(df) < 10:
        raise RequestError(f"only {len(df)} usable rows in {path}")
    values = df.to_numpy(dtype=np.float64)
    return values, list(df.columns).index(target)


def build_windows(values: np.ndarray, target_col: int, lag: int, horizon: int,
                  train_fraction: float):
    """Chronological split, train-only scaling, flattened-to-sequence windows."""
    t_total = values.shape[0]
    boundary = int(math.floor(t_total * train_fraction))
    train_seg = values[:boundary]
    lo = train_seg.min(axis=0)
    hi = train_seg.max(axis=0)
    if np.any(hi == lo):
        raise RequestError("a feature is constant on the training segment")
    scaled = (values - lo) / (hi - lo)

    ends = np.arange(lag - 1, t_total - horizon)
    if len(ends) == 0:
        raise RequestError("series too short for lag plus horizon")
    windows = np.stack([scaled[e - lag + 1:e + 1] for e in ends])  # (n, lag, F)
    target_idx = ends + horizon
    is_train = target_idx < boundary
    is_test = ~is_train
    if not is_train.any() or not is_test.any():
        raise RequestError("split leaves an empty train or test set")
    y_scaled = scaled[:, target_col]
    x_train = windows[is_train]
    y_train = y_scaled[target_idx[is_train]]
    x_test = windows[is_test]
    y_test_raw = values[target_idx[is_test], target_col]
    return x_train, y_train, x_test, y_test_raw, (lo[target_col], hi[target_col])


class BiLstmForecaster(nn.Module):
    def __init__(self, n_features: int, hidden_size: int, num_layers: int,
                 dropout: float):
        super().__init__()
        self.lstm = nn.LSTM(
            input_size=n_features,
            hidden_size=hidden_size,
            num_layers=num_layers,
            batch_first=True,
            bidirectional=True,
            dropout=dropout if num_layers > 1 else 0.0,
        )
        self.head_dropout = nn.Dropout(dropout if num_layers == 1 else 0.0)
        self.head = nn.Linear(2 * hidden_size, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        output, _ = self.lstm(x)
        final_step = output[:, -1, :]  # forward and backward states, last step
        return self.head(self.head_dropout(final_step)).squeeze(-1)


def handle_request(request: dict) -> dict:
    config = request["config"]
    seed = int(request["seed"])
    torch.manual_seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.set_num_threads(1)  # keeps CPU runs deterministic

    values, target_col = load_table(request["data_path"],
                                    request["target_feature"])
    lag = int(config["lag"])
    horizon = int(request["horizon"])
    x_train, y_train, x_test, y_test_raw, (t_lo, t_hi) = build_windows(
        values, target_col, lag, horizon, float(request["train_fraction"])
    )

    model = BiLstmForecaster(
        n_features=values.shape[1],
        hidden_size=int(config["hidden_size"]),
        num_layers=int(config["num_layers"]),
        dropout=float(config["dropout"]),
    ).double()
    optimizer = OPTIMIZERS[config["optimizer"]](model.parameters(),
                                                lr=float(config["lr"]))
    loss_fn = nn.MSELoss()
    x_train_t = torch.from_numpy(x_train)
    y_train_t = torch.from_numpy(y_train)
    generator = torch.Generator().manual_seed(seed)

    batch_size = int(config["batch_size"])
    n = len(x_train_t)
    model.train()
    t0 = time.monotonic()
    for _ in range(int(config["epochs"])):
        perm = torch.randperm(n, generator=generator)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            optimizer.zero_grad()
            pred = model(x_train_t[idx])
            loss = loss_fn(pred, y_train_t[idx])
            if not torch.isfinite(loss):
                raise RequestError("non-finite loss")
            loss.backward()
            optimizer.step()
    t_train = time.monotonic() - t0

    t1 = time.monotonic()
    model.eval()
    with torch.no_grad():
        pred_scaled = model(torch.from_numpy(x_test)).numpy()
    pred_raw = pred_scaled * (t_hi - t_lo) + t_lo
    if not np.isfinite(pred_raw).all():
        raise RequestError("non-finite loss")
    rmse = float(np.sqrt(np.mean((y_test_raw - pred_raw) ** 2)))
    t_eval = time.monotonic() - t1

    return {
        "loss": rmse,
        "t_train": t_train,
        "t_eval": t_eval,
        "n_test": int(len(y_test_raw)),
    }


def main() -> int:
    line = sys.stdin.readline()
    if not line.strip():
        print(json.dumps({"error": "empty request"}))
        return 2
    try:
        request = parse_request(line)
        reply = handle_request(request)
    except RequestError as exc:
        print(json.dumps({"error": str(exc)}))
        return 2
    except Exception as exc:  # keep stdout protocol-clean on any surprise
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}))
        return 2
    print(json.dumps(reply))
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Bayesian optimization: GP surrogate, expected improvement, warm-start loop.

Configurations are encoded into the unit cube (log-affine for log ranges,
one-hot for categoricals), losses are standardized, and a Matern-5/2 GP with
per-dimension length scales drives an expected-improvement search over a
seeded quasi-random candidate pool. Everything is deterministic given the
seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
import time

import numpy as np
from scipy import optimize
from scipy.linalg import solve_triangular
from scipy.stats import norm, qmc

from .errors import (
    IllConditioned,
    InvalidConfig,
    NoSuccessfulTrials,
    ObjectiveFailure,
    TooFewTrials,
)
from .search_space import (
    CATEGORICAL,
    REAL_RANGE,
    HyperparamConfig,
    SearchSpace,
    sample_uniform,
    validate_config,
)

ORIGIN_BO_INIT = "bo-init"
ORIGIN_BO_ACQUIRED = "bo-acquired"
ORIGIN_LLM = "llm"
ORIGIN_BASELINE = "baseline"

_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
_CANDIDATE_POOL = 2048
_REFINE_TOP = 8


@dataclass
class Trial:
    """One objective evaluation. loss None (or non-finite) means it failed."""

    trial_id: str
    config: HyperparamConfig
    loss: float | None
    t_acq: float = 0.0
    t_train: float = 0.0
    t_eval: float = 0.0
    origin: str = ORIGIN_BO_INIT
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.loss is None or not math.isfinite(self.loss)

    def to_json_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "config": self.config.to_json_dict(),
            "loss": self.loss,
            "t_acq": self.t_acq,
            "t_train": self.t_train,
            "t_eval": self.t_eval,
            "origin": self.origin,
            "error": self.error,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "Trial":
        return Trial(
            trial_id=doc["trial_id"],
            config=HyperparamConfig.from_json_dict(doc["config"]),
            loss=doc["loss"],
            t_acq=doc.get("t_acq", 0.0),
            t_train=doc.get("t_train", 0.0),
            t_eval=doc.get("t_eval", 0.0),
            origin=doc.get("origin", ORIGIN_BO_INIT),
            error=doc.get("error"),
        )


@dataclass
class TrialHistory:
    trials: list[Trial] = field(default_factory=list)

    def append(self, trial: Trial) -> None:
        if any(t.trial_id == trial.trial_id for t in self.trials):
            raise ValueError(f"duplicate trial id {trial.trial_id!r}")
        self.trials.append(trial)

    def successful(self) -> list[Trial]:
        return [t for t in self.trials if not t.failed]

    def __iter__(self):
        return iter(self.trials)

    def __len__(self) -> int:
        return len(self.trials)


@dataclass(frozen=True)
class Incumbent:
    config: HyperparamConfig
    loss: float
    trial_id: str


def incumbent(history: TrialHistory) -> Incumbent:
    """Lowest loss over non-failed trials; the earliest trial wins ties."""
    best: Trial | None = None
    for t in history:
        if t.failed:
            continue
        if best is None or t.loss < best.loss:
            best = t
    if best is None:
        raise NoSuccessfulTrials("no successful trial in history")
    return Incumbent(config=best.config, loss=best.loss, trial_id=best.trial_id)


class SpaceEncoder:
    """Maps configs to points in [0,1]^d and back.

    Numeric parameters take one coordinate each (affine, log-affine for log
    scale); categoricals take one coordinate per choice, one-hot. Decoding
    rounds integers to the nearest value and picks the argmax choice, so
    decode(encode(c)) == c for integer and categorical parameters.
    """

    def __init__(self, space: SearchSpace):
        self.space = space
        self._layout: list[tuple] = []
        d = 0
        for spec in space.params:
            if spec.kind == CATEGORICAL:
                self._layout.append((spec, d, len(spec.choices)))
                d += len(spec.choices)
            else:
                self._layout.append((spec, d, 1))
                d += 1
        self.dim = d

    def encode(self, config: HyperparamConfig) -> np.ndarray:
        verdict = validate_config(self.space, config)
        if not verdict:
            raise InvalidConfig("; ".join(str(v) for v in verdict.violations))
        point = np.zeros(self.dim)
        for spec, offset, width in self._layout:
            value = config[spec.name]
            if spec.kind == CATEGORICAL:
                point[offset + spec.choices.index(value)] = 1.0
            elif spec.kind == REAL_RANGE and spec.scale == "log":
                span = math.log(spec.high) - math.log(spec.low)
                point[offset] = 0.0 if span == 0 else (
                    (math.log(value) - math.log(spec.low)) / span
                )
            else:
                span = spec.high - spec.low
                point[offset] = 0.0 if span == 0 else (value - spec.low) / span
        return point

    def decode(self, point: np.ndarray) -> HyperparamConfig:
        assignments = {}
        for spec, offset, width in self._layout:
            if spec.kind == CATEGORICAL:
                idx = int(np.argmax(point[offset:offset + width]))
                assignments[spec.name] = spec.choices[idx]
                continue
            z = float(np.clip(point[offset], 0.0, 1.0))
            if spec.kind == REAL_RANGE and spec.scale == "log":
                value = math.exp(
                    math.log(spec.low)
                    + z * (math.log(spec.high) - math.log(spec.low))
                )
                assignments[spec.name] = float(min(max(value, spec.low), spec.high))
            elif spec.kind == REAL_RANGE:
                assignments[spec.name] = float(spec.low + z * (spec.high - spec.low))
            else:
                value = int(round(spec.low + z * (spec.high - spec.low)))
                assignments[spec.name] = int(min(max(value, spec.low), spec.high))
        return HyperparamConfig(assignments)


def _matern52(sq_dist: np.ndarray, signal_var: float) -> np.ndarray:
    r = np.sqrt(np.maximum(sq_dist, 0.0))
    return signal_var * (1.0 + math.sqrt(5) * r + (5.0 / 3.0) * sq_dist) * np.exp(
        -math.sqrt(5) * r
    )


def _scaled_sq_dist(a: np.ndarray, b: np.ndarray, length_scales: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sum((diff / length_scales) ** 2, axis=2)


def _chol_with_jitter(k: np.ndarray):
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(k + jitter * np.eye(len(k))), jitter
        except np.linalg.LinAlgError:
            continue
    return None, None


@dataclass
class SurrogateState:
    """Fitted GP over encoded configurations and standardized losses."""

    x: np.ndarray
    z: np.ndarray
    y_mean: float
    y_std: float
    length_scales: np.ndarray
    signal_var: float
    noise_var: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float

    def standardize(self, loss: float) -> float:
        return (loss - self.y_mean) / self.y_std

    def predict(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and stddev (standardized units) at encoded points."""
        pts = np.atleast_2d(points)
        k_star = _matern52(
            _scaled_sq_dist(self.x, pts, self.length_scales), self.signal_var
        )
        mu = k_star.T @ self.alpha
        w = solve_triangular(self.chol, k_star, lower=True)
        var = self.signal_var - np.sum(w ** 2, axis=0)
        return mu, np.sqrt(np.maximum(var, 0.0))


def _nlml(theta: np.ndarray, sq_by_dim: np.ndarray, z: np.ndarray) -> float:
    d = sq_by_dim.shape[2]
    ls = np.exp(theta[:d])
    signal_var = math.exp(theta[d])
    noise_var = math.exp(theta[d + 1])
    sq = np.sum(sq_by_dim / ls ** 2, axis=2)
    k = _matern52(sq, signal_var) + noise_var * np.eye(len(z))
    chol, _ = _chol_with_jitter(k)
    if chol is None:
        return 1e12
    half = solve_triangular(chol, z, lower=True)
    return float(
        0.5 * half @ half
        + np.sum(np.log(np.diag(chol)))
        + 0.5 * len(z) * math.log(2 * math.pi)
    )


def fit_surrogate(history: TrialHistory, space: SearchSpace, seed: int = 0) -> SurrogateState:
    """Fit the GP by maximizing marginal likelihood from several seeded starts."""
    good = history.successful()
    if len(good) < 2:
        raise TooFewTrials(f"need >= 2 successful trials, have {len(good)}")
    encoder = SpaceEncoder(space)
    x = np.stack([encoder.encode(t.config) for t in good])
    y = np.array([t.loss for t in good], dtype=float)
    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std == 0.0:
        y_std = 1.0
    z = (y - y_mean) / y_std

    d = x.shape[1]
    diff = x[:, None, :] - x[None, :, :]
    sq_by_dim = diff ** 2

    lo = np.concatenate([np.full(d, math.log(0.05)), [math.log(0.05), math.log(1e-8)]])
    hi = np.concatenate([np.full(d, math.log(20.0)), [math.log(20.0), math.log(1.0)]])
    bounds = list(zip(lo, hi))
    start0 = np.concatenate([np.zeros(d), [0.0, math.log(1e-2)]])

    rng = np.random.default_rng(seed)
    starts = [start0] + [rng.uniform(lo, hi) for _ in range(3)]
    best_theta, best_val = None, math.inf
    for s in starts:
        res = optimize.minimize(
            _nlml, s, args=(sq_by_dim, z), method="L-BFGS-B", bounds=bounds,
            options={"maxiter": 40, "ftol": 1e-8},
        )
        if res.fun < best_val:
            best_val, best_theta = res.fun, res.x

    ls = np.exp(best_theta[:d])
    signal_var = math.exp(best_theta[d])
    noise_var = math.exp(best_theta[d + 1])
    sq = np.sum(sq_by_dim / ls ** 2, axis=2)
    k = _matern52(sq, signal_var) + noise_var * np.eye(len(z))
    chol, jitter = _chol_with_jitter(k)
    if chol is None:
        raise IllConditioned("kernel matrix not positive definite after jitter ladder")
    alpha_half = solve_triangular(chol, z, lower=True)
    alpha = solve_triangular(chol.T, alpha_half, lower=False)
    return SurrogateState(
        x=x, z=z, y_mean=y_mean, y_std=y_std, length_scales=ls,
        signal_var=signal_var, noise_var=noise_var, chol=chol, alpha=alpha,
        jitter=jitter,
    )


def ei_value(mu: np.ndarray, sigma: np.ndarray, f_star: float) -> np.ndarray:
    """Expected improvement under minimization, all in the same (standardized) units."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    improvement = f_star - mu
    out = np.maximum(improvement, 0.0)
    positive = sigma > 0
    if np.any(positive):
        zed = improvement[positive] / sigma[positive]
        out = np.array(out, dtype=float)
        out[positive] = improvement[positive] * norm.cdf(zed) + sigma[positive] * norm.pdf(zed)
    return out


def expected_improvement(state: SurrogateState, point: np.ndarray, best_loss: float) -> float:
    """EI at one encoded point, with best_loss given in original loss units."""
    mu, sigma = state.predict(np.atleast_2d(point))
    return float(ei_value(mu, sigma, state.standardize(best_loss))[0])


def suggest_next(
    state: SurrogateState, space: SearchSpace, best_loss: float, seed: int
) -> HyperparamConfig:
    """Pick the EI maximizer over a Sobol candidate pool plus local refinement."""
    encoder = SpaceEncoder(space)
    sampler = qmc.Sobol(d=encoder.dim, scramble=True, seed=seed)
    candidates = sampler.random(_CANDIDATE_POOL)
    f_star = state.standardize(best_loss)
    mu, sigma = state.predict(candidates)
    scores = ei_value(mu, sigma, f_star)

    order = np.argsort(scores)[::-1]
    best_point = candidates[order[0]]
    best_score = float(scores[order[0]])

    def neg_ei(p: np.ndarray) -> float:
        m, s = state.predict(p[None, :])
        return -float(ei_value(m, s, f_star)[0])

    for idx in order[:_REFINE_TOP]:
        res = optimize.minimize(
            neg_ei, candidates[idx], method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * encoder.dim, options={"maxiter": 40},
        )
        if -res.fun > best_score:
            best_score, best_point = -res.fun, res.x
    return encoder.decode(best_point)


def _eval_objective(objective, config: HyperparamConfig):
    """Normalize objective results to (loss, t_train, t_eval)."""
    result = objective(config)
    if isinstance(result, (int, float)):
        return float(result), 0.0, 0.0
    return float(result.loss), float(result.t_train), float(result.t_eval)


def run_bo(
    objective,
    space: SearchSpace,
    n_init: int,
    n_total: int,
    seed: int,
    on_trial=None,
) -> tuple[TrialHistory, Incumbent]:
    """Seeded uniform warm-up followed by EI-driven acquisitions.

    The objective is any callable taking a config and returning either a bare
    loss or an object with loss/t_train/t_eval attributes; raising
    ObjectiveFailure marks that trial failed and the loop continues. Aborts
    only when every warm-up trial fails. on_trial, when given, is called with
    each completed Trial so callers can persist incrementally.
    """
    if n_init < 2:
        raise ValueError("n_init must be >= 2")
    if n_total < n_init:
        raise ValueError("n_total must be >= n_init")
    master = np.random.default_rng(seed)
    step_seeds = [int(s) for s in master.integers(0, 2 ** 31 - 1, size=2 * n_total)]

    history = TrialHistory()
    for i in range(n_init):
        config = sample_uniform(space, step_seeds[i])
        trial = _run_trial(objective, config, f"trial_{i + 1}", ORIGIN_BO_INIT, 0.0)
        history.append(trial)
        if on_trial:
            on_trial(trial)
    if not history.successful():
        raise NoSuccessfulTrials("every warm-up trial failed")

    for i in range(n_init, n_total):
        t0 = time.monotonic()
        if len(history.successful()) >= 2:
            state = fit_surrogate(history, space, seed=step_seeds[n_total + i])
            best = incumbent(history)
            config = suggest_next(state, space, best.loss, seed=step_seeds[i])
        else:
            config = sample_uniform(space, step_seeds[i])
        t_acq = time.monotonic() - t0
        trial = _run_trial(objective, config, f"trial_{i + 1}", ORIGIN_BO_ACQUIRED, t_acq)
        history.append(trial)
        if on_trial:
            on_trial(trial)

    return history, incumbent(history)


def _run_trial(objective, config, trial_id: str, origin: str, t_acq: float) -> Trial:
    try:
        loss, t_train, t_eval = _eval_objective(objective, config)
    except ObjectiveFailure as exc:
        return Trial(
            trial_id=trial_id, config=config, loss=None, t_acq=t_acq,
            t_train=exc.t_train, t_eval=exc.t_eval, origin=origin,
            error=exc.reason,
        )
    if not math.isfinite(loss):
        return Trial(
            trial_id=trial_id, config=config, loss=None, t_acq=t_acq,
            t_train=t_train, t_eval=t_eval, origin=origin,
            error="non-finite loss",
        )
    return Trial(
        trial_id=trial_id, config=config, loss=loss, t_acq=t_acq,
        t_train=t_train, t_eval=t_eval, origin=origin,
    )

"""Seeded synthetic benchmarks: Switch-Feature and Delayed Spike.

Series ``i`` of a dataset draws from ``numpy.random.default_rng([seed, i])``,
so a series does not depend on how many others are generated or in what
order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from .core import TimeSeries

SWITCH_TRANSITIONS = ((0.95, 0.02, 0.03), (0.02, 0.95, 0.03), (0.03, 0.02, 0.95))
SWITCH_MEANS = ((0.8, 0.5, 0.2), (0.0, 1.0, 0.0), (0.2, 0.2, 0.8))


@dataclass(frozen=True)
class SwitchFeatureConfig:
    num_series: int = 100
    seq_len: int = 100
    window: int = 50
    initial: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    transitions: tuple[tuple[float, ...], ...] = SWITCH_TRANSITIONS
    rbf_gamma: float = 0.2
    marginal_variance: float = 0.1
    means: tuple[tuple[float, ...], ...] = SWITCH_MEANS
    seed: int = 0

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("transition matrix must be square")
        if not np.allclose(P.sum(axis=1), 1.0, atol=1e-12) or np.any(P < 0):
            raise ValueError("transition rows must be probability vectors")
        if not np.isclose(sum(self.initial), 1.0) or len(self.initial) != P.shape[0]:
            raise ValueError("initial distribution must match the number of states and sum to 1")
        M = np.asarray(self.means, dtype=float)
        if M.shape != (P.shape[0], P.shape[0]):
            raise ValueError("need one mean vector per state, one entry per feature")
        if self.num_series < 1 or self.seq_len < 2:
            raise ValueError("need num_series >= 1 and seq_len >= 2")
        if self.rbf_gamma <= 0 or self.marginal_variance <= 0:
            raise ValueError("rbf_gamma and marginal_variance must be positive")


def stationary_distribution(transitions) -> np.ndarray:
    """Left eigenvector of the transition matrix for eigenvalue 1, normalized."""
    P = np.asarray(transitions, dtype=float)
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(A, b, rcond=None)[0]


@lru_cache(maxsize=8)
def _rbf_cholesky(n: int, gamma: float, variance: float) -> np.ndarray:
    t = np.arange(n, dtype=float)
    K = variance * np.exp(-gamma * (t[:, None] - t[None, :]) ** 2)
    try:
        return cholesky(K, lower=True)
    except LinAlgError:
        pass
    try:
        return cholesky(K + 1e-8 * np.eye(n), lower=True)
    except LinAlgError as exc:
        raise LinAlgError(f"RBF kernel (n={n}, gamma={gamma}) not positive definite even with jitter") from exc


def sample_markov_chain(rng: np.random.Generator, initial, transitions, length: int) -> np.ndarray:
    P = np.asarray(transitions, dtype=float)
    cum = np.cumsum(P, axis=1)
    u = rng.random(length)
    states = np.empty(length, dtype=np.int64)
    states[0] = int(np.searchsorted(np.cumsum(initial), u[0], side="right"))
    for t in range(1, length):
        states[t] = int(np.searchsorted(cum[states[t - 1]], u[t], side="right"))
    return np.minimum(states, P.shape[0] - 1)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def switch_feature_series(cfg: SwitchFeatureConfig, index: int) -> tuple[TimeSeries, np.ndarray]:
    """One Switch-Feature series and its hidden state path."""
    rng = np.random.default_rng([cfg.seed, index])
    L = cfg.seq_len
    n_states = len(cfg.initial)
    states = sample_markov_chain(rng, cfg.initial, cfg.transitions, L)
    chol = _rbf_cholesky(L, float(cfg.rbf_gamma), float(cfg.marginal_variance))
    gp = chol @ rng.standard_normal((L, n_states))
    means = np.asarray(cfg.means, dtype=float)
    values = gp + means[states]
    p = _sigmoid(values[np.arange(L), states])
    labels = (rng.random(L) < p).astype(np.int64)
    ts = TimeSeries(values, labels, tuple(f"x{d}" for d in range(n_states)), f"switch-{cfg.seed}-{index:05d}")
    return ts, states


def gen_switch_feature(cfg: SwitchFeatureConfig, return_states: bool = False):
    out = [switch_feature_series(cfg, i) for i in range(cfg.num_series)]
    if return_states:
        return [s for s, _ in out], [z for _, z in out]
    return [s for s, _ in out]


@dataclass(frozen=True)
class DelayedSpikeConfig:
    """NARMA-2 signals with trend and spikes; label turns 1 ``delay`` steps after
    the first spike in feature 0.

    The NARMA coefficients, spike size and rate are this package's choices.
    """

    num_series: int = 100
    seq_len: int = 80
    num_features: int = 3
    spike_probability: float = 0.02
    spike_magnitude: float = 2.0
    narma_coefficients: tuple[float, float, float, float] = (0.3, 0.05, 1.5, 0.1)
    input_range: tuple[float, float] = (0.0, 0.5)
    trend_slope_range: tuple[float, float] = (-0.005, 0.005)
    delay: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.spike_probability <= 1:
            raise ValueError("spike_probability must lie in [0, 1]")
        if self.num_series < 1 or self.seq_len < 3 or self.num_features < 1:
            raise ValueError("need num_series >= 1, seq_len >= 3, num_features >= 1")
        if self.delay < 0:
            raise ValueError("delay must be non-negative")


def narma2(u: np.ndarray, coefficients=(0.3, 0.05, 1.5, 0.1)) -> np.ndarray:
    """``y[t+1] = a y[t] + b y[t] (y[t] + y[t-1]) + c u[t-1] u[t] + e`` from zero state."""
    a, b, c, e = coefficients
    y = np.zeros(len(u))
    for t in range(1, len(u) - 1):
        y[t + 1] = a * y[t] + b * y[t] * (y[t] + y[t - 1]) + c * u[t - 1] * u[t] + e
    return y


def delayed_spike_labels(spikes: np.ndarray, delay: int = 2) -> np.ndarray:
    """0 until ``delay`` steps after the first spike, 1 from then on."""
    spikes = np.asarray(spikes, dtype=bool)
    labels = np.zeros(len(spikes), dtype=np.int64)
    hits = np.flatnonzero(spikes)
    if hits.size:
        labels[hits[0] + delay:] = 1
    return labels


def delayed_spike_series(cfg: DelayedSpikeConfig, index: int) -> TimeSeries:
    rng = np.random.default_rng([cfg.seed, index])
    L, D = cfg.seq_len, cfg.num_features
    u = rng.uniform(*cfg.input_range, size=(L, D))
    base = np.stack([narma2(u[:, d], cfg.narma_coefficients) for d in range(D)], axis=1)
    slope = rng.uniform(*cfg.trend_slope_range, size=D)
    spikes = rng.random((L, D)) < cfg.spike_probability
    values = base + slope * np.arange(L)[:, None] + cfg.spike_magnitude * spikes
    labels = delayed_spike_labels(spikes[:, 0], cfg.delay)
    return TimeSeries(values, labels, tuple(f"x{d}" for d in range(D)), f"spike-{cfg.seed}-{index:05d}")


def gen_delayed_spike(cfg: DelayedSpikeConfig) -> list[TimeSeries]:
    return [delayed_spike_series(cfg, i) for i in range(cfg.num_series)]


def make_splits(series: Sequence | int, ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0):
    """Disjoint train/val/test index arrays covering every series."""
    n = series if isinstance(series, int) else len(series)
    ratios = np.asarray(ratios, dtype=float)
    if ratios.ndim != 1 or len(ratios) == 0 or np.any(ratios < 0) or ratios.sum() <= 0:
        raise ValueError(f"invalid split ratios {ratios.tolist()}")
    ratios = ratios / ratios.sum()
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.round(np.cumsum(ratios) * n).astype(int)
    bounds[-1] = n
    return tuple(np.sort(part) for part in np.split(perm, bounds[:-1]))


def sliding_windows(series: Sequence[TimeSeries], window: int, stride: int = 1):
    """All windows with the label at the window's last step."""
    xs, ys = [], []
    for s in series:
        for end in range(window - 1, s.length, stride):
            xs.append(s.values[end - window + 1:end + 1])
            ys.append(s.labels[end])
    return np.stack(xs), np.array(ys, dtype=np.int64)


def config_sidecar(cfg) -> str:
    doc = {"generator": type(cfg).__name__, **asdict(cfg)}
    return json.dumps(doc, indent=2)

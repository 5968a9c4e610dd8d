"""Path-integral attribution: the generalized IG engine and SWING.

Grid
----
A path with ``m`` affine segments is sampled at ``n`` uniformly spaced values
``alpha_j = j / n``, ``j = 0 .. n``, where ``n`` is the requested
``n_samples`` rounded up to a multiple of ``m``. Every segment boundary is
then a grid point, so each trapezoid interval lies inside one segment. The
interval ``(j-1, j)`` adds ``(X_j - X_{j-1}) * (G_j + G_{j-1}) / 2`` where
``G`` is the class gradient at the sampled window.

Scatter rule
------------
Integrals are computed in window-relative coordinates (row ``r`` of a
``W x D`` window). When a segment interpolates between the windows ending at
``s`` and ``s + sigma``, its row ``r`` is credited to absolute time
``e - W + 1 + r`` with ``e = s + sigma`` (the window the segment moves
towards). ``e`` is clamped into ``[min(t1, t2), max(t1, t2)]``, which only
matters for baseline offsets ``d >= 2``.

Worked example, ``W = 3``, ``t1 = 5``, ``t2 = 6``, ``d = 1``: the path
``gamma_{1,2}`` runs from the window ending at 4 to the one ending at 6 in
two segments. Segment 0 (4 -> 5) lands on rows 3..5, segment 1 (5 -> 6) on
rows 4..6. The attribution map covers rows 3..6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    AttributionMap,
    ChangeTarget,
    Classifier,
    TimeSeries,
    WindowSpec,
    concatenated_input,
    extract_window,
    window_slice,
)

DEFAULT_N_SAMPLES = 50


@dataclass(frozen=True)
class IntegratorConfig:
    n_samples: int = DEFAULT_N_SAMPLES

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")

    def grid_size(self, segments: int) -> int:
        """``n_samples`` rounded up to a multiple of ``segments``."""
        m = max(segments, 1)
        return -(-int(self.n_samples) // m) * m


class Path:
    """Piecewise-affine curve ``[0, 1] -> R^{W x D}``."""

    segment_count: int = 1

    def eval(self, alpha: float) -> np.ndarray:
        raise NotImplementedError

    def grid(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Windows at ``alpha = j/n`` for ``j = 0..n`` and each interval's segment index.

        ``n`` must be a multiple of ``segment_count``.
        """
        raise NotImplementedError

    @property
    def baseline(self) -> np.ndarray:
        return self.eval(0.0)

    @property
    def endpoint(self) -> np.ndarray:
        return self.eval(1.0)


class StraightPath(Path):
    def __init__(self, baseline, endpoint):
        baseline = np.asarray(baseline, dtype=float)
        endpoint = np.asarray(endpoint, dtype=float)
        if baseline.shape != endpoint.shape:
            raise ValueError(f"baseline {baseline.shape} and endpoint {endpoint.shape} differ in shape")
        self._x0 = baseline
        self._x1 = endpoint
        self.segment_count = 1

    def eval(self, alpha):
        return (1.0 - alpha) * self._x0 + alpha * self._x1

    def grid(self, n):
        a = np.arange(n + 1) / n
        pts = (1.0 - a)[:, None, None] * self._x0 + a[:, None, None] * self._x1
        pts[0], pts[-1] = self._x0, self._x1
        return pts, np.zeros(n, dtype=np.int64)


def straight_path(baseline, endpoint) -> StraightPath:
    return StraightPath(baseline, endpoint)


class PiecewisePath(Path):
    """Path through the observed windows ending at ``anchor_from, ..., anchor_to``.

    Segment ``k`` interpolates between the windows ending at ``s`` and
    ``s + sigma`` with ``s = anchor_from + sigma * k``.
    """

    def __init__(self, series: TimeSeries, spec: WindowSpec, anchor_from: int, anchor_to: int):
        W = spec.window_size
        lo, hi = min(anchor_from, anchor_to), max(anchor_from, anchor_to)
        if lo - W + 1 < 0 or hi >= series.length:
            raise IndexError(
                f"path between windows ending at {anchor_from} and {anchor_to} needs rows "
                f"{lo - W + 1}..{hi} (W={W}); series has rows 0..{series.length - 1}"
            )
        self.series = series
        self.window_size = W
        self.anchor_from = int(anchor_from)
        self.anchor_to = int(anchor_to)
        self.m = abs(anchor_to - anchor_from)
        self.sigma = int(np.sign(anchor_to - anchor_from))
        self.segment_count = max(self.m, 1)

    def _window(self, end):
        return self.series.values[window_slice(end, self.window_size)]

    def locate(self, alpha: float) -> tuple[int, float, int]:
        """Segment index, in-segment ratio and window index for ``alpha``."""
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        if self.m == 0:
            return 0, 0.0, self.anchor_from
        k = int(np.floor(alpha * self.m))
        if k >= self.m:
            k = self.m - 1
        ratio = alpha * self.m - k
        return k, ratio, self.anchor_from + self.sigma * k

    def eval(self, alpha):
        if self.m == 0:
            return self._window(self.anchor_from).copy()
        _, ratio, s = self.locate(alpha)
        return (1.0 - ratio) * self._window(s) + ratio * self._window(s + self.sigma)

    def grid(self, n):
        if self.m == 0:
            pts = np.broadcast_to(self._window(self.anchor_from), (n + 1,) + self._window(self.anchor_from).shape)
            return pts.copy(), np.zeros(n, dtype=np.int64)
        if n % self.m:
            raise ValueError(f"grid size {n} is not a multiple of the segment count {self.m}")
        per = n // self.m
        j = np.arange(n + 1)
        k = np.minimum(j // per, self.m - 1)
        ratio = (j - k * per) / per
        s = self.anchor_from + self.sigma * k
        windows = np.stack([self._window(e) for e in range(min(self.anchor_from, self.anchor_to),
                                                           max(self.anchor_from, self.anchor_to) + 1)])
        base = min(self.anchor_from, self.anchor_to)
        a = windows[s - base]
        b = windows[s + self.sigma - base]
        pts = (1.0 - ratio)[:, None, None] * a + ratio[:, None, None] * b
        # segment boundaries hit observed windows exactly
        exact = ratio == 0.0
        pts[exact] = a[exact]
        pts[ratio == 1.0] = b[ratio == 1.0]
        seg_of_interval = (np.arange(n)) // per
        return pts, seg_of_interval

    def segment_frame_end(self, k: int) -> int:
        """Window a segment moves towards (unclamped scatter frame)."""
        return self.anchor_from + self.sigma * (k + 1)


def piecewise_path(series: TimeSeries, spec: WindowSpec, anchor_from: int, anchor_to: int) -> PiecewisePath:
    return PiecewisePath(series, spec, anchor_from, anchor_to)


def retrospective_baseline(series: TimeSeries, spec: WindowSpec, T: int, offset: int = 1) -> np.ndarray:
    """The observed window ending ``offset`` steps before ``T``."""
    if offset < 0:
        raise ValueError(f"offset must be >= 0, got {offset}")
    W = spec.window_size
    if T - W - offset + 1 < 0:
        raise IndexError(
            f"baseline for T={T} with offset d={offset} needs {W + offset - 1} earlier rows "
            f"(T - W - d + 1 >= 0); only {T} available"
        )
    return extract_window(series, spec, T - offset)


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------


def ig_segment_integrals(f: Classifier, path: Path, target_class: int, cfg: IntegratorConfig) -> np.ndarray:
    """Per-segment trapezoid integrals, shape ``(segment_count, W, D)``."""
    n = cfg.grid_size(path.segment_count)
    pts, seg = path.grid(n)
    if pts.shape[1:] != (f.window_size, f.num_features):
        raise ValueError(f"path windows have shape {pts.shape[1:]}, model expects "
                         f"{(f.window_size, f.num_features)}")
    out = np.zeros((path.segment_count,) + pts.shape[1:])
    disp = np.diff(pts, axis=0)
    if not np.any(disp):
        return out
    G = f.grad_batch(pts, target_class)
    contrib = disp * (G[1:] + G[:-1]) * 0.5
    # fixed-order accumulation over intervals
    for k in range(path.segment_count):
        out[k] = contrib[seg == k].sum(axis=0)
    return out


def ig_line_integral(f: Classifier, path: Path, target_class: int, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Attribution of ``f_c(path(1)) - f_c(path(0))`` to the window entries."""
    cfg = cfg or IntegratorConfig()
    return ig_segment_integrals(f, path, target_class, cfg).sum(axis=0)


def _scatter_path(out: np.ndarray, start_time: int, path: PiecewisePath, segs: np.ndarray,
                  lo: int, hi: int) -> None:
    W = path.window_size
    if path.m == 0:
        return
    for k in range(path.m):
        e = min(max(path.segment_frame_end(k), lo), hi)
        r0 = e - W + 1 - start_time
        out[r0:r0 + W] += segs[k]


def _check_target(series, spec, target, offset):
    W = spec.window_size
    if target.t1 == target.t2:
        raise ValueError("t1 and t2 must differ")
    if target.gap >= W:
        raise ValueError(f"|t2 - t1| = {target.gap} must be smaller than W={W}")
    if target.hi >= series.length:
        raise IndexError(f"t={target.hi} beyond series of length {series.length}")
    if target.lo - offset - W + 1 < 0:
        raise IndexError(
            f"earliest baseline window (ending at {target.lo - offset}) needs "
            f"min(t1, t2) >= W + d - 1 = {W + offset - 1}, got {target.lo}"
        )


def _path_maps(f, series, spec, target, cfg, offset, pairs):
    """Global maps for the requested (i, j) paths, keyed by the pair."""
    W = spec.window_size
    start = target.start_time(W)
    rows = target.span(W)
    times = {1: target.t1, 2: target.t2}
    maps = {}
    for i, j in pairs:
        path = PiecewisePath(series, spec, times[i] - offset, times[j])
        segs = ig_segment_integrals(f, path, target.target_class, cfg)
        g = np.zeros((rows, series.num_features))
        _scatter_path(g, start, path, segs, target.lo, target.hi)
        maps[(i, j)] = g
    return maps


def swing_attribute(f: Classifier, series: TimeSeries, spec: WindowSpec, target: ChangeTarget,
                    cfg: IntegratorConfig | None = None, offset: int = 1) -> AttributionMap:
    """Shifted-window integrated gradients for the change ``t1 -> t2``.

    Four piecewise paths run from the windows ending at ``t_i - offset`` to
    the windows at ``t_j``. Paths into ``t2`` enter with weight +1/2 and paths
    into ``t1`` with -1/2.
    """
    cfg = cfg or IntegratorConfig()
    _check_target(series, spec, target, offset)
    maps = _path_maps(f, series, spec, target, cfg, offset, [(1, 2), (2, 2), (1, 1), (2, 1)])
    into_t2 = maps[(1, 2)] + maps[(2, 2)]
    into_t1 = maps[(1, 1)] + maps[(2, 1)]
    values = 0.5 * (into_t2 - into_t1)
    return AttributionMap(target.start_time(spec.window_size), values, target, "swing",
                          {"n_samples": cfg.n_samples, "offset": offset})


def rbs_attribute(f: Classifier, series: TimeSeries, spec: WindowSpec, target: ChangeTarget,
                  cfg: IntegratorConfig | None = None, offset: int = 1) -> AttributionMap:
    """Ablation without dual paths: only ``gamma_{2,2}`` minus ``gamma_{1,1}``."""
    cfg = cfg or IntegratorConfig()
    _check_target(series, spec, target, offset)
    maps = _path_maps(f, series, spec, target, cfg, offset, [(2, 2), (1, 1)])
    values = maps[(2, 2)] - maps[(1, 1)]
    return AttributionMap(target.start_time(spec.window_size), values, target, "rbs",
                          {"n_samples": cfg.n_samples, "offset": offset})


def single_time_ig(f: Classifier, window: np.ndarray, target_class: int,
                   cfg: IntegratorConfig | None = None, baseline=None) -> np.ndarray:
    """Straight-path IG for one window, all-zeros baseline unless given."""
    window = np.asarray(window, dtype=float)
    baseline = np.zeros_like(window) if baseline is None else baseline
    return ig_line_integral(f, StraightPath(baseline, window), target_class, cfg)


def zero_baseline_ig_pair(f, series, spec, target, cfg=None) -> tuple[np.ndarray, np.ndarray]:
    """Zero-baseline IG of the windows at ``t1`` and ``t2`` (window coordinates)."""
    cfg = cfg or IntegratorConfig()
    w1 = extract_window(series, spec, target.t1)
    w2 = extract_window(series, spec, target.t2)
    return (single_time_ig(f, w1, target.target_class, cfg),
            single_time_ig(f, w2, target.target_class, cfg))


def zero_baseline_ig_change(f: Classifier, series: TimeSeries, spec: WindowSpec, target: ChangeTarget,
                            cfg: IntegratorConfig | None = None) -> AttributionMap:
    """IG with an all-zeros baseline at each time, subtracted.

    Equal to IG applied to the wrapper with a zero baseline on the whole
    concatenated input, since that straight path restricts to straight
    zero-baseline paths on each window.
    """
    cfg = cfg or IntegratorConfig()
    W = spec.window_size
    if target.t1 == target.t2 or target.gap >= W:
        raise ValueError(f"invalid target gap {target.gap} for W={W}")
    concatenated_input(series, spec, target)  # range check
    phi1, phi2 = zero_baseline_ig_pair(f, series, spec, target, cfg)
    start = target.start_time(W)
    values = np.zeros((target.span(W), series.num_features))
    r2 = target.t2 - W + 1 - start
    r1 = target.t1 - W + 1 - start
    values[r2:r2 + W] += phi2
    values[r1:r1 + W] -= phi1
    return AttributionMap(start, values, target, "ig-zero", {"n_samples": cfg.n_samples})


def decompose_change(phi_t1: np.ndarray, phi_t2: np.ndarray, t1: int, t2: int, window_size: int) -> dict:
    """Split a fixed-baseline change attribution into newest, delayed and oldest parts.

    ``phi_t1`` and ``phi_t2`` are single-time attributions in window
    coordinates for ``t1 < t2``. The change equals
    ``newest + delayed - oldest``.
    """
    if not t1 < t2 < t1 + window_size:
        raise ValueError("decomposition needs t1 < t2 < t1 + W")
    W = window_size
    gap = t2 - t1
    # rows of phi_t2 are times t2-W+1..t2; rows of phi_t1 are t1-W+1..t1
    newest = phi_t2[W - gap:].sum()
    shared_t2 = phi_t2[:W - gap]
    shared_t1 = phi_t1[gap:]
    delayed = (shared_t2 - shared_t1).sum()
    oldest = phi_t1[:gap].sum()
    return {"newest": float(newest), "delayed": float(delayed), "oldest": float(oldest)}

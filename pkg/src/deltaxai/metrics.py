"""Sequential-removal evaluation of change attributions.

Cells of the concatenated input ``X[min(t1,t2)-W+1 .. max(t1,t2)]`` are
removed one at a time in saliency order and the wrapper ``g`` is re-evaluated
after each removal. Removed cells are forward-filled: they take the value of
the nearest earlier retained row on the same feature, or keep their own value
when no such row exists inside the concatenated input.

Ranking uses ``|phi|`` with ties broken by earlier time, then lower feature
index, in both directions.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import (
    AttributionMap,
    ChangeTarget,
    Classifier,
    TimeSeries,
    WindowSpec,
    concatenated_input,
    wrapper_eval_concat,
)

DEFAULT_K = 50
DISPLAY_SCALE = 1e3
METRIC_NAMES = ("CPD", "AUPD", "MPD", "AUMPD", "CPP", "AUPP", "MPP", "AUMPP", "Corr")
SUBSTITUTIONS = ("forward-fill", "zero", "average")


def _as_mask(removed, shape) -> np.ndarray:
    if isinstance(removed, np.ndarray) and removed.dtype == bool:
        if removed.shape != shape:
            raise ValueError(f"mask shape {removed.shape} does not match {shape}")
        return removed
    mask = np.zeros(shape, dtype=bool)
    for t, d in removed:
        if not (0 <= t < shape[0] and 0 <= d < shape[1]):
            raise IndexError(f"coordinate ({t}, {d}) outside input of shape {shape}")
        mask[t, d] = True
    return mask


def forward_fill_remove(original: np.ndarray, removed) -> np.ndarray:
    """Replace removed cells by the last retained earlier value of their feature.

    ``removed`` is an iterable of ``(row, feature)`` pairs or a boolean mask.
    A stack of masks of shape ``(n, M, D)`` yields ``n`` filled copies.
    """
    original = np.asarray(original, dtype=float)
    if isinstance(removed, np.ndarray) and removed.dtype == bool and removed.ndim == 3:
        masks = removed
        if masks.shape[1:] != original.shape:
            raise ValueError(f"mask stack {masks.shape} does not match input {original.shape}")
    else:
        masks = _as_mask(removed, original.shape)[None]
    M = original.shape[0]
    rows = np.broadcast_to(np.arange(M)[None, :, None], masks.shape)
    src = np.where(masks, -1, rows)
    src = np.maximum.accumulate(src, axis=1)
    src = np.where(src < 0, rows, src)
    filled = np.take_along_axis(np.broadcast_to(original, masks.shape), src, axis=1)
    return filled if removed is masks else filled[0]


def substitute(original: np.ndarray, masks: np.ndarray, mode: str = "forward-fill") -> np.ndarray:
    """Removal under the chosen substitution; only forward-fill is used in evaluation."""
    if mode == "forward-fill":
        return forward_fill_remove(original, masks)
    if mode == "zero":
        return np.where(masks, 0.0, original)
    if mode == "average":
        return np.where(masks, original.mean(axis=0), original)
    raise ValueError(f"unknown substitution {mode!r}; expected one of {SUBSTITUTIONS}")


def saliency_order(values: np.ndarray, descending: bool = True) -> np.ndarray:
    """Flat cell indices sorted by ``|phi|`` (time, then feature, break ties)."""
    values = np.asarray(values, dtype=float)
    M, D = values.shape
    mag = np.abs(values).ravel()
    t = np.repeat(np.arange(M), D)
    d = np.tile(np.arange(D), M)
    key = -mag if descending else mag
    return np.lexsort((d, t, key))


@dataclass(frozen=True)
class RemovalCurve:
    """Wrapper outputs after removing 0..K cells in ``order``."""

    order: np.ndarray
    outputs: np.ndarray  # (K+1, C)

    @property
    def step_diffs(self) -> np.ndarray:
        return np.abs(np.diff(self.outputs, axis=0)).sum(axis=1)


def removal_curve(f: Classifier, spec: WindowSpec, concat: np.ndarray, order: np.ndarray, K: int,
                  forward: bool = True, substitution: str = "forward-fill") -> RemovalCurve:
    M, D = concat.shape
    if not 0 <= K <= M * D:
        raise ValueError(f"K={K} outside 0..{M * D}")
    masks = np.zeros((K + 1, M * D), dtype=bool)
    for k in range(1, K + 1):
        masks[k] = masks[k - 1]
        masks[k, order[k - 1]] = True
    inputs = substitute(concat, masks.reshape(K + 1, M, D), substitution)
    return RemovalCurve(order[:K], wrapper_eval_concat(f, spec, inputs, t1_first=forward))


def _prepare(series, spec, target, attribution):
    concat = concatenated_input(series, spec, target)
    if attribution.shape != concat.shape:
        raise ValueError(f"attribution shape {attribution.shape} does not match input {concat.shape}")
    return concat


def _values(attribution) -> np.ndarray:
    return attribution.values if isinstance(attribution, AttributionMap) else np.asarray(attribution, dtype=float)


def cumulative_difference(f, series, spec, target, attribution, K, descending=True,
                          substitution="forward-fill") -> tuple[float, np.ndarray]:
    """``sum_k ||g(X_k) - g(X_{k+1})||_1`` over ``K`` sequential removals."""
    values = _values(attribution)
    concat = _prepare(series, spec, target, values)
    M, D = concat.shape
    if not 0 <= K <= M * D:
        raise ValueError(f"K={K} outside 0..{M * D}")
    if K == 0:
        return 0.0, np.zeros(0)
    order = saliency_order(values, descending)
    steps = removal_curve(f, spec, concat, order, K, target.t1 < target.t2, substitution).step_diffs
    return math.fsum(steps.tolist()), steps


def cpd(f, series, spec, target, attribution, K=DEFAULT_K, substitution="forward-fill"):
    """Cumulative prediction difference, most salient cells removed first."""
    return cumulative_difference(f, series, spec, target, attribution, K, True, substitution)


def cpp(f, series, spec, target, attribution, K=DEFAULT_K, substitution="forward-fill"):
    """Cumulative prediction preservation, least salient cells removed first."""
    return cumulative_difference(f, series, spec, target, attribution, K, False, substitution)


def area_from_steps(steps: np.ndarray) -> float:
    """``1/(2K) sum_{k=1..K} (C(k) + C(k-1))`` from the per-step terms."""
    K = len(steps)
    if K == 0:
        raise ValueError("area metrics need K >= 1")
    prefix = np.concatenate([[0.0], np.cumsum(steps)])
    return float((prefix[1:] + prefix[:-1]).sum() / (2 * K))


def aupd(f, series, spec, target, attribution, K=DEFAULT_K, substitution="forward-fill") -> float:
    if K < 1:
        raise ValueError("AUPD needs K >= 1")
    return area_from_steps(cpd(f, series, spec, target, attribution, K, substitution)[1])


def aupp(f, series, spec, target, attribution, K=DEFAULT_K, substitution="forward-fill") -> float:
    if K < 1:
        raise ValueError("AUPP needs K >= 1")
    return area_from_steps(cpp(f, series, spec, target, attribution, K, substitution)[1])


# ---------------------------------------------------------------------------
# Macro aggregation
# ---------------------------------------------------------------------------


class MacroAggregate:
    """Centered sliding-window average of per-step attributions over one series.

    Cell ``(t, d)`` averages ``phi(t, d | T')`` over reference times ``T'`` with
    ``|t - T'| <= W - 1`` whose map covers ``t``. The divisor is the number of
    such maps; cells with no contributor are 0.
    """

    def __init__(self, per_step_maps: Sequence[AttributionMap], spec: WindowSpec, length: int | None = None):
        if not per_step_maps:
            raise ValueError("macro aggregation needs at least one per-step map")
        W = spec.window_size
        D = per_step_maps[0].values.shape[1]
        L = length if length is not None else max(m.end_time for m in per_step_maps) + 1
        total = np.zeros((L, D))
        count = np.zeros(L)
        for m in sorted(per_step_maps, key=lambda m: m.target.hi):
            ref = m.target.hi
            lo = max(m.start_time, ref - W + 1)
            hi = min(m.end_time, ref + W - 1)
            total[lo:hi + 1] += m.values[lo - m.start_time:hi + 1 - m.start_time]
            count[lo:hi + 1] += 1
        self.count = count
        self.values = np.divide(total, count[:, None], out=np.zeros_like(total), where=count[:, None] > 0)

    def slice_for(self, target: ChangeTarget, spec: WindowSpec) -> np.ndarray:
        start = target.start_time(spec.window_size)
        return self.values[start:start + target.span(spec.window_size)]


def macro_aggregate(per_step_maps: Sequence[AttributionMap], spec: WindowSpec, length: int | None = None) -> MacroAggregate:
    return MacroAggregate(per_step_maps, spec, length)


def mpd(f, series, spec, target, macro: MacroAggregate, K=DEFAULT_K, substitution="forward-fill"):
    return cpd(f, series, spec, target, macro.slice_for(target, spec), K, substitution)


def mpp(f, series, spec, target, macro: MacroAggregate, K=DEFAULT_K, substitution="forward-fill"):
    return cpp(f, series, spec, target, macro.slice_for(target, spec), K, substitution)


def aumpd(f, series, spec, target, macro: MacroAggregate, K=DEFAULT_K, substitution="forward-fill"):
    return area_from_steps(mpd(f, series, spec, target, macro, K, substitution)[1])


def aumpp(f, series, spec, target, macro: MacroAggregate, K=DEFAULT_K, substitution="forward-fill"):
    return area_from_steps(mpp(f, series, spec, target, macro, K, substitution)[1])


# ---------------------------------------------------------------------------
# Correlation
# ---------------------------------------------------------------------------


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation, NaN when either side has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0 or not np.isfinite(denom):
        return math.nan
    return float(np.clip((xc @ yc) / denom, -1.0, 1.0))


def corr_from_sequences(top_mag, bottom_mag, top_steps, bottom_steps) -> float:
    return pearson(np.concatenate([top_mag, bottom_mag]), np.concatenate([top_steps, bottom_steps]))


def corr_metric(f, series, spec, target, attribution, K=DEFAULT_K, substitution="forward-fill",
                curves=None) -> float:
    """Correlation between ordered ``|phi|`` and the realized per-removal changes.

    Each removed cell's magnitude is paired with the L1 change its own removal
    caused, for the K most salient cells (descending removal) and the K least
    salient ones (ascending removal). Returns NaN when undefined.
    """
    values = _values(attribution)
    concat = _prepare(series, spec, target, values)
    if 2 * K > concat.size:
        raise ValueError(f"Corr needs 2K <= {concat.size} cells, got K={K}")
    mag = np.abs(values).ravel()
    if curves is None:
        _, top_steps = cpd(f, series, spec, target, values, K, substitution)
        _, bottom_steps = cpp(f, series, spec, target, values, K, substitution)
    else:
        top_steps, bottom_steps = curves
    top = mag[saliency_order(values, True)[:K]]
    bottom = mag[saliency_order(values, False)[:K]]
    return corr_from_sequences(top, bottom, top_steps, bottom_steps)


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------

Attributor = Callable[[Classifier, TimeSeries, WindowSpec, ChangeTarget], AttributionMap]


@dataclass
class MetricReport:
    """Per-sample metric values (unscaled) and their mean and standard error."""

    method: str
    sample_ids: list[str]
    values: dict[str, np.ndarray]
    K: int
    substitution: str = "forward-fill"
    scale: float = DISPLAY_SCALE
    meta: dict = field(default_factory=dict)

    def scale_for(self, metric: str) -> float:
        return 1.0 if metric == "Corr" else self.scale

    def mean(self, metric: str) -> float:
        v = self.values[metric]
        v = v[~np.isnan(v)]
        return math.fsum(v.tolist()) / len(v) if len(v) else math.nan

    def stderr(self, metric: str) -> float:
        v = self.values[metric]
        v = v[~np.isnan(v)]
        if len(v) < 2:
            return 0.0 if len(v) == 1 else math.nan
        return float(np.std(v, ddof=1) / math.sqrt(len(v)))

    def count(self, metric: str) -> int:
        return int(np.sum(~np.isnan(self.values[metric])))

    def summary(self) -> dict:
        return {
            m: {"mean": self.mean(m), "stderr": self.stderr(m), "n": self.count(m),
                "scale": self.scale_for(m)}
            for m in METRIC_NAMES
        }

    def summary_json(self) -> str:
        doc = {"method": self.method, "K": self.K, "substitution": self.substitution,
               "metrics": self.summary()}
        doc.update({k: v for k, v in self.meta.items() if k not in doc})
        return json.dumps(doc, indent=2, sort_keys=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", *METRIC_NAMES])
        for i, sid in enumerate(self.sample_ids):
            w.writerow([sid, *(repr(float(self.values[m][i])) for m in METRIC_NAMES)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, method: str, K: int, **kwargs) -> "MetricReport":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header != ["sample_id", *METRIC_NAMES]:
            raise ValueError(f"unexpected report header {header}")
        ids = [r[0] for r in body]
        vals = {m: np.array([float(r[j + 1]) for r in body]) for j, m in enumerate(METRIC_NAMES)}
        return cls(method, ids, vals, K, **kwargs)


def sample_metrics(f, series, spec, target, attribution: AttributionMap, macro: MacroAggregate,
                   K=DEFAULT_K, substitution="forward-fill") -> dict[str, float]:
    """All nine metrics for one target, unscaled."""
    cpd_v, top = cpd(f, series, spec, target, attribution, K, substitution)
    cpp_v, bottom = cpp(f, series, spec, target, attribution, K, substitution)
    mpd_v, mtop = mpd(f, series, spec, target, macro, K, substitution)
    mpp_v, mbottom = mpp(f, series, spec, target, macro, K, substitution)
    return {
        "CPD": cpd_v, "AUPD": area_from_steps(top),
        "MPD": mpd_v, "AUMPD": area_from_steps(mtop),
        "CPP": cpp_v, "AUPP": area_from_steps(bottom),
        "MPP": mpp_v, "AUMPP": area_from_steps(mbottom),
        "Corr": corr_metric(f, series, spec, target, attribution, K, substitution, curves=(top, bottom)),
    }


def consecutive_targets(f: Classifier, series: TimeSeries, spec: WindowSpec, offset: int = 1,
                        gap: int = 1) -> list[ChangeTarget]:
    """Every valid ``(T - gap, T)`` target in a series, oldest first."""
    from .core import select_target_class

    W = spec.window_size
    first = W + offset - 1
    return [select_target_class(f, series, spec, t1, t1 + gap)
            for t1 in range(first, series.length - gap)]


def evaluate_series(f, series, spec, attributor: Attributor, K=DEFAULT_K, gap=1, offset=1,
                    substitution="forward-fill", targets=None):
    """Attribute and score every target of one series.

    Returns ``(sample_ids, rows, maps)``. Per-step maps for all consecutive
    pairs are computed once for macro aggregation and reused as the targets
    when ``gap == 1``.
    """
    steps = consecutive_targets(f, series, spec, offset, 1)
    if not steps:
        raise ValueError(f"series {series.series_id!r} too short for W={spec.window_size}")
    step_maps = [attributor(f, series, spec, t) for t in steps]
    macro = MacroAggregate(step_maps, spec, series.length)
    if targets is None:
        targets = steps if gap == 1 else consecutive_targets(f, series, spec, offset, gap)
    by_pair = {(m.target.t1, m.target.t2): m for m in step_maps}
    ids, rows, maps = [], [], []
    for tgt in targets:
        amap = by_pair.get((tgt.t1, tgt.t2)) or attributor(f, series, spec, tgt)
        sid = f"{series.series_id}:{tgt.t1}-{tgt.t2}"
        try:
            rows.append(sample_metrics(f, series, spec, tgt, amap, macro, K, substitution))
        except Exception as exc:
            raise RuntimeError(f"sample {sid}: {exc}") from exc
        ids.append(sid)
        maps.append(amap)
    return ids, rows, maps


def assemble_report(method: str, ids: Sequence[str], rows: Sequence[Mapping[str, float]], K: int,
                    substitution="forward-fill", meta=None) -> MetricReport:
    vals = {m: np.array([r[m] for r in rows], dtype=float) for m in METRIC_NAMES}
    return MetricReport(method, list(ids), vals, K, substitution, meta=dict(meta or {}))


def evaluate_suite(f: Classifier, series_list: Iterable[TimeSeries], spec: WindowSpec,
                   attributor: Attributor, K: int = DEFAULT_K, gap: int = 1, offset: int = 1,
                   substitution: str = "forward-fill", method: str = "", max_targets: int | None = None,
                   jobs: int = 1) -> MetricReport:
    """Run all nine metrics over every consecutive target of each series.

    Series are processed independently (in parallel when ``jobs > 1``) and
    concatenated in input order, so results do not depend on ``jobs``.
    """
    series_list = list(series_list)
    if not series_list:
        raise ValueError("evaluate_suite needs a non-empty dataset")
    if substitution not in SUBSTITUTIONS:
        raise ValueError(f"unknown substitution {substitution!r}")
    args = [(f, s, spec, attributor, K, gap, offset, substitution) for s in series_list]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_series_star, args))
    else:
        results = [_evaluate_series_star(a) for a in args]
    ids, rows = [], []
    for sid, srows, _ in results:
        ids.extend(sid)
        rows.extend(srows)
    if max_targets is not None:
        ids, rows = ids[:max_targets], rows[:max_targets]
    return assemble_report(method or getattr(attributor, "method_name", "custom"), ids, rows, K, substitution)


def _evaluate_series_star(a):
    return evaluate_series(*a)

"""Domain types, window arithmetic and the prediction-change wrapper.

Indexing convention
-------------------
All time indices are absolute and 0-based. The window "ending at T" is the
half-open row range ``[T - W + 1, T + 1)`` of ``series.values``, which is the
inclusive range ``T-W+1 .. T`` used in the math. A change target ``(t1, t2)``
is explained over the concatenated input covering rows
``min(t1, t2) - W + 1 .. max(t1, t2)``; row ``i`` of an attribution map is
absolute time ``start_time + i``. This is the only place the mapping is
defined; every other module calls :func:`window_slice`.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

SIMPLEX_TOL = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """An ``L x D`` multivariate series with one integer label per step."""

    values: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = ()
    series_id: str = ""

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D (L x D), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"series {self.series_id!r} contains NaN or Inf")
        labels = _frozen(self.labels, dtype=np.int64)
        if labels.shape != (values.shape[0],):
            raise ValueError(
                f"labels must have length {values.shape[0]}, got shape {labels.shape}"
            )
        names = tuple(self.feature_names) or tuple(f"x{d}" for d in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise ValueError(f"expected {values.shape[1]} feature names, got {len(names)}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", names)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def num_features(self) -> int:
        return self.values.shape[1]

    def to_json(self) -> dict:
        return {
            "series_id": self.series_id,
            "features": list(self.feature_names),
            "values": self.values.tolist(),
            "labels": self.labels.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TimeSeries":
        try:
            return cls(
                values=np.asarray(obj["values"], dtype=float),
                labels=np.asarray(obj["labels"], dtype=np.int64),
                feature_names=tuple(obj["features"]),
                series_id=str(obj["series_id"]),
            )
        except KeyError as exc:
            raise SchemaError(f"time series record missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"malformed time series record: {exc}") from None


@dataclass(frozen=True)
class WindowSpec:
    window_size: int
    num_classes: int = 2

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError(f"window_size must be >= 2, got {self.window_size}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")


class SchemaError(ValueError):
    """A serialized artifact does not match its documented layout."""


class Classifier(ABC):
    """Differentiable window classifier ``f: R^{W x D} -> simplex^{C-1}``.

    Subclasses implement the batched methods; the single-window methods are
    thin wrappers. Implementations must be pure and safe to share read-only.
    """

    window_size: int
    num_features: int
    num_classes: int
    probabilistic: bool = True

    @abstractmethod
    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        """Class probabilities for an ``(n, W, D)`` stack, shape ``(n, C)``."""

    @abstractmethod
    def grad_batch(self, windows: np.ndarray, target_class: int) -> np.ndarray:
        """Gradient of probability ``target_class`` w.r.t. every window entry."""

    def predict(self, window: np.ndarray) -> np.ndarray:
        return self.predict_batch(self._check_window(window)[None])[0]

    def grad(self, window: np.ndarray, target_class: int) -> np.ndarray:
        return self.grad_batch(self._check_window(window)[None], target_class)[0]

    def _check_window(self, window) -> np.ndarray:
        window = np.asarray(window, dtype=float)
        expected = (self.window_size, self.num_features)
        if window.shape != expected:
            raise ValueError(f"window shape {window.shape} does not match {expected}")
        return window

    def _check_batch(self, windows) -> np.ndarray:
        windows = np.asarray(windows, dtype=float)
        if windows.ndim != 3 or windows.shape[1:] != (self.window_size, self.num_features):
            raise ValueError(
                f"expected windows of shape (n, {self.window_size}, {self.num_features}), "
                f"got {windows.shape}"
            )
        return windows

    def _check_class(self, c: int) -> int:
        if not 0 <= c < self.num_classes:
            raise ValueError(f"class {c} out of range for {self.num_classes} classes")
        return int(c)


@dataclass(frozen=True)
class ChangeTarget:
    """Which prediction change is explained: class ``target_class`` from t1 to t2.

    ``t1 > t2`` is allowed and denotes the reversed change; it is what
    :meth:`reversed` returns and is needed to check skew-symmetry.
    """

    t1: int
    t2: int
    target_class: int
    delta: float

    @property
    def lo(self) -> int:
        return min(self.t1, self.t2)

    @property
    def hi(self) -> int:
        return max(self.t1, self.t2)

    @property
    def gap(self) -> int:
        return abs(self.t2 - self.t1)

    def reversed(self) -> "ChangeTarget":
        return ChangeTarget(self.t2, self.t1, self.target_class, -self.delta)

    def span(self, window_size: int) -> int:
        """Rows of the concatenated input, ``|t2 - t1| + W``."""
        return self.gap + window_size

    def start_time(self, window_size: int) -> int:
        return self.lo - window_size + 1


@dataclass(frozen=True)
class AttributionMap:
    """Attribution scores over absolute times ``start_time .. start_time + rows - 1``."""

    start_time: int
    values: np.ndarray
    target: ChangeTarget
    method_name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise ValueError(f"attribution values must be 2-D, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{self.method_name}: attribution contains NaN or Inf")
        object.__setattr__(self, "values", values)

    @property
    def end_time(self) -> int:
        return self.start_time + self.values.shape[0] - 1

    def to_json(self) -> dict:
        return {
            "method": self.method_name,
            "t1": self.target.t1,
            "t2": self.target.t2,
            "class": self.target.target_class,
            "delta": self.target.delta,
            "start_time": self.start_time,
            "values": self.values.tolist(),
            "params": dict(self.params),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AttributionMap":
        try:
            target = ChangeTarget(int(obj["t1"]), int(obj["t2"]), int(obj["class"]), float(obj["delta"]))
            return cls(
                start_time=int(obj["start_time"]),
                values=np.asarray(obj["values"], dtype=float),
                target=target,
                method_name=str(obj["method"]),
                params=dict(obj.get("params", {})),
            )
        except KeyError as exc:
            raise SchemaError(f"attribution record missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"malformed attribution record: {exc}") from None


# ---------------------------------------------------------------------------
# Window arithmetic
# ---------------------------------------------------------------------------


def window_slice(end_time: int, window_size: int) -> slice:
    return slice(end_time - window_size + 1, end_time + 1)


def extract_window(series: TimeSeries, spec: WindowSpec, end_time: int) -> np.ndarray:
    """Rows ``end_time - W + 1 .. end_time`` of ``series.values``."""
    W, L = spec.window_size, series.length
    if not W - 1 <= end_time < L:
        raise IndexError(
            f"window ending at T={end_time} needs W-1 <= T < L (W={W}, L={L})"
        )
    return series.values[window_slice(end_time, W)]


def _check_pair(series: TimeSeries, spec: WindowSpec, t1: int, t2: int, min_t1: int) -> None:
    W, L = spec.window_size, series.length
    if t1 == t2:
        return
    if not (min_t1 <= min(t1, t2) and max(t1, t2) < L):
        raise IndexError(
            f"times (t1={t1}, t2={t2}) need {min_t1} <= t and t < L (W={W}, L={L})"
        )
    if abs(t2 - t1) >= W:
        raise ValueError(f"|t2 - t1| = {abs(t2 - t1)} must be smaller than W={W}")


def wrapper_eval(f: Classifier, series: TimeSeries, spec: WindowSpec, t1: int, t2: int) -> np.ndarray:
    """``g = f(window at t2) - f(window at t1)``, one entry per class."""
    _check_pair(series, spec, t1, t2, spec.window_size - 1)
    w1 = extract_window(series, spec, t1)
    w2 = extract_window(series, spec, t2)
    return f.predict(w2) - f.predict(w1)


def wrapper_eval_perturbed(f: Classifier, spec: WindowSpec, window1, window2) -> np.ndarray:
    """The wrapper on an explicit window pair: ``f(window2) - f(window1)``."""
    window1 = np.asarray(window1, dtype=float)
    window2 = np.asarray(window2, dtype=float)
    if window1.shape != window2.shape:
        raise ValueError(f"window shapes differ: {window1.shape} vs {window2.shape}")
    if window1.shape[0] != spec.window_size:
        raise ValueError(f"windows have {window1.shape[0]} rows, expected W={spec.window_size}")
    return f.predict(window2) - f.predict(window1)


def wrapper_eval_concat(f: Classifier, spec: WindowSpec, concat: np.ndarray, t1_first: bool = True) -> np.ndarray:
    """Wrapper on stacked concatenated inputs of shape ``(n, M, D)`` or ``(M, D)``.

    The first ``W`` rows form the window of the earlier time and the last
    ``W`` rows the later one. With ``t1_first`` the change is later minus
    earlier; otherwise it is reversed.
    """
    concat = np.asarray(concat, dtype=float)
    single = concat.ndim == 2
    if single:
        concat = concat[None]
    W = spec.window_size
    early = f.predict_batch(concat[:, :W])
    late = f.predict_batch(concat[:, -W:])
    out = late - early if t1_first else early - late
    return out[0] if single else out


def select_target_class(f: Classifier, series: TimeSeries, spec: WindowSpec, t1: int, t2: int) -> ChangeTarget:
    """Pick the class with the largest probability increase; ties go to the lowest index."""
    if t1 >= t2:
        raise ValueError(f"select_target_class needs t1 < t2, got t1={t1}, t2={t2}")
    _check_pair(series, spec, t1, t2, spec.window_size)
    change = wrapper_eval(f, series, spec, t1, t2)
    c = int(np.argmax(change))  # argmax returns the first maximum
    return ChangeTarget(t1, t2, c, float(change[c]))


def concatenated_input(series: TimeSeries, spec: WindowSpec, target: ChangeTarget) -> np.ndarray:
    W = spec.window_size
    lo, hi = target.lo, target.hi
    if lo - W + 1 < 0 or hi >= series.length:
        raise IndexError(f"target ({target.t1}, {target.t2}) outside series of length {series.length}")
    return series.values[lo - W + 1: hi + 1]


# ---------------------------------------------------------------------------
# JSON-Lines I/O
# ---------------------------------------------------------------------------


def write_series_jsonl(path, series: Iterable[TimeSeries]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in series:
            fh.write(json.dumps(s.to_json()) + "\n")


def iter_series_jsonl(path) -> Iterator[TimeSeries]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                yield TimeSeries.from_json(obj)
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None


def read_series_jsonl(path) -> list[TimeSeries]:
    return list(iter_series_jsonl(Path(path)))


def write_attributions_jsonl(path, maps: Sequence[AttributionMap]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in maps:
            fh.write(json.dumps(m.to_json()) + "\n")


def read_attributions_jsonl(path) -> list[AttributionMap]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(AttributionMap.from_json(json.loads(line)))
    return out

"""Comparison attributors run through the prediction-change wrapper."""

from __future__ import annotations

import zlib
from functools import partial

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
from .metrics import forward_fill_remove
from .paths import IntegratorConfig, rbs_attribute, swing_attribute, zero_baseline_ig_change


def occlusion_attribute(f: Classifier, series: TimeSeries, spec: WindowSpec, target: ChangeTarget) -> AttributionMap:
    """Feature occlusion: drop in ``g_c`` when one cell is forward-filled from its predecessor."""
    W = spec.window_size
    if target.t1 == target.t2 or target.gap >= W:
        raise ValueError(f"invalid target gap {target.gap} for W={W}")
    concat = concatenated_input(series, spec, target)
    M, D = concat.shape
    masks = np.zeros((M * D, M, D), dtype=bool)
    masks.reshape(M * D, M * D)[np.arange(M * D), np.arange(M * D)] = True
    perturbed = forward_fill_remove(concat, masks)
    forward = target.t1 < target.t2
    c = target.target_class
    base = wrapper_eval_concat(f, spec, concat, forward)[c]
    occluded = wrapper_eval_concat(f, spec, perturbed, forward)[:, c]
    return AttributionMap(target.start_time(W), (base - occluded).reshape(M, D), target, "occlusion")


def _target_seed(seed: int, series_id: str, target: ChangeTarget) -> list[int]:
    return [int(seed), zlib.crc32(series_id.encode()), target.t1, target.t2]


def random_attribute(target: ChangeTarget, spec: WindowSpec, seed: int, num_features: int | None = None,
                     series_id: str = "") -> AttributionMap:
    """I.i.d. uniform[-1, 1] scores, a control for ranking metrics."""
    D = num_features if num_features is not None else 1
    rng = np.random.default_rng(_target_seed(seed, series_id, target))
    values = rng.uniform(-1.0, 1.0, size=(target.span(spec.window_size), D))
    return AttributionMap(target.start_time(spec.window_size), values, target, "random", {"seed": seed})


METHODS = ("swing", "rbs", "ig-zero", "occlusion", "random")


class UnknownMethodError(ValueError):
    pass


def make_attributor(method: str, n_samples: int = 50, offset: int = 1, seed: int = 0):
    """Uniform ``(f, series, spec, target) -> AttributionMap`` callable by name."""
    cfg = IntegratorConfig(n_samples)
    if method == "swing":
        fn = partial(_swing, cfg=cfg, offset=offset)
    elif method == "rbs":
        fn = partial(_rbs, cfg=cfg, offset=offset)
    elif method == "ig-zero":
        fn = partial(_ig_zero, cfg=cfg)
    elif method == "occlusion":
        fn = partial(occlusion_attribute)
    elif method == "random":
        fn = partial(_random, seed=seed)
    else:
        raise UnknownMethodError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    fn.method_name = method
    return fn


# module-level helpers keep the callables picklable for process pools
def _swing(f, series, spec, target, cfg, offset):
    return swing_attribute(f, series, spec, target, cfg, offset)


def _rbs(f, series, spec, target, cfg, offset):
    return rbs_attribute(f, series, spec, target, cfg, offset)


def _ig_zero(f, series, spec, target, cfg):
    return zero_baseline_ig_change(f, series, spec, target, cfg)


def _random(f, series, spec, target, seed):
    return random_attribute(target, spec, seed, series.num_features, series.series_id)

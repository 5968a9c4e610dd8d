"""Attribution of prediction changes in online time-series classifiers."""

from .core import (
    AttributionMap,
    ChangeTarget,
    Classifier,
    TimeSeries,
    WindowSpec,
    extract_window,
    select_target_class,
    wrapper_eval,
    wrapper_eval_perturbed,
)
from .paths import (
    IntegratorConfig,
    ig_line_integral,
    piecewise_path,
    rbs_attribute,
    retrospective_baseline,
    straight_path,
    swing_attribute,
    zero_baseline_ig_change,
)

__version__ = "0.1.0"

__all__ = [
    "AttributionMap",
    "ChangeTarget",
    "Classifier",
    "IntegratorConfig",
    "TimeSeries",
    "WindowSpec",
    "extract_window",
    "ig_line_integral",
    "piecewise_path",
    "rbs_attribute",
    "retrospective_baseline",
    "select_target_class",
    "straight_path",
    "swing_attribute",
    "wrapper_eval",
    "wrapper_eval_perturbed",
    "zero_baseline_ig_change",
]

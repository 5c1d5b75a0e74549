"""Data-driven analytical redundancy relations for fault detection and isolation."""

__version__ = "0.1.0"

from .arrgen import (
    ResidualSpec,
    SearchConfig,
    exhaustive_minimal_arrs,
    forward_select_with_delays,
    generate_residual_bank,
    is_arr,
    prepare_dataset,
    prune_loads,
)
from .detect import (
    RocCurve,
    Thresholds,
    detection_report,
    learn_thresholds,
    raise_alarms,
    roc_curve,
    roc_experiment,
)
from .evaluate import (
    SignatureMatrix,
    ZTestResult,
    detectability,
    isolability_matrix,
    residual_signal,
    z_test,
)
from .regress import LinearModel, LogisticModel, fit_least_squares, fit_logistic, predict, r2_score
from .tanksim import FaultScenario, InflowProfile, TankParams, mass_balance_check, simulate
from .timeseries import (
    Dataset,
    FeatureRef,
    SplitSpec,
    add_integral_columns,
    build_design_matrix,
    chrono_split,
    integrate,
)

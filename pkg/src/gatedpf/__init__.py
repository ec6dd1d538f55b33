"""Fault-gated particle filtering with a cell-transmission freeway testbed.

A bootstrap particle filter whose measurement update is guarded by
per-sensor statistical gates: a Monte Carlo likelihood-ratio test for when
a fault model exists, and a Monte Carlo significance test for when only
the nominal sensor model is known.  A macroscopic freeway simulator,
synthetic sensing with labeled fault injection, and an experiment harness
reproduce the accompanying fault-detection/estimation study at desk scale.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    ContractViolation,
    DataError,
    GatedPfError,
    ModelConsistencyError,
    UndefinedRatioError,
    WeightCollapseError,
)
from .rng import RandomSource
from .particles import (
    DynamicsModel,
    MeasurementDensity,
    ParticleEnsemble,
    effective_sample_size,
    normalize,
    posterior_mean,
    predict,
    resample_systematic,
    weight_update,
)
from .gates import (
    GateDecision,
    GatedUpdateResult,
    SensorModel,
    TailMode,
    GateKind,
    fisher_gate,
    fisher_statistic,
    gated_update,
    likelihood_ratio,
    np_gate,
)
from .ctm import (
    BoundaryDemand,
    DemandProfile,
    DemandSchedule,
    FlowRecord,
    FreewayNetwork,
    LinkParams,
    Trajectory,
    equilibrium_state,
    junction_flows,
    link_flow,
    link_speed,
    simulate,
    speed_map,
    step,
)
from .sensing import (
    FaultConfig,
    GnssSpec,
    LabeledMeasurement,
    LoopDetectorSpec,
    build_sensor_models,
    inject_faults,
    sample_gnss_speeds,
    sample_loop_detectors,
)
from .harness import (
    ExperimentConfig,
    FilterVariant,
    MetricsReport,
    RunMetrics,
    TrajectoryPair,
    confusion_metrics,
    mape,
    run_experiment,
    run_traffic_filter,
    sweep_alpha,
)
from .scenario import Scenario, default_scenario, default_scenario_dict, load_scenario

__all__ = [name for name in dir() if not name.startswith("_")]

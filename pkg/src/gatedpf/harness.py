"""End-to-end experiment orchestration for the freeway testbed.

One experiment run simulates a ground-truth traffic realization, generates
labeled measurements (loop densities plus fault-injected speed reports),
then runs the gated particle filter once per configured (test mode, level)
variant against the same measurement log.  Detection quality is scored as a
confusion matrix over the gate decisions; estimation quality as the mean
absolute percentage error of the posterior-mean density trajectory.

Randomness is organized into named streams off each seed, so the truth,
the sensing noise, the fault draws, and the filter's own model noise are
independent and individually reproducible.  All filter variants of one
seed share identical truth, measurements, and filter streams, which makes
metric columns directly comparable across test modes and levels.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ctm import (
    DemandSchedule,
    FreewayNetwork,
    Trajectory,
    equilibrium_state,
    simulate,
    speed_map,
)
from .errors import ConfigurationError, DataError, WeightCollapseError
from .gates import GateKind, gated_update
from .particles import (
    DynamicsModel,
    ParticleEnsemble,
    effective_sample_size,
    posterior_mean,
    predict,
    resample_systematic,
)
from .rng import RandomSource
from .sensing import (
    GNSS_SPEED,
    FaultConfig,
    GnssSpec,
    HYPOTHESIS_MODES,
    LabeledMeasurement,
    LoopDetectorSpec,
    build_sensor_models,
    inject_faults,
    sample_gnss_speeds,
    sample_loop_detectors,
    vehicle_counts,
)

# Named random streams hung off each experiment seed.
STREAM_TRUTH = 0
STREAM_LOOPS = 1
STREAM_GNSS = 2
STREAM_FAULTS = 3
STREAM_FILTER_DEMAND = 4
STREAM_FILTER_RESAMPLE = 5

DECISION_COLUMNS = (
    "k",
    "sensor_id",
    "link",
    "test_kind",
    "statistic",
    "alpha",
    "rejected",
    "auxiliary",
    "faulty",
)

METRIC_FIELDS = (
    ("true_positives", "tp"),
    ("false_positives", "fp"),
    ("true_negatives", "tn"),
    ("false_negatives", "fn"),
    ("labeling_error_pct", "labeling_error_pct"),
    ("density_mape_pct", "mape_pct"),
)


class CtmDynamics:
    """Particle dynamics: one freeway step with randomly drawn demands.

    The filter embeds the same traffic model used to generate the truth,
    but draws its own boundary and ramp demand noise, which is what spreads
    the particle population.
    """

    def __init__(self, network: FreewayNetwork, schedule: DemandSchedule) -> None:
        self.network = network
        self.schedule = schedule

    def at(self, k: int) -> "CtmStepDynamics":
        return CtmStepDynamics(self.network, self.schedule, k)


@dataclass(frozen=True)
class CtmStepDynamics(DynamicsModel):
    network: FreewayNetwork
    schedule: DemandSchedule
    k: int

    def sample_transition(self, state: np.ndarray, rng: RandomSource) -> np.ndarray:
        return self.sample_transition_batch(np.atleast_2d(state), rng)[0]

    def sample_transition_batch(self, states: np.ndarray, rng: RandomSource) -> np.ndarray:
        from .ctm import advance

        upstream, ramps = self.schedule.sample(self.k, rng, size=states.shape[0])
        new_states, _, _, _ = advance(states, self.network, upstream, ramps)
        return new_states


@dataclass(frozen=True)
class FilterVariant:
    """One filter configuration: a hypothesis mode plus its level."""

    mode: str
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in HYPOTHESIS_MODES:
            raise ConfigurationError(
                f"unknown filter mode {self.mode!r}; expected one of {HYPOTHESIS_MODES}"
            )
        if self.mode == "none":
            if self.alpha is not None:
                raise ConfigurationError("ungated variant takes no alpha")
        else:
            if self.alpha is None or not (0.0 < self.alpha < 1.0):
                raise ConfigurationError(
                    f"variant {self.mode!r} needs alpha in (0, 1), got {self.alpha}"
                )

    @property
    def label(self) -> str:
        return self.mode if self.alpha is None else f"{self.mode}@{self.alpha:g}"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs; see the scenario file for defaults."""

    network: FreewayNetwork
    schedule: DemandSchedule
    horizon: int
    particles: int
    loop_specs: tuple[LoopDetectorSpec, ...]
    gnss_spec: GnssSpec
    fault_config: FaultConfig
    variants: tuple[FilterVariant, ...]
    seeds: tuple[int, ...]
    resample_threshold: float = 0.5
    np_mass_normalized: bool = False
    h1_zero_std: float = 0.5
    mape_floor: float = 1e-4

    def __post_init__(self) -> None:
        if self.particles < 2:
            raise ConfigurationError("particle count must be at least 2")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be at least 1")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if not self.variants:
            raise ConfigurationError("at least one filter variant is required")
        if not (0.0 < self.resample_threshold <= 1.0):
            raise ConfigurationError("resample threshold must be in (0, 1]")
        if self.mape_floor <= 0.0:
            raise ConfigurationError("MAPE floor must be positive")


@dataclass(frozen=True)
class DecisionRecord:
    """A gate decision joined with the measurement's ground-truth label."""

    k: int
    sensor_id: str
    link: int
    test_kind: str
    statistic: float
    alpha: float
    rejected: bool
    auxiliary: float
    faulty: bool | None


@dataclass
class FilterRunResult:
    """Posterior-mean trajectory and gate decisions of one filter run.

    ``estimates`` has one row per assimilated step, k = 1 .. horizon - 1.
    """

    estimates: np.ndarray
    decisions: list[DecisionRecord]


def generate_measurements(
    truth: Trajectory,
    network: FreewayNetwork,
    loop_specs: Sequence[LoopDetectorSpec],
    gnss_spec: GnssSpec,
    fault_config: FaultConfig,
    rng: RandomSource,
) -> list[LabeledMeasurement]:
    """Measurement log for steps k = 1 .. horizon - 1 of a truth run.

    Loop detectors read the true densities; speed reports are sampled per
    vehicle from the realized link speeds, then fault-injected.  Separate
    streams keep the clean measurement values independent of the fault
    draws, so a zero-probability fault config reproduces the clean log
    bit for bit.
    """
    rng_loops = rng.derive(STREAM_LOOPS)
    rng_gnss = rng.derive(STREAM_GNSS)
    rng_faults = rng.derive(STREAM_FAULTS)
    measurements: list[LabeledMeasurement] = []
    for k in range(1, truth.horizon):
        measurements.extend(
            sample_loop_detectors(truth.states[k], loop_specs, rng_loops, k)
        )
        counts = vehicle_counts(truth.states[k], network)
        measurements.extend(
            sample_gnss_speeds(truth.speeds[k], counts, gnss_spec, rng_gnss, k)
        )
    return inject_faults(measurements, fault_config, rng_faults)


def run_traffic_filter(
    config: ExperimentConfig,
    measurements: Sequence[LabeledMeasurement],
    variant: FilterVariant,
    rng: RandomSource,
) -> FilterRunResult:
    """Run one gated filter over a measurement log.

    Per step: predict the ensemble through the traffic model, gate every
    reporting sensor against the predicted ensemble, assimilate the
    accepted measurements, record the posterior mean, and resample when the
    effective sample size falls below the configured fraction.
    """
    network, schedule = config.network, config.schedule
    init = equilibrium_state(network, schedule)
    ensemble = ParticleEnsemble.from_states(np.tile(init, (config.particles, 1)))
    dynamics = CtmDynamics(network, schedule)
    rng_demand = rng.derive(STREAM_FILTER_DEMAND)
    rng_resample = rng.derive(STREAM_FILTER_RESAMPLE)

    by_step: dict[int, list[LabeledMeasurement]] = defaultdict(list)
    for m in measurements:
        if not (1 <= m.k <= config.horizon - 1):
            raise DataError(
                f"measurement at step {m.k} outside assimilation window "
                f"[1, {config.horizon - 1}]"
            )
        by_step[m.k].append(m)

    n_steps = config.horizon - 1
    estimates = np.empty((n_steps, network.n_links))
    decisions: list[DecisionRecord] = []
    alpha = variant.alpha if variant.alpha is not None else 0.05

    for k in range(1, config.horizon):
        prior = predict(ensemble, dynamics.at(k - 1), rng_demand)
        step_measurements = by_step.get(k, [])
        if step_measurements:
            if any(m.kind == GNSS_SPEED for m in step_measurements):
                upstream_mean, ramp_means = schedule.means(k)
                field = speed_map(prior.particles, network, upstream_mean, ramp_means)
            else:
                field = None
            pairs = build_sensor_models(
                step_measurements,
                config.loop_specs,
                config.gnss_spec,
                config.fault_config,
                variant.mode,
                speed_lookup=lambda link: field[:, link],
                alpha=alpha,
                zero_std=config.h1_zero_std,
                np_mass_normalized=config.np_mass_normalized,
            )
            result = gated_update(prior, pairs)
            posterior = result.posterior
            tested = [
                m
                for m, (sensor, _) in zip(step_measurements, pairs)
                if sensor.test_kind != GateKind.NONE
            ]
            for m, decision in zip(tested, result.decisions):
                decisions.append(
                    DecisionRecord(
                        k=m.k,
                        sensor_id=m.sensor_id,
                        link=m.link,
                        test_kind=decision.test_kind.value,
                        statistic=decision.statistic,
                        alpha=decision.threshold,
                        rejected=decision.rejected_h0,
                        auxiliary=decision.auxiliary,
                        faulty=m.faulty,
                    )
                )
        else:
            posterior = prior
        estimates[k - 1] = posterior_mean(posterior)
        if effective_sample_size(posterior) < config.resample_threshold * config.particles:
            posterior = resample_systematic(posterior, rng_resample)
        ensemble = posterior
    return FilterRunResult(estimates=estimates, decisions=decisions)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def labeling_error_pct(self) -> float:
        if self.total == 0:
            return 0.0
        return 100.0 * (self.fp + self.fn) / self.total


def confusion_metrics(decisions: Sequence[DecisionRecord]) -> ConfusionCounts:
    """Score gate decisions against ground-truth labels.

    A positive is a rejection.  Every decision must carry a label.
    """
    tp = fp = tn = fn = 0
    for d in decisions:
        if d.faulty is None:
            raise DataError(f"decision for {d.sensor_id} at k={d.k} has no label")
        if d.rejected and d.faulty:
            tp += 1
        elif d.rejected and not d.faulty:
            fp += 1
        elif not d.rejected and d.faulty:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


@dataclass(frozen=True)
class TrajectoryPair:
    """True and estimated density trajectories on the same (step, link) grid."""

    true: np.ndarray
    estimated: np.ndarray

    def __post_init__(self) -> None:
        true = np.asarray(self.true, dtype=float)
        est = np.asarray(self.estimated, dtype=float)
        if true.shape != est.shape:
            raise ConfigurationError(
                f"trajectory shapes differ: {true.shape} vs {est.shape}"
            )
        object.__setattr__(self, "true", true)
        object.__setattr__(self, "estimated", est)


def mape(pair: TrajectoryPair, floor: float = 1e-4) -> float:
    """Mean absolute percentage error with a small denominator floor.

    The floor protects near-empty links; true densities are expected to sit
    well above it in any scored scenario.
    """
    if pair.true.size == 0:
        return float("nan")
    denom = np.maximum(pair.true, floor)
    return float(100.0 * np.mean(np.abs(pair.estimated - pair.true) / denom))


@dataclass(frozen=True)
class RunMetrics:
    """Metrics of one (variant, alpha, seed) filter run."""

    mode: str
    alpha: float | None
    seed: int
    tp: int
    fp: int
    tn: int
    fn: int
    labeling_error_pct: float
    mape_pct: float
    collapsed: bool = False


@dataclass
class MetricsReport:
    """Per-run metrics plus aggregation across seeds."""

    runs: list[RunMetrics]

    def variant_keys(self) -> list[tuple[str, float | None]]:
        seen: list[tuple[str, float | None]] = []
        for run in self.runs:
            key = (run.mode, run.alpha)
            if key not in seen:
                seen.append(key)
        return seen

    def select(self, mode: str, alpha: float | None = None) -> list[RunMetrics]:
        return sorted(
            (r for r in self.runs if r.mode == mode and _alpha_eq(r.alpha, alpha)),
            key=lambda r: r.seed,
        )

    def values(self, mode: str, alpha: float | None, attr: str) -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.select(mode, alpha)], dtype=float)

    def median(self, mode: str, alpha: float | None, attr: str) -> float:
        return float(np.median(self.values(mode, alpha, attr)))

    def aggregate(self) -> dict[tuple[str, float | None], dict[str, tuple[float, float]]]:
        """Mean and sample std of each metric across seeds, per variant."""
        out: dict[tuple[str, float | None], dict[str, tuple[float, float]]] = {}
        for mode, alpha in self.variant_keys():
            stats: dict[str, tuple[float, float]] = {}
            for _, attr in METRIC_FIELDS:
                vals = self.values(mode, alpha, attr)
                mean = float(np.mean(vals))
                std = 0.0 if len(vals) < 2 else float(np.std(vals, ddof=1))
                stats[attr] = (mean, std)
            out[(mode, alpha)] = stats
        return out


def _alpha_eq(a: float | None, b: float | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return abs(a - b) <= 1e-15


RunSink = Callable[[int, Trajectory, Sequence[LabeledMeasurement], FilterVariant, FilterRunResult], None]


def run_experiment(config: ExperimentConfig, on_run: RunSink | None = None) -> MetricsReport:
    """Full study: per seed, simulate truth once and run every variant on it.

    A weight collapse in one variant is recorded (all-NaN metrics,
    ``collapsed`` set) and the remaining variants still run.  ``on_run``
    receives each finished run, e.g. for writing artifacts.
    """
    runs: list[RunMetrics] = []
    for seed in config.seeds:
        base = RandomSource(seed)
        truth = simulate(
            config.network, config.schedule, config.horizon, base.derive(STREAM_TRUTH)
        )
        measurements = generate_measurements(
            truth,
            config.network,
            config.loop_specs,
            config.gnss_spec,
            config.fault_config,
            base,
        )
        true_slice = truth.states[1 : config.horizon]
        for variant in config.variants:
            try:
                result = run_traffic_filter(config, measurements, variant, base)
            except WeightCollapseError:
                runs.append(
                    RunMetrics(
                        mode=variant.mode,
                        alpha=variant.alpha,
                        seed=seed,
                        tp=0,
                        fp=0,
                        tn=0,
                        fn=0,
                        labeling_error_pct=float("nan"),
                        mape_pct=float("nan"),
                        collapsed=True,
                    )
                )
                continue
            counts = confusion_metrics(result.decisions)
            error = mape(
                TrajectoryPair(true_slice, result.estimates), floor=config.mape_floor
            )
            runs.append(
                RunMetrics(
                    mode=variant.mode,
                    alpha=variant.alpha,
                    seed=seed,
                    tp=counts.tp,
                    fp=counts.fp,
                    tn=counts.tn,
                    fn=counts.fn,
                    labeling_error_pct=counts.labeling_error_pct,
                    mape_pct=error,
                )
            )
            if on_run is not None:
                on_run(seed, truth, measurements, variant, result)
    return MetricsReport(runs=runs)


def sweep_alpha(
    config: ExperimentConfig, alphas: Sequence[float], on_run: RunSink | None = None
) -> MetricsReport:
    """Expand every gated variant across the level list and run once.

    Truth and measurements are simulated once per seed inside
    :func:`run_experiment`, so all level columns of a seed are paired on
    bit-identical ground truth.
    """
    expanded: list[FilterVariant] = []
    for variant in config.variants:
        if variant.mode == "none":
            expanded.append(variant)
        else:
            for alpha in alphas:
                expanded.append(FilterVariant(mode=variant.mode, alpha=float(alpha)))
    deduped: list[FilterVariant] = []
    for v in expanded:
        if v not in deduped:
            deduped.append(v)
    return run_experiment(replace(config, variants=tuple(deduped)), on_run=on_run)


def write_decision_log(path: str | Path, decisions: Sequence[DecisionRecord]) -> None:
    from .fileio import atomic_write_text
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(DECISION_COLUMNS)
    for d in decisions:
        writer.writerow(
            [
                d.k,
                d.sensor_id,
                d.link,
                d.test_kind,
                repr(d.statistic),
                repr(d.alpha),
                int(d.rejected),
                repr(d.auxiliary),
                "" if d.faulty is None else int(d.faulty),
            ]
        )
    atomic_write_text(path, buf.getvalue())


def read_decision_log(path: str | Path) -> list[DecisionRecord]:
    path = Path(path)
    out: list[DecisionRecord] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DECISION_COLUMNS:
            raise DataError(f"{path}: unexpected decision log header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(
                    DecisionRecord(
                        k=int(row[0]),
                        sensor_id=row[1],
                        link=int(row[2]),
                        test_kind=row[3],
                        statistic=float(row[4]),
                        alpha=float(row[5]),
                        rejected=bool(int(row[6])),
                        auxiliary=float(row[7]),
                        faulty=None if row[8] == "" else bool(int(row[8])),
                    )
                )
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out


def metrics_wide_text(report: MetricsReport, alphas: Sequence[float]) -> str:
    """Tables-style wide text: metric rows, one column per level, cells mean±std."""
    aggregate = report.aggregate()
    gated_modes: list[str] = []
    for mode, alpha in report.variant_keys():
        if alpha is not None and mode not in gated_modes:
            gated_modes.append(mode)
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["variant", "metric"] + [f"alpha={a:g}" for a in alphas])
    for mode in gated_modes:
        for metric_name, attr in METRIC_FIELDS:
            row = [mode, metric_name]
            for alpha in alphas:
                stats = aggregate.get((mode, float(alpha)))
                if stats is None:
                    row.append("")
                else:
                    mean, std = stats[attr]
                    row.append(f"{mean!r}±{std!r}")
            writer.writerow(row)
    return buf.getvalue()


def metrics_long_text(report: MetricsReport) -> str:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["mode", "alpha", "seed", "tp", "fp", "tn", "fn", "labeling_error_pct", "mape_pct", "collapsed"]
    )
    for r in report.runs:
        writer.writerow(
            [
                r.mode,
                "" if r.alpha is None else repr(r.alpha),
                r.seed,
                r.tp,
                r.fp,
                r.tn,
                r.fn,
                repr(r.labeling_error_pct),
                repr(r.mape_pct),
                int(r.collapsed),
            ]
        )
    return buf.getvalue()


def read_metrics_long(path: str | Path) -> MetricsReport:
    path = Path(path)
    runs: list[RunMetrics] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                runs.append(
                    RunMetrics(
                        mode=row["mode"],
                        alpha=None if row["alpha"] == "" else float(row["alpha"]),
                        seed=int(row["seed"]),
                        tp=int(row["tp"]),
                        fp=int(row["fp"]),
                        tn=int(row["tn"]),
                        fn=int(row["fn"]),
                        labeling_error_pct=float(row["labeling_error_pct"]),
                        mape_pct=float(row["mape_pct"]),
                        collapsed=bool(int(row["collapsed"])),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}: malformed metrics row {row!r}: {exc}") from exc
    return MetricsReport(runs=runs)

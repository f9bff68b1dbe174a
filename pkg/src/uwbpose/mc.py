"""Monte-Carlo harness: sweeps, RMSE-versus-bound tables, stress tests.

Trials are independent work items. Every trial draws its noise from a
counter-based generator keyed by (seed, axis index, trial index), and
aggregation is by trial index, so results are bit-identical for a fixed
seed regardless of run order or parallelism degree. Wall-clock timings are
the one exception; they are reported but inherently nondeterministic.
"""

from __future__ import annotations

import csv
import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    Deployment,
    Method,
    Pose2,
    RangeBatch,
    check_observability,
    predicted_ranges,
)
from .crlb import constrained_crlb, fisher_info
from .errors import EstimationError, UnobservableDeploymentError
from .estimators import ESTIMATORS
from .preprocess import REJECTION_BOUND_M, flag_stream, interpolate_flagged


class SweepAxis(str, enum.Enum):
    """What a sweep varies: ranging repetitions, anchor count, or noise level."""

    REPEAT_T = "repeat_t"
    ANCHOR_COUNT = "anchor_count"
    NOISE_SIGMA = "noise_sigma"


@dataclass(frozen=True)
class McConfig:
    """Scenario definition for a sweep.

    ``axis_values`` must be positive and increasing. For anchor-count sweeps
    new anchors are placed uniformly on ``anchor_rect`` and the deployment's
    sigma and dh must be uniform so they extend to the new anchors.
    ``noise_scale`` multiplies the synthesized noise only; estimators keep
    using the deployment's configured sigma (0 gives noiseless batches).
    """

    deployment: Deployment
    true_pose: Pose2
    axis: SweepAxis
    axis_values: tuple
    trials: int
    seed: int
    estimators: tuple[Method, ...] = (Method.ULS, Method.GN_ULS, Method.DAC, Method.GN_DAC)
    repeat_t: int = 1
    anchor_rect: tuple = ((0.0, 0.0), (50.0, 50.0))
    noise_scale: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "axis", SweepAxis(self.axis))
        object.__setattr__(
            self, "estimators", tuple(Method(e) for e in self.estimators)
        )
        values = tuple(float(v) for v in self.axis_values)
        if len(values) == 0 or any(v <= 0 for v in values):
            raise ValueError("axis values must be positive")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("axis values must be strictly increasing")
        object.__setattr__(self, "axis_values", values)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


@dataclass(frozen=True)
class McRow:
    """One aggregated result line for an (axis value, estimator) pair."""

    axis_value: float
    estimator: str
    rotation_rmse: float
    translation_rmse: float
    combined_rmse: float
    sqrt_crlb: float
    mean_time_s: float
    failures: int
    trials: int


@dataclass
class McResult:
    """Sweep output rows plus provenance metadata."""

    rows: list[McRow]
    metadata: dict


def _trial_rng(seed: int, axis_index: int, trial: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(axis_index, trial))
    return np.random.Generator(np.random.Philox(seq))


def synthesize_ranges(
    deployment: Deployment,
    pose: Pose2,
    repeat_t: int,
    rng: np.random.Generator,
    noise_scale: float = 1.0,
) -> np.ndarray:
    """Draw (N, M, T) range measurements with independent Gaussian noise."""
    clean = predicted_ranges(deployment, pose)
    shape = (deployment.num_tags, deployment.num_anchors, repeat_t)
    noise = rng.standard_normal(shape)
    return clean[:, :, np.newaxis] + noise_scale * deployment.sigma[:, :, np.newaxis] * noise


def _axis_setup(config: McConfig, axis_index: int) -> tuple[Deployment, int]:
    """Deployment and repetition count effective at one axis value."""
    value = config.axis_values[axis_index]
    if config.axis is SweepAxis.REPEAT_T:
        return config.deployment, int(round(value))
    if config.axis is SweepAxis.NOISE_SIGMA:
        dep = config.deployment
        return (
            Deployment(anchors=dep.anchors, tags=dep.tags, sigma=float(value), dh=dep.dh),
            config.repeat_t,
        )
    # ANCHOR_COUNT: uniform sigma/dh extend to the generated anchors.
    dep = config.deployment
    target = int(round(value))
    if target < 3:
        raise ValueError("anchor-count sweep values must be >= 3")
    if np.ptp(dep.sigma) != 0.0 or np.ptp(dep.dh) != 0.0:
        raise ValueError("anchor-count sweeps require uniform sigma and dh")
    if target <= dep.num_anchors:
        anchors = dep.anchors[:target]
    else:
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=int(config.seed), spawn_key=(axis_index,)))
        )
        (x0, y0), (x1, y1) = config.anchor_rect
        extra = rng.random((target - dep.num_anchors, 2))
        extra = np.array([x0, y0]) + extra * np.array([x1 - x0, y1 - y0])
        anchors = np.vstack([dep.anchors, extra])
    return (
        Deployment(
            anchors=anchors,
            tags=dep.tags,
            sigma=float(dep.sigma.flat[0]),
            dh=float(dep.dh.flat[0]),
        ),
        config.repeat_t,
    )


def _run_axis(
    config: McConfig,
    axis_index: int,
    threads: int,
    labels: list[str],
    make_batches,
) -> list[McRow]:
    """Run all trials at one axis value and aggregate per estimator label.

    ``make_batches(dep, t, trial, rng)`` returns the list of (label, batch)
    pairs to estimate in one trial.
    """
    dep, t_eff = _axis_setup(config, axis_index)
    bound = constrained_crlb(
        fisher_info(dep, t_eff, config.true_pose), config.true_pose
    ).sqrt_trace

    n_lab = len(labels)
    trials = config.trials
    rot_sq = np.full((n_lab, trials), np.nan)
    trans_sq = np.full((n_lab, trials), np.nan)
    times = np.full((n_lab, trials), np.nan)
    failed = np.zeros((n_lab, trials), dtype=bool)
    rot_true = config.true_pose.rotation
    t_true = config.true_pose.t

    # The per-trial work differs between plain sweeps and stress runs, so the
    # batch construction is injected; estimation and bookkeeping live here.
    def run_trial(trial: int) -> None:
        rng = _trial_rng(config.seed, axis_index, trial)
        for prefix, batch in make_batches(dep, t_eff, trial, rng):
            for method in config.estimators:
                label = method.value + prefix
                row = labels.index(label)
                start = time.perf_counter()
                try:
                    report = ESTIMATORS[method](batch)
                except EstimationError:
                    failed[row, trial] = True
                    continue
                times[row, trial] = time.perf_counter() - start
                diff_r = report.pose.rotation - rot_true
                rot_sq[row, trial] = float(np.sum(diff_r * diff_r))
                trans_sq[row, trial] = float(np.sum((report.pose.t - t_true) ** 2))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_trial, range(trials)))
    else:
        for trial in range(trials):
            run_trial(trial)

    rows = []
    for row, label in enumerate(labels):
        ok = ~failed[row]
        count = int(ok.sum())
        if count:
            rot = float(np.sqrt(np.sum(rot_sq[row][ok]) / count))
            trans = float(np.sqrt(np.sum(trans_sq[row][ok]) / count))
            combined = float(np.hypot(rot, trans))
            mean_time = float(np.sum(times[row][ok]) / count)
        else:
            rot = trans = combined = mean_time = float("nan")
        rows.append(
            McRow(
                axis_value=config.axis_values[axis_index],
                estimator=label,
                rotation_rmse=rot,
                translation_rmse=trans,
                combined_rmse=combined,
                sqrt_crlb=bound,
                mean_time_s=mean_time,
                failures=int(failed[row].sum()),
                trials=trials,
            )
        )
    return rows


def _base_metadata(config: McConfig) -> dict:
    meta = dict(config.metadata)
    meta.update(
        {
            "axis": config.axis.value,
            "trials": str(config.trials),
            "seed": str(config.seed),
            "combined_rmse": "sqrt(rotation_rmse^2 + translation_rmse^2), comparable to sqrt_crlb",
        }
    )
    return meta


def run_sweep(config: McConfig, threads: int = 1) -> McResult:
    """Synthesize, estimate, and aggregate over every axis value.

    Refuses unobservable deployments before running any trial. Per-trial
    estimator failures are recorded, excluded from the RMSE, and reported in
    the ``failures`` column.
    """
    verdict = check_observability(config.deployment)
    if not verdict:
        raise UnobservableDeploymentError(verdict.reason)

    labels = [m.value for m in config.estimators]

    def make_batches(dep, t_eff, trial, rng):
        d = synthesize_ranges(dep, config.true_pose, t_eff, rng, config.noise_scale)
        return [("", RangeBatch(dep, t_eff, d))]

    rows = []
    for axis_index in range(len(config.axis_values)):
        rows.extend(_run_axis(config, axis_index, threads, labels, make_batches))
    return McResult(rows=rows, metadata=_base_metadata(config))


def run_outlier_stress(
    config: McConfig,
    spike: float,
    rate: float,
    threads: int = 1,
    window: int = 5,
    v_max: float = 0.5,
    freq_hz: float = 100.0,
) -> McResult:
    """Sweep with positive range spikes injected at the given rate.

    Every estimator runs twice per trial: on the spiked batch directly and
    after the sliding-window rejection filter (rows labelled ``+filter``).
    The filter treats each (tag, anchor) repetition stream as a time series
    at ``freq_hz``.
    """
    if not 0.0 <= rate <= 0.2:
        raise ValueError("outlier rate must be in [0, 0.2]")
    if spike < 0.0:
        raise ValueError("spike must be nonnegative")
    verdict = check_observability(config.deployment)
    if not verdict:
        raise UnobservableDeploymentError(verdict.reason)

    labels = [m.value for m in config.estimators]
    labels += [m.value + "+filter" for m in config.estimators]
    slack = window * v_max / freq_hz + REJECTION_BOUND_M

    def make_batches(dep, t_eff, trial, rng):
        d = synthesize_ranges(dep, config.true_pose, t_eff, rng, config.noise_scale)
        spiked = d + spike * (rng.random(d.shape) < rate)
        stamps = np.arange(t_eff) / freq_hz
        filtered = spiked.copy()
        for i in range(dep.num_tags):
            for m in range(dep.num_anchors):
                flags = flag_stream(filtered[i, m], window, slack)
                if flags.any():
                    filtered[i, m] = interpolate_flagged(stamps, filtered[i, m], flags)
        return [
            ("", RangeBatch(dep, t_eff, spiked)),
            ("+filter", RangeBatch(dep, t_eff, filtered)),
        ]

    rows = []
    for axis_index in range(len(config.axis_values)):
        rows.extend(_run_axis(config, axis_index, threads, labels, make_batches))
    meta = _base_metadata(config)
    meta.update({"spike_m": repr(float(spike)), "spike_rate": repr(float(rate))})
    return McResult(rows=rows, metadata=meta)


CSV_HEADER = [
    "axis_value",
    "estimator",
    "rotation_rmse",
    "translation_rmse",
    "combined_rmse",
    "sqrt_crlb",
    "mean_time_s",
    "failures",
    "trials",
]


def write_csv(result: McResult, stream, include_timing: bool = True) -> None:
    """Write rows as RFC-4180 CSV (header, CRLF, '.' decimal, UTF-8).

    With ``include_timing`` off the nondeterministic wall-time column is
    left empty so that equal seeds produce byte-identical files.
    """
    writer = csv.writer(stream)
    writer.writerow(CSV_HEADER)
    for row in result.rows:
        writer.writerow(
            [
                repr(row.axis_value),
                row.estimator,
                repr(row.rotation_rmse),
                repr(row.translation_rmse),
                repr(row.combined_rmse),
                repr(row.sqrt_crlb),
                repr(row.mean_time_s) if include_timing else "",
                row.failures,
                row.trials,
            ]
        )

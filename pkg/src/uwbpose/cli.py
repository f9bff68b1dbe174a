"""Command-line front end: simulate, crlb, estimate, calibrate.

Every command is deterministic given its inputs, seed, and flags, and no
command leaves a partial output file behind on failure (outputs are written
to a temporary file and renamed on success). Exit codes: 0 success, 1
runtime failure, 2 malformed input, 3 unobservable deployment.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import math
import os
import sys
import tempfile

import numpy as np

from . import mc
from .core import Method, check_observability, wrap_angle
from .crlb import constrained_crlb, fisher_info
from .errors import EstimationError, SchemaError, UnobservableDeploymentError
from .estimators import ESTIMATORS
from .gnrefine import gn_step
from .preprocess import (
    BiasModel,
    EpochPolicy,
    GroundTruthLog,
    NamedDeployment,
    RangeLog,
    align_and_batch,
    calibrate_bias,
    reject_outliers,
)
from .scenario import load_scenario

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_SCHEMA = 2
EXIT_UNOBSERVABLE = 3


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    if scenario.config is None:
        raise SchemaError(f"{args.scenario}: scenario has no sweep section")
    config = scenario.config
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if overrides:
        try:
            config = dataclasses.replace(config, **overrides)
        except ValueError as exc:
            raise SchemaError(str(exc)) from exc

    result = mc.run_sweep(config, threads=args.threads)

    buffer = io.StringIO()
    mc.write_csv(result, buffer, include_timing=args.timing)
    _atomic_write_text(args.out, buffer.getvalue())

    print(f"wrote {len(result.rows)} rows to {args.out}")
    for key, value in sorted(result.metadata.items()):
        print(f"# {key}: {value}")
    header = f"{'axis':>12} {'estimator':>12} {'combined_rmse':>14} {'sqrt_crlb':>12} {'ratio':>8} {'ms':>8} {'fail':>5}"
    print(header)
    for row in result.rows:
        ratio = row.combined_rmse / row.sqrt_crlb if row.sqrt_crlb > 0 else float("nan")
        ms = row.mean_time_s * 1e3 if np.isfinite(row.mean_time_s) else float("nan")
        print(
            f"{row.axis_value:>12g} {row.estimator:>12} {row.combined_rmse:>14.6g} "
            f"{row.sqrt_crlb:>12.6g} {ratio:>8.3f} {ms:>8.3f} {row.failures:>5d}"
        )
    return EXIT_OK


def _cmd_crlb(args) -> int:
    scenario = load_scenario(args.scenario)
    verdict = check_observability(scenario.deployment)
    if not verdict:
        print(f"verdict: not observable ({verdict.reason})", file=sys.stderr)
        return EXIT_UNOBSERVABLE
    repeat_t = args.repeat_t if args.repeat_t is not None else scenario.repeat_t
    result = constrained_crlb(
        fisher_info(scenario.deployment, repeat_t, scenario.true_pose),
        scenario.true_pose,
    )
    print("verdict: observable")
    print(f"repeat_t: {repeat_t}")
    print(f"sqrt_trace_crlb: {result.sqrt_trace!r}")
    print(f"rotation_block_trace: {result.rotation_block_trace!r}")
    print(f"translation_block_trace: {result.translation_block_trace!r}")
    return EXIT_OK


def _load_ranges(args) -> RangeLog:
    log = RangeLog.from_csv(args.ranges, frequency=args.freq)
    cleaned, mask = reject_outliers(log, window=args.window, v_max=args.vmax)
    if mask.any():
        print(f"rejected {int(mask.sum())} outlier samples", file=sys.stderr)
    return cleaned


def _cmd_estimate(args) -> int:
    named = NamedDeployment.from_json(args.deployment)
    verdict = check_observability(named.deployment)
    if not verdict:
        print(f"deployment not observable: {verdict.reason}", file=sys.stderr)
        return EXIT_UNOBSERVABLE
    log = _load_ranges(args)
    bias = BiasModel.from_json_file(args.bias) if args.bias else BiasModel.identity()
    policy = EpochPolicy(rate_hz=args.rate, max_gap_periods=args.max_gap)
    batches = align_and_batch(log, bias, named, policy)
    method = Method(args.method)

    extra_gn = args.gn_iterations - 1 if method in (Method.GN_ULS, Method.GN_DAC) else 0
    epoch_rows = []
    estimates = []
    for epoch_time, batch in batches:
        try:
            report = ESTIMATORS[method](batch)
            pose = report.pose
            for _ in range(extra_gn):
                pose = gn_step(batch, pose)
        except EstimationError as exc:
            epoch_rows.append([repr(epoch_time), "", "", "", method.value, f"error:{type(exc).__name__}"])
            continue
        yaw_deg = math.degrees(wrap_angle(pose.theta + math.radians(args.yaw_offset_deg)))
        epoch_rows.append(
            [
                repr(float(epoch_time)),
                repr(float(pose.t[0])),
                repr(float(pose.t[1])),
                repr(float(yaw_deg)),
                method.value,
                "ok",
            ]
        )
        estimates.append((epoch_time, pose, yaw_deg))

    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["t", "x", "y", "yaw_deg", "method", "status"])
    writer.writerows(epoch_rows)
    _atomic_write_text(args.out, buffer.getvalue())
    print(f"wrote {len(epoch_rows)} epochs to {args.out} ({len(estimates)} ok)")

    if args.truth:
        truth = GroundTruthLog.from_csv(args.truth)
        inside = [
            (t, pose, yaw)
            for t, pose, yaw in estimates
            if truth.t[0] <= t <= truth.t[-1]
        ]
        if not inside:
            print("no epochs overlap the ground-truth span", file=sys.stderr)
            return EXIT_RUNTIME
        times = np.array([t for t, _, _ in inside])
        positions, yaws = truth.interpolate(times)
        est_xy = np.array([pose.t for _, pose, _ in inside])
        est_yaw = np.array([math.radians(y) for _, _, y in inside])
        yaw_err = np.degrees(np.arctan2(np.sin(est_yaw - yaws), np.cos(est_yaw - yaws)))
        pos_rmse_cm = float(np.sqrt(np.mean(np.sum((est_xy - positions) ** 2, axis=1)))) * 100.0
        rot_rmse_deg = float(np.sqrt(np.mean(yaw_err**2)))
        print("method  position_rmse_cm  rotation_rmse_deg")
        print(f"{method.value:>6}  {pos_rmse_cm:>16.3f}  {rot_rmse_deg:>17.3f}")
        summary = io.StringIO()
        writer = csv.writer(summary)
        writer.writerow(["method", "position_rmse_cm", "rotation_rmse_deg"])
        writer.writerow([method.value, repr(pos_rmse_cm), repr(rot_rmse_deg)])
        _atomic_write_text(args.out + ".summary.csv", summary.getvalue())
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    named = NamedDeployment.from_json(args.deployment)
    log = _load_ranges(args)
    truth = GroundTruthLog.from_csv(args.truth)
    model = calibrate_bias(log, truth, named)
    _atomic_write_text(args.out, model.to_json() + "\n")
    print(f"alpha: {model.alpha:.9g}")
    print(f"beta: {model.beta:.9g}")
    print(f"sigma: {model.sigma:.9g}")
    print(f"residual_rms: {model.residual_rms:.9g}")
    print(f"wrote model to {args.out}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwbpose",
        description="Planar pose estimation from anchor-to-tag range measurements",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte-Carlo sweep from a scenario file")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--trials", type=int, default=None, help="override the scenario trial count")
    sim.add_argument(
        "--timing",
        action="store_true",
        help="include wall times in the CSV (nondeterministic column)",
    )
    sim.set_defaults(func=_cmd_simulate)

    crlb_p = sub.add_parser("crlb", help="print the lower bound for a scenario")
    crlb_p.add_argument("--scenario", required=True)
    crlb_p.add_argument("--repeat-t", dest="repeat_t", type=int, default=None)
    crlb_p.set_defaults(func=_cmd_crlb)

    est = sub.add_parser("estimate", help="estimate poses from a range log")
    est.add_argument("--ranges", required=True)
    est.add_argument("--deployment", required=True)
    est.add_argument("--out", required=True)
    est.add_argument("--truth", default=None)
    est.add_argument("--method", choices=[m.value for m in Method], default=Method.GN_ULS.value)
    est.add_argument("--bias", default=None, help="bias model file from the calibrate command")
    est.add_argument("--yaw-offset-deg", type=float, default=0.0)
    est.add_argument("--freq", type=float, default=100.0, help="ranging frequency in Hz")
    est.add_argument("--rate", type=float, default=None, help="estimation rate in Hz")
    est.add_argument("--max-gap", type=float, default=3.0, help="drop epochs with gaps beyond this many periods")
    est.add_argument("--vmax", type=float, default=1.0, help="velocity bound for outlier rejection, m/s")
    est.add_argument("--window", type=int, default=5, help="outlier rejection window length")
    est.add_argument(
        "--gn-iterations",
        type=int,
        default=1,
        help="diagnostic only: extra Gauss-Newton iterations for gn methods",
    )
    est.set_defaults(func=_cmd_estimate)

    cal = sub.add_parser("calibrate", help="fit the linear range-bias model")
    cal.add_argument("--ranges", required=True)
    cal.add_argument("--truth", required=True)
    cal.add_argument("--deployment", required=True)
    cal.add_argument("--out", required=True)
    cal.add_argument("--freq", type=float, default=100.0)
    cal.add_argument("--vmax", type=float, default=1.0)
    cal.add_argument("--window", type=int, default=5)
    cal.set_defaults(func=_cmd_calibrate)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except UnobservableDeploymentError as exc:
        print(f"error: deployment not observable: {exc}", file=sys.stderr)
        return EXIT_UNOBSERVABLE
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

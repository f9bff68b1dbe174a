"""Real-measurement pipeline: outlier rejection, calibration, batching.

Raw range logs carry (timestamp, anchor id, tag id, range) records at a
nominal frequency. The pipeline rejects spikes with a causal sliding-window
rule, fits a linear distance-dependent bias against ground truth, estimates
the noise level from quiescent data, and finally aligns the de-biased
streams into per-epoch batches ready for the estimators.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Deployment, RangeBatch
from .errors import InsufficientDataError, SchemaError

# Additive term of the rejection rule, a generic UWB error bound in meters.
REJECTION_BOUND_M = 0.1


def flag_stream(values: np.ndarray, window: int, slack: float) -> np.ndarray:
    """Causal spike flags for one measurement stream.

    Sample ``t`` is flagged when it exceeds the minimum of the previous
    ``window`` raw samples by more than ``slack``. The first ``window``
    samples are never flagged.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    flags = np.zeros(n, dtype=bool)
    if n <= window:
        return flags
    windows = np.lib.stride_tricks.sliding_window_view(values, window)
    prev_min = windows[: n - window].min(axis=1)
    flags[window:] = values[window:] > prev_min + slack
    return flags


def interpolate_flagged(times: np.ndarray, values: np.ndarray, flags: np.ndarray) -> np.ndarray:
    """Replace flagged samples by linear interpolation between unflagged neighbors."""
    good = ~flags
    if not flags.any() or not good.any():
        return np.array(values, dtype=float)
    out = np.array(values, dtype=float)
    out[flags] = np.interp(times[flags], times[good], values[good])
    return out


@dataclass(frozen=True)
class RangeLog:
    """Flat record arrays of raw ranging data plus the nominal frequency.

    Timestamps must be non-decreasing within each (anchor, tag) stream.
    ``dropped_negative`` counts records rejected at ingestion.
    """

    t: np.ndarray
    anchor: tuple[str, ...]
    tag: tuple[str, ...]
    range_m: np.ndarray
    frequency: float
    dropped_negative: int = 0

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        r = np.asarray(self.range_m, dtype=float)
        if not (len(t) == len(self.anchor) == len(self.tag) == len(r)):
            raise ValueError("log columns must have equal length")
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")
        if len(r) and (not np.all(np.isfinite(r)) or np.any(r < 0)):
            raise ValueError("ranges must be finite and nonnegative")
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "range_m", r)
        object.__setattr__(self, "anchor", tuple(self.anchor))
        object.__setattr__(self, "tag", tuple(self.tag))
        for key, indices in self.streams().items():
            ts = t[indices]
            if np.any(np.diff(ts) < 0):
                raise SchemaError(f"timestamps decrease within stream {key}")

    def __len__(self) -> int:
        return len(self.t)

    def streams(self) -> dict[tuple[str, str], np.ndarray]:
        """Indices of each (anchor, tag) stream, in record order."""
        groups: dict[tuple[str, str], list[int]] = {}
        for idx, key in enumerate(zip(self.anchor, self.tag)):
            groups.setdefault(key, []).append(idx)
        return {key: np.asarray(idx, dtype=int) for key, idx in groups.items()}

    @classmethod
    def from_csv(cls, path, frequency: float) -> "RangeLog":
        """Load ``t,anchor,tag,range`` CSV; negative ranges are dropped."""
        rows = _read_csv_rows(path, ["t", "anchor", "tag", "range"])
        t, anchor, tag, rng = [], [], [], []
        dropped = 0
        for line_no, row in rows:
            try:
                ti, ri = float(row["t"]), float(row["range"])
            except ValueError as exc:
                raise SchemaError(f"{path}:{line_no}: non-numeric field") from exc
            if not (math.isfinite(ti) and math.isfinite(ri)):
                raise SchemaError(f"{path}:{line_no}: non-finite field")
            if ri < 0:
                dropped += 1
                continue
            t.append(ti)
            anchor.append(row["anchor"])
            tag.append(row["tag"])
            rng.append(ri)
        return cls(
            t=np.asarray(t), anchor=tuple(anchor), tag=tuple(tag),
            range_m=np.asarray(rng), frequency=frequency, dropped_negative=dropped,
        )


@dataclass(frozen=True)
class GroundTruthLog:
    """Timestamped reference poses; yaw stored in radians."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    yaw: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if np.any(np.diff(t) <= 0):
            raise SchemaError("ground-truth timestamps must be strictly increasing")
        for name in ("t", "x", "y", "yaw"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_csv(cls, path) -> "GroundTruthLog":
        """Load ``t,x,y,yaw_deg`` CSV."""
        rows = _read_csv_rows(path, ["t", "x", "y", "yaw_deg"])
        data = []
        for line_no, row in rows:
            try:
                data.append([float(row[k]) for k in ("t", "x", "y", "yaw_deg")])
            except ValueError as exc:
                raise SchemaError(f"{path}:{line_no}: non-numeric field") from exc
        arr = np.asarray(data, dtype=float).reshape(-1, 4)
        return cls(t=arr[:, 0], x=arr[:, 1], y=arr[:, 2], yaw=np.deg2rad(arr[:, 3]))

    def interpolate(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Positions (K, 2) and yaws (K,) at the requested times.

        Yaw is unwrapped before interpolation so crossings of the angle cut
        do not corrupt intermediate values. Times outside the logged span
        are the caller's responsibility to mask.
        """
        times = np.asarray(times, dtype=float)
        xs = np.interp(times, self.t, self.x)
        ys = np.interp(times, self.t, self.y)
        yaw = np.interp(times, self.t, np.unwrap(self.yaw))
        return np.column_stack([xs, ys]), yaw


def _read_csv_rows(path, expected_header: list[str]):
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header required") from None
        if header != expected_header:
            raise SchemaError(f"{path}: header must be {','.join(expected_header)}")
        out = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise SchemaError(f"{path}:{line_no}: expected {len(expected_header)} fields")
            out.append((line_no, dict(zip(expected_header, row))))
    return out


@dataclass(frozen=True)
class NamedDeployment:
    """Deployment whose anchors and tags carry the string ids used in logs."""

    deployment: Deployment
    anchor_ids: tuple[str, ...]
    tag_ids: tuple[str, ...]

    def __post_init__(self):
        if len(self.anchor_ids) != self.deployment.num_anchors:
            raise ValueError("one id per anchor required")
        if len(self.tag_ids) != self.deployment.num_tags:
            raise ValueError("one id per tag required")
        object.__setattr__(self, "anchor_ids", tuple(self.anchor_ids))
        object.__setattr__(self, "tag_ids", tuple(self.tag_ids))

    def anchor_index(self, anchor_id: str) -> int:
        try:
            return self.anchor_ids.index(anchor_id)
        except ValueError:
            raise SchemaError(f"unknown anchor id {anchor_id!r}") from None

    def tag_index(self, tag_id: str) -> int:
        try:
            return self.tag_ids.index(tag_id)
        except ValueError:
            raise SchemaError(f"unknown tag id {tag_id!r}") from None

    @classmethod
    def from_json(cls, path) -> "NamedDeployment":
        """Load ``{"anchors": {id: [x, y]}, "tags": {...}, "sigma": ..., "dh": ...}``."""
        try:
            with open(path, encoding="utf-8") as handle:
                raw = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read deployment {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise SchemaError(f"{path}: deployment must be a JSON object")
        unknown = set(raw) - {"anchors", "tags", "sigma", "dh"}
        if unknown:
            raise SchemaError(f"{path}: unknown keys {sorted(unknown)}")
        for key in ("anchors", "tags"):
            if key not in raw or not isinstance(raw[key], dict) or not raw[key]:
                raise SchemaError(f"{path}: {key!r} must be a non-empty object")
        anchor_ids = tuple(raw["anchors"])
        tag_ids = tuple(raw["tags"])
        try:
            deployment = Deployment(
                anchors=[raw["anchors"][a] for a in anchor_ids],
                tags=[raw["tags"][t] for t in tag_ids],
                sigma=raw.get("sigma", 1.0),
                dh=raw.get("dh", 0.0),
            )
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"{path}: {exc}") from exc
        return cls(deployment=deployment, anchor_ids=anchor_ids, tag_ids=tag_ids)


@dataclass(frozen=True)
class BiasModel:
    """Linear range-bias model ``measured = true * (1 + alpha) + beta + noise``.

    ``sigma`` is the estimated noise standard deviation; ``per_pair`` holds
    optional (anchor id, tag id) specific coefficients that override the
    pooled pair.
    """

    alpha: float
    beta: float
    sigma: float
    residual_rms: float = 0.0
    per_pair: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def identity(cls, sigma: float = 1.0) -> "BiasModel":
        """No-op model: de-biasing returns ranges unchanged."""
        return cls(alpha=0.0, beta=0.0, sigma=sigma)

    def coefficients(self, key: tuple[str, str] | None = None) -> tuple[float, float]:
        if key is not None and key in self.per_pair:
            return self.per_pair[key]
        return self.alpha, self.beta

    def apply(self, true_range, key=None):
        """Map true ranges to expected measured ranges."""
        alpha, beta = self.coefficients(key)
        return np.asarray(true_range, dtype=float) * (1.0 + alpha) + beta

    def remove(self, measured, key=None):
        """Invert the linear model: subtract ``alpha*d/(1+alpha) + beta/(1+alpha)``."""
        alpha, beta = self.coefficients(key)
        return (np.asarray(measured, dtype=float) - beta) / (1.0 + alpha)

    def to_json(self) -> str:
        payload = {
            "alpha": self.alpha,
            "beta": self.beta,
            "sigma": self.sigma,
            "residual_rms": self.residual_rms,
            "per_pair": [
                {"anchor": a, "tag": t, "alpha": ab[0], "beta": ab[1]}
                for (a, t), ab in sorted(self.per_pair.items())
            ],
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json_file(cls, path) -> "BiasModel":
        try:
            with open(path, encoding="utf-8") as handle:
                raw = json.load(handle)
            per_pair = {
                (entry["anchor"], entry["tag"]): (float(entry["alpha"]), float(entry["beta"]))
                for entry in raw.get("per_pair", [])
            }
            return cls(
                alpha=float(raw["alpha"]),
                beta=float(raw["beta"]),
                sigma=float(raw["sigma"]),
                residual_rms=float(raw.get("residual_rms", 0.0)),
                per_pair=per_pair,
            )
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"cannot read bias model {path}: {exc}") from exc


def reject_outliers(log: RangeLog, window: int, v_max: float) -> tuple[RangeLog, np.ndarray]:
    """Sliding-window spike rejection over every (anchor, tag) stream.

    A sample is flagged when it exceeds the minimum of the previous
    ``window`` samples by more than ``window * v_max / frequency`` plus a
    fixed 0.1 m bound. Flagged samples are replaced by linear interpolation
    between their nearest unflagged neighbors. The rule is causal: flags at
    a timestamp depend only on earlier samples.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    slack = window * v_max / log.frequency + REJECTION_BOUND_M
    mask = np.zeros(len(log), dtype=bool)
    values = np.array(log.range_m)
    for indices in log.streams().values():
        stream = log.range_m[indices]
        flags = flag_stream(stream, window, slack)
        mask[indices] = flags
        if flags.any():
            values[indices] = interpolate_flagged(log.t[indices], stream, flags)
    cleaned = RangeLog(
        t=log.t,
        anchor=log.anchor,
        tag=log.tag,
        range_m=values,
        frequency=log.frequency,
        dropped_negative=log.dropped_negative,
    )
    return cleaned, mask


def calibrate_bias(log: RangeLog, truth: GroundTruthLog, named: NamedDeployment) -> BiasModel:
    """Fit the linear bias of measured versus true range by ordinary LS.

    True ranges come from ground-truth poses interpolated at the log
    timestamps; records outside the ground-truth time span are ignored.
    Run outlier rejection first. Raises when fewer than 10 usable samples
    overlap.
    """
    if len(log) == 0:
        raise InsufficientDataError("empty range log")
    inside = (log.t >= truth.t[0]) & (log.t <= truth.t[-1])
    if inside.sum() < 10:
        raise InsufficientDataError(
            f"only {int(inside.sum())} samples overlap the ground-truth span, need 10"
        )
    positions, yaws = truth.interpolate(log.t[inside])
    dep = named.deployment
    a_idx = np.asarray([named.anchor_index(a) for a, keep in zip(log.anchor, inside) if keep])
    t_idx = np.asarray([named.tag_index(t) for t, keep in zip(log.tag, inside) if keep])
    measured = log.range_m[inside]

    cos_y, sin_y = np.cos(yaws), np.sin(yaws)
    tags = dep.tags[t_idx]
    tag_global_x = cos_y * tags[:, 0] - sin_y * tags[:, 1] + positions[:, 0]
    tag_global_y = sin_y * tags[:, 0] + cos_y * tags[:, 1] + positions[:, 1]
    anchors = dep.anchors[a_idx]
    dh = dep.dh[t_idx, a_idx]
    true_range = np.sqrt(
        (anchors[:, 0] - tag_global_x) ** 2 + (anchors[:, 1] - tag_global_y) ** 2 + dh**2
    )

    design = np.column_stack([true_range, np.ones_like(true_range)])
    coeffs, _, _, _ = np.linalg.lstsq(design, measured - true_range, rcond=None)
    residual = measured - true_range - design @ coeffs
    rms = float(np.sqrt(np.mean(residual**2)))
    return BiasModel(
        alpha=float(coeffs[0]),
        beta=float(coeffs[1]),
        sigma=rms if rms > 0 else np.finfo(float).tiny,
        residual_rms=rms,
    )


def estimate_sigma(log: RangeLog, window: tuple[float, float]) -> float:
    """Pooled noise standard deviation from a quiescent time window.

    Computes the sample standard deviation per stream and pools them as the
    root mean square. Every stream must contribute at least 30 samples.
    """
    t0, t1 = float(window[0]), float(window[1])
    variances = []
    for key, indices in log.streams().items():
        selected = log.range_m[indices][(log.t[indices] >= t0) & (log.t[indices] <= t1)]
        if selected.size < 30:
            raise InsufficientDataError(
                f"stream {key} has {selected.size} samples in the window, need 30"
            )
        variances.append(float(np.var(selected, ddof=1)))
    if not variances:
        raise InsufficientDataError("log has no streams")
    return float(np.sqrt(np.mean(variances)))


@dataclass(frozen=True)
class EpochPolicy:
    """How streams are resampled onto a common estimation grid.

    ``rate_hz`` defaults to the log frequency. Epochs whose nearest samples
    in any stream are more than ``max_gap_periods`` log periods apart are
    dropped rather than emitted as partial batches.
    """

    rate_hz: float | None = None
    max_gap_periods: float = 3.0


def align_and_batch(
    log: RangeLog,
    bias: BiasModel,
    named: NamedDeployment,
    policy: EpochPolicy = EpochPolicy(),
) -> list[tuple[float, RangeBatch]]:
    """De-bias, align, and group the log into per-epoch batches.

    Every (anchor, tag) pair of the deployment must appear in the log.
    Stream values are linearly interpolated at each epoch time; an epoch is
    dropped when any stream has a sample gap beyond the policy horizon or
    does not span the epoch time. Returned batches always contain the full
    N x M measurement grid with one repetition.
    """
    for anchor_id in set(log.anchor):
        named.anchor_index(anchor_id)
    for tag_id in set(log.tag):
        named.tag_index(tag_id)

    dep = named.deployment
    streams = log.streams()
    required = [
        (a, t) for t in named.tag_ids for a in named.anchor_ids
    ]
    if any(key not in streams for key in required):
        return []

    rate = policy.rate_hz if policy.rate_hz is not None else log.frequency
    horizon = policy.max_gap_periods / log.frequency
    start = max(log.t[idx][0] for idx in streams.values())
    end = min(log.t[idx][-1] for idx in streams.values())
    if end < start:
        return []
    count = int(np.floor((end - start) * rate)) + 1
    epochs = start + np.arange(count) / rate

    n, m = dep.num_tags, dep.num_anchors
    grid = np.empty((n, m, count))
    ok = np.ones(count, dtype=bool)
    for (anchor_id, tag_id), indices in streams.items():
        i = named.tag_index(tag_id)
        j = named.anchor_index(anchor_id)
        ts = log.t[indices]
        vals = bias.remove(log.range_m[indices], key=(anchor_id, tag_id))
        grid[i, j] = np.interp(epochs, ts, vals)
        position = np.searchsorted(ts, epochs)
        left = np.clip(position - 1, 0, len(ts) - 1)
        right = np.clip(position, 0, len(ts) - 1)
        exact = (right < len(ts)) & (ts[right] == epochs)
        gap = ts[right] - ts[left]
        ok &= exact | ((position > 0) & (position < len(ts)) & (gap <= horizon))

    return [
        (float(epochs[e]), RangeBatch(dep, 1, grid[:, :, e][:, :, np.newaxis]))
        for e in range(count)
        if ok[e]
    ]

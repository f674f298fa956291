"""Raw sensor log parsing, tempo-based figure segmentation and median downsampling.

Timestamps are integer nanoseconds measured from the start of the recording,
which is also the start of the music.  All window arithmetic is done in
float64 nanoseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .core import AXES, N_BINS, FigureSample
from .errors import (
    EmptyWindow,
    InputError,
    InsufficientData,
    MalformedRow,
    MissingAxis,
    NonMonotonicTime,
)

LOG_HEADER = "t_ns,axis,value"
NS_PER_S = 1_000_000_000
DEFAULT_EXTENSION_S = 0.35


@dataclass(frozen=True)
class Stream:
    t: np.ndarray  # int64 ns, strictly increasing
    values: np.ndarray

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class RawLog:
    streams: Mapping[str, Stream]

    def __post_init__(self):
        for axis in AXES:
            if axis not in self.streams or len(self.streams[axis]) == 0:
                raise MissingAxis(f"no readings for axis {axis!r}")
            t = self.streams[axis].t
            if np.any(np.diff(t) <= 0):
                raise NonMonotonicTime(f"timestamps of axis {axis!r} are not strictly increasing")

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, tuple]) -> "RawLog":
        return cls({a: Stream(np.asarray(t, dtype=np.int64), np.asarray(v, dtype=np.float64))
                    for a, (t, v) in arrays.items()})

    def counts(self) -> dict[str, int]:
        return {axis: len(self.streams[axis]) for axis in AXES}

    def end_ns(self) -> int:
        return int(max(s.t[-1] for s in self.streams.values()))


@dataclass(frozen=True)
class SegmentationSpec:
    tempo_bpm: float
    intro_s: float
    n_figures: int
    extension_s: float = DEFAULT_EXTENSION_S

    def __post_init__(self):
        if not (self.tempo_bpm > 0 and math.isfinite(self.tempo_bpm)):
            raise InputError(f"tempo must be positive and finite, got {self.tempo_bpm}")
        if not self.intro_s >= 0:
            raise InputError(f"intro length must be >= 0, got {self.intro_s}")
        if int(self.n_figures) != self.n_figures or self.n_figures < 1:
            raise InputError(f"figure count must be a positive integer, got {self.n_figures}")
        if not self.extension_s >= 0:
            raise InputError(f"extension must be >= 0, got {self.extension_s}")

    @property
    def measure_s(self) -> float:
        return 60.0 / self.tempo_bpm

    def window_bounds_s(self, k: int) -> tuple[float, float]:
        m, e = self.measure_s, self.extension_s
        return self.intro_s + k * m - e, self.intro_s + (k + 1) * m + e


@dataclass(frozen=True)
class Window:
    """Readings of one extended figure window; bounds are in float ns."""

    start_ns: float
    end_ns: float
    streams: Mapping[str, Stream]


def parse_log(path) -> RawLog:
    """Read a ``t_ns,axis,value`` CSV log."""
    path = Path(path)
    times: dict[str, list[int]] = {a: [] for a in AXES}
    values: dict[str, list[float]] = {a: [] for a in AXES}
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\r\n")
        if header != LOG_HEADER:
            raise MalformedRow(f"{path}: line 1: expected header {LOG_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise MalformedRow(f"{path}: line {lineno}: expected 3 columns, got {len(parts)}")
            t_txt, axis, v_txt = parts
            if axis not in times:
                raise MalformedRow(f"{path}: line {lineno}: unknown axis {axis!r}")
            try:
                t = int(t_txt)
                v = float(v_txt)
            except ValueError:
                raise MalformedRow(f"{path}: line {lineno}: non-numeric field") from None
            if not math.isfinite(v):
                raise MalformedRow(f"{path}: line {lineno}: non-finite value")
            ts = times[axis]
            if ts and t <= ts[-1]:
                raise NonMonotonicTime(
                    f"{path}: line {lineno}: time {t} does not increase on axis {axis!r}"
                )
            ts.append(t)
            values[axis].append(v)
    for axis in AXES:
        if not times[axis]:
            raise MissingAxis(f"{path}: no readings for axis {axis!r}")
    return RawLog.from_arrays({a: (times[a], values[a]) for a in AXES})


def write_log(log: RawLog, path) -> None:
    """Write a log in the CSV format read by :func:`parse_log`, rows ordered by time."""
    ts, axes, vals = [], [], []
    for ai, axis in enumerate(AXES):
        s = log.streams[axis]
        ts.append(s.t)
        axes.append(np.full(len(s), ai))
        vals.append(s.values)
    t = np.concatenate(ts)
    a = np.concatenate(axes)
    v = np.concatenate(vals)
    order = np.lexsort((a, t))
    lines = [LOG_HEADER]
    lines.extend(f"{ti},{AXES[ai]},{vi!r}" for ti, ai, vi in
                 zip(t[order].tolist(), a[order].tolist(), v[order].tolist()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def unwrap_yaw(values) -> np.ndarray:
    """Shift each value by a multiple of 360 so consecutive steps are at most 180 degrees."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return v.copy()
    return np.unwrap(v, period=360.0)


def segment(log: RawLog, spec: SegmentationSpec) -> list[Window]:
    """Cut the log into ``spec.n_figures`` overlapping extended windows."""
    nominal_end_ns = (spec.intro_s + spec.n_figures * spec.measure_s) * NS_PER_S
    if log.end_ns() < nominal_end_ns:
        raise InsufficientData(
            f"log ends at {log.end_ns() / NS_PER_S:.3f} s, before the last figure's "
            f"nominal end at {nominal_end_ns / NS_PER_S:.3f} s"
        )
    windows = []
    for k in range(spec.n_figures):
        lo_s, hi_s = spec.window_bounds_s(k)
        lo, hi = lo_s * NS_PER_S, hi_s * NS_PER_S
        streams = {}
        for axis in AXES:
            s = log.streams[axis]
            i0 = np.searchsorted(s.t, lo, side="left")
            i1 = np.searchsorted(s.t, hi, side="right")
            streams[axis] = Stream(s.t[i0:i1], s.values[i0:i1])
        windows.append(Window(lo, hi, streams))
    return windows


def bin_indices(t, start_ns: float, end_ns: float, n_bins: int = N_BINS) -> np.ndarray:
    """Bin of each timestamp: half-open bins over the window, last bin closed."""
    frac = (np.asarray(t, dtype=np.float64) - start_ns) / (end_ns - start_ns)
    return np.clip(np.floor(frac * n_bins).astype(np.int64), 0, n_bins - 1)


def binned_median(t, values, start_ns: float, end_ns: float, n_bins: int = N_BINS) -> np.ndarray:
    """Median per time bin; empty bins copy the previous filled bin (leading ones the first)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyWindow("no readings in window")
    b = bin_indices(t, start_ns, end_ns, n_bins)
    order = np.lexsort((values, b))
    sv = values[order]
    counts = np.bincount(b, minlength=n_bins)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    filled = counts > 0
    lo = starts + (counts - 1) // 2
    hi = starts + counts // 2
    out = np.empty(n_bins)
    out[filled] = (sv[lo[filled]] + sv[hi[filled]]) / 2.0
    # forward fill from the last filled bin; leading gaps take the first filled value
    src = np.where(filled, np.arange(n_bins), -1)
    src = np.maximum.accumulate(src)
    src[src < 0] = np.flatnonzero(filled)[0]
    return out[src]


def downsample(window: Window, label=None) -> FigureSample:
    rows = []
    for axis in AXES:
        s = window.streams.get(axis)
        if s is None or len(s) == 0:
            raise EmptyWindow(f"axis {axis!r} has no readings in window "
                              f"[{window.start_ns / NS_PER_S:.3f}, {window.end_ns / NS_PER_S:.3f}] s")
        rows.append(binned_median(s.t, s.values, window.start_ns, window.end_ns))
    return FigureSample(np.stack(rows), label)


def prepare_log(log: RawLog, unwrap: bool = True) -> RawLog:
    if not unwrap:
        return log
    streams = dict(log.streams)
    y = streams["yaw"]
    streams["yaw"] = Stream(y.t, unwrap_yaw(y.values))
    return RawLog(streams)


def extract_samples(log: RawLog, spec: SegmentationSpec, unwrap: bool = True,
                    labels: Optional[list] = None) -> list[FigureSample]:
    """Full ingest path: optional yaw unwrap, segmentation, per-window downsampling."""
    if labels is not None and len(labels) != spec.n_figures:
        raise InputError(f"{len(labels)} labels supplied for {spec.n_figures} figures")
    windows = segment(prepare_log(log, unwrap), spec)
    return [downsample(w, None if labels is None else labels[k]) for k, w in enumerate(windows)]

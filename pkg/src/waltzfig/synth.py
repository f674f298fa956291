"""Synthetic dance corpora: Markov-chain figure sequences rendered as raw sensor logs.

Each figure has a piecewise-linear template per axis over normalized figure
time.  A dance concatenates its figures' templates (yaw accumulates), draws
irregular timestamps per axis, and adds Gaussian noise.

Two properties make noiseless output exactly recoverable by ``ingest``:
templates are flat near both ends, so the overlap between neighbouring
extended windows is a constant stretch; and inside a figure's core the
signal is held constant on each of that window's downsampling bins.  The
median of any readings in a bin then equals the bin's ideal value.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .core import AXES, LABELS, N_BINS, N_LABELS, SHORT_NAMES, DanceSequence, FigureLabel, FigureSample
from .errors import ConfigError, InputError
from .ingest import NS_PER_S, RawLog, SegmentationSpec, Stream, bin_indices
from .transitions import TransitionMatrix, unbiased_matrix

CONFIG_VERSION = 1
TAIL_S = 1.0


@dataclass(frozen=True)
class FigureTemplate:
    points: tuple  # per axis: tuple of (x, y) control points, x in [0, 1]
    noise_sigma: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.points) != len(AXES) or len(self.noise_sigma) != len(AXES):
            raise InputError(f"a template needs {len(AXES)} axes")
        pts = []
        for axis, p in zip(AXES, self.points):
            arr = np.asarray(p, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
                raise InputError(f"axis {axis}: need at least 2 (x, y) control points")
            if np.any(np.diff(arr[:, 0]) < 0):
                raise InputError(f"axis {axis}: control points not sorted by time")
            if arr[0, 0] != 0.0 or arr[-1, 0] != 1.0:
                raise InputError(f"axis {axis}: control points must span [0, 1]")
            if not np.all(np.isfinite(arr)):
                raise InputError(f"axis {axis}: non-finite control point")
            pts.append(tuple(map(tuple, arr.tolist())))
        if any(s < 0 for s in self.noise_sigma):
            raise InputError("noise sigma must be >= 0")
        object.__setattr__(self, "points", tuple(pts))
        object.__setattr__(self, "noise_sigma", tuple(float(s) for s in self.noise_sigma))

    def flat_margin(self) -> float:
        """Largest f with every axis constant on [0, f] and [1 - f, 1]."""
        f = 0.5
        for p in self.points:
            x = np.array([q[0] for q in p])
            y = np.array([q[1] for q in p])
            head = np.flatnonzero(y != y[0])
            tail = np.flatnonzero(y != y[-1])
            if head.size:
                f = min(f, x[head[0] - 1])
            if tail.size:
                f = min(f, 1.0 - x[tail[-1] + 1])
        return f

    def to_dict(self) -> dict:
        d = {axis: [list(q) for q in p] for axis, p in zip(AXES, self.points)}
        d["noise_sigma"] = list(self.noise_sigma)
        return d


@dataclass(frozen=True)
class SynthConfig:
    templates: Mapping[FigureLabel, FigureTemplate]
    T: TransitionMatrix = field(default_factory=unbiased_matrix)
    length_range: tuple = (40, 60)
    tempo_bpm: float = 28.5
    intro_s: float = 10.0
    extension_s: float = 0.35
    sample_rate_hz: float = 60.0
    rate_jitter: float = 0.2
    amplitude_sigma: float = 0.0
    warp_sigma: float = 0.0
    n_dances: int = 200
    seed: int = 0

    def __post_init__(self):
        missing = [l.short_name for l in LABELS if l not in self.templates]
        if missing:
            raise ConfigError(f"templates: no template for label {missing[0]}")
        lo, hi = self.length_range
        if not (1 <= lo <= hi <= 10_000):
            raise ConfigError(f"length_range: {list(self.length_range)} must satisfy 1 <= lo <= hi <= 10000")
        spec = self.segmentation(1)  # validates tempo / intro / extension
        if spec.measure_s <= 2 * self.extension_s:
            raise ConfigError("extension_s: overlap would swallow the whole measure")
        need = self.required_flat_margin()
        for lab, tpl in self.templates.items():
            for axis, pts in zip(AXES, tpl.points):
                if pts[0][1] != 0.0 or (axis != "yaw" and pts[-1][1] != 0.0):
                    raise ConfigError(f"templates.{lab.short_name}.{axis}: profile must start at 0"
                                      + ("" if axis == "yaw" else " and end at 0"))
            if tpl.flat_margin() < need - 1e-12:
                raise ConfigError(f"templates.{lab.short_name}: profile must be constant within "
                                  f"{need:.4f} of both ends")
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz: must be positive")
        if not 0 <= self.rate_jitter < 1:
            raise ConfigError("rate_jitter: must lie in [0, 1)")
        if self.n_dances < 1:
            raise ConfigError("n_dances: must be positive")

    def segmentation(self, n_figures: int) -> SegmentationSpec:
        try:
            return SegmentationSpec(self.tempo_bpm, self.intro_s, n_figures, self.extension_s)
        except InputError as exc:
            raise ConfigError(str(exc)) from None

    def required_flat_margin(self) -> float:
        m = 60.0 / self.tempo_bpm
        bin_w = (m + 2 * self.extension_s) / N_BINS
        return (self.extension_s + bin_w) / m


def _warp_x(x: np.ndarray, shift: float, f: float) -> np.ndarray:
    """Move the core midpoint by ``shift``, linearly stretching both halves; ends stay fixed."""
    mid = 0.5 + shift
    out = x.copy()
    left = (x > f) & (x <= 0.5)
    right = (x > 0.5) & (x < 1 - f)
    out[left] = f + (x[left] - f) * (mid - f) / (0.5 - f)
    out[right] = mid + (x[right] - 0.5) * (1 - f - mid) / (0.5 - f)
    return out


def gen_sequence(config: SynthConfig, rng: np.random.Generator) -> list[FigureLabel]:
    """Uniform first figure, then successors drawn from the transition rows."""
    lo, hi = config.length_range
    n = int(rng.integers(lo, hi + 1))
    cum = np.cumsum(config.T.probs, axis=1)
    cum[:, -1] = 1.0
    rows = cum.tolist()
    seq = [int(rng.integers(N_LABELS))]
    for u in rng.random(n - 1).tolist():
        # first index whose cumulative mass exceeds u; zero-mass labels are never hit
        seq.append(bisect.bisect_right(rows[seq[-1]], u))
    return [LABELS[i] for i in seq]


def _timestamps(rng: np.random.Generator, rate: float, duration_s: float) -> np.ndarray:
    n_draw = int(rate * duration_s * 1.2) + 64
    t = np.cumsum(rng.exponential(1.0 / rate, size=n_draw))
    while t[-1] < duration_s:
        t = np.concatenate([t, t[-1] + np.cumsum(rng.exponential(1.0 / rate, size=n_draw))])
    t = t[t < duration_s]
    return np.unique(np.floor(t * NS_PER_S).astype(np.int64))


def wrap_degrees(v: np.ndarray) -> np.ndarray:
    return np.mod(v + 180.0, 360.0) - 180.0


def gen_dance(config: SynthConfig, rng: np.random.Generator, dance_id: str = "dance"):
    """Render one dance.

    Returns the labeled DanceSequence of ideal (noiseless) 4x100 samples and
    the noisy RawLog; yaw in the log is wrapped to [-180, 180).
    """
    labels = gen_sequence(config, rng)
    n = len(labels)
    spec = config.segmentation(n)
    m, e = spec.measure_s, spec.extension_s
    f = config.required_flat_margin()
    heading = float(rng.uniform(-180.0, 180.0))

    # composite noiseless signal: knots per axis in absolute seconds
    knots_t = [[] for _ in AXES]
    knots_v = [[] for _ in AXES]
    yaw = heading
    for k, lab in enumerate(labels):
        tpl = config.templates[lab]
        b_k = config.intro_s + k * m
        shift = 0.0
        if config.warp_sigma > 0:
            lim = 0.5 * (0.5 - f)
            shift = float(np.clip(rng.normal(0.0, config.warp_sigma), -lim, lim))
        scale = np.ones(len(AXES))
        if config.amplitude_sigma > 0:
            scale = np.maximum(1.0 + config.amplitude_sigma * rng.standard_normal(len(AXES)), 0.2)
        for a, pts in enumerate(tpl.points):
            p = np.asarray(pts)
            x = _warp_x(p[:, 0], shift, f)
            v = p[:, 1] * scale[a]
            if AXES[a] == "yaw":
                v = v - v[0] + yaw
            start = 1 if k > 0 else 0  # figure k's first knot repeats figure k-1's last
            knots_t[a].extend((b_k + x[start:] * m).tolist())
            knots_v[a].extend(v[start:].tolist())
            if AXES[a] == "yaw":
                yaw = float(v[-1])

    def composite(a: int, t_s):
        return np.interp(t_s, knots_t[a], knots_v[a])

    duration = config.intro_s + n * m + e + TAIL_S
    # window k's bin grid, shared with the ideal samples
    lo_ns = np.array([spec.window_bounds_s(k)[0] * NS_PER_S for k in range(n)])
    hi_ns = np.array([spec.window_bounds_s(k)[1] * NS_PER_S for k in range(n)])

    def bin_center_s(k, b):
        return (lo_ns[k] + (b + 0.5) * (hi_ns[k] - lo_ns[k]) / N_BINS) / NS_PER_S

    streams = {}
    for a, axis in enumerate(AXES):
        rate = config.sample_rate_hz * (1.0 + config.rate_jitter * rng.uniform(-1.0, 1.0))
        t_ns = _timestamps(rng, rate, duration)
        t_s = t_ns / NS_PER_S
        values = composite(a, t_s)
        # hold the signal constant per bin inside each figure's core
        k = np.floor((t_s - config.intro_s) / m).astype(np.int64)
        inside = (k >= 0) & (k < n)
        kk = np.clip(k, 0, n - 1)
        core = inside & (t_s >= config.intro_s + kk * m + e) & (t_s < config.intro_s + (kk + 1) * m - e)
        idx = np.flatnonzero(core)
        if idx.size:
            ki = kk[idx]
            bins = bin_indices(t_ns[idx], lo_ns[ki], hi_ns[ki])
            values[idx] = composite(a, bin_center_s(ki, bins))
        sigma = config.templates[labels[0]].noise_sigma[a]
        if any(config.templates[l].noise_sigma[a] != sigma for l in labels):
            sig = np.array([config.templates[labels[int(j)]].noise_sigma[a] for j in kk])
        else:
            sig = sigma
        values = values + rng.standard_normal(len(values)) * sig
        if axis == "yaw":
            values = wrap_degrees(values)
        streams[axis] = Stream(t_ns, values)

    centers = np.stack([bin_center_s(k, np.arange(N_BINS)) for k in range(n)])
    figures = tuple(
        FigureSample(np.stack([composite(a, centers[k]) for a in range(len(AXES))]), labels[k])
        for k in range(n)
    )
    dance = DanceSequence(dance_id, figures, config.tempo_bpm, config.intro_s)
    return dance, RawLog(streams)


def dance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def dance_id(index: int) -> str:
    return f"dance{index:04d}"


def _gen_one(config: SynthConfig, index: int):
    return gen_dance(config, dance_rng(config.seed, index), dance_id(index))


def gen_corpus(config: SynthConfig, n_dances: Optional[int] = None, jobs: int = 1) -> list:
    """``[(DanceSequence, RawLog), ...]``; dance i uses the RNG stream (seed, i)."""
    n = config.n_dances if n_dances is None else n_dances
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_gen_one, [config] * n, range(n)))
    return [_gen_one(config, i) for i in range(n)]


# ---------------------------------------------------------------- config files

def _field(d: dict, key: str, kind, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"{key}: missing")
        return default
    try:
        return kind(d[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: invalid value {d[key]!r}") from None


def config_from_dict(d: dict) -> SynthConfig:
    if not isinstance(d, dict):
        raise ConfigError("top level must be an object")
    version = d.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"version: unsupported config version {version!r}")
    tpl_src = d.get("templates")
    if not isinstance(tpl_src, dict):
        raise ConfigError("templates: missing or not an object")
    templates = {}
    for name, td in tpl_src.items():
        if name not in SHORT_NAMES:
            raise ConfigError(f"templates.{name}: unknown label")
        try:
            templates[LABELS[SHORT_NAMES.index(name)]] = FigureTemplate(
                tuple(td[a] for a in AXES), tuple(td.get("noise_sigma", (0.0,) * len(AXES))))
        except KeyError as exc:
            raise ConfigError(f"templates.{name}.{exc.args[0]}: missing") from None
        except (InputError, TypeError, ValueError) as exc:
            raise ConfigError(f"templates.{name}: {exc}") from None
    missing = [s for s in SHORT_NAMES if s not in tpl_src]
    if missing:
        raise ConfigError(f"templates: no template for label {missing[0]}")
    trans = d.get("transitions", "unbiased")
    if trans == "unbiased":
        T = unbiased_matrix()
    else:
        try:
            T = TransitionMatrix.from_dict(trans)
        except InputError as exc:
            raise ConfigError(f"transitions: {exc}") from None
    lr = d.get("length_range", [40, 60])
    if not (isinstance(lr, list) and len(lr) == 2 and all(isinstance(x, int) for x in lr)):
        raise ConfigError(f"length_range: expected [lo, hi] integers, got {lr!r}")
    return SynthConfig(
        templates=templates,
        T=T,
        length_range=tuple(lr),
        tempo_bpm=_field(d, "tempo_bpm", float, 28.5),
        intro_s=_field(d, "intro_s", float, 10.0),
        extension_s=_field(d, "extension_s", float, 0.35),
        sample_rate_hz=_field(d, "sample_rate_hz", float, 60.0),
        rate_jitter=_field(d, "rate_jitter", float, 0.2),
        amplitude_sigma=_field(d, "amplitude_sigma", float, 0.0),
        warp_sigma=_field(d, "warp_sigma", float, 0.0),
        n_dances=_field(d, "n_dances", int, 200),
        seed=_field(d, "seed", int, 0),
    )


def config_to_dict(config: SynthConfig) -> dict:
    return {
        "version": CONFIG_VERSION,
        "n_dances": config.n_dances,
        "seed": config.seed,
        "length_range": list(config.length_range),
        "tempo_bpm": config.tempo_bpm,
        "intro_s": config.intro_s,
        "extension_s": config.extension_s,
        "sample_rate_hz": config.sample_rate_hz,
        "rate_jitter": config.rate_jitter,
        "amplitude_sigma": config.amplitude_sigma,
        "warp_sigma": config.warp_sigma,
        "transitions": "unbiased" if config.T == unbiased_matrix() else config.T.to_dict(),
        "templates": {lab.short_name: config.templates[lab].to_dict() for lab in LABELS},
    }


def load_config(path) -> SynthConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return config_from_dict(d)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


DEFAULT_CONFIG_NAME = "default_synth.json"


def default_config_text() -> str:
    return resources.files("waltzfig").joinpath("data", DEFAULT_CONFIG_NAME).read_text(encoding="utf-8")


def default_config(**overrides) -> SynthConfig:
    cfg = config_from_dict(json.loads(default_config_text()))
    return replace(cfg, **overrides) if overrides else cfg


def with_identical_templates(config: SynthConfig, a, b) -> SynthConfig:
    """Copy of ``config`` where label ``b`` reuses label ``a``'s template."""
    from .core import as_label

    templates = dict(config.templates)
    templates[as_label(b)] = templates[as_label(a)]
    return replace(config, templates=templates)

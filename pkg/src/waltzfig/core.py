"""Figure labels, probability vectors and the sample/dance/dataset containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputError, InvalidProbVector, UnknownLabel

N_AXES = 4
N_BINS = 100
AXES = ("lin_acc_x", "lin_acc_y", "lin_acc_z", "yaw")

# (short name, full name, leading foot) -- row/column order of the transition table
_FIGURES = (
    ("BL", "Back Lock (BL)", "left"),
    ("BW", "Back Whisk (BW)", "left"),
    ("CTR", "Chasse to Right (CTR)", "left"),
    ("DR", "Double Reverse (DR)", "left"),
    ("LCC", "Left-foot Closed Change (LCC)", "left"),
    ("N1", "Natural Turn 1-3 (N1)", "right"),
    ("N2", "Natural Turn 4-6 (N2)", "left"),
    ("NST", "Natural Spin Turn (NST)", "left"),
    ("OC", "Outside Change (OC)", "left"),
    ("PC", "Chasse from Promenade (PC)", "right"),
    ("R1", "Reverse Turn 1-3 (R1)", "left"),
    ("R2", "Reverse Turn 4-6 (R2)", "right"),
    ("RC", "Reverse Corte (RC)", "right"),
    ("RCC", "Right-foot Closed Change (RCC)", "right"),
    ("W", "Whisk (W)", "left"),
    ("Weave", "Basic Weave (Weave)", "right"),
)


@dataclass(frozen=True)
class FigureLabel:
    index: int
    short_name: str
    full_name: str
    foot: str

    def __str__(self):
        return self.short_name


LABELS: tuple[FigureLabel, ...] = tuple(
    FigureLabel(i, short, full, foot) for i, (short, full, foot) in enumerate(_FIGURES)
)
SHORT_NAMES: tuple[str, ...] = tuple(lab.short_name for lab in LABELS)
N_LABELS = len(LABELS)
_BY_NAME = {lab.short_name: lab for lab in LABELS}


def label_from_short_name(name: str) -> FigureLabel:
    """Look up a label by its case-sensitive short name."""
    try:
        return _BY_NAME[name]
    except (KeyError, TypeError):
        raise UnknownLabel(f"unknown figure short name {name!r}") from None


def label_at(index: int) -> FigureLabel:
    if not 0 <= int(index) < N_LABELS:
        raise UnknownLabel(f"label index {index} outside [0, {N_LABELS - 1}]")
    return LABELS[int(index)]


def as_label(value) -> FigureLabel:
    """Coerce a FigureLabel, short name or index to a FigureLabel."""
    if isinstance(value, FigureLabel):
        return value
    if isinstance(value, str):
        return label_from_short_name(value)
    return label_at(value)


PROB_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class ProbVector:
    """A distribution over the 16 figures, validated on construction."""

    __slots__ = ("_p",)

    def __init__(self, p):
        arr = np.array(p, dtype=np.float64).reshape(-1)
        check_prob_rows(arr[None, :])
        self._p = _frozen(arr)

    @property
    def p(self) -> np.ndarray:
        return self._p

    def __len__(self):
        return len(self._p)

    def __getitem__(self, i):
        return self._p[i]

    def __array__(self, dtype=None, copy=None):
        return self._p if dtype is None else self._p.astype(dtype)

    def __eq__(self, other):
        return isinstance(other, ProbVector) and np.array_equal(self._p, other._p)

    def __hash__(self):
        return hash(self._p.tobytes())

    def __repr__(self):
        return f"ProbVector({np.array2string(self._p, precision=4)})"

    @classmethod
    def uniform(cls, n: int = N_LABELS) -> "ProbVector":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def one_hot(cls, index: int, n: int = N_LABELS) -> "ProbVector":
        p = np.zeros(n)
        p[index] = 1.0
        return cls(p)


def check_prob_rows(P: np.ndarray, tol: float = PROB_TOL) -> np.ndarray:
    """Validate that every row of ``P`` is a distribution; returns ``P``."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != N_LABELS:
        raise InvalidProbVector(f"expected rows of {N_LABELS} probabilities, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise InvalidProbVector("probabilities must be finite")
    bad = np.flatnonzero((P < 0).any(axis=1))
    if bad.size:
        raise InvalidProbVector(f"row {bad[0]} has a negative entry")
    sums = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise InvalidProbVector(f"row {bad[0]} sums to {sums[bad[0]]!r}, not 1")
    return P


def as_prob_matrix(posteriors) -> np.ndarray:
    """Stack a sequence of ProbVectors (or an (n, 16) array) into a validated array."""
    if isinstance(posteriors, np.ndarray):
        P = posteriors.astype(np.float64, copy=False)
        if P.ndim == 1:
            P = P[None, :]
    else:
        rows = [np.asarray(p, dtype=np.float64) for p in posteriors]
        P = np.stack(rows) if rows else np.zeros((0, N_LABELS))
    return check_prob_rows(P)


def argmax_label(p) -> FigureLabel:
    """Most probable label; ties go to the lowest index."""
    return LABELS[int(np.argmax(np.asarray(p)))]


@dataclass(frozen=True)
class TimedReading:
    t: int
    axis: str
    value: float


@dataclass(frozen=True)
class FigureSample:
    """A 4 x 100 window of downsampled readings, rows ordered as ``AXES``."""

    values: np.ndarray
    label: Optional[FigureLabel] = None

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.shape != (N_AXES, N_BINS):
            raise InputError(f"figure sample must be {N_AXES}x{N_BINS}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("figure sample contains non-finite values")
        object.__setattr__(self, "values", _frozen(arr))
        if self.label is not None:
            object.__setattr__(self, "label", as_label(self.label))


@dataclass(frozen=True)
class DanceSequence:
    id: str
    figures: tuple[FigureSample, ...]
    tempo_bpm: float = 28.5
    intro_s: float = 0.0

    def __post_init__(self):
        figs = tuple(self.figures)
        if not figs:
            raise InputError(f"dance {self.id!r} has no figures")
        object.__setattr__(self, "figures", figs)

    def __len__(self):
        return len(self.figures)

    @property
    def labels(self) -> tuple[Optional[FigureLabel], ...]:
        return tuple(f.label for f in self.figures)

    def label_indices(self) -> np.ndarray:
        """Label indices as an int array; raises if any figure is unlabeled."""
        if any(f.label is None for f in self.figures):
            raise InputError(f"dance {self.id!r} has unlabeled figures")
        return np.array([f.label.index for f in self.figures], dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.stack([f.values for f in self.figures])


@dataclass(frozen=True)
class Dataset:
    dances: tuple[DanceSequence, ...] = field(default_factory=tuple)

    def __post_init__(self):
        dances = tuple(self.dances)
        ids = [d.id for d in dances]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise InputError(f"duplicate dance id {dup!r}")
        object.__setattr__(self, "dances", dances)

    def __len__(self):
        return len(self.dances)

    def __iter__(self):
        return iter(self.dances)

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self.dances]

    def by_id(self, dance_id: str) -> DanceSequence:
        for d in self.dances:
            if d.id == dance_id:
                return d
        raise KeyError(dance_id)

    def subset(self, ids: Iterable[str]) -> "Dataset":
        wanted = set(ids)
        return Dataset(tuple(d for d in self.dances if d.id in wanted))

    def n_figures(self) -> int:
        return sum(len(d) for d in self.dances)

    def stack(self) -> tuple[np.ndarray, np.ndarray]:
        """All samples as an (N, 4, 100) array plus their label indices."""
        if not self.dances:
            return np.zeros((0, N_AXES, N_BINS)), np.zeros(0, dtype=np.int64)
        X = np.concatenate([d.values() for d in self.dances])
        y = np.concatenate([d.label_indices() for d in self.dances])
        return X, y


def label_sequence(seq: Sequence) -> np.ndarray:
    """Label indices of a DanceSequence or a sequence of labels/names/indices."""
    if isinstance(seq, DanceSequence):
        return seq.label_indices()
    return np.array([as_label(x).index for x in seq], dtype=np.int64)

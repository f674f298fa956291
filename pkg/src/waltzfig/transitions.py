"""The 16 x 16 figure transition matrix: rule-based uniform rows and count-smoothed rows."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np

from .core import LABELS, N_LABELS, SHORT_NAMES, DanceSequence, ProbVector, as_label, label_sequence
from .errors import ImpossibleTransitionInData, InputError, SchemaError

ROW_TOL = 1e-12

# Legal successors of each figure.  Rows fall into five classes that share
# their successor sets.
_SUCCESSORS = {
    **dict.fromkeys(("BL", "CTR", "N1", "RC", "Weave"), ("BL", "BW", "N2", "NST", "OC")),
    **dict.fromkeys(("BW", "W"), ("PC",)),
    **dict.fromkeys(("DR", "R2", "RCC"), ("CTR", "DR", "LCC", "R1", "W")),
    **dict.fromkeys(("LCC", "N2", "OC", "PC"), ("N1", "PC", "RCC")),
    **dict.fromkeys(("NST", "R1"), ("R2", "RC", "Weave")),
}


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


def unbiased_fractions() -> list[list[Fraction]]:
    """Uniform-over-support transition table as exact rationals."""
    table = [[Fraction(0)] * N_LABELS for _ in range(N_LABELS)]
    for i, name in enumerate(SHORT_NAMES):
        succ = _SUCCESSORS[name]
        for s in succ:
            table[i][SHORT_NAMES.index(s)] = Fraction(1, len(succ))
    return table


def default_support() -> np.ndarray:
    return np.array([[f > 0 for f in row] for row in unbiased_fractions()])


@dataclass(frozen=True)
class TransitionMatrix:
    probs: np.ndarray
    support: np.ndarray
    counts: Optional[np.ndarray] = None  # pre-normalization counts when trained

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        support = np.array(self.support, dtype=bool)
        if probs.shape != (N_LABELS, N_LABELS) or support.shape != probs.shape:
            raise InputError(f"transition matrix must be {N_LABELS}x{N_LABELS}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise InputError("transition probabilities must be finite and non-negative")
        sums = probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_TOL):
            r = int(np.argmax(np.abs(sums - 1.0)))
            raise InputError(f"row {SHORT_NAMES[r]} sums to {sums[r]!r}")
        if not np.array_equal(probs > 0, support):
            raise InputError("positive entries do not match the support mask")
        object.__setattr__(self, "probs", _frozen(probs))
        object.__setattr__(self, "support", _frozen(support))
        if self.counts is not None:
            object.__setattr__(self, "counts", _frozen(np.asarray(self.counts, dtype=np.int64)))

    def __getitem__(self, ij):
        return self.probs[ij]

    def __eq__(self, other):
        if not isinstance(other, TransitionMatrix):
            return NotImplemented
        same_counts = (self.counts is None and other.counts is None) or (
            self.counts is not None and other.counts is not None
            and np.array_equal(self.counts, other.counts))
        return (np.array_equal(self.probs, other.probs)
                and np.array_equal(self.support, other.support) and same_counts)

    __hash__ = None

    def to_dict(self) -> dict:
        d = {
            "labels": list(SHORT_NAMES),
            "probs": self.probs.tolist(),
            "support": self.support.tolist(),
        }
        if self.counts is not None:
            d["counts"] = self.counts.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionMatrix":
        try:
            labels = d["labels"]
            probs, support = d["probs"], d["support"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"transition matrix JSON missing field {exc}") from None
        if list(labels) != list(SHORT_NAMES):
            raise SchemaError("transition matrix label order does not match the canonical order")
        return cls(np.array(probs, dtype=np.float64), np.array(support, dtype=bool), d.get("counts"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TransitionMatrix":
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(d)


def unbiased_matrix() -> TransitionMatrix:
    table = unbiased_fractions()
    probs = np.array([[float(f) for f in row] for row in table])
    return TransitionMatrix(probs, probs > 0)


def transition_counts(training: Iterable, support: Optional[np.ndarray] = None) -> np.ndarray:
    """Count consecutive label pairs; raises on any pair outside ``support``.

    ``training`` holds DanceSequences or plain label sequences (ids are then
    reported by position in the iterable).
    """
    if support is None:
        support = default_support()
    counts = np.zeros((N_LABELS, N_LABELS), dtype=np.int64)
    for n, seq in enumerate(training):
        dance_id = seq.id if isinstance(seq, DanceSequence) else str(n)
        idx = label_sequence(seq)
        if len(idx) < 2:
            continue
        src, dst = idx[:-1], idx[1:]
        bad = np.flatnonzero(~support[src, dst])
        if bad.size:
            p = int(bad[0])
            raise ImpossibleTransitionInData(
                dance_id, p + 1, (SHORT_NAMES[src[p]], SHORT_NAMES[dst[p]])
            )
        np.add.at(counts, (src, dst), 1)
    return counts


def trained_matrix(training: Iterable, support: Optional[np.ndarray] = None) -> TransitionMatrix:
    """Add-one smoothing restricted to the support: ``(1 + count) / row total``."""
    if support is None:
        support = default_support()
    counts = transition_counts(training, support)
    smoothed = np.where(support, 1 + counts, 0).astype(np.float64)
    probs = smoothed / smoothed.sum(axis=1, keepdims=True)
    return TransitionMatrix(probs, support, counts)


def row(matrix: TransitionMatrix, label) -> ProbVector:
    return ProbVector(matrix.probs[as_label(label).index])


def initial_distribution(first_labels: Optional[Iterable] = None) -> np.ndarray:
    """Uniform over all figures, or the empirical distribution of known first figures."""
    if first_labels is None:
        return np.full(N_LABELS, 1.0 / N_LABELS)
    idx = [as_label(x).index for x in first_labels]
    if not idx:
        return np.full(N_LABELS, 1.0 / N_LABELS)
    pi = np.bincount(idx, minlength=N_LABELS).astype(np.float64)
    return pi / pi.sum()


def predecessors(matrix: TransitionMatrix, label) -> list:
    j = as_label(label).index
    return [LABELS[i] for i in np.flatnonzero(matrix.support[:, j])]

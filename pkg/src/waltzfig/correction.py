"""Re-estimate each figure from its successor using the transition matrix.

For every position t > 0 the classifier's argmax ``j`` at t is taken as
correct, and the figure at t - 1 becomes ``argmax_i T[i, j] * p_{t-1}[i]``.
The last figure has no successor and keeps its raw label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from .core import LABELS, FigureLabel, as_prob_matrix
from .transitions import TransitionMatrix


@dataclass(frozen=True)
class CorrectionResult:
    raw_labels: tuple[FigureLabel, ...]
    corrected_labels: tuple[FigureLabel, ...]

    @property
    def changed(self) -> tuple[bool, ...]:
        return tuple(r != c for r, c in zip(self.raw_labels, self.corrected_labels))

    def raw_indices(self) -> np.ndarray:
        return np.array([l.index for l in self.raw_labels], dtype=np.int64)

    def corrected_indices(self) -> np.ndarray:
        return np.array([l.index for l in self.corrected_labels], dtype=np.int64)

    def __len__(self):
        return len(self.raw_labels)


def _probs(T) -> np.ndarray:
    return T.probs if isinstance(T, TransitionMatrix) else np.asarray(T, dtype=np.float64)


def correct_previous(p_prev: np.ndarray, successor: int, A: np.ndarray, fallback: int) -> int:
    scores = A[:, successor] * p_prev
    if not np.any(scores > 0):
        return fallback
    return int(np.argmax(scores))


def correct_indices(P: np.ndarray, T, chained: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Raw and corrected label indices for an (n, 16) posterior array.

    With ``chained`` the corrected label of t (rather than its raw argmax)
    serves as the successor when correcting t - 1.
    """
    A = _probs(T)
    raw = np.argmax(P, axis=1)
    n = len(P)
    if n == 0:
        return raw, raw.copy()
    if not chained:
        scores = A[:, raw[1:]].T * P[:-1]  # scores[t-1, i] = T[i, raw[t]] * p_{t-1}[i]
        best = np.argmax(scores, axis=1)
        dead = ~np.any(scores > 0, axis=1)
        corrected = np.concatenate([np.where(dead, raw[:-1], best), raw[-1:]])
        return raw, corrected
    corrected = raw.copy()
    for t in range(n - 1, 0, -1):
        corrected[t - 1] = correct_previous(P[t - 1], corrected[t], A, raw[t - 1])
    return raw, corrected


def correct_sequence(posteriors, T, chained: bool = False) -> CorrectionResult:
    P = as_prob_matrix(posteriors)
    if len(P) == 0:
        raise ValueError("correct_sequence needs at least one posterior")
    raw, corrected = correct_indices(P, T, chained)
    return CorrectionResult(tuple(LABELS[i] for i in raw), tuple(LABELS[i] for i in corrected))


@dataclass(frozen=True)
class StreamUpdate:
    position: int
    label: FigureLabel
    final: bool


class StreamingCorrector:
    """One-step-lagged online correction.

    Each :meth:`push` returns the final label of the previous position (once a
    successor is known) and a provisional label for the new one.  Finals
    always agree with :func:`correct_sequence` on the same prefix.
    """

    def __init__(self, T):
        self._A = _probs(T)
        self._prev: Optional[np.ndarray] = None
        self._prev_raw: Optional[int] = None
        self._n = 0
        self.finals: list[FigureLabel] = []
        self.raws: list[FigureLabel] = []
        self._closed = False

    def push(self, p) -> list[StreamUpdate]:
        if self._closed:
            raise RuntimeError("stream already closed")
        p = as_prob_matrix(np.asarray(p, dtype=np.float64)[None, :])[0]
        raw = int(np.argmax(p))
        out = []
        if self._prev is not None:
            fixed = correct_previous(self._prev, raw, self._A, self._prev_raw)
            self.finals.append(LABELS[fixed])
            out.append(StreamUpdate(self._n - 1, LABELS[fixed], True))
        self.raws.append(LABELS[raw])
        out.append(StreamUpdate(self._n, LABELS[raw], False))
        self._prev, self._prev_raw = p, raw
        self._n += 1
        return out

    def close(self) -> list[StreamUpdate]:
        """Finalize the last position, which keeps its raw label."""
        self._closed = True
        if self._prev is None:
            return []
        self.finals.append(LABELS[self._prev_raw])
        return [StreamUpdate(self._n - 1, LABELS[self._prev_raw], True)]

    def result(self) -> CorrectionResult:
        if not self._closed:
            raise RuntimeError("close the stream before taking the result")
        return CorrectionResult(tuple(self.raws), tuple(self.finals))


def correct_stream(source: Iterable, T) -> Iterator[StreamUpdate]:
    """Generator form of :class:`StreamingCorrector` over an iterable of posteriors."""
    sc = StreamingCorrector(T)
    for p in source:
        yield from sc.push(p)
    yield from sc.close()

"""Gaussian HMM over per-axis mean features.

Each figure sample is reduced to the mean of its 100 readings per axis, and
the dance becomes a sequence of 4-vectors emitted by hidden states with
diagonal Gaussian densities.  EM works entirely in log space; zeros in the
initial transition matrix stay zero because their log is -inf.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import N_LABELS, SHORT_NAMES, DanceSequence, FigureSample
from .errors import DegenerateFit, InputError, SchemaError
from .transitions import TransitionMatrix

VAR_FLOOR = 1e-6
STARVED = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


def reduce_means(sample) -> np.ndarray:
    values = sample.values if isinstance(sample, FigureSample) else np.asarray(sample, dtype=np.float64)
    return values.mean(axis=-1)


def dance_features(dance: DanceSequence) -> np.ndarray:
    return dance.values().mean(axis=-1)


def _log(a) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(a, dtype=np.float64))


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out.squeeze(axis) if axis is not None else out.reshape(())


@dataclass(frozen=True)
class GaussianHmmModel:
    pi: np.ndarray  # (n,)
    transmat: np.ndarray  # (n, n)
    means: np.ndarray  # (n, d)
    variances: np.ndarray  # (n, d)
    loglik_trace: tuple = field(default=(), compare=False)

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.float64)
        A = np.asarray(self.transmat, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        n = pi.shape[0]
        if A.shape != (n, n) or mu.shape[0] != n or var.shape != mu.shape:
            raise InputError("inconsistent HMM parameter shapes")
        if abs(pi.sum() - 1.0) > 1e-9 or np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-9):
            raise InputError("pi and transition rows must be distributions")
        if np.any(var < VAR_FLOOR * (1 - 1e-12)):
            raise InputError(f"variances must be >= {VAR_FLOOR}")
        for name, arr in (("pi", pi), ("transmat", A), ("means", mu), ("variances", var)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    def to_dict(self) -> dict:
        return {
            "labels": list(SHORT_NAMES) if self.n_states == N_LABELS else None,
            "pi": self.pi.tolist(),
            "transmat": self.transmat.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "loglik_trace": list(self.loglik_trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianHmmModel":
        try:
            return cls(np.array(d["pi"]), np.array(d["transmat"]), np.array(d["means"]),
                       np.array(d["variances"]), tuple(d.get("loglik_trace", ())))
        except KeyError as exc:
            raise SchemaError(f"HMM JSON missing field {exc}") from None


def log_emissions(model: GaussianHmmModel, X) -> np.ndarray:
    """(T, n) matrix of per-state diagonal-Gaussian log densities."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    diff = X[:, None, :] - model.means[None, :, :]
    return -0.5 * np.sum(_LOG_2PI + np.log(model.variances)[None] + diff**2 / model.variances[None],
                         axis=2)


def log_emission(model: GaussianHmmModel, state: int, x) -> float:
    return float(log_emissions(model, np.asarray(x)[None, :])[0, state])


def forward(model: GaussianHmmModel, X) -> tuple[np.ndarray, float]:
    """Log forward variables and total log-likelihood of one sequence."""
    B = log_emissions(model, X)
    logA = _log(model.transmat)
    la = np.empty_like(B)
    la[0] = _log(model.pi) + B[0]
    for t in range(1, len(B)):
        la[t] = logsumexp(la[t - 1][:, None] + logA, axis=0) + B[t]
    return la, float(logsumexp(la[-1]))


def _pad(sequences):
    """Stack ragged sequences into (S, L, d) with a validity mask."""
    L = max(len(X) for X in sequences)
    d = sequences[0].shape[1]
    Xp = np.zeros((len(sequences), L, d))
    mask = np.zeros((len(sequences), L), dtype=bool)
    for s, X in enumerate(sequences):
        Xp[s, :len(X)] = X
        mask[s, :len(X)] = True
    return Xp, mask


def _e_step(model: GaussianHmmModel, padded):
    # all sequences advance together; padded steps carry alpha forward and
    # leave beta at zero, so they add nothing to any statistic
    Xp, mask = padded
    S, L, d = Xp.shape
    n = model.n_states
    logA = _log(model.transmat)
    B = log_emissions(model, Xp.reshape(S * L, d)).reshape(S, L, n)
    la = np.empty_like(B)
    la[:, 0] = _log(model.pi)[None] + B[:, 0]
    for t in range(1, L):
        step = logsumexp(la[:, t - 1, :, None] + logA[None], axis=1) + B[:, t]
        la[:, t] = np.where(mask[:, t, None], step, la[:, t - 1])
    ll = logsumexp(la[:, -1], axis=1)
    lb = np.zeros_like(B)
    for t in range(L - 2, -1, -1):
        step = logsumexp(logA[None] + (B[:, t + 1] + lb[:, t + 1])[:, None, :], axis=2)
        lb[:, t] = np.where(mask[:, t + 1, None], step, 0.0)
    gamma = np.where(mask[:, :, None], np.exp(la + lb - ll[:, None, None]), 0.0)
    xi_sum = np.zeros((n, n))
    if L > 1:
        lxi = (la[:, :-1, :, None] + logA[None, None]
               + (B[:, 1:] + lb[:, 1:])[:, :, None, :] - ll[:, None, None, None])
        xi_sum = np.where(mask[:, 1:, None, None], np.exp(lxi), 0.0).sum(axis=(0, 1))
    G = gamma.reshape(S * L, n)
    Xf = Xp.reshape(S * L, d)
    stats = (gamma[:, 0].sum(axis=0), xi_sum, G.sum(axis=0), G.T @ Xf, G.T @ (Xf**2))
    return float(ll.sum()), stats


def _m_step(model: GaussianHmmModel, stats, n_seq: int, freeze_transitions: bool):
    first, xi_sum, w, wx, wxx = stats
    starved = np.flatnonzero(w < STARVED)
    if starved.size:
        raise DegenerateFit(f"state {int(starved[0])} received total responsibility "
                            f"{w[starved[0]]:.3g} < {STARVED}")
    means = wx / w[:, None]
    variances = np.maximum(wxx / w[:, None] - means**2, VAR_FLOOR)
    pi = first / n_seq
    A = model.transmat
    if not freeze_transitions:
        rows = xi_sum.sum(axis=1, keepdims=True)
        A = np.where(rows > 0, xi_sum / np.where(rows > 0, rows, 1.0), model.transmat)
    return replace(model, pi=pi, transmat=A, means=means, variances=variances)


def fit_em(features: Sequence, T_init, pi_init, means_init, variances_init,
           max_iters: int = 100, tol: float = 1e-4,
           freeze_transitions: bool = False) -> GaussianHmmModel:
    """Baum-Welch from the given starting point.

    Stops when an iteration improves the total log-likelihood by less than
    ``tol`` or after ``max_iters`` M-steps.  The returned model carries the
    log-likelihood of every parameter set visited, in order.
    """
    seqs = [np.atleast_2d(np.asarray(X, dtype=np.float64)) for X in features]
    if not seqs or any(len(X) == 0 for X in seqs):
        raise InputError("fit_em needs at least one non-empty sequence")
    A0 = T_init.probs if isinstance(T_init, TransitionMatrix) else np.asarray(T_init, dtype=np.float64)
    model = GaussianHmmModel(np.asarray(pi_init, dtype=np.float64), A0, means_init,
                             np.maximum(np.asarray(variances_init, dtype=np.float64), VAR_FLOOR))
    padded = _pad(seqs)
    trace = []
    for it in range(max_iters + 1):
        ll, stats = _e_step(model, padded)
        trace.append(ll)
        if it > 0 and ll - trace[-2] < tol:
            break
        if it == max_iters:
            break
        model = _m_step(model, stats, len(seqs), freeze_transitions)
    return replace(model, loglik_trace=tuple(trace))


def viterbi(model: GaussianHmmModel, X) -> np.ndarray:
    """Most probable state path; ties resolve to the lower state index."""
    B = log_emissions(model, X)
    if len(B) == 0:
        raise InputError("viterbi needs a non-empty sequence")
    logA = _log(model.transmat)
    n_t, n = B.shape
    back = np.zeros((n_t, n), dtype=np.int64)
    score = _log(model.pi) + B[0]
    for t in range(1, n_t):
        cand = score[:, None] + logA
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(n)] + B[t]
    path = np.empty(n_t, dtype=np.int64)
    path[-1] = int(np.argmax(score))
    for t in range(n_t - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def path_log_prob(model: GaussianHmmModel, X, path) -> float:
    B = log_emissions(model, X)
    logA = _log(model.transmat)
    lp = _log(model.pi)[path[0]] + B[0, path[0]]
    for t in range(1, len(path)):
        lp += logA[path[t - 1], path[t]] + B[t, path[t]]
    return float(lp)


def match_states(decoded, truth, n_states: int = N_LABELS, n_labels: int = N_LABELS) -> np.ndarray:
    """Map each state to its majority true label (never-decoded states get label 0)."""
    dec = np.concatenate([np.asarray(p, dtype=np.int64).ravel() for p in decoded]) if len(decoded) else np.zeros(0, np.int64)
    tru = np.concatenate([np.asarray(p, dtype=np.int64).ravel() for p in truth]) if len(truth) else np.zeros(0, np.int64)
    if dec.shape != tru.shape:
        raise InputError("decoded paths and truth labels are not aligned")
    tally = np.zeros((n_states, n_labels), dtype=np.int64)
    np.add.at(tally, (dec, tru), 1)
    return np.argmax(tally, axis=1)


def emission_init(features: Sequence, labels: Sequence, n_states: int = N_LABELS):
    """Per-label sample means and variances; labels without data use pooled statistics."""
    X = np.concatenate([np.atleast_2d(f) for f in features])
    y = np.concatenate([np.asarray(l, dtype=np.int64) for l in labels])
    pooled_mu, pooled_var = X.mean(axis=0), np.maximum(X.var(axis=0), VAR_FLOOR)
    means = np.tile(pooled_mu, (n_states, 1))
    variances = np.tile(pooled_var, (n_states, 1))
    for s in range(n_states):
        rows = X[y == s]
        if len(rows):
            means[s] = rows.mean(axis=0)
            variances[s] = np.maximum(rows.var(axis=0), VAR_FLOOR)
    return means, variances


@dataclass(frozen=True)
class GhmmClassifier:
    """A fitted model plus the state-to-label map learned on the training data."""

    model: GaussianHmmModel
    state_map: np.ndarray

    def predict(self, dance: DanceSequence) -> np.ndarray:
        return self.state_map[viterbi(self.model, dance_features(dance))]

    def to_dict(self) -> dict:
        d = self.model.to_dict()
        d["state_map"] = [SHORT_NAMES[i] for i in self.state_map]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GhmmClassifier":
        try:
            state_map = np.array([SHORT_NAMES.index(s) for s in d["state_map"]])
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"bad state_map in HMM JSON: {exc}") from None
        return cls(GaussianHmmModel.from_dict(d), state_map)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GhmmClassifier":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def train_ghmm(dances: Sequence[DanceSequence], T_init: TransitionMatrix,
               max_iters: int = 100, tol: float = 1e-4, freeze_transitions: bool = False,
               use_first_labels: bool = True) -> GhmmClassifier:
    """Fit on labeled dances, then label states by majority vote over the training decode."""
    from .transitions import initial_distribution

    feats = [dance_features(d) for d in dances]
    labels = [d.label_indices() for d in dances]
    means, variances = emission_init(feats, labels)
    pi = initial_distribution([l[0] for l in labels] if use_first_labels else None)
    model = fit_em(feats, T_init, pi, means, variances, max_iters, tol, freeze_transitions)
    decoded = [viterbi(model, f) for f in feats]
    return GhmmClassifier(model, match_states(decoded, labels))

"""Leave-dances-out cross-validation, confusion matrices and correction gains."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import N_LABELS, SHORT_NAMES, Dataset
from .correction import correct_indices
from .errors import InputError, LengthMismatch, PipelineError, SchemaError, TooFewDances
from .transitions import trained_matrix, unbiased_matrix

N_FOLDS = 7
CLASSIFIERS = ("mlp", "ghmm", "posteriors")


@dataclass(frozen=True)
class FoldSpec:
    assignments: Mapping[str, int]
    seed: int
    n_folds: int = N_FOLDS

    def folds(self) -> list[list[str]]:
        out: list[list[str]] = [[] for _ in range(self.n_folds)]
        for did, f in self.assignments.items():
            out[f].append(did)
        return out


def make_folds(dataset, seed: int, n_folds: int = N_FOLDS) -> FoldSpec:
    """Shuffle dance ids with ``seed`` and deal them into near-equal folds."""
    ids = list(dataset.ids if isinstance(dataset, Dataset) else dataset)
    if len(ids) < n_folds:
        raise TooFewDances(f"{len(ids)} dances cannot fill {n_folds} folds")
    perm = np.random.default_rng(seed).permutation(len(ids))
    assignments = {}
    for f, chunk in enumerate(np.array_split(perm, n_folds)):
        for i in chunk:
            assignments[ids[i]] = f
    return FoldSpec(assignments, seed, n_folds)


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray
    normalized: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def off_diagonal(self, truth: int, pred: int) -> float:
        return float(self.normalized[truth, pred])


def confusion_from_counts(counts: np.ndarray) -> ConfusionMatrix:
    counts = np.asarray(counts, dtype=np.int64)
    rows = counts.sum(axis=1, keepdims=True)
    normalized = np.divide(counts, rows, out=np.zeros(counts.shape), where=rows > 0)
    return ConfusionMatrix(counts, normalized)


def confusion(pred, truth, n_labels: int = N_LABELS) -> ConfusionMatrix:
    """Counts indexed ``[truth, pred]`` and their row-normalized rates."""
    pred = np.asarray(pred, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if pred.shape != truth.shape:
        raise LengthMismatch(f"{len(pred)} predictions for {len(truth)} true labels")
    counts = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return confusion_from_counts(counts)


@dataclass(frozen=True)
class PipelineConfig:
    classifier: str = "mlp"
    n_folds: int = N_FOLDS
    seed: int = 0
    matrix: str = "trained"
    chained: bool = False
    depth: int = 2
    width: int = 64
    epochs: int = 150
    batch_size: int = 32
    alpha: float = 1e-3
    hmm_max_iters: int = 100
    hmm_tol: float = 1e-4
    freeze_transitions: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.classifier not in CLASSIFIERS:
            raise InputError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.matrix not in ("trained", "unbiased"):
            raise InputError(f"matrix must be 'trained' or 'unbiased', got {self.matrix!r}")


@dataclass
class FoldResult:
    fold: int
    train_ids: list
    test_ids: list
    n_figures: int
    raw_accuracy: float
    corrected_accuracy: Optional[float]
    truth: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    corrected: dict = field(default_factory=dict)
    posteriors: dict = field(default_factory=dict, repr=False)

    @property
    def improvement_pp(self) -> Optional[float]:
        if self.corrected_accuracy is None:
            return None
        return 100.0 * (self.corrected_accuracy - self.raw_accuracy)


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _run_fold(dataset: Dataset, config: PipelineConfig, fold: int, test_ids: list,
              posteriors: Optional[Mapping[str, np.ndarray]]) -> FoldResult:
    test_set = set(test_ids)
    train = [d for d in dataset if d.id not in test_set]
    test = [d for d in dataset if d.id in test_set]
    train_ids = [d.id for d in train]
    if test_set & set(train_ids):
        raise PipelineError(f"fold {fold}: test dances leaked into training")
    try:
        T = trained_matrix(train) if config.matrix == "trained" else unbiased_matrix()
        post: dict[str, np.ndarray] = {}
        labels: dict[str, np.ndarray] = {}
        if config.classifier == "mlp":
            from .nn import MlpSpec, predict_proba, train as train_mlp

            X, y = Dataset(tuple(train)).stack()
            spec = MlpSpec(config.depth, config.width, fold_seed(config.seed, fold))
            model = train_mlp(spec, X, y, config.epochs, config.batch_size, config.alpha)
            for d in test:
                post[d.id] = predict_proba(model, d.values())
        elif config.classifier == "ghmm":
            from .ghmm import train_ghmm

            clf = train_ghmm(train, T, config.hmm_max_iters, config.hmm_tol,
                             config.freeze_transitions)
            for d in test:
                labels[d.id] = clf.predict(d)
        else:
            for d in test:
                if d.id not in posteriors:
                    raise InputError(f"no posteriors supplied for dance {d.id!r}")
                P = np.asarray(posteriors[d.id])
                if len(P) != len(d):
                    raise LengthMismatch(f"dance {d.id!r}: {len(P)} posteriors for {len(d)} figures")
                post[d.id] = P
    except Exception as exc:
        exc.args = (f"fold {fold}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
        raise

    truth, raw, corrected = {}, {}, {}
    n = n_raw = n_cor = 0
    for d in test:
        t = d.label_indices()
        truth[d.id] = t
        if d.id in post:
            r, c = correct_indices(post[d.id], T, config.chained)
            corrected[d.id] = c
            n_cor += int(np.sum(c == t))
        else:
            r = labels[d.id]
        raw[d.id] = r
        n_raw += int(np.sum(r == t))
        n += len(t)
    has_corr = config.classifier != "ghmm"
    return FoldResult(fold, train_ids, list(test_ids), n, n_raw / n,
                      n_cor / n if has_corr else None, truth, raw, corrected, post)


@dataclass
class EvalReport:
    config: dict
    folds: list
    confusion_raw: ConfusionMatrix
    confusion_corrected: Optional[ConfusionMatrix]

    @property
    def raw_accuracies(self) -> list[float]:
        return [f.raw_accuracy for f in self.folds]

    @property
    def corrected_accuracies(self) -> Optional[list[float]]:
        if any(f.corrected_accuracy is None for f in self.folds):
            return None
        return [f.corrected_accuracy for f in self.folds]

    @property
    def mean_raw(self) -> float:
        return float(np.mean(self.raw_accuracies))

    @property
    def mean_corrected(self) -> Optional[float]:
        c = self.corrected_accuracies
        return None if c is None else float(np.mean(c))

    @property
    def improvements_pp(self) -> list[float]:
        return [f.improvement_pp for f in self.folds if f.improvement_pp is not None]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "folds": [{
                "fold": f.fold,
                "test_ids": f.test_ids,
                "train_ids": f.train_ids,
                "n_figures": f.n_figures,
                "raw_accuracy": f.raw_accuracy,
                "corrected_accuracy": f.corrected_accuracy,
                "improvement_pp": f.improvement_pp,
            } for f in self.folds],
            "mean_raw_accuracy": self.mean_raw,
            "mean_corrected_accuracy": self.mean_corrected,
            "labels": list(SHORT_NAMES),
            "confusion_raw": self.confusion_raw.counts.tolist(),
            "confusion_corrected": (None if self.confusion_corrected is None
                                    else self.confusion_corrected.counts.tolist()),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        try:
            folds = [FoldResult(f["fold"], f["train_ids"], f["test_ids"], f["n_figures"],
                                f["raw_accuracy"], f["corrected_accuracy"]) for f in d["folds"]]
            cc = d.get("confusion_corrected")
            return cls(d.get("config", {}), folds, confusion_from_counts(np.array(d["confusion_raw"])),
                       None if cc is None else confusion_from_counts(np.array(cc)))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"not an evaluation report: missing or bad field {exc}") from None

    def text_table(self) -> str:
        lines = [f"{'fold':>4}  {'dances':>6}  {'figures':>7}  {'raw %':>7}  {'corrected %':>11}  {'gain pp':>7}"]
        for f in self.folds:
            cor = "-" if f.corrected_accuracy is None else f"{100 * f.corrected_accuracy:.2f}"
            gain = "-" if f.improvement_pp is None else f"{f.improvement_pp:+.2f}"
            lines.append(f"{f.fold:>4}  {len(f.test_ids):>6}  {f.n_figures:>7}  "
                         f"{100 * f.raw_accuracy:>7.2f}  {cor:>11}  {gain:>7}")
        mc = self.mean_corrected
        lines.append(f"{'mean':>4}  {'':>6}  {sum(f.n_figures for f in self.folds):>7}  "
                     f"{100 * self.mean_raw:>7.2f}  "
                     f"{'-' if mc is None else f'{100 * mc:.2f}':>11}  "
                     f"{'-' if mc is None else f'{100 * (mc - self.mean_raw):+.2f}':>7}")
        return "\n".join(lines) + "\n"


def run_cv(dataset: Dataset, config: PipelineConfig = PipelineConfig(),
           posteriors: Optional[Mapping[str, np.ndarray]] = None,
           folds: Optional[FoldSpec] = None) -> EvalReport:
    """Train on all folds but one, score the held-out dances, repeat for every fold.

    Each fold rebuilds its own trained transition matrix and classifier from
    its training dances only.  Mean accuracy is the unweighted fold mean.
    """
    if config.classifier == "posteriors" and posteriors is None:
        raise InputError("classifier 'posteriors' needs a posterior mapping")
    if folds is None:
        folds = make_folds(dataset, config.seed, config.n_folds)
    groups = folds.folds()
    args = [(dataset, config, f, groups[f], posteriors) for f in range(len(groups))]
    if config.jobs > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=min(config.jobs, len(groups))) as ex:
            results = list(ex.map(_run_fold, *zip(*args)))
    else:
        results = [_run_fold(*a) for a in args]
    truth = np.concatenate([np.concatenate(list(r.truth.values())) for r in results])
    raw = np.concatenate([np.concatenate(list(r.raw.values())) for r in results])
    cm_raw = confusion(raw, truth)
    cm_cor = None
    if config.classifier != "ghmm":
        cor = np.concatenate([np.concatenate(list(r.corrected.values())) for r in results])
        cm_cor = confusion(cor, truth)
    return EvalReport(asdict(config), results, cm_raw, cm_cor)


@dataclass(frozen=True)
class ImprovementStats:
    mean: float
    min: float
    max: float
    bin_edges: tuple
    counts: tuple

    def to_dict(self) -> dict:
        return asdict(self)


def improvement_stats(source) -> ImprovementStats:
    """Summary of per-fold (or per-run) correction gains in percentage points.

    Histogram bins are 1 point wide and aligned to whole points.
    """
    vals = np.asarray(source.improvements_pp if isinstance(source, EvalReport) else list(source),
                      dtype=np.float64)
    if vals.size == 0:
        raise InputError("no improvements to summarize")
    lo = math.floor(vals.min())
    hi = max(math.floor(vals.max()) + 1, lo + 1)
    edges = np.arange(lo, hi + 1, dtype=np.float64)
    counts, _ = np.histogram(vals, bins=edges)
    return ImprovementStats(float(vals.mean()), float(vals.min()), float(vals.max()),
                            tuple(edges.tolist()), tuple(int(c) for c in counts))


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"{len(pred)} predictions for {len(truth)} true labels")
    return float(np.mean(pred == truth))

"""On-disk formats: sample archives, label/posterior/correction CSVs, JSON helpers.

Writers are byte-deterministic: the same data always produce the same bytes.
"""

from __future__ import annotations

import csv
import io
import json
import zipfile
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import SHORT_NAMES, DanceSequence, Dataset, FigureSample, label_at, label_from_short_name
from .correction import CorrectionResult
from .errors import SchemaError, UnknownLabel

POSTERIOR_SUM_TOL = 1e-6
_FIXED_ZIP_TIME = (1980, 1, 1, 0, 0, 0)


def write_npz(path, **arrays) -> None:
    """``np.savez`` equivalent with fixed member timestamps."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_FIXED_ZIP_TIME)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def save_samples(dataset: Dataset, path) -> None:
    values, ids, pos, lab = [], [], [], []
    for d in dataset:
        values.append(d.values())
        for k, f in enumerate(d.figures):
            ids.append(d.id)
            pos.append(k)
            lab.append(-1 if f.label is None else f.label.index)
    meta = json.dumps({d.id: {"tempo_bpm": d.tempo_bpm, "intro_s": d.intro_s} for d in dataset},
                      sort_keys=True)
    write_npz(
        path,
        values=np.concatenate(values) if values else np.zeros((0, 4, 100)),
        dance_id=np.array(ids, dtype=str),
        position=np.array(pos, dtype=np.int64),
        label=np.array(lab, dtype=np.int64),
        meta=np.array(meta),
    )


def load_samples(path) -> Dataset:
    try:
        with np.load(path, allow_pickle=False) as z:
            values, ids, pos, lab = z["values"], z["dance_id"], z["position"], z["label"]
            meta = json.loads(str(z["meta"])) if "meta" in z.files else {}
    except (KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise SchemaError(f"{path}: not a sample archive ({exc})") from None
    order: list[str] = []
    groups: dict[str, list] = {}
    for i, did in enumerate(ids.tolist()):
        if did not in groups:
            groups[did] = []
            order.append(did)
        groups[did].append((int(pos[i]), i))
    dances = []
    for did in order:
        rows = sorted(groups[did])
        if [p for p, _ in rows] != list(range(len(rows))):
            raise SchemaError(f"{path}: positions of dance {did!r} are not 0..n-1")
        figs = tuple(FigureSample(values[i], None if lab[i] < 0 else label_at(lab[i])) for _, i in rows)
        m = meta.get(did, {})
        dances.append(DanceSequence(did, figs, m.get("tempo_bpm", 28.5), m.get("intro_s", 0.0)))
    return Dataset(tuple(dances))


def write_labels_csv(path, sequences: Mapping[str, Iterable]) -> None:
    """``dance_id,position,label`` rows, one per figure."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dance_id", "position", "label"])
        for did, labs in sequences.items():
            for k, lab in enumerate(labs):
                w.writerow([did, k, str(lab)])


def read_labels_csv(path) -> dict[str, list[int]]:
    out: dict[str, dict[int, int]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["dance_id", "position", "label"]:
            raise SchemaError(f"{path}: line 1: expected header dance_id,position,label")
        for lineno, row in enumerate(r, start=2):
            if len(row) != 3:
                raise SchemaError(f"{path}: line {lineno}: expected 3 columns, got {len(row)}")
            try:
                pos = int(row[1])
                idx = label_from_short_name(row[2]).index
            except (ValueError, UnknownLabel) as exc:
                raise SchemaError(f"{path}: line {lineno}: {exc}") from None
            out.setdefault(row[0], {})[pos] = idx
    return {did: _ordered(path, did, d) for did, d in out.items()}


def _ordered(path, did, by_pos: dict) -> list:
    if sorted(by_pos) != list(range(len(by_pos))):
        raise SchemaError(f"{path}: positions of dance {did!r} are not 0..n-1")
    return [by_pos[k] for k in range(len(by_pos))]


POSTERIOR_HEADER = ["dance_id", "position", *SHORT_NAMES]


def write_posteriors_csv(path, posteriors: Mapping[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSTERIOR_HEADER)
        for did, P in posteriors.items():
            for k, p in enumerate(np.asarray(P)):
                w.writerow([did, k, *(repr(float(x)) for x in p)])


def read_posteriors_csv(path) -> dict[str, np.ndarray]:
    """Per-dance (n, 16) posterior arrays.

    Rows must be non-negative and sum to 1 within 1e-6; they are then
    renormalized so downstream code sees exact distributions.
    """
    out: dict[str, dict[int, np.ndarray]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != POSTERIOR_HEADER:
            raise SchemaError(f"{path}: line 1: expected header {','.join(POSTERIOR_HEADER)}")
        for lineno, row in enumerate(r, start=2):
            if len(row) != len(POSTERIOR_HEADER):
                raise SchemaError(f"{path}: line {lineno}: expected {len(POSTERIOR_HEADER)} "
                                  f"columns, got {len(row)}")
            try:
                pos = int(row[1])
            except ValueError:
                raise SchemaError(f"{path}: line {lineno}, column position: not an integer") from None
            p = np.empty(len(SHORT_NAMES))
            for c, txt in enumerate(row[2:]):
                try:
                    p[c] = float(txt)
                except ValueError:
                    raise SchemaError(f"{path}: line {lineno}, column {SHORT_NAMES[c]}: "
                                      f"not a number: {txt!r}") from None
                if not np.isfinite(p[c]) or p[c] < 0:
                    raise SchemaError(f"{path}: line {lineno}, column {SHORT_NAMES[c]}: "
                                      f"probability must be finite and >= 0")
            s = p.sum()
            if abs(s - 1.0) > POSTERIOR_SUM_TOL:
                raise SchemaError(f"{path}: line {lineno}: probabilities sum to {s:.6g}, not 1")
            by_pos = out.setdefault(row[0], {})
            if pos in by_pos:
                raise SchemaError(f"{path}: line {lineno}: duplicate position {pos} for dance {row[0]!r}")
            by_pos[pos] = p / s
    return {did: np.stack(_ordered(path, did, d)) for did, d in out.items()}


def write_corrections_csv(path, results: Mapping[str, CorrectionResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dance_id", "position", "raw", "corrected", "changed"])
        for did, res in results.items():
            for k, (r, c, ch) in enumerate(zip(res.raw_labels, res.corrected_labels, res.changed)):
                w.writerow([did, k, r.short_name, c.short_name, int(ch)])


def read_corrections_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_grid_csv(path, matrix, fmt=repr) -> None:
    """Square label-indexed grid with a header row and a leading label column."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["truth\\pred", *SHORT_NAMES])
        for name, row in zip(SHORT_NAMES, np.asarray(matrix)):
            w.writerow([name, *(fmt(x.item()) for x in row)])

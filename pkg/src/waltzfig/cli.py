"""``waltzfig`` command line: simulate, ingest, train, evaluate, correct, report.

Every command writes its artifacts into ``--out`` together with a
``manifest.json`` recording the argv, seed, input and output hashes.
Artifacts are byte-deterministic for identical flags, inputs and seed; only
the manifest's timestamp differs between runs.

Exit codes: 0 success, 2 usage error, 3 bad input, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import InputError

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3, 4
CONFIG_DIR_ENV = "WALTZFIG_CONFIG_DIR"
MANIFEST = "manifest.json"


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list
    config: Optional[str]
    seed: Optional[int]
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)  # path relative to --out -> sha256
    version: str = __version__
    timestamp: str = ""

    def write(self, out_dir: Path) -> None:
        with open(out_dir / MANIFEST, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(f"{path}: not a run manifest ({exc})") from None


class _Run:
    """Collects inputs and outputs of one command, then writes the manifest."""

    def __init__(self, args, argv):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(args.command, list(argv), getattr(args, "config", None),
                                    getattr(args, "seed", None))

    def input(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"no such file: {p}")
        if p.is_file():
            self.manifest.inputs[str(p)] = sha256(p)
        return p

    def output(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.manifest.outputs[name] = None
        return p

    def finish(self) -> None:
        for name in self.manifest.outputs:
            self.manifest.outputs[name] = sha256(self.out / name)
        self.manifest.timestamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        self.manifest.write(self.out)


# ---------------------------------------------------------------- commands

def _synth_config(args):
    from .synth import default_config, load_config

    if args.config:
        return load_config(args.config)
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir and (Path(env_dir) / "synth.json").exists():
        args.config = str(Path(env_dir) / "synth.json")
        return load_config(args.config)
    return default_config()


def cmd_simulate(args, run: _Run) -> None:
    from dataclasses import replace

    from .formats import save_samples, write_json, write_labels_csv
    from .ingest import write_log
    from .synth import config_to_dict, gen_corpus, with_identical_templates
    from .core import Dataset

    if args.config:
        run.input(args.config)
    cfg = _synth_config(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    run.manifest.seed = cfg.seed
    if args.length is not None:
        cfg = replace(cfg, length_range=(args.length, args.length))
    for pair in args.identical or ():
        a, _, b = pair.partition(":")
        if not b:
            raise InputError(f"--identical expects SRC:DST, got {pair!r}")
        cfg = with_identical_templates(cfg, a, b)
    n = args.n_dances if args.n_dances is not None else cfg.n_dances
    corpus = gen_corpus(cfg, n, jobs=args.jobs)
    for dance, log in corpus:
        write_log(log, run.output(f"logs/{dance.id}.csv"))
    write_labels_csv(run.output("labels.csv"), {d.id: d.labels for d, _ in corpus})
    save_samples(Dataset(tuple(d for d, _ in corpus)), run.output("ideal_samples.npz"))
    write_json(run.output("dances.json"),
               {d.id: {"tempo_bpm": d.tempo_bpm, "intro_s": d.intro_s, "n_figures": len(d)}
                for d, _ in corpus})
    write_json(run.output("config.json"), config_to_dict(cfg))
    print(f"wrote {len(corpus)} dances to {run.out}")


def _log_paths(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out += sorted(p.glob("*.csv"))
        else:
            out.append(p)
    if not out:
        raise InputError("no log files given")
    return out


def cmd_ingest(args, run: _Run) -> None:
    from .core import DanceSequence, Dataset
    from .formats import read_labels_csv, save_samples
    from .ingest import SegmentationSpec, extract_samples, parse_log

    labels = read_labels_csv(run.input(args.labels)) if args.labels else {}
    meta = {}
    if args.dances:
        with open(run.input(args.dances), encoding="utf-8") as fh:
            meta = json.load(fh)
    dances = []
    for path in _log_paths(args.logs):
        run.input(path)
        did = path.stem
        m = meta.get(did, {})
        n = args.figures if args.figures is not None else m.get("n_figures")
        if n is None and did in labels:
            n = len(labels[did])
        if n is None:
            raise InputError(f"{path}: figure count unknown; pass --figures, --labels or --dances")
        tempo = args.tempo if args.tempo is not None else m.get("tempo_bpm", 28.5)
        intro = args.intro if args.intro is not None else m.get("intro_s", 10.0)
        spec = SegmentationSpec(tempo, intro, n, args.extension)
        dl = labels.get(did)
        if dl is not None and len(dl) != n:
            raise InputError(f"{path}: {len(dl)} labels for {n} figures")
        try:
            figs = extract_samples(parse_log(path), spec, unwrap=not args.no_unwrap, labels=dl)
        except InputError as exc:
            exc.args = (f"{path}: {exc}",)
            raise
        dances.append(DanceSequence(did, tuple(figs), tempo, intro))
    save_samples(Dataset(tuple(dances)), run.output("samples.npz"))
    print(f"ingested {sum(len(d) for d in dances)} figures from {len(dances)} logs")


def _labeled(dataset):
    for d in dataset:
        if any(f.label is None for f in d.figures):
            raise InputError(f"dance {d.id!r} has unlabeled figures")
    return dataset


def cmd_train_nn(args, run: _Run) -> None:
    from .formats import load_samples
    from .nn import MlpSpec, train
    from .transitions import trained_matrix

    ds = _labeled(load_samples(run.input(args.samples)))
    X, y = ds.stack()
    model = train(MlpSpec(args.depth, args.width, args.seed), X, y, args.epochs, args.batch_size, args.alpha)
    model.save(run.output("model.json"))
    trained_matrix(ds).save(run.output("transitions.json"))
    print(f"trained on {len(y)} figures; final epoch loss {model.loss_trace[-1]:.4f}"
          if model.loss_trace else f"initialized model for {len(y)} figures")


def cmd_train_hmm(args, run: _Run) -> None:
    from .formats import load_samples
    from .ghmm import train_ghmm
    from .transitions import trained_matrix, unbiased_matrix

    ds = _labeled(load_samples(run.input(args.samples)))
    T = trained_matrix(ds) if args.matrix == "trained" else unbiased_matrix()
    clf = train_ghmm(list(ds), T, args.max_iters, args.tol, args.freeze_transitions)
    clf.save(run.output("hmm.json"))
    trace = clf.model.loglik_trace
    print(f"EM ran {len(trace) - 1} iterations; log-likelihood {trace[-1]:.3f}")


def cmd_predict(args, run: _Run) -> None:
    from .formats import load_samples, write_posteriors_csv
    from .nn import MlpModel, predict_proba

    model = MlpModel.load(run.input(args.model))
    ds = load_samples(run.input(args.samples))
    write_posteriors_csv(run.output("posteriors.csv"), {d.id: predict_proba(model, d.values()) for d in ds})
    print(f"wrote posteriors for {ds.n_figures()} figures")


def cmd_eval(args, run: _Run) -> None:
    from .correction import CorrectionResult
    from .core import LABELS
    from .evaluation import PipelineConfig, improvement_stats, run_cv
    from .formats import (load_samples, read_posteriors_csv, write_corrections_csv, write_grid_csv,
                          write_json, write_labels_csv, write_posteriors_csv)

    ds = _labeled(load_samples(run.input(args.samples)))
    post = None
    if args.classifier == "posteriors":
        if not args.posteriors:
            raise InputError("--classifier posteriors needs --posteriors FILE")
        post = read_posteriors_csv(run.input(args.posteriors))
    cfg = PipelineConfig(classifier=args.classifier, n_folds=args.folds, seed=args.seed,
                         matrix=args.matrix, chained=args.chained, depth=args.depth, width=args.width,
                         epochs=args.epochs, batch_size=args.batch_size, alpha=args.alpha,
                         hmm_max_iters=args.max_iters, hmm_tol=args.tol,
                         freeze_transitions=args.freeze_transitions, jobs=args.jobs)
    rep = run_cv(ds, cfg, posteriors=post)
    write_json(run.output("report.json"), rep.to_dict())
    run.output("report.txt").write_text(rep.text_table(), encoding="utf-8")
    write_grid_csv(run.output("confusion_raw.csv"), rep.confusion_raw.counts)
    by_dance = {}
    for f in rep.folds:
        by_dance.update({did: f for did in f.test_ids})
    order = [d.id for d in ds]
    if rep.confusion_corrected is not None:
        write_grid_csv(run.output("confusion_corrected.csv"), rep.confusion_corrected.counts)
        write_posteriors_csv(run.output("posteriors.csv"), {i: by_dance[i].posteriors[i] for i in order})
        write_corrections_csv(run.output("corrections.csv"), {
            i: CorrectionResult(tuple(LABELS[k] for k in by_dance[i].raw[i]),
                                tuple(LABELS[k] for k in by_dance[i].corrected[i])) for i in order})
        write_json(run.output("improvement.json"), improvement_stats(rep).to_dict())
    else:
        write_labels_csv(run.output("predictions.csv"),
                         {i: [LABELS[k].short_name for k in by_dance[i].raw[i]] for i in order})
    sys.stdout.write(rep.text_table())


def cmd_correct(args, run: _Run) -> None:
    from .correction import StreamingCorrector, correct_sequence
    from .formats import read_posteriors_csv, write_corrections_csv
    from .transitions import TransitionMatrix, unbiased_matrix

    post = read_posteriors_csv(run.input(args.posteriors))
    T = TransitionMatrix.load(run.input(args.transitions)) if args.transitions else unbiased_matrix()
    results = {}
    for did, P in post.items():
        if args.stream:
            sc = StreamingCorrector(T)
            for p in P:
                for u in sc.push(p):
                    print(f"{did} {u.position} {u.label.short_name} {'final' if u.final else 'provisional'}")
            for u in sc.close():
                print(f"{did} {u.position} {u.label.short_name} final")
            results[did] = sc.result()
        else:
            results[did] = correct_sequence(P, T, chained=args.chained)
    write_corrections_csv(run.output("corrections.csv"), results)
    changed = sum(sum(r.changed) for r in results.values())
    print(f"corrected {sum(len(r) for r in results.values())} figures; {changed} changed")


def cmd_report(args, run: _Run) -> None:
    from .core import SHORT_NAMES
    from .evaluation import EvalReport, improvement_stats
    from .formats import write_json

    reports = []
    for p in args.reports:
        with open(run.input(p), encoding="utf-8") as fh:
            reports.append(EvalReport.from_dict(json.load(fh)))
    lines = []
    gains = []
    for p, rep in zip(args.reports, reports):
        lines.append(f"== {p} ({rep.config.get('classifier', '?')})")
        lines.append(rep.text_table().rstrip("\n"))
        gains += rep.improvements_pp
        for name, cm in (("raw", rep.confusion_raw), ("corrected", rep.confusion_corrected)):
            if cm is None:
                continue
            off = cm.counts.copy()
            np.fill_diagonal(off, 0)
            top = np.argsort(-off, axis=None, kind="stable")[:args.top]
            pairs = [f"{SHORT_NAMES[i // 16]}->{SHORT_NAMES[i % 16]} {off.flat[i]} ({cm.normalized.flat[i]:.2f})"
                     for i in top if off.flat[i] > 0]
            lines.append(f"top {name} confusions, count (row rate): " + (", ".join(pairs) if pairs else "none"))
        lines.append("")
    if gains:
        st = improvement_stats(gains)
        lines.append(f"improvement (pp): mean {st.mean:+.2f}  min {st.min:+.2f}  max {st.max:+.2f}")
        peak = max(st.counts)
        for lo, c in zip(st.bin_edges, st.counts):
            lines.append(f"  [{lo:+5.0f}, {lo + 1:+5.0f})  {'#' * round(30 * c / peak):<30}  {c}")
        write_json(run.output("improvement.json"), st.to_dict())
    text = "\n".join(lines).rstrip("\n") + "\n"
    run.output("report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_replay(args, run: Optional[_Run]) -> int:
    man = RunManifest.read(args.manifest)
    argv = list(man.argv)
    try:
        i = argv.index("--out")
    except ValueError:
        raise InputError(f"{args.manifest}: recorded argv has no --out") from None
    target = args.out or tempfile.mkdtemp(prefix="waltzfig-replay-")
    argv[i + 1] = target
    code = main(argv)
    if code != EXIT_OK:
        return code
    fresh = RunManifest.read(Path(target) / MANIFEST)
    bad = sorted(k for k in set(man.outputs) | set(fresh.outputs)
                 if man.outputs.get(k) != fresh.outputs.get(k))
    if bad:
        print(f"replay differs in {len(bad)} output(s): {', '.join(bad[:5])}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"replay of {man.command} reproduced {len(man.outputs)} outputs bit-exactly in {target}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p, seed=True, config=False):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    if seed:
        p.add_argument("--seed", type=int, default=None if config else 0)
    if config:
        p.add_argument("--config", default=None, help="JSON config file")


def _mlp_flags(p):
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--alpha", type=float, default=1e-3)


def _hmm_flags(p):
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--freeze-transitions", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="waltzfig", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"waltzfig {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic corpus")
    _common(p, config=True)
    p.add_argument("--n-dances", type=int, default=None)
    p.add_argument("--length", type=int, default=None, help="fix every dance to this many figures")
    p.add_argument("--identical", action="append", metavar="SRC:DST",
                   help="give DST the template of SRC (repeatable)")

    p = sub.add_parser("ingest", help="segment and downsample sensor logs")
    _common(p, seed=False)
    p.add_argument("logs", nargs="+", help="log CSV files or directories of them")
    p.add_argument("--tempo", type=float, default=None, help="beats per minute (default 28.5)")
    p.add_argument("--intro", type=float, default=None, help="seconds before the first figure (default 10)")
    p.add_argument("--figures", type=int, default=None)
    p.add_argument("--extension", type=float, default=0.35)
    p.add_argument("--labels", default=None, help="labels CSV")
    p.add_argument("--dances", default=None, help="dances.json written by simulate")
    p.add_argument("--no-unwrap", action="store_true")

    p = sub.add_parser("train-nn", help="train the feed-forward classifier")
    _common(p)
    p.add_argument("--samples", required=True)
    _mlp_flags(p)

    p = sub.add_parser("train-hmm", help="fit the Gaussian HMM")
    _common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--matrix", choices=("trained", "unbiased"), default="trained")
    _hmm_flags(p)

    p = sub.add_parser("predict", help="posteriors from a trained classifier")
    _common(p, seed=False)
    p.add_argument("--model", required=True)
    p.add_argument("--samples", required=True)

    p = sub.add_parser("eval", help="cross-validate a pipeline")
    _common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--classifier", choices=("mlp", "ghmm", "posteriors"), default="mlp")
    p.add_argument("--posteriors", default=None)
    p.add_argument("--folds", type=int, default=7)
    p.add_argument("--matrix", choices=("trained", "unbiased"), default="trained")
    p.add_argument("--chained", action="store_true")
    _mlp_flags(p)
    _hmm_flags(p)

    p = sub.add_parser("correct", help="apply transition correction to a posterior CSV")
    _common(p, seed=False)
    p.add_argument("--posteriors", required=True)
    p.add_argument("--transitions", default=None, help="transition JSON (default: unbiased)")
    p.add_argument("--chained", action="store_true")
    p.add_argument("--stream", action="store_true", help="print one-step-lagged updates")

    p = sub.add_parser("report", help="summarize evaluation reports")
    _common(p, seed=False)
    p.add_argument("reports", nargs="+")
    p.add_argument("--top", type=int, default=5)

    p = sub.add_parser("replay", help="rerun a manifest and verify its outputs")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    return ap


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "train-nn": cmd_train_nn,
    "train-hmm": cmd_train_hmm,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "correct": cmd_correct,
    "report": cmd_report,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if args.command == "replay":
            return cmd_replay(args, None)
        if getattr(args, "jobs", 1) < 1:
            raise InputError("--jobs must be >= 1")
        run = _Run(args, argv)
        COMMANDS[args.command](args, run)
        run.finish()
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"waltzfig {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except json.JSONDecodeError as exc:
        print(f"waltzfig {args.command}: error: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # anything else is a failure of the run, not of its inputs
        print(f"waltzfig {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

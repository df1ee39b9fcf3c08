"""Command-line entry point wiring all pipeline stages.

Stages hand off through files (trial CSVs, PGM images, JSONL manifests,
NTW1 checkpoints) so each one can be re-run and compared independently.
Every stage is deterministic under its seed; failures remove partial
outputs and report a single machine-parsable `ERROR:<stage>:<code>:` line.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import aae, cnn, dsp, gradcheck, synthgen, topomap
from . import tensor as T
from .montage import builtin_montage_32

VERSION = "0.1.0 (formats: NTW1, PGM P5, manifest JSON-lines v1)"


class CliError(Exception):
    def __init__(self, stage: str, code: str, message: str):
        super().__init__(message)
        self.stage = stage
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("cli", "badflag", message)


@contextmanager
def _staged_dir(target: Path):
    """Build a stage's output in a temp dir; commit atomically on success."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=target.name + ".partial-",
                                dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    tmp.rename(target)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def confusion_to_csv(confusion: np.ndarray) -> str:
    lines = ["true\\pred," + ",".join(str(i) for i in range(confusion.shape[1]))]
    for i, row in enumerate(confusion):
        lines.append(f"{i}," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def csv_to_confusion(text: str) -> np.ndarray:
    rows = []
    for line in text.strip().splitlines()[1:]:
        rows.append([int(v) for v in line.split(",")[1:]])
    return np.array(rows, dtype=int)


def confusion_heatmap(confusion: np.ndarray, cell_px: int = 64) -> np.ndarray:
    """Grayscale PGM heatmap: intensity proportional to cell count."""
    peak = confusion.max()
    scaled = (confusion.astype(float) / peak * 255.0) if peak else confusion * 0.0
    img = topomap.round_half_away(scaled).astype(np.uint8)
    return np.kron(img, np.ones((cell_px, cell_px), dtype=np.uint8))


def emit_report(report: dict, out_dir: Path, stem: str) -> None:
    """JSON report plus confusion-matrix CSV and PGM heatmap."""
    if not report:
        raise CliError("report", "empty", "nothing to report")
    _write_json(out_dir / f"{stem}.json", report)
    confusion = report.get("final_confusion") or report.get("confusion")
    if confusion is not None:
        confusion = np.array(confusion, dtype=int)
        (out_dir / f"{stem}_confusion.csv").write_text(
            confusion_to_csv(confusion))
        topomap.write_pgm(out_dir / f"{stem}_confusion.pgm",
                          confusion_heatmap(confusion))


# --- stages ------------------------------------------------------------------

def _load_trials(in_dir: Path) -> list[synthgen.EegTrial]:
    files = sorted(Path(in_dir).glob("trial_*.csv"))
    if not files:
        raise CliError("preprocess", "notrials", f"no trial files in {in_dir}")
    return [synthgen.load_trial(f) for f in files]


def cmd_synth(args) -> int:
    cfg = synthgen.SynthConfig(
        n_subjects=args.subjects, trials_per_hand=args.trials_per_hand,
        seed=args.seed, erd_depth=args.erd_depth)
    with _staged_dir(Path(args.out)) as tmp:
        for trial in synthgen.generate_cohort(cfg):
            synthgen.save_trial(trial, tmp / synthgen.trial_filename(trial))
    return 0


def cmd_preprocess(args) -> int:
    trials = _load_trials(Path(args.in_dir))
    fs = trials[0].fs
    notch = dsp.design_notch(fs)
    band = dsp.design_butterworth_bandpass(fs, 1.0, 100.0, 5)
    if args.dump_filters:
        Path(args.dump_filters).write_text(dsp.dump_filter_coefficients(
            {"notch50": notch, "butter_1_100_o5": band}))
    with _staged_dir(Path(args.out)) as tmp:
        for trial in trials:
            clean = dsp.preprocess_trial(trial, notch, band)
            synthgen.save_trial(clean, tmp / synthgen.trial_filename(clean))
    return 0


def cmd_dataset(args) -> int:
    trials = _load_trials(Path(args.in_dir))
    with _staged_dir(Path(args.out)) as tmp:
        topomap.build_dataset(trials, tmp, seed=args.seed,
                              store_fullres=not args.no_fullres)
    return 0


def cmd_train_cnn(args) -> int:
    manifest = topomap.DatasetManifest.load(args.manifest)
    cfg = cnn.CnnConfig(epochs=args.epochs, seed=args.seed)
    model = cnn.build_cnn(cfg)
    report = cnn.train_cnn(model, manifest, cfg)
    model.save(args.out)
    if args.report:
        out_dir = Path(args.report).parent
        out_dir.mkdir(parents=True, exist_ok=True)
        emit_report(report.to_dict(), out_dir, Path(args.report).stem)
    return 0


def cmd_eval_cnn(args) -> int:
    manifest = topomap.DatasetManifest.load(args.manifest)
    model = cnn.build_cnn(cnn.CnnConfig())
    model.load(args.model)
    accuracy, confusion = cnn.evaluate_manifest(model, manifest)
    report = {"accuracy": accuracy, "confusion": confusion.tolist()}
    out_dir = Path(args.report).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    emit_report(report, out_dir, Path(args.report).stem)
    return 0


def cmd_train_aae(args) -> int:
    manifest = topomap.DatasetManifest.load(args.manifest)
    cfg = aae.AaeConfig(epochs=args.epochs, normal_class=args.normal_class,
                        labeled_fraction=args.labeled_fraction, seed=args.seed)
    model, history = aae.train_aae(manifest, cfg)
    labeled = aae.select_labeled_subset(
        manifest.split_entries("train"), cfg.labeled_fraction, cfg.seed)
    scores = aae.score_entries(model, manifest, labeled)
    labels = np.array([e.label for e in labeled])
    threshold = aae.choose_threshold(scores, labels, cfg.normal_class)
    params = {k: v.value for k, v in model.params.items()}
    params["meta.threshold"] = np.array([threshold])
    params["meta.normal_class"] = np.array([float(cfg.normal_class)])
    T.save_checkpoint(args.out, params)
    if args.report:
        _write_json(Path(args.report), {"history": history,
                                        "threshold": threshold})
    return 0


def _load_aae(path) -> tuple[aae.AaeModel, float]:
    loaded = T.load_checkpoint(path)
    threshold = float(loaded.pop("meta.threshold")[0])
    normal_class = int(loaded.pop("meta.normal_class")[0])
    model = aae.AaeModel(aae.AaeConfig(normal_class=normal_class))
    own = model.params
    if set(loaded) != set(own):
        raise CliError("eval-aae", "badmodel",
                       "checkpoint does not match the AAE architecture")
    for k, arr in loaded.items():
        own[k].value = arr
    return model, threshold


def cmd_eval_aae(args) -> int:
    manifest = topomap.DatasetManifest.load(args.manifest)
    model, threshold = _load_aae(args.model)
    accuracy, confusion, auc = aae.evaluate_aae(model, threshold, manifest)
    report = {"accuracy": accuracy, "confusion": confusion.tolist(),
              "auc": auc, "threshold": threshold}
    out_dir = Path(args.report).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    emit_report(report, out_dir, Path(args.report).stem)
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(args.seeds)
    width = max(len(k) for k in results)
    ok = True
    for op, err in results.items():
        status = "ok" if err < gradcheck.TOL else "FAIL"
        print(f"{op:<{width}}  max_rel_err={err:.3e}  {status}")
        ok = ok and err < gradcheck.TOL
    if not ok:
        raise CliError("gradcheck", "tolerance",
                       "finite-difference check exceeded tolerance")
    return 0


def cmd_export_montage(args) -> int:
    Path(args.out).write_text(builtin_montage_32().to_csv())
    return 0


# --- pipeline config and `all` ----------------------------------------------

_CONFIG_SECTIONS = {
    "globalSeed": None,
    "synth": {"subjects", "trials_per_hand", "seed", "erd_depth", "mu_amp",
              "noise_amp", "line_noise_amp"},
    "dsp": set(),
    "topomap": {"seed", "store_fullres"},
    "cnn": {"epochs", "batch", "lr", "seed"},
    "aae": {"epochs", "batch", "lr", "seed", "normal_class",
            "labeled_fraction"},
}


def load_pipeline_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("all", "badconfig", str(exc))
    if not isinstance(doc, dict):
        raise CliError("all", "badconfig", "config must be a JSON object")
    for key, value in doc.items():
        if key not in _CONFIG_SECTIONS:
            raise CliError("all", "badconfig", f"unknown config key: {key}")
        if key == "globalSeed":
            continue
        allowed = _CONFIG_SECTIONS[key]
        for sub in value:
            if sub not in allowed:
                raise CliError("all", "badconfig",
                               f"unknown config key: {key}.{sub}")
    return doc


def cmd_all(args) -> int:
    doc = load_pipeline_config(args.config)
    seed = doc.get("globalSeed", 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    s = doc.get("synth", {})
    scfg = synthgen.SynthConfig(
        n_subjects=s.get("subjects", 2), trials_per_hand=s.get("trials_per_hand", 5),
        seed=s.get("seed", seed), erd_depth=s.get("erd_depth", 0.5),
        mu_amp=s.get("mu_amp", 10.0), noise_amp=s.get("noise_amp", 2.0),
        line_noise_amp=s.get("line_noise_amp", 1.0))
    with _staged_dir(out / "synth") as tmp:
        for trial in synthgen.generate_cohort(scfg):
            synthgen.save_trial(trial, tmp / synthgen.trial_filename(trial))

    trials = _load_trials(out / "synth")
    with _staged_dir(out / "preprocessed") as tmp:
        for trial in trials:
            clean = dsp.preprocess_trial(trial)
            synthgen.save_trial(clean, tmp / synthgen.trial_filename(clean))

    tcfg = doc.get("topomap", {})
    clean_trials = _load_trials(out / "preprocessed")
    with _staged_dir(out / "dataset") as tmp:
        topomap.build_dataset(clean_trials, tmp, seed=tcfg.get("seed", seed),
                              store_fullres=tcfg.get("store_fullres", True))
    manifest = topomap.DatasetManifest.load(out / "dataset" / "manifest.jsonl")

    c = doc.get("cnn", {})
    ccfg = cnn.CnnConfig(epochs=c.get("epochs", 10), batch=c.get("batch", 32),
                         lr=c.get("lr", 1e-3), seed=c.get("seed", seed))
    with _staged_dir(out / "cnn") as tmp:
        model = cnn.build_cnn(ccfg)
        report = cnn.train_cnn(model, manifest, ccfg)
        model.save(tmp / "model.ntw")
        report_doc = report.to_dict()
        # wall time is the one non-reproducible field; the pipeline report
        # must be byte-identical across reruns of the same config
        report_doc.pop("wall_time", None)
        emit_report(report_doc, tmp, "report")

    a = doc.get("aae", {})
    acfg = aae.AaeConfig(epochs=a.get("epochs", 100), batch=a.get("batch", 16),
                         lr=a.get("lr", 2e-4), seed=a.get("seed", seed),
                         normal_class=a.get("normal_class", 0),
                         labeled_fraction=a.get("labeled_fraction", 0.1))
    with _staged_dir(out / "aae") as tmp:
        model, history = aae.train_aae(manifest, acfg)
        labeled = aae.select_labeled_subset(
            manifest.split_entries("train"), acfg.labeled_fraction, acfg.seed)
        scores = aae.score_entries(model, manifest, labeled)
        labels = np.array([e.label for e in labeled])
        threshold = aae.choose_threshold(scores, labels, acfg.normal_class)
        params = {k: v.value for k, v in model.params.items()}
        params["meta.threshold"] = np.array([threshold])
        params["meta.normal_class"] = np.array([float(acfg.normal_class)])
        T.save_checkpoint(tmp / "model.ntw", params)
        accuracy, confusion, auc = aae.evaluate_aae(model, threshold, manifest)
        emit_report({"accuracy": accuracy, "confusion": confusion.tolist(),
                     "auc": auc, "threshold": threshold, "history": history},
                    tmp, "report")
    return 0


# --- argument parsing --------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="neurotopo")
    parser.add_argument("--version", action="version", version=VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--trials-per-hand", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--erd-depth", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth, stage="synth")

    p = sub.add_parser("preprocess", help="notch + band-pass filtering")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-filters", default=None)
    p.set_defaults(func=cmd_preprocess, stage="preprocess")

    p = sub.add_parser("dataset", help="build the topogram dataset")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-fullres", action="store_true")
    p.set_defaults(func=cmd_dataset, stage="dataset")

    p = sub.add_parser("train-cnn", help="train the supervised classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_train_cnn, stage="train-cnn")

    p = sub.add_parser("eval-cnn", help="evaluate a CNN checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval_cnn, stage="eval-cnn")

    p = sub.add_parser("train-aae", help="train the adversarial autoencoder")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--normal-class", type=int, default=0)
    p.add_argument("--labeled-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_train_aae, stage="train-aae")

    p = sub.add_parser("eval-aae", help="evaluate an AAE checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval_aae, stage="eval-aae")

    p = sub.add_parser("gradcheck", help="finite-difference kernel checks")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck, stage="gradcheck")

    p = sub.add_parser("export-montage", help="dump the montage as CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_montage, stage="export-montage")

    p = sub.add_parser("all", help="run every stage from one config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_all, stage="all")

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"ERROR:{exc.stage}:{exc.code}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        stage = "cli"
        if argv and not argv[0].startswith("-"):
            stage = argv[0]
        print(f"ERROR:{stage}:domain: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ERROR:cli:io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""``acousep`` command line interface.

Exit codes: 0 success, 1 usage error, 2 data or processing error (with a
one-line JSON diagnostic on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .classify import KNNModel, knn_train, load_model, predict, save_model, svm_predict, svm_train
from .errors import AcousepError
from .experiment import ExperimentConfig, render_report, run
from .fastica import Contrast, FastICAConfig, separate
from .features import FeatureVector, Method, extract
from .metrics import DRONE, NON_DRONE, accuracy, aligned_sirs
from .mixing import MixingModel, load_block, mix, random_mixing_matrix, save_block
from .signals import (DEFAULT_SAMPLE_RATE, Label, Signal, builtin_spec, load_wav, store_multichannel_wav,
                      store_wav, synthesize)

log = logging.getLogger("acousep")

COMMANDS = ("synth", "mix", "separate", "features", "train", "predict", "experiment")
DIAGNOSTICS_JSON = "diagnostics.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def stage_seed(seed: int, stage: str) -> int:
    """Per-stage substream of the global seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(stage.encode()),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _prepare_output(path: str | Path, is_dir: bool) -> Path:
    path = Path(path)
    (path if is_dir else path.parent).mkdir(parents=True, exist_ok=True)
    return path


def _label_from_name(name: str) -> Label:
    stem = Path(name).stem.lower()
    for lab in Label:
        if lab is not Label.UNKNOWN and stem.startswith(lab.value):
            return lab
    return Label.UNKNOWN


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = builtin_spec(args.cls, seed=stage_seed(args.seed, "synth"))
    if args.fundamental is not None:
        spec = builtin_spec(args.cls, seed=spec.seed, fundamental_hz=args.fundamental)
    sig = synthesize(spec, args.dur, args.rate)
    out = _prepare_output(args.output, is_dir=False)
    store_wav(sig, out)
    log.info("wrote %s (%d samples, %s)", out, len(sig), sig.label.value)
    return 0


def cmd_mix(args) -> int:
    paths = [p for p in args.inputs.split(",") if p]
    if len(paths) < 2:
        raise UsageError("mix: --inputs needs at least two comma-separated WAV files")
    if args.labels:
        labels = [Label(lab) for lab in args.labels.split(",")]
        if len(labels) != len(paths):
            raise UsageError("mix: --labels must name one class per input")
    else:
        labels = [_label_from_name(p) for p in paths]
    sources = [Signal(w.samples, w.sample_rate, lab) for w, lab in zip(map(load_wav, paths), labels)]
    n = min(len(s) for s in sources)
    sources = [Signal(s.samples[:n], s.sample_rate, s.label) for s in sources]
    if args.identity:
        model = MixingModel.identity(len(sources))
    else:
        model = random_mixing_matrix(len(sources), stage_seed(args.seed, "mix"))
    block = mix(sources, model)
    out = _prepare_output(args.output, is_dir=True)
    save_block(block, out)
    log.info("mixed %d sources (%d samples, cond %.1f) into %s", len(sources), n, model.condition, out)
    return 0


def cmd_separate(args) -> int:
    block = load_block(args.input)
    config = FastICAConfig(
        contrast=Contrast(args.contrast),
        max_iterations=args.max_iter,
        tolerance=args.tol,
        seed=stage_seed(args.seed, "separate"),
    )
    result = separate(block, config)
    out = _prepare_output(args.output, is_dir=True)
    diag = {
        "channels": block.channels,
        "length": block.length,
        "sample_rate": block.sample_rate,
        "contrast": config.contrast.value,
        "tolerance": config.tolerance,
        "max_iterations": config.max_iterations,
        "iterations": result.iterations_used,
        "converged": result.converged,
        "unmixing": result.unmixing.tolist(),
        "rotation": result.rotation.tolist(),
        "mean": result.whitener.mean.tolist(),
        "whitening": result.whitener.transform.tolist(),
        "files": [],
        "labels": None,
    }
    if block.has_truth:
        sirs, amap = aligned_sirs(result.y, block.sources)
        owner = amap.truth_index()
        classes = block.labels or (Label.UNKNOWN,) * block.channels
        diag["labels"] = [classes[int(t)].value for t in owner]
        diag["truth_index"] = owner.tolist()
        diag["sir_db"] = sirs.tolist()
        diag["correlation"] = amap.correlations.tolist()
    for ch in range(block.channels):
        name = f"source_{ch:02d}.wav"
        # separated sources have unit variance, so store as float to avoid clipping
        store_multichannel_wav(result.y[ch:ch + 1], block.sample_rate, out / name)
        diag["files"].append(name)
    _dump_json(diag, out / DIAGNOSTICS_JSON)
    log.info("separated %d channels in %d iterations (converged=%s)", block.channels,
             result.iterations_used, result.converged)
    return 0


def _signals_from(path: Path) -> list[tuple[str, Signal]]:
    """Signals from a WAV file or a directory (using diagnostics.json labels if present)."""
    if path.is_file():
        sig = load_wav(path)
        return [(path.name, Signal(sig.samples, sig.sample_rate, _label_from_name(path.name)))]
    diag_path = path / DIAGNOSTICS_JSON
    if diag_path.exists():
        diag = json.loads(diag_path.read_text())
        files = diag["files"]
        labels = diag.get("labels") or [Label.UNKNOWN.value] * len(files)
    else:
        files = sorted(p.name for p in path.glob("*.wav"))
        labels = [_label_from_name(f).value for f in files]
    if not files:
        raise AcousepError(f"no WAV files found in {path}")
    out = []
    for name, lab in zip(files, labels):
        sig = load_wav(path / name)
        out.append((name, Signal(sig.samples, sig.sample_rate, Label(lab))))
    return out


def _binary(label: Label) -> int | None:
    if label is Label.UNKNOWN:
        return None
    return DRONE if label.is_drone else NON_DRONE


def write_features(rows: list[tuple[str, FeatureVector]], path: Path) -> None:
    if path.suffix.lower() == ".json":
        payload = [
            {"name": name, "method": fv.method.value, "label": fv.label, "block_length": fv.block_length,
             "source_class": fv.source_class.value, "values": fv.values.tolist()}
            for name, fv in rows
        ]
        _dump_json(payload, path)
        return
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        dim = rows[0][1].values.size
        w.writerow(["name", "method", "label", "block_length"] + [f"v{i + 1}" for i in range(dim)])
        for name, fv in rows:
            w.writerow([name, fv.method.value, "" if fv.label is None else fv.label, fv.block_length]
                       + [repr(float(v)) for v in fv.values])


def read_features(path: str | Path) -> list[FeatureVector]:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return [FeatureVector(d["values"], d["method"], d.get("label"), d.get("block_length", 0))
                for d in json.loads(path.read_text())]
    out = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            values = [float(row[k]) for k in row if k.startswith("v")]
            label = int(row["label"]) if row.get("label") not in (None, "") else None
            out.append(FeatureVector(values, row["method"], label, int(row.get("block_length") or 0)))
    if not out:
        raise AcousepError(f"{path} holds no feature rows")
    return out


def cmd_features(args) -> int:
    method = Method(args.method)
    rows = []
    for name, sig in _signals_from(Path(args.input)):
        if args.block_length:
            n = args.block_length
            for b in range(len(sig) // n):
                block = Signal(sig.samples[b * n:(b + 1) * n], sig.sample_rate, sig.label)
                rows.append((f"{name}#{b}", extract(block, method, _binary(sig.label))))
        else:
            rows.append((name, extract(sig, method, _binary(sig.label))))
    if not rows:
        raise AcousepError("no blocks to extract features from")
    out = _prepare_output(args.output, is_dir=False)
    write_features(rows, out)
    log.info("wrote %d %s feature rows to %s", len(rows), method.value, out)
    return 0


def cmd_train(args) -> int:
    feats = read_features(args.feats)
    if any(f.label is None for f in feats):
        raise AcousepError("training rows must all carry a drone (1) / non-drone (-1) label")
    if args.model == "svm":
        model = svm_train(feats, c=args.c)
    else:
        model = knn_train(feats, k=args.k)
    out = _prepare_output(args.output, is_dir=False)
    save_model(model, out)
    log.info("trained %s on %d vectors -> %s", args.model, len(feats), out)
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    feats = read_features(args.feats)
    lines = ["index,prediction,class,margin"]
    preds = []
    for i, fv in enumerate(feats):
        if isinstance(model, KNNModel):
            label, margin = predict(model, fv), ""
        else:
            label, m = svm_predict(model, fv)
            margin = repr(m)
        preds.append(label)
        lines.append(f"{i},{label},{'drone' if label == DRONE else 'non-drone'},{margin}")
    text = "\n".join(lines) + "\n"
    if args.output:
        out = _prepare_output(args.output, is_dir=False)
        out.write_text(text)
    else:
        sys.stdout.write(text)
    if all(f.label is not None for f in feats):
        acc = accuracy(preds, [f.label for f in feats])
        log.info("accuracy %.2f%% (tp %d, fp %d, tn %d, fn %d)", acc.percent, acc.true_positive,
                 acc.false_positive, acc.true_negative, acc.false_negative)
    return 0


def cmd_experiment(args) -> int:
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise AcousepError(f"invalid JSON in {args.config}: {exc}") from exc
        config = ExperimentConfig.from_dict(raw)
    else:
        config = ExperimentConfig()
    overrides = {}
    if args.seed_given:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials_per_length"] = args.trials
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        config = ExperimentConfig.from_dict({**config.to_dict(), **overrides})
    report = run(config)
    out = _prepare_output(args.output, is_dir=True)
    (out / "report.json").write_text(render_report(report, "json"))
    (out / "report.csv").write_text(render_report(report, "csv"))
    text = render_report(report, "text")
    (out / "report.txt").write_text(text)
    if not args.quiet_table:
        sys.stdout.write(text)
    log.info("stage timing (s): %s", json.dumps({k: round(v, 3) for k, v in report.timing.items()}))
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_options(suppress: bool) -> argparse.ArgumentParser:
        # subcommand copies use SUPPRESS so they never clobber values given before the subcommand
        g = _Parser(add_help=False)
        g.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else None,
                       help="global seed (default 0)")
        g.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0,
                       help="more logging")
        g.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False,
                       help="errors only")
        return g

    common = global_options(suppress=True)
    p = _Parser(prog="acousep", description="Acoustic drone detection toolkit.", parents=[global_options(False)])
    p.add_argument("--version", action="version", version=f"acousep {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="synthesize a source signal to WAV")
    s.add_argument("--class", dest="cls", required=True, choices=[lab.value for lab in Label if lab is not Label.UNKNOWN])
    s.add_argument("--dur", type=float, required=True, help="duration in seconds")
    s.add_argument("--rate", type=int, default=DEFAULT_SAMPLE_RATE, help="sample rate in Hz")
    s.add_argument("--fundamental", type=float, default=None, help="override fundamental (harmonic classes)")
    s.add_argument("-o", "--output", required=True, help="output WAV path")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mix", parents=[common], help="mix mono WAV sources into a microphone block")
    s.add_argument("--inputs", required=True, help="comma-separated mono WAV files")
    s.add_argument("--labels", default=None, help="comma-separated class per input (default: from file names)")
    s.add_argument("--identity", action="store_true", help="use the identity mixing matrix")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("separate", parents=[common], help="unmix a block with FastICA")
    s.add_argument("--in", dest="input", required=True, help="directory written by 'mix'")
    s.add_argument("--contrast", choices=[c.value for c in Contrast], default="tanh")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=200)
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("features", parents=[common], help="extract feature vectors")
    s.add_argument("--in", dest="input", required=True, help="WAV file or directory written by 'separate'")
    s.add_argument("--method", choices=[m.value for m in Method], default="rms-psd")
    s.add_argument("--block-length", type=int, default=0, help="split each signal into blocks of this many samples")
    s.add_argument("-o", "--output", required=True, help="output .csv or .json")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", parents=[common], help="train an SVM or KNN classifier")
    s.add_argument("--feats", required=True, help="labelled feature file (.csv or .json)")
    s.add_argument("--model", choices=["svm", "knn"], required=True)
    s.add_argument("--c", type=float, default=1.0, help="SVM regularization constant")
    s.add_argument("--k", type=int, default=5, help="KNN neighbour count (odd)")
    s.add_argument("-o", "--output", required=True, help="output model JSON")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="classify feature vectors")
    s.add_argument("--model", required=True, help="model JSON written by 'train'")
    s.add_argument("--feats", required=True, help="feature file (.csv or .json)")
    s.add_argument("-o", "--output", default=None, help="prediction CSV (default: stdout)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("experiment", parents=[common], help="run the synthetic detection study")
    s.add_argument("--config", default=None, help="experiment config JSON (default: built-in)")
    s.add_argument("--trials", type=int, default=None, help="override trials_per_length")
    s.add_argument("--workers", type=int, default=None, help="parallel trial workers")
    s.add_argument("--quiet-table", action="store_true", help="do not echo the text table")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        print("acousep: error: a subcommand is required", file=sys.stderr)
        return 1

    level = logging.ERROR if args.quiet else (logging.DEBUG if args.verbose > 1 else
                                              logging.INFO if args.verbose else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0

    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (AcousepError, OSError, ValueError, KeyError) as exc:
        diag = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(diag), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

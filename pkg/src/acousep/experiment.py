"""End-to-end detection study: synthesize -> mix -> unmix -> features -> classify.

Each trial draws fresh sources and a fresh mixing matrix, unmixes the first
L samples for every configured block length, labels every separated channel
through its best-correlated true source, and extracts every configured
feature family. Trials are then split into train and test sets (a trial
never straddles the split) and every (L, method, classifier) cell is scored.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import __version__
from .classify import knn_predict, knn_train, svm_predict, svm_train
from .errors import ConfigurationError, ExperimentError
from .fastica import Contrast, FastICAConfig, separate
from .features import Method, check_bands, extract_all
from .metrics import DRONE, NON_DRONE, accuracy, aligned_sirs
from .mixing import MixingModel, mix, random_mixing_matrix
from .signals import DEFAULT_SAMPLE_RATE, Label, Signal, SourceSpec, builtin_spec, synthesize

log = logging.getLogger(__name__)

CLASSIFIERS = ("svm", "knn")
FAILED_TRIAL_BUDGET = 0.10

# Published accuracies (%) for the same grid, keyed by (L, method, classifier).
REFERENCE_ACCURACY = {
    (10000, Method.PSD9): (92.57, 97.9),
    (10000, Method.RMSPSD9): (96.1, 99.1),
    (10000, Method.MFCC12): (88.2, 97.4),
    (7000, Method.PSD9): (91.0, 97.2),
    (7000, Method.RMSPSD9): (94.9, 98.3),
    (7000, Method.MFCC12): (87.6, 97.0),
    (4000, Method.PSD9): (90.3, 96.7),
    (4000, Method.RMSPSD9): (94.1, 98.0),
    (4000, Method.MFCC12): (87.0, 96.7),
    (1000, Method.PSD9): (89.7, 96.0),
    (1000, Method.RMSPSD9): (93.3, 97.1),
    (1000, Method.MFCC12): (86.8, 95.3),
}

# Stream identifiers for per-trial seed derivation.
_SOURCES, _MIXING, _UNMIXING, _JITTER, _SPLIT = range(5)


def default_source_specs() -> tuple[SourceSpec, ...]:
    """Five drones with distinct rotor fundamentals plus one of each interferer."""
    drones = tuple(builtin_spec(Label.DRONE, fundamental_hz=f) for f in (170.0, 200.0, 230.0, 260.0, 290.0))
    others = tuple(builtin_spec(lab) for lab in (Label.AEROPLANE, Label.BIRD, Label.WIND, Label.RAIN, Label.THUNDER))
    return drones + others


@dataclass(frozen=True)
class ExperimentConfig:
    block_lengths: tuple[int, ...] = (1000, 4000, 7000, 10000)
    trials_per_length: int = 50
    source_specs: tuple[SourceSpec, ...] = field(default_factory=default_source_specs)
    train_fraction: float = 0.7
    seed: int = 0
    methods: tuple[Method, ...] = (Method.PSD9, Method.RMSPSD9, Method.MFCC12)
    classifiers: tuple[str, ...] = CLASSIFIERS
    sample_rate: int = DEFAULT_SAMPLE_RATE
    mixing: str = "random"  # random | identity
    separation: str = "fastica"  # fastica | none
    contrast: Contrast = Contrast.TANH
    max_iterations: int = 200
    tolerance: float = 1e-6
    svm_c: float = 1.0
    knn_k: int = 5
    fundamental_jitter: float = 0.1
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "block_lengths", tuple(int(n) for n in self.block_lengths))
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        object.__setattr__(self, "classifiers", tuple(str(c).lower() for c in self.classifiers))
        object.__setattr__(self, "contrast", Contrast(self.contrast))
        specs = tuple(s if isinstance(s, SourceSpec) else SourceSpec.from_dict(s) for s in self.source_specs)
        object.__setattr__(self, "source_specs", specs)

    @property
    def source_count(self) -> int:
        return len(self.source_specs)

    def validate(self) -> None:
        if not self.block_lengths:
            raise ConfigurationError("block_lengths is empty")
        if not self.source_specs:
            raise ConfigurationError("source_specs is empty")
        for n in self.block_lengths:
            if n < 2 * self.source_count:
                raise ConfigurationError(f"block length {n} < 2 x {self.source_count} sources")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError("train_fraction must lie in (0, 1)")
        if self.trials_per_length < 2:
            raise ConfigurationError("need at least 2 trials so that train and test sets are both non-empty")
        if not any(s.label.is_drone for s in self.source_specs):
            raise ConfigurationError("source_specs must include at least one drone")
        if all(s.label.is_drone for s in self.source_specs):
            raise ConfigurationError("source_specs must include at least one non-drone source")
        if not self.methods or not self.classifiers:
            raise ConfigurationError("methods and classifiers must be non-empty")
        unknown = set(self.classifiers) - set(CLASSIFIERS)
        if unknown:
            raise ConfigurationError(f"unknown classifiers {sorted(unknown)}")
        if self.mixing not in ("random", "identity"):
            raise ConfigurationError(f"mixing must be 'random' or 'identity', got {self.mixing!r}")
        if self.separation not in ("fastica", "none"):
            raise ConfigurationError(f"separation must be 'fastica' or 'none', got {self.separation!r}")
        if not 0.0 <= self.fundamental_jitter < 1.0:
            raise ConfigurationError("fundamental_jitter must lie in [0, 1)")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if Method.PSD9 in self.methods or Method.RMSPSD9 in self.methods:
            check_bands(self.sample_rate)
        for spec in self.source_specs:
            spec.validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["block_lengths"] = list(self.block_lengths)
        d["source_specs"] = [s.to_dict() for s in self.source_specs]
        d["methods"] = [m.value for m in self.methods]
        d["classifiers"] = list(self.classifiers)
        d["contrast"] = self.contrast.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown experiment config fields {sorted(extra)}")
        return cls(**d)


# --------------------------------------------------------------------------
# per-trial work
# --------------------------------------------------------------------------


def _stream_seed(seed: int, trial: int, stream: int, index: int = 0) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(trial, stream, index))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def trial_sources(config: ExperimentConfig, trial: int) -> list[Signal]:
    """The ground-truth sources of one trial (fresh seeds, jittered fundamentals)."""
    n = max(config.block_lengths)
    out = []
    for i, spec in enumerate(config.source_specs):
        spec = spec.with_seed(_stream_seed(config.seed, trial, _SOURCES, i))
        if spec.is_harmonic and config.fundamental_jitter > 0:
            rng = np.random.default_rng(_stream_seed(config.seed, trial, _JITTER, i))
            factor = 1.0 + rng.uniform(-config.fundamental_jitter, config.fundamental_jitter)
            spec = dataclasses.replace(spec, fundamental_hz=spec.fundamental_hz * factor)
        out.append(synthesize(spec, n / config.sample_rate, config.sample_rate))
    return out


@dataclass
class _ChannelRecord:
    label: int
    source_class: str
    source_index: int
    features: dict  # method value -> list of floats


@dataclass
class _TrialResult:
    trial: int
    ok: bool
    error: str = ""
    sir: dict = field(default_factory=dict)  # L -> mean SIR dB
    min_correlation: dict = field(default_factory=dict)
    converged: dict = field(default_factory=dict)
    channels: dict = field(default_factory=dict)  # L -> list[_ChannelRecord]
    timing: dict = field(default_factory=dict)


def _unmix(block_x: np.ndarray, config: ExperimentConfig, trial: int, length: int) -> tuple[np.ndarray, bool]:
    if config.separation == "none":
        x = block_x - block_x.mean(axis=1, keepdims=True)
        return x / x.std(axis=1, keepdims=True), True
    ica = FastICAConfig(
        contrast=config.contrast,
        max_iterations=config.max_iterations,
        tolerance=config.tolerance,
        seed=_stream_seed(config.seed, trial, _UNMIXING, length),
    )
    result = separate(block_x, ica)
    return result.y, result.converged


def run_trial(config: ExperimentConfig, trial: int) -> _TrialResult:
    """Run one trial; stage errors are captured in the result, not raised."""
    res = _TrialResult(trial=trial, ok=False)
    timing = {"synthesize": 0.0, "mix": 0.0, "separate": 0.0, "align": 0.0, "features": 0.0}
    try:
        t0 = time.perf_counter()
        sources = trial_sources(config, trial)
        t1 = time.perf_counter()
        timing["synthesize"] += t1 - t0
        if config.mixing == "identity":
            model = MixingModel.identity(config.source_count)
        else:
            model = random_mixing_matrix(config.source_count, _stream_seed(config.seed, trial, _MIXING))
        full = mix(sources, model)
        timing["mix"] += time.perf_counter() - t1
        is_drone = [s.label.is_drone for s in sources]

        for length in config.block_lengths:
            block = full.head(length)
            t0 = time.perf_counter()
            y, converged = _unmix(block.x, config, trial, length)
            t1 = time.perf_counter()
            sirs, amap = aligned_sirs(y, block.sources)
            owner = amap.truth_index()
            t2 = time.perf_counter()
            records = []
            for ch in range(config.source_count):
                src = int(owner[ch])
                label = DRONE if is_drone[src] else NON_DRONE
                sig = Signal(y[ch], config.sample_rate, sources[src].label)
                feats = extract_all(sig, config.methods, label)
                records.append(_ChannelRecord(
                    label=label,
                    source_class=sources[src].label.value,
                    source_index=src,
                    features={m.value: fv.values.tolist() for m, fv in feats.items()},
                ))
            t3 = time.perf_counter()
            timing["separate"] += t1 - t0
            timing["align"] += t2 - t1
            timing["features"] += t3 - t2
            res.sir[length] = float(np.mean(sirs))
            res.min_correlation[length] = float(np.min(amap.correlations))
            res.converged[length] = bool(converged)
            res.channels[length] = records
        res.ok = True
    except Exception as exc:  # any stage failure aborts only this trial
        log.warning("trial %d failed: %s: %s", trial, type(exc).__name__, exc)
        res.error = f"{type(exc).__name__}: {exc}"
        res.sir, res.channels = {}, {}
    res.timing = timing
    return res


def _run_trial_args(args):
    return run_trial(*args)


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CellResult:
    block_length: int
    method: str
    classifier: str
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_train: int
    n_test: int
    drone_detection_rate: float | None


@dataclass(frozen=True)
class SIRSummary:
    block_length: int
    mean_sir_db: float
    std_sir_db: float
    mean_min_correlation: float
    convergence_rate: float
    trial_sir_db: tuple[float, ...]


@dataclass(eq=False)
class ExperimentReport:
    config: ExperimentConfig
    cells: list[CellResult]
    sir: list[SIRSummary]
    provenance: dict
    timing: dict = field(default_factory=dict)  # wall-clock, excluded from serialization

    def cell(self, block_length: int, method: Method | str, classifier: str) -> CellResult:
        method = Method(method).value
        for c in self.cells:
            if c.block_length == block_length and c.method == method and c.classifier == classifier:
                return c
        raise KeyError((block_length, method, classifier))

    def sir_at(self, block_length: int) -> SIRSummary:
        for s in self.sir:
            if s.block_length == block_length:
                return s
        raise KeyError(block_length)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "cells": [dataclasses.asdict(c) for c in self.cells],
            "sir": [dict(dataclasses.asdict(s), trial_sir_db=list(s.trial_sir_db)) for s in self.sir],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(
            config=ExperimentConfig.from_dict(d["config"]),
            cells=[CellResult(**c) for c in d["cells"]],
            sir=[SIRSummary(**dict(s, trial_sir_db=tuple(s["trial_sir_db"]))) for s in d["sir"]],
            provenance=d["provenance"],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExperimentReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def split_trials(trials: Sequence[int], train_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Shuffle trial ids and cut them into disjoint train / test lists."""
    trials = sorted(trials)
    if len(trials) < 2:
        raise ExperimentError(f"only {len(trials)} successful trial(s); cannot split into train and test")
    rng = np.random.default_rng(_stream_seed(seed, 0, _SPLIT))
    order = [trials[i] for i in rng.permutation(len(trials))]
    n_train = min(max(1, int(round(train_fraction * len(trials)))), len(trials) - 1)
    return sorted(order[:n_train]), sorted(order[n_train:])


def _score_cell(config, results, train_ids, test_ids, length, method, classifier) -> CellResult:
    def gather(ids):
        xs, ys, groups = [], [], []
        for t in ids:
            for rec in results[t].channels[length]:
                xs.append(rec.features[method.value])
                ys.append(rec.label)
                groups.append(t)
        return np.asarray(xs), np.asarray(ys), np.asarray(groups)

    x_train, y_train, _ = gather(train_ids)
    x_test, y_test, groups = gather(test_ids)
    if classifier == "svm":
        model = svm_train(x_train, y_train.tolist(), c=config.svm_c)
        pred = np.array([svm_predict(model, v)[0] for v in x_test])
    else:
        model = knn_train(x_train, y_train.tolist(), k=config.knn_k)
        pred = np.array([knn_predict(model, v) for v in x_test])
    acc = accuracy(pred, y_test)

    detected, with_drone = 0, 0
    for t in test_ids:
        mask = (groups == t) & (y_test == DRONE)
        if mask.any():
            with_drone += 1
            detected += int(np.all(pred[mask] == DRONE))
    rate = detected / with_drone if with_drone else None
    return CellResult(length, method.value, classifier, acc.percent, acc.true_positive, acc.false_positive,
                      acc.true_negative, acc.false_negative, int(y_train.size), int(y_test.size), rate)


def run(config: ExperimentConfig | None = None) -> ExperimentReport:
    """Execute the study described by ``config``."""
    config = config or ExperimentConfig()
    config.validate()
    started = time.perf_counter()
    args = [(config, t) for t in range(config.trials_per_length)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_trial_args, args))
    else:
        results = [run_trial(*a) for a in args]
    results = sorted(results, key=lambda r: r.trial)

    failed = [r for r in results if not r.ok]
    if len(failed) > FAILED_TRIAL_BUDGET * len(results):
        raise ExperimentError(
            f"{len(failed)} of {len(results)} trials failed (budget {FAILED_TRIAL_BUDGET:.0%}); "
            f"first error: {failed[0].error}"
        )
    by_trial = {r.trial: r for r in results if r.ok}
    train_ids, test_ids = split_trials(list(by_trial), config.train_fraction, config.seed)

    t_cls = time.perf_counter()
    cells = []
    for length in sorted(config.block_lengths, reverse=True):
        for method in config.methods:
            for classifier in config.classifiers:
                cells.append(_score_cell(config, by_trial, train_ids, test_ids, length, method, classifier))
    t_cls = time.perf_counter() - t_cls

    sir = []
    ok_ids = sorted(by_trial)
    for length in sorted(config.block_lengths):
        values = np.array([by_trial[t].sir[length] for t in ok_ids])
        sir.append(SIRSummary(
            block_length=length,
            mean_sir_db=float(values.mean()),
            std_sir_db=float(values.std()),
            mean_min_correlation=float(np.mean([by_trial[t].min_correlation[length] for t in ok_ids])),
            convergence_rate=float(np.mean([by_trial[t].converged[length] for t in ok_ids])),
            trial_sir_db=tuple(float(v) for v in values),
        ))

    class_counts = {}
    for t in ok_ids:
        for rec in by_trial[t].channels[max(config.block_lengths)]:
            key = "drone" if rec.label == DRONE else "non-drone"
            class_counts[key] = class_counts.get(key, 0) + 1
    provenance = {
        "version": __version__,
        "seed": config.seed,
        "protocol": (
            "per trial: fresh sources and mixing matrix; every block length unmixes the first L samples; "
            "channels labelled via max-|correlation| alignment to ground truth; "
            f"trial-level split train_fraction={config.train_fraction}"
        ),
        "train_trials": train_ids,
        "test_trials": test_ids,
        "failed_trials": [{"trial": r.trial, "error": r.error} for r in failed],
        "channels_per_block_length": class_counts,
    }
    timing = {stage: float(sum(r.timing.get(stage, 0.0) for r in results))
              for stage in ("synthesize", "mix", "separate", "align", "features")}
    timing["classify"] = t_cls
    timing["total"] = time.perf_counter() - started
    return ExperimentReport(config, cells, sir, provenance, timing)


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------


def _fmt(v: float | None, digits: int = 1) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


_DISPLAY = {Method.PSD9: "PSD", Method.RMSPSD9: "RMS PSD", Method.MFCC12: "MFCC"}


def _text_table(report: ExperimentReport) -> str:
    cfg = report.config
    lines = ["Detection accuracy (%), drone vs non-drone", ""]
    header = f"{'L':>6}  {'Method':<8}" + "".join(f"{c.upper():>8}" for c in cfg.classifiers)
    header += f"{'ref SVM':>10}{'ref KNN':>10}"
    lines += [header, "-" * len(header)]
    for length in sorted(cfg.block_lengths, reverse=True):
        for method in cfg.methods:
            row = f"{length:>6}  {_DISPLAY[method]:<8}"
            for classifier in cfg.classifiers:
                row += f"{_fmt(report.cell(length, method, classifier).accuracy):>8}"
            ref = REFERENCE_ACCURACY.get((length, method))
            row += f"{_fmt(ref[0] if ref else None, 2):>10}{_fmt(ref[1] if ref else None, 2):>10}"
            lines.append(row)
    lines += ["", "Separation quality (aligned SIR, dB)", ""]
    header = f"{'L':>6}{'mean':>10}{'std':>10}{'min|r|':>10}{'conv.':>8}"
    lines += [header, "-" * len(header)]
    for s in report.sir:
        lines.append(f"{s.block_length:>6}{s.mean_sir_db:>10.2f}{s.std_sir_db:>10.2f}"
                     f"{s.mean_min_correlation:>10.3f}{s.convergence_rate:>8.2f}")
    prov = report.provenance
    lines += ["", f"seed {prov['seed']}; train trials {len(prov['train_trials'])}, "
                  f"test trials {len(prov['test_trials'])}, failed {len(prov['failed_trials'])}"]
    return "\n".join(lines) + "\n"


def _csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(report.config.to_dict(), sort_keys=True) + "\n")
    buf.write("# provenance: " + json.dumps(report.provenance, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in dataclasses.fields(CellResult)]
    writer.writerow(names + ["mean_sir_db"])
    for c in report.cells:
        row = [getattr(c, n) for n in names]
        writer.writerow(["" if v is None else v for v in row] + [report.sir_at(c.block_length).mean_sir_db])
    return buf.getvalue()


def render_report(report: ExperimentReport, fmt: str = "text") -> str:
    """Serialize ``report`` as ``text`` (table), ``csv`` or ``json``."""
    fmt = fmt.lower()
    if fmt in ("text", "text-table", "txt"):
        return _text_table(report)
    if fmt == "csv":
        return _csv(report)
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    raise ConfigurationError(f"unknown report format {fmt!r}")


def report_from_json(text: str) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(text))

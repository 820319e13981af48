"""Instantaneous square mixing ``X = A S`` and block persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ParameterError
from .signals import Label, Signal, load_multichannel_wav, store_multichannel_wav

MAX_CONDITION = 100.0


@dataclass(frozen=True, eq=False)
class MixingModel:
    """A square, invertible mixing matrix."""

    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ParameterError(f"mixing matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ParameterError("mixing matrix must be finite")
        if not np.linalg.cond(a) < 1.0 / np.finfo(np.float64).eps:
            raise ParameterError("mixing matrix is singular")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def source_count(self) -> int:
        return self.a.shape[1]

    @property
    def sensor_count(self) -> int:
        return self.a.shape[0]

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.a))

    @classmethod
    def identity(cls, n: int) -> "MixingModel":
        return cls(np.eye(n))


@dataclass(frozen=True, eq=False)
class MixedBlock:
    """A J x L block of microphone samples.

    ``model`` and ``sources`` hold the ground truth for synthetic data;
    ``labels`` names the class of each true source.
    """

    x: np.ndarray
    sample_rate: int
    model: MixingModel | None = None
    sources: np.ndarray | None = None
    labels: tuple[Label, ...] | None = None

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise ParameterError("block must be a 2-D (channels x samples) array")
        j, n = x.shape
        if j < 1 or n < 2 * j:
            raise ParameterError(f"block of {j} channels needs at least {2 * j} samples, got {n}")
        if not np.all(np.isfinite(x)):
            raise ParameterError("block entries must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if self.sources is not None:
            s = np.array(self.sources, dtype=np.float64)
            s.setflags(write=False)
            object.__setattr__(self, "sources", s)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(Label(lab) for lab in self.labels))

    @property
    def channels(self) -> int:
        return self.x.shape[0]

    @property
    def length(self) -> int:
        return self.x.shape[1]

    @property
    def has_truth(self) -> bool:
        return self.model is not None and self.sources is not None

    def head(self, length: int) -> "MixedBlock":
        """The first ``length`` samples of this block, truth included."""
        if not 2 * self.channels <= length <= self.length:
            raise ParameterError(f"cannot take {length} samples from a block of {self.length}")
        sources = None if self.sources is None else self.sources[:, :length]
        return MixedBlock(self.x[:, :length], self.sample_rate, self.model, sources, self.labels)


def random_mixing_matrix(n: int, seed: int) -> MixingModel:
    """Draw an n x n matrix uniform in [-1, 1] with condition number <= 100."""
    if int(n) != n or n < 2:
        raise ParameterError(f"mixing matrix size must be an integer >= 2, got {n}")
    rng = np.random.default_rng(seed)
    while True:
        a = rng.uniform(-1.0, 1.0, size=(n, n))
        if np.linalg.cond(a) <= MAX_CONDITION:
            return MixingModel(a)


def mix(sources: Sequence[Signal], model: MixingModel) -> MixedBlock:
    if len(sources) != model.source_count:
        raise ParameterError(f"model mixes {model.source_count} sources, got {len(sources)}")
    rates = {s.sample_rate for s in sources}
    lengths = {len(s) for s in sources}
    if len(rates) != 1:
        raise ParameterError(f"sources have mismatched sample rates {sorted(rates)}")
    if len(lengths) != 1:
        raise ParameterError(f"sources have mismatched lengths {sorted(lengths)}")
    s = np.vstack([src.samples for src in sources])
    return MixedBlock(model.a @ s, rates.pop(), model, s, tuple(src.label for src in sources))


# --------------------------------------------------------------------------
# Persistence: mixture.wav (float32, one channel per microphone) + mixture.json
# --------------------------------------------------------------------------

MIXTURE_WAV = "mixture.wav"
MIXTURE_JSON = "mixture.json"
SOURCES_WAV = "sources.wav"


def save_block(block: MixedBlock, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    store_multichannel_wav(block.x, block.sample_rate, directory / MIXTURE_WAV)
    meta = {
        "channels": block.channels,
        "length": block.length,
        "sample_rate": block.sample_rate,
        "mixing_matrix": block.model.a.tolist() if block.model is not None else None,
        "labels": [lab.value for lab in block.labels] if block.labels is not None else None,
        "sources": SOURCES_WAV if block.sources is not None else None,
    }
    if block.sources is not None:
        store_multichannel_wav(block.sources, block.sample_rate, directory / SOURCES_WAV)
    (directory / MIXTURE_JSON).write_text(json.dumps(meta, indent=2) + "\n")
    return directory


def load_block(directory: str | Path) -> MixedBlock:
    directory = Path(directory)
    x, rate = load_multichannel_wav(directory / MIXTURE_WAV)
    sidecar = directory / MIXTURE_JSON
    if not sidecar.exists():
        return MixedBlock(x, rate)
    meta = json.loads(sidecar.read_text())
    if meta.get("channels") not in (None, x.shape[0]):
        raise FormatError(f"sidecar declares {meta['channels']} channels, wav has {x.shape[0]}", 22)
    model = MixingModel(meta["mixing_matrix"]) if meta.get("mixing_matrix") is not None else None
    sources = None
    if meta.get("sources"):
        sources, _ = load_multichannel_wav(directory / meta["sources"])
    return MixedBlock(x, rate, model, sources, meta.get("labels"))

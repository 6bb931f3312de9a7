"""The MLP architecture search space: enumeration, indexing, sampling.

The space is every MLP with 1..4 hidden layers whose widths come from the
7-symbol alphabet {4, 8, 16, 32, 64, 128, 256}: 7 + 49 + 343 + 2401 = 2800
architectures. Canonical order is by depth, then lexicographic by width with
the alphabet ascending, which keeps indices stable for std tables, reward
tables and checkpoints.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

WIDTH_ALPHABET: tuple[int, ...] = (4, 8, 16, 32, 64, 128, 256)
MAX_DEPTH = 4
SPACE_SIZE = sum(len(WIDTH_ALPHABET) ** d for d in range(1, MAX_DEPTH + 1))  # 2800

_WIDTH_POS = {w: i for i, w in enumerate(WIDTH_ALPHABET)}
_DEPTH_OFFSET = [0]
for _d in range(1, MAX_DEPTH + 1):
    _DEPTH_OFFSET.append(_DEPTH_OFFSET[-1] + len(WIDTH_ALPHABET) ** _d)


@dataclass(frozen=True)
class ArchSpec:
    """Hidden-layer widths of one MLP in the search space."""

    widths: tuple[int, ...]

    def __post_init__(self):
        if not (1 <= len(self.widths) <= MAX_DEPTH):
            raise ValueError(f"depth must be 1..{MAX_DEPTH}, got {len(self.widths)}")
        for w in self.widths:
            if w not in _WIDTH_POS:
                raise ValueError(f"width {w} not in alphabet {WIDTH_ALPHABET}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def depth(self) -> int:
        return len(self.widths)

    def __str__(self) -> str:
        return ",".join(str(w) for w in self.widths)


def parse_arch(text: str) -> ArchSpec:
    """Parse the CLI/config literal, e.g. "64" or "256,256,256"."""
    try:
        widths = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ValueError(f"bad architecture literal {text!r}")
    return ArchSpec(widths)


def enumerate_space() -> list[ArchSpec]:
    """All 2800 architectures in canonical (depth, then lexicographic) order."""
    out = []
    for depth in range(1, MAX_DEPTH + 1):
        for widths in itertools.product(WIDTH_ALPHABET, repeat=depth):
            out.append(ArchSpec(widths))
    return out


def arch_index(spec: ArchSpec) -> int:
    """Position of ``spec`` in enumerate_space(); bijective onto [0, 2800)."""
    base = len(WIDTH_ALPHABET)
    idx = 0
    for w in spec.widths:
        idx = idx * base + _WIDTH_POS[w]
    return _DEPTH_OFFSET[spec.depth - 1] + idx


def spec_at(index: int) -> ArchSpec:
    """Inverse of arch_index."""
    if not (0 <= index < SPACE_SIZE):
        raise ValueError(f"arch index {index} out of range [0, {SPACE_SIZE})")
    base = len(WIDTH_ALPHABET)
    depth = 1
    while index >= _DEPTH_OFFSET[depth]:
        depth += 1
    rem = index - _DEPTH_OFFSET[depth - 1]
    digits = []
    for _ in range(depth):
        digits.append(rem % base)
        rem //= base
    return ArchSpec(tuple(WIDTH_ALPHABET[d] for d in reversed(digits)))


class ArchDistribution:
    """Sampling distribution over the enumerated space.

    ``uniform`` weighs every architecture equally; ``biased`` weighs each
    architecture by 1 / (number of layers), which up-weights the scarce
    shallow architectures.
    """

    MODES = ("uniform", "biased")

    def __init__(self, mode: str = "uniform"):
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {mode!r}")
        self.mode = mode
        space = enumerate_space()
        if mode == "uniform":
            probs = np.full(SPACE_SIZE, 1.0 / SPACE_SIZE)
        else:
            weights = np.array([1.0 / s.depth for s in space])
            probs = weights / weights.sum()
        self.probs = probs


def sampling_prob(dist: ArchDistribution, spec: ArchSpec) -> float:
    return float(dist.probs[arch_index(spec)])


def sample_arch(dist: ArchDistribution, rng: np.random.Generator) -> ArchSpec:
    return spec_at(int(rng.choice(SPACE_SIZE, p=dist.probs)))


def sample_archs(dist: ArchDistribution, rng: np.random.Generator,
                 count: int, replace: bool = False) -> list[ArchSpec]:
    """Draw a meta-batch; without replacement by default."""
    idx = rng.choice(SPACE_SIZE, size=count, replace=replace, p=dist.probs)
    return [spec_at(int(i)) for i in idx]


def layer_dims(spec: ArchSpec, obs_dim: int, act_dim: int) -> list[tuple[int, int]]:
    """(fan_in, fan_out) per layer of the MLP obs -> widths -> act."""
    sizes = [obs_dim, *spec.widths, act_dim]
    return list(zip(sizes[:-1], sizes[1:]))


def param_count(spec: ArchSpec, obs_dim: int, act_dim: int) -> int:
    """Total weight+bias scalars of the policy MLP for ``spec``."""
    if obs_dim < 1 or act_dim < 1:
        raise ValueError("obs_dim and act_dim must be >= 1")
    return sum(fi * fo + fo for fi, fo in layer_dims(spec, obs_dim, act_dim))

"""Stochastic Gaussian policy over generated MLP weights.

Action means come from a tanh MLP evaluated on (normalized) observations;
standard deviations come from a ``StdStore`` holding either one shared
log-std array ("csd") or an independent lazily-created array per architecture
("vsd"). Actions are not squashed; environments clip them to their bounds,
which keeps the Gaussian log-density exact.

``log_prob_from_log_std`` mirrors, operation for operation, the loss-graph
construction in :mod:`hyperppo.ppo`, so a freshly collected batch reproduces
its behavior log-probs bit-exactly at the first update epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .archspace import SPACE_SIZE, ArchSpec, layer_dims
from .numcore import AdamState, adam_step

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
INIT_LOG_STD = -0.5
_LN_2PI = math.log(2.0 * math.pi)


@dataclass
class GeneratedWeights:
    """Concrete per-layer weight/bias arrays for one architecture."""

    spec: ArchSpec
    obs_dim: int
    act_dim: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        dims = layer_dims(self.spec, self.obs_dim, self.act_dim)
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ValueError(f"expected {len(dims)} layers, got {len(self.weights)}")
        for (fi, fo), w, b in zip(dims, self.weights, self.biases):
            if w.shape != (fi, fo):
                raise ValueError(f"weight shape {w.shape} != ({fi}, {fo})")
            if b.shape != (fo,):
                raise ValueError(f"bias shape {b.shape} != ({fo},)")
        for arr in (*self.weights, *self.biases):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite generated weights")

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def policy_forward(phi: GeneratedWeights, obs: np.ndarray) -> np.ndarray:
    """Mean action: tanh on hidden layers, identity on the output layer."""
    obs = np.asarray(obs)
    squeeze = obs.ndim == 1
    x = obs.reshape(1, -1) if squeeze else obs
    if x.shape[1] != phi.obs_dim:
        raise ValueError(f"obs dim {x.shape[1]} != {phi.obs_dim}")
    last = len(phi.weights) - 1
    for i, (w, b) in enumerate(zip(phi.weights, phi.biases)):
        x = x @ w + b
        if i != last:
            x = np.tanh(x)
    return x[0] if squeeze else x


class StdStore:
    """Exploration standard deviations, shared ("csd") or per-arch ("vsd").

    VSD rows are created on first touch and each row carries its own Adam
    state, so an update driven by one architecture's data can never move any
    other row.
    """

    MODES = ("csd", "vsd")

    def __init__(self, mode: str, act_dim: int, lr: float = 3e-4,
                 init_log_std: float = INIT_LOG_STD, dtype=np.float32):
        if mode not in self.MODES:
            raise ValueError(f"std mode must be one of {self.MODES}, got {mode!r}")
        self.mode = mode
        self.act_dim = act_dim
        self.lr = lr
        self.init_log_std = init_log_std
        self.dtype = np.dtype(dtype)
        self._csd_row = np.full(act_dim, init_log_std, dtype=self.dtype)
        self._csd_adam = AdamState(lr=lr)
        self._vsd_rows: dict[int, np.ndarray] = {}
        self._vsd_adam: dict[int, AdamState] = {}

    def _check_index(self, arch_index: int) -> None:
        if not (0 <= arch_index < SPACE_SIZE):
            raise ValueError(f"arch index {arch_index} out of range [0, {SPACE_SIZE})")

    def log_std(self, arch_index: int) -> np.ndarray:
        """The trainable log-std row for this architecture (live array)."""
        self._check_index(arch_index)
        if self.mode == "csd":
            return self._csd_row
        if arch_index not in self._vsd_rows:
            self._vsd_rows[arch_index] = np.full(
                self.act_dim, self.init_log_std, dtype=self.dtype)
            self._vsd_adam[arch_index] = AdamState(lr=self.lr)
        return self._vsd_rows[arch_index]

    def update(self, arch_index: int, grad: np.ndarray) -> None:
        """One Adam step on the row owned by ``arch_index``, then re-clamp."""
        self._check_index(arch_index)
        row = self.log_std(arch_index)
        state = self._csd_adam if self.mode == "csd" else self._vsd_adam[arch_index]
        adam_step(row, grad.astype(row.dtype, copy=False), state)
        np.clip(row, LOG_STD_MIN, LOG_STD_MAX, out=row)

    def touched_rows(self) -> list[int]:
        return sorted(self._vsd_rows) if self.mode == "vsd" else []


def get_std(store: StdStore, arch_index: int) -> np.ndarray:
    """exp of the log-std row; CSD ignores which row is asked for."""
    return np.exp(store.log_std(arch_index))


def sample_action(mean: np.ndarray, std: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """mean + std * standard-normal draw, elementwise."""
    mean = np.asarray(mean)
    noise = rng.standard_normal(mean.shape)
    return mean + std * noise.astype(mean.dtype, copy=False)


def log_prob_from_log_std(mean: np.ndarray, log_std: np.ndarray,
                          action: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density summed over action dims.

    Op order deliberately matches the loss-graph construction so that logs
    recorded at collection time equal the graph's value bit for bit.
    ``log_std`` is a 1-D row shared by every sample in the batch.
    """
    mean = np.asarray(mean)
    ls = np.asarray(log_std)
    diff = action + (-mean)
    z = diff * np.exp(-ls)
    d = mean.shape[-1]
    half_ln = np.asarray(-0.5 * d * _LN_2PI, dtype=mean.dtype)
    return (-0.5) * np.sum(z * z, axis=-1) + (-np.sum(ls)) + half_ln


def log_prob(mean: np.ndarray, std: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density at ``action``, summed over dims."""
    std = np.asarray(std)
    if np.any(std <= 0):
        raise ValueError("std must be positive")
    return log_prob_from_log_std(mean, np.log(std), action)


def gaussian_entropy(log_std: np.ndarray) -> float:
    """Entropy of the diagonal Gaussian with the given log-stds."""
    ls = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    d = ls.shape[-1]
    return float(np.sum(ls) + 0.5 * d * (1.0 + _LN_2PI))

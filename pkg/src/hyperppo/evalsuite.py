"""Full-space evaluation sweeps, smallest-architecture selection,
reward-distribution curves, policy export and hyper-vs-baseline comparison.

Evaluation always uses the deterministic mean action with the checkpoint's
frozen observation normalizer; episode seeds derive from (sweep seed,
architecture index, episode), so a sweep is reproducible from its arguments
alone. Each architecture's weights are generated in exactly one forward pass
per sweep.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .archspace import (ArchSpec, arch_index, enumerate_space, param_count,
                        spec_at)
from .envs import env_dims
from .policy import GeneratedWeights
from .trainer import Checkpoint, RunningNorm, eval_episodes, load_model

EXPORT_MAGIC = b"HPOL"
EXPORT_VERSION = 1


class ExportError(RuntimeError):
    """Unreadable or corrupt exported-policy file."""


@dataclass
class RewardRow:
    arch_index: int
    widths: tuple[int, ...]
    mean_return: float
    return_std: float
    episodes: int


@dataclass
class RewardTable:
    """Per-architecture evaluation results plus sweep provenance."""

    metadata: dict
    rows: list[RewardRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class SelectionRow:
    arch_index: int
    widths: tuple[int, ...]
    mean_return: float
    params: int


@dataclass
class CompareReport:
    widths: tuple[int, ...]
    episodes: int
    hyper_mean: float
    hyper_std: float
    baseline_mean: float
    baseline_std: float


def sweep(ckpt: Checkpoint, env_kind: str, episodes_per_arch: int = 4,
          arch_subset: list[ArchSpec] | None = None, seed: int = 0,
          model_bundle=None) -> RewardTable:
    """Evaluate every architecture (or a subset) under one checkpoint.

    ``model_bundle`` may pass a preloaded (model, normalizer) pair, e.g. to
    share the generate-call counter with the caller.
    """
    if episodes_per_arch < 1:
        raise ValueError("episodes_per_arch must be >= 1")
    obs_dim, _, _ = env_dims(env_kind)
    if obs_dim != ckpt.header["obs_dim"]:
        raise ValueError(
            f"env {env_kind!r} has obs_dim {obs_dim}, checkpoint was trained "
            f"with {ckpt.header['obs_dim']}")
    model, normalizer = model_bundle if model_bundle else load_model(ckpt)
    specs = list(arch_subset) if arch_subset is not None else enumerate_space()
    if ckpt.mode == "baseline":
        own = tuple(ckpt.header["arch"])
        for s in specs:
            if s.widths != own:
                raise ValueError("full-space sweep requires a hyper checkpoint")

    rows = []
    for spec in specs:
        phi = model.generate_weights(spec)
        rets = eval_episodes(env_kind, phi, normalizer.normalize,
                             episodes_per_arch, (seed, arch_index(spec)))
        rows.append(RewardRow(arch_index=arch_index(spec), widths=spec.widths,
                              mean_return=float(np.mean(rets)),
                              return_std=float(np.std(rets)),
                              episodes=episodes_per_arch))
    digest = hashlib.sha256(ckpt.flat_params.tobytes()).hexdigest()[:12]
    meta = {
        "checkpoint": digest,
        "iteration": ckpt.iteration,
        "env": env_kind,
        "seed": seed,
        "episodes_per_arch": episodes_per_arch,
        "obs_dim": ckpt.header["obs_dim"],
        "act_dim": ckpt.header["act_dim"],
        "n_archs": len(rows),
    }
    return RewardTable(metadata=meta, rows=rows)


def average_reward(table: RewardTable) -> float:
    """Unweighted mean of per-architecture mean returns."""
    if not table.rows:
        raise ValueError("empty reward table")
    return float(np.mean([r.mean_return for r in table.rows]))


def select(table: RewardTable, fraction: float, obs_dim: int,
           act_dim: int) -> SelectionRow:
    """Smallest-parameter architecture whose return reaches fraction * max.

    Ties break by fewer layers, then lexicographic widths. If no row reaches
    the threshold (possible only when the best return is negative), the best
    row itself is returned.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must be in (0, 1]")
    if not table.rows:
        raise ValueError("empty reward table")
    best = max(r.mean_return for r in table.rows)
    threshold = fraction * best
    candidates = [r for r in table.rows if r.mean_return >= threshold]
    if not candidates:
        candidates = [r for r in table.rows if r.mean_return == best]

    def key(row: RewardRow):
        return (param_count(ArchSpec(row.widths), obs_dim, act_dim),
                len(row.widths), row.widths)

    pick = min(candidates, key=key)
    return SelectionRow(arch_index=pick.arch_index, widths=pick.widths,
                        mean_return=pick.mean_return,
                        params=param_count(ArchSpec(pick.widths), obs_dim, act_dim))


def selection_report(table: RewardTable, obs_dim: int, act_dim: int,
                     baseline_return: float | None = None) -> dict:
    """Max / 90% / 80% architectures for one sweep, as one JSON-able dict."""
    out = {
        "max": asdict(select(table, 1.0, obs_dim, act_dim)),
        "p90": asdict(select(table, 0.9, obs_dim, act_dim)),
        "p80": asdict(select(table, 0.8, obs_dim, act_dim)),
    }
    if baseline_return is not None:
        out["baseline_return"] = baseline_return
    return out


def reward_distribution(table: RewardTable,
                        grid: list[float]) -> list[tuple[float, int]]:
    """(x, number of architectures with return strictly greater than x)."""
    if list(grid) != sorted(grid):
        raise ValueError("grid must be sorted ascending")
    returns = np.array([r.mean_return for r in table.rows])
    return [(float(x), int(np.sum(returns > x))) for x in grid]


# -- persistence -------------------------------------------------------------

def table_to_json(table: RewardTable, path: str) -> None:
    data = {"metadata": table.metadata, "rows": [asdict(r) for r in table.rows]}
    for row in data["rows"]:
        row["widths"] = list(row["widths"])
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)


def table_from_json(path: str) -> RewardTable:
    with open(path) as fh:
        data = json.load(fh)
    rows = [RewardRow(arch_index=r["arch_index"], widths=tuple(r["widths"]),
                      mean_return=r["mean_return"], return_std=r["return_std"],
                      episodes=r["episodes"])
            for r in data["rows"]]
    return RewardTable(metadata=data["metadata"], rows=rows)


def table_to_csv(table: RewardTable, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arch_index", "widths", "mean_return", "return_std",
                         "episodes"])
        for r in table.rows:
            writer.writerow([r.arch_index, ",".join(map(str, r.widths)),
                             f"{r.mean_return:.6g}", f"{r.return_std:.6g}",
                             r.episodes])


# -- policy export ------------------------------------------------------------

def export_policy(ckpt: Checkpoint, spec: ArchSpec, path: str) -> None:
    """Write one architecture's policy as a standalone binary file.

    Layout (all little-endian): magic "HPOL", version u32, obs_dim u32,
    act_dim u32, n_layers u32, the hidden widths as u32 each, the frozen
    normalizer mean then std (obs_dim float32 each), then per layer the
    row-major float32 weights followed by the biases.
    """
    model, normalizer = load_model(ckpt)
    phi = model.generate_weights(spec)
    norm_mean = normalizer.mean.astype("<f4")
    norm_std = normalizer.std.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(EXPORT_MAGIC)
        fh.write(struct.pack("<IIII", EXPORT_VERSION, phi.obs_dim, phi.act_dim,
                             len(spec.widths)))
        fh.write(struct.pack(f"<{len(spec.widths)}I", *spec.widths))
        fh.write(norm_mean.tobytes())
        fh.write(norm_std.tobytes())
        for w, b in zip(phi.weights, phi.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.asarray(b, dtype="<f4").tobytes())


@dataclass
class ExportedPolicy:
    obs_dim: int
    act_dim: int
    widths: tuple[int, ...]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def forward(self, obs: np.ndarray) -> np.ndarray:
        """Mean action from raw (unnormalized) observations."""
        x = (np.asarray(obs, dtype=np.float32) - self.norm_mean) / self.norm_std
        squeeze = x.ndim == 1
        if squeeze:
            x = x.reshape(1, -1)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i != last:
                x = np.tanh(x)
        return x[0] if squeeze else x


def load_exported_policy(path: str) -> ExportedPolicy:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:4] != EXPORT_MAGIC:
        raise ExportError(f"{path}: not an exported policy (bad magic)")
    version, obs_dim, act_dim, depth = struct.unpack("<IIII", raw[4:20])
    if version != EXPORT_VERSION:
        raise ExportError(f"{path}: unsupported version {version}")
    off = 20
    need = depth * 4
    if len(raw) < off + need:
        raise ExportError(f"{path}: truncated widths")
    widths = struct.unpack(f"<{depth}I", raw[off:off + need])
    off += need

    def take(n):
        nonlocal off
        nbytes = n * 4
        if len(raw) < off + nbytes:
            raise ExportError(f"{path}: truncated payload")
        arr = np.frombuffer(raw[off:off + nbytes], dtype="<f4").copy()
        off += nbytes
        return arr

    norm_mean = take(obs_dim)
    norm_std = take(obs_dim)
    sizes = [obs_dim, *widths, act_dim]
    weights, biases = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        weights.append(take(fi * fo).reshape(fi, fo))
        biases.append(take(fo))
    if off != len(raw):
        raise ExportError(f"{path}: {len(raw) - off} trailing bytes")
    return ExportedPolicy(obs_dim=obs_dim, act_dim=act_dim, widths=widths,
                          norm_mean=norm_mean, norm_std=norm_std,
                          weights=weights, biases=biases)


# -- comparison ----------------------------------------------------------------

def compare_small(ckpt: Checkpoint, baseline_ckpt: Checkpoint, spec: ArchSpec,
                  env_kind: str | None = None, episodes: int = 32,
                  seed: int = 0) -> CompareReport:
    """Side-by-side returns of the generated vs directly trained policy."""
    if baseline_ckpt.mode == "baseline" and tuple(baseline_ckpt.header["arch"]) != spec.widths:
        raise ValueError(
            f"baseline checkpoint was trained with "
            f"{tuple(baseline_ckpt.header['arch'])}, not {spec.widths}")
    if env_kind is None:
        env_kind = ckpt.header["env_kind"]

    def run(one: Checkpoint) -> np.ndarray:
        model, normalizer = load_model(one)
        phi = model.generate_weights(spec)
        return eval_episodes(env_kind, phi, normalizer.normalize, episodes,
                             (seed, arch_index(spec)))

    a = run(ckpt)
    b = run(baseline_ckpt)
    return CompareReport(widths=spec.widths, episodes=episodes,
                         hyper_mean=float(a.mean()), hyper_std=float(a.std()),
                         baseline_mean=float(b.mean()), baseline_std=float(b.std()))

"""Architecture-conditioned PPO mathematics.

``compute_gae`` and the small ratio/surrogate/value helpers are plain numpy
(used for analysis and as the reference semantics); ``hyperppo_loss`` builds
the differentiable training objective as a :mod:`hyperppo.numcore` graph. For
every architecture in the batch map, the generated policy weights are rebuilt
inside the graph so gradients reach the generator parameters, and the ratio,
advantages and values all come from that same architecture's data — a
minibatch mixing architectures raises ``MixedArchitectureError``.

The trainer maximizes the clipped surrogate, so the loss is its negation plus
the value-regression term minus an (optional, default tiny) entropy bonus,
averaged per architecture and then across the meta-batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore
from .numcore import CompGraph

_LN_2PI = math.log(2.0 * math.pi)


class MixedArchitectureError(RuntimeError):
    """A minibatch carried data from more than one architecture."""


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.003
    epochs: int = 4
    minibatch_size: int = 1024
    learning_rate: float = 3e-4
    max_grad_norm: float = 0.5
    reward_scale: float = 0.01

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must be in [0, 1]")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip_eps must be positive")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be >= 1")


def compute_gae(rewards, values, bootstrap_value, dones, gamma: float, lam: float):
    """Generalized advantage estimation by backward recursion.

    Time is the trailing axis. ``bootstrap_value`` must broadcast against
    ``rewards`` and supplies V of the successor state wherever it is not
    available from ``values``: at every done (truncation) step and at the
    final step. Returns (advantages, value_targets).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError("rewards, values and dones must have identical shapes")
    boots = np.broadcast_to(np.asarray(bootstrap_value, dtype=np.float64), rewards.shape)
    if not (np.all(np.isfinite(rewards)) and np.all(np.isfinite(values))
            and np.all(np.isfinite(boots))):
        raise ValueError("non-finite input to compute_gae")

    horizon = rewards.shape[-1]
    next_values = np.empty_like(values)
    next_values[..., :-1] = values[..., 1:]
    next_values[..., -1] = boots[..., -1]
    next_values = np.where(dones, boots, next_values)
    delta = rewards + gamma * next_values - values

    adv = np.zeros_like(delta)
    run = np.zeros(delta.shape[:-1])
    for t in reversed(range(horizon)):
        run = delta[..., t] + gamma * lam * ~dones[..., t] * run
        adv[..., t] = run
    return adv, adv + values


def importance_ratio(logp_new, logp_old):
    return np.exp(np.asarray(logp_new) - np.asarray(logp_old))


def clipped_surrogate(ratio, advantage, clip_eps: float):
    """min(ratio * A, clip(ratio, 1 +- eps) * A), per sample."""
    if clip_eps <= 0:
        raise ValueError("clip_eps must be positive")
    ratio = np.asarray(ratio)
    advantage = np.asarray(advantage)
    return np.minimum(ratio * advantage,
                      np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage)


def value_loss(v_pred, v_target):
    v_pred = np.asarray(v_pred)
    v_target = np.asarray(v_target)
    if v_pred.shape != v_target.shape:
        raise ValueError("prediction/target length mismatch")
    diff = v_pred - v_target
    return float(np.mean(diff * diff))


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Zero-mean unit-std normalization over one architecture's batch."""
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clip_grad_norm(arrays: list[np.ndarray], max_norm: float) -> float:
    """Scale all arrays in place if their joint L2 norm exceeds max_norm."""
    total = 0.0
    for a in arrays:
        flat = a.ravel()
        total += float(np.dot(flat, flat))
    total = math.sqrt(total)
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for a in arrays:
            a *= factor
    return total


@dataclass
class SampleBatch:
    """Flattened single-architecture samples ready for a loss minibatch."""

    arch_index: int
    obs: np.ndarray           # (B, obs_dim)
    actions: np.ndarray       # (B, act_dim)
    logp_old: np.ndarray      # (B,)
    advantages: np.ndarray    # (B,) normalized per architecture
    value_targets: np.ndarray  # (B,)
    arch_ids: np.ndarray      # (B,)

    def take(self, idx: np.ndarray) -> "SampleBatch":
        return SampleBatch(self.arch_index, self.obs[idx], self.actions[idx],
                           self.logp_old[idx], self.advantages[idx],
                           self.value_targets[idx], self.arch_ids[idx])

    @property
    def size(self) -> int:
        return int(self.logp_old.shape[0])


class LossEval:
    """Evaluated HyperPPO loss graph; call grads() for the backward pass."""

    def __init__(self, source, graph, loss_node, values, param_leaves,
                 logstd_leaves, per_arch):
        self._source = source
        self._graph = graph
        self._loss_node = loss_node
        self._values = values
        self._param_leaves = param_leaves
        self._logstd_leaves = logstd_leaves
        self.per_arch = per_arch
        self.value = float(np.asarray(values[loss_node]))

    def grads(self) -> tuple[np.ndarray, dict[int, np.ndarray]]:
        """(flat gradient w.r.t. trainable params, per-arch log-std gradients)."""
        leaf_grads = numcore.backward(self._graph, self._loss_node, self._values)
        named = {name: leaf_grads[leaf] for name, leaf in self._param_leaves.items()}
        flat = self._source.flatten_grads(named)
        std_grads = {arch: leaf_grads[leaf] for arch, leaf in self._logstd_leaves.items()}
        return flat, std_grads


def _build_log_prob(g: CompGraph, mean_node: int, logstd_leaf: int,
                    action_const: int, act_dim: int) -> int:
    # Mirrors policy.log_prob_from_log_std operation for operation.
    diff = g.add(action_const, g.neg(mean_node))
    z = g.mul(diff, g.exp(g.neg(logstd_leaf)))
    t1 = g.scale(g.sum(g.square(z), axis=1), -0.5)
    t2 = g.neg(g.sum(logstd_leaf))
    return g.add_const(g.badd(t1, t2), -0.5 * act_dim * _LN_2PI)


def hyperppo_loss(source, std_store, batches: dict[int, SampleBatch],
                  config: PpoConfig) -> LossEval:
    """Build and evaluate the combined objective over single-arch batches.

    ``source`` is the weight provider (the hypernetwork, or the direct MLP in
    baseline mode); it contributes the policy mean and the conditioned value
    for each architecture's observations inside one shared graph.
    """
    if not batches:
        raise ValueError("no batches given")
    g = CompGraph(source.dtype)
    leaves = source.param_leaves(g)
    bindings = source.leaf_bindings(leaves)
    logstd_leaves: dict[int, int] = {}
    arch_nodes: dict[int, dict[str, int]] = {}
    totals = []

    for arch in sorted(batches):
        batch = batches[arch]
        if batch.arch_index != arch or not np.all(batch.arch_ids == arch):
            raise MixedArchitectureError(
                f"minibatch keyed {arch} carries data from architectures "
                f"{sorted(set(int(a) for a in np.unique(batch.arch_ids)))}")
        n = batch.size
        obs = g.const(np.asarray(batch.obs, dtype=source.dtype))
        act = g.const(np.asarray(batch.actions, dtype=source.dtype))
        adv = g.const(np.asarray(batch.advantages, dtype=source.dtype))
        tgt = g.const(np.asarray(batch.value_targets, dtype=source.dtype))
        neg_old = g.const(-np.asarray(batch.logp_old, dtype=source.dtype))

        ls = g.leaf(f"log_std_{arch}")
        logstd_leaves[arch] = ls
        bindings[ls] = std_store.log_std(arch)

        mean, value = source.build_mean_and_value(g, leaves, arch, obs, n)
        logp_new = _build_log_prob(g, mean, ls, act, source.act_dim)
        ratio = g.exp(g.add(logp_new, neg_old))
        unclipped = g.mul(ratio, adv)
        clipped = g.mul(g.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps), adv)
        surrogate = g.mean(g.minimum(unclipped, clipped))
        vloss = g.mean(g.square(g.sub(value, tgt)))
        entropy = g.add_const(g.sum(ls), 0.5 * source.act_dim * (1.0 + _LN_2PI))

        total = g.add(g.add(g.neg(surrogate), g.scale(vloss, config.value_coef)),
                      g.scale(entropy, -config.entropy_coef))
        totals.append(total)
        arch_nodes[arch] = {"surrogate": surrogate, "value_loss": vloss,
                            "entropy": entropy}

    acc = totals[0]
    for t in totals[1:]:
        acc = g.add(acc, t)
    loss_node = g.scale(acc, 1.0 / len(totals))

    values = numcore.forward(g, bindings)
    per_arch = {
        arch: {k: float(np.asarray(values[v])) for k, v in nodes.items()}
        for arch, nodes in arch_nodes.items()
    }
    return LossEval(source, g, loss_node, values, leaves, logstd_leaves, per_arch)

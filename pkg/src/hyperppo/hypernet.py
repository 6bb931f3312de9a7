"""Graph hyper-policy: turn an architecture into concrete MLP weights.

An architecture is encoded as a chain graph (input node, one node per hidden
layer, output node) with per-node features. Gated message passing over the
chain produces node states; a shared decoder then emits, for every edge, a
maximum-size 256x256 weight slab plus a 256 bias row, sliced top-left to the
actual fan-in/fan-out and rescaled by 1/sqrt(fan_in) so fresh policies start
near standard MLP initialization. Because the slab decoder is shared, the
trainable parameter count does not depend on which architecture is queried.

A fixed-size architecture embedding (mean node state through a linear head)
conditions the shared critic, which maps concat(state, embedding) to a value.

All computation is expressed through :mod:`hyperppo.numcore` graphs, so the
same construction serves both plain weight generation and the training loss,
where gradients must flow from generated weights back to the trainable
parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore
from .archspace import WIDTH_ALPHABET, ArchSpec, layer_dims, spec_at
from .numcore import CompGraph
from .policy import GeneratedWeights

MAX_WIDTH = max(WIDTH_ALPHABET)  # 256; also caps obs_dim / act_dim
FEATURE_DIM = len(WIDTH_ALPHABET) + 3  # one-hot width + depth position + io flags

# With the decoder input gain below, decoder-hidden activations land at an
# rms near this constant across the whole space; compensating for it keeps
# raw slab entries near unit variance at initialization.
_DEC_HIDDEN_RMS = 0.65
_DEC_INPUT_GAIN = 6.0


@dataclass
class ArchGraph:
    """Chain-graph encoding of one architecture."""

    spec: ArchSpec
    features: np.ndarray  # (n_nodes, FEATURE_DIM)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]


def encode_arch(spec: ArchSpec, obs_dim: int, act_dim: int) -> ArchGraph:
    """Per-node features: one-hot width, normalized depth position, io flags."""
    n = spec.depth + 2
    feats = np.zeros((n, FEATURE_DIM))
    pos_col = len(WIDTH_ALPHABET)
    for i in range(n):
        feats[i, pos_col] = i / (n - 1)
    feats[0, pos_col + 1] = 1.0  # input flag
    feats[n - 1, pos_col + 2] = 1.0  # output flag
    for j, w in enumerate(spec.widths):
        feats[j + 1, WIDTH_ALPHABET.index(w)] = 1.0
    return ArchGraph(spec=spec, features=feats)


class HyperNet:
    """Trainable weight generator plus conditioned critic for one task.

    Parameters live in one contiguous flat array; the named arrays handed to
    graphs are views into it, so an in-place Adam step on ``flat_params``
    updates everything at once. ``layout()`` records the (name, shape) order
    for checkpoints.
    """

    def __init__(self, obs_dim: int, act_dim: int, *, emb_dim: int = 16,
                 node_dim: int = 64, rounds: int = 3, dec_hidden: int = 64,
                 critic_hidden: int = 128, seed: int = 0, dtype=np.float32):
        if not (1 <= obs_dim <= MAX_WIDTH and 1 <= act_dim <= MAX_WIDTH):
            raise ValueError(f"obs_dim and act_dim must be in [1, {MAX_WIDTH}]")
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.emb_dim = emb_dim
        self.node_dim = node_dim
        self.rounds = rounds
        self.dec_hidden = dec_hidden
        self.critic_hidden = critic_hidden
        self.dtype = np.dtype(dtype)
        self.generate_calls = 0
        self._graph_cache: dict[tuple, tuple] = {}

        shapes = self._param_shapes()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x48505054]))
        total = sum(int(np.prod(s)) for _, s in shapes)
        self.flat_params = np.zeros(total, dtype=self.dtype)
        self.params: dict[str, np.ndarray] = {}
        self._layout: list[tuple[str, tuple[int, ...]]] = []
        off = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            view = self.flat_params[off:off + size].reshape(shape)
            view[...] = self._init_array(name, shape, rng).astype(self.dtype)
            self.params[name] = view
            self._layout.append((name, shape))
            off += size

    # -- parameters ---------------------------------------------------------
    def _param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        h, dd, e, ch = self.node_dim, self.dec_hidden, self.emb_dim, self.critic_hidden
        shapes = [("enc_w", (FEATURE_DIM, h)), ("enc_b", (h,))]
        for r in range(self.rounds):
            shapes += [
                (f"mp{r}_fwd", (h, h)), (f"mp{r}_bwd", (h, h)),
                (f"mp{r}_gate_w", (h, h)), (f"mp{r}_gate_u", (h, h)), (f"mp{r}_gate_b", (h,)),
                (f"mp{r}_cand_w", (h, h)), (f"mp{r}_cand_u", (h, h)), (f"mp{r}_cand_b", (h,)),
            ]
        shapes += [
            ("dec_w1", (2 * h, dd)), ("dec_b1", (dd,)),
            ("dec_slab_w", (dd, MAX_WIDTH * MAX_WIDTH)), ("dec_slab_b", (MAX_WIDTH * MAX_WIDTH,)),
            ("dec_bias_w", (dd, MAX_WIDTH)), ("dec_bias_b", (MAX_WIDTH,)),
            ("emb_w", (h, e)), ("emb_b", (e,)),
            ("crit_w1", (self.obs_dim + e, ch)), ("crit_b1", (ch,)),
            ("crit_w2", (ch, ch)), ("crit_b2", (ch,)),
            ("crit_w3", (ch, 1)), ("crit_b3", (1,)),
        ]
        return shapes

    def _init_array(self, name: str, shape, rng: np.random.Generator) -> np.ndarray:
        if len(shape) == 1:
            return np.zeros(shape)
        fan_in = shape[0]
        if name == "dec_w1":
            scale = _DEC_INPUT_GAIN / math.sqrt(fan_in)
        elif name in ("dec_slab_w", "dec_bias_w"):
            scale = 1.0 / (_DEC_HIDDEN_RMS * math.sqrt(fan_in))
        else:
            scale = 1.0 / math.sqrt(fan_in)
        return rng.standard_normal(shape) * scale

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        return list(self._layout)

    @property
    def n_params(self) -> int:
        return self.flat_params.size

    def param_leaves(self, g: CompGraph) -> dict[str, int]:
        return {name: g.leaf(name) for name, _ in self._layout}

    def leaf_bindings(self, leaves: dict[str, int]) -> dict[int, np.ndarray]:
        return {leaf: self.params[name] for name, leaf in leaves.items()}

    # -- graph construction --------------------------------------------------
    def build_node_states(self, g: CompGraph, leaves: dict[str, int],
                          spec: ArchSpec) -> int:
        feats = g.const(encode_arch(spec, self.obs_dim, self.act_dim).features)
        n, h = spec.depth + 2, self.node_dim
        states = g.tanh(g.badd(g.matmul(feats, leaves["enc_w"]), leaves["enc_b"]))
        for r in range(self.rounds):
            pad = g.const(np.zeros((1, h)))
            fwd = g.concat(
                [pad, g.matmul(g.slice(states, (0, 0), (n - 1, h)), leaves[f"mp{r}_fwd"])],
                axis=0)
            bwd = g.concat(
                [g.matmul(g.slice(states, (1, 0), (n, h)), leaves[f"mp{r}_bwd"]), pad],
                axis=0)
            msg = g.add(fwd, bwd)
            z = g.sigmoid(g.badd(
                g.add(g.matmul(states, leaves[f"mp{r}_gate_w"]),
                      g.matmul(msg, leaves[f"mp{r}_gate_u"])),
                leaves[f"mp{r}_gate_b"]))
            cand = g.tanh(g.badd(
                g.add(g.matmul(states, leaves[f"mp{r}_cand_w"]),
                      g.matmul(msg, leaves[f"mp{r}_cand_u"])),
                leaves[f"mp{r}_cand_b"]))
            states = g.add(states, g.mul(z, g.sub(cand, states)))
        return states

    def build_weight_nodes(self, g: CompGraph, leaves: dict[str, int],
                           spec: ArchSpec, states: int) -> list[tuple[int, int]]:
        """Per-layer (weight node, bias node) for the target MLP."""
        h = self.node_dim
        out = []
        for layer, (fi, fo) in enumerate(layer_dims(spec, self.obs_dim, self.act_dim)):
            pair = g.concat(
                [g.slice(states, (layer, 0), (layer + 1, h)),
                 g.slice(states, (layer + 1, 0), (layer + 2, h))],
                axis=1)
            dec = g.tanh(g.badd(g.matmul(pair, leaves["dec_w1"]), leaves["dec_b1"]))
            slab = g.badd(g.matmul(dec, leaves["dec_slab_w"]), leaves["dec_slab_b"])
            slab = g.reshape(slab, (MAX_WIDTH, MAX_WIDTH))
            w = g.scale(g.slice(slab, (0, 0), (fi, fo)), 1.0 / math.sqrt(fi))
            brow = g.badd(g.matmul(dec, leaves["dec_bias_w"]), leaves["dec_bias_b"])
            b = g.scale(g.reshape(g.slice(brow, (0, 0), (1, fo)), (fo,)),
                        1.0 / math.sqrt(fi))
            out.append((w, b))
        return out

    def build_embedding_node(self, g: CompGraph, leaves: dict[str, int],
                             states: int) -> int:
        pooled = g.reshape(g.mean(states, axis=0), (1, self.node_dim))
        return g.badd(g.matmul(pooled, leaves["emb_w"]), leaves["emb_b"])

    def build_policy_mean(self, g: CompGraph, weight_nodes: list[tuple[int, int]],
                          obs_node: int) -> int:
        x = obs_node
        last = len(weight_nodes) - 1
        for i, (w, b) in enumerate(weight_nodes):
            x = g.badd(g.matmul(x, w), b)
            if i != last:
                x = g.tanh(x)
        return x

    def build_value_node(self, g: CompGraph, leaves: dict[str, int],
                         obs_node: int, batch: int, emb_node: int) -> int:
        tiled = g.badd(g.const(np.zeros((batch, self.emb_dim))), emb_node)
        x = g.concat([obs_node, tiled], axis=1)
        x = g.tanh(g.badd(g.matmul(x, leaves["crit_w1"]), leaves["crit_b1"]))
        x = g.tanh(g.badd(g.matmul(x, leaves["crit_w2"]), leaves["crit_b2"]))
        v = g.badd(g.matmul(x, leaves["crit_w3"]), leaves["crit_b3"])
        return g.reshape(v, (batch,))

    def build_mean_and_value(self, g: CompGraph, leaves: dict[str, int],
                             arch_index: int, obs_node: int,
                             batch: int) -> tuple[int, int]:
        """Loss-graph entry point: policy mean and V(s, g) for one arch."""
        spec = spec_at(arch_index)
        states = self.build_node_states(g, leaves, spec)
        wnodes = self.build_weight_nodes(g, leaves, spec, states)
        mean = self.build_policy_mean(g, wnodes, obs_node)
        emb = self.build_embedding_node(g, leaves, states)
        value = self.build_value_node(g, leaves, obs_node, batch, emb)
        return mean, value

    def flatten_grads(self, named: dict[str, np.ndarray]) -> np.ndarray:
        """Concatenate per-name gradients in checkpoint layout order."""
        return np.concatenate([np.asarray(named[name]).ravel()
                               for name, _ in self._layout])

    # -- evaluation ----------------------------------------------------------
    def _gen_graph(self, spec: ArchSpec):
        key = spec.widths
        if key not in self._graph_cache:
            g = CompGraph(self.dtype)
            leaves = self.param_leaves(g)
            states = self.build_node_states(g, leaves, spec)
            wnodes = self.build_weight_nodes(g, leaves, spec, states)
            emb = self.build_embedding_node(g, leaves, states)
            self._graph_cache[key] = (g, leaves, wnodes, emb)
        return self._graph_cache[key]

    def generate_weights(self, spec: ArchSpec) -> GeneratedWeights:
        """Concrete weights for one architecture in a single forward pass."""
        g, leaves, wnodes, _ = self._gen_graph(spec)
        values = numcore.forward(g, self.leaf_bindings(leaves))
        self.generate_calls += 1
        return GeneratedWeights(
            spec=spec, obs_dim=self.obs_dim, act_dim=self.act_dim,
            weights=[values[w] for w, _ in wnodes],
            biases=[values[b] for _, b in wnodes],
        )

    def arch_embedding(self, spec: ArchSpec) -> np.ndarray:
        g, leaves, _, emb = self._gen_graph(spec)
        values = numcore.forward(g, self.leaf_bindings(leaves))
        return values[emb].reshape(self.emb_dim)

    def state_values(self, spec: ArchSpec, obs: np.ndarray) -> np.ndarray:
        """Critic values V(s, g) for a batch of normalized observations."""
        obs = np.asarray(obs, dtype=self.dtype)
        g = CompGraph(self.dtype)
        leaves = self.param_leaves(g)
        states = self.build_node_states(g, leaves, spec)
        emb = self.build_embedding_node(g, leaves, states)
        obs_node = g.const(obs)
        v = self.build_value_node(g, leaves, obs_node, obs.shape[0], emb)
        return numcore.forward(g, self.leaf_bindings(leaves))[v]

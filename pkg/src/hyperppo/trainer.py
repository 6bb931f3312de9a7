"""Training loop: sample a meta-batch of architectures, generate their
policies, collect rollouts, then take K epochs of per-architecture minibatch
Adam steps on the combined objective.

Also provides the fixed-architecture baseline (a directly parameterized MLP
run through the identical loop), binary checkpointing with bit-exact resume,
the running observation normalizer shared across architectures, and the
metrics CSV stream.

Everything stochastic draws from named PCG64 streams spawned off the run
seed (architecture sampling, action noise, minibatch shuffling, one stream
per environment), and all stream states are checkpointed, so a fixed seed and
config reproduce training bit for bit and a resumed run continues the exact
trajectory of an uninterrupted one.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .archspace import (ArchDistribution, ArchSpec, arch_index, layer_dims,
                        param_count, parse_arch, sample_archs)
from .envs import ArchPolicy, EnvInstance, env_dims, make_env, vec_rollout
from .hypernet import HyperNet
from .numcore import AdamState, CompGraph, adam_step
from .policy import GeneratedWeights, StdStore, get_std, policy_forward
from .ppo import (PpoConfig, SampleBatch, clip_grad_norm, compute_gae,
                  hyperppo_loss, normalize_advantages)

CHECKPOINT_MAGIC = b"HPPO"
CHECKPOINT_VERSION = 1

METRICS_HEADER = ("iter", "env_steps", "arch_index", "widths", "mean_return",
                  "policy_loss", "value_loss", "std_mean")


class CheckpointError(RuntimeError):
    """Unreadable, truncated or mismatched checkpoint file."""


class TrainingAborted(RuntimeError):
    """Non-finite loss; the last good state was checkpointed if possible."""


class RunningNorm:
    """Running mean/std observation normalizer (Welford, batched updates)."""

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.dim)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        delta = b_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + b_m2 + delta ** 2 * (self.count * n / total)
        self.count = total

    @property
    def std(self) -> np.ndarray:
        if self.count < 1:
            return np.ones(self.dim)
        return np.sqrt(self.m2 / self.count + 1e-8)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        if self.count < 1:
            return np.asarray(obs)
        return (np.asarray(obs) - self.mean) / self.std

    def state(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(),
                "m2": self.m2.tolist()}

    @classmethod
    def from_state(cls, dim: int, state: dict) -> "RunningNorm":
        out = cls(dim)
        out.count = float(state["count"])
        out.mean = np.asarray(state["mean"], dtype=np.float64)
        out.m2 = np.asarray(state["m2"], dtype=np.float64)
        return out


@dataclass
class TrainConfig:
    env_kind: str = "pointmass"
    mode: str = "hyper"  # or "baseline"
    seed: int = 0
    total_env_steps: int = 200_000
    num_envs: int = 64
    rollout_len: int = 128
    meta_batch: int = 8
    arch_sampling: str = "biased"
    std_mode: str = "csd"
    eval_every: int = 1
    eval_episodes: int = 2
    arch: ArchSpec | None = None  # baseline mode only
    out_dir: str | None = None
    checkpoint_every: int = 0  # extra rolling saves every k iterations; 0 = final only
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        if self.mode not in ("hyper", "baseline"):
            raise ValueError(f"mode must be hyper or baseline, got {self.mode!r}")
        if self.total_env_steps <= 0:
            raise ValueError("total_env_steps must be positive")
        if self.mode == "hyper" and self.num_envs % self.meta_batch != 0:
            raise ValueError("num_envs must be divisible by meta_batch in hyper mode")
        if self.mode == "baseline" and self.arch is None:
            raise ValueError("baseline mode requires an architecture")


_RUN_FIELDS = {
    "mode": str, "seed": int, "total_env_steps": int, "num_envs": int,
    "rollout_length": int, "meta_batch": int, "arch_sampling": str,
    "std_mode": str, "eval_every": int, "eval_episodes": int, "arch": str,
    "out_dir": str, "checkpoint_every": int,
}
_ENV_FIELDS = {"kind": str}
_PPO_FIELDS = {
    "gamma": float, "gae_lambda": float, "clip_eps": float, "value_coef": float,
    "entropy_coef": float, "epochs": int, "minibatch_size": int,
    "learning_rate": float, "max_grad_norm": float, "reward_scale": float,
}


def parse_config(path: str) -> TrainConfig:
    """Read the [run]/[env]/[ppo] key-value config file; unknown keys error."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(path)
    for section in parser.sections():
        if section not in ("run", "env", "ppo"):
            raise ValueError(f"unknown config section [{section}]")

    def collect(section, fields):
        out = {}
        if not parser.has_section(section):
            return out
        for key, raw in parser.items(section):
            if key not in fields:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            conv = fields[key]
            try:
                out[key] = conv(raw)
            except ValueError:
                raise ValueError(f"bad value {raw!r} for [{section}] {key}")
        return out

    run = collect("run", _RUN_FIELDS)
    env = collect("env", _ENV_FIELDS)
    ppo_kw = collect("ppo", _PPO_FIELDS)

    kwargs = {}
    if "kind" in env:
        kwargs["env_kind"] = env["kind"]
    rename = {"rollout_length": "rollout_len"}
    for key, value in run.items():
        if key == "arch":
            kwargs["arch"] = parse_arch(value)
        else:
            kwargs[rename.get(key, key)] = value
    kwargs["ppo"] = PpoConfig(**ppo_kw)
    return TrainConfig(**kwargs)


def config_to_dict(cfg: TrainConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["arch"] = list(cfg.arch.widths) if cfg.arch is not None else None
    return out


class DirectMlp:
    """Directly parameterized policy + critic for the baseline PPO mode.

    Exposes the same surface the loss builder and trainer use on the
    hypernetwork, with generate_weights simply snapshotting the live layers.
    """

    def __init__(self, spec: ArchSpec, obs_dim: int, act_dim: int, *,
                 critic_hidden: int = 128, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.critic_hidden = critic_hidden
        self.dtype = np.dtype(dtype)
        self.generate_calls = 0

        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x424c4e]))
        dims = layer_dims(spec, obs_dim, act_dim)
        shapes: list[tuple[str, tuple[int, ...]]] = []
        for i, (fi, fo) in enumerate(dims):
            shapes += [(f"w{i}", (fi, fo)), (f"b{i}", (fo,))]
        ch = critic_hidden
        shapes += [("crit_w1", (obs_dim, ch)), ("crit_b1", (ch,)),
                   ("crit_w2", (ch, ch)), ("crit_b2", (ch,)),
                   ("crit_w3", (ch, 1)), ("crit_b3", (1,))]

        total = sum(int(np.prod(s)) for _, s in shapes)
        self.flat_params = np.zeros(total, dtype=self.dtype)
        self.params: dict[str, np.ndarray] = {}
        self._layout = []
        off = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            view = self.flat_params[off:off + size].reshape(shape)
            if len(shape) == 2:
                view[...] = (rng.standard_normal(shape) / math.sqrt(shape[0])).astype(self.dtype)
            self.params[name] = view
            self._layout.append((name, shape))
            off += size
        self.n_layers = len(dims)

    def layout(self):
        return list(self._layout)

    @property
    def n_params(self) -> int:
        return self.flat_params.size

    @property
    def policy_param_count(self) -> int:
        return param_count(self.spec, self.obs_dim, self.act_dim)

    def param_leaves(self, g: CompGraph) -> dict[str, int]:
        return {name: g.leaf(name) for name, _ in self._layout}

    def leaf_bindings(self, leaves) -> dict[int, np.ndarray]:
        return {leaf: self.params[name] for name, leaf in leaves.items()}

    def flatten_grads(self, named: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(named[name]).ravel()
                               for name, _ in self._layout])

    def build_mean_and_value(self, g: CompGraph, leaves, arch: int,
                             obs_node: int, batch: int):
        if arch != arch_index(self.spec):
            raise ValueError(f"baseline policy is {self.spec}, asked for arch {arch}")
        x = obs_node
        for i in range(self.n_layers):
            x = g.badd(g.matmul(x, leaves[f"w{i}"]), leaves[f"b{i}"])
            if i != self.n_layers - 1:
                x = g.tanh(x)
        v = g.tanh(g.badd(g.matmul(obs_node, leaves["crit_w1"]), leaves["crit_b1"]))
        v = g.tanh(g.badd(g.matmul(v, leaves["crit_w2"]), leaves["crit_b2"]))
        v = g.reshape(g.badd(g.matmul(v, leaves["crit_w3"]), leaves["crit_b3"]), (batch,))
        return x, v

    def generate_weights(self, spec: ArchSpec) -> GeneratedWeights:
        if spec != self.spec:
            raise ValueError(f"baseline policy is {self.spec}, asked for {spec}")
        self.generate_calls += 1
        return GeneratedWeights(
            spec=spec, obs_dim=self.obs_dim, act_dim=self.act_dim,
            weights=[self.params[f"w{i}"].copy() for i in range(self.n_layers)],
            biases=[self.params[f"b{i}"].copy() for i in range(self.n_layers)],
        )

    def state_values(self, spec: ArchSpec, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=self.dtype)
        x = np.tanh(obs @ self.params["crit_w1"] + self.params["crit_b1"])
        x = np.tanh(x @ self.params["crit_w2"] + self.params["crit_b2"])
        return (x @ self.params["crit_w3"] + self.params["crit_b3"]).reshape(-1)


@dataclass
class Checkpoint:
    """Full training state; round-trips through save/load bit-exactly."""

    header: dict
    flat_params: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray

    @property
    def iteration(self) -> int:
        return self.header["iteration"]

    @property
    def env_steps(self) -> int:
        return self.header["env_steps"]

    @property
    def mode(self) -> str:
        return self.header["mode"]


def _gen_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state

def _gen_from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    arrays = [("flat_params", ckpt.flat_params),
              ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v)]
    header = dict(ckpt.header)
    header["arrays"] = [
        {"name": name, "dtype": arr.dtype.newbyteorder("<").str, "shape": list(arr.shape)}
        for name, arr in arrays
    ]
    blob = json.dumps(header).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for _, arr in arrays:
        buf.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    hlen, = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})")
    off = 16 + hlen
    out = {}
    for entry in header.pop("arrays"):
        dt = np.dtype(entry["dtype"])
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = n * dt.itemsize
        if len(raw) < off + nbytes:
            raise CheckpointError(f"{path}: truncated array {entry['name']}")
        out[entry["name"]] = np.frombuffer(
            raw[off:off + nbytes], dtype=dt).reshape(entry["shape"]).copy()
        off += nbytes
    return Checkpoint(header=header,
                      flat_params=out["flat_params"],
                      adam_m=out["adam_m"], adam_v=out["adam_v"])


def _adam_to_json(state: AdamState) -> dict:
    return {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
            "eps": state.eps, "step": state.step,
            "m": None if state.m is None else state.m.tolist(),
            "v": None if state.v is None else state.v.tolist()}


def _adam_from_json(data: dict, dtype) -> AdamState:
    st = AdamState(lr=data["lr"], beta1=data["beta1"], beta2=data["beta2"],
                   eps=data["eps"], step=data["step"])
    if data["m"] is not None:
        st.m = np.asarray(data["m"], dtype=dtype)
        st.v = np.asarray(data["v"], dtype=dtype)
    return st


class Trainer:
    """One training run; create fresh from a config or from a checkpoint."""

    def __init__(self, config: TrainConfig):
        self.cfg = config
        self.obs_dim, self.act_dim, self.horizon = env_dims(config.env_kind)
        self.dist = ArchDistribution(config.arch_sampling)
        self.iteration = 0
        self.env_steps = 0
        self._metrics_fh = None

        if config.mode == "hyper":
            self.model = HyperNet(self.obs_dim, self.act_dim, seed=config.seed)
        else:
            self.model = DirectMlp(config.arch, self.obs_dim, self.act_dim,
                                   seed=config.seed)
        self.adam = AdamState(lr=config.ppo.learning_rate)
        self.adam.ensure(self.model.flat_params)
        self.std_store = StdStore(config.std_mode, self.act_dim,
                                  lr=config.ppo.learning_rate)
        self.normalizer = RunningNorm(self.obs_dim)

        root = np.random.SeedSequence(config.seed)
        arch_seq, action_seq, shuffle_seq, env_root = root.spawn(4)
        self.arch_rng = np.random.Generator(np.random.PCG64(arch_seq))
        self.action_rng = np.random.Generator(np.random.PCG64(action_seq))
        self.shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_seq))
        self.envs: list[EnvInstance] = []
        for seq in env_root.spawn(config.num_envs):
            env = make_env(config.env_kind, np.random.Generator(np.random.PCG64(seq)))
            env.reset()
            self.envs.append(env)
        self.metrics: list[dict] = []

    # -- checkpointing -------------------------------------------------------
    def make_checkpoint(self) -> Checkpoint:
        cfg = self.cfg
        std = self.std_store
        std_state = {
            "mode": std.mode, "lr": std.lr, "init_log_std": std.init_log_std,
            "csd_row": std._csd_row.tolist(),
            "csd_adam": _adam_to_json(std._csd_adam),
            "vsd_rows": {str(k): v.tolist() for k, v in std._vsd_rows.items()},
            "vsd_adam": {str(k): _adam_to_json(v) for k, v in std._vsd_adam.items()},
        }
        header = {
            "mode": cfg.mode,
            "env_kind": cfg.env_kind,
            "std_mode": cfg.std_mode,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "arch": list(cfg.arch.widths) if cfg.arch is not None else None,
            "model_dims": self._model_dims(),
            "layout": [[name, list(shape)] for name, shape in self.model.layout()],
            "dtype": str(self.model.dtype),
            "adam": {"lr": self.adam.lr, "beta1": self.adam.beta1,
                     "beta2": self.adam.beta2, "eps": self.adam.eps,
                     "step": self.adam.step},
            "std": std_state,
            "normalizer": self.normalizer.state(),
            "rng": {
                "arch": _gen_state(self.arch_rng),
                "action": _gen_state(self.action_rng),
                "shuffle": _gen_state(self.shuffle_rng),
                "envs": [_gen_state(e.rng) for e in self.envs],
            },
            "env_runtime": [
                {"state": e.state.tolist(), "step_count": e.step_count}
                for e in self.envs
            ],
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "config": config_to_dict(cfg),
        }
        return Checkpoint(header=header,
                          flat_params=self.model.flat_params.copy(),
                          adam_m=self.adam.m.copy(), adam_v=self.adam.v.copy())

    def _model_dims(self) -> dict:
        if self.cfg.mode == "hyper":
            m = self.model
            return {"emb_dim": m.emb_dim, "node_dim": m.node_dim,
                    "rounds": m.rounds, "dec_hidden": m.dec_hidden,
                    "critic_hidden": m.critic_hidden}
        return {"critic_hidden": self.model.critic_hidden}

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, config: TrainConfig | None = None) -> "Trainer":
        hdr = ckpt.header
        if config is None:
            config = restore_config(hdr["config"])
        for key in ("mode", "env_kind", "std_mode"):
            if hdr[key] != getattr(config, key):
                raise CheckpointError(
                    f"checkpoint {key}={hdr[key]!r} does not match config")
        ckpt_arch = tuple(hdr["arch"]) if hdr["arch"] is not None else None
        cfg_arch = config.arch.widths if config.arch is not None else None
        if ckpt_arch != cfg_arch:
            raise CheckpointError("checkpoint architecture does not match config")

        trainer = cls(config)
        expected = [[name, list(shape)] for name, shape in trainer.model.layout()]
        if expected != hdr["layout"]:
            raise CheckpointError("checkpoint layout does not match model")
        trainer.model.flat_params[...] = ckpt.flat_params.astype(trainer.model.dtype)
        trainer.adam = AdamState(**{k: hdr["adam"][k] for k in
                                    ("lr", "beta1", "beta2", "eps", "step")})
        trainer.adam.m = ckpt.adam_m.astype(trainer.model.dtype).copy()
        trainer.adam.v = ckpt.adam_v.astype(trainer.model.dtype).copy()

        std_state = hdr["std"]
        store = StdStore(std_state["mode"], trainer.act_dim, lr=std_state["lr"],
                         init_log_std=std_state["init_log_std"])
        store._csd_row[...] = np.asarray(std_state["csd_row"], dtype=store.dtype)
        store._csd_adam = _adam_from_json(std_state["csd_adam"], store.dtype)
        for key, row in std_state["vsd_rows"].items():
            store._vsd_rows[int(key)] = np.asarray(row, dtype=store.dtype)
        for key, st in std_state["vsd_adam"].items():
            store._vsd_adam[int(key)] = _adam_from_json(st, store.dtype)
        trainer.std_store = store

        trainer.normalizer = RunningNorm.from_state(trainer.obs_dim, hdr["normalizer"])
        trainer.arch_rng = _gen_from_state(hdr["rng"]["arch"])
        trainer.action_rng = _gen_from_state(hdr["rng"]["action"])
        trainer.shuffle_rng = _gen_from_state(hdr["rng"]["shuffle"])
        for env, rng_state, runtime in zip(trainer.envs, hdr["rng"]["envs"],
                                           hdr["env_runtime"]):
            env.rng = _gen_from_state(rng_state)
            env.set_state((np.asarray(runtime["state"], dtype=np.float64),
                           runtime["step_count"]))
        trainer.iteration = hdr["iteration"]
        trainer.env_steps = hdr["env_steps"]
        return trainer

    # -- evaluation ----------------------------------------------------------
    def evaluate_spec(self, spec: ArchSpec, phi: GeneratedWeights | None = None) -> float:
        """Deterministic mean-action evaluation; seeds fixed per (run, arch)."""
        phi = phi if phi is not None else self.model.generate_weights(spec)
        returns = eval_episodes(self.cfg.env_kind, phi, self.normalizer.normalize,
                                self.cfg.eval_episodes,
                                (self.cfg.seed, 0xEA7, arch_index(spec)))
        return float(np.mean(returns))

    # -- training ------------------------------------------------------------
    def run(self, plot: bool = True) -> "TrainResult":
        cfg = self.cfg
        if cfg.out_dir:
            os.makedirs(cfg.out_dir, exist_ok=True)
            mode = "a" if self.iteration > 0 else "w"
            self._metrics_fh = open(os.path.join(cfg.out_dir, "metrics.csv"), mode)
            if mode == "w":
                self._metrics_fh.write(",".join(METRICS_HEADER) + "\n")
        try:
            while self.env_steps < cfg.total_env_steps:
                self.train_iteration()
                if (cfg.out_dir and cfg.checkpoint_every
                        and self.iteration % cfg.checkpoint_every == 0):
                    save_checkpoint(self.make_checkpoint(),
                                    os.path.join(cfg.out_dir, "checkpoint.hppo"))
        finally:
            if self._metrics_fh:
                self._metrics_fh.close()
                self._metrics_fh = None
        ckpt = self.make_checkpoint()
        if cfg.out_dir:
            save_checkpoint(ckpt, os.path.join(cfg.out_dir, "checkpoint.hppo"))
            if plot:
                from . import plots
                plots.training_curve(self.metrics,
                                     os.path.join(cfg.out_dir, "metrics.png"))
        return TrainResult(checkpoint=ckpt, metrics=list(self.metrics))

    def train_iteration(self) -> None:
        cfg = self.cfg
        snapshot = self.make_checkpoint()

        if cfg.mode == "hyper":
            specs = sample_archs(self.dist, self.arch_rng, cfg.meta_batch,
                                 replace=False)
        else:
            specs = [cfg.arch]
        indices = [arch_index(s) for s in specs]
        spec_of = {arch_index(s): s for s in specs}

        policies: dict[int, ArchPolicy] = {}
        for spec, idx in zip(specs, indices):
            phi = self.model.generate_weights(spec)
            policies[idx] = ArchPolicy(arch_index=idx, phi=phi,
                                       log_std=self.std_store.log_std(idx).copy())

        do_eval = cfg.eval_every > 0 and self.iteration % cfg.eval_every == 0
        eval_returns = {
            idx: (self.evaluate_spec(spec_of[idx], policies[idx].phi)
                  if do_eval else float("nan"))
            for idx in indices
        }

        per_env = len(self.envs) // len(specs)
        assignment = [indices[e // per_env] for e in range(len(self.envs))]
        batches = vec_rollout(
            self.envs, assignment, policies, cfg.rollout_len, self.action_rng,
            normalize=self.normalizer.normalize,
            value_fn=lambda arch, obs: self.model.state_values(spec_of[arch], obs),
            dtype=self.model.dtype)

        raw = np.concatenate([b.raw_obs.reshape(-1, self.obs_dim)
                              for b in batches.values()])

        flats: dict[int, SampleBatch] = {}
        for idx, batch in batches.items():
            adv, tgt = compute_gae(batch.rewards * cfg.ppo.reward_scale,
                                   batch.values, batch.bootstrap_values,
                                   batch.dones, cfg.ppo.gamma, cfg.ppo.gae_lambda)
            adv = normalize_advantages(adv.reshape(-1))
            flats[idx] = SampleBatch(
                arch_index=idx,
                obs=batch.obs.reshape(-1, self.obs_dim),
                actions=batch.actions.reshape(-1, self.act_dim),
                logp_old=batch.logps.reshape(-1),
                advantages=adv.astype(self.model.dtype),
                value_targets=tgt.reshape(-1).astype(self.model.dtype),
                arch_ids=batch.arch_ids.reshape(-1),
            )

        stats = {idx: {"policy_loss": 0.0, "value_loss": 0.0, "n": 0}
                 for idx in indices}
        for _ in range(cfg.ppo.epochs):
            for idx in sorted(flats):
                flat = flats[idx]
                perm = self.shuffle_rng.permutation(flat.size)
                for start in range(0, flat.size, cfg.ppo.minibatch_size):
                    mb = flat.take(perm[start:start + cfg.ppo.minibatch_size])
                    loss = hyperppo_loss(self.model, self.std_store,
                                         {idx: mb}, cfg.ppo)
                    if not math.isfinite(loss.value):
                        self._abort(snapshot)
                    theta_g, std_g = loss.grads()
                    clip_grad_norm([theta_g, std_g[idx]], cfg.ppo.max_grad_norm)
                    adam_step(self.model.flat_params, theta_g, self.adam)
                    self.std_store.update(idx, std_g[idx])
                    st = stats[idx]
                    st["policy_loss"] += -loss.per_arch[idx]["surrogate"]
                    st["value_loss"] += loss.per_arch[idx]["value_loss"]
                    st["n"] += 1

        self.iteration += 1
        self.env_steps += len(self.envs) * cfg.rollout_len
        for spec, idx in zip(specs, indices):
            st = stats[idx]
            row = {
                "iter": self.iteration - 1,
                "env_steps": self.env_steps,
                "arch_index": idx,
                "widths": str(spec),
                "mean_return": eval_returns[idx],
                "policy_loss": st["policy_loss"] / max(st["n"], 1),
                "value_loss": st["value_loss"] / max(st["n"], 1),
                "std_mean": float(np.mean(get_std(self.std_store, idx))),
            }
            self.metrics.append(row)
            if self._metrics_fh:
                self._metrics_fh.write(
                    ",".join(_format_metric(row[k]) for k in METRICS_HEADER) + "\n")
        if self._metrics_fh:
            self._metrics_fh.flush()

    def _abort(self, snapshot: Checkpoint) -> None:
        msg = f"non-finite loss at iteration {self.iteration}"
        if self.cfg.out_dir:
            os.makedirs(self.cfg.out_dir, exist_ok=True)
            path = os.path.join(self.cfg.out_dir, "checkpoint_lastgood.hppo")
            save_checkpoint(snapshot, path)
            msg += f"; last good state saved to {path}"
        raise TrainingAborted(msg)


def _format_metric(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, str) and "," in value:
        return f'"{value}"'
    return str(value)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[dict]


def load_model(ckpt: Checkpoint):
    """Rebuild the weight source and frozen normalizer from a checkpoint."""
    hdr = ckpt.header
    dtype = np.dtype(hdr["dtype"])
    if hdr["mode"] == "hyper":
        md = hdr["model_dims"]
        model = HyperNet(hdr["obs_dim"], hdr["act_dim"], emb_dim=md["emb_dim"],
                         node_dim=md["node_dim"], rounds=md["rounds"],
                         dec_hidden=md["dec_hidden"],
                         critic_hidden=md["critic_hidden"], seed=0, dtype=dtype)
    else:
        model = DirectMlp(ArchSpec(tuple(hdr["arch"])), hdr["obs_dim"],
                          hdr["act_dim"],
                          critic_hidden=hdr["model_dims"]["critic_hidden"],
                          seed=0, dtype=dtype)
    expected = [[name, list(shape)] for name, shape in model.layout()]
    if expected != hdr["layout"]:
        raise CheckpointError("checkpoint layout does not match rebuilt model")
    model.flat_params[...] = ckpt.flat_params.astype(model.dtype)
    normalizer = RunningNorm.from_state(hdr["obs_dim"], hdr["normalizer"])
    return model, normalizer


def restore_config(data: dict) -> TrainConfig:
    data = dict(data)
    ppo_kw = data.pop("ppo")
    arch = data.pop("arch")
    cfg = TrainConfig(arch=ArchSpec(tuple(arch)) if arch else None,
                      ppo=PpoConfig(**ppo_kw), **data)
    return cfg


def train(config: TrainConfig, resume: Checkpoint | str | None = None,
          plot: bool = True) -> TrainResult:
    """Run the full loop to the env-step budget; optionally resume."""
    if resume is not None:
        if isinstance(resume, str):
            resume = load_checkpoint(resume)
        trainer = Trainer.from_checkpoint(resume, config)
    else:
        trainer = Trainer(config)
    return trainer.run(plot=plot)


def train_baseline(config: TrainConfig, plot: bool = True) -> TrainResult:
    if config.mode != "baseline":
        config = dataclasses.replace(config, mode="baseline")
    return train(config, plot=plot)


def eval_episodes(env_kind: str, phi: GeneratedWeights, normalize,
                  n_episodes: int, seed_parts: tuple) -> np.ndarray:
    """Deterministic mean-action episodes; one rng stream per episode."""
    envs = []
    for ep in range(n_episodes):
        seq = np.random.SeedSequence(list(seed_parts) + [ep])
        env = make_env(env_kind, np.random.Generator(np.random.PCG64(seq)))
        env.reset()
        envs.append(env)
    horizon = envs[0].horizon
    returns = np.zeros(n_episodes)
    for _ in range(horizon):
        obs = np.stack([e.current_obs() for e in envs])
        mean = policy_forward(phi, np.asarray(normalize(obs), dtype=np.float32))
        for i, env in enumerate(envs):
            _, r, _ = env.step(mean[i].astype(np.float64))
            returns[i] += r
    return returns

"""Toy continuous-control environments with deterministic dynamics.

Three tasks (point mass, pendulum swing-up, planar quadrotor hover) stand in
for full-scale simulators at desk scale. Dynamics use semi-implicit Euler at
dt=0.05; rewards are computed from the post-step state and the clipped
action, so replaying a logged action sequence from a logged initial state
reproduces every reward bit-exactly. Episodes end only by time limit.

``vec_rollout`` steps a set of environments partitioned across the current
meta-batch of architectures and assembles one single-architecture
``TrajectoryBatch`` per architecture (the no-mixing contract).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .policy import GeneratedWeights, log_prob_from_log_std, policy_forward

DT = 0.05

ENV_KINDS = ("pointmass", "pendulum", "quad2d")


def _wrap_angle(theta: float) -> float:
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


class EnvInstance:
    """Base for the toy envs; subclasses define dynamics and reward."""

    kind: str
    obs_dim: int
    act_dim: int
    horizon: int

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.step_count = 0
        self.state = np.zeros(0)
        self._obs = np.zeros(self.obs_dim)

    def reset(self) -> np.ndarray:
        self.state = self._sample_initial_state()
        self.step_count = 0
        self._obs = self._observe()
        return self._obs

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.act_dim,):
            raise ValueError(f"action shape {action.shape} != ({self.act_dim},)")
        if not np.all(np.isfinite(action)):
            raise ValueError("non-finite action")
        if self.step_count >= self.horizon:
            raise RuntimeError("step() called on a finished episode; reset first")
        clipped = np.clip(action, -1.0, 1.0)
        reward = self._advance(clipped)
        self.step_count += 1
        self._obs = self._observe()
        done = self.step_count >= self.horizon
        return self._obs, reward, done

    def current_obs(self) -> np.ndarray:
        return self._obs

    def get_state(self) -> tuple[np.ndarray, int]:
        return self.state.copy(), self.step_count

    def set_state(self, snapshot: tuple[np.ndarray, int]) -> None:
        self.state = snapshot[0].copy()
        self.step_count = snapshot[1]
        self._obs = self._observe()

    # subclass hooks ------------------------------------------------------
    def _sample_initial_state(self) -> np.ndarray:
        raise NotImplementedError

    def _advance(self, action: np.ndarray) -> float:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError


class PointMass(EnvInstance):
    """Accelerate a 2-D point to a goal. State: pos(2), vel(2), goal(2)."""

    kind = "pointmass"
    obs_dim = 6
    act_dim = 2
    horizon = 200
    POS_LIM = 3.0
    VEL_LIM = 3.0

    def _sample_initial_state(self) -> np.ndarray:
        pos = self.rng.uniform(-1.0, 1.0, 2)
        vel = self.rng.uniform(-1.0, 1.0, 2)
        goal = self.rng.uniform(-1.0, 1.0, 2)
        return np.concatenate([pos, vel, goal])

    def _advance(self, action: np.ndarray) -> float:
        pos, vel, goal = self.state[0:2], self.state[2:4], self.state[4:6]
        vel = np.clip(vel + action * DT, -self.VEL_LIM, self.VEL_LIM)
        pos = np.clip(pos + vel * DT, -self.POS_LIM, self.POS_LIM)
        self.state = np.concatenate([pos, vel, goal])
        dist = float(np.linalg.norm(pos - goal))
        return -dist - 0.01 * float(action @ action)

    def _observe(self) -> np.ndarray:
        pos, vel, goal = self.state[0:2], self.state[2:4], self.state[4:6]
        return np.concatenate([pos, vel, goal - pos])


class Pendulum(EnvInstance):
    """Torque-limited swing-up. State: angle (0 = upright), angular velocity."""

    kind = "pendulum"
    obs_dim = 3
    act_dim = 1
    horizon = 200
    MAX_TORQUE = 2.0
    MAX_SPEED = 8.0
    G = 10.0
    MASS = 1.0
    LENGTH = 1.0

    def _sample_initial_state(self) -> np.ndarray:
        theta = self.rng.uniform(-math.pi, math.pi)
        omega = self.rng.uniform(-1.0, 1.0)
        return np.array([theta, omega])

    def _advance(self, action: np.ndarray) -> float:
        theta, omega = self.state
        torque = self.MAX_TORQUE * float(action[0])
        accel = (3.0 * self.G / (2.0 * self.LENGTH) * math.sin(theta)
                 + 3.0 / (self.MASS * self.LENGTH ** 2) * torque)
        omega = min(max(omega + accel * DT, -self.MAX_SPEED), self.MAX_SPEED)
        theta = _wrap_angle(theta + omega * DT)
        self.state = np.array([theta, omega])
        return -(theta * theta + 0.1 * omega * omega + 0.001 * torque * torque)

    def _observe(self) -> np.ndarray:
        theta, omega = self.state
        return np.array([math.cos(theta), math.sin(theta), omega])


class Quad2D(EnvInstance):
    """Planar birotor hovering at (0, 1). State: x, z, tilt, vx, vz, omega."""

    kind = "quad2d"
    obs_dim = 6
    act_dim = 2
    horizon = 400
    MASS = 0.5
    GRAVITY = 9.81
    INERTIA = 0.01
    ARM = 0.1
    MAX_THRUST = 4.0
    POS_LIM = 5.0
    VEL_LIM = 8.0
    SPIN_LIM = 8.0

    def _sample_initial_state(self) -> np.ndarray:
        hover = np.array([0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        return hover + self.rng.uniform(-0.3, 0.3, 6)

    def _advance(self, action: np.ndarray) -> float:
        x, z, tilt, vx, vz, omega = self.state
        # per-rotor thrust in [0, MAX_THRUST]
        f1 = self.MAX_THRUST * (float(action[0]) + 1.0) / 2.0
        f2 = self.MAX_THRUST * (float(action[1]) + 1.0) / 2.0
        total = f1 + f2
        ax = -total * math.sin(tilt) / self.MASS
        az = total * math.cos(tilt) / self.MASS - self.GRAVITY
        aw = (f2 - f1) * self.ARM / self.INERTIA
        vx = min(max(vx + ax * DT, -self.VEL_LIM), self.VEL_LIM)
        vz = min(max(vz + az * DT, -self.VEL_LIM), self.VEL_LIM)
        omega = min(max(omega + aw * DT, -self.SPIN_LIM), self.SPIN_LIM)
        x = min(max(x + vx * DT, -self.POS_LIM), self.POS_LIM)
        z = min(max(z + vz * DT, -self.POS_LIM), self.POS_LIM)
        tilt = _wrap_angle(tilt + omega * DT)
        self.state = np.array([x, z, tilt, vx, vz, omega])
        dist = math.hypot(x - 0.0, z - 1.0)
        return -dist - 0.1 * abs(tilt) - 0.05 * math.hypot(vx, vz)

    def _observe(self) -> np.ndarray:
        return self.state.copy()


_ENV_CLASSES = {"pointmass": PointMass, "pendulum": Pendulum, "quad2d": Quad2D}


def make_env(kind: str, rng: np.random.Generator) -> EnvInstance:
    if kind not in _ENV_CLASSES:
        raise ValueError(f"env kind must be one of {ENV_KINDS}, got {kind!r}")
    return _ENV_CLASSES[kind](rng)


def env_dims(kind: str) -> tuple[int, int, int]:
    """(obs_dim, act_dim, horizon) for an env kind."""
    cls = _ENV_CLASSES.get(kind)
    if cls is None:
        raise ValueError(f"env kind must be one of {ENV_KINDS}, got {kind!r}")
    return cls.obs_dim, cls.act_dim, cls.horizon


@dataclass
class ArchPolicy:
    """Rollout-time bundle: generated weights plus the exploration log-std."""

    arch_index: int
    phi: GeneratedWeights
    log_std: np.ndarray


@dataclass
class TrajectoryBatch:
    """Rollout data for exactly one architecture, laid out (env, time)."""

    arch_index: int
    obs: np.ndarray             # (G, T, obs_dim) normalized, as fed to the policy
    raw_obs: np.ndarray         # (G, T, obs_dim) unnormalized
    actions: np.ndarray         # (G, T, act_dim)
    rewards: np.ndarray         # (G, T)
    dones: np.ndarray           # (G, T) bool
    logps: np.ndarray           # (G, T) behavior log-probs at collection
    values: np.ndarray          # (G, T) critic values V(s_t, g)
    bootstrap_values: np.ndarray  # (G, T) V of the successor state where needed
    arch_ids: np.ndarray        # (G, T) int; all equal arch_index unless tampered
    env_indices: list[int] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return int(self.rewards.size)

    @property
    def rollout_len(self) -> int:
        return int(self.rewards.shape[1])


def vec_rollout(envs: list[EnvInstance],
                assignment: list[int],
                policies: dict[int, ArchPolicy],
                T: int,
                action_rng: np.random.Generator,
                normalize=None,
                value_fn=None,
                dtype=np.float32) -> dict[int, TrajectoryBatch]:
    """Step every env T times under its assigned architecture's policy.

    Behavior log-probs are recorded at collection time; critic values and the
    truncation bootstraps are evaluated in one batched ``value_fn`` call per
    architecture afterwards. Envs auto-reset on time-limit truncation, and
    the value of the pre-reset terminal state lands in ``bootstrap_values``.
    """
    if len(assignment) != len(envs):
        raise ValueError("assignment must name an architecture per env")
    for a in assignment:
        if a not in policies:
            raise ValueError(f"assignment references arch {a} with no policy")
    if normalize is None:
        normalize = lambda x: x

    groups: dict[int, list[int]] = {}
    for env_i, arch in enumerate(assignment):
        groups.setdefault(arch, []).append(env_i)
    order = sorted(groups)

    obs_dim = envs[0].obs_dim
    act_dim = envs[0].act_dim
    store = {
        arch: {
            "obs": np.zeros((len(idx), T, obs_dim), dtype=dtype),
            "raw": np.zeros((len(idx), T, obs_dim)),
            "act": np.zeros((len(idx), T, act_dim), dtype=dtype),
            "rew": np.zeros((len(idx), T)),
            "done": np.zeros((len(idx), T), dtype=bool),
            "logp": np.zeros((len(idx), T), dtype=dtype),
            "tail_raw": {},  # (row, t) -> raw obs of the successor state
        }
        for arch, idx in groups.items()
    }

    for t in range(T):
        for arch in order:
            st = store[arch]
            rows = groups[arch]
            pol = policies[arch]
            raw = np.stack([envs[i].current_obs() for i in rows])
            norm = np.asarray(normalize(raw), dtype=dtype)
            mean = policy_forward(pol.phi, norm)
            std = np.exp(pol.log_std).astype(dtype)
            noise = action_rng.standard_normal((len(rows), act_dim))
            actions = (mean + std * noise.astype(dtype)).astype(dtype)
            logp = log_prob_from_log_std(mean, pol.log_std.astype(dtype), actions)
            st["raw"][:, t] = raw
            st["obs"][:, t] = norm
            st["act"][:, t] = actions
            st["logp"][:, t] = logp
            for r, env_i in enumerate(rows):
                nxt, reward, done = envs[env_i].step(actions[r].astype(np.float64))
                st["rew"][r, t] = reward
                st["done"][r, t] = done
                if done:
                    st["tail_raw"][(r, t)] = nxt.copy()
                    envs[env_i].reset()

    batches: dict[int, TrajectoryBatch] = {}
    for arch in order:
        st = store[arch]
        rows = groups[arch]
        g = len(rows)
        # final successor state per env (post-reset state never leaks here:
        # a done at t = T-1 already recorded its terminal state).
        tail_keys = list(st["tail_raw"].keys())
        final_rows = [r for r in range(g) if not st["done"][r, T - 1]]
        tail_obs = [st["tail_raw"][k] for k in tail_keys]
        tail_obs += [envs[rows[r]].current_obs() for r in final_rows]

        values = np.zeros((g, T), dtype=dtype)
        boots = np.zeros((g, T), dtype=dtype)
        if value_fn is not None:
            flat = st["obs"].reshape(g * T, obs_dim)
            if tail_obs:
                tails = np.asarray(normalize(np.stack(tail_obs)), dtype=dtype)
                stacked = np.concatenate([flat, tails], axis=0)
            else:
                stacked = flat
            v = np.asarray(value_fn(arch, stacked), dtype=dtype).reshape(-1)
            values = v[: g * T].reshape(g, T)
            extra = v[g * T:]
            for j, (r, t) in enumerate(tail_keys):
                boots[r, t] = extra[j]
            for j, r in enumerate(final_rows):
                boots[r, T - 1] = extra[len(tail_keys) + j]

        batches[arch] = TrajectoryBatch(
            arch_index=arch,
            obs=st["obs"],
            raw_obs=st["raw"],
            actions=st["act"],
            rewards=st["rew"],
            dones=st["done"],
            logps=st["logp"],
            values=values,
            bootstrap_values=boots,
            arch_ids=np.full((g, T), arch, dtype=np.int32),
            env_indices=rows,
        )
    return batches

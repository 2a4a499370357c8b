"""Toy pixel-control environments, visual perturbations, expert data I/O.

Two deterministic tasks rendered as 16x16 grayscale frames, stacked k=2:
``point_reach`` (damped point mass pushed toward a fixed goal) and
``pendulum_swing`` (torque-limited swing-up).  Perturbations are applied
per freshly rendered frame so that consecutive observations share frames
bit-exactly; physics never depends on the perturbation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LifecycleError
from .seeding import stream

HEIGHT = 16
WIDTH = 16
FRAME_STACK = 2
HORIZON = 50
OBS_DIM = FRAME_STACK * HEIGHT * WIDTH

AGENT_VALUE = 1.0
GOAL_VALUE = 0.55
BACKGROUND_VALUE = 0.0
MASK_VALUE = 0.5

DATASET_MAGIC = b"RILIRDS1"

ENV_IDS = ("point_reach", "pendulum_swing")


@dataclass
class PixelObservation:
    """Stack of grayscale frames flattened frame-major into one vector."""

    height: int
    width: int
    frames: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size != self.frames * self.height * self.width:
            raise ConfigError("observation", f"length {self.values.size} != k*H*W = {self.frames * self.height * self.width}")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ConfigError("observation", "pixel values outside [0, 1]")

    def frame(self, i):
        """Frame ``i`` as a (H, W) view, 0 = oldest."""
        size = self.height * self.width
        return self.values[i * size : (i + 1) * size].reshape(self.height, self.width)


@dataclass(frozen=True)
class PerturbationSpec:
    """Visual corruption description; ``none`` is the identity."""

    kind: str = "none"
    sigma_pix: float = 0.1
    patch_size: int = 4
    patch_count: int = 1
    texture_count: int = 5
    change_period: int = 10

    def __post_init__(self):
        if self.kind not in ("none", "white_noise", "random_mask", "background_shift"):
            raise ConfigError("perturbation", f"unknown kind {self.kind!r}")
        if self.kind == "white_noise" and self.sigma_pix < 0:
            raise ConfigError("perturbation", "sigma_pix must be >= 0")
        if self.kind == "random_mask" and not (1 <= self.patch_size <= min(HEIGHT, WIDTH)):
            raise ConfigError("perturbation", f"patch_size must be in [1, {min(HEIGHT, WIDTH)}]")
        if self.kind == "random_mask" and self.patch_count < 0:
            raise ConfigError("perturbation", "patch_count must be >= 0")
        if self.kind == "background_shift" and self.change_period < 1:
            raise ConfigError("perturbation", "change_period must be >= 1")
        if self.kind == "background_shift" and self.texture_count < 1:
            raise ConfigError("perturbation", "texture_count must be >= 1")

    @staticmethod
    def parse(text):
        """Parse forms like none, white_noise(0.1), random_mask(4,2), background_shift(5,10)."""
        text = text.strip()
        if "(" not in text:
            return PerturbationSpec(kind=text)
        kind, _, rest = text.partition("(")
        args = [a.strip() for a in rest.rstrip(")").split(",") if a.strip()]
        kind = kind.strip()
        if kind == "white_noise":
            return PerturbationSpec(kind=kind, sigma_pix=float(args[0]))
        if kind == "random_mask":
            return PerturbationSpec(kind=kind, patch_size=int(args[0]), patch_count=int(args[1]) if len(args) > 1 else 1)
        if kind == "background_shift":
            return PerturbationSpec(
                kind=kind,
                texture_count=int(args[0]) if args else 5,
                change_period=int(args[1]) if len(args) > 1 else 10,
            )
        raise ConfigError("perturbation", f"cannot parse {text!r}")

    def describe(self):
        if self.kind == "none":
            return "none"
        if self.kind == "white_noise":
            return f"white_noise({self.sigma_pix:g})"
        if self.kind == "random_mask":
            return f"random_mask({self.patch_size},{self.patch_count})"
        return f"background_shift({self.texture_count},{self.change_period})"


_TEXTURE_CACHE = {}


def texture(index, height=HEIGHT, width=WIDTH):
    """Procedural background texture: coarse value-noise, bilinear upsampled.

    Depends only on the index, never on the run seed, so texture banks are
    identical across runs.  Values stay inside [0.05, 0.45], well below the
    foreground palette.
    """
    key = (int(index), height, width)
    if key not in _TEXTURE_CACHE:
        rng = stream(0, "texture-bank", int(index))
        coarse = rng.uniform(0.05, 0.45, size=(4, 4))
        ys = np.linspace(0, 3, height)
        xs = np.linspace(0, 3, width)
        y0 = np.floor(ys).astype(int).clip(0, 2)
        x0 = np.floor(xs).astype(int).clip(0, 2)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        c00 = coarse[np.ix_(y0, x0)]
        c01 = coarse[np.ix_(y0, x0 + 1)]
        c10 = coarse[np.ix_(y0 + 1, x0)]
        c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
        tex = (1 - fy) * (1 - fx) * c00 + (1 - fy) * fx * c01 + fy * (1 - fx) * c10 + fy * fx * c11
        _TEXTURE_CACHE[key] = tex
    return _TEXTURE_CACHE[key]


def _perturb_frame(frame, spec, step_index, rng):
    """Corrupt one (H, W) frame; the input is the clean render."""
    if spec.kind == "none":
        return frame
    h, w = frame.shape
    out = frame.copy()
    if spec.kind == "white_noise":
        out += rng.normal(0.0, spec.sigma_pix, size=frame.shape)
        np.clip(out, 0.0, 1.0, out=out)
    elif spec.kind == "random_mask":
        # positions are redrawn for every rendered frame: the mask behaves
        # like per-frame sensor dropout, not a parked obstruction, so its
        # effect on episode-level reward statistics averages out
        for _ in range(spec.patch_count):
            r = int(rng.integers(0, h - spec.patch_size + 1))
            c = int(rng.integers(0, w - spec.patch_size + 1))
            out[r : r + spec.patch_size, c : c + spec.patch_size] = MASK_VALUE
    elif spec.kind == "background_shift":
        idx = (step_index // spec.change_period) % spec.texture_count
        background = frame == BACKGROUND_VALUE
        out[background] = texture(idx, h, w)[background]
    return out


def perturb(obs, spec, step_index, episode_rng):
    """Corrupt every frame of an observation independently."""
    frames = [_perturb_frame(obs.frame(i), spec, step_index, episode_rng) for i in range(obs.frames)]
    return PixelObservation(obs.height, obs.width, obs.frames, np.concatenate([f.ravel() for f in frames]))


class _PointReachCore:
    """Damped point mass on the unit square with a fixed goal."""

    env_id = "point_reach"
    action_dim = 2
    goal = np.array([0.75, 0.75])
    damping = 0.7
    push = 0.03
    reward_radius = 0.25
    min_start_distance = 0.4

    def init_state(self, rng):
        while True:
            pos = rng.uniform(0.1, 0.9, size=2)
            if np.linalg.norm(pos - self.goal) >= self.min_start_distance:
                break
        return {"pos": pos, "vel": np.zeros(2)}

    def advance(self, state, action):
        vel = self.damping * state["vel"] + self.push * action
        pos = np.clip(state["pos"] + vel, 0.05, 0.95)
        return {"pos": pos, "vel": vel}

    def diag_reward(self, state):
        # positive proximity score so returns and fraction-of-expert stay
        # order-preserving: 0 far from the goal, 1 exactly on it
        dist = float(np.linalg.norm(state["pos"] - self.goal))
        return max(0.0, 1.0 - dist / self.reward_radius)

    def expert_action(self, state):
        raw = 8.0 * (self.goal - state["pos"]) - 6.0 * state["vel"]
        return np.clip(raw, -1.0, 1.0)

    def render(self, state):
        frame = np.full((HEIGHT, WIDTH), BACKGROUND_VALUE)
        self._blob(frame, self.goal, GOAL_VALUE)
        self._blob(frame, state["pos"], AGENT_VALUE)
        return frame

    @staticmethod
    def _blob(frame, pos, value):
        r = int(np.clip(pos[1] * (HEIGHT - 2), 0, HEIGHT - 2))
        c = int(np.clip(pos[0] * (WIDTH - 2), 0, WIDTH - 2))
        frame[r : r + 2, c : c + 2] = value


class _PendulumCore:
    """Torque-limited pendulum; angle measured from upright."""

    env_id = "pendulum_swing"
    action_dim = 1
    gravity = 2.0
    torque = 8.0
    dt = 0.15
    max_speed = 6.0
    pole_cells = 6

    def init_state(self, rng):
        # full-circle starts: swing-up from the bottom half, recovery and
        # balance from the top half, so demonstrations cover both regimes
        theta = rng.uniform(-np.pi, np.pi)
        return {"theta": theta, "omega": rng.uniform(-1.0, 1.0)}

    def advance(self, state, action):
        u = self.torque * float(action[0])
        theta, omega = state["theta"], state["omega"]
        omega = omega + (self.gravity * np.sin(theta) + u) * self.dt
        omega = float(np.clip(omega, -self.max_speed, self.max_speed))
        theta = theta + omega * self.dt
        theta = float(np.arctan2(np.sin(theta), np.cos(theta)))
        return {"theta": theta, "omega": omega}

    def diag_reward(self, state):
        return float(np.cos(state["theta"]))

    def energy(self, state):
        return 0.5 * state["omega"] ** 2 + self.gravity * np.cos(state["theta"])

    def expert_action(self, state):
        # pump energy toward just-above-upright, then hand off to a PD
        # balance law near the top; dE/dt = u*omega so pumping follows
        # sign(omega)
        theta, omega = state["theta"], state["omega"]
        if abs(theta) < 0.4 and abs(omega) < 3.0:
            u = -8.0 * theta - 2.2 * omega
        else:
            gap = self.gravity + 0.5 - self.energy(state)
            u = 8.0 * gap * np.sign(omega) if abs(omega) > 1e-9 else 1.0
        return np.clip(np.array([u / self.torque]), -1.0, 1.0)

    def render(self, state):
        frame = np.full((HEIGHT, WIDTH), BACKGROUND_VALUE)
        cy = cx = (HEIGHT - 1) / 2.0
        theta = state["theta"]
        for s in np.linspace(0.0, 1.0, 2 * self.pole_cells + 1):
            r = int(round(cy - s * self.pole_cells * np.cos(theta)))
            c = int(round(cx + s * self.pole_cells * np.sin(theta)))
            frame[np.clip(r, 0, HEIGHT - 1), np.clip(c, 0, WIDTH - 1)] = AGENT_VALUE
        frame[int(cy), int(cx)] = GOAL_VALUE
        return frame

    def tip_cell(self, state):
        cy = cx = (HEIGHT - 1) / 2.0
        r = int(round(cy - self.pole_cells * np.cos(state["theta"])))
        c = int(round(cx + self.pole_cells * np.sin(state["theta"])))
        return r, c


_CORES = {"point_reach": _PointReachCore, "pendulum_swing": _PendulumCore}


class PixelEnv:
    """Frame-stacked pixel environment with an optional perturbation layer.

    ``reset(seed)`` fully determines an episode together with the action
    sequence.  Perturbations touch each freshly rendered frame exactly once,
    so the older frame of an observation reappears bit-exactly as the newer
    frame of the previous one, and physics is independent of the spec.
    """

    def __init__(self, env_id, perturbation=None, horizon=HORIZON):
        if env_id not in _CORES:
            raise ConfigError("env_id", f"unknown environment {env_id!r}; expected one of {ENV_IDS}")
        self.env_id = env_id
        self.core = _CORES[env_id]()
        self.perturbation = perturbation or PerturbationSpec()
        self.horizon = horizon
        self.action_dim = self.core.action_dim
        self._state = None
        self._t = None
        self._frames = None
        self._rng = None

    def reset(self, seed):
        self._rng = stream(int(seed), self.env_id, "episode")
        self._state = self.core.init_state(stream(int(seed), self.env_id, "init"))
        self._t = 0
        frame = self._new_frame()
        self._frames = [frame, frame]
        return self._observation()

    def step(self, action):
        if self._t is None:
            raise LifecycleError("step before reset")
        if self._t >= self.horizon:
            raise LifecycleError("step after episode end")
        action = np.clip(np.asarray(action, dtype=np.float64).ravel(), -1.0, 1.0)
        if action.size != self.action_dim:
            raise ConfigError("action", f"dimension {action.size} != {self.action_dim}")
        self._state = self.core.advance(self._state, action)
        self._t += 1
        self._frames = [self._frames[1], self._new_frame()]
        done = self._t >= self.horizon
        return self._observation(), done, self.core.diag_reward(self._state)

    def state(self):
        """Copy of the physical state, for diagnostics only."""
        return {k: np.copy(v) for k, v in self._state.items()}

    def expert_action(self):
        return self.core.expert_action(self._state)

    def _new_frame(self):
        frame = self.core.render(self._state)
        return _perturb_frame(frame, self.perturbation, self._t, self._rng)

    def _observation(self):
        return PixelObservation(HEIGHT, WIDTH, FRAME_STACK, np.concatenate([f.ravel() for f in self._frames]))


def reset(env_id, seed):
    """One-shot convenience: fresh clean environment, first observation."""
    return PixelEnv(env_id).reset(seed)


@dataclass
class Trajectory:
    """T transitions stored as T+1 observations plus T actions."""

    observations: np.ndarray
    actions: np.ndarray
    diag_rewards: np.ndarray | None = None

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.observations.shape[0] != self.actions.shape[0] + 1:
            raise ConfigError("trajectory", f"{self.observations.shape[0]} observations for {self.actions.shape[0]} actions")
        if self.diag_rewards is not None:
            self.diag_rewards = np.asarray(self.diag_rewards, dtype=np.float64)
            if self.diag_rewards.shape[0] != self.actions.shape[0]:
                raise ConfigError("trajectory", "diagnostic rewards length mismatch")

    def __len__(self):
        return self.actions.shape[0]

    @property
    def obs(self):
        return self.observations[:-1]

    @property
    def next_obs(self):
        return self.observations[1:]

    def diag_return(self):
        return float(self.diag_rewards.sum()) if self.diag_rewards is not None else float("nan")


@dataclass
class ExpertDataset:
    """Demonstrations from the scripted expert in the clean environment."""

    env_id: str
    trajectories: list = field(default_factory=list)
    perturbation: str = "none"
    version: int = 1

    def __post_init__(self):
        if self.trajectories:
            t0 = len(self.trajectories[0])
            a0 = self.trajectories[0].actions.shape[1]
            for tr in self.trajectories:
                if len(tr) != t0 or tr.actions.shape[1] != a0:
                    raise ConfigError("dataset", "trajectories disagree on horizon or action dimension")

    def __len__(self):
        return len(self.trajectories)

    @property
    def horizon(self):
        return len(self.trajectories[0])

    @property
    def action_dim(self):
        return self.trajectories[0].actions.shape[1]

    def mean_diag_return(self):
        return float(np.mean([tr.diag_return() for tr in self.trajectories]))

    def save(self, path):
        tr0 = self.trajectories[0]
        has_diag = int(all(tr.diag_rewards is not None for tr in self.trajectories))
        env_bytes = self.env_id.encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            fh.write(struct.pack("<I", len(env_bytes)))
            fh.write(env_bytes)
            fh.write(struct.pack("<6I", len(self.trajectories), len(tr0), tr0.actions.shape[1], FRAME_STACK, HEIGHT, WIDTH))
            fh.write(struct.pack("<B", has_diag))
            for tr in self.trajectories:
                fh.write(np.ascontiguousarray(tr.observations, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(tr.actions, dtype="<f8").tobytes())
                if has_diag:
                    fh.write(np.ascontiguousarray(tr.diag_rewards, dtype="<f8").tobytes())


def load_expert_dataset(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise ConfigError("dataset", f"{path}: bad magic {magic!r}")
        (env_len,) = struct.unpack("<I", fh.read(4))
        env_id = fh.read(env_len).decode("utf-8")
        n, horizon, action_dim, k, h, w = struct.unpack("<6I", fh.read(24))
        (has_diag,) = struct.unpack("<B", fh.read(1))
        dim = k * h * w
        trajectories = []
        for _ in range(n):
            obs = np.frombuffer(fh.read(8 * (horizon + 1) * dim), dtype="<f8").reshape(horizon + 1, dim)
            act = np.frombuffer(fh.read(8 * horizon * action_dim), dtype="<f8").reshape(horizon, action_dim)
            diag = None
            if has_diag:
                diag = np.frombuffer(fh.read(8 * horizon), dtype="<f8")
            trajectories.append(Trajectory(obs, act, diag))
    return ExpertDataset(env_id=env_id, trajectories=trajectories)


def collect_expert(env_id, n, horizon, seed):
    """Run the scripted controller in the clean environment n times."""
    if n < 1:
        raise ConfigError("n", "need at least one trajectory")
    env = PixelEnv(env_id, horizon=horizon)
    trajectories = []
    for i in range(n):
        obs = env.reset(stream(int(seed), "expert-episode", i).integers(0, 2**63))
        observations = [obs.values]
        actions = []
        diags = []
        done = False
        while not done:
            a = env.expert_action()
            obs, done, diag = env.step(a)
            observations.append(obs.values)
            actions.append(a)
            diags.append(diag)
        trajectories.append(Trajectory(np.stack(observations), np.stack(actions), np.array(diags)))
    return ExpertDataset(env_id=env_id, trajectories=trajectories)

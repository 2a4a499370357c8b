"""State embeddings from pixels: encoder, inverse model, target copy, saliency.

The encoder maps a stacked pixel observation to a small embedding whose
only training signal comes from predicting the action between consecutive
observations (plus, downstream, critic gradients).  A frozen target copy,
refreshed every fixed number of steps, supplies the embeddings used by the
reward machinery so rewards stay stationary between refreshes.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ContractError, Tape, Tensor, concat, mean, slice_, square
from .nn import Mlp, ParameterSet, mlp_from_params
from .envsim import OBS_DIM

EMBED_DIM = 32
ENCODER_HIDDEN = (256, 128)
INVERSE_HIDDEN = (64,)
TARGET_SYNC_NEVER = 0  # sentinel: target stays at its initial parameters


class Encoder:
    """Pixel observation -> embedding MLP with a tanh head."""

    def __init__(
        self,
        params,
        rng,
        obs_dim=OBS_DIM,
        embed_dim=EMBED_DIM,
        hidden=ENCODER_HIDDEN,
        prefix="encoder",
        head_activation="tanh",
    ):
        self.obs_dim = obs_dim
        self.embed_dim = embed_dim
        self.net = Mlp(
            params,
            prefix,
            [obs_dim, *hidden, embed_dim],
            hidden_activation="relu",
            head_activation=head_activation,
            rng=rng,
        )
        self.params = params

    def forward(self, tape, obs, params=None, frozen=False):
        return self.net.forward(tape, obs, params=params, frozen=frozen)

    def encode(self, obs, params=None):
        """Unrecorded forward pass on a (batch, obs_dim) array."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        return self.net.forward_array(obs, params=params)

    @classmethod
    def from_params(cls, params, prefix="encoder", head_activation="tanh"):
        """Wrap already-registered parameters, e.g. from a checkpoint."""
        self = cls.__new__(cls)
        self.net = mlp_from_params(params, prefix, "relu", head_activation)
        self.obs_dim = self.net.dims[0]
        self.embed_dim = self.net.dims[-1]
        self.params = params
        return self


class InverseModel:
    """Predicts the action linking two consecutive embeddings."""

    def __init__(self, params, rng, action_dim, embed_dim=EMBED_DIM, hidden=INVERSE_HIDDEN, prefix="inverse"):
        self.action_dim = action_dim
        self.embed_dim = embed_dim
        self.net = Mlp(
            params,
            prefix,
            [2 * embed_dim, *hidden, action_dim],
            hidden_activation="relu",
            head_activation="tanh",
            rng=rng,
        )

    def forward(self, tape, z_t, z_next):
        return self.net.forward(tape, concat(z_t, z_next, axis=1))


class TargetEncoder:
    """Frozen parameter copy of an encoder, refreshed on a fixed cadence.

    ``sync_interval`` counts environment steps; 0 means never refresh after
    initialization.  Between refreshes the parameters are read-only, which
    ``state_hash`` makes checkable.
    """

    def __init__(self, encoder, sync_interval):
        if sync_interval < 0:
            raise ContractError("sync interval must be >= 0")
        self.encoder = encoder
        self.sync_interval = sync_interval
        self.params = encoder.params.clone()
        self.version = 0
        self._last_step = -1

    def sync(self, step_count):
        """Hard-copy live parameters when the step counter crosses the cadence."""
        if step_count < self._last_step:
            raise ContractError(f"step_count went backwards: {step_count} < {self._last_step}")
        self._last_step = step_count
        if self.sync_interval == TARGET_SYNC_NEVER:
            return False
        if step_count % self.sync_interval == 0:
            self.params.copy_from(self.encoder.params)
            self.version += 1
            return True
        return False

    def encode(self, obs):
        return self.encoder.encode(obs, params=self.params)

    def state_hash(self):
        return self.params.state_hash()


def encode_traj(encoder, trajectory, which="target", target=None):
    """Embed every pre-action observation of one trajectory.

    ``which`` selects the live encoder or the frozen target copy; the target
    path never records a tape.  Returns a (T, d) array.
    """
    if which not in ("live", "target"):
        raise ContractError(f"which must be live or target, got {which!r}")
    obs = trajectory.obs if hasattr(trajectory, "obs") else np.asarray(trajectory, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != encoder.obs_dim:
        raise ContractError(f"trajectory observations shaped {obs.shape}, expected (T, {encoder.obs_dim})")
    if which == "target":
        if target is None:
            raise ContractError("target encoding requested without a TargetEncoder")
        return target.encode(obs)
    return encoder.encode(obs)


def inverse_dynamics_loss(tape, encoder, inverse_model, obs_t, actions, obs_next):
    """Mean squared action-prediction error; gradients reach encoder and model.

    The batch is expected to mix agent and expert transitions upstream; this
    function only scores whatever it is handed.
    """
    obs_t = np.asarray(obs_t, dtype=np.float64)
    obs_next = np.asarray(obs_next, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if obs_t.ndim != 2 or obs_t.shape[0] == 0:
        raise ContractError("inverse dynamics batch is empty")
    z_t = encoder.forward(tape, obs_t)
    z_next = encoder.forward(tape, obs_next)
    pred = inverse_model.forward(tape, z_t, z_next)
    if pred.shape != actions.shape:
        raise ContractError(f"predicted actions {pred.shape} vs recorded {actions.shape}")
    return mean(square(pred - Tensor(actions)))


def saliency(encoder, obs, params=None):
    """Per-pixel influence: sum over embedding components of |d z_i / d o_j|.

    One backward pass per embedding component; the absolute input gradients
    are accumulated into a map with the shape of the flattened frame stack.
    The result is non-negative by construction.
    """
    obs = np.asarray(obs, dtype=np.float64).ravel()
    if obs.size != encoder.obs_dim:
        raise ContractError(f"observation size {obs.size} != encoder input {encoder.obs_dim}")
    out = np.zeros(encoder.obs_dim)
    pset = encoder.params if params is None else params
    for i in range(encoder.embed_dim):
        tape = Tape()
        x = tape.leaf(obs[None, :])
        z = encoder.forward(tape, x, params=pset)
        tape.backward(mean(slice_(z, i, i + 1, axis=1)))
        if x.grad is not None:
            out += np.abs(x.grad.ravel())
    return out


def write_pgm(path, flat_map, height, width, frames):
    """ASCII PGM (P2) dump of a saliency map plus a sidecar scale file.

    Frames are stacked vertically in the image.  Values are rescaled
    linearly so the map maximum hits 255; the factor is recorded next to
    the image as ``<path>.scale.txt``.
    """
    arr = np.asarray(flat_map, dtype=np.float64).reshape(frames * height, width)
    peak = float(arr.max())
    scale = 255.0 / peak if peak > 0 else 0.0
    scaled = np.round(arr * scale).astype(int)
    lines = [f"P2", f"{width} {frames * height}", "255"]
    lines += [" ".join(str(v) for v in row) for row in scaled]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(f"{path}.scale.txt", "w") as fh:
        fh.write(f"pixels_per_unit = {scale!r}\npeak = {peak!r}\n")


def read_pgm(path):
    with open(path) as fh:
        tokens = fh.read().split()
    if tokens[0] != "P2":
        raise ContractError(f"{path}: not an ASCII PGM")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4:]], dtype=np.float64).reshape(height, width)
    return data, maxval


def build_representation(master_rng, action_dim, obs_dim=OBS_DIM, embed_dim=EMBED_DIM, sync_interval=500):
    """Fresh encoder + inverse model on one ParameterSet, plus target copy."""
    params = ParameterSet()
    encoder = Encoder(params, master_rng, obs_dim=obs_dim, embed_dim=embed_dim)
    inverse_model = InverseModel(params, master_rng, action_dim, embed_dim=embed_dim)
    target = TargetEncoder(encoder, sync_interval)
    return encoder, inverse_model, target

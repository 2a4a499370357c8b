"""Encoder/inverse-model/target-sync/saliency behavior."""

import numpy as np
import pytest

from rilir.autodiff import ContractError, Tape
from rilir.envsim import OBS_DIM, collect_expert
from rilir.nn import ParameterSet
from rilir.representation import (
    EMBED_DIM,
    Encoder,
    InverseModel,
    TargetEncoder,
    build_representation,
    encode_traj,
    inverse_dynamics_loss,
    read_pgm,
    saliency,
    write_pgm,
)
from rilir.seeding import stream


def small_repr(seed=0, obs_dim=8, embed_dim=4, action_dim=2, hidden=(16,), sync=100):
    params = ParameterSet()
    enc = Encoder(params, stream(seed, "enc"), obs_dim=obs_dim, embed_dim=embed_dim, hidden=hidden)
    inv = InverseModel(params, stream(seed, "inv"), action_dim=action_dim, embed_dim=embed_dim, hidden=hidden)
    return params, enc, inv, TargetEncoder(enc, sync)


class TestEncode:
    def test_deterministic(self):
        _, enc, _, _ = small_repr()
        obs = stream(1, "obs").uniform(0, 1, size=(3, 8))
        np.testing.assert_array_equal(enc.encode(obs), enc.encode(obs))

    def test_tanh_range(self):
        _, enc, _, _ = small_repr()
        z = enc.encode(stream(2, "obs").uniform(0, 1, size=(64, 8)) * 10)
        assert np.all(z > -1.0) and np.all(z < 1.0)

    def test_full_size_shapes(self):
        params = ParameterSet()
        enc = Encoder(params, stream(0, "enc"))
        z = enc.encode(stream(0, "obs").uniform(0, 1, size=(5, OBS_DIM)))
        assert z.shape == (5, EMBED_DIM)

    def test_dimension_mismatch_rejected(self):
        _, enc, _, target = small_repr()
        with pytest.raises(ContractError):
            encode_traj(enc, np.zeros((4, 7)), which="target", target=target)

    def test_encode_traj_live_vs_target_after_sync(self):
        params, enc, _, target = small_repr(sync=100)
        obs = stream(3, "obs").uniform(0, 1, size=(6, 8))
        # drift the live encoder, then sync: both paths must agree bitwise
        params.accumulate_grad("encoder.w0", np.ones_like(params["encoder.w0"].value))
        params.adam_step(1e-2)
        assert not np.array_equal(encode_traj(enc, obs, "live"), encode_traj(enc, obs, "target", target))
        target.sync(100)
        np.testing.assert_array_equal(encode_traj(enc, obs, "live"), encode_traj(enc, obs, "target", target))

    def test_encode_traj_rejects_bad_selector(self):
        _, enc, _, target = small_repr()
        with pytest.raises(ContractError):
            encode_traj(enc, np.zeros((4, 8)), which="frozen", target=target)

    def test_real_trajectory_embedding_length(self):
        ds = collect_expert("point_reach", 1, 10, 0)
        params = ParameterSet()
        enc = Encoder(params, stream(0, "enc"))
        target = TargetEncoder(enc, 1)
        z = encode_traj(enc, ds.trajectories[0], "target", target)
        assert z.shape == (10, EMBED_DIM)


class TestInverseLoss:
    def test_zero_when_predictions_match(self):
        params, enc, inv, _ = small_repr()
        # zero the inverse head: predictions are tanh(0) = 0 everywhere
        head = inv.net.n_layers - 1
        params[f"inverse.w{head}"].value[...] = 0.0
        params[f"inverse.b{head}"].value[...] = 0.0
        obs = stream(4, "obs").uniform(0, 1, size=(8, 8))
        loss = inverse_dynamics_loss(Tape(), enc, inv, obs, np.zeros((8, 2)), obs)
        assert loss.item() == 0.0

    def test_declared_reduction_mean_over_dims(self):
        # predictions 0, recorded actions all ones, 2 action dims -> 1.0
        params, enc, inv, _ = small_repr()
        head = inv.net.n_layers - 1
        params[f"inverse.w{head}"].value[...] = 0.0
        params[f"inverse.b{head}"].value[...] = 0.0
        obs = stream(5, "obs").uniform(0, 1, size=(8, 8))
        loss = inverse_dynamics_loss(Tape(), enc, inv, obs, np.ones((8, 2)), obs)
        assert loss.item() == 1.0

    def test_empty_batch_rejected(self):
        _, enc, inv, _ = small_repr()
        with pytest.raises(ContractError):
            inverse_dynamics_loss(Tape(), enc, inv, np.zeros((0, 8)), np.zeros((0, 2)), np.zeros((0, 8)))

    def test_gradients_reach_encoder_and_inverse(self):
        params, enc, inv, _ = small_repr()
        rng = stream(6, "batch")
        tape = Tape()
        loss = inverse_dynamics_loss(
            tape, enc, inv, rng.uniform(0, 1, (16, 8)), rng.uniform(-0.5, 0.5, (16, 2)), rng.uniform(0, 1, (16, 8))
        )
        tape.backward(loss)
        for name in params.names():
            assert np.abs(params[name].grad).max() > 0.0, name

    def test_encoder_parameters_matter_via_finite_difference(self):
        params, enc, inv, _ = small_repr()
        rng = stream(7, "batch")
        obs_t = rng.uniform(0, 1, (12, 8))
        acts = rng.uniform(-0.5, 0.5, (12, 2))
        obs_n = rng.uniform(0, 1, (12, 8))

        def loss_value():
            return inverse_dynamics_loss(Tape(), enc, inv, obs_t, acts, obs_n).item()

        base = loss_value()
        params["encoder.w0"].value[0, 0] += 1e-3
        assert loss_value() != base

    def test_identifiable_toy_system_converges(self):
        # linear dynamics with an invertible action map: the action is a
        # deterministic function of the two observations, so the joint
        # encoder/inverse fit can drive the loss near zero
        rng = stream(0, "toy")
        proj = rng.normal(size=(2, 8))
        x = rng.uniform(-1, 1, size=(256, 2))
        a = rng.uniform(-0.8, 0.8, size=(256, 2))
        obs_t, obs_next = x @ proj, (x + 0.5 * a) @ proj
        params = ParameterSet()
        enc = Encoder(params, rng, obs_dim=8, embed_dim=4, hidden=(32,))
        inv = InverseModel(params, rng, action_dim=2, embed_dim=4, hidden=(32,))
        for step in range(2000):
            idx = stream(1, "batch", step).integers(0, 256, size=64)
            tape = Tape()
            loss = inverse_dynamics_loss(tape, enc, inv, obs_t[idx], a[idx], obs_next[idx])
            tape.backward(loss)
            params.adam_step(3e-3)
        final = inverse_dynamics_loss(Tape(), enc, inv, obs_t, a, obs_next).item()
        assert final < 1e-3


class TestTargetSync:
    def test_interval_one_tracks_live(self):
        params, enc, _, target = small_repr(sync=1)
        obs = stream(8, "obs").uniform(0, 1, size=(4, 8))
        for step in range(1, 4):
            params.accumulate_grad("encoder.w0", np.ones_like(params["encoder.w0"].value))
            params.adam_step(1e-2)
            target.sync(step)
            np.testing.assert_array_equal(enc.encode(obs), target.encode(obs))

    def test_interval_zero_freezes_at_init(self):
        params, enc, _, target = small_repr(sync=0)
        obs = stream(9, "obs").uniform(0, 1, size=(4, 8))
        z0 = target.encode(obs)
        for step in range(1, 200):
            params.accumulate_grad("encoder.w0", np.ones_like(params["encoder.w0"].value))
            params.adam_step(1e-2)
            target.sync(step)
        np.testing.assert_array_equal(target.encode(obs), z0)
        assert target.version == 0

    def test_hash_constant_between_syncs(self):
        params, _, _, target = small_repr(sync=10)
        h = target.state_hash()
        for step in range(1, 10):
            params.accumulate_grad("encoder.w0", np.ones_like(params["encoder.w0"].value))
            params.adam_step(1e-2)
            target.sync(step)
            assert target.state_hash() == h
        target.sync(10)
        assert target.state_hash() != h
        assert target.version == 1

    def test_monotone_steps_enforced(self):
        _, _, _, target = small_repr(sync=10)
        target.sync(5)
        with pytest.raises(ContractError):
            target.sync(4)


class TestSaliency:
    def test_linear_encoder_closed_form(self):
        params = ParameterSet()
        enc = Encoder(params, stream(10, "enc"), obs_dim=12, embed_dim=5, hidden=(), head_activation="linear")
        w = params["encoder.w0"].value
        obs = stream(10, "obs").uniform(0, 1, size=12)
        got = saliency(enc, obs)
        np.testing.assert_allclose(got, np.abs(w).sum(axis=1), atol=1e-12)

    def test_constant_encoder_zero_map(self):
        params = ParameterSet()
        enc = Encoder(params, stream(11, "enc"), obs_dim=12, embed_dim=5, hidden=())
        params["encoder.w0"].value[...] = 0.0
        got = saliency(enc, stream(11, "obs").uniform(0, 1, size=12))
        np.testing.assert_array_equal(got, np.zeros(12))

    def test_nonnegative_everywhere(self):
        params, enc, _, _ = small_repr(seed=12)
        got = saliency(enc, stream(12, "obs").uniform(0, 1, size=8))
        assert got.min() >= 0.0

    def test_wrong_size_rejected(self):
        params, enc, _, _ = small_repr(seed=13)
        with pytest.raises(ContractError):
            saliency(enc, np.zeros(9))


class TestPgmOutput:
    def test_roundtrip_and_sidecar(self, tmp_path):
        rng = stream(14, "map")
        flat = rng.uniform(0, 3, size=2 * 16 * 16)
        path = tmp_path / "map.pgm"
        write_pgm(path, flat, 16, 16, 2)
        img, maxval = read_pgm(path)
        assert maxval == 255
        assert img.shape == (32, 16)
        assert img.max() == 255
        text = (tmp_path / "map.pgm.scale.txt").read_text()
        scale = float(text.split("pixels_per_unit = ")[1].splitlines()[0])
        np.testing.assert_allclose(img / scale, flat.reshape(32, 16), atol=0.5 / scale)

    def test_zero_map_writes_zeros(self, tmp_path):
        path = tmp_path / "zero.pgm"
        write_pgm(path, np.zeros(512), 16, 16, 2)
        img, _ = read_pgm(path)
        assert img.max() == 0

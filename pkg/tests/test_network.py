import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chdscreen import network as nn
from chdscreen.exceptions import CheckpointMismatch, InvalidConfig, LengthMismatch, ShapeMismatch, SingleClassOnly
from oracles import central_difference


def random_batch(rng, config, B=4, T=20):
    mfcc = rng.standard_normal((B, config.in_rows, T))
    hand = rng.standard_normal((B, config.handcrafted_dim))
    y = np.array([0, 1] * (B // 2) + [1] * (B % 2))
    return mfcc, hand, y


def relu_pattern(params, config, mfcc, hand):
    """Signs of every ReLU pre-activation, flattened."""
    _, c = nn.forward(params, config, mfcc, hand, return_cache=True)
    parts = [c["a1"] > 0]
    if config.use_mfcc:
        parts += [c["a0"] > 0] + [a > 0 for _, a in c["branches"]]
    return np.concatenate([p.ravel() for p in parts])


def gradient_errors(config, n_samples, seed, h=1e-4, smooth_only=True):
    """Relative errors of analytic vs central-difference gradients at sampled parameters.

    With `smooth_only`, a draw whose +-h step flips any ReLU is replaced by
    a fresh one, since the loss is not differentiable across that step.
    Returns the errors and the number of replaced draws.
    """
    rng = np.random.default_rng(seed)
    params = nn.init_model(config, seed)
    for k in params:
        if k.endswith(".bias"):
            params[k] = rng.normal(0, 0.1, params[k].shape)
    mfcc, hand, y = random_batch(rng, config)
    w = np.array([1.7, 0.6])
    _, grads = nn.loss_and_grad(params, config, mfcc, hand, y, w)

    def f():
        return nn.loss_and_grad(params, config, mfcc, hand, y, w)[0]

    names = list(params)
    sizes = np.array([params[k].size for k in names], dtype=float)
    errors, skipped = [], 0
    while len(errors) < n_samples:
        # alternate between an even spread over tensors and size-weighted draws
        if len(errors) % 2 == 0:
            name = names[(len(errors) // 2) % len(names)]
        else:
            name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        idx = tuple(int(rng.integers(0, d)) for d in params[name].shape)
        if smooth_only:
            old = params[name][idx]
            params[name][idx] = old + h
            up = relu_pattern(params, config, mfcc, hand)
            params[name][idx] = old - h
            down = relu_pattern(params, config, mfcc, hand)
            params[name][idx] = old
            if not np.array_equal(up, down):
                skipped += 1
                continue
        numeric = central_difference(f, params, name, idx, h=h)
        analytic = grads[name][idx]
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-7))
    return np.array(errors), skipped


class TestConfig:
    def test_shapes(self):
        cfg = nn.ModelConfig()
        params = nn.init_model(cfg, 0)
        assert params["stem.weight"].shape == (32, 39, 3)
        assert params["branch2.weight"].shape == (32, 32, 7)
        assert params["dense1.weight"].shape == (107, 64)
        assert cfg.fused_dim == 3 * 32 + 11 == 107

    def test_even_kernel(self):
        with pytest.raises(InvalidConfig):
            nn.ModelConfig(branch_kernels=(3, 4, 7))
        with pytest.raises(InvalidConfig):
            nn.ModelConfig(branch_kernels=(3, 5))
        with pytest.raises(InvalidConfig):
            nn.TrainConfig(learning_rate=0.0)

    def test_init_deterministic(self):
        a, b = nn.init_model(nn.ModelConfig(), 5), nn.init_model(nn.ModelConfig(), 5)
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert all(np.all(a[k] == 0) for k in a if k.endswith(".bias"))


class TestForward:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(7, 40))
    def test_softmax_outputs(self, seed, T):
        rng = np.random.default_rng(seed)
        cfg = nn.ModelConfig()
        mfcc, hand, _ = random_batch(rng, cfg, B=3, T=T)
        probs = nn.forward(nn.init_model(cfg, seed), cfg, 5 * mfcc, hand)
        assert probs.shape == (3, 2)
        assert np.all((probs > 0) & (probs < 1))
        assert np.max(np.abs(probs.sum(axis=1) - 1)) <= 1e-9

    def test_time_reversal_of_constant_input(self, rng):
        cfg = nn.ModelConfig()
        params = nn.init_model(cfg, 1)
        col = rng.standard_normal((1, 39, 1))
        mfcc = np.repeat(col, 30, axis=2)
        hand = rng.standard_normal((1, 11))
        np.testing.assert_array_equal(nn.forward(params, cfg, mfcc, hand), nn.forward(params, cfg, mfcc[:, :, ::-1], hand))

    def test_shape_errors(self, rng):
        cfg = nn.ModelConfig()
        params = nn.init_model(cfg, 0)
        with pytest.raises(ShapeMismatch):
            nn.forward(params, cfg, rng.standard_normal((2, 13, 20)), rng.standard_normal((2, 11)))
        with pytest.raises(ShapeMismatch):
            nn.forward(params, cfg, rng.standard_normal((2, 39, 5)), rng.standard_normal((2, 11)))
        with pytest.raises(LengthMismatch):
            nn.forward(params, cfg, rng.standard_normal((2, 39, 20)), rng.standard_normal((3, 11)))

    def test_zero_head_gives_half(self, rng):
        cfg = nn.ModelConfig()
        params = nn.init_model(cfg, 0)
        params["dense2.weight"][:] = 0.0
        mfcc, hand, _ = random_batch(rng, cfg)
        assert np.all(nn.forward(params, cfg, mfcc, hand)[:, 1] == 0.5)

    def test_logit_shift_invariance(self, rng):
        z = rng.standard_normal((5, 2))
        np.testing.assert_allclose(nn.softmax(z + 123.4), nn.softmax(z), atol=1e-12)

    def test_handcrafted_only(self, rng):
        cfg = nn.ModelConfig(use_mfcc=False, handcrafted_dim=3)
        probs = nn.forward(nn.init_model(cfg, 0), cfg, None, rng.standard_normal((4, 3)))
        assert probs.shape == (4, 2)


class TestLoss:
    def test_class_weights(self):
        np.testing.assert_allclose(nn.class_weights([1, 1, 1, 0]), [2.0, 4 / 6], rtol=1e-15)
        assert nn.class_weights([0, 1, 0, 1]).tolist() == [1.0, 1.0]
        with pytest.raises(SingleClassOnly):
            nn.class_weights([1, 1])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=2, max_size=50))
    def test_weight_identity(self, labels):
        if len(set(labels)) < 2:
            return
        w = nn.class_weights(labels)
        counts = np.bincount(labels, minlength=2)
        assert abs(float(counts @ w) - len(labels)) < 1e-9

    def test_bce_examples(self):
        assert abs(nn.weighted_bce([0.5], [1], [1.0, 1.0]) - math.log(2)) < 1e-12
        assert nn.weighted_bce([1.0, 0.0], [1, 0], [1.0, 1.0]) <= 1e-6
        loss = nn.weighted_bce([0.9, 0.2], [1, 0], [2.0, 0.6667])
        assert abs(loss - 0.25827) < 5e-5
        with pytest.raises(LengthMismatch):
            nn.weighted_bce([0.5, 0.5], [1], [1.0, 1.0])


class TestGradients:
    def test_finite_differences(self):
        errors, _ = gradient_errors(nn.ModelConfig(), 240, seed=3)
        assert len(errors) >= 200
        assert errors.max() < 1e-4

    def test_finite_differences_small_step_unfiltered(self):
        errors, _ = gradient_errors(nn.ModelConfig(), 200, seed=6, h=1e-6, smooth_only=False)
        assert errors.max() < 1e-4

    def test_finite_differences_small_variants(self):
        cfg = nn.ModelConfig(in_rows=6, stem_channels=4, branch_channels=3, hidden_dense=5, handcrafted_dim=2)
        assert gradient_errors(cfg, 200, seed=4)[0].max() < 1e-4
        cfg = nn.ModelConfig(use_mfcc=False, handcrafted_dim=4, hidden_dense=6)
        assert gradient_errors(cfg, 60, seed=5)[0].max() < 1e-4

    def test_zero_weights_zero_gradients(self, rng):
        cfg = nn.ModelConfig()
        mfcc, hand, y = random_batch(rng, cfg)
        loss, grads = nn.loss_and_grad(nn.init_model(cfg, 0), cfg, mfcc, hand, y, [0.0, 0.0])
        assert loss == 0.0
        assert all(np.all(g == 0) for g in grads.values())

    def test_duplicated_sample(self, rng):
        cfg = nn.ModelConfig()
        params = nn.init_model(cfg, 2)
        mfcc, hand, y = random_batch(rng, cfg, B=1)
        w = [1.3, 0.8]
        l1, g1 = nn.loss_and_grad(params, cfg, mfcc, hand, y, w)
        l2, g2 = nn.loss_and_grad(params, cfg, np.repeat(mfcc, 2, 0), np.repeat(hand, 2, 0), np.repeat(y, 2), w)
        assert abs(l1 - l2) < 1e-12
        for k in g1:
            np.testing.assert_allclose(g2[k], g1[k], rtol=1e-10, atol=1e-14)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        cfg = nn.ModelConfig()
        params = nn.to_float32(nn.init_model(cfg, 9))
        nn.save_checkpoint(tmp_path / "m", params, cfg, nn.TrainConfig())
        loaded, cfg2, doc = nn.load_checkpoint(tmp_path / "m")
        assert cfg2 == cfg
        assert doc["parameters"][0] == {"name": "stem.weight", "shape": [32, 39, 3], "offset": 0}
        mfcc, hand, _ = random_batch(rng, cfg)
        assert np.array_equal(nn.forward(params, cfg, mfcc, hand), nn.forward(loaded, cfg2, mfcc, hand))

    def test_bad_checkpoint(self, tmp_path):
        cfg = nn.ModelConfig()
        nn.save_checkpoint(tmp_path / "m", nn.init_model(cfg, 0), cfg)
        blob = (tmp_path / "m" / "weights.bin").read_bytes()
        (tmp_path / "m" / "weights.bin").write_bytes(blob[:-8])
        with pytest.raises(CheckpointMismatch):
            nn.load_checkpoint(tmp_path / "m")
        with pytest.raises(CheckpointMismatch):
            nn.load_checkpoint(tmp_path / "nothing")

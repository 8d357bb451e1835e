import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pose_embed.model import (
    AdaGradState,
    EmbeddingModel,
    ShapeMismatchError,
    adagrad_update,
    batch_loss,
    gradient_check,
    gradients,
    load_checkpoint,
    loss_and_gradients,
    numerical_gradients,
    relative_error,
    save_checkpoint,
    triplet_loss,
)


def small_model(seed, sizes=(16, 10, 6, 4), **kw):
    rng = np.random.default_rng(seed)
    m = EmbeddingModel.initialize(sizes, rng, **kw)
    # larger weights and nonzero biases exercise every backward term
    return m.with_params([p * 3 if p.ndim == 2 else rng.normal(0, 0.3, p.shape) for p in m.params])


def active_batch(model, seed, n=6, margin=2.0):
    """Random 4x4 image triplets whose hinge terms are all clearly positive."""
    rng = np.random.default_rng(seed + 1000)
    keep = [[], [], []]
    while len(keep[0]) < n:
        imgs = [rng.random((1, 4, 4)) for _ in range(3)]
        if triplet_loss(*(model.forward(x)[0] for x in imgs), margin) > 1e-3:
            for part, x in zip(keep, imgs):
                part.append(x[0])
    return [np.stack(p) for p in keep]


class TestForward:
    def test_deterministic(self):
        m = small_model(0)
        x = np.random.default_rng(1).random((4, 4))
        np.testing.assert_array_equal(m.forward(x), m.forward(x.copy()))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_unit_norm(self, seed):
        m = small_model(seed)
        x = np.random.default_rng(seed).normal(size=(5, 4, 4)) * 10
        assert np.allclose(np.linalg.norm(m.forward(x), axis=1), 1, atol=1e-9, rtol=0)

    def test_zero_output_guarded(self):
        m = EmbeddingModel([np.zeros((4, 3))], [np.zeros(3)])
        e = m.forward(np.ones(4))
        assert np.all(np.isfinite(e)) and np.all(e == 0)

    def test_single_linear_layer_by_hand(self):
        w = np.array([[1.0, -2.0, 0.5], [3.0, 4.0, -1.0]])
        b = np.array([0.1, 0.2, 0.3])
        m = EmbeddingModel([w], [b], normalize_output=False)
        # [2, -1] @ w + b = [2 - 3, -4 - 4, 1 + 1] + b
        np.testing.assert_allclose(m.forward(np.array([2.0, -1.0])), [-0.9, -7.8, 2.3])

    def test_image_and_batch_shapes(self):
        m = small_model(0)
        assert m.forward(np.zeros((4, 4))).shape == (4,)
        assert m.forward(np.zeros((3, 4, 4))).shape == (3, 4)
        assert m.forward(np.zeros((3, 16))).shape == (3, 4)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            small_model(0).forward(np.zeros((5, 5)))

    def test_layer_sizes(self):
        m = small_model(0)
        assert m.layer_sizes == (16, 10, 6, 4)
        assert m.n_params() == 16 * 10 + 10 + 10 * 6 + 6 + 6 * 4 + 4


class TestTripletLoss:
    def test_satisfied(self):
        a = np.array([1.0, 0.0])
        n = np.array([0.0, 1.0])  # |a - n|^2 = 2 >= margin
        assert triplet_loss(a, a, n, 0.2) == 0

    def test_positive_equals_negative(self):
        a, p = np.array([0.3, 0.1]), np.array([-0.2, 0.9])
        assert triplet_loss(a, p, p, 0.2) == pytest.approx(0.2)

    def test_one_dimensional(self):
        assert triplet_loss([0.0], [0.5], [1.0], 0.2) == 0.0

    def test_one_dimensional_active(self):
        # 0.2 + 0.25 - 0.36 = 0.09
        assert triplet_loss([0.0], [0.5], [0.6], 0.2) == pytest.approx(0.09)

    @settings(max_examples=300)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 2))
    def test_hinge_property(self, seed, margin):
        a, p, n = np.random.default_rng(seed).normal(size=(3, 5))
        l = triplet_loss(a, p, n, margin)
        d_ap, d_an = np.sum((a - p) ** 2), np.sum((a - n) ** 2)
        assert l >= 0
        if d_an - d_ap - margin > 1e-12:
            assert l == 0
        if d_an - d_ap - margin < -1e-12:
            assert l > 0


class TestGradients:
    def test_zero_when_all_satisfied(self):
        m = small_model(1)
        x = np.random.default_rng(0).random((4, 4, 4))
        grads = gradients(m, (x, x, -x), margin=0.0)
        assert all(np.all(g == 0) for g in grads)

    def test_shapes_match_params(self):
        m = small_model(2)
        grads = gradients(m, active_batch(m, 2), 2.0)
        assert [g.shape for g in grads] == [p.shape for p in m.params]

    @pytest.mark.parametrize("seed", range(5))
    def test_against_finite_differences(self, seed):
        m = small_model(seed)
        batch = active_batch(m, seed)
        assert gradient_check(m, batch, 2.0, h=1e-5) < 1e-4

    def test_unnormalized_relu_model(self):
        m = small_model(3, activation="relu", normalize_output=False)
        batch = active_batch(m, 3, margin=5.0)
        # loss is piecewise quadratic here, so a wide central step is exact away from kinks
        assert gradient_check(m, batch, 5.0, h=1e-3) < 1e-4

    def test_duplicated_batch_same_mean_gradient(self):
        m = small_model(4)
        batch = active_batch(m, 4)
        doubled = [np.concatenate([b, b]) for b in batch]
        for g1, g2 in zip(gradients(m, batch, 2.0), gradients(m, doubled, 2.0)):
            np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-15)

    def test_loss_matches_batch_loss(self):
        m = small_model(5)
        batch = active_batch(m, 5)
        assert loss_and_gradients(m, batch, 2.0)[0] == pytest.approx(batch_loss(m, batch, 2.0))


class TestGradientCheck:
    def test_inactive_linear_model_zero(self):
        m = EmbeddingModel([np.eye(16, 3)], [np.zeros(3)])
        x = np.zeros((2, 16))
        x[:, 0] = 1
        y = np.zeros((2, 16))
        y[:, 1] = 1
        assert gradient_check(m, (x, x, y), margin=0.5) == 0.0

    def test_detects_corruption(self):
        m = small_model(6)
        batch = active_batch(m, 6)
        grads = gradients(m, batch, 2.0)
        k = int(np.argmax(np.abs(grads[0])))
        grads[0].reshape(-1)[k] *= 2
        assert gradient_check(m, batch, 2.0, h=1e-5, analytic=grads) > 0.4

    def test_relative_error_definition(self):
        a = [np.array([1.0, 0.0, 2.0])]
        n = [np.array([1.5, 0.0, 2.0])]
        assert relative_error(a, n) == pytest.approx(0.5 / 1.5)


class TestAdaGrad:
    def params(self):
        rng = np.random.default_rng(0)
        return [rng.normal(size=(3, 2)), rng.normal(size=2)]

    def test_zero_gradient(self):
        p = self.params()
        state = AdaGradState.zeros_like(p)
        new_p, new_s = adagrad_update(p, [np.zeros_like(x) for x in p], state, 0.05)
        for a, b in zip(new_p, p):
            np.testing.assert_array_equal(a, b)
        for a in new_s.accumulators:
            assert np.all(a == 0)

    def test_first_step(self):
        p = self.params()
        g = [np.array([[0.5, -2.0], [1e-3, 3.0], [-0.1, 7.0]]), np.array([4.0, -0.25])]
        new_p, state = adagrad_update(p, g, AdaGradState.zeros_like(p), 0.05, eps=1e-8)
        for a, b, gg in zip(new_p, p, g):
            np.testing.assert_allclose(a - b, -0.05 * gg / (np.abs(gg) + 1e-8), rtol=1e-12)
            np.testing.assert_allclose(a - b, -0.05 * np.sign(gg), rtol=1e-4)
        np.testing.assert_array_equal(state.accumulators[1], g[1] ** 2)

    def test_second_step_smaller(self):
        p = self.params()
        g = [np.full((3, 2), 0.3), np.full(2, -1.2)]
        p1, s1 = adagrad_update(p, g, AdaGradState.zeros_like(p), 0.05)
        p2, s2 = adagrad_update(p1, g, s1, 0.05)
        for a, b, c in zip(p, p1, p2):
            assert np.all(np.abs(c - b) < np.abs(b - a))
        for a, b in zip(s1.accumulators, s2.accumulators):
            assert np.all(b >= a)

    def test_zero_learning_rate_identity(self):
        p = self.params()
        g = [np.ones_like(x) for x in p]
        new_p, _ = adagrad_update(p, g, AdaGradState.zeros_like(p), 0.0)
        for a, b in zip(new_p, p):
            np.testing.assert_array_equal(a, b)

    def test_inputs_untouched(self):
        p = self.params()
        before = [x.copy() for x in p]
        state = AdaGradState.zeros_like(p)
        adagrad_update(p, [np.ones_like(x) for x in p], state, 0.1)
        for a, b in zip(p, before):
            np.testing.assert_array_equal(a, b)
        assert all(np.all(a == 0) for a in state.accumulators)

    def test_shape_mismatch(self):
        p = self.params()
        with pytest.raises(ShapeMismatchError):
            adagrad_update(p, [np.zeros(5), np.zeros(2)], AdaGradState.zeros_like(p), 0.1)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        m = small_model(7, activation="relu", normalize_output=False)
        save_checkpoint(m, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.layer_sizes == m.layer_sizes
        assert back.activation == "relu" and not back.normalize_output
        for a, b in zip(back.params, m.params):
            np.testing.assert_array_equal(a, b)

    def test_layout(self, tmp_path):
        m = small_model(8)
        save_checkpoint(m, tmp_path / "m.ckpt")
        raw = (tmp_path / "m.ckpt").read_bytes()
        assert raw[:8] == b"PEMBCKPT"
        version, flags, act, n = struct.unpack_from("<IIII", raw, 8)
        assert (version, flags, act, n) == (1, 1, 0, 4)
        assert struct.unpack_from("<4I", raw, 24) == (16, 10, 6, 4)
        header = 8 + 16 + 16 + 8
        assert len(raw) == header + 8 * m.n_params()
        first = np.frombuffer(raw, "<f8", count=1, offset=header)[0]
        assert first == m.weights[0][0, 0]

    def test_rejects_other_files(self, tmp_path):
        (tmp_path / "x").write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "x")

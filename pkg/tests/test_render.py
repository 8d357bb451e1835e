import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pose_embed.pose import Pose
from pose_embed.render import (
    CanvasSpec,
    MPII_BONES,
    fit_joints,
    fit_to_canvas,
    read_pgm,
    render_fitted,
    render_joints,
    render_joints_dense,
    render_skeleton,
    write_pgm,
)

# multiples of 1/8 keep fitting and flipping exact
dyadic_joints = arrays(np.float64, (16, 2), elements=st.integers(0, 4000).map(lambda v: v / 8))


class TestCanvasSpec:
    @pytest.mark.parametrize("kw", [dict(side=15), dict(line_width=0.5), dict(bone_list=((0, 16),)),
                                    dict(margin=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            CanvasSpec(**kw)

    def test_default_skeleton(self):
        assert len(CanvasSpec().bone_list) == 15
        assert {j for b in MPII_BONES for j in b} == set(range(16))


class TestFit:
    def test_already_filling_canvas_is_identity(self):
        c = CanvasSpec()
        span = c.side * (1 - c.margin)
        rng = np.random.default_rng(0)
        j = rng.uniform(0, 1, (16, 2))
        j[:, 1] = j[:, 1] * 0.5 + 0.25
        j[0] = (0, 0.25)
        j[1] = (1, 0.75)
        j = (j - 0.5) * span + c.side / 2  # box [3.2, 60.8] x [17.6, 46.4], centered at (32, 32)
        np.testing.assert_allclose(fit_joints(j, c), j, atol=1e-12)

    def test_translation_removed(self):
        c = CanvasSpec()
        j = np.random.default_rng(3).integers(0, 500, (16, 2)).astype(float)
        np.testing.assert_array_equal(fit_joints(j, c), fit_joints(j + (137, -42), c))

    def test_scale_factor_for_200_by_100_box(self):
        c = CanvasSpec(side=64, margin=0.1)
        j = np.zeros((16, 2))
        j[1] = (200, 100)
        j[2:] = (100, 50)
        out = fit_joints(j, c)
        assert (out[1, 0] - out[0, 0]) / 200 == pytest.approx(57.6 / 200)
        assert (out[1, 1] - out[0, 1]) / 100 == pytest.approx(0.288)
        np.testing.assert_allclose((out.min(0) + out.max(0)) / 2, (32, 32))

    def test_aspect_preserved_and_inside(self):
        c = CanvasSpec()
        j = np.random.default_rng(4).uniform(-300, 900, (16, 2))
        out = fit_joints(j, c)
        ratio = (out[3] - out[7]) / (j[3] - j[7])
        assert ratio[0] == pytest.approx(ratio[1])
        assert out.min() >= c.side * c.margin / 2 - 1e-9
        assert out.max() <= c.side * (1 - c.margin / 2) + 1e-9

    def test_single_point_goes_to_center(self):
        out = fit_to_canvas(Pose("a", np.full((16, 2), 123.0)), CanvasSpec())
        np.testing.assert_array_equal(out.joints, np.full((16, 2), 32.0))


class TestRender:
    def test_range_and_shape(self):
        c = CanvasSpec(side=48)
        g = render_fitted(np.random.default_rng(0).uniform(0, 100, (16, 2)), c)
        assert g.shape == (48, 48)
        assert g.min() == 0 and g.max() == 1

    def test_coincident_joints_single_disc(self):
        c = CanvasSpec()
        g = render_skeleton(Pose("a", np.full((16, 2), 32.0)), c)
        cols, rows = np.meshgrid(np.arange(64) + 0.5, np.arange(64) + 0.5)
        dist = np.hypot(cols - 32, rows - 32)
        reach = c.line_width + 0.5
        assert np.all(g[dist >= reach] == 0)
        assert np.all(g[dist < reach] > 0)
        assert g[31, 31] == 1

    def test_deterministic(self):
        c = CanvasSpec()
        j = np.random.default_rng(1).uniform(0, 64, (16, 2))
        np.testing.assert_array_equal(render_joints(j, c), render_joints(j.copy(), c))

    @pytest.mark.parametrize("w", [1, 2, 3])
    def test_horizontal_bone_rows(self, w):
        c = CanvasSpec(line_width=w, bone_list=((0, 1),))
        r = 30
        j = np.full((16, 2), (10.0, r + 0.5))
        j[1] = (50.0, r + 0.5)
        g = render_joints(j, c)
        rows = np.flatnonzero(g.max(axis=1) > 0)
        assert rows.min() >= r - w and rows.max() <= r + w
        assert g[r, 30] == 1

    def test_zero_outside_strokes(self):
        # nonzero exactly when the pixel center is within reach of some stroke
        c = CanvasSpec(line_width=2)
        j = np.random.default_rng(8).uniform(5, 59, (16, 2))
        g = render_joints(j, c)
        cols, rows = np.meshgrid(np.arange(64) + 0.5, np.arange(64) + 0.5)
        p = np.stack([cols, rows], -1)
        dist = np.full((64, 64), np.inf)
        slack = np.full((64, 64), np.inf)
        for a, b in c.bone_list:
            e = j[b] - j[a]
            t = np.clip(((p - j[a]) @ e) / (e @ e), 0, 1)
            d = np.linalg.norm(p - (j[a] + t[..., None] * e), axis=-1)
            slack = np.minimum(slack, d - (c.line_width / 2 + 0.5))
        for k in range(16):
            d = np.linalg.norm(p - j[k], axis=-1)
            slack = np.minimum(slack, d - (c.line_width + 0.5))
        assert np.all(g[slack > 1e-9] == 0)
        assert np.all(g[slack < -1e-9] > 0)

    def test_kernel_matches_dense_reference(self):
        c = CanvasSpec(side=40, line_width=1.5)
        j = np.random.default_rng(2).uniform(-10, 50, (6, 16, 2))
        np.testing.assert_array_equal(render_joints(j, c), render_joints_dense(j, c))

    def test_out_of_canvas_clipped(self):
        j = np.random.default_rng(5).uniform(-200, 300, (16, 2))
        g = render_joints(j, CanvasSpec())
        assert g.shape == (64, 64) and np.all((g >= 0) & (g <= 1))


class TestRenderInvariance:
    @settings(max_examples=40, deadline=None)
    @given(dyadic_joints, st.integers(-2000, 2000), st.integers(-2000, 2000), st.sampled_from([0.25, 0.5, 2.0, 8.0]))
    def test_translation_and_scale(self, j, dx, dy, s):
        c = CanvasSpec()
        base = render_fitted(j, c)
        np.testing.assert_array_equal(base, render_fitted(j + (dx, dy), c))
        np.testing.assert_array_equal(base, render_fitted(j * s, c))

    def test_general_scale_close(self):
        c = CanvasSpec()
        j = np.random.default_rng(6).uniform(0, 300, (16, 2))
        np.testing.assert_allclose(render_fitted(j, c), render_fitted(j * 1.37 + 0.1, c), atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (16, 2), elements=st.integers(-40, 552).map(lambda v: v / 8)))
    def test_mirror(self, j):
        c = CanvasSpec()
        flipped = j.copy()
        flipped[:, 0] = c.side - j[:, 0]
        np.testing.assert_array_equal(render_joints(flipped, c), render_joints(j, c)[:, ::-1])


def test_pgm_roundtrip(tmp_path):
    g = render_fitted(np.random.default_rng(7).uniform(0, 100, (16, 2)), CanvasSpec())
    write_pgm(g, tmp_path / "a.pgm")
    back = read_pgm(tmp_path / "a.pgm")
    assert back.shape == g.shape
    assert np.abs(back - g).max() <= 0.5 / 255 + 1e-12
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n64 64\n255\n")

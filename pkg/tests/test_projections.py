import numpy as np
import pytest
from scipy.optimize import brentq

from numerics import make_rng
from projections import BallSpec, project_ball, project_l1, project_l2, project_sphere


def l1_oracle(v, c, r):
    """Soft-threshold level found by root finding, independent of the sort-based method."""
    d = v - c
    a = np.abs(d)
    if a.sum() <= r:
        return v.copy()
    if r == 0:
        return c.copy()
    theta = brentq(lambda t: np.maximum(a - t, 0.0).sum() - r, 0.0, a.max(), xtol=1e-14)
    return c + np.sign(d) * np.maximum(a - theta, 0.0)


class TestL1:
    def test_matches_oracle(self):
        rng = make_rng(0)
        for _ in range(500):
            dim = int(rng.integers(1, 6))
            v = rng.standard_normal(dim) * 3
            c = rng.standard_normal(dim)
            r = float(rng.uniform(0.0, 3.0))
            got = project_l1(v, BallSpec(c, r, "l1"))
            assert np.allclose(got, l1_oracle(v, c, r), atol=1e-6)

    def test_result_on_boundary(self):
        c = np.array([1.0, -1.0, 0.5])
        ball = BallSpec(c, 0.7, "l1")
        out = project_l1(np.array([5.0, 2.0, -3.0]), ball)
        assert np.abs(out - c).sum() == pytest.approx(0.7, abs=1e-12)

    def test_feasible_point_untouched(self):
        ball = BallSpec(np.zeros(3), 1.0, "l1")
        v = np.array([0.2, -0.3, 0.1])
        out = project_l1(v, ball)
        assert np.array_equal(out, v)
        assert out is not v

    def test_zero_radius_returns_center(self):
        c = np.array([0.5, 0.5])
        assert np.array_equal(project_l1(np.array([3.0, 1.0]), BallSpec(c, 0.0)), c)

    def test_ties_are_handled(self):
        out = project_l1(np.array([1.0, 1.0, 1.0, 1.0]), BallSpec(np.zeros(4), 2.0))
        assert np.allclose(out, 0.5)

    def test_idempotent(self):
        rng = make_rng(1)
        ball = BallSpec(rng.standard_normal(6), 0.8, "l1")
        once = project_l1(rng.standard_normal(6) * 4, ball)
        assert np.array_equal(project_l1(once, ball), once)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            project_l1(np.ones(3), BallSpec(np.zeros(2), 1.0))


class TestL2AndSphere:
    def test_l2_scales_onto_boundary(self):
        ball = BallSpec(np.array([1.0, 0.0]), 2.0, "l2")
        out = project_l2(np.array([1.0, 10.0]), ball)
        assert np.allclose(out, [1.0, 2.0])
        assert ball.contains(out)

    def test_l2_inside_untouched(self):
        ball = BallSpec(np.zeros(2), 1.0, "l2")
        assert np.array_equal(project_l2(np.array([0.3, 0.4]), ball), [0.3, 0.4])

    def test_sphere(self):
        out = project_sphere(np.array([3.0, 4.0]), 1.0)
        assert np.allclose(out, [0.6, 0.8])
        assert np.allclose(project_sphere(np.array([0.03, 0.04]), 1.0), [0.6, 0.8])

    def test_sphere_zero_vector(self):
        assert np.array_equal(project_sphere(np.zeros(3), 2.0), [2.0, 0.0, 0.0])

    def test_sphere_bad_radius(self):
        with pytest.raises(ValueError):
            project_sphere(np.ones(2), 0.0)

    def test_dispatch(self):
        v = np.array([2.0, 2.0])
        assert np.allclose(project_ball(v, BallSpec(np.zeros(2), 1.0, "l2")), [2 ** -0.5, 2 ** -0.5])
        assert np.allclose(project_ball(v, BallSpec(np.zeros(2), 1.0, "l1")), [0.5, 0.5])


def test_ballspec_validation():
    with pytest.raises(ValueError):
        BallSpec(np.zeros(2), -1.0)
    with pytest.raises(ValueError):
        BallSpec(np.zeros(2), 1.0, "linf")
    with pytest.raises(ValueError):
        BallSpec(np.zeros((2, 2)), 1.0)


@pytest.mark.parametrize("kind", ["l1", "l2"])
class TestGeometry:
    def test_non_expansive(self, kind):
        rng = make_rng(2)
        for _ in range(500):
            dim = int(rng.integers(1, 10))
            ball = BallSpec(rng.standard_normal(dim), float(rng.uniform(0.0, 2.0)), kind)
            u = rng.standard_normal(dim) * 3
            v = rng.standard_normal(dim) * 3
            pu, pv = project_ball(u, ball), project_ball(v, ball)
            assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-12

    def test_feasible_within_1e_12(self, kind):
        rng = make_rng(3)
        for _ in range(500):
            dim = int(rng.integers(1, 16))
            r = float(10 ** rng.uniform(-3, 1))
            c = rng.standard_normal(dim)
            ball = BallSpec(c, r, kind)
            out = project_ball(c + rng.standard_normal(dim) * r * rng.uniform(0.5, 5.0), ball)
            assert ball.distance(out) <= r + 1e-12

    def test_large_radius_overshoot_is_projected(self, kind):
        r = 100.0
        d = make_rng(4).standard_normal(8)
        norm = np.abs(d).sum() if kind == "l1" else np.linalg.norm(d)
        v = d * ((r + 5e-12) / norm)
        ball = BallSpec(np.zeros(8), r, kind)
        assert ball.distance(v) > r + 1e-12
        assert ball.distance(project_ball(v, ball)) <= r + 1e-12


def test_l2_projection_is_nearest_point():
    rng = make_rng(5)
    for _ in range(50):
        ball = BallSpec(rng.standard_normal(4), 1.0, "l2")
        v = ball.center + rng.standard_normal(4) * 3
        best = np.linalg.norm(v - project_l2(v, ball))
        dirs = rng.standard_normal((200, 4))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        feasible = ball.center + dirs * rng.uniform(0.0, 1.0, (200, 1))
        assert np.all(np.linalg.norm(v - feasible, axis=1) >= best - 1e-12)

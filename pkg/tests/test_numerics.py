import numpy as np
import pytest

from bmistab.errors import EvaluationError, RankDeficiencyError, ShapeError
from bmistab.numerics import (
    AdamState,
    RngStream,
    adam_step,
    flatten_params,
    grad_check,
    qr_decompose,
    svd,
    unflatten_params,
)


class TestRngStream:
    def test_equal_seeds_bit_identical(self):
        a = RngStream(42).normal(0, 1, 1000)
        b = RngStream(42).normal(0, 1, 1000)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(RngStream(1).normal(0, 1, 10), RngStream(2).normal(0, 1, 10))

    def test_children_independent_of_draw_order(self):
        root = RngStream(7)
        c3_first = root.child(3).normal(0, 1, 5)
        root2 = RngStream(7)
        _ = root2.child(1).normal(0, 1, 100)
        c3_second = root2.child(3).normal(0, 1, 5)
        assert np.array_equal(c3_first, c3_second)


class TestQr:
    def test_identity(self):
        q, r = qr_decompose(np.eye(3))
        assert np.allclose(np.abs(q), np.eye(3))
        assert np.allclose(np.abs(r), np.eye(3))

    def test_hand_two_column(self):
        # Gram-Schmidt by hand: orthogonal columns of lengths 2 and 3
        a = np.array([[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
        q, r = qr_decompose(a)
        assert np.allclose(sorted(np.abs(np.diag(r))), [2.0, 3.0])
        assert np.allclose(q @ r, a, atol=1e-12)

    def test_seeded_reconstruction(self):
        rng = RngStream(0)
        a = rng.normal(0, 1, (40, 10))
        q, r = qr_decompose(a)
        assert np.linalg.norm(q @ r - a) / np.linalg.norm(a) <= 1e-10
        assert np.allclose(q.T @ q, np.eye(10), atol=1e-10)

    def test_rank_deficiency_names_column(self):
        a = np.zeros((5, 3))
        a[:, 0] = [1, 2, 3, 4, 5]
        a[:, 1] = 2 * a[:, 0]  # dependent
        a[:, 2] = [0, 1, 0, 1, 0]
        with pytest.raises(RankDeficiencyError) as err:
            qr_decompose(a)
        assert err.value.column == 1

    def test_wide_matrix_rejected(self):
        with pytest.raises(ShapeError):
            qr_decompose(np.ones((2, 5)))

    def test_invariants_many_seeds(self):
        for seed in range(1000):
            a = RngStream(seed).normal(0, 1, (12, 5))
            q, r = qr_decompose(a)
            assert np.linalg.norm(q @ r - a) / np.linalg.norm(a) <= 1e-10
            assert np.abs(q.T @ q - np.eye(5)).max() <= 1e-10


class TestSvd:
    def test_diagonal(self):
        u, s, v = svd(np.diag([3.0, 1.0]))
        assert np.allclose(s, [3.0, 1.0])
        assert np.allclose(np.abs(u), np.eye(2), atol=1e-12)
        assert np.allclose(np.abs(v), np.eye(2), atol=1e-12)

    def test_rank_one_outer_product(self):
        x = np.array([1.0, 2.0, 2.0])
        y = np.array([3.0, 4.0])
        u, s, v = svd(np.outer(x, y))
        assert s[0] == pytest.approx(np.linalg.norm(x) * np.linalg.norm(y), rel=1e-12)
        assert s[1] == pytest.approx(0.0, abs=1e-12)

    def test_seeded_reconstruction(self):
        a = RngStream(1).normal(0, 1, (10, 10))
        u, s, v = svd(a)
        assert np.linalg.norm(u @ np.diag(s) @ v.T - a) / np.linalg.norm(a) <= 1e-9

    def test_sign_convention(self):
        for seed in range(20):
            u, _, _ = svd(RngStream(seed).normal(0, 1, (8, 4)))
            for j in range(u.shape[1]):
                assert u[np.argmax(np.abs(u[:, j])), j] >= 0

    def test_descending_and_reconstruction_many_seeds(self):
        for seed in range(1000):
            a = RngStream(10_000 + seed).normal(0, 1, (12, 5))
            u, s, v = svd(a)
            assert np.all(np.diff(s) <= 1e-12)
            assert np.linalg.norm(u @ np.diag(s) @ v.T - a) / np.linalg.norm(a) <= 1e-9


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState.for_params(params)
        adam_step(params, {"w": np.zeros(2)}, state)
        assert np.array_equal(params["w"], [1.0, -2.0])
        assert state.t == 1

    def test_constant_gradient_limit_is_lr_sign(self):
        # with a constant gradient the update magnitude tends to lr * sign(g)
        params = {"w": np.zeros(3)}
        state = AdamState.for_params(params)
        g = np.array([0.5, -2.0, 7.0])
        lr = 1e-2
        prev = params["w"].copy()
        for _ in range(2000):
            prev = params["w"].copy()
            adam_step(params, {"w": g.copy()}, state, lr=lr)
        step = params["w"] - prev
        assert np.allclose(step, -lr * np.sign(g), rtol=1e-6)

    def test_quadratic_bowl_convergence(self):
        rng = RngStream(5)
        scales = rng.uniform(0.5, 2.0, 8)
        target = rng.normal(0, 1, 8)
        params = {"w": np.zeros(8)}
        state = AdamState.for_params(params)
        for _ in range(5000):
            g = 2.0 * scales * (params["w"] - target)
            adam_step(params, {"w": g}, state, lr=5e-3)
        assert np.abs(params["w"] - target).max() <= 1e-6

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3)}
        state = AdamState.for_params(params)
        with pytest.raises(ShapeError):
            adam_step(params, {"w": np.zeros(4)}, state)

    def test_deterministic(self):
        def run():
            params = {"w": np.ones(4)}
            state = AdamState.for_params(params)
            for i in range(50):
                adam_step(params, {"w": np.full(4, 0.1 * (i + 1))}, state, lr=1e-2)
            return params["w"]

        assert np.array_equal(run(), run())


class TestGradCheck:
    def test_quadratic_exact(self):
        def loss(p):
            return float(p @ p), 2.0 * p

        report = grad_check(loss, np.array([1.0, 2.0]), step=1e-5)
        assert report.max_rel_error <= 1e-6

    def test_detects_wrong_gradient(self):
        def loss(p):
            return float(p @ p), 3.0 * p  # wrong by 1.5x

        report = grad_check(loss, np.array([1.0, 2.0]), step=1e-5)
        assert report.max_rel_error > 0.1

    def test_nonfinite_reports_index(self):
        def loss(p):
            if p[1] > 1.0:
                return float("nan"), np.zeros(2)
            return float(p @ p), 2.0 * p

        with pytest.raises(EvaluationError) as err:
            grad_check(loss, np.array([0.0, 1.0]), step=1e-1)
        assert err.value.index == 1


def test_flatten_roundtrip():
    params = {"b": np.arange(3.0), "a": np.arange(6.0).reshape(2, 3)}
    vec, layout = flatten_params(params)
    back = unflatten_params(vec, layout)
    assert set(back) == {"a", "b"}
    assert np.array_equal(back["a"], params["a"])
    assert np.array_equal(back["b"], params["b"])

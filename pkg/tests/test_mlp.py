import numpy as np
import pytest

from moodspace.mlp import (MlpParams, adam_init, adam_step, clip_global_norm,
                           mlp_backward, mlp_forward, mlp_init)

import oracles


class TestInit:
    def test_deterministic(self):
        a = mlp_init(7, 3, seed=42)
        b = mlp_init(7, 3, seed=42)
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(x, y)

    def test_biases_zero(self):
        params = mlp_init(5, 2, seed=0)
        for b in params.biases:
            assert (b == 0).all()

    def test_shape_chain(self):
        params = mlp_init(48, 6, seed=0)
        dims = [(w.shape[0], w.shape[1]) for w in params.weights]
        assert dims == [(48, 512), (512, 512), (512, 512), (512, 6)]
        params.validate()

    def test_glorot_moments(self):
        # sample mean of ~1e5 uniform(-limit, limit) draws within 3 sigma of zero
        params = mlp_init(200, 200, seed=7, hidden=200)
        w = np.concatenate([x.ravel() for x in params.weights])
        limit = np.sqrt(6.0 / 400)
        sigma = limit / np.sqrt(3.0)  # std of the uniform distribution
        assert abs(w.mean()) < 3.0 * sigma / np.sqrt(w.size)
        assert abs(w).max() <= limit

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            mlp_init(0, 3, seed=0)


class TestForward:
    def test_zero_params_give_zero(self):
        params = mlp_init(4, 2, seed=0, hidden=8)
        for w in params.weights:
            w[:] = 0.0
        y, _ = mlp_forward(params, np.random.default_rng(0).standard_normal((5, 4)))
        assert (y == 0).all()

    def test_identity_construction(self):
        # square identity weights and positive inputs stay in the linear region
        dim = 6
        weights = [np.eye(dim) for _ in range(4)]
        biases = [np.zeros(dim) for _ in range(4)]
        params = MlpParams(weights, biases)
        x = np.abs(np.random.default_rng(1).standard_normal((9, dim))) + 0.1
        y, _ = mlp_forward(params, x)
        np.testing.assert_allclose(y, x, atol=1e-12)

    def test_matches_duplicate_formula(self):
        params = mlp_init(7, 3, seed=3, hidden=11)
        x = np.random.default_rng(4).standard_normal((6, 7))
        y, _ = mlp_forward(params, x)
        ref = oracles.naive_mlp_forward(params.weights, params.biases, x)
        np.testing.assert_allclose(y, ref, atol=1e-12)

    def test_row_permutation_equivariance(self):
        params = mlp_init(5, 4, seed=5, hidden=16)
        x = np.random.default_rng(6).standard_normal((8, 5))
        perm = np.random.default_rng(7).permutation(8)
        y, _ = mlp_forward(params, x)
        y_perm, _ = mlp_forward(params, x[perm])
        np.testing.assert_array_equal(y[perm], y_perm)

    def test_nonfinite_intermediate_reports_layer(self):
        params = mlp_init(3, 2, seed=8, hidden=4)
        params.weights[1][:] = 1e308
        x = np.full((2, 3), 1e5)
        with pytest.raises(FloatingPointError, match="layer 1"):
            mlp_forward(params, x)

    def test_input_shape_checked(self):
        params = mlp_init(3, 2, seed=9, hidden=4)
        with pytest.raises(ValueError):
            mlp_forward(params, np.ones((4, 5)))


class TestBackward:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        params = mlp_init(7, 3, seed=seed, hidden=9)
        # keep pre-activations away from the activation kink so the central
        # difference (delta 1e-4) never straddles it
        for _ in range(50):
            x = rng.standard_normal((5, 7))
            _, (acts, _) = mlp_forward(params, x)
            pres = [a @ w + b for a, w, b in
                    zip(acts, params.weights, params.biases)]
            if min(np.abs(p).min() for p in pres) > 1e-3:
                break
        target = rng.standard_normal((5, 3))

        def loss_for(p):
            y, _ = mlp_forward(p, x)
            return float(((y - target) ** 2).sum())

        y, cache = mlp_forward(params, x)
        grads, dx = mlp_backward(params, cache, 2.0 * (y - target))

        for arr, g_arr in zip(params.arrays(), grads.arrays()):
            num = oracles.central_diff(lambda _: loss_for(params), arr, eps=1e-4)
            assert oracles.grad_rel_err(g_arr, num) < 1e-4

        num_dx = oracles.central_diff(lambda _: loss_for(params), x, eps=1e-4)
        assert oracles.grad_rel_err(dx, num_dx) < 1e-4

    def test_zero_upstream_zero_grads(self):
        params = mlp_init(4, 3, seed=1, hidden=6)
        x = np.random.default_rng(2).standard_normal((5, 4))
        _, cache = mlp_forward(params, x)
        grads, dx = mlp_backward(params, cache, np.zeros((5, 3)))
        assert all((g == 0).all() for g in grads.arrays())
        assert (dx == 0).all()

    def test_batch_gradient_is_sum_of_samples(self):
        params = mlp_init(3, 2, seed=3, hidden=5)
        rng = np.random.default_rng(4)
        x = rng.standard_normal((4, 3))
        dy = rng.standard_normal((4, 2))
        _, cache = mlp_forward(params, x)
        batch_grads, _ = mlp_backward(params, cache, dy)
        acc = [np.zeros_like(a) for a in params.arrays()]
        for i in range(4):
            _, c = mlp_forward(params, x[i : i + 1])
            g, _ = mlp_backward(params, c, dy[i : i + 1])
            for buf, garr in zip(acc, g.arrays()):
                buf += garr
        for buf, garr in zip(acc, batch_grads.arrays()):
            np.testing.assert_allclose(buf, garr, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        params = mlp_init(3, 2, seed=5, hidden=4)
        _, cache = mlp_forward(params, np.ones((4, 3)))
        with pytest.raises(ValueError):
            mlp_backward(params, cache, np.ones((4, 7)))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = mlp_init(3, 2, seed=0, hidden=4)
        before = [a.copy() for a in params.arrays()]
        state = adam_init(params, lr=1e-3)
        zero = MlpParams([np.zeros_like(w) for w in params.weights],
                         [np.zeros_like(b) for b in params.biases])
        adam_step(params, zero, state)
        assert state.t == 1
        for a, b in zip(params.arrays(), before):
            np.testing.assert_array_equal(a, b)

    def test_first_step_magnitude(self):
        # constant gradient g: first update is lr * g / (|g| + eps) = ~lr * sign(g)
        params = MlpParams([np.array([[2.0]])], [np.array([0.0])])
        state = adam_init(params, lr=1e-3)
        grads = MlpParams([np.array([[0.5]])], [np.array([0.0])])
        adam_step(params, grads, state)
        assert params.weights[0][0, 0] == pytest.approx(2.0 - 1e-3, rel=1e-5)

    def test_descends_quadratic_bowl(self):
        params = MlpParams([np.array([[3.0]])], [np.array([0.0])])
        state = adam_init(params, lr=0.1)

        def objective():
            return float(params.weights[0][0, 0] ** 2)

        start = objective()
        for _ in range(10):
            g = 2.0 * params.weights[0][0, 0]
            grads = MlpParams([np.array([[g]])], [np.array([0.0])])
            adam_step(params, grads, state)
        assert objective() < start

    def test_nonfinite_gradient_refused(self):
        params = mlp_init(2, 2, seed=1, hidden=3)
        before = [a.copy() for a in params.arrays()]
        state = adam_init(params, lr=1e-3)
        bad = MlpParams([np.full_like(w, np.nan) for w in params.weights],
                        [np.zeros_like(b) for b in params.biases])
        with pytest.raises(FloatingPointError):
            adam_step(params, bad, state)
        assert state.t == 0
        for a, b in zip(params.arrays(), before):
            np.testing.assert_array_equal(a, b)

    def test_deterministic(self):
        results = []
        for _ in range(2):
            params = mlp_init(3, 2, seed=2, hidden=4)
            state = adam_init(params, lr=1e-2)
            rng = np.random.default_rng(3)
            for _ in range(5):
                g = MlpParams([rng.standard_normal(w.shape) for w in params.weights],
                              [rng.standard_normal(b.shape) for b in params.biases])
                adam_step(params, g, state)
            results.append(np.concatenate([a.ravel() for a in params.arrays()]))
        np.testing.assert_array_equal(results[0], results[1])


def test_clip_global_norm():
    grads = MlpParams([np.full((2, 2), 3.0)], [np.full(2, 4.0)])
    norm = clip_global_norm([grads], max_norm=1.0)
    assert norm == pytest.approx(np.sqrt(4 * 9 + 2 * 16))
    joint = np.concatenate([a.ravel() for a in grads.arrays()])
    assert np.linalg.norm(joint) == pytest.approx(1.0)
    # below the threshold nothing changes
    small = MlpParams([np.full((1, 1), 0.1)], [np.zeros(1)])
    clip_global_norm([small], max_norm=1.0)
    assert small.weights[0][0, 0] == pytest.approx(0.1)

import numpy as np
import pytest

from moodspace import mlp
from moodspace.losses import (LossBreakdown, curvature_loss, default_prefixes,
                              menger_energy, recon_loss, repulsion_loss,
                              sample_curvature_triples, spectral_loss, total_loss,
                              variance_loss)
from moodspace.spectral import median_bandwidth, rbf_affinity, top_k_eigs

import oracles


def make_target(points, k, kappa=1.0):
    aff = rbf_affinity(points, kappa=kappa)
    return top_k_eigs(aff.sym_normalized(), k)


def test_default_prefixes():
    assert default_prefixes(32) == [4, 8, 16, 32]
    assert default_prefixes(20) == [4, 8, 16, 20]
    assert default_prefixes(4) == [4]
    assert default_prefixes(3) == [3]


class TestSpectralLoss:
    def test_zero_for_matching_affinity(self):
        rng = np.random.default_rng(0)
        pts = rng.standard_normal((10, 3))
        target = make_target(pts, 6)
        h = median_bandwidth(pts)
        res = spectral_loss(target, pts, prefixes=[2, 4, 6], bandwidth=h)
        assert res.value == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(res.grad, 0.0, atol=1e-9)

    def test_orthogonal_recombination_invariance(self):
        rng = np.random.default_rng(1)
        pts_v = rng.standard_normal((14, 4))
        pts_m = rng.standard_normal((14, 2))
        target = make_target(pts_v, 6)
        h = median_bandwidth(pts_m)
        base = spectral_loss(target, pts_m, prefixes=[4], bandwidth=h).value
        # rotating the top-4 block of the target changes nothing
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        rotated = make_target(pts_v, 6)
        rotated.vectors[:, :4] = rotated.vectors[:, :4] @ q
        rot = spectral_loss(rotated, pts_m, prefixes=[4], bandwidth=h).value
        assert abs(rot - base) <= 1e-9

    def test_value_matches_naive_projectors(self):
        rng = np.random.default_rng(2)
        pts_v = rng.standard_normal((12, 5))
        pts_m = rng.standard_normal((12, 2))
        target = make_target(pts_v, 5)
        h = median_bandwidth(pts_m)
        res = spectral_loss(target, pts_m, prefixes=[2, 5], bandwidth=h)
        aff = rbf_affinity(pts_m, kappa=1.0, bandwidth=h)
        cur = top_k_eigs(aff.sym_normalized(), 12)
        expected = sum(
            oracles.naive_projector_distance(target.vectors[:, :i], cur.vectors[:, :i])
            for i in (2, 5))
        assert res.value == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        pts_v = rng.standard_normal((12, 5))
        pts_m = rng.standard_normal((12, 2))
        target = make_target(pts_v, 6)
        h = median_bandwidth(pts_m)
        res = spectral_loss(target, pts_m, prefixes=[2, 4, 6], bandwidth=h)
        num = oracles.central_diff(
            lambda m: spectral_loss(target, m, prefixes=[2, 4, 6], bandwidth=h).value,
            pts_m, eps=1e-5)
        assert oracles.grad_rel_err(res.grad, num) < 1e-3

    def test_degenerate_prefix_flagged_and_gradient_zeroed(self):
        # an exactly symmetric two-cluster layout gives a repeated eigenvalue
        pts_m = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0],
                          [0.7, 0.7], [-0.7, -0.7], [0.7, -0.7], [-0.7, 0.7]])
        rng = np.random.default_rng(3)
        target = make_target(rng.standard_normal((8, 3)), 4)
        h = median_bandwidth(pts_m)
        res = spectral_loss(target, pts_m, prefixes=[2], bandwidth=h)
        aff = rbf_affinity(pts_m, kappa=1.0, bandwidth=h)
        emb = top_k_eigs(aff.sym_normalized(), 3)
        gap = emb.values[1] - emb.values[2]
        if gap < 1e-10:
            assert res.degenerate_prefixes == [2]
            np.testing.assert_array_equal(res.grad, 0.0)
        else:
            assert res.degenerate_prefixes == []

    def test_median_bandwidth_applied_when_missing(self):
        rng = np.random.default_rng(4)
        pts_m = rng.standard_normal((10, 2))
        target = make_target(rng.standard_normal((10, 3)), 4)
        res = spectral_loss(target, pts_m, prefixes=[2])
        assert res.bandwidth == pytest.approx(median_bandwidth(pts_m))

    def test_prefix_beyond_target_rejected(self):
        rng = np.random.default_rng(5)
        target = make_target(rng.standard_normal((8, 3)), 4)
        with pytest.raises(ValueError):
            spectral_loss(target, rng.standard_normal((8, 2)), prefixes=[6])


class TestCurvature:
    def test_collinear_points_zero(self):
        t = np.linspace(0, 1, 9)[:, None]
        pts = t * np.array([[2.0, -1.0, 0.5]])
        value, grad = curvature_loss(pts, n_triples=4, seed=0)
        assert value == pytest.approx(0.0, abs=1e-20)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_circle_closed_form(self):
        # any three points on a circle of radius r have menger curvature 1/r
        r = 2.5
        angles = np.array([0.3, 1.4, 2.6])
        pts = r * np.column_stack([np.cos(angles), np.sin(angles)])
        value, _ = menger_energy(pts, np.array([[0, 1, 2]]))
        assert value == pytest.approx(1.0 / r**2, rel=1e-12)
        ref = oracles.menger_curvature(pts[0], pts[1], pts[2])
        assert value == pytest.approx(ref**2, rel=1e-12)

    def test_coincident_triple_contributes_zero(self):
        pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
        value, grad = menger_energy(pts, np.array([[0, 1, 2], [1, 2, 3]]))
        ref = oracles.menger_curvature(pts[1], pts[2], pts[3]) ** 2
        assert value == pytest.approx(ref / 2.0, rel=1e-12)
        assert np.isfinite(grad).all()

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((9, 3))
        triples = sample_curvature_triples(pts, 4, seed=seed)
        _, grad = menger_energy(pts, triples)
        num = oracles.central_diff(lambda p: menger_energy(p, triples)[0], pts, eps=1e-5)
        assert oracles.grad_rel_err(grad, num) < 1e-4

    def test_triple_sampling_deterministic(self):
        rng = np.random.default_rng(9)
        pts = rng.standard_normal((20, 2))
        a = sample_curvature_triples(pts, 3, seed=5)
        b = sample_curvature_triples(pts, 3, seed=5)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (60, 3)
        assert (a[:, 1] != a[:, 2]).all()


class TestRepulsion:
    def test_two_points_ordered_pair_convention(self):
        pts = np.array([[0.0], [1.0]])
        value, _ = repulsion_loss(pts, eps=1e-4)
        assert value == pytest.approx(2.0 / (1.0 + 1e-4), rel=1e-12)

    def test_coincident_pair(self):
        pts = np.zeros((2, 3))
        value, _ = repulsion_loss(pts, eps=1e-4)
        assert value == pytest.approx(2.0 / 1e-4, rel=1e-12)

    def test_matches_naive_and_finite_differences(self):
        rng = np.random.default_rng(1)
        pts = rng.standard_normal((5, 2))
        value, grad = repulsion_loss(pts, eps=1e-2)
        assert value == pytest.approx(oracles.naive_repulsion(pts, 1e-2), abs=1e-12)
        num = oracles.central_diff(lambda p: repulsion_loss(p, eps=1e-2)[0], pts, eps=1e-6)
        assert oracles.grad_rel_err(grad, num) < 1e-4

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        pts = rng.standard_normal((8, 3))
        perm = rng.permutation(8)
        assert repulsion_loss(pts)[0] == pytest.approx(repulsion_loss(pts[perm])[0], rel=1e-12)


class TestRecon:
    def test_exact_match_zero(self):
        w = np.random.default_rng(0).standard_normal((4, 3))
        value, grad = recon_loss(w, w.copy())
        assert value == 0.0
        assert (grad == 0).all()

    def test_single_entry_off(self):
        w_target = np.zeros((2, 2))
        w_pred = np.zeros((2, 2))
        w_pred[0, 1] = 2.0
        value, _ = recon_loss(w_target, w_pred)
        assert value == pytest.approx(1.0)

    def test_matches_naive_and_finite_differences(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((5, 4))
        value, grad = recon_loss(a, b)
        assert value == pytest.approx(oracles.naive_recon(a, b), rel=1e-12)
        num = oracles.central_diff(lambda p: recon_loss(a, p)[0], b, eps=1e-6)
        assert oracles.grad_rel_err(grad, num) < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            recon_loss(np.zeros((2, 2)), np.zeros((2, 3)))


class TestVariance:
    def test_whitened_input_zero(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((50, 3))
        # orthonormalize columns and scale so (1/n) M^T M = I
        q, _ = np.linalg.qr(m)
        m = q[:, :3] * np.sqrt(50)
        value, _ = variance_loss(m)
        assert value == pytest.approx(0.0, abs=1e-18)

    def test_zero_input_gives_g(self):
        value, _ = variance_loss(np.zeros((10, 4)))
        assert value == pytest.approx(4.0)

    def test_matches_naive_and_finite_differences(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((7, 3))
        value, grad = variance_loss(m)
        assert value == pytest.approx(oracles.naive_variance(m), rel=1e-12)
        num = oracles.central_diff(lambda p: variance_loss(p)[0], m, eps=1e-6)
        assert oracles.grad_rel_err(grad, num) < 1e-4

    def test_permutation_invariant(self):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((9, 2))
        perm = rng.permutation(9)
        assert variance_loss(m)[0] == pytest.approx(variance_loss(m[perm])[0], rel=1e-12)


class TestTotalLoss:
    def setup_problem(self, seed, lambdas):
        rng = np.random.default_rng(seed)
        n, dv, dw, g = 10, 7, 5, 2
        v_std = rng.standard_normal((n, dv))
        w_std = rng.standard_normal((n, dw))
        subset = np.arange(n)
        target = make_target(v_std, 4)
        enc = mlp.mlp_init(dv, g, seed=seed, hidden=12)
        dec = mlp.mlp_init(g, dw, seed=seed + 1, hidden=12)
        m0, _ = mlp.mlp_forward(enc, v_std)
        h = median_bandwidth(m0[subset])
        kw = dict(kappa=1.0, prefixes=[2, 4], bandwidth=h, lambdas=lambdas,
                  curvature_seed=7)
        return enc, dec, v_std, w_std, subset, target, kw

    def test_breakdown_sum_invariant(self):
        enc, dec, v, w, sub, target, kw = self.setup_problem(0, (0.3, 0.2, 1.0, 0.5))
        bd, _, _ = total_loss(enc, dec, v, w, sub, target, **kw)
        expected = bd.spec + 0.3 * bd.curv + 0.2 * bd.rep + 1.0 * bd.recon + 0.5 * bd.var
        assert bd.total == pytest.approx(expected, abs=1e-10)

    def test_zero_when_perfect(self):
        # lambdas zero except reconstruction; target affinity equals the
        # encoded affinity (encode is fed through) and decode is exact
        rng = np.random.default_rng(1)
        n, d = 8, 3
        v_std = rng.standard_normal((n, d))
        enc = mlp.MlpParams([np.eye(d)], [np.zeros(d)])  # identity map
        dec = mlp.MlpParams([np.eye(d)], [np.zeros(d)])
        w_std = v_std.copy()
        target = make_target(v_std, 4)
        bd, _, _ = total_loss(enc, dec, v_std, w_std, np.arange(n), target,
                              kappa=1.0, prefixes=[2, 4], bandwidth=None,
                              lambdas=(0.0, 0.0, 1.0, 0.0), curvature_seed=0)
        assert bd.spec == pytest.approx(0.0, abs=1e-12)
        assert bd.recon == pytest.approx(0.0, abs=1e-12)
        assert bd.total == pytest.approx(0.0, abs=1e-12)

    def test_components_match_standalone_calls(self):
        enc, dec, v, w, sub, target, kw = self.setup_problem(2, (0.1, 0.1, 1.0, 0.1))
        bd, _, _ = total_loss(enc, dec, v, w, sub, target, **kw)
        m_all, _ = mlp.mlp_forward(enc, v)
        w_pred, _ = mlp.mlp_forward(dec, m_all)
        m_sub = m_all[sub]
        assert bd.spec == pytest.approx(
            spectral_loss(target, m_sub, prefixes=[2, 4], bandwidth=kw["bandwidth"]).value)
        assert bd.curv == pytest.approx(
            curvature_loss(m_sub, n_triples=4, seed=7)[0])
        assert bd.rep == pytest.approx(repulsion_loss(m_sub)[0])
        assert bd.recon == pytest.approx(recon_loss(w, w_pred)[0])
        assert bd.var == pytest.approx(variance_loss(m_sub)[0])

    @pytest.mark.parametrize("seed", range(3))
    def test_end_to_end_parameter_gradient(self, seed):
        lambdas = (1e-3, 1e-3, 1.0, 1e-3)
        enc, dec, v, w, sub, target, kw = self.setup_problem(seed + 10, lambdas)
        bd, eg, dg = total_loss(enc, dec, v, w, sub, target, **kw)

        def value():
            b, _, _ = total_loss(enc, dec, v, w, sub, target, **kw)
            return b.total

        rng = np.random.default_rng(seed)
        for net, grads in ((enc, eg), (dec, dg)):
            for arr, garr in zip(net.arrays(), grads.arrays()):
                flat = arr.reshape(-1)
                gflat = garr.reshape(-1)
                idx = rng.choice(flat.size, size=min(5, flat.size), replace=False)
                fd = np.empty(len(idx))
                for j, i in enumerate(idx):
                    old = flat[i]
                    flat[i] = old + 1e-5
                    fp = value()
                    flat[i] = old - 1e-5
                    fm = value()
                    flat[i] = old
                    fd[j] = (fp - fm) / 2e-5
                assert oracles.grad_rel_err(gflat[idx], fd) < 1e-3


def test_loss_breakdown_row():
    bd = LossBreakdown(spec=1.0, curv=2.0, rep=3.0, recon=4.0, var=5.0,
                       total=6.0, lambdas=(0.1, 0.2, 0.3, 0.4))
    assert bd.as_row(12) == [12.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]

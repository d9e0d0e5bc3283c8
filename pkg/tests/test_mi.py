import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edad import numerics as nx
from edad.mi import (CRITICS, Critic, MIEstimator, critic_scores, estimate, init_critic, phi,
                     pointwise_scores)

from conftest import fd_check

DECOMPOSABLE = [("infonce", False), ("infonce", True), ("nwj", False), ("jsd", False)]


class TestCritics:
    def test_zero_phi_gives_zero_scores(self, rng):
        c = init_critic("separable", 4, 2, rng)
        c.params["phi.W_out"] = nx.parameter(np.zeros_like(c.params["phi.W_out"].data))
        assert not critic_scores(rng.standard_normal((5, 4)), rng.standard_normal((5, 2)), c).data.any()

    def test_bilinear_identity_orthonormal(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
        c = Critic("bilinear", {"bilinear.W": nx.parameter(np.eye(4))})
        np.testing.assert_allclose(critic_scores(q, q, c).data, np.eye(4), atol=1e-12)

    def test_separable_loop_oracle(self, rng):
        c = init_critic("separable", 6, 3, rng)
        A, Z = rng.standard_normal((5, 6)), rng.standard_normal((5, 3))
        pa, pz = phi(A, c.params, "a").data, phi(Z, c.params, "z").data
        F = critic_scores(A, Z, c).data
        for i in range(5):
            for j in range(5):
                assert abs(F[i, j] - float(pa[i] @ pz[j])) < 1e-12

    def test_concatenated_loop_oracle(self, rng):
        c = init_critic("concatenated", 4, 2, rng, hidden=5)
        p = {k: v.data for k, v in c.params.items()}
        A, Z = rng.standard_normal((3, 4)), rng.standard_normal((3, 2))
        F = critic_scores(A, Z, c).data
        for i in range(3):
            for j in range(3):
                h = np.maximum(A[i] @ p["concat.W_a"] + Z[j] @ p["concat.W_z"] + p["concat.b"], 0)
                assert abs(F[i, j] - float(h @ p["concat.w_out"][:, 0])) < 1e-12

    @pytest.mark.parametrize("kind", CRITICS)
    def test_simultaneous_permutation(self, kind, rng):
        c = init_critic(kind, 4, 2, rng)
        A, Z = rng.standard_normal((6, 4)), rng.standard_normal((6, 2))
        s = rng.permutation(6)
        F = critic_scores(A, Z, c).data
        np.testing.assert_allclose(critic_scores(A[s], Z[s], c).data, F[np.ix_(s, s)], atol=1e-12)

    @pytest.mark.parametrize("kind", CRITICS)
    def test_batched_leading_axes(self, kind, rng):
        c = init_critic(kind, 4, 2, rng)
        A, Z = rng.standard_normal((3, 5, 4)), rng.standard_normal((3, 5, 2))
        F = critic_scores(A, Z, c).data
        assert F.shape == (3, 5, 5)
        np.testing.assert_allclose(F[1], critic_scores(A[1], Z[1], c).data, atol=1e-12)


class TestEstimators:
    def test_zero_critic_closed_forms(self):
        F = np.zeros((6, 6))
        assert abs(estimate("infonce", F).item() - (-1.0)) < 1e-9
        assert abs(estimate("mine", F).item()) < 1e-9
        assert abs(estimate("jsd", F).item() - (-2 * math.log(2))) < 1e-9
        assert abs(estimate("nwj", F).item() - (-math.exp(-1))) < 1e-9

    def test_mine_first_update_keeps_unit_average(self):
        est = MIEstimator("mine")
        assert abs(est.estimate(np.zeros((4, 4)), update=True).item()) < 1e-12
        assert est.mine_average == pytest.approx(1.0)

    def test_mine_running_average(self):
        est = MIEstimator("mine")
        F = np.full((3, 3), math.log(2.0))
        est.estimate(F, update=True)
        assert est.mine_average == pytest.approx(0.99 + 0.01 * 2.0)
        assert est.mine_average > 0

    @pytest.mark.parametrize("kind", ["infonce", "nwj", "mine", "jsd"])
    def test_monotone_in_diagonal_scale(self, kind):
        vals = [estimate(kind, c * np.eye(5)).item() for c in (0.0, 0.5, 1.0, 2.0, 4.0)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("kind,std", DECOMPOSABLE)
    def test_pointwise_mean_is_estimate(self, kind, std, rng):
        for _ in range(10):
            F = rng.standard_normal((7, 7)) * 2
            est = MIEstimator(kind, standard_infonce=std)
            assert abs(est.pointwise(F).data.mean() - est.estimate(F).item()) < 1e-10

    def test_mine_pointwise_uses_batch_partition(self, rng):
        F = rng.standard_normal((5, 5))
        c = pointwise_scores("mine", F).data
        off = F[~np.eye(5, dtype=bool)].reshape(5, 4)
        np.testing.assert_allclose(c, np.diag(F) - np.log(np.exp(off).mean(axis=1)), atol=1e-12)

    @pytest.mark.parametrize("kind,std", DECOMPOSABLE + [("mine", False)])
    def test_depressed_diagonal_is_top_score(self, kind, std, rng):
        F = rng.standard_normal((8, 8)) * 0.3
        F[3, 3] -= 10
        score = -pointwise_scores(kind, F, standard_infonce=std).data
        assert int(np.argmax(score)) == 3

    def test_hand_three_by_three(self):
        F = np.array([[1.0, 0.0, math.log(2)], [0.0, 2.0, 0.0], [math.log(3), 0.0, 0.5]])
        c = pointwise_scores("infonce", F).data
        np.testing.assert_allclose(c, [1 - (1 + 2) / 2, 2 - 1, 0.5 - (3 + 1) / 2], atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 2**31 - 1), st.sampled_from(["infonce", "nwj", "mine", "jsd"]))
    def test_strictly_increasing_in_each_diagonal(self, B, seed, kind):
        r = np.random.default_rng(seed)
        F = r.standard_normal((B, B))
        i = int(r.integers(B))
        G = F.copy()
        G[i, i] += 0.5
        assert estimate(kind, G).item() > estimate(kind, F).item()
        assert -pointwise_scores(kind, G).data[i] < -pointwise_scores(kind, F).data[i]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 2**31 - 1), st.sampled_from(["infonce", "nwj", "jsd"]))
    def test_permutation_invariance(self, B, seed, kind):
        r = np.random.default_rng(seed)
        F = r.standard_normal((B, B))
        s = r.permutation(B)
        assert estimate(kind, F[np.ix_(s, s)]).item() == pytest.approx(estimate(kind, F).item(), abs=1e-12)

    def test_clamp_counts_events(self):
        est = MIEstimator("infonce")
        F = np.zeros((3, 3))
        F[0, 1] = 500.0
        val = est.estimate(F).item()
        assert math.isfinite(val) and est.clamp_events == 1

    def test_standard_infonce_form(self, rng):
        F = rng.standard_normal((4, 4))
        want = np.mean(np.diag(F) - np.log(np.exp(F).mean(axis=1)))
        assert estimate("infonce", F, standard_infonce=True).item() == pytest.approx(want, abs=1e-12)

    @pytest.mark.parametrize("kind", ["infonce", "nwj", "jsd"])
    @pytest.mark.parametrize("critic", CRITICS)
    def test_gradients_match_finite_differences(self, kind, critic, rng):
        c = init_critic(critic, 3, 3, rng, hidden=3, out=3)
        A, Z = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        est = MIEstimator(kind)
        assert fd_check(lambda: est.estimate(critic_scores(A, Z, c)), c.params) < 1e-4

    @pytest.mark.parametrize("critic", CRITICS)
    def test_mine_gradient_is_bias_corrected(self, critic, rng):
        # the value uses log(running average); the gradient is that of
        # mean(diag) - mean(exp offdiag) / running average
        c = init_critic(critic, 3, 3, rng, hidden=3, out=3)
        A, Z = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        est = MIEstimator("mine", mine_average=1.7)
        off = 1.0 - np.eye(4)

        def surrogate():
            F = critic_scores(A, Z, c)
            return nx.diagonal(F).mean() - (nx.exp(F) * off).sum() * (1 / 12 / 1.7)

        got = nx.gradient(est.estimate(critic_scores(A, Z, c)), c.params)
        want = nx.gradient(surrogate(), c.params)
        for k in got:
            np.testing.assert_allclose(got[k], want[k], atol=1e-12)
        assert fd_check(surrogate, c.params) < 1e-4


@pytest.mark.slow
@pytest.mark.parametrize("kind,std,shift", [("infonce", True, 0.0), ("nwj", False, 0.0), ("infonce", False, 1.0)])
def test_gaussian_estimate_in_range_at_high_correlation(kind, std, shift):
    # the non-log InfoNCE form sits one nat below the log-ratio bound, hence the shift
    from edad.mi import fit_critic, gaussian_pairs
    hi = fit_critic(gaussian_pairs(0.9), kind=kind, standard_infonce=std, steps=2000, batch=128)[0] + shift
    lo = fit_critic(gaussian_pairs(0.3), kind=kind, standard_infonce=std, steps=2000, batch=128)[0] + shift
    assert 0.4 <= hi <= 0.9 and hi > lo

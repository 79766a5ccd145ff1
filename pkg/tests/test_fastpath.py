import numpy as np
import pytest

from kohbed.errors import ConditioningError, PrecomputeTooLarge
from kohbed.fastpath import (FlopCounter, UpdateContext, check_memory,
                             commit_extension, dense_conditional,
                             rank_one_predictive, rank_one_vector,
                             schur_extend, trace_after_update)


def random_joint(rng, n_obs, n_targets):
    dim = n_obs + n_targets + 1
    a = rng.normal(size=(dim, dim + 3))
    full = a @ a.T / (dim + 3) + 0.5 * np.eye(dim)
    return full


def make_ctx(full, n_obs, n_targets):
    obs = full[:n_obs, :n_obs]
    cross = full[n_obs:n_obs + n_targets, :n_obs]
    prior_tt = full[n_obs:n_obs + n_targets, n_obs:n_obs + n_targets]
    sigma_star = dense_conditional(prior_tt, cross, obs)
    return UpdateContext(np.linalg.inv(obs), cross, sigma_star)


class TestSchurExtend:
    def test_block_diagonal_trivial(self):
        ctx = UpdateContext(np.array([[1.0]]), np.zeros((1, 1)))
        new_inv, u, lam = schur_extend(ctx, np.array([0.0]), 2.0)
        assert np.allclose(new_inv, [[0.5, 0.0], [0.0, 1.0]])
        assert lam == pytest.approx(0.5)

    def test_matches_dense_inverse(self):
        rng = np.random.default_rng(0)
        full = random_joint(rng, 5, 0)
        obs = full[:5, :5]
        a = full[5, :5]
        b = full[5, 5]
        ctx = UpdateContext(np.linalg.inv(obs), np.zeros((0, 5)))
        new_inv, _, _ = schur_extend(ctx, a, b)
        enlarged = np.block([[np.array([[b]]), a[None, :]],
                             [a[:, None], obs]])
        rel = np.max(np.abs(new_inv - np.linalg.inv(enlarged))) \
            / np.max(np.abs(np.linalg.inv(enlarged)))
        assert rel < 1e-8

    def test_extend_then_rebuild_recovers(self):
        rng = np.random.default_rng(1)
        full = random_joint(rng, 4, 0)
        obs = full[:4, :4]
        inv0 = np.linalg.inv(obs)
        ctx = UpdateContext(inv0.copy(), np.zeros((0, 4)))
        new_inv, u, lam = schur_extend(ctx, full[4, :4], full[4, 4])
        # dropping the prepended row/column must recover obs^-1 via the
        # reverse Schur identity
        recovered = new_inv[1:, 1:] - np.outer(new_inv[1:, 0],
                                               new_inv[0, 1:]) / new_inv[0, 0]
        assert np.max(np.abs(recovered - inv0)) < 1e-8

    def test_duplicate_point_raises(self):
        obs = np.array([[2.0]])
        ctx = UpdateContext(np.linalg.inv(obs), np.zeros((0, 1)))
        with pytest.raises(ConditioningError):
            schur_extend(ctx, np.array([2.0]), 2.0)


class TestRankOnePredictive:
    def test_zero_information_vector(self):
        rng = np.random.default_rng(2)
        full = random_joint(rng, 3, 4)
        ctx = make_ctx(full, 3, 4)
        before = ctx.sigma_star.copy()
        out = rank_one_predictive(ctx, np.zeros(4), 5.0)
        assert np.array_equal(out, before)

    def test_matches_dense_reconditioning(self):
        rng = np.random.default_rng(3)
        n_obs, n_t = 6, 5
        full = random_joint(rng, n_obs, n_t)
        ctx = make_ctx(full, n_obs, n_t)
        new_col = full[-1, :n_obs]
        new_self = full[-1, -1]
        cross_new = full[n_obs:n_obs + n_t, -1]

        new_inv, u, lam = schur_extend(ctx, new_col, new_self)
        v = rank_one_vector(ctx, cross_new, u)
        fast = rank_one_predictive(ctx, v, lam)

        obs_idx = list(range(n_obs)) + [n_obs + n_t]
        t_idx = list(range(n_obs, n_obs + n_t))
        dense = dense_conditional(full[np.ix_(t_idx, t_idx)],
                                  full[np.ix_(t_idx, obs_idx)],
                                  full[np.ix_(obs_idx, obs_idx)])
        assert np.max(np.abs(fast - dense)) / np.max(np.abs(dense)) < 1e-8

    def test_downdate_is_psd_and_trace_matches(self):
        rng = np.random.default_rng(4)
        full = random_joint(rng, 5, 6)
        ctx = make_ctx(full, 5, 6)
        new_inv, u, lam = schur_extend(ctx, full[-1, :5], full[-1, -1])
        v = rank_one_vector(ctx, full[5:11, -1], u)
        assert lam > 0
        tr_fast = trace_after_update(ctx, v, lam,
                                     float(np.trace(ctx.sigma_star)))
        updated = rank_one_predictive(ctx, v, lam)
        assert tr_fast == pytest.approx(float(np.trace(updated)), abs=1e-10)
        drop = ctx.sigma_star - updated
        assert np.linalg.eigvalsh(drop).min() >= -1e-10

    def test_trace_never_increases(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            full = random_joint(rng, 4, 3)
            ctx = make_ctx(full, 4, 3)
            _, u, lam = schur_extend(ctx, full[-1, :4], full[-1, -1])
            v = rank_one_vector(ctx, full[4:7, -1], u)
            tr0 = float(np.trace(ctx.sigma_star))
            assert trace_after_update(ctx, v, lam, tr0) <= tr0 + 1e-12


class TestSequentialConsistency:
    def test_multi_round_matches_dense(self):
        rng = np.random.default_rng(6)
        n_obs, n_t, rounds = 5, 4, 3
        dim = n_obs + n_t + rounds
        a = rng.normal(size=(dim, dim + 3))
        full = a @ a.T / (dim + 3) + 0.5 * np.eye(dim)
        t_idx = np.arange(n_obs, n_obs + n_t)

        ctx = UpdateContext(
            np.linalg.inv(full[:n_obs, :n_obs]),
            full[np.ix_(t_idx, np.arange(n_obs))].copy(),
            dense_conditional(full[np.ix_(t_idx, t_idx)],
                              full[np.ix_(t_idx, np.arange(n_obs))],
                              full[:n_obs, :n_obs]))
        obs_ids = list(range(n_obs))
        for r in range(rounds):
            new = n_obs + n_t + r
            a_vec = full[new, obs_ids]
            new_inv, u, lam = schur_extend(ctx, a_vec, full[new, new])
            v = rank_one_vector(ctx, full[t_idx, new], u)
            commit_extension(ctx, new_inv, full[t_idx, new], v, lam)
            obs_ids = [new] + obs_ids
            dense = dense_conditional(full[np.ix_(t_idx, t_idx)],
                                      full[np.ix_(t_idx, obs_ids)],
                                      full[np.ix_(obs_ids, obs_ids)])
            rel = np.max(np.abs(ctx.sigma_star - dense)) \
                / np.max(np.abs(dense))
            assert rel < 1e-8


class TestInstrumentation:
    def test_flop_count_grows_quadratically(self):
        rng = np.random.default_rng(7)
        sizes = [16, 32, 64, 128]
        ops = []
        for n in sizes:
            a = rng.normal(size=(n + 1, n + 1))
            full = a @ a.T + (n + 1) * np.eye(n + 1)
            ctx = UpdateContext(np.linalg.inv(full[:n, :n]),
                                np.zeros((0, n)),
                                counter=FlopCounter())
            schur_extend(ctx, full[n, :n], full[n, n])
            ops.append(ctx.counter.ops)
        slope = np.polyfit(np.log(sizes), np.log(ops), 1)[0]
        assert 1.7 < slope < 2.3

    def test_memory_guard(self):
        with pytest.raises(PrecomputeTooLarge):
            check_memory(100_000, 1000)
        check_memory(200, 1000)

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netcontrast.model import sample_node_sparse
from netcontrast.support import (
    CostMatrix,
    SdpOptions,
    build_cost,
    estimate_perturbation,
    exhaustive_support,
    extract_support,
    false_negative_rate,
    group_lasso,
    group_lasso_path,
    group_lasso_support,
    hard_threshold,
    lambda_grid,
    lambda_max,
    select_m,
    solve_sdp,
)


def rng_of(seed):
    return np.random.default_rng(seed)


def symmetric_noise(n, rng, sigma=1.0):
    w = rng.standard_normal((n, n))
    w = (w + w.T) / np.sqrt(2)
    w[np.diag_indices(n)] = rng.standard_normal(n) * np.sqrt(2)
    return sigma * w


def planted_residual(n, m, sigma_b, seed, sigma=0.0):
    rng = rng_of(seed)
    b, sup = sample_node_sparse(n, m, sigma_b, rng)
    resid = b if sigma == 0 else b + symmetric_noise(n, rng, sigma)
    return resid, sup


# ---------------------------------------------------------------------------
# cost construction

def test_cost_single_is_entrywise_square():
    y = rng_of(0).standard_normal((7, 7))
    c = build_cost(y)
    assert c.mode == "single"
    assert np.array_equal(c.matrix, y * y)


def test_cost_single_averages_copies():
    rng = rng_of(1)
    mats = [rng.standard_normal((5, 5)) for _ in range(3)]
    c = build_cost(mats)
    avg = sum(mats) / 3
    assert np.allclose(c.matrix, avg * avg)


def test_cost_truncated_caps_at_tau_squared():
    y = np.array([[0.0, 3.0], [3.0, 0.5]])
    c = build_cost(y, mode="truncated", tau=1.0)
    assert c.matrix.max() <= 1.0
    assert np.allclose(c.matrix, [[0.0, 1.0], [1.0, 0.25]])
    assert c.tau == 1.0


def test_cost_truncated_needs_positive_tau():
    y = np.eye(3)
    with pytest.raises(ValueError):
        build_cost(y, mode="truncated")
    with pytest.raises(ValueError):
        build_cost(y, mode="truncated", tau=0.0)


def test_cost_multi_is_product_of_half_averages():
    rng = rng_of(2)
    mats = [rng.standard_normal((4, 4)) for _ in range(3)]
    c = build_cost(mats, mode="multi")
    expect = (mats[0] + mats[1]) / 2 * mats[2]
    assert np.allclose(c.matrix, expect)
    assert c.matrix.min() < 0  # cross products keep sign


def test_cost_multi_needs_two_copies():
    with pytest.raises(ValueError):
        build_cost(np.eye(3), mode="multi")


def test_cost_unknown_mode():
    with pytest.raises(ValueError):
        build_cost(np.eye(3), mode="squared")


# ---------------------------------------------------------------------------
# SDP

def test_sdp_recovers_planted_support_noiseless():
    resid, sup = planted_residual(60, 5, 1.0, 3)
    sol = solve_sdp(build_cost(resid), 5)
    assert sol.converged
    est = extract_support(sol, 5)
    assert np.array_equal(est.indices, sup)


def test_sdp_residuals_within_tolerance_when_converged():
    resid, _ = planted_residual(50, 4, 1.0, 4, sigma=0.5)
    opts = SdpOptions()
    sol = solve_sdp(build_cost(resid), 4, opts=opts)
    k = 50 - 4
    assert sol.converged
    assert sol.trace_residual <= opts.feas_tol * k
    assert sol.sum_residual <= opts.feas_tol * k * k
    z = sol.z()
    assert np.linalg.eigvalsh(z).min() >= -1e-9
    # monitors only: the relaxation does not constrain entries or the diagonal
    assert sol.negative_entry < 0.5
    assert sol.diag_excess < 1.0


def test_sdp_row_sums_split_cleanly_noiseless():
    resid, sup = planted_residual(40, 4, 1.0, 5)
    sol = solve_sdp(build_cost(resid), 4)
    comp = np.setdiff1d(np.arange(40), sup)
    assert sol.row_sums[sup].max() < 0.1 * sol.row_sums[comp].min()


def test_sdp_deterministic_given_seed():
    resid, _ = planted_residual(30, 3, 1.0, 6, sigma=0.8)
    c = build_cost(resid)
    a = solve_sdp(c, 3, rng=rng_of(9))
    b = solve_sdp(c, 3, rng=rng_of(9))
    assert np.array_equal(a.factor, b.factor)
    assert a.objective == b.objective


def test_sdp_support_invariant_to_cost_scale():
    resid, _ = planted_residual(30, 3, 1.0, 7, sigma=1.0)
    c = build_cost(resid)
    a = extract_support(solve_sdp(c.matrix, 3, rng=rng_of(1)), 3)
    b = extract_support(solve_sdp(7.25 * c.matrix, 3, rng=rng_of(1)), 3)
    assert np.array_equal(a.indices, b.indices)


def test_sdp_input_validation():
    with pytest.raises(ValueError):
        solve_sdp(np.zeros((3, 4)), 1)
    with pytest.raises(ValueError):
        solve_sdp(np.zeros((5, 5)), 0)
    with pytest.raises(ValueError):
        solve_sdp(np.zeros((5, 5)), 5)


def test_sdp_matches_exhaustive_noiseless():
    resid, sup = planted_residual(30, 3, 1.0, 8)
    sdp_est = extract_support(solve_sdp(build_cost(resid), 3), 3)
    lse_est = exhaustive_support(resid, 3, limit=30)
    assert np.array_equal(sdp_est.indices, sup)
    assert np.array_equal(lse_est.indices, sup)


def test_sdp_matches_exhaustive_under_noise():
    # signal at several times the recovery scale, where the relaxation is tight
    agree = 0
    for seed in range(10):
        resid, _ = planted_residual(12, 2, 6.0, 100 + seed, sigma=1.0)
        sdp_est = extract_support(solve_sdp(build_cost(resid), 2, rng=rng_of(seed)), 2)
        lse_est = exhaustive_support(resid, 2)
        agree += np.array_equal(sdp_est.indices, lse_est.indices)
    assert agree >= 9


# ---------------------------------------------------------------------------
# simple estimators and scoring

def test_extract_support_stable_tie_break():
    class Fake:
        row_sums = np.array([1.0, 0.0, 0.0, 1.0, 0.0])

    est = extract_support(Fake(), 2)
    assert np.array_equal(est.indices, [1, 2])


def test_hard_threshold_picks_largest_rows():
    resid, sup = planted_residual(50, 5, 2.0, 9, sigma=0.3)
    est = hard_threshold(resid, 5)
    assert np.array_equal(est.indices, sup)
    with pytest.raises(ValueError):
        hard_threshold(resid, 0)


def test_exhaustive_limit_guard():
    with pytest.raises(ValueError):
        exhaustive_support(np.zeros((17, 17)), 2)


def test_exhaustive_lex_smallest_on_ties():
    est = exhaustive_support(np.zeros((6, 6)), 2)
    assert np.array_equal(est.indices, [0, 1])


def test_exhaustive_objective_is_complement_energy():
    rng = rng_of(10)
    y = symmetric_noise(8, rng)
    est = exhaustive_support(y, 2)
    sq = y * y

    def energy(combo):
        comp = np.setdiff1d(np.arange(8), combo)
        block = sq[np.ix_(comp, comp)]
        return 0.5 * (block.sum() + np.trace(block))

    import itertools
    vals = {c: energy(c) for c in itertools.combinations(range(8), 2)}
    assert energy(tuple(est.indices)) == min(vals.values())


def test_estimate_perturbation_masks_and_embeds():
    y = rng_of(11).standard_normal((6, 6))
    sup = np.array([1, 4])
    local = estimate_perturbation(y, sup)
    comp = np.array([0, 2, 3, 5])
    assert np.array_equal(local[np.ix_(sup, sup)], y[np.ix_(sup, sup)])
    assert np.array_equal(local[np.ix_(sup, comp)], y[np.ix_(sup, comp)])
    assert np.all(local[np.ix_(comp, comp)] == 0)
    kept = np.array([0, 2, 3, 5, 7, 9])
    out = estimate_perturbation(y, sup, kept=kept, n=10)
    assert out.shape == (10, 10)
    assert np.array_equal(out[np.ix_(kept, kept)], local)
    dropped = np.setdiff1d(np.arange(10), kept)
    assert np.all(out[dropped, :] == 0)
    with pytest.raises(ValueError):
        estimate_perturbation(y, sup, kept=kept)


def test_false_negative_rate_values():
    assert false_negative_rate([1, 2, 3], [1, 2, 3]) == 0.0
    assert false_negative_rate([1, 2], [1, 2, 3, 4]) == 0.5
    assert false_negative_rate([], [5]) == 1.0
    with pytest.raises(ValueError):
        false_negative_rate([1], [])


# ---------------------------------------------------------------------------
# support-size selection

def test_select_m_finds_boundary():
    n, m_true = 60, 4
    rng = rng_of(12)
    b, sup = sample_node_sparse(n, m_true, 3.0, rng)
    resid = b + symmetric_noise(n, rng)
    sel = select_m(resid, sigma_hat=1.0, m0=8, c_thresh=3.0, rng=rng_of(0))
    assert sel.converged
    assert sel.m == m_true
    est = extract_support(solve_sdp(build_cost(resid), sel.m), sel.m)
    assert np.array_equal(est.indices, sup)


def test_select_m_pure_noise_shrinks_to_one():
    y = symmetric_noise(40, rng_of(13))
    sel = select_m(y, sigma_hat=1.0, m0=4, c_thresh=4.0, rng=rng_of(0))
    assert sel.converged
    assert sel.m == 1


def test_select_m_cap_reports_nonconverged():
    y = symmetric_noise(30, rng_of(14))
    sel = select_m(y, sigma_hat=1e-8, m0=2, rng=rng_of(0), max_steps=3)
    assert not sel.converged
    assert sel.steps == 3


def test_select_m_rejects_bad_sigma():
    with pytest.raises(ValueError):
        select_m(np.eye(5), sigma_hat=0.0, m0=1)


# ---------------------------------------------------------------------------
# group lasso: independent proximal-gradient oracle

def glasso_objective(y, v, lam):
    fit = 0.25 * np.linalg.norm(v + v.T - y) ** 2
    return fit + lam * np.linalg.norm(v, axis=1).sum()


def fista_oracle(y, lam, iters=4000):
    lstep = 4.0
    a = np.zeros_like(y)
    zk = a.copy()
    t = 1.0
    for _ in range(iters):
        w = zk - (zk + zk.T - y) / lstep
        norms = np.linalg.norm(w, axis=1)
        shrink = np.maximum(0.0, 1.0 - (lam / lstep) / np.maximum(norms, 1e-300))
        a_new = w * shrink[:, None]
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        zk = a_new + ((t - 1.0) / t_new) * (a_new - a)
        a, t = a_new, t_new
    return a


def test_group_lasso_matches_proximal_oracle():
    rng = rng_of(15)
    y = symmetric_noise(25, rng)
    b, sup = sample_node_sparse(25, 3, 2.0, rng)
    y = y + b
    lam = 0.5 * lambda_max(y)
    res = group_lasso(y, lam)
    assert res.converged
    ref = fista_oracle(y, lam)
    f_admm = glasso_objective(y, res.factor, lam)
    f_ref = glasso_objective(y, ref, lam)
    assert f_admm <= f_ref + 1e-5 * max(1.0, abs(f_ref))
    assert np.array_equal(res.alpha > 0, np.linalg.norm(ref, axis=1) > 1e-6)


def test_group_lasso_kkt_conditions():
    rng = rng_of(16)
    y = symmetric_noise(20, rng)
    b, _ = sample_node_sparse(20, 3, 2.0, rng)
    y = y + b
    lam = 0.4 * lambda_max(y)
    res = group_lasso(y, lam, tol=1e-10 * np.linalg.norm(y), max_iter=20000)
    z = res.factor
    grad = z + z.T - y
    scale = np.linalg.norm(y)
    for i in range(20):
        row_norm = np.linalg.norm(z[i])
        if row_norm > 0:
            kkt = grad[i] + lam * z[i] / row_norm
            assert np.linalg.norm(kkt) <= 1e-5 * scale
        else:
            assert np.linalg.norm(grad[i]) <= lam * (1 + 1e-8) + 1e-5 * scale


def test_group_lasso_zero_above_lambda_max():
    y = symmetric_noise(15, rng_of(17))
    res = group_lasso(y, lambda_max(y) * 1.0001)
    assert res.converged
    assert np.all(res.alpha == 0)
    assert np.all(res.factor == 0)


def test_group_lasso_lam_zero_reproduces_symmetric_part():
    y = symmetric_noise(12, rng_of(18))
    res = group_lasso(y, 0.0)
    assert res.converged
    assert np.allclose(res.perturbation(), y, atol=1e-5)


def test_group_lasso_scale_equivariance():
    y = symmetric_noise(14, rng_of(19))
    lam = 0.3 * lambda_max(y)
    a = group_lasso(y, lam)
    b = group_lasso(2.5 * y, 2.5 * lam)
    assert np.allclose(2.5 * a.factor, b.factor, atol=1e-5 * np.linalg.norm(y))


def test_group_lasso_validation_and_max_iter_warning(caplog):
    y = symmetric_noise(10, rng_of(20))
    with pytest.raises(ValueError):
        group_lasso(y, -1.0)
    with pytest.raises(ValueError):
        group_lasso(y, 1.0, rho=0.0)
    with caplog.at_level(logging.WARNING, logger="netcontrast.support"):
        res = group_lasso(y, 0.1 * lambda_max(y), max_iter=2)
    assert not res.converged
    assert "max_iter" in caplog.text


def test_lambda_max_is_exact_boundary():
    y = symmetric_noise(10, rng_of(21))
    hi = lambda_max(y)
    assert hi == np.linalg.norm(y, axis=1).max()
    assert np.all(group_lasso(y, hi * 1.001).alpha == 0)
    assert np.any(group_lasso(y, hi * 0.97).alpha > 0)


def test_lambda_grid_shape_and_bounds():
    y = symmetric_noise(10, rng_of(22))
    grid = lambda_grid(y)
    norms = np.linalg.norm(y, axis=1)
    assert grid.size == 40
    assert grid[0] == norms.max()
    assert np.isclose(grid[-1], 0.85 * norms.min())
    assert np.all(np.diff(grid) < 0)
    assert np.array_equal(lambda_grid(np.zeros((4, 4))), [0.0])


def test_path_orders_activation_by_signal():
    resid, sup = planted_residual(30, 3, 2.5, 23, sigma=0.5)
    path = group_lasso_path(resid, lambda_grid(resid))
    comp = np.setdiff1d(np.arange(30), sup)
    act = path.activation_lambda
    assert np.all(np.isfinite(act[sup]))
    finite_comp = act[comp][np.isfinite(act[comp])]
    if finite_comp.size:
        assert act[sup].min() > finite_comp.max()
    assert path.alphas.shape == (40, 30)
    assert path.converged.all()


def test_path_rejects_bad_grids():
    y = symmetric_noise(8, rng_of(24))
    with pytest.raises(ValueError):
        group_lasso_path(y, np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        group_lasso_path(y, np.array([1.0, -0.5]))
    with pytest.raises(ValueError):
        group_lasso_path(y, np.array([]))


def test_group_lasso_support_recovers_planted():
    resid, sup = planted_residual(40, 4, 2.0, 25, sigma=0.5)
    est = group_lasso_support(resid, 4)
    assert np.array_equal(est.indices, sup)
    assert est.method == "glasso"
    with pytest.raises(ValueError):
        group_lasso_support(resid, 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 5.0))
def test_group_lasso_shrinks_row_norms(seed, lam_frac):
    y = symmetric_noise(9, rng_of(seed))
    lam = lam_frac * lambda_max(y) / 2
    res = group_lasso(y, lam, max_iter=3000)
    assert np.all(res.alpha <= np.linalg.norm(y, axis=1) + 1e-6)
    if lam >= lambda_max(y):
        assert np.all(res.alpha == 0)

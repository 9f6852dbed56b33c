import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from far.linear_far import (
    block_update,
    factorize,
    fit_at_lambda,
    kkt_residuals,
    lambda_grid,
    lambda_max,
    lambda_path,
    objective,
    predict_linear,
    threshold_linear,
)
from far.penalty import Penalty
from oracles import centered_qr, group_lasso_fista, group_lasso_objective, ols_fit, random_instance

THETA = np.array([[1.0], [-1.0], [1.0], [-1.0]])


def test_block_update_hand_example():
    f = block_update(factorize(THETA), np.array([2.0, -2.0, 2.0, -2.0]), 1.0)
    assert np.max(np.abs(f - [1.0, -1.0, 1.0, -1.0])) <= 1e-12


def test_block_update_zero_at_boundary():
    # ||P|| = 4 and sqrt(n) = 2, so c = 2 sits exactly on the boundary
    fac = factorize(THETA)
    R = np.array([2.0, -2.0, 2.0, -2.0])
    assert np.all(block_update(fac, R, 2.0) == 0.0)
    assert np.all(block_update(fac, R, 5.0) == 0.0)
    assert np.linalg.norm(block_update(fac, R, 2.0 - 1e-6)) > 0


def test_block_update_zero_residual():
    assert np.all(block_update(factorize(THETA), np.zeros(4), 0.0) == 0.0)


def test_block_update_no_penalty_is_projection():
    rng = np.random.default_rng(1)
    D = rng.standard_normal((20, 3))
    R = rng.standard_normal(20)
    proj, _ = ols_fit(D, R)
    np.testing.assert_allclose(block_update(factorize(D), R, 0.0), proj, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.0, 3.0))
def test_block_update_is_centred_and_shrunk(seed, c):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((12, 3))
    R = rng.standard_normal(12)
    f = block_update(factorize(D), R, c)
    proj, _ = ols_fit(D, R)
    assert abs(f.mean()) <= 1e-12
    assert np.linalg.norm(f) <= np.linalg.norm(proj) + 1e-12
    # the update is a nonnegative multiple of the projection
    if np.linalg.norm(f) > 0:
        alpha = (f @ proj) / (proj @ proj)
        np.testing.assert_allclose(f, alpha * proj, atol=1e-10)


def test_lambda_max_empties_the_model():
    rng = np.random.default_rng(2)
    designs, y = random_instance(rng, 25, 3, 3)
    lm = lambda_max(designs, y)
    assert fit_at_lambda(designs, y, Penalty("lasso", lm)).active_set == ()
    assert fit_at_lambda(designs, y, Penalty("lasso", 0.99 * lm)).active_set != ()


def test_lambda_grid_shape():
    g = lambda_grid(2.0, 5, 1e-2)
    assert g[0] == 2.0 and g[-1] == pytest.approx(0.02)
    assert np.all(np.diff(g) < 0)
    with pytest.raises(ValueError):
        lambda_grid(1.0, 1)


def test_zero_response_gives_empty_model():
    rng = np.random.default_rng(3)
    designs = [rng.standard_normal((10, 2)) for _ in range(2)]
    model = fit_at_lambda(designs, np.zeros(10), Penalty("lasso", 0.1))
    assert model.active_set == () and model.objective == 0.0


def test_lasso_zero_lambda_single_block_is_ols():
    rng = np.random.default_rng(4)
    D = rng.standard_normal((40, 4))
    y = D @ rng.standard_normal(4) + rng.standard_normal(40)
    y -= y.mean()
    model = fit_at_lambda([D], y, Penalty("lasso", 0.0), tol=1e-12)
    fit, coef = ols_fit(D, y)
    np.testing.assert_allclose(model.fits[0], fit, atol=1e-10)
    np.testing.assert_allclose(model.etas[0], coef, atol=1e-8)


def test_scad_large_signal_is_unbiased():
    rng = np.random.default_rng(5)
    D = rng.standard_normal((50, 3))
    y = 3 * D @ np.array([1.0, -1.0, 0.5]) + 0.1 * rng.standard_normal(50)
    y -= y.mean()
    model = fit_at_lambda([D], y, Penalty("scad", 0.05), tol=1e-12)
    np.testing.assert_allclose(model.fits[0], ols_fit(D, y)[0], atol=1e-10)


def test_oracle_equivalence_small_instance():
    rng = np.random.default_rng(6)
    designs, y = random_instance(rng, 20, 3, 2)
    lam = 0.3 * lambda_max(designs, y)
    model = fit_at_lambda(designs, y, Penalty("lasso", lam), tol=1e-12)
    ref = group_lasso_fista(designs, y, lam)
    assert abs(model.objective - group_lasso_objective(y, ref, lam)) <= 1e-6
    np.testing.assert_allclose(model.fits, ref, atol=1e-5)


def test_objective_matches_oracle_formula():
    rng = np.random.default_rng(7)
    y = rng.standard_normal(9)
    F = rng.standard_normal((2, 9))
    assert objective(y, F, Penalty("lasso", 0.4)) == pytest.approx(group_lasso_objective(y, F, 0.4), abs=1e-14)


@pytest.mark.parametrize("family", ["lasso", "scad"])
def test_objective_nonincreasing_over_sweeps(family):
    rng = np.random.default_rng(8)
    for _ in range(10):
        designs, y = random_instance(rng, 30, 4, 3)
        lam = rng.uniform(0.05, 0.5) * lambda_max(designs, y)
        hist = fit_at_lambda(designs, y, Penalty(family, lam), record=True).history
        assert np.all(np.diff(hist) <= 1e-12 * max(1.0, hist[0]))


def test_kkt_with_independent_projections():
    rng = np.random.default_rng(9)
    designs, y = random_instance(rng, 30, 4, 3)
    lam = 0.2 * lambda_max(designs, y)
    model = fit_at_lambda(designs, y, Penalty("lasso", lam), tol=1e-12)
    n = y.size
    r = y - model.fits.sum(axis=0)
    for D, f in zip(designs, model.fits):
        Q, _ = centered_qr(D)
        P = Q @ (Q.T @ (r + f))
        if np.linalg.norm(f) == 0:
            assert np.linalg.norm(P) / np.sqrt(n) <= lam + 1e-6
        else:
            # stationarity: P - f = lam sqrt(n) f / ||f||
            gap = P - f - lam * np.sqrt(n) * f / np.linalg.norm(f)
            assert np.linalg.norm(gap) / np.sqrt(n) <= 1e-6
    inactive, active = kkt_residuals(model, designs, y)
    assert inactive <= 1e-6 and active <= 1e-6


def test_path_warm_start_matches_cold_fits():
    rng = np.random.default_rng(10)
    designs, y = random_instance(rng, 25, 3, 3)
    path = lambda_path(designs, y, Penalty("lasso"), 8, ratio=0.05, tol=1e-10)
    assert path.models[0].active_set == ()
    for lam, m in zip(path.lambdas, path.models):
        cold = fit_at_lambda(designs, y, Penalty("lasso", lam), tol=1e-10)
        assert m.objective == pytest.approx(cold.objective, abs=1e-8)
    assert all(path.converged)


def test_predict_on_training_designs_reproduces_fit():
    rng = np.random.default_rng(11)
    designs, y = random_instance(rng, 30, 3, 4)
    model = fit_at_lambda(designs, y, Penalty("scad", 0.05), response_mean=2.5)
    np.testing.assert_allclose(predict_linear(model, designs), model.fitted_values, atol=1e-10)


def test_predict_checks_shapes():
    rng = np.random.default_rng(12)
    designs, y = random_instance(rng, 10, 2, 2)
    model = fit_at_lambda(designs, y, Penalty("lasso", 0.01))
    with pytest.raises(ValueError):
        predict_linear(model, designs[:1])
    with pytest.raises(ValueError):
        predict_linear(model, [np.ones((3, 3)), np.ones((3, 3))])


def test_rank_deficient_block():
    rng = np.random.default_rng(13)
    D = rng.standard_normal((20, 2))
    D = np.column_stack([D, D[:, 0] + D[:, 1], np.full(20, 4.0)])
    fac = factorize(D)
    assert fac.rank == 2
    y = D[:, 0] - D[:, 1]
    y -= y.mean()
    model = fit_at_lambda([D], y, Penalty("lasso", 0.0), tol=1e-12)
    np.testing.assert_allclose(model.fits[0], y, atol=1e-10)


def test_non_finite_input_raises():
    with pytest.raises(FloatingPointError):
        fit_at_lambda([np.array([[1.0], [np.nan]])], np.zeros(2), Penalty("lasso", 0.1))
    with pytest.raises(FloatingPointError):
        fit_at_lambda([np.ones((2, 1))], np.array([np.inf, 0.0]), Penalty("lasso", 0.1))


def test_threshold_linear_drops_small_blocks():
    rng = np.random.default_rng(14)
    designs, y = random_instance(rng, 30, 4, 3)
    lam = 0.1 * lambda_max(designs, y)
    model = fit_at_lambda(designs, y, Penalty("lasso", lam))
    norms = np.linalg.norm(model.fits, axis=1) / np.sqrt(30)
    cut = float(np.sort(norms[norms > 0])[0]) + 1e-9
    out = threshold_linear(model, cut)
    assert set(out.active_set) == {j for j in range(4) if norms[j] > cut}
    for j in out.active_set:
        assert np.array_equal(out.fits[j], model.fits[j])
    again = threshold_linear(out, cut)
    assert np.array_equal(again.fits, out.fits)

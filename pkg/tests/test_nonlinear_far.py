import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from far.nonlinear_far import (
    LinkBasis,
    build_link_design,
    fit_nonlinear,
    index_gradient,
    index_objective,
    pca_direction,
    predict_nonlinear,
    sign_normalize,
    threshold_model,
    update_eta_step,
)
from far.penalty import Penalty
from far.selection import TuningRule
from oracles import central_difference, cox_de_boor


def _instance(rng, n=40, p=2, q=3, d=5):
    """Random links built at one index, evaluated at another (links stay fixed)."""
    scores = rng.standard_normal((p, n, q))
    base = np.array([sign_normalize(rng.standard_normal(q)) for _ in range(p)])
    links, h_means = [], []
    for th, e in zip(scores, base):
        H, lk = build_link_design(th, e, d)
        links.append(lk)
        h_means.append(H.mean(axis=0))
    xis = [rng.standard_normal(d) for _ in range(p)]
    etas = np.array([sign_normalize(e + 0.3 * rng.standard_normal(q)) for e in base])
    y = rng.standard_normal(n)
    return scores, etas, xis, links, h_means, y


def test_link_basis_matches_cox_de_boor():
    lk = LinkBasis.on_range(-1.3, 2.1, 7)
    u = np.linspace(-1.3, 2.1, 301)
    np.testing.assert_allclose(lk.evaluate(u), cox_de_boor(u, lk.knots), atol=1e-12)


def test_link_basis_partition_of_unity():
    lk = LinkBasis.on_range(0.0, 1.0, 6)
    u = np.random.default_rng(0).uniform(0, 1, 50)
    np.testing.assert_allclose(lk.evaluate(u).sum(axis=1), 1.0, atol=1e-12)


def test_link_basis_linear_outside_range():
    lk = LinkBasis.on_range(0.0, 1.0, 6)
    slope = lk.derivative(np.array([1.0]))[0]
    outside = lk.evaluate(np.array([1.5, 2.5]))
    np.testing.assert_allclose(outside[1] - outside[0], slope, atol=1e-12)
    np.testing.assert_allclose(outside[0], lk.evaluate(np.array([1.0]))[0] + 0.5 * slope, atol=1e-12)


def test_link_derivative_matches_finite_differences():
    lk = LinkBasis.on_range(-2.0, 2.0, 8)
    for u0 in (-1.7, -0.2, 0.9, 1.95):
        for k in range(8):
            fd = central_difference(lambda x: lk.evaluate(x)[0, k], np.array([u0]))
            assert lk.derivative(np.array([u0]))[0, k] == pytest.approx(fd[0], abs=1e-7)


def test_link_roundtrip():
    lk = LinkBasis.on_range(-0.5, 3.0, 5)
    back = LinkBasis.from_dict(lk.to_dict())
    u = np.linspace(-1, 4, 17)
    assert np.array_equal(back.evaluate(u), lk.evaluate(u))


def test_link_rejects_bad_arguments():
    with pytest.raises(ValueError):
        LinkBasis.on_range(0.0, 1.0, 3)
    with pytest.raises(ValueError):
        LinkBasis.on_range(1.0, 1.0, 5)


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=6))
def test_sign_normalize_properties(v):
    v = np.array(v)
    e = sign_normalize(v)
    if not np.any(v):
        assert not np.any(e)
        return
    if np.linalg.norm(v) < 1e-150:
        return
    assert np.linalg.norm(e) == pytest.approx(1.0, abs=1e-12)
    assert e[np.flatnonzero(e)[0]] > 0
    np.testing.assert_allclose(sign_normalize(-v), e, atol=1e-15)
    np.testing.assert_allclose(sign_normalize(e), e, atol=1e-15)


def test_constant_index_gives_empty_design():
    theta = np.tile([1.0, 2.0], (5, 1))
    H, lk = build_link_design(theta, np.array([0.6, 0.8]), 5)
    assert lk is None and np.all(H == 0) and H.shape == (5, 5)


def test_link_design_rows_sum_to_one():
    rng = np.random.default_rng(1)
    H, lk = build_link_design(rng.standard_normal((30, 4)), sign_normalize(np.ones(4)), 6)
    np.testing.assert_allclose(H.sum(axis=1), 1.0, atol=1e-12)
    assert lk.d == 6


@pytest.mark.parametrize("seed", range(20))
def test_index_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(100 + seed)
    scores, etas, xis, links, h_means, y = _instance(rng, n=int(rng.integers(15, 40)), p=2, q=int(rng.integers(2, 5)))
    active, grad = index_gradient(scores, etas, xis, links, h_means, y)
    q = etas.shape[1]

    def obj(flat):
        e = etas.copy()
        for k, j in enumerate(active):
            e[j] = flat[k * q:(k + 1) * q]
        return index_objective(scores, e, xis, links, h_means, y)

    fd = central_difference(obj, np.concatenate([etas[j] for j in active]))
    assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(fd)


@pytest.mark.parametrize("seed", range(10))
def test_eta_step_never_increases_objective(seed):
    rng = np.random.default_rng(200 + seed)
    scores, etas, xis, links, h_means, y = _instance(rng)
    upd = update_eta_step(scores, etas, xis, links, h_means, y)
    assert upd.objective_new <= upd.objective_old
    assert upd.objective_old == pytest.approx(index_objective(scores, etas, xis, links, h_means, y))
    if upd.accepted:
        assert upd.objective_new == pytest.approx(index_objective(scores, upd.etas, xis, links, h_means, y))
        for e in upd.etas:
            assert np.linalg.norm(e) == pytest.approx(1.0, abs=1e-12)
    else:
        assert np.array_equal(upd.etas, etas)


def test_eta_step_skips_blocks_without_link():
    rng = np.random.default_rng(3)
    scores, etas, xis, links, h_means, y = _instance(rng, p=3)
    xis[1] = np.zeros_like(xis[1])
    upd = update_eta_step(scores, etas, xis, links, h_means, y)
    assert np.array_equal(upd.etas[1], etas[1])


def test_pca_direction_matches_eigendecomposition():
    rng = np.random.default_rng(4)
    theta = rng.standard_normal((200, 3)) @ np.diag([3.0, 1.0, 0.5]) + 5.0
    centred = theta - theta.mean(axis=0)
    w, V = np.linalg.eigh(centred.T @ centred)
    ref = V[:, -1]
    e = pca_direction(theta)
    assert abs(e @ ref) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(e) == pytest.approx(1.0)


def _single_index_data(rng, n=120, q=3, noise=0.0):
    theta = rng.standard_normal((2, n, q))
    eta = sign_normalize(np.array([1.0, -0.5, 0.3]))
    u = theta[0] @ eta
    y = u + 0.5 * np.sin(2 * u) + noise * rng.standard_normal(n)
    return theta, eta, y


def test_noiseless_single_index_recovery():
    rng = np.random.default_rng(5)
    theta, eta, y = _single_index_data(rng)
    mean = y.mean()
    model = fit_nonlinear(theta, y - mean, Penalty("lasso"), 8, None, response_mean=mean, lam=1e-4)
    assert abs(model.etas[0] @ eta) >= 0.999
    resid = y - model.fitted_values
    assert np.mean(resid**2) <= 1e-3 * np.var(y)


def test_fit_with_validation_selects_signal_and_predicts():
    rng = np.random.default_rng(6)
    theta, eta, y = _single_index_data(rng, noise=0.2)
    vtheta, _, vy = _single_index_data(rng, noise=0.2)
    vy = vtheta[0] @ eta + 0.5 * np.sin(2 * vtheta[0] @ eta) + 0.2 * rng.standard_normal(vy.size)
    mean = y.mean()
    rule = TuningRule(n_lambda=20)
    model = fit_nonlinear(theta, y - mean, Penalty("lasso"), 6, rule, response_mean=mean, val_scores=vtheta, val_y=vy)
    assert 0 in model.active_set
    assert model.val_errors.shape == (20,)
    np.testing.assert_allclose(predict_nonlinear(model, theta), model.fitted_values, atol=1e-10)
    thr = threshold_model(model)
    assert thr.active_set == (0,)


def test_threshold_model_rule_and_idempotence():
    rng = np.random.default_rng(7)
    theta, eta, y = _single_index_data(rng, noise=0.5)
    mean = y.mean()
    model = fit_nonlinear(theta, y - mean, Penalty("lasso"), 5, None, response_mean=mean, lam=0.01)
    norms = np.linalg.norm(model.fits, axis=1) / np.sqrt(y.size)
    cut = float(np.min(norms[norms > 0])) + 1e-12
    once = threshold_model(model, cut)
    assert set(once.active_set) == {j for j in model.active_set if norms[j] > cut}
    for j in once.active_set:
        assert np.array_equal(once.fits[j], model.fits[j])
    twice = threshold_model(once, cut)
    assert np.array_equal(twice.fits, once.fits)
    assert all(np.array_equal(a, b) for a, b in zip(twice.xis, once.xis))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(4, 9))
def test_link_design_is_bounded_and_nonnegative(seed, d):
    rng = np.random.default_rng(seed)
    H, lk = build_link_design(rng.standard_normal((25, 3)), sign_normalize(rng.standard_normal(3)), d)
    assert np.all(H >= -1e-14) and np.all(H <= 1 + 1e-14)

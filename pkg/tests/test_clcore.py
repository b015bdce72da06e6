import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.stats import multivariate_normal

from clic.clcore import ConvergenceError, MarginScheme, ModelSpec, engine, fit
from clic.clcore import lmm_closed as closed
from clic.clcore.fit import FitOptions
from clic.models import LmmSpec, TrueLaw, make_covariates, simulate

from .conftest import FAMILIES, SCHEMES, random_instance


def _fd_grad(f, th, h=1e-5):
    eye = np.eye(th.size)
    return np.array([(f(th + h * eye[j]) - f(th - h * eye[j])) / (2 * h) for j in range(th.size)])


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("scheme", SCHEMES)
def test_derivatives_match_finite_differences(backend, family, scheme):
    rng = np.random.default_rng(11)
    model, sch, y, x, th = random_instance(rng, family, scheme)
    ev = engine.evaluate(model, sch, y, x, th)
    fg = _fd_grad(lambda t: engine.log_cl(model, sch, y, x, t), th)
    fh = _fd_grad(lambda t: engine.score(model, sch, y, x, t), th)
    assert np.allclose(fg, ev.grad, rtol=1e-6, atol=1e-6 * np.max(np.abs(ev.grad)))
    assert np.allclose(fh, ev.hess, rtol=1e-5, atol=1e-5 * np.max(np.abs(ev.hess)))
    assert np.allclose(fh, fh.T, atol=1e-5 * np.max(np.abs(ev.hess)))


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("scheme", SCHEMES)
def test_value_matches_direct_density(family, scheme):
    rng = np.random.default_rng(5)
    model, sch, y, x, th = random_instance(rng, family, scheme)
    beta, psi = model.split(th)
    sig = model.cov.sigma(psi)
    mu = x[:, :, list(model.beta_cols)] @ beta
    ref = sum(
        multivariate_normal(mu[i, list(s)], sig[np.ix_(s, s)]).logpdf(y[i, list(s)])
        for i in range(y.shape[0])
        for s in sch.margins
    )
    assert engine.log_cl(model, sch, y, x, th) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_per_subject_scores_sum_to_gradient(family):
    rng = np.random.default_rng(2)
    model, sch, y, x, th = random_instance(rng, family, "TCL")
    s = engine.per_subject_scores(model, sch, y, x, th)
    assert s.shape == (y.shape[0], model.p)
    assert np.allclose(s.sum(axis=0), engine.score(model, sch, y, x, th))


def test_pairwise_equals_full_for_pairs():
    rng = np.random.default_rng(4)
    model, _, y, x, th = random_instance(rng, "unstructured", "FULL", d=2)
    a = engine.evaluate(model, MarginScheme.full(2), y, x, th)
    b = engine.evaluate(model, MarginScheme.bcl(2), y, x, th)
    assert a.value == pytest.approx(b.value)
    assert np.allclose(a.hess, b.hess)


def _sample(n=150, d=4, seed=0):
    des = make_covariates("iid-normal", n, d, 1, seed=seed)
    law = TrueLaw(LmmSpec.exchangeable([0.5, 1.0], 1.0, 0.4, d))
    return simulate(law, des, seed + 1), des.x


def test_fit_reaches_stationary_point():
    y, x = _sample()
    model = ModelSpec.exchangeable(4, (0, 1))
    est = fit(model, MarginScheme.bcl(4), y, x)
    assert est.converged
    assert np.max(np.abs(engine.score(model, est.scheme, y, x, est.theta_hat))) < 1e-6 * abs(est.logCL)
    assert np.all(np.linalg.eigvalsh(est.H_hat) > 0)
    nat = est.natural()
    assert 0.2 < nat["rho"] < 0.6


def test_full_penalty_close_to_p_under_correct_model():
    y, x = _sample(n=400)
    est = fit(ModelSpec.exchangeable(4, (0, 1)), MarginScheme.full(4), y, x)
    assert est.penalty_of("model") == pytest.approx(est.p, rel=1e-8)
    assert est.penalty_of("classical") == est.p
    assert abs(est.penalty - est.p) < 1.0


def test_weight_scaling_keeps_estimate_and_scales_penalty():
    y, x = _sample()
    model = ModelSpec.unstructured(4, (0, 1))
    base = fit(model, MarginScheme.bcl(4), y, x)
    scaled = fit(model, MarginScheme.bcl(4).scaled(1 / 6), y, x)
    assert np.allclose(base.theta_hat, scaled.theta_hat, atol=1e-7)
    assert scaled.logCL == pytest.approx(base.logCL / 6)
    assert scaled.penalty == pytest.approx(base.penalty / 6, rel=1e-6)
    assert scaled.penalty_of("model") == pytest.approx(base.penalty_of("model") / 6, rel=1e-6)


def test_sandwich_se_shrinks_with_n():
    y, x = _sample(n=400)
    model = ModelSpec.exchangeable(4, (0, 1))
    big = fit(model, MarginScheme.tcl(4), y, x)
    small = fit(model, MarginScheme.tcl(4), y[:100], x[:100])
    assert np.all(big.sandwich_se < small.sandwich_se)


def test_convergence_failure_is_reported():
    y, x = _sample()
    opts = FitOptions(max_iter=1, quasi_newton_fallback=False)
    with pytest.raises(ConvergenceError) as info:
        fit(ModelSpec.unstructured(4, (0, 1)), MarginScheme.bcl(4), y, x, opts=opts)
    assert info.value.theta is not None and info.value.grad_norm > 0


@pytest.mark.parametrize(
    "call",
    [
        lambda y, x: fit(ModelSpec.exchangeable(4), MarginScheme.bcl(3), y[:, :3], x[:, :3]),
        lambda y, x: fit(ModelSpec.exchangeable(4), MarginScheme.bcl(4), np.where(y > 2, np.nan, y), x),
        lambda y, x: fit(ModelSpec.unstructured(4), MarginScheme.bcl(4), y[:5], x[:5]),
        lambda y, x: fit(ModelSpec.exchangeable(4, (0, 7)), MarginScheme.bcl(4), y, x),
    ],
)
def test_fit_input_validation(call):
    y, x = _sample(n=60)
    with pytest.raises(ValueError):
        call(y, x)


def test_scheme_validation_and_normalizer():
    with pytest.raises(ValueError):
        MarginScheme(((0, 0),), 1.0, 3)
    with pytest.raises(ValueError):
        MarginScheme(((0, 3),), 1.0, 3)
    with pytest.raises(ValueError):
        MarginScheme(((0, 1),), -1.0, 3)
    with pytest.raises(ValueError):
        MarginScheme.named("QCL", 4)
    assert MarginScheme.bcl(13).normalizer() == 78
    assert MarginScheme.tcl(13).normalizer() == 286
    assert MarginScheme.bcl(4).same_as(MarginScheme.named("bcl", 4))


def test_embed_reproduces_density():
    y, x = _sample(n=30)
    small = ModelSpec.exchangeable(4, (0,))
    big = ModelSpec.unstructured(4, (0, 1))
    th = np.array([0.2, 0.7, 0.9])
    tb = small.embed(th, big)
    for sch in (MarginScheme.full(4), MarginScheme.bcl(4)):
        assert engine.log_cl(small, sch, y, x, th) == pytest.approx(engine.log_cl(big, sch, y, x, tb))


# closed-form mixed-model expressions as an independent route


def _lmm_case(n=6, d=5, seed=3):
    rng = np.random.default_rng(seed)
    x = np.concatenate([np.ones((n, d, 1)), rng.standard_normal((n, d, 2))], axis=2)
    z = np.column_stack([np.ones(d), np.linspace(0, 1, d)])
    th = np.concatenate([rng.standard_normal(3), [0.8, 0.3, 0.5], [0.6]])
    return ModelSpec.lmm(z, (0, 1, 2)), z, x, th, rng.standard_normal((n, d))


@pytest.mark.parametrize("name", ["FULL", "BCL"])
def test_engine_score_matches_closed_form(name):
    model, z, x, th, y = _lmm_case()
    sch = MarginScheme.named(name, 5)
    ref = closed.full_score(y, x, z, th) if name == "FULL" else closed.pairwise_score(y, x, z, th)
    assert np.allclose(engine.score(model, sch, y, x, th), ref, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("name", ["FULL", "BCL"])
def test_expected_hessian_matches_closed_form(name):
    model, z, x, th, _ = _lmm_case()
    sch = MarginScheme.named(name, 5)
    sig = model.cov.sigma(th[3:])
    mean = x @ th[:3]
    h = engine.evaluate(model, sch, mean, x, th, 2, extra=x.shape[0] * sig).hess
    ref = closed.full_fisher(x, z, th) if name == "FULL" else closed.pairwise_H(x, z, th)
    assert np.allclose(h, ref, rtol=1e-10, atol=1e-10)
    assert np.allclose(h, -engine.fisher_information(model, sch, x, th), atol=1e-10)


def test_score_variance_matches_closed_form():
    model, z, x, th, _ = _lmm_case()
    n = x.shape[0]
    sig = model.cov.sigma(th[3:])
    mean = x @ th[:3]
    pair = MarginScheme.bcl(5)
    rep = engine.score_representation(model, pair, mean, x, th)
    assert np.allclose(engine.cross_moment(rep, rep, sig) * n, closed.pairwise_J(x, z, th), rtol=1e-10, atol=1e-10)
    # under the full likelihood the information identity J = H holds
    full = MarginScheme.full(5)
    rep = engine.score_representation(model, full, mean, x, th)
    assert np.allclose(engine.cross_moment(rep, rep, sig) * n, closed.full_fisher(x, z, th) * -1, atol=1e-10)


def test_cross_moment_matches_monte_carlo():
    model, _, x, th, _ = _lmm_case(n=4)
    sig = model.cov.sigma(th[3:])
    mean = x @ th[:3] + 0.3
    sch = MarginScheme.tcl(5)
    rep = engine.score_representation(model, sch, mean, x, th)
    ref = engine.cross_moment(rep, rep, sig)
    rng = np.random.default_rng(0)
    chol = np.linalg.cholesky(sig)
    acc = np.zeros_like(ref)
    reps = 20_000
    for _ in range(reps):
        y = mean + rng.standard_normal(mean.shape) @ chol.T
        s = engine.per_subject_scores(model, sch, y, x, th)
        acc += s.T @ s / x.shape[0]
    assert np.allclose(acc / reps, ref, rtol=0.05, atol=0.05 * np.max(np.abs(ref)))


def test_fit_agrees_with_generic_optimizer_on_direct_density():
    y, x = _sample(n=80)
    model, sch = ModelSpec.exchangeable(4, (0, 1)), MarginScheme.bcl(4)
    est = fit(model, sch, y, x)

    def neg(th):
        beta, (c, kappa) = th[:2], th[2:]
        sig = c**2 + kappa**2 * np.eye(4)
        mu = x[:, :, :2] @ beta
        out = 0.0
        for s in sch.margins:
            s = list(s)
            out += multivariate_normal(np.zeros(2), sig[np.ix_(s, s)]).logpdf(y[:, s] - mu[:, s]).sum()
        return -out

    opts = {"xatol": 1e-9, "fatol": 1e-11, "maxiter": 20_000}
    ref = minimize(neg, np.array([0.0, 0.0, 1.0, 1.0]), method="Nelder-Mead", options=opts)
    assert np.allclose(np.abs(ref.x), est.theta_hat, atol=1e-4)
    assert -ref.fun == pytest.approx(est.logCL, abs=1e-7)

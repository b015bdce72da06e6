import math

import numpy as np
import pytest

from clic import select
from clic.clcore import MarginScheme, ModelSpec, engine, fit
from clic.models import MvnRegSpec, TrueLaw, make_covariates, simulate


def _nested_case(seed, scheme="BCL", n=60, null=False):
    rng = np.random.default_rng(seed)
    des = make_covariates("iid-normal", n, 4, 2, seed=seed)
    if null:
        law = TrueLaw(MvnRegSpec.exchangeable([0.3, 1.0], 1.0, rng.uniform(0.1, 0.7), 4))
    else:
        a = rng.standard_normal((4, 4))
        law = TrueLaw(MvnRegSpec([0.3, 1.0, 0.5], a @ a.T / 4 + np.eye(4)))
    small = ModelSpec.exchangeable(4, (0, 1))
    big = ModelSpec.unstructured(4, (0, 1, 2))
    return law, des, small, big, MarginScheme.named(scheme, 4)


def test_full_scheme_eigenvalues_under_correct_model():
    des = make_covariates("iid-normal", 60, 4, 2, seed=1)
    law = TrueLaw(MvnRegSpec.exchangeable([0.3, 1.0], 1.0, 0.4, 4))
    small = ModelSpec.exchangeable(4, (0, 1))
    big = ModelSpec.unstructured(4, (0, 1, 2))
    blocks = select.expected_blocks(law, des, small, big, MarginScheme.full(4))
    eig = select.bmatrix_eigenvalues(blocks.bmatrix())
    assert eig.m == big.p - small.p
    assert np.allclose(eig.values, 1.0, atol=1e-6)
    assert np.allclose(np.sort(np.abs(eig.all_values))[: 2 * small.p], 0.0, atol=1e-6)


@pytest.mark.parametrize("scheme", ["BCL", "TCL"])
def test_trace_equals_penalty_difference(scheme):
    law, des, small, big, sch = _nested_case(2, scheme)
    blocks = select.expected_blocks(law, des, small, big, sch)
    assert np.trace(blocks.bmatrix()) == pytest.approx(blocks.penalty2 - blocks.penalty1, abs=1e-8)
    # under the null only m eigenvalues survive and all are positive
    law, des, small, big, sch = _nested_case(2, scheme, null=True)
    blocks = select.expected_blocks(law, des, small, big, sch)
    eig = blocks.eigenvalues()
    assert eig.m == big.p - small.p
    assert not eig.complex_flag
    assert np.all(eig.values > 0)
    assert eig.values.sum() == pytest.approx(blocks.penalty2 - blocks.penalty1, rel=1e-6)


def test_closed_form_blocks_match_monte_carlo():
    law, des, small, big, sch = _nested_case(3, "BCL", n=40)
    exact = select.expected_blocks(law, des, small, big, sch)
    mc = select.expected_blocks(law, des, small, big, sch, mode="monte-carlo", draws=40_000, seed=5)
    se = mc.info["J_se"]
    j_exact = np.block([[exact.J11, exact.J12], [exact.J12.T, exact.J22]])
    j_mc = np.block([[mc.J11, mc.J12], [mc.J21, mc.J22]])
    assert np.all(np.abs(j_mc - j_exact) <= 5 * se + 1e-12)
    assert np.allclose(mc.H1, exact.H1, rtol=0.05, atol=0.02)


def test_pseudo_true_zeroes_the_expected_score():
    law, des, small, _, sch = _nested_case(4, "TCL")
    theta = select.pseudo_true(law, des, small, sch)
    mean = law.means(des)
    g = engine.evaluate(small, sch, mean, des.x, theta, 1, extra=des.n * law.residual_cov(des.z)).grad
    assert np.max(np.abs(g)) < 1e-6


def test_expected_blocks_reject_unknown_mode():
    law, des, small, big, sch = _nested_case(5)
    with pytest.raises(ValueError):
        select.expected_blocks(law, des, small, big, sch, mode="bootstrap")
    with pytest.raises(ValueError):
        select.expected_blocks(law, des, small, big, sch, mode="monte-carlo", draws=10)


def test_eigenvalue_helper():
    b = np.diag([3.0, 1e-12, 2.0, 0.0])
    assert np.allclose(select.bmatrix_eigenvalues(b).values, [3.0, 2.0])
    assert np.allclose(select.bmatrix_eigenvalues(b, m=1).values, [3.0])
    assert select.bmatrix_eigenvalues(np.zeros((3, 3))).m == 0
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert select.bmatrix_eigenvalues(rot).complex_flag
    with pytest.raises(ValueError):
        select.bmatrix_eigenvalues(np.array([[np.nan]]))


def test_selection_limits_are_ordered():
    lam = [3.34, 2.87, 2.73, 2.52, 2.07, 2.03, 1.61, 1.50]
    probs = [select.theoretical_selection_probs(lam, n) for n in (50, 500, 5000)]
    assert all(p["CLBIC"] > p["CLAIC"] for p in probs)
    assert probs[0]["CLBIC"] < probs[1]["CLBIC"] < probs[2]["CLBIC"]
    assert probs[0]["CLAIC"] == probs[2]["CLAIC"]


@pytest.fixture(scope="module")
def fits():
    des = make_covariates("iid-normal", 200, 4, 1, seed=6)
    law = TrueLaw(MvnRegSpec.exchangeable([0.3, 1.3], 1.0, 0.5, 4))
    y = simulate(law, des, 7)
    out = {}
    for name in ("FULL", "BCL"):
        sch = MarginScheme.named(name, 4)
        out[name] = [
            fit(ModelSpec.exchangeable(4, (0, 1), "exch"), sch, y, des.x),
            fit(ModelSpec.unstructured(4, (0, 1), "unstr"), sch, y, des.x),
        ]
    return out


def test_criterion_labels_and_formula(fits):
    full = select.criteria(fits["FULL"], classical=True)
    assert set(full.values()) == {"AIC", "BIC"}
    assert np.allclose(full.penalty, [4, 12])
    assert np.allclose(full.claic, -2 * full.logCL + 2 * full.p)
    cl = select.criteria(fits["BCL"])
    assert set(cl.values()) == {"CLAIC", "CLBIC"}
    assert np.allclose(cl.clbic, -2 * cl.logCL + math.log(200) * cl.penalty)
    rows = cl.rows()
    assert rows[0]["model"] == "exch" and sum(r["selected_CLBIC"] for r in rows) == 1


def test_common_transformations_keep_decisions(fits):
    base = select.criteria(fits["BCL"], penalty="model").selected
    assert select.criteria(fits["BCL"], penalty="model", divisor=6.0).selected == base
    assert select.criteria(fits["BCL"], penalty="model", drop_constant=True).selected == base


def test_ties_are_reported():
    rep = select.CriterionReport(["a", "b"], np.array([2, 2]), np.array([-5.0, -5.0]), np.array([2.0, 2.0]), 10, "BCL")
    assert rep.ties()["CLAIC"] == [0, 1]
    assert rep.selected["CLAIC"] == 0


def test_criteria_input_checks(fits):
    with pytest.raises(ValueError):
        select.criteria([])
    with pytest.raises(ValueError):
        select.criteria([fits["FULL"][0], fits["BCL"][1]])
    with pytest.raises(ValueError):
        select.criteria(fits["BCL"], penalty="bootstrap")


def test_lr_statistic(fits):
    small, big = fits["BCL"]
    assert select.lr_statistic(small, big) >= 0
    with pytest.raises(ValueError):
        select.lr_statistic(big, small)
    with pytest.raises(ValueError):
        select.lr_statistic(small, fits["FULL"][1])


def test_empirical_blocks_trace(fits):
    small, big = fits["BCL"]
    blocks = select.empirical_blocks(small, big)
    assert np.trace(blocks.bmatrix()) == pytest.approx(big.penalty - small.penalty, rel=1e-8)
    assert blocks.eigenvalues().m == big.p - small.p

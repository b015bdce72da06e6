import numpy as np
import pytest

from clic import _accel
from clic.clcore import MarginScheme, ModelSpec

SCHEMES = ("FULL", "BCL", "TCL")
FAMILIES = ("lmm", "exchangeable", "unstructured")


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    if request.param == "numba" and not _accel.have_numba():
        pytest.skip("numba missing")
    prev = _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(prev)


def random_instance(rng, family, scheme_name, n=8, d=4):
    """Random model, data and interior parameter point."""
    x = np.concatenate([np.ones((n, d, 1)), rng.standard_normal((n, d, 2))], axis=2)
    beta_cols = (0, 1, 2) if rng.random() < 0.5 else (0, 1)
    if family == "lmm":
        z = np.column_stack([np.ones(d), np.linspace(-1, 1, d)])
        model = ModelSpec.lmm(z, beta_cols)
    elif family == "exchangeable":
        model = ModelSpec.exchangeable(d, beta_cols)
    else:
        model = ModelSpec.unstructured(d, beta_cols)
    a = rng.standard_normal((d, d))
    cov0 = a @ a.T / d + np.eye(d)
    psi = model.cov.start(cov0) + 0.05 * rng.standard_normal(model.cov.n_params)
    theta = np.concatenate([0.5 * rng.standard_normal(model.p_beta), psi])
    y = rng.standard_normal((n, d)) * 1.5
    return model, MarginScheme.named(scheme_name, d), y, x, theta


_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(k, ok, detail):
        _VERDICTS[k] = (bool(ok), detail)
        print(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        ok, detail = _VERDICTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

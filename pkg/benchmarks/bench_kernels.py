"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20]

Each case runs once untimed on both backends (JIT warm-up) and then reports
the best wall time over ``--repeat`` runs plus the max absolute difference
between the two results.
"""

import argparse
import time

import numpy as np

from clic import _accel, _kernels, qfdist
from clic.clcore import MarginScheme, ModelSpec, engine, fit
from clic.models import LmmSpec, TrueLaw, make_covariates, simulate, spruce_design, SPRUCE_DAYS


def _best(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def _both(fn, repeat):
    out = {}
    for name in ("numpy", "numba"):
        prev = _accel.set_backend(name)
        try:
            out[name] = (_best(fn, repeat), fn())
        finally:
            _accel.set_backend(prev)
    return out


def cases():
    des = make_covariates("iid-normal", 500, 4, 1, seed=1)
    y = simulate(TrueLaw(LmmSpec.exchangeable([0.3, 1.3], 1.0, 0.5, 4)), des, 2)
    unstr = ModelSpec.unstructured(4, (0, 1))
    th = fit(unstr, MarginScheme.bcl(4), y, des.x).theta_hat

    spruce = spruce_design(SPRUCE_DAYS, np.r_[np.ones(54), np.zeros(25)])
    lmm = ModelSpec.lmm(spruce.z, range(6))
    ys = simulate(TrueLaw(LmmSpec([4.3, 1.4, 0.4, -0.1, -0.2, 0.0], np.diag([0.38, 0.07, 0.01]), 0.02, 13)), spruce, 3)
    ths = fit(lmm, MarginScheme.tcl(13), ys, spruce.x).theta_hat

    lam = np.array([3.34, 2.87, 2.73, 2.52, 2.07, 2.03, 1.61, 1.50])
    u = np.linspace(1e-3, 40.0, 20_000)
    return {
        "evaluate unstructured BCL n=500": lambda: engine.evaluate(unstr, MarginScheme.bcl(4), y, des.x, th).hess,
        "evaluate spruce-size lmm TCL": lambda: engine.evaluate(lmm, MarginScheme.tcl(13), ys, spruce.x, ths).hess,
        "imhof integrand, 2e4 nodes": lambda: _kernels.imhof_integrand(u, lam, np.zeros_like(lam), 2 * lam.sum()),
        "tail probability, 8 weights": lambda: np.array(qfdist.imhof(lam, 2 * lam.sum(), tol=1e-9)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not _accel.have_numba():
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'case':36s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speed-up':>9s} {'max |diff|':>11s}")
    for name, fn in cases().items():
        r = _both(fn, args.repeat)
        (t0, a), (t1, b) = r["numpy"], r["numba"]
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{name:36s} {1e3 * t0:11.3f} {1e3 * t1:11.3f} {t0 / t1:9.2f} {diff:11.2e}")


if __name__ == "__main__":
    main()

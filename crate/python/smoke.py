"""Smoke test for the Python bindings.

Build and install the extension first, e.g.

    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/projected_normal_py-*.whl

then run `python python/smoke.py`. Exits non-zero on the first failure.
"""

import math
import sys

import projected_normal_py as pn


def check(cond, what):
    if not cond:
        print(f"FAIL: {what}")
        sys.exit(1)
    print(f"ok: {what}")


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    mu = [1.0, 0.5, 0.0]
    params = pn.GaussianParams.isotropic(mu, 0.25)
    check(params.dim == 3 and params.sigma[1][1] == 0.25, "isotropic params")

    exact = pn.exact_moments_isotropic(mu, 0.25)
    trace = sum(exact.second_moment[i][i] for i in range(3))
    check(abs(trace - 1.0) < 1e-10, "exact second moment has unit trace")

    mc = pn.mc_moments(params, samples=200_000, seed=1)
    check(close(mc.gamma, exact.gamma, 5e-3), "Monte Carlo mean matches exact mean")

    approx = pn.approx_moments(params)
    check(pn.cosine_sim(approx.gamma, exact.gamma) > 0.999, "Taylor mean points the right way")

    draws = pn.sample(params, count=100, seed=2)
    check(all(abs(math.hypot(*y) - 1.0) < 1e-12 for y in draws), "samples lie on the sphere")
    check(draws == pn.sample(params, count=100, seed=2), "sampling is seeded")

    check(math.isfinite(pn.logpdf(draws[0], params)), "pn log-density at a sample")
    variant = pn.ProjectionVariant(b=[[2.0, 0.3, 0.0], [0.3, 1.0, 0.0], [0.0, 0.0, 1.5]], c=0.5)
    check(variant.kind == "pnbc", "variant kind")
    ys = pn.sample(params, variant, count=10, seed=3)
    check(all(math.isfinite(pn.logpdf(y, params, variant)) for y in ys), "pnbc log-density at samples")

    try:
        pn.logpdf([0.5, 0.5, 0.0], params)
        check(False, "off-sphere point rejected")
    except ValueError:
        check(True, "off-sphere point rejected")

    fit = pn.fit_moments(approx.gamma, approx.psi, config='{"cycles": 2}')
    check(fit.iterations == 160, "fit ran the configured schedule")
    check(fit.loss_trace[-1] == fit.final_loss < fit.loss_trace[0], "fit improved on its start")
    check(abs(math.hypot(*fit.params_hat.mu) - 1.0) < 1e-12, "fitted mean is a unit vector")

    rank1 = pn.fit_moments(
        approx.gamma, approx.psi, "pnbc", "isotropic_sigma", "rank1", 0.9, '{"cycles": 1}'
    )
    b, v = rank1.rank1_hat
    check(b > 0 and abs(math.hypot(*v) - 1.0) < 1e-12, "rank-1 fit returns b > 0 and unit v")

    check(pn.rel_error_pct([0.0, 1.0], [1.0, 0.0]) == 200.0, "relative error metric")
    print("all checks passed")


if __name__ == "__main__":
    main()

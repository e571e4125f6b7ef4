"""Mittag-Leffler evaluator: classical identities, frozen high-precision
references, and the inequalities the continuation analysis relies on."""

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.special import erfcx, gamma

from fraccauchy.specfun import ml, ml_kernel, ml_reciprocal_bound, ml_values

# Reference values computed with an arbitrary-precision partial-sum oracle
# (adaptive working precision covering the worst intermediate term, absolute
# tail cutoff well below the printed digits).
GOLDEN = {
    (0.5, 1.0, -1.0): 0.427583576155807004,
    (0.5, 1.0, -0.5): 0.615690344192925875,
    (1.5, 1.0, 2.0): 3.3487008963183954,
    (0.25, 1.0, -3.0): 0.219004427560406799,
    (2.0, 1.7, -3.0): 0.496002289209775782,
    (0.7, 2.0, 1.5): 3.76342774192119329,
    (2.0, 2.0, 4.0): 1.81343020392350938,
    (1.0, 2.0, -4.0): 0.245421090277816455,
    (0.9, 1.0, -2.0): 0.163528300016930043,
    (0.7, 1.0, -60.0): 0.00564627516688042144,
    (0.25, 1.0, -5.5): 0.131347771463973128,
    (0.6, 0.6, -20.0): 0.000699765317978539143,
    (0.85, 1.0, -60.0): 0.00274648575588119241,
    (1.3, 1.0, -25.0): -0.00995234772975982683,
    (1.9, 0.5, -60.0): -1.51063420074166948,
    (0.8, 1.0, 30.0): 3.88067978696232406e30,
    (0.9, 1.0, -8.0): 0.0170951445807968058,
    (0.75, 1.7, -5.5): 0.167106736065797705,
    (0.999, 1.0, -12.0): 0.000108949787198164917,
    (0.9, 0.9, -(0.5 ** 0.9)): 0.511127015629086223,
}


@pytest.mark.parametrize("key", sorted(GOLDEN))
def test_against_frozen_reference(key):
    alpha, beta, z = key
    ref = GOLDEN[key]
    r = ml(alpha, beta, z)
    tol = max(r.est_abs_err, 1e-12 * (1.0 + abs(r.value)))
    assert abs(r.value - ref) <= tol
    # absolute sanity independent of the self-reported estimate
    assert abs(r.value - ref) <= 5e-8 * (1.0 + abs(ref))


def test_exp_identity():
    z = np.linspace(-30.0, 5.0, 141)
    vals = ml_values(1.0, 1.0, z)
    assert np.all(np.abs(vals - np.exp(z)) <= 1e-10 * (1.0 + np.exp(z)))


def test_cos_identity():
    x = np.linspace(0.0, 20.0, 401)
    vals = ml_values(2.0, 1.0, -x * x)
    assert np.max(np.abs(vals - np.cos(x))) <= 1e-9


def test_sinc_identity():
    x = np.linspace(0.05, 20.0, 400)
    vals = ml_values(2.0, 2.0, -x * x)
    assert np.max(np.abs(vals - np.sin(x) / x)) <= 1e-9


def test_forced_zero_at_half_pi():
    # E_{2,1}(-x^2) = cos x vanishes at x = pi/2
    r = ml(2.0, 1.0, -((math.pi / 2.0) ** 2))
    assert abs(r.value) <= 1e-12


def test_erfcx_identity():
    # E_{1/2,1}(-x) = exp(x^2) erfc(x), available in scipy in scaled form
    for x in (0.3, 1.0, 2.0, 5.0, 5.5, 8.0, 12.0, 30.0, 80.0, 200.0):
        r = ml(0.5, 1.0, -x)
        assert abs(r.value - erfcx(x)) <= 1e-10 * (1.0 + abs(r.value))


@pytest.mark.parametrize(
    "alpha,beta,z,branch",
    [
        (0.5, 1.0, -1.0, "series"),
        (1.9, 0.5, -60.0, "series"),
        (0.7, 1.0, -60.0, "asymptotic"),
        (0.8, 1.0, 30.0, "asymptotic"),
        (0.9, 1.0, -8.0, "integral"),
        (0.999, 1.0, -12.0, "integral"),
    ],
)
def test_branch_selection(alpha, beta, z, branch):
    assert ml(alpha, beta, z).branch == branch


def test_error_estimate_nonnegative():
    for key in GOLDEN:
        assert ml(*key).est_abs_err >= 0.0


@pytest.mark.parametrize("alpha", [0.0, -0.3, 2.1, float("nan")])
def test_alpha_domain_error(alpha):
    with pytest.raises(ValueError):
        ml(alpha, 1.0, 0.5)


@pytest.mark.parametrize("beta", [0.0, -2.0, float("inf")])
def test_beta_domain_error(beta):
    with pytest.raises(ValueError):
        ml(1.0, beta, 0.5)


def test_positive_overflow_signalled():
    # E_{1/2,1}(30) ~ exp(900) exceeds the double range
    with pytest.raises(OverflowError):
        ml(0.5, 1.0, 30.0)


def test_kernel_matches_exponential():
    for t in np.linspace(0.05, 3.0, 20):
        assert ml_kernel(1.0, 1.0, 2.0, t) == pytest.approx(math.exp(-2.0 * t), abs=1e-12)


def test_kernel_values():
    # t^{beta-1} E_{alpha,beta}(-lam t^alpha) at a few frozen points
    assert ml_kernel(2.0, 2.0, 4.0, 1.0) == pytest.approx(math.sin(2.0) / 2.0, abs=1e-12)
    ref = 0.5 ** (-0.1) * 0.511127015629086223
    assert ml_kernel(0.9, 0.9, 1.0, 0.5) == pytest.approx(ref, abs=1e-11)


def test_kernel_time_zero_limits():
    assert ml_kernel(0.9, 1.0, 3.0, 0.0) == 1.0
    assert ml_kernel(0.9, 1.7, 3.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        ml_kernel(0.9, 0.9, 3.0, 0.0)
    with pytest.raises(ValueError):
        ml_kernel(0.9, 1.0, 3.0, -0.5)
    with pytest.raises(ValueError):
        ml_kernel(0.9, 1.0, -1.0, 0.5)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7, 0.9, 1.0])
def test_complete_monotonicity_proxy(alpha):
    # alpha = 1 decays exponentially and underflows past t ~ 745; the
    # fractional orders decay algebraically and stay representable
    t = np.logspace(-4, 4 if alpha < 1.0 else 2, 81)
    vals = ml_values(alpha, 1.0, -t)
    assert np.all(vals > 0.0)
    assert np.all(vals <= 1.0 + 1e-12)
    assert np.all(np.diff(vals) <= 1e-12)


def test_reciprocal_stability_bound():
    # 1/E_{alpha,1}(-lam y^alpha) <= 1 + Gamma(1-alpha) lam y^alpha over the
    # full 64-point grid
    violations = 0
    for alpha in (0.5, 0.7, 0.9, 0.99):
        for lam in (1.0, 10.0, 100.0, 1000.0):
            for y in (0.01, 0.1, 0.5, 1.0):
                e = ml(alpha, 1.0, -lam * y ** alpha).value
                bound = ml_reciprocal_bound(alpha, lam, y)
                if 1.0 / e > bound * (1.0 + 1e-10):
                    violations += 1
    assert violations == 0


def test_reciprocal_bound_values():
    assert ml_reciprocal_bound(0.5, 0.0, 1.0) == 1.0
    assert ml_reciprocal_bound(0.5, 1.0, 1.0) == pytest.approx(1.0 + math.sqrt(math.pi), abs=1e-12)
    assert ml_reciprocal_bound(0.9, 10.0, 0.5) == pytest.approx(
        1.0 + gamma(0.1) * 10.0 * 0.5 ** 0.9, rel=1e-13
    )
    with pytest.raises(ValueError):
        ml_reciprocal_bound(1.0, 1.0, 1.0)


def test_convergence_rate_in_alpha():
    # || E_{alpha,1}(-lam t^alpha) - exp(-lam t) ||_{L2(0,1)} should shrink
    # at least linearly in (1 - alpha) as alpha -> 1 (lam = 25)
    lam = 25.0
    t = np.linspace(0.0, 1.0, 10001)
    alphas = np.array([0.9, 0.95, 0.975, 0.99])
    errs = []
    for alpha in alphas:
        d = ml_values(alpha, 1.0, -lam * t ** alpha) - np.exp(-lam * t)
        errs.append(math.sqrt(trapezoid(d * d, t)))
    slope = np.polyfit(np.log(1.0 - alphas), np.log(errs), 1)[0]
    assert slope >= 0.9


@pytest.mark.parametrize("lam", [4.0, 25.0, 100.0])
def test_linear_defect_bound_stable(lam):
    # sup_{[1/4,1]} |E_{alpha,1}(-lam t^alpha) - exp(-lam t)| <= C (1-alpha)
    # with C stable (within 2x) across alpha
    t = np.linspace(0.25, 1.0, 1501)
    cs = []
    for alpha in (0.9, 0.95, 0.975, 0.99):
        d = ml_values(alpha, 1.0, -lam * t ** alpha) - np.exp(-lam * t)
        cs.append(np.max(np.abs(d)) / (1.0 - alpha))
    assert max(cs) / min(cs) < 2.0

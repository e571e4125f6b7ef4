import math
import warnings

import numpy as np
import pytest

from fraccauchy.continuation import CauchyData, ContinuationScheme, with_noise
from fraccauchy.elliptic import (
    Curve,
    InterfaceBC,
    bottom_flux,
    interface_traces,
    solve_cauchy_holdall,
    solve_forward,
)
from fraccauchy.freeboundary import (
    NewtonConfig,
    curve_conormal,
    linearized_flux,
    newton_dirichlet,
    newton_impedance,
    newton_neumann,
    project_cosine,
)
from fraccauchy.spectral import LateralBC, build_basis

L = 1.0
GAMMA = 0.1
LATERAL = LateralBC("neumann")
N = 129
X = np.linspace(0.0, L, N)


def truth_curve(x, olell):
    return olell * (0.8 + 0.1 * np.cos(2 * np.pi * x))


def excitation(x):
    return 1.0 + 0.3 * np.cos(np.pi * x)


def interface_for(kind):
    if kind == "I":
        return InterfaceBC("I", gamma=GAMMA, combined=False)
    return InterfaceBC(kind)


def wnorm(v):
    w = np.full(v.size, 1.0 / (v.size - 1))
    w[0] = w[-1] = 0.5 / (v.size - 1)
    return math.sqrt(float(np.sum(w * v * v)))


def synthetic_flux(kind, olell, fine=257):
    # synthesize on a twice-finer mesh and restrict, so the inverse runs do
    # not share their forward solver's discretization error with the data
    xf = np.linspace(0.0, L, fine)
    field = solve_forward(
        Curve(truth_curve(xf, olell), L, olell), LATERAL, interface_for(kind), excitation(xf)
    )
    return bottom_flux(field)[::2]


_ZBAR = {}


def holdall_field(kind, olell, delta, seed=3):
    key = (kind, olell, delta, seed)
    if key not in _ZBAR:
        basis = build_basis(L, LATERAL, 24, N)
        data = CauchyData(excitation(basis.grid), synthetic_flux(kind, olell), 0.0, basis)
        if delta > 0.0:
            data = with_noise(data, delta, np.random.default_rng(seed))
        scheme = ContinuationScheme("exact" if delta == 0.0 else "fac_lap_split")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _ZBAR[key] = solve_cauchy_holdall(
                data, LATERAL, scheme, np.linspace(0.0, olell, 81)
            )
    return _ZBAR[key]


def run_newton(kind, olell, delta, start, cfg=None, endpoints=True):
    lt = truth_curve(X, olell)
    zbar = holdall_field(kind, olell, delta)
    curve0 = Curve(start if np.ndim(start) else np.full(N, start), L, olell)
    cfg = cfg if cfg is not None else NewtonConfig()
    if kind == "D":
        return newton_dirichlet(curve0, zbar, LATERAL, excitation(X), cfg, truth=lt)
    if kind == "N":
        ev = (lt[0], lt[-1]) if endpoints else None
        return newton_neumann(
            curve0, zbar, LATERAL, excitation(X), cfg, truth=lt, endpoint_values=ev
        )
    return newton_impedance(curve0, GAMMA, zbar, LATERAL, excitation(X), cfg, truth=lt)


_RUNS = {}


def cached_run(kind, delta, start, olell=0.1):
    key = (kind, delta, start, olell)
    if key not in _RUNS:
        _RUNS[key] = run_newton(kind, olell, delta, start)
    return _RUNS[key]


class TestFixedPointAtTruth:
    """Noise-free data, start at the truth curve: one step must stay put up
    to discretization error."""

    @pytest.mark.parametrize("kind", ["D", "N", "I"])
    def test_update_at_discretization_level(self, kind):
        lt = truth_curve(X, 0.1)
        tr = run_newton(kind, 0.1, 0.0, lt, cfg=NewtonConfig(max_iter=1))
        moved = wnorm(tr.iterates[-1].ell - lt)
        budget = (1.0 / (N - 1)) ** 2 * wnorm(lt)
        assert moved <= 5.0 * budget


class TestBenchmarkRecovery:
    """Reconstruction magnitudes on the standard layout (within 3x of the
    tabulated scales; mesh and regularization differ from the source runs)."""

    def test_dirichlet_one_percent(self):
        tr = cached_run("D", 0.01, 0.02)
        assert min(tr.rel_errors[: 8 + 1]) <= 0.012
        assert tr.rel_errors[-1] <= 0.012

    def test_dirichlet_ten_percent(self):
        tr = cached_run("D", 0.10, 0.02)
        assert tr.rel_errors[-1] <= 0.12

    def test_dirichlet_deep_holdall(self):
        tr = cached_run("D", 0.01, 0.1, olell=0.5)
        assert tr.rel_errors[-1] <= 3.0 * 0.0158

    def test_neumann_one_percent_fast(self):
        tr = cached_run("N", 0.01, 0.05)
        assert tr.rel_errors[3] <= 0.01
        assert tr.rel_errors[-1] <= 3.0 * 0.0018

    def test_impedance_one_percent_fast(self):
        tr = cached_run("I", 0.01, 0.05)
        assert tr.rel_errors[2] <= 3.0 * 0.0077
        assert tr.rel_errors[3] <= 0.025
        assert tr.rel_errors[-1] <= 0.025

    @pytest.mark.parametrize("kind", ["D", "N", "I"])
    def test_noise_monotonicity(self, kind):
        finals = [cached_run(kind, d, 0.02).rel_errors[-1] for d in (0.01, 0.02, 0.05, 0.10)]
        for lo, hi in zip(finals, finals[1:]):
            assert hi >= lo
        assert finals[0] <= (0.012 if kind == "D" else 0.025)


class TestLinearization:
    """Directional derivative of the data-side flux map against central
    differences.  Accuracy is checked at the small step; the order is
    measured on larger steps where the finite-difference truncation still
    dominates the linearized trace's own O(h^2) floor (a large perturbation
    inside a roomy hold-all keeps the truncation term visible)."""

    HOLD = 0.3

    def _relerr(self, kind, lin, base, dl, t):
        itf = interface_for(kind)
        up = bottom_flux(solve_forward(Curve(base + t * dl, L, self.HOLD), LATERAL, itf, excitation(X)))
        dn = bottom_flux(solve_forward(Curve(base - t * dl, L, self.HOLD), LATERAL, itf, excitation(X)))
        fd = (up - dn) / (2.0 * t)
        return wnorm(fd - lin) / wnorm(fd)

    @pytest.mark.parametrize("kind", ["D", "N", "I"])
    def test_fd_accuracy_and_order(self, kind):
        base = truth_curve(X, 0.1)
        curve = Curve(base, L, self.HOLD)
        dl = 0.1 * (np.cos(np.pi * X) + 0.5 * np.cos(2 * np.pi * X) + 0.3)
        lin = linearized_flux(curve, LATERAL, interface_for(kind), excitation(X), dl)
        e_small = self._relerr(kind, lin, base, dl, 1e-3)
        assert e_small <= 1e-2
        e_big = self._relerr(kind, lin, base, dl, 0.3)
        e_mid = self._relerr(kind, lin, base, dl, 0.1)
        assert e_mid < e_big
        assert math.log(e_big / e_mid) / math.log(3.0) >= 0.9


class TestNonuniquenessDetector:
    """Constant Cauchy data under lateral Neumann walls: the continued field
    is y-independent, a Neumann interface condition holds on every horizontal
    line, and the curve is not identifiable.  The solver must report this and
    see a vanishing residual at any constant height."""

    @pytest.mark.parametrize("height", [0.4, 0.8])
    def test_any_constant_curve_fits(self, height):
        basis = build_basis(L, LATERAL, 1, N)
        data = CauchyData(np.ones(N), np.zeros(N), 0.0, basis)
        zbar = solve_cauchy_holdall(
            data, LATERAL, ContinuationScheme("exact"), np.linspace(0.0, 1.0, 81)
        )
        start = Curve(np.full(N, height), L, 1.0)
        with pytest.warns(UserWarning, match="nonunique"):
            tr = newton_neumann(start, zbar, LATERAL, np.ones(N), NewtonConfig(max_iter=1))
        assert tr.residual_norms[0] <= 1e-12
        assert tr.step_residuals[0] <= 1e-12


def test_conormal_trace_matches_closed_form():
    basis = build_basis(L, LATERAL, 2, N)
    data = CauchyData(np.cos(np.pi * X), np.zeros(N), 0.0, basis)
    zbar = solve_cauchy_holdall(
        data, LATERAL, ContinuationScheme("exact"), np.linspace(0.0, 0.4, 81)
    )
    ell = 0.2 + 0.05 * np.sin(2 * np.pi * X)
    dl = 0.1 * np.pi * np.cos(2 * np.pi * X)
    zl, dnu = curve_conormal(zbar, ell)
    np.testing.assert_allclose(zl, np.cos(np.pi * X) * np.cosh(np.pi * ell), atol=1e-6)
    exact = np.pi * np.cos(np.pi * X) * np.sinh(np.pi * ell) + dl * np.pi * np.sin(
        np.pi * X
    ) * np.cosh(np.pi * ell)
    np.testing.assert_allclose(dnu, exact, atol=2e-3)


def test_project_cosine_reproduces_low_modes_and_kills_high():
    x = np.linspace(0.0, 1.0, 201)
    low = 0.3 - 0.2 * np.cos(np.pi * x) + 0.05 * np.cos(6 * np.pi * x)
    np.testing.assert_allclose(project_cosine(low, 1.0, 8), low, atol=1e-4)
    assert np.max(np.abs(project_cosine(np.cos(12 * np.pi * x), 1.0, 8))) < 0.02


class TestImpedanceBranchAgreement:
    """The slope-quotient and straight-interface forms of the linearization
    coefficient agree as the interface flattens (away from the corners, where
    the one-sided trace stencil dominates)."""

    def test_quotient_approaches_straight_branch(self):
        from fraccauchy.freeboundary import _impedance_coeffs, _raw_gamma

        diffs = []
        for eps in (0.08, 0.04, 0.02, 0.01):
            ell = 0.08 + eps * (X - 0.5)
            curve = Curve(ell, L, 0.2)
            gam, dgam = _raw_gamma(GAMMA, curve)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                u = solve_forward(
                    curve, LATERAL, InterfaceBC("I", gamma=gam, combined=False), excitation(X)
                )
            alpha, _ = _impedance_coeffs(curve, gam, dgam, interface_traces(u))
            diffs.append(np.max(np.abs((alpha - interface_traces(u).u_x)[8:-8])))
        for big, small in zip(diffs, diffs[1:]):
            assert small < 0.7 * big
        assert diffs[-1] < 2e-3


class TestTraceBookkeeping:
    def test_lengths_and_rows(self):
        tr = cached_run("D", 0.01, 0.02)
        k = len(tr.iterates)
        assert len(tr.residual_norms) == k
        assert len(tr.rel_errors) == k
        assert len(tr.step_residuals) == k - 1
        assert tr.converged
        rows = tr.rows()
        assert len(rows) == k
        assert rows[0][0] == 0 and rows[-1][0] == k - 1

    def test_rows_nan_without_truth(self):
        lt = truth_curve(X, 0.1)
        zbar = holdall_field("D", 0.1, 0.0)
        tr = newton_dirichlet(
            Curve(lt, L, 0.1), zbar, LATERAL, excitation(X), NewtonConfig(max_iter=1)
        )
        assert tr.rel_errors is None
        assert all(math.isnan(r[2]) for r in tr.rows())

    def test_trust_region_limits_first_step(self):
        tr = cached_run("D", 0.01, 0.02)
        first = np.max(np.abs(tr.iterates[1].ell - tr.iterates[0].ell))
        assert first <= 0.5 * 0.02 + 1e-12

    def test_iterates_stay_in_corridor(self):
        tr = cached_run("D", 0.10, 0.02)
        for it in tr.iterates:
            assert it.ell.min() >= 0.01 * 0.1 - 1e-12
            assert it.ell.max() <= 0.1 + 1e-12


def test_neumann_known_endpoints_accelerate():
    # pinning the endpoint updates to zero (no known heights) still converges,
    # but needs extra iterations to haul the walls up from the wrong start
    with_ev = cached_run("N", 0.01, 0.05)
    without = run_newton("N", 0.1, 0.01, 0.05, endpoints=False)
    assert with_ev.rel_errors[3] <= 0.01
    assert without.rel_errors[3] > 0.01
    assert without.rel_errors[-1] <= 0.01


class TestValidation:
    def test_bad_config_values(self):
        for kw in (
            dict(max_iter=0),
            dict(rho1=0.0),
            dict(rho2=-1.0),
            dict(stop_tol=0.0),
            dict(smooth_modes=0),
            dict(clamp=(0.0, 0.1)),
        ):
            with pytest.raises(ValueError):
                NewtonConfig(**kw)

    def test_clamp_above_holdall(self):
        zbar = holdall_field("D", 0.1, 0.0)
        with pytest.raises(ValueError):
            newton_dirichlet(
                Curve(np.full(N, 0.05), L, 0.1),
                zbar,
                LATERAL,
                excitation(X),
                NewtonConfig(clamp=(0.01, 0.2)),
            )

    def test_truth_on_wrong_grid(self):
        zbar = holdall_field("D", 0.1, 0.0)
        with pytest.raises(ValueError):
            newton_dirichlet(
                Curve(np.full(N, 0.05), L, 0.1),
                zbar,
                LATERAL,
                excitation(X),
                NewtonConfig(max_iter=1),
                truth=np.full(65, 0.09),
            )

    def test_nonpositive_impedance_rejected(self):
        zbar = holdall_field("I", 0.1, 0.0)
        with pytest.raises(ValueError):
            newton_impedance(
                Curve(np.full(N, 0.05), L, 0.1),
                -0.1,
                zbar,
                LATERAL,
                excitation(X),
                NewtonConfig(max_iter=1),
            )

    def test_linearized_flux_wrong_shape(self):
        curve = Curve(truth_curve(X, 0.1), L, 0.1)
        with pytest.raises(ValueError):
            linearized_flux(curve, LATERAL, InterfaceBC("D"), excitation(X), np.zeros(5))

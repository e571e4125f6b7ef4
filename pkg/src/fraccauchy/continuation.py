"""Continuation of harmonic Cauchy data from the bottom edge of a strip.

Given traces ``u(x,0) = f`` and ``u_y(x,0) = g`` with homogeneous lateral
conditions, the modal coefficients of ``u(.,y)`` follow from the eigen
expansion of the transverse operator.  The exact formula amplifies mode j by
``exp(sqrt(lambda_j) y)`` and is therefore useless on noisy data; this module
provides it alongside three stabilised variants that replace the second
y-derivative by a fractional one of order ``2 alpha < 2``:

* ``left_dc`` / ``right_dc`` -- Mittag-Leffler propagators with the fractional
  derivative acting from the data side resp. the far side,
* ``fac_lap`` -- factor the operator, damp the decaying component exactly and
  push the growing component through ``1/E_{alpha,1}(-sqrt(lambda) y^alpha)``,
  whose amplification is only algebraic in ``lambda``.

``split_frequency_continue`` assigns a per-band order by a discrepancy rule,
and ``landweber_smooth`` implements the spectral pre-smoothing iteration used
before continuing the unstable component.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import rgamma

from .specfun import ml_values
from .spectral import SpectralCoeffs, analyze, synthesize

# mode-wise amplification cap: coefficients blown up beyond this are zeroed
# and counted so that the unstable schemes stay runnable for comparisons
AMP_LIMIT = 1e12
_LOG_AMP_LIMIT = math.log(AMP_LIMIT)

# search grid of fractional half-orders for the band-wise discrepancy rule
ALPHA_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999, 1.0)

# beyond this value of xi = (lam * y^a2)^(1/a2) the right_dc denominator is
# evaluated from its analytically cancelled large-argument form
_XI_ASYMP = 14.0


@dataclass
class CauchyData:
    """Bottom-edge traces sampled on ``basis.grid``."""

    f: np.ndarray
    g: np.ndarray
    delta: float
    basis: object

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n = self.basis.N
        if self.f.shape != (n,) or self.g.shape != (n,):
            raise ValueError("traces must be sampled on the basis grid")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("relative noise level must lie in [0, 1)")

    def coeffs(self):
        return analyze(self.f, self.basis).c, analyze(self.g, self.basis).c


@dataclass
class Slice:
    """Continued trace at height y, with bookkeeping for guarded modes."""

    y: float
    values: np.ndarray
    overflow: bool = False
    zeroed_modes: int = 0


@dataclass(frozen=True)
class ContinuationScheme:
    """Configuration record used by the harness to select a scheme.

    ``alpha`` is the fractional half-order (the propagator order is
    ``2 alpha``); ``bands`` holds ``(end_index, alpha)`` pairs for the
    split-frequency variant.
    """

    kind: str
    alpha: float = None
    bands: tuple = None

    def __post_init__(self):
        kinds = ("exact", "left_dc", "right_dc", "fac_lap", "fac_lap_split")
        if self.kind not in kinds:
            raise ValueError("unknown continuation scheme %r" % (self.kind,))
        if self.alpha is not None and not 0.0 < self.alpha <= 1.0:
            raise ValueError("fractional half-order must lie in (0, 1]")
        if self.bands is not None:
            ends = [k for k, _ in self.bands]
            if any(b >= a for a, b in zip(ends[1:], ends)):
                raise ValueError("band breakpoints must be strictly increasing")
            if any(not 0.0 < a < 1.0 for _, a in self.bands):
                raise ValueError("band orders must lie in (0, 1)")


def _check_height(y):
    y = float(y)
    if not (np.isfinite(y) and y >= 0.0):
        raise ValueError("continuation height must be finite and >= 0")
    return y


def continue_exact(data, y):
    """Exact modal continuation; unstable for noisy data and flagged when the
    top mode leaves the double-precision exponential range."""
    y = _check_height(y)
    fc, gc = data.coeffs()
    s = np.sqrt(data.basis.lambdas)
    with np.errstate(over="ignore", invalid="ignore"):
        a = np.where(
            s > 0.0,
            fc * np.cosh(s * y) + gc * np.sinh(s * y) / np.where(s > 0.0, s, 1.0),
            fc + gc * y,
        )
    overflow = bool(s[-1] * y > 700.0)
    return Slice(y, synthesize(SpectralCoeffs(data.basis, a)), overflow=overflow)


def _check_order2(alpha2):
    alpha2 = float(alpha2)
    if not 1.0 <= alpha2 <= 2.0:
        raise ValueError("propagator order 2*alpha must lie in [1, 2]")
    return alpha2


def continue_left_dc(data, alpha2, y):
    """Fractional propagator with both Mittag-Leffler kernels on positive
    arguments.  Amplifies mode j like exp(lambda_j^(1/(2 alpha)) y), which is
    faster than the exact formula for 2 alpha < 2; the amplification guard
    zeroes modes beyond AMP_LIMIT."""
    alpha2 = _check_order2(alpha2)
    y = _check_height(y)
    fc, gc = data.coeffs()
    lam = data.basis.lambdas
    z = lam * y ** alpha2
    keep = lam ** (1.0 / alpha2) * y <= _LOG_AMP_LIMIT
    a = np.zeros_like(fc)
    if np.any(keep):
        zk = z[keep]
        a[keep] = fc[keep] * ml_values(alpha2, 1.0, zk) + gc[keep] * y * ml_values(alpha2, 2.0, zk)
    return Slice(
        y,
        synthesize(SpectralCoeffs(data.basis, a)),
        zeroed_modes=int(np.count_nonzero(~keep)),
    )


def _alg_tail(alpha2, beta, x, kmax=8):
    """Algebraic large-argument tail -sum_k x^-k / Gamma(beta - alpha2 k),
    truncated at the smallest term (the expansion is asymptotic)."""
    total = 0.0
    best = math.inf
    for k in range(1, kmax + 1):
        term = x ** (-k) * rgamma(beta - alpha2 * k)
        if term != 0.0 and abs(term) > best:
            break
        best = min(best, abs(term)) if term != 0.0 else best
        total -= term
    return total


def _right_dc_ratio_large(alpha2, xi, fj, gj, y):
    """Modal coefficient of right_dc for large xi, from the cancelled form.

    On the positive axis the Mittag-Leffler asymptotics carry a single
    exponential, and the exp(2 xi) parts of E1^2 - z E3 E2 cancel exactly;
    float64 evaluation of the difference is catastrophic there, so the
    cancelled expression (algebraic tails only) is used instead.
    """
    c = 1.0 / alpha2
    x = xi ** alpha2
    a1 = _alg_tail(alpha2, 1.0, x)
    a2 = _alg_tail(alpha2, alpha2, x)
    a3 = _alg_tail(alpha2, 2.0, x)
    small = math.exp(-xi) if xi < 700.0 else 0.0
    num = c * (fj + gj * y / xi) + small * (fj * a1 + gj * y * a3)
    den = c * (2.0 * a1 - xi * a3 - xi ** (alpha2 - 1.0) * a2) + small * (
        a1 * a1 - x * a2 * a3
    )
    return num, den


def _guarded_ratio(num, den, ref):
    """num/den with the spec'd near-zero-denominator and amplification guards;
    returns (values, number of zeroed modes)."""
    vals = np.zeros_like(num)
    bad = np.abs(den) < 1e-12 * np.abs(num)
    ok = ~bad
    with np.errstate(over="ignore"):
        vals[ok] = num[ok] / den[ok]
    amp_bad = ~np.isfinite(vals) | (np.abs(vals) > AMP_LIMIT * np.maximum(np.abs(ref), 1e-300))
    vals[amp_bad] = 0.0
    return vals, int(np.count_nonzero(bad | amp_bad))


def continue_right_dc(data, alpha2, y):
    """Fractional propagator normalised to have value 1 at the data edge in
    each mode; its amplification is only algebraic in lambda, but the
    denominator can vanish (near-zero modes are zeroed and counted)."""
    alpha2 = _check_order2(alpha2)
    y = _check_height(y)
    fc, gc = data.coeffs()
    lam = data.basis.lambdas
    z = lam * y ** alpha2
    num = np.zeros_like(fc)
    den = np.ones_like(fc)
    if alpha2 == 2.0:
        # denominator is cosh^2 - sinh^2 = 1 identically
        return continue_exact(data, y)
    xi = z ** (1.0 / alpha2)
    direct = xi <= _XI_ASYMP
    if np.any(direct):
        zd = z[direct]
        e1 = ml_values(alpha2, 1.0, zd)
        e2 = ml_values(alpha2, 2.0, zd)
        e3 = ml_values(alpha2, alpha2, zd)
        num[direct] = fc[direct] * e1 + gc[direct] * y * e2
        den[direct] = e1 * e1 - zd * e3 * e2
    for j in np.nonzero(~direct)[0]:
        num[j], den[j] = _right_dc_ratio_large(alpha2, xi[j], fc[j], gc[j], y)
    ref = np.hypot(fc, gc)
    a, zeroed = _guarded_ratio(num, den, ref)
    return Slice(y, synthesize(SpectralCoeffs(data.basis, a)), zeroed_modes=zeroed)


def split_data(data):
    """Split the Cauchy pair into the growing and decaying boundary
    components u_{+-}(x,0) = (f -+ ... )/2 with modal flux weights 1/sqrt(lambda).

    A zero eigenvalue (first Neumann mode) has no flux weight; its flux
    contribution is omitted from both parts (their sum still reproduces f)
    and a warning is issued.
    """
    fc, gc = data.coeffs()
    lam = data.basis.lambdas
    s = np.sqrt(lam)
    zero = s == 0.0
    if np.any(zero):
        warnings.warn(
            "zero-eigenvalue mode: flux component omitted in split", stacklevel=2
        )
    ginv = np.where(zero, 0.0, gc / np.where(zero, 1.0, s))
    up = 0.5 * (fc + ginv)
    um = 0.5 * (fc - ginv)
    return SpectralCoeffs(data.basis, up), SpectralCoeffs(data.basis, um)


def _fac_lap_coeffs(up, um, lam, alpha, y):
    """Band-constant-order factored continuation of split coefficients."""
    s = np.sqrt(lam)
    pos = s > 0.0
    amp = np.ones_like(s)
    if np.any(pos):
        amp[pos] = 1.0 / ml_values(alpha, 1.0, -(s[pos] * y ** alpha))
    a = np.where(pos, up * amp + um * np.exp(-s * y), up + um)
    zeroed = int(np.count_nonzero(np.abs(amp) > AMP_LIMIT))
    a[np.abs(amp) > AMP_LIMIT] = 0.0
    return a, zeroed


def continue_fac_lap(data, alpha, y):
    """Factored-operator continuation: decaying component propagated exactly,
    growing component amplified through the reciprocal Mittag-Leffler factor
    (bounded by 1 + Gamma(1-alpha) sqrt(lambda) y^alpha).  At alpha = 1 this
    is the exact formula."""
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValueError("fractional half-order must lie in (0, 1]")
    y = _check_height(y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        up, um = split_data(data)
    lam = data.basis.lambdas
    a, zeroed = _fac_lap_coeffs(up.c, um.c, lam, alpha, y)
    # zero eigenvalue: both kernels equal 1, recover the linear-in-y limit
    zero = lam == 0.0
    if np.any(zero):
        fc, gc = data.coeffs()
        a[zero] = fc[zero] + gc[zero] * y
    return Slice(y, synthesize(SpectralCoeffs(data.basis, a)), zeroed_modes=zeroed)


@dataclass
class SplitResult:
    """Slices plus the selected frequency bands ``(end_index, alpha)``.
    Iterates as the pair (slices, bands)."""

    slices: list
    bands: list

    def __iter__(self):
        return iter((self.slices, self.bands))


def _consistency_defect(lam, alpha, ystar):
    """|1 - q_j| where q_j is the go-up-then-come-down factor of the factored
    scheme at depth ystar; vanishes as alpha -> 1 for fixed frequency.  The
    scheme can over- as well as under-amplify (q on either side of 1), both
    count as inconsistency."""
    s = np.sqrt(lam)
    q = np.ones_like(s)
    pos = s > 0.0
    if np.any(pos):
        e = ml_values(alpha, 1.0, -(s[pos] * ystar ** alpha))
        q[pos] = np.exp(-s[pos] * ystar) / e
    return np.abs(1.0 - q)


def continue_banded(data, bands, y):
    """Factored continuation with a piecewise-constant half-order.

    ``bands`` is a sequence of ``(end_index, alpha)`` pairs with strictly
    increasing end indices covering all modes (the last end equals basis.J).
    """
    y = _check_height(y)
    J = data.basis.J
    bands = [(int(e), float(a)) for e, a in bands]
    ends = [e for e, _ in bands]
    if not bands or ends[-1] != J or any(e2 <= e1 for e1, e2 in zip([0] + ends, ends)):
        raise ValueError("bands must cover modes 1..J with increasing ends")
    if any(not 0.0 < a <= 1.0 for _, a in bands):
        raise ValueError("band half-orders must lie in (0, 1]")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        up, um = split_data(data)
    lam = data.basis.lambdas
    a = np.empty(J)
    zeroed = 0
    start = 0
    for end, alpha_b in bands:
        sl = slice(start, end)
        a[sl], z = _fac_lap_coeffs(up.c[sl], um.c[sl], lam[sl], alpha_b, y)
        zeroed += z
        start = end
    zero = lam == 0.0
    if np.any(zero):
        fc, gc = data.coeffs()
        a[zero] = fc[zero] + gc[zero] * y
    return Slice(y, synthesize(SpectralCoeffs(data.basis, a)), zeroed_modes=zeroed)


def split_frequency_continue(data, y_grid, tau=1.5):
    """Continue with a band-wise fractional order chosen mode by mode.

    Each mode's order minimizes an estimated error at the deepest requested
    level: the consistency defect of the factored scheme times the mode's
    coefficient (signal distortion) plus the scheme's growth factor times an
    estimated per-mode noise level tau * delta * rms(coefficients).  Exact
    continuation (order 1) has zero defect, so noise-free data is continued
    exactly, while strongly amplified noise modes fall to low orders; the
    rule acts like a soft spectral cutoff at shallow depth and as genuinely
    fractional damping at depth.  Runs of equal order merge into bands.
    """
    y_grid = np.atleast_1d(np.asarray(y_grid, dtype=float))
    tau = float(tau)
    if tau <= 1.0:
        raise ValueError("noise safety factor tau must exceed 1")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        up, um = split_data(data)
    lam = data.basis.lambdas
    J = lam.size
    ystar = float(np.max(y_grid))
    s = np.sqrt(lam)
    pos = s > 0.0
    defects = np.array([_consistency_defect(lam, a, ystar) for a in ALPHA_GRID])
    growth = np.ones((len(ALPHA_GRID), J))
    for i, a in enumerate(ALPHA_GRID):
        growth[i, pos] = 1.0 / ml_values(a, 1.0, -(s[pos] * ystar ** a))
    d = np.abs(up.c)
    # white-noise model: the data error spreads evenly over the modes the
    # scheme actually amplifies (zero modes are continued exactly)
    sigma = 0.0
    if np.any(pos):
        sigma = tau * data.delta * math.sqrt(float(np.mean(d[pos] ** 2)))
    cost = defects * d[None, :] + sigma * growth
    # ties (zero modes, noise-free data) resolve toward the exact order
    pick = (len(ALPHA_GRID) - 1) - np.argmin(cost[::-1, :], axis=0)
    mode_alpha = np.asarray(ALPHA_GRID)[pick]

    bands = []
    k = 0
    while k < J:
        m = k
        while m + 1 < J and mode_alpha[m + 1] == mode_alpha[k]:
            m += 1
        bands.append((m + 1, float(mode_alpha[k])))
        k = m + 1

    slices = [continue_banded(data, bands, float(y)) for y in y_grid]
    return SplitResult(slices, bands)


def landweber_smooth(u0_noisy, sigma_t, mu, l, delta, norm_at_l, c=1.0):
    """Landweber iteration v <- v - mu (-Lap)^(-sigma_t) (v - u) started at 0,
    run for ceil(c l^-2 log(norm_at_l / delta)) steps.

    The smoothing operator must be a contraction (mu lambda^-sigma_t <= 1 for
    every mode) and needs strictly positive eigenvalues.
    """
    sigma_t = float(sigma_t)
    mu = float(mu)
    if sigma_t < 1.0:
        raise ValueError("smoothing exponent must be >= 1")
    if not (delta > 0.0 and norm_at_l > 0.0 and l > 0.0):
        raise ValueError("delta, norm_at_l and l must be positive")
    lam = u0_noisy.basis.lambdas
    if np.any(lam <= 0.0):
        raise ValueError("smoothing operator undefined for zero eigenvalues")
    step = mu * lam ** (-sigma_t)
    if np.max(step) > 1.0:
        raise ValueError("mu violates the contraction bound mu*lambda^-sigma_t <= 1")
    i_star = max(1, math.ceil(c * l ** (-2.0) * math.log(norm_at_l / delta)))
    v = np.zeros_like(u0_noisy.c)
    for _ in range(i_star):
        v = v * (1.0 - step) + step * u0_noisy.c
    return SpectralCoeffs(u0_noisy.basis, v)


def with_noise(data, delta, rng, perturb_f=False):
    """Additive Gaussian grid noise on g (optionally also f), rescaled so the
    relative L2 perturbation equals delta exactly."""
    delta = float(delta)
    if not 0.0 <= delta < 1.0:
        raise ValueError("relative noise level must lie in [0, 1)")
    w = data.basis.weights

    def perturb(v):
        nsq = float(np.sum(w * v ** 2))
        if nsq == 0.0:
            raise ValueError("cannot scale relative noise on an all-zero trace")
        e = rng.standard_normal(v.size)
        return v + e * (delta * math.sqrt(nsq / float(np.sum(w * e ** 2))))

    g = perturb(data.g) if delta > 0.0 else data.g.copy()
    f = perturb(data.f) if (perturb_f and delta > 0.0) else data.f.copy()
    return CauchyData(f, g, delta, data.basis)

"""Skewed Generalized T (SGT) marginal distribution.

Parameterisation follows Theodossiou (1998) with mean-centering and variance
adjustment always switched on, so ``mu`` is the mean and ``sigma`` the
standard deviation of the distribution:

    f(x) = p / (2 v sigma q^(1/p) B(1/p, q))
           * (|z|^p / (q (v sigma)^p (1 + lam sign(z))^p) + 1)^(-1/p - q),
    z = x - mu + m

The mode sits at ``x = mu - m``. On either side of it the density is a
rescaled beta-prime kernel, so with ``y = (|z| / (v sigma (1 +- lam)))^p / q``

    F(x) = (1 - lam)/2 * I_{1/(1+y)}(q, 1/p)                 for z < 0
    F(x) = (1 - lam)/2 + (1 + lam)/2 * I_{y/(1+y)}(1/p, q)   for z >= 0

where ``I`` is the regularized incomplete beta function.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .exceptions import DomainError, FitError, MomentExistenceError, SizeError
from .stats_core import AdResult, ad_uniform_test

logger = logging.getLogger(__name__)

U_CLAMP = 1e-12
MIN_FIT_SIZE = 50
# variance must exist for the downstream covariance estimate
PQ_FLOOR = 2.0


# Bernoulli numbers B_2 .. B_14 for the Stirling series of log-gamma
_STIRLING = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6)
_STIRLING_MIN = 10.0


def _stirling_tail(x: float) -> float:
    return sum(b / ((2 * k + 2) * (2 * k + 1) * x ** (2 * k + 1)) for k, b in enumerate(_STIRLING))


def _log_gamma_ratio(x: float, a: float) -> float:
    """ln Gamma(x) - ln Gamma(x + a) for x >= 10, without cancellation."""
    return -(x - 0.5) * math.log1p(a / x) - a * math.log(x + a) + a + _stirling_tail(x) - _stirling_tail(x + a)


def log_beta(a: float, b: float) -> float:
    """Natural log of the beta function B(a, b).

    When the larger argument is big, ``lgamma(b) - lgamma(a + b)`` cancels
    badly, so that difference comes from the Stirling series instead.
    """
    if not (a > 0 and b > 0):
        raise DomainError(f"log_beta needs positive arguments, got ({a}, {b})")
    small, large = min(a, b), max(a, b)
    if large < _STIRLING_MIN:
        return float(special.betaln(a, b))
    return math.lgamma(small) + _log_gamma_ratio(large, small)


def centering_terms(sigma: float, lam: float, p: float, q: float) -> tuple[float, float]:
    """Return ``(m, v)``, the mean shift and the variance adjustment factor."""
    if p * q <= PQ_FLOOR:
        raise MomentExistenceError(f"variance needs p*q > 2, got p*q = {p * q}")
    lb1 = log_beta(1.0 / p, q)
    r1 = math.exp(log_beta(2.0 / p, q - 1.0 / p) - lb1)
    r2 = math.exp(log_beta(3.0 / p, q - 2.0 / p) - lb1)
    lam2 = lam * lam
    inner = (3.0 * lam2 + 1.0) * r2 - 4.0 * lam2 * r1 * r1
    if not inner > 0:
        raise MomentExistenceError("variance adjustment undefined for these shape parameters")
    v = math.exp(-math.log(q) / p) / math.sqrt(inner)
    m = 2.0 * v * sigma * lam * math.exp(math.log(q) / p) * r1
    return m, v


@dataclass(frozen=True)
class SgtParams:
    mu: float
    sigma: float
    lam: float
    p: float
    q: float
    m_shift: float = field(init=False, repr=False)
    v_scale: float = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("mu", "sigma", "lam", "p", "q"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise DomainError(f"{name} must be finite, got {val}")
            object.__setattr__(self, name, float(val))
        if self.sigma <= 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not -1.0 < self.lam < 1.0:
            raise DomainError(f"lam must lie in (-1, 1), got {self.lam}")
        if self.p <= 0 or self.q <= 0:
            raise DomainError("shape parameters p and q must be positive")
        m, v = centering_terms(self.sigma, self.lam, self.p, self.q)
        object.__setattr__(self, "m_shift", m)
        object.__setattr__(self, "v_scale", v)

    @property
    def mode(self) -> float:
        return self.mu - self.m_shift

    def as_dict(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma, "lam": self.lam, "p": self.p, "q": self.q}


@dataclass(frozen=True)
class FitReport:
    params: SgtParams
    log_likelihood: float
    converged: bool
    iterations: int
    ad: AdResult


def sgt_logpdf(x, params: SgtParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    p, q, lam = params.p, params.q, params.lam
    s = params.v_scale * params.sigma
    z = x - params.mu + params.m_shift
    scale = s * (1.0 + lam * np.sign(z))
    log_norm = math.log(p) - math.log(2.0 * s) - math.log(q) / p - log_beta(1.0 / p, q)
    with np.errstate(divide="ignore"):
        log_y = p * (np.log(np.abs(z)) - np.log(scale)) - math.log(q)
    return log_norm - (1.0 / p + q) * np.logaddexp(0.0, log_y)


def sgt_pdf(x, params: SgtParams):
    out = np.exp(sgt_logpdf(x, params))
    return out if np.ndim(out) else float(out)


def _split_masses(log_y: np.ndarray, p: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Beta-prime mass between the mode and ``|z|`` (head) and beyond it (tail).

    Whichever of the two is below one half is evaluated directly, so neither
    loses precision to cancellation near the mode or far in the tails. The
    direct tail uses the complemented integral in ``w = y / (1 + y)`` while
    ``w`` is well resolved, and the integral in ``1 - w`` beyond that.
    """
    a = 1.0 / p
    head = special.betainc(a, q, special.expit(log_y))
    tail = 1.0 - head
    far = head > 0.5
    if far.any():
        ly = log_y[far]
        mid = ly < 1.0
        t = np.empty_like(ly)
        t[mid] = special.betaincc(a, q, special.expit(ly[mid]))
        t[~mid] = special.betainc(q, a, special.expit(-ly[~mid]))
        tail[far] = t
        head[far] = 1.0 - t
    return head, tail


def _closed_form_cdf(x: np.ndarray, params: SgtParams) -> np.ndarray:
    p, q, lam = params.p, params.q, params.lam
    s = params.v_scale * params.sigma
    z = x - params.mu + params.m_shift
    left = z < 0
    scale = np.where(left, s * (1.0 - lam), s * (1.0 + lam))
    with np.errstate(divide="ignore"):
        log_y = p * (np.log(np.abs(z)) - np.log(scale)) - math.log(q)
    head, tail = _split_masses(log_y, p, q)
    w_left = 0.5 * (1.0 - lam)
    w_right = 0.5 * (1.0 + lam)
    return np.where(left, w_left * tail, np.where(head <= 0.5, w_left + w_right * head, 1.0 - w_right * tail))


def _quad_cdf(xi: float, params: SgtParams) -> float:
    mode = params.mode
    f = lambda t: float(sgt_pdf(t, params))
    w_left = 0.5 * (1.0 - params.lam)
    if xi <= mode:
        val, _ = integrate.quad(f, -np.inf, xi, epsabs=1e-13, limit=200)
        return val
    val, _ = integrate.quad(f, mode, xi, epsabs=1e-13, limit=200)
    return w_left + val


def sgt_cdf(x, params: SgtParams):
    """CDF by the incomplete-beta closed form, quadrature where it breaks down."""
    arr = np.asarray(x, dtype=float)
    flat = np.atleast_1d(arr).ravel()
    if np.isnan(flat).any():
        raise DomainError("cdf argument contains NaN")
    out = _closed_form_cdf(flat, params)
    bad = ~np.isfinite(out)
    if bad.any():
        logger.debug("closed-form SGT cdf failed at %d points, using quadrature", int(bad.sum()))
        out[bad] = [_quad_cdf(v, params) for v in flat[bad]]
    out = np.clip(out, 0.0, 1.0).reshape(arr.shape)
    return out if out.ndim else float(out)


def _closed_form_quantile(u: np.ndarray, params: SgtParams) -> np.ndarray:
    p, q, lam = params.p, params.q, params.lam
    s = params.v_scale * params.sigma
    w_left = 0.5 * (1.0 - lam)
    w_right = 0.5 * (1.0 + lam)
    left = u < w_left
    tail = np.clip(np.where(left, u / w_left, (1.0 - u) / w_right), 0.0, 1.0)
    head = np.clip(np.where(left, (w_left - u) / w_left, (u - w_left) / w_right), 0.0, 1.0)
    near = tail > 0.5
    far = ~near
    log_y = np.empty_like(u)
    with np.errstate(divide="ignore"):
        w = special.betaincinv(1.0 / p, q, head[near])
        log_y[near] = np.log(w) - np.log1p(-w)
        # same split as the forward tail: invert in w while w is well resolved
        t = tail[far]
        w = special.betainccinv(1.0 / p, q, t)
        ly = np.log(w) - np.log1p(-w)
        deep = ~(ly < 1.0)
        r = special.betaincinv(q, 1.0 / p, t[deep])
        ly[deep] = np.log1p(-r) - np.log(r)
        log_y[far] = ly
    scale = np.where(left, s * (1.0 - lam), s * (1.0 + lam))
    absz = scale * np.exp((log_y + math.log(q)) / p)
    z = np.where(left, -absz, absz)
    return z + params.mu - params.m_shift


def sgt_quantile(u, params: SgtParams, tol: float = 1e-13, maxiter: int = 60):
    """Inverse CDF.

    ``tol`` bounds the CDF residual relative to ``min(u, 1 - u)``. Starts from the closed-form beta inversion, then polishes each value with
    Newton steps on the CDF kept inside a sign-change bracket.
    """
    arr = np.asarray(u, dtype=float)
    flat = np.atleast_1d(arr).ravel()
    if np.isnan(flat).any() or (flat <= 0).any() or (flat >= 1).any():
        raise DomainError("quantile needs u strictly inside (0, 1)")

    x = _closed_form_quantile(flat, params)
    bad = ~np.isfinite(x)
    if bad.any():
        x[bad] = params.mode
    # relative to the smaller tail mass; u near 1 cannot resolve below eps
    tols = np.where(flat < 0.5, tol * flat, np.maximum(tol * (1.0 - flat), np.finfo(float).eps))
    resid = sgt_cdf(x, params) - flat
    todo = np.flatnonzero(np.abs(resid) > tols)
    if todo.size:
        x[todo] = _polish(x[todo], flat[todo], params, tols[todo], maxiter)
    out = x.reshape(arr.shape)
    return out if out.ndim else float(out)


def _polish(x0, u, params, tol, maxiter):
    x = x0.copy()
    step = np.full_like(x, 1e-6 * params.sigma)
    lo = x - step
    hi = x + step
    # widen until F(lo) <= u <= F(hi)
    for _ in range(200):
        flo = sgt_cdf(lo, params) - u
        fhi = sgt_cdf(hi, params) - u
        need_lo = flo > 0
        need_hi = fhi < 0
        if not (need_lo.any() or need_hi.any()):
            break
        step = np.where(need_lo | need_hi, step * 2.0, step)
        lo = np.where(need_lo, lo - step, lo)
        hi = np.where(need_hi, hi + step, hi)
    x = np.clip(x, lo, hi)
    active = np.ones(x.shape, dtype=bool)
    for _ in range(maxiter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xi = x[idx]
        f = sgt_cdf(xi, params) - u[idx]
        done = np.abs(f) <= tol[idx]
        lo[idx] = np.where(f < 0, xi, lo[idx])
        hi[idx] = np.where(f > 0, xi, hi[idx])
        dens = sgt_pdf(xi, params)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = xi - f / dens
        inside = np.isfinite(newton) & (newton > lo[idx]) & (newton < hi[idx])
        nxt = np.where(inside, newton, 0.5 * (lo[idx] + hi[idx]))
        narrow = (hi[idx] - lo[idx]) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(xi))
        x[idx] = np.where(done, xi, nxt)
        active[idx] = ~(done | narrow)
    return x


def sgt_sample(params: SgtParams, count: int, seed=None) -> np.ndarray:
    """Inverse-transform draws through ``sgt_quantile``."""
    rng = np.random.default_rng(seed)
    u = np.clip(rng.random(count), U_CLAMP, 1.0 - U_CLAMP)
    return np.asarray(sgt_quantile(u, params))


# -- maximum likelihood ------------------------------------------------------

_LOG_SHAPE_BOUNDS = (-4.0, 25.0)
_JITTER = np.array([0.05, 0.1, 0.3, 0.3, 0.3])


def _to_theta(mu, sigma, lam, p, q) -> np.ndarray:
    return np.array([mu, math.log(sigma), math.atanh(lam), math.log(p), math.log(q)])


def _from_theta(theta) -> tuple[float, float, float, float, float]:
    mu, ls, al, lp, lq = theta
    lam = math.tanh(al)
    return mu, math.exp(ls), lam, math.exp(lp), math.exp(lq)


def _negloglik(theta, z: np.ndarray) -> float:
    mu, ls, al, lp, lq = theta
    lo, hi = _LOG_SHAPE_BOUNDS
    if not (lo <= lp <= hi and lo <= lq <= hi and abs(al) < 15.0 and abs(ls) < 30.0):
        return np.inf
    if lp + lq <= math.log(PQ_FLOOR) + 1e-9:
        return np.inf
    try:
        params = SgtParams(*_from_theta(theta))
    except (DomainError, OverflowError, ValueError):
        return np.inf
    val = -float(np.sum(sgt_logpdf(z, params)))
    return val if math.isfinite(val) else np.inf


def _nelder_mead(theta0: np.ndarray, z: np.ndarray):
    steps = np.array([0.1, 0.1, 0.2, 0.2, 0.2])
    simplex = np.vstack([theta0, theta0 + np.diag(steps)])
    # out-of-domain vertices score +inf; the convergence test then sees inf - inf
    with np.errstate(invalid="ignore"):
        return optimize.minimize(
            _negloglik,
            theta0,
            args=(z,),
            method="Nelder-Mead",
            options={"initial_simplex": simplex, "xatol": 1e-7, "fatol": 1e-9, "maxiter": 4000, "maxfev": 8000},
        )


def sgt_fit(x, init: SgtParams | None = None, max_restarts: int = 5, seed: int = 0) -> FitReport:
    """Maximum-likelihood SGT fit by Nelder-Mead over transformed parameters.

    ``sigma``, ``p`` and ``q`` are optimised on the log scale and ``lam``
    through ``tanh``; ``p*q <= 2`` is an infinite barrier. The data are
    standardised first and the estimates mapped back, which makes the fit
    exactly location-scale equivariant. After the first run, up to
    ``max_restarts`` jittered restarts from the incumbent are tried; the loop
    stops at the first restart that does not improve the likelihood.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DomainError("sgt_fit expects a one-dimensional sample")
    if x.size < MIN_FIT_SIZE:
        raise SizeError(f"sgt_fit needs at least {MIN_FIT_SIZE} observations, got {x.size}")
    if not np.isfinite(x).all():
        raise DomainError("sample contains non-finite values")
    center = float(x.mean())
    spread = float(x.std(ddof=1))
    if not spread > 1e-12 * max(1.0, abs(center)):
        raise FitError("sample is (near) constant; SGT fit is degenerate")
    z = (x - center) / spread

    if init is None:
        theta0 = _to_theta(0.0, 1.0, 0.0, 2.0, 2.0)
    else:
        theta0 = _to_theta(
            (init.mu - center) / spread, init.sigma / spread, init.lam, init.p, init.q
        )

    rng = np.random.default_rng(seed)
    res = _nelder_mead(theta0, z)
    best, best_f, converged = res.x, res.fun, bool(res.success)
    iterations = int(res.nit)
    for _ in range(max_restarts):
        start = best + rng.normal(size=5) * _JITTER
        res = _nelder_mead(start, z)
        iterations += int(res.nit)
        if not np.isfinite(res.fun) or res.fun >= best_f - 1e-6:
            converged = converged or bool(res.success and np.isfinite(res.fun))
            break
        best, best_f, converged = res.x, res.fun, bool(res.success)

    if not np.isfinite(best_f):
        raise FitError("all Nelder-Mead runs diverged", best=None)

    mu_z, sig_z, lam, p, q = _from_theta(best)
    params = SgtParams(center + spread * mu_z, spread * sig_z, lam, p, q)
    loglik = float(np.sum(sgt_logpdf(x, params)))
    if not math.isfinite(loglik):
        raise FitError("fitted log-likelihood is not finite", best=params)
    u = np.clip(sgt_cdf(x, params), U_CLAMP, 1.0 - U_CLAMP)
    return FitReport(params, loglik, converged, iterations, ad_uniform_test(u))


def density_grid(params: SgtParams, points: int = 201, width: float = 6.0) -> tuple[np.ndarray, np.ndarray]:
    """Evenly spaced ``(x, pdf)`` grid over ``mu +- width * sigma``."""
    xs = np.linspace(params.mu - width * params.sigma, params.mu + width * params.sigma, points)
    return xs, np.asarray(sgt_pdf(xs, params))

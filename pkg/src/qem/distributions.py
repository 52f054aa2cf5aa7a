"""Exponential-family distributions used as priors, likelihoods and proposals.

Every family works on three parameterizations:

* conventional: ``Gaussian(mean, variance)``, ``Bernoulli(p)``,
  ``Beta(alpha, beta)``, ``Gamma(shape, rate)``;
* natural: the ``eta`` of ``exp(eta . T(z) - A(eta))``;
* mean: the expected sufficient statistics ``E[T(z)]``.

The mean parameters are what QEM tracks; conventional parameters are what the
samplers and densities consume.  All methods broadcast over numpy arrays, the
last axis of a mean/natural array indexes the statistic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, InfeasibleMomentsError, NotClosedUnderScalingError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))

_INV_TOL = 1e-12
_INV_MAX_ITER = 200


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def digamma(x):
    """Digamma for positive arguments: shift above 6, then asymptotic series."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("digamma is only implemented for positive arguments")
    acc = np.zeros_like(x)
    x = x.copy()
    for _ in range(6):
        small = x < 6.0
        if not small.any():
            break
        acc = acc - np.where(small, 1.0 / x, 0.0)
        x = np.where(small, x + 1.0, x)
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (
        1.0 / 240 - inv2 * (1.0 / 132 - inv2 * (691.0 / 32760 - inv2 / 12.0))))))
    return acc + np.log(x) - 0.5 * inv - series


def trigamma(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("trigamma is only implemented for positive arguments")
    acc = np.zeros_like(x)
    x = x.copy()
    for _ in range(6):
        small = x < 6.0
        if not small.any():
            break
        acc = acc + np.where(small, 1.0 / (x * x), 0.0)
        x = np.where(small, x + 1.0, x)
    inv = 1.0 / x
    inv2 = inv * inv
    # Bernoulli-number series: 1/x + 1/(2x^2) + sum B_2k / x^(2k+1)
    series = inv * (1.0 + inv * (0.5 + inv * (1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (
        1.0 / 42 - inv2 * (1.0 / 30 - inv2 * (5.0 / 66 - inv2 * 691.0 / 2730)))))))
    return acc + series


def log_sigmoid(x):
    x = np.asarray(x, dtype=float)
    return -np.logaddexp(0.0, -x)


def sigmoid(x):
    return special.expit(x)


# ---------------------------------------------------------------------------
# bracketed Newton inversion of monotone CDFs
# ---------------------------------------------------------------------------

def _bracketed_newton(residual, lo, hi, y0):
    """Find y with residual(y, idx) == 0 for a residual increasing in y.

    Works on flat arrays.  ``residual(y, idx)`` evaluates ``(g, dg)`` for the
    entries ``idx`` only, so converged entries cost nothing on later passes.
    Newton steps that leave the current bracket, or that fail to halve the
    step taken two iterations earlier, are replaced by bisection, so the
    bracket keeps shrinking even when the residual is too noisy for Newton.
    An entry has converged once a Newton step moves it by less than the
    tolerance (y is a log or logit, so this is a relative tolerance on the
    returned value).
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    y = np.clip(np.array(y0, dtype=float), lo, hi)
    idx = np.arange(y.size)
    prev = hi - lo
    prev2 = prev.copy()
    for _ in range(_INV_MAX_ITER):
        if idx.size == 0:
            return y
        yi, li, hi_, p2 = y[idx], lo[idx], hi[idx], prev2[idx]
        g, dg = residual(yi, idx)
        li = np.where(g < 0, yi, li)
        hi_ = np.where(g > 0, yi, hi_)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = np.where(dg > 0, g / dg, np.nan)
            y_new = yi - step
            bisect = ~np.isfinite(y_new) | (y_new <= li) | (y_new >= hi_) | (2.0 * np.abs(step) > p2)
        y_new = np.where(bisect, 0.5 * (li + hi_), y_new)
        prev2[idx] = prev[idx]
        prev[idx] = np.abs(y_new - yi)
        done = (g == 0) | (~bisect & (np.abs(step) <= _INV_TOL)) \
            | (hi_ - li <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(yi)))
        y[idx] = np.where(done, yi, y_new)
        lo[idx], hi[idx] = li, hi_
        idx = idx[~done]
    raise NumericalError(
        "inverse CDF did not converge",
        {"max_iter": _INV_MAX_ITER, "unconverged": int(idx.size)},
    )


def _start(guess, fallback):
    """Use scipy's inverse as a starting point where it is finite."""
    return np.where(np.isfinite(guess), guess, fallback)


def _gamma_std_ppf(shape, u):
    """Inverse of the regularized lower incomplete gamma P(shape, x) in x."""
    shape, u = np.broadcast_arrays(np.asarray(shape, float), np.asarray(u, float))
    out_shape = u.shape
    shape, u = shape.ravel(), u.ravel()
    upper = u > 0.5
    log_norm = special.gammaln(shape)

    def residual(y, i):
        x = np.exp(y)
        # d/dy P(shape, e^y) = x^shape e^-x / Gamma(shape)
        dens = np.exp(shape[i] * y - x - log_norm[i])
        g = np.where(upper[i], (1.0 - u[i]) - special.gammaincc(shape[i], x), special.gammainc(shape[i], x) - u[i])
        return g, dens

    # Wilson-Hilferty fallback start
    z = special.ndtri(u)
    wh = shape * (1.0 - 1.0 / (9.0 * shape) + z / (3.0 * np.sqrt(shape))) ** 3
    wh = np.where(wh <= 0, (u * special.gamma(shape + 1.0)) ** (1.0 / shape), wh)
    with np.errstate(divide="ignore", invalid="ignore"):
        y0 = _start(np.log(special.gammaincinv(shape, u)), np.log(np.maximum(wh, 1e-300)))
    y = _bracketed_newton(residual, np.full(u.shape, -745.0), np.full(u.shape, 710.0), y0)
    return np.exp(y).reshape(out_shape)


def _beta_ppf(a, b, u):
    a, b, u = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(u, float))
    out_shape = u.shape
    a, b, u = a.ravel(), b.ravel(), u.ravel()
    upper = u > 0.5
    log_norm = special.betaln(a, b)

    def residual(y, i):
        # x = sigmoid(y); dx/dy = x (1 - x)
        lx = log_sigmoid(y)
        l1x = log_sigmoid(-y)
        ai, bi, ui = a[i], b[i], u[i]
        dens = np.exp(ai * lx + bi * l1x - log_norm[i])
        g = np.where(upper[i], (1.0 - ui) - special.betainc(bi, ai, np.exp(l1x)), special.betainc(ai, bi, np.exp(lx)) - ui)
        return g, dens

    mean = a / (a + b)
    with np.errstate(divide="ignore", invalid="ignore"):
        x0 = special.betaincinv(a, b, u)
        y0 = _start(np.log(x0) - np.log1p(-x0), np.log(mean) - np.log1p(-mean))
    y = _bracketed_newton(residual, np.full(u.shape, -700.0), np.full(u.shape, 700.0), y0)
    # stay inside the open unit interval so both log statistics are finite
    x = np.clip(sigmoid(y), np.finfo(float).tiny, np.nextafter(1.0, 0.0))
    return x.reshape(out_shape)


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

def _arr(x):
    return np.asarray(x, dtype=float)


class Family:
    """One exponential family.  Instances are singletons, compare by identity."""

    name: str = ""
    param_names: tuple = ()
    dim: int = 0
    proposal: bool = True
    # index of the probability parameter for families that accept logits
    prob_index: int | None = None

    def __repr__(self):
        return self.name

    def __reduce__(self):
        return (get_family, (self.name,))

    @property
    def n_params(self):
        return len(self.param_names)

    # subclasses implement the following on raw arrays
    def check_params(self, values): raise NotImplementedError
    def check_value(self, x): raise NotImplementedError
    def log_prob(self, values, x, logit=False): raise NotImplementedError
    def sample_it(self, values, u, logit=False): raise NotImplementedError
    def suff_stats(self, x): raise NotImplementedError
    def to_mean(self, values): raise NotImplementedError
    def from_mean(self, m): raise NotImplementedError
    def mean_feasible(self, m): raise NotImplementedError
    def to_natural(self, values): raise NotImplementedError
    def from_natural(self, eta): raise NotImplementedError

    def scale_mean(self, m, alpha):
        raise NotClosedUnderScalingError(f"{self.name} is not closed under multiplication by a constant")


class _Gaussian(Family):
    name = "Gaussian"
    param_names = ("mean", "variance")
    dim = 2

    def check_params(self, values):
        mu, var = (_arr(v) for v in values)
        if not np.all(np.isfinite(mu)):
            raise DomainError("Gaussian mean must be finite")
        if not np.all(var > 0) or not np.all(np.isfinite(var)):
            raise DomainError("Gaussian variance must be positive and finite")

    def check_value(self, x):
        if not np.all(np.isfinite(_arr(x))):
            raise DomainError("Gaussian values must be finite")

    def log_prob(self, values, x, logit=False):
        mu, var = values
        d = _arr(x) - mu
        return -0.5 * (LOG_2PI + np.log(var)) - d * d / (2.0 * var)

    def sample_it(self, values, u, logit=False):
        mu, var = values
        return mu + np.sqrt(var) * special.ndtri(u)

    def suff_stats(self, x):
        x = _arr(x)
        return np.stack([x, x * x], axis=-1)

    def to_mean(self, values):
        mu, var = np.broadcast_arrays(*(_arr(v) for v in values))
        return np.stack([mu, mu * mu + var], axis=-1)

    def mean_feasible(self, m):
        m = _arr(m)
        return np.isfinite(m).all(axis=-1) & (m[..., 1] - m[..., 0] ** 2 > 0)

    def from_mean(self, m):
        m = _arr(m)
        return m[..., 0], m[..., 1] - m[..., 0] ** 2

    def to_natural(self, values):
        mu, var = np.broadcast_arrays(*(_arr(v) for v in values))
        return np.stack([mu / var, -0.5 / var], axis=-1)

    def from_natural(self, eta):
        eta = _arr(eta)
        if not np.all(eta[..., 1] < 0):
            raise DomainError("Gaussian natural parameter eta2 must be negative")
        var = -0.5 / eta[..., 1]
        return eta[..., 0] * var, var

    def scale_mean(self, m, alpha):
        m = _arr(m)
        return np.stack([alpha * m[..., 0], alpha * alpha * m[..., 1]], axis=-1)


class _Bernoulli(Family):
    name = "Bernoulli"
    param_names = ("p",)
    dim = 1
    prob_index = 0

    def check_params(self, values):
        (p,) = values
        p = _arr(p)
        if not np.all((p > 0) & (p < 1)):
            raise DomainError("Bernoulli probability must lie in (0, 1)")

    def check_value(self, x):
        x = _arr(x)
        if not np.all((x == 0) | (x == 1)):
            raise DomainError("Bernoulli values must be 0 or 1")

    def log_prob(self, values, x, logit=False):
        (p,) = values
        x = _arr(x)
        if logit:
            # x * l - softplus(l), one transcendental pass instead of two
            ell = _arr(p)
            return x * ell - (np.maximum(ell, 0.0) + np.log1p(np.exp(-np.abs(ell))))
        else:
            with np.errstate(divide="ignore"):
                lp, lq = np.log(p), np.log1p(-_arr(p))
        return np.where(x == 1, lp, lq)

    def sample_it(self, values, u, logit=False):
        (p,) = values
        if logit:
            p = sigmoid(p)
        return (_arr(u) < p).astype(float)

    def suff_stats(self, x):
        return _arr(x)[..., None]

    def to_mean(self, values):
        return _arr(values[0])[..., None]

    def mean_feasible(self, m):
        m = _arr(m)[..., 0]
        return (m > 0) & (m < 1)

    def from_mean(self, m):
        return (_arr(m)[..., 0],)

    def to_natural(self, values):
        p = _arr(values[0])
        return (np.log(p) - np.log1p(-p))[..., None]

    def from_natural(self, eta):
        eta = _arr(eta)
        if not np.all(np.isfinite(eta)):
            raise DomainError("Bernoulli natural parameter must be finite")
        return (sigmoid(eta[..., 0]),)


class _Beta(Family):
    name = "Beta"
    param_names = ("alpha", "beta")
    dim = 2

    def check_params(self, values):
        for v in values:
            v = _arr(v)
            if not np.all((v > 0) & np.isfinite(v)):
                raise DomainError("Beta shape parameters must be positive")

    def check_value(self, x):
        x = _arr(x)
        if not np.all((x > 0) & (x < 1)):
            raise DomainError("Beta values must lie in (0, 1)")

    def log_prob(self, values, x, logit=False):
        a, b = values
        x = _arr(x)
        return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - special.betaln(a, b)

    def sample_it(self, values, u, logit=False):
        a, b = values
        return _beta_ppf(a, b, u)

    def suff_stats(self, x):
        x = _arr(x)
        return np.stack([np.log(x), np.log1p(-x)], axis=-1)

    def to_mean(self, values):
        a, b = np.broadcast_arrays(*(_arr(v) for v in values))
        dab = digamma(a + b)
        return np.stack([digamma(a) - dab, digamma(b) - dab], axis=-1)

    def mean_feasible(self, m):
        m = _arr(m)
        # exp(m1) + exp(m2) < 1 holds for every Beta (Jensen on both logs)
        return np.isfinite(m).all(axis=-1) & (m[..., 0] < 0) & (m[..., 1] < 0) & (
            np.exp(m[..., 0]) + np.exp(m[..., 1]) < 1.0)

    def from_mean(self, m):
        return _beta_from_mean(_arr(m))

    def to_natural(self, values):
        a, b = np.broadcast_arrays(*(_arr(v) for v in values))
        return np.stack([a - 1.0, b - 1.0], axis=-1)

    def from_natural(self, eta):
        eta = _arr(eta)
        if not np.all(eta > -1):
            raise DomainError("Beta natural parameters must exceed -1")
        return eta[..., 0] + 1.0, eta[..., 1] + 1.0


class _Gamma(Family):
    name = "Gamma"
    param_names = ("shape", "rate")
    dim = 2

    def check_params(self, values):
        for v in values:
            v = _arr(v)
            if not np.all((v > 0) & np.isfinite(v)):
                raise DomainError("Gamma shape and rate must be positive")

    def check_value(self, x):
        if not np.all(_arr(x) > 0):
            raise DomainError("Gamma values must be positive")

    def log_prob(self, values, x, logit=False):
        k, rate = values
        x = _arr(x)
        return k * np.log(rate) + (k - 1.0) * np.log(x) - rate * x - special.gammaln(k)

    def sample_it(self, values, u, logit=False):
        k, rate = values
        # dividing the standard draw by the rate keeps sampling scale-covariant
        return _gamma_std_ppf(k, u) / rate

    def suff_stats(self, x):
        x = _arr(x)
        return np.stack([x, np.log(x)], axis=-1)

    def to_mean(self, values):
        k, rate = np.broadcast_arrays(*(_arr(v) for v in values))
        return np.stack([k / rate, digamma(k) - np.log(rate)], axis=-1)

    def mean_feasible(self, m):
        m = _arr(m)
        ok = np.isfinite(m).all(axis=-1) & (m[..., 0] > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return ok & (np.log(np.where(ok, m[..., 0], 1.0)) > m[..., 1])

    def from_mean(self, m):
        return _gamma_from_mean(_arr(m))

    def to_natural(self, values):
        k, rate = np.broadcast_arrays(*(_arr(v) for v in values))
        return np.stack([k - 1.0, -rate], axis=-1)

    def from_natural(self, eta):
        eta = _arr(eta)
        if not (np.all(eta[..., 1] < 0) and np.all(eta[..., 0] > -1)):
            raise DomainError("Gamma natural parameters need eta1 > -1 and eta2 < 0")
        return eta[..., 0] + 1.0, -eta[..., 1]

    def scale_mean(self, m, alpha):
        if not alpha > 0:
            raise NotClosedUnderScalingError("Gamma is only closed under positive scaling")
        m = _arr(m)
        return np.stack([alpha * m[..., 0], m[..., 1] + np.log(alpha)], axis=-1)


class _NegativeBinomial(Family):
    """Counts with ``total_count`` r and success probability p (likelihood only).

    ``log P(k) = lgamma(k + r) - lgamma(k + 1) - lgamma(r) + r log(1 - p) + k log p``.
    """

    name = "NegativeBinomial"
    param_names = ("total_count", "p")
    dim = 0
    proposal = False
    prob_index = 1

    def check_params(self, values):
        r, p = (_arr(v) for v in values)
        if not np.all(r > 0):
            raise DomainError("NegativeBinomial total_count must be positive")
        if not np.all((p > 0) & (p < 1)):
            raise DomainError("NegativeBinomial p must lie in (0, 1)")

    def check_value(self, x):
        x = _arr(x)
        if not np.all((x >= 0) & (x == np.floor(x))):
            raise DomainError("NegativeBinomial values must be non-negative integers")

    def log_prob(self, values, x, logit=False):
        r, p = values
        x = _arr(x)
        if logit:
            lp, lq = log_sigmoid(p), log_sigmoid(-_arr(p))
        else:
            lp, lq = np.log(p), np.log1p(-_arr(p))
        return (special.gammaln(x + r) - special.gammaln(x + 1.0) - special.gammaln(r)
                + r * lq + np.where(x > 0, x * lp, 0.0))

    def _likelihood_only(self, *args, **kwargs):
        raise DomainError("NegativeBinomial is likelihood-only")

    sample_it = suff_stats = to_mean = from_mean = mean_feasible = _likelihood_only
    to_natural = from_natural = _likelihood_only


GAUSSIAN = _Gaussian()
BERNOULLI = _Bernoulli()
BETA = _Beta()
GAMMA = _Gamma()
NEGATIVE_BINOMIAL = _NegativeBinomial()

FAMILIES = {f.name: f for f in (GAUSSIAN, BERNOULLI, BETA, GAMMA, NEGATIVE_BINOMIAL)}


def get_family(name):
    if name == "Poisson":
        # the standard counterexample: c * z is not Poisson for a Poisson z
        raise NotClosedUnderScalingError("Poisson is not supported: it is not closed under rescaling, so "
                                         "inverse-transform reparameterization cannot commute with QEM")
    try:
        return FAMILIES[name]
    except KeyError:
        raise DomainError(f"unknown family {name!r}") from None


# ---------------------------------------------------------------------------
# moment inversions
# ---------------------------------------------------------------------------

def _gamma_from_mean(m):
    m1, m2 = m[..., 0], m[..., 1]
    if not np.all(_Gamma().mean_feasible(m)):
        raise InfeasibleMomentsError("Gamma mean parameters need E[z] > 0 and log E[z] > E[log z]")
    s = np.log(m1) - m2  # > 0
    # Minka's closed-form start for  log k - digamma(k) = s
    k = (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    y = np.log(k)
    for _ in range(100):
        k = np.exp(y)
        g = np.log(k) - digamma(k) - s
        dg = 1.0 - k * trigamma(k)  # d/dy, always negative
        step = g / dg
        y = y - step
        if np.all(np.abs(step) < 1e-12):
            break
    else:
        raise NumericalError("Gamma moment inversion did not converge", {"step": float(np.max(np.abs(step)))})
    k = np.exp(y)
    return k, k / m1


def _inv_digamma(y):
    y = np.asarray(y, dtype=float)
    x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y + 0.5772156649015329))
    for _ in range(6):
        x = x - (digamma(x) - y) / trigamma(x)
    return x


def _beta_residual(la, lb, m):
    ok = (np.abs(la) < 690) & (np.abs(lb) < 690)
    a, b = np.exp(np.where(ok, la, 0.0)), np.exp(np.where(ok, lb, 0.0))
    dab = digamma(a + b)
    res = np.stack([digamma(a) - dab - m[..., 0], digamma(b) - dab - m[..., 1]], axis=-1)
    return np.where(ok[..., None], res, np.inf)


def _beta_from_mean(m):
    if not np.all(_Beta().mean_feasible(m)):
        raise InfeasibleMomentsError("Beta mean parameters need E[log z] < 0, E[log(1-z)] < 0 "
                                     "and exp of both summing below one")
    # a few of Minka's fixed-point sweeps, digamma(a) = m1 + digamma(a + b),
    # give a start that Newton cannot overshoot from
    a = np.ones(m.shape[:-1])
    b = np.ones(m.shape[:-1])
    for _ in range(5):
        dab = digamma(a + b)
        a, b = _inv_digamma(m[..., 0] + dab), _inv_digamma(m[..., 1] + dab)
    la, lb = np.log(a), np.log(b)
    tol = 1e-13 * np.maximum(1.0, np.abs(m).max(axis=-1))
    res = _beta_residual(la, lb, m)
    norm = np.abs(res).max(axis=-1)
    for _ in range(200):
        active = norm > tol
        if not active.any():
            break
        a, b = np.exp(la), np.exp(lb)
        t_ab = trigamma(a + b)
        j11 = a * (trigamma(a) - t_ab)
        j12 = -b * t_ab
        j21 = -a * t_ab
        j22 = b * (trigamma(b) - t_ab)
        det = j11 * j22 - j12 * j21
        with np.errstate(all="ignore"):
            da = (j22 * res[..., 0] - j12 * res[..., 1]) / det
            db = (-j21 * res[..., 0] + j11 * res[..., 1]) / det
        usable = active & np.isfinite(da) & np.isfinite(db)
        da, db = np.where(usable, da, 0.0), np.where(usable, db, 0.0)
        scale = np.ones_like(la)
        accepted = np.zeros_like(usable)
        for _ in range(30):
            trial_la, trial_lb = la - scale * da, lb - scale * db
            trial_norm = np.abs(_beta_residual(trial_la, trial_lb, m)).max(axis=-1)
            newly = usable & ~accepted & (trial_norm < norm)
            la, lb = np.where(newly, trial_la, la), np.where(newly, trial_lb, lb)
            accepted |= newly
            if (accepted | ~usable).all():
                break
            scale = 0.5 * scale
        if not accepted.any():
            break
        res = _beta_residual(la, lb, m)
        norm = np.abs(res).max(axis=-1)
    if not np.all(norm <= 1e3 * tol):
        raise NumericalError("Beta moment inversion did not converge", {"residual": float(norm.max())})
    return np.exp(la), np.exp(lb)


# ---------------------------------------------------------------------------
# parameter containers and the public operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConventionalParams:
    family: Family
    values: tuple

    def __post_init__(self):
        if len(self.values) != self.family.n_params:
            raise DomainError(f"{self.family.name} takes {self.family.n_params} parameters")
        values = tuple(np.asarray(v, dtype=float) for v in self.values)
        self.family.check_params(values)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class NaturalParams:
    family: Family
    eta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))


@dataclass(frozen=True, eq=False)
class MeanParams:
    family: Family
    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.shape[-1:] != (self.family.dim,):
            raise DomainError(f"{self.family.name} mean parameters have {self.family.dim} components")
        object.__setattr__(self, "m", m)

    def feasible(self):
        return self.family.mean_feasible(self.m)


def log_prob(family, params, value):
    if isinstance(params, ConventionalParams):
        params = params.values
    family.check_value(value)
    return family.log_prob(tuple(np.asarray(p, float) for p in params), value)


def sample_it(family, params, u):
    """Inverse-transform sample: the value whose CDF equals ``u``."""
    if isinstance(params, ConventionalParams):
        params = params.values
    u = np.asarray(u, dtype=float)
    if not np.all((u > 0) & (u < 1)):
        raise DomainError("uniform draws must lie strictly inside (0, 1)")
    return family.sample_it(tuple(np.asarray(p, float) for p in params), u)


def sufficient_stats(family, value):
    family.check_value(value)
    return family.suff_stats(value)


def mean_to_conventional(m: MeanParams) -> ConventionalParams:
    return ConventionalParams(m.family, m.family.from_mean(m.m))


def conventional_to_mean(p: ConventionalParams) -> MeanParams:
    return MeanParams(p.family, p.family.to_mean(p.values))


def conventional_to_natural(p: ConventionalParams) -> NaturalParams:
    return NaturalParams(p.family, p.family.to_natural(p.values))


def natural_to_conventional(eta: NaturalParams) -> ConventionalParams:
    return ConventionalParams(eta.family, eta.family.from_natural(eta.eta))


def scale_mean_params(m: MeanParams, alpha: float) -> MeanParams:
    """Mean parameters of ``alpha * z`` when ``z`` has mean parameters ``m``."""
    if alpha == 0:
        raise DomainError("scale factor must be non-zero")
    return MeanParams(m.family, m.family.scale_mean(m.m, alpha))

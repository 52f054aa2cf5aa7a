"""Reference computations that check the engine against slow, independent code.

Everything here avoids the engine's named-tensor machinery.  Expressions are
evaluated by a separate evaluator on a dense "all plates" layout, densities
come from :mod:`scipy.stats`, and sums are literal loops over copy tuples.

* :func:`enumerate_pe` / :func:`enumerate_moments`: brute-force
  ``K**n`` enumeration of the massively parallel estimator for a given
  sample bank.
* :func:`linear_gaussian_posterior`: exact posterior and evidence of a
  model whose means are affine in the latents.
* :func:`discrete_posterior`: exact posterior of models with Bernoulli
  latents, plus at most two scalar Gaussian latents (by Gauss-Hermite).
* :func:`synth_data` / :func:`make_instance`: ancestral simulation of
  datasets with known true latents.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special, stats

from .distributions import BERNOULLI, BETA, GAMMA, GAUSSIAN, NEGATIVE_BINOMIAL, MeanParams
from .errors import EnumerationGuardError, UnsupportedModelError
from .graph import BinOp, Call, Const, Gather, ModelIR, Neg, Ref
from .models import BuiltinModel, get_builtin

ENUMERATION_LIMIT = 10 ** 6


# ---------------------------------------------------------------------------
# independent evaluator: arrays of shape (S, *all plate sizes)
# ---------------------------------------------------------------------------

class _Layout:
    def __init__(self, model: ModelIR):
        self.model = model
        self.plates = [p.name for p in model.plates]
        self.sizes = [p.size for p in model.plates]

    def spread(self, arr, plates, lead=False):
        """Place an array with axes ``plates`` (plus an optional leading state
        axis) into the all-plates layout with a leading state axis."""
        arr = np.asarray(arr, dtype=float)
        if not lead:
            arr = arr[None]
        src = [self.plates.index(p) for p in plates]
        order = np.argsort(src)
        arr = np.transpose(arr, [0] + [1 + int(i) for i in order])
        shape = [arr.shape[0]] + [1] * len(self.plates)
        for j, i in enumerate(sorted(src)):
            shape[1 + i] = arr.shape[1 + j]
        return arr.reshape(shape)

    def collapse(self, arr, plates):
        """Inverse of :meth:`spread`: an array covering ``plates`` (after the
        state axis), taking the first entry along every other plate."""
        arr = np.asarray(arr)
        idx = [slice(None)] + [slice(None) if p in plates else slice(0, 1) for p in self.plates]
        full = [arr.shape[0]] + [s if p in plates else 1 for p, s in zip(self.plates, self.sizes)]
        arr = np.broadcast_to(arr[tuple(idx)], full)
        present = [p for p in self.plates if p in plates]
        arr = arr.reshape([arr.shape[0]] + [s for p, s in zip(self.plates, self.sizes) if p in plates])
        return np.transpose(arr, [0] + [1 + present.index(p) for p in plates])


def _ev(expr, env, layout: _Layout):
    if isinstance(expr, Const):
        return np.float64(expr.value)
    if isinstance(expr, Ref):
        return env[expr.name]
    if isinstance(expr, BinOp):
        a, b = _ev(expr.left, env, layout), _ev(expr.right, env, layout)
        return {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide}[expr.op](a, b)
    if isinstance(expr, Neg):
        return -_ev(expr.operand, env, layout)
    if isinstance(expr, Call):
        a = _ev(expr.arg, env, layout)
        return np.exp(a) if expr.fn == "exp" else special.expit(a)
    if isinstance(expr, Gather):
        table, index = env[expr.table], env[expr.index]
        axes = [i for i in range(len(layout.sizes)) if table.shape[1 + i] > 1 and index.shape[1 + i] == 1]
        if len(axes) != 1:
            raise UnsupportedModelError(f"cannot resolve gather axis for {expr.table}[{expr.index}]")
        ax = 1 + axes[0]
        shape = np.broadcast_shapes(table.shape[:ax] + (1,) + table.shape[ax + 1:], index.shape)
        tb = np.broadcast_to(table, shape[:ax] + (table.shape[ax],) + shape[ax + 1:])
        ix = np.broadcast_to(index, shape).astype(np.intp)
        return np.take_along_axis(tb, ix, axis=ax)
    raise TypeError(expr)


def _is_logit(family, exprs):
    idx = family.prob_index
    return idx is not None and isinstance(exprs[idx], Call) and exprs[idx].fn == "sigmoid"


def _logpdf(family, exprs, x, env, layout):
    """Elementwise log density via scipy.stats (log-sigmoid for logit probabilities)."""
    if _is_logit(family, exprs):
        ell = _ev(exprs[family.prob_index].arg, env, layout)
        if family is BERNOULLI:
            return np.where(x == 1, -np.logaddexp(0.0, -ell), -np.logaddexp(0.0, ell))
        r = _ev(exprs[0], env, layout)
        return stats.nbinom.logpmf(x, r, special.expit(-ell))
    p = [_ev(e, env, layout) for e in exprs]
    if family is GAUSSIAN:
        return stats.norm.logpdf(x, loc=p[0], scale=np.sqrt(p[1]))
    if family is BERNOULLI:
        return stats.bernoulli.logpmf(x, p[0])
    if family is BETA:
        return stats.beta.logpdf(x, p[0], p[1])
    if family is GAMMA:
        return stats.gamma.logpdf(x, p[0], scale=1.0 / p[1])
    if family is NEGATIVE_BINOMIAL:
        return stats.nbinom.logpmf(x, p[0], 1.0 - p[1])
    raise UnsupportedModelError(f"no reference density for {family.name}")


def _proposal_logpdf(conv, x):
    v = [np.asarray(a, dtype=float) for a in conv.values]
    fam = conv.family
    if fam is GAUSSIAN:
        return stats.norm.logpdf(x, loc=v[0], scale=np.sqrt(v[1]))
    if fam is BERNOULLI:
        return stats.bernoulli.logpmf(x, v[0])
    if fam is BETA:
        return stats.beta.logpdf(x, v[0], v[1])
    if fam is GAMMA:
        return stats.gamma.logpdf(x, v[0], scale=1.0 / v[1])
    raise UnsupportedModelError(f"no reference density for {fam.name}")


def _covariate_env(model: ModelIR, layout: _Layout) -> dict:
    env = {}
    for c in model.covariates:
        if c.name in model.data:
            env[c.name] = layout.spread(model.data[c.name], c.plates)
    return env


# ---------------------------------------------------------------------------
# brute-force enumeration of the massively parallel estimator
# ---------------------------------------------------------------------------

def _enumerate(model: ModelIR, bank, q, denominator="permutation"):
    names = list(model.order)
    K = bank.K
    n = len(names)
    if float(K) ** n > ENUMERATION_LIMIT:
        raise EnumerationGuardError(f"K**n = {K}**{n} exceeds {ENUMERATION_LIMIT}")
    conv = getattr(q, "conventional", q)
    parents = model.parents
    # per-latent log densities for every relevant copy tuple, cached by tuple
    cache = {}

    def lat_term(name, ks):
        key = (name, ks[name]) + tuple(ks[p] for p in parents[name])
        if key in cache:
            return cache[key]
        lat = model.latent[name]
        x = bank.values[name][ks[name]]

        def prior_at(copies):
            env = {}
            for c in model.covariates:
                if c.name in model.data:
                    env[c.name] = np.asarray(model.data[c.name], dtype=float)
            for p, kp in copies.items():
                env[p] = bank.values[p][kp]
            return _decl_logpdf(model, lat.prior_family, lat.prior_params, x, lat.plates, env)

        lp = prior_at({p: ks[p] for p in parents[name]})
        if lat.proposal == "prior":
            if denominator == "permutation" or not parents[name]:
                lq = prior_at({p: int(bank.perms[(name, p)][ks[name]]) for p in parents[name]})
            else:
                vals = [prior_at(dict(zip(parents[name], combo)))
                        for combo in itertools.product(range(K), repeat=len(parents[name]))]
                lq = special.logsumexp(vals) - len(parents[name]) * np.log(K)
        else:
            lq = float(np.sum(np.broadcast_to(_proposal_logpdf(conv[name], x), model.shape_of(lat.plates))))
        cache[key] = lp - lq
        return lp - lq

    def obs_term(obs, ks):
        deps = model.obs_deps[obs.name]
        key = (obs.name,) + tuple(ks[d] for d in deps)
        if key in cache:
            return cache[key]
        env = {}
        for c in model.covariates:
            if c.name in model.data:
                env[c.name] = np.asarray(model.data[c.name], dtype=float)
        for d in deps:
            env[d] = bank.values[d][ks[d]]
        x = np.asarray(model.data[obs.source], dtype=float)
        val = _decl_logpdf(model, obs.family, obs.params, x, obs.plates, env)
        cache[key] = val
        return val

    combos, logr = [], []
    for combo in itertools.product(range(K), repeat=n):
        ks = dict(zip(names, combo))
        total = sum(lat_term(nm, ks) for nm in names)
        total += sum(obs_term(o, ks) for o in model.observations)
        combos.append(combo)
        logr.append(total)
    return names, np.array(combos, dtype=np.intp).reshape(-1, n), np.array(logr)


def _decl_logpdf(model, family, exprs, x, plates, env_plain) -> float:
    """Sum of log densities of ``x`` (shaped like ``plates``) with every name in
    ``env_plain`` given in its declared plate order."""
    layout = _Layout(model)
    env = {}
    for name, arr in env_plain.items():
        decl = model.latent.get(name) or model.covariate.get(name)
        env[name] = layout.spread(arr, decl.plates)
    xs = layout.spread(np.broadcast_to(np.asarray(x, dtype=float), model.shape_of(plates)), plates)
    lp = _logpdf(family, exprs, xs, env, layout)
    lp = np.broadcast_to(lp, np.broadcast_shapes(np.shape(lp), xs.shape))
    return float(lp.sum())


def enumerate_pe(model: ModelIR, bank, q, denominator="permutation") -> float:
    """``log P_MP`` by explicit enumeration of every copy tuple."""
    names, _, logr = _enumerate(model, bank, q, denominator)
    return float(special.logsumexp(logr) - len(names) * np.log(bank.K))


def enumerate_moments(model: ModelIR, bank, q, denominator="permutation") -> dict:
    """Self-normalised expected sufficient statistics by explicit enumeration."""
    names, combos, logr = _enumerate(model, bank, q, denominator)
    w = np.exp(logr - special.logsumexp(logr))
    out = {}
    for j, name in enumerate(names):
        fam = model.latent[name].proposal_family
        stats_k = fam.suff_stats(bank.values[name])             # (K, *plates, dim)
        out[name] = np.tensordot(w, stats_k[combos[:, j]], axes=(0, 0))
    return out


# ---------------------------------------------------------------------------
# exact posteriors
# ---------------------------------------------------------------------------

@dataclass
class ExactPosterior:
    moments: dict                  # latent -> (*plates, dim) expected sufficient statistics
    log_evidence: float
    covariance: np.ndarray | None = None
    cells: list = field(default_factory=list)

    @property
    def first_moments(self) -> dict:
        return {k: v[..., 0] for k, v in self.moments.items()}

    def mean_params(self, name) -> MeanParams:
        return MeanParams(GAUSSIAN if self.moments[name].shape[-1] == 2 else BERNOULLI, self.moments[name])


def _latent_cells(model):
    cells = []
    for lat in model.latents:
        shape = model.shape_of(lat.plates)
        for idx in np.ndindex(*shape):
            cells.append((lat.name, idx))
    return cells


def _unflatten(model, z):
    out, i = {}, 0
    for lat in model.latents:
        shape = model.shape_of(lat.plates)
        n = int(np.prod(shape, dtype=np.int64))
        out[lat.name] = np.asarray(z[i:i + n], dtype=float).reshape(shape)
        i += n
    return out


def _affine_probe(model, fn, D, rng):
    """Fit ``fn(z) = c + A z`` by unit probes and check it at random points."""
    z0 = np.zeros(D)
    c = fn(z0)
    A = np.empty((c.size, D))
    for j in range(D):
        e = np.zeros(D)
        e[j] = 1.0
        A[:, j] = fn(e) - c
    for _ in range(3):
        z = rng.normal(0.0, 3.0, D)
        got, lin = fn(z), c + A @ z
        if not np.allclose(got, lin, rtol=1e-8, atol=1e-8 * (1 + np.abs(lin).max(initial=0))):
            raise UnsupportedModelError("a Gaussian mean is not affine in the latents")
    return c, A


def _constant_probe(fn, D, rng):
    v = fn(np.zeros(D))
    for _ in range(3):
        if not np.allclose(fn(rng.normal(0.0, 3.0, D)), v, rtol=1e-12, atol=0):
            raise UnsupportedModelError("a Gaussian variance depends on the latents")
    return v


def linear_gaussian_posterior(model: ModelIR) -> ExactPosterior:
    """Exact posterior of a model with Gaussian latents and observations whose
    means are affine in the latents and whose variances are constant."""
    for d in list(model.latents) + list(model.observations):
        fam = getattr(d, "prior_family", None) or d.family
        if fam is not GAUSSIAN:
            raise UnsupportedModelError(f"{d.name} is not Gaussian")
    layout = _Layout(model)
    cov_env = _covariate_env(model, layout)
    cells = _latent_cells(model)
    D = len(cells)
    rng = np.random.default_rng(12345)

    def pick(decl_plates, expr):
        def fn(z):
            vals = _unflatten(model, z)
            env = dict(cov_env)
            for lat in model.latents:
                env[lat.name] = layout.spread(vals[lat.name], lat.plates)
            out = np.broadcast_to(_ev(expr, env, layout), (1,) + tuple(layout.sizes))
            return layout.collapse(out, decl_plates)[0].ravel()
        return fn

    b, B, v = [], [], []
    for lat in model.latents:
        c, A = _affine_probe(model, pick(lat.plates, lat.prior_params[0]), D, rng)
        b.append(c)
        B.append(A)
        v.append(_constant_probe(pick(lat.plates, lat.prior_params[1]), D, rng))
    b, B, v = np.concatenate(b), np.vstack(B), np.concatenate(v)
    if np.any(v <= 0):
        raise UnsupportedModelError("non-positive prior variance")
    I_B = np.eye(D) - B
    L = I_B.T @ (I_B / v[:, None])
    mu0 = np.linalg.solve(I_B, b)

    cs, Cs, rs, xs = [], [], [], []
    for obs in model.observations:
        c, C = _affine_probe(model, pick(obs.plates, obs.params[0]), D, rng)
        cs.append(c)
        Cs.append(C)
        rs.append(np.broadcast_to(_constant_probe(pick(obs.plates, obs.params[1]), D, rng), c.shape))
        xs.append(np.asarray(model.data[obs.source], dtype=float).ravel())
    if cs:
        c, C, r, x = np.concatenate(cs), np.vstack(Cs), np.concatenate(rs), np.concatenate(xs)
    else:
        c, C, r, x = np.zeros(0), np.zeros((0, D)), np.ones(0), np.zeros(0)

    P = L + C.T @ (C / r[:, None])
    rhs = L @ mu0 + C.T @ ((x - c) / r)
    cho = linalg.cho_factor(P)
    mean = linalg.cho_solve(cho, rhs)
    cov = linalg.cho_solve(cho, np.eye(D))
    Sigma0 = np.linalg.inv(L)
    marg_cov = C @ Sigma0 @ C.T + np.diag(r)
    log_ev = float(stats.multivariate_normal.logpdf(x, mean=c + C @ mu0, cov=marg_cov)) if len(x) else 0.0

    second = mean ** 2 + np.diag(cov)
    m1, m2 = _unflatten(model, mean), _unflatten(model, second)
    moments = {k: np.stack([m1[k], m2[k]], axis=-1) for k in m1}
    return ExactPosterior(moments, log_ev, cov, cells)


def discrete_posterior(model: ModelIR, n_quad: int = 60) -> ExactPosterior:
    """Exact posterior by summing over all Bernoulli configurations.

    Up to two scalar Gaussian latents with constant prior parameters are
    integrated by Gauss-Hermite quadrature.
    """
    layout = _Layout(model)
    cov_env = _covariate_env(model, layout)
    bern, gauss = [], []
    for lat in model.latents:
        if lat.prior_family is BERNOULLI:
            bern.append(lat)
        elif lat.prior_family is GAUSSIAN and not lat.plates and not any(
                not isinstance(p, Const) for p in lat.prior_params):
            gauss.append(lat)
        else:
            raise UnsupportedModelError(f"{lat.name}: only Bernoulli or constant-prior scalar Gaussian latents")
    if len(gauss) > 2:
        raise UnsupportedModelError("at most two continuous latents can be integrated")
    bern_cells = [(lat, idx) for lat in bern for idx in np.ndindex(*model.shape_of(lat.plates))]
    n_states = 2 ** len(bern_cells) * n_quad ** len(gauss)
    if n_states > ENUMERATION_LIMIT:
        raise EnumerationGuardError(f"{n_states} states exceed {ENUMERATION_LIMIT}")

    bits = np.array(list(itertools.product((0.0, 1.0), repeat=len(bern_cells))), dtype=float)
    bits = bits.reshape(2 ** len(bern_cells), len(bern_cells))
    nodes, qw = np.polynomial.hermite_e.hermegauss(n_quad)
    logqw = np.log(qw / np.sqrt(2.0 * np.pi))
    grids = list(itertools.product(range(n_quad), repeat=len(gauss)))
    S = len(bits) * len(grids)

    values = {}
    log_w = np.zeros(S)
    for j, lat in enumerate(gauss):
        mu, var = lat.prior_params[0].value, lat.prior_params[1].value
        qi = np.array([g[j] for g in grids])
        z = mu + np.sqrt(var) * nodes[qi]
        values[lat.name] = np.tile(z, len(bits))
        log_w += np.tile(logqw[qi], len(bits))
    for lat in bern:
        shape = model.shape_of(lat.plates)
        cols = [i for i, (l2, _) in enumerate(bern_cells) if l2 is lat]
        arr = bits[:, cols].reshape((len(bits),) + shape)
        values[lat.name] = np.repeat(arr, len(grids), axis=0)

    env = dict(cov_env)
    for lat in model.latents:
        env[lat.name] = layout.spread(values[lat.name], lat.plates, lead=True)
    log_joint = log_w.copy()
    for lat in bern:
        lp = _logpdf(lat.prior_family, lat.prior_params, env[lat.name], env, layout)
        log_joint += _state_total(lp, lat.plates, layout)
    for obs in model.observations:
        x = layout.spread(np.asarray(model.data[obs.source], dtype=float), obs.plates)
        lp = _logpdf(obs.family, obs.params, x, env, layout)
        log_joint += _state_total(lp, obs.plates, layout)

    log_ev = float(special.logsumexp(log_joint))
    post = np.exp(log_joint - log_ev)
    moments = {}
    for lat in model.latents:
        z = values[lat.name]
        t = lat.prior_family.suff_stats(z)
        moments[lat.name] = np.tensordot(post, t, axes=(0, 0))
    return ExactPosterior(moments, log_ev)


def _state_total(lp, plates, layout):
    full = np.broadcast_to(lp, (lp.shape[0],) + tuple(
        s if p in plates else 1 for p, s in zip(layout.plates, layout.sizes)))
    return full.reshape(full.shape[0], -1).sum(axis=1)


def exact_posterior(model: ModelIR) -> ExactPosterior:
    """Dispatch to whichever exact oracle applies to ``model``."""
    try:
        return linear_gaussian_posterior(model)
    except UnsupportedModelError:
        return discrete_posterior(model)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def _draw(family, exprs, env, layout, rng, plates, model):
    shape = (1,) + tuple(s if p in plates else 1 for p, s in zip(layout.plates, layout.sizes))
    if _is_logit(family, exprs):
        prob = special.expit(_ev(exprs[family.prob_index].arg, env, layout))
        params = [_ev(e, env, layout) for e in exprs]
        params[family.prob_index] = prob
    else:
        params = [_ev(e, env, layout) for e in exprs]
    params = [np.broadcast_to(p, shape) for p in params]
    if family is GAUSSIAN:
        out = params[0] + np.sqrt(params[1]) * rng.standard_normal(shape)
    elif family is BERNOULLI:
        out = (rng.random(shape) < params[0]).astype(float)
    elif family is BETA:
        out = rng.beta(params[0], params[1])
    elif family is GAMMA:
        out = rng.gamma(params[0], 1.0 / params[1])
    elif family is NEGATIVE_BINOMIAL:
        out = rng.negative_binomial(params[0], 1.0 - params[1]).astype(float)
    else:
        raise UnsupportedModelError(family.name)
    return out


def synth_data(model: ModelIR, covariates: dict, seed: int = 0, overrides: dict | None = None,
               n_datasets: int = 1):
    """Simulate latents then observations ancestrally.

    ``overrides`` fixes chosen latents to given values instead of sampling
    them.  Returns ``(truth, datasets)``: the latent values and a list of
    ``n_datasets`` independent observation dicts sharing those latents.
    """
    rng = np.random.default_rng(seed)
    bound = model.bind(covariates)
    layout = _Layout(bound)
    env = _covariate_env(bound, layout)
    truth = {}
    for name in bound.order:
        lat = bound.latent[name]
        if overrides and name in overrides:
            val = np.broadcast_to(np.asarray(overrides[name], dtype=float), bound.shape_of(lat.plates))
            env[name] = layout.spread(val, lat.plates)
        else:
            env[name] = _draw(lat.prior_family, lat.prior_params, env, layout, rng, lat.plates, bound)
        truth[name] = np.array(layout.collapse(env[name], lat.plates)[0])
    datasets = []
    for _ in range(n_datasets):
        d = {}
        for obs in bound.observations:
            x = _draw(obs.family, obs.params, env, layout, rng, obs.plates, bound)
            d[obs.source] = np.array(layout.collapse(x, obs.plates)[0])
        datasets.append(d)
    return truth, datasets


@dataclass(frozen=True, eq=False)
class Instance:
    """A builtin model bound to simulated training data, with held-out data."""

    builtin: BuiltinModel
    model: ModelIR
    test_model: ModelIR
    truth: dict
    seed: int

    def scaled(self, alpha: float) -> "Instance":
        b = self.builtin.scaled(alpha)
        truth = dict(self.truth)
        truth[b.scaled_latent] = truth[b.scaled_latent] / alpha
        return Instance(b, b.structure.bind(self.model.data), b.structure.bind(self.test_model.data), truth,
                        self.seed)

    def exact(self) -> ExactPosterior:
        return exact_posterior(self.model)


def make_instance(name: str | BuiltinModel, seed: int = 0, overrides: dict | None = None, **sizes) -> Instance:
    """Simulate covariates, latents and train/test observations for a builtin."""
    b = name if isinstance(name, BuiltinModel) else get_builtin(name, **sizes)
    rng = np.random.default_rng([seed, 1])
    covs = b.covariates(rng, b.structure) if b.covariates else {}
    if b.id == "occupancy_fixed":
        # continuous parameters of the occupancy model held at plausible values
        J, M = b.structure.plate_sizes["Species"], b.structure.plate_sizes["Years"]
        covs.update({"BirdYearMean": rng.normal(0.0, 1.0, (J, M)), "WeatherWeight": rng.normal(0.0, 1.0, J),
                     "QualityWeight": rng.normal(1.0, 0.5, J)})
    truth, (train, test) = synth_data(b.structure, covs, seed=seed, overrides=overrides, n_datasets=2)
    return Instance(b, b.structure.bind({**covs, **train}), b.structure.bind({**covs, **test}), truth, seed)

"""Massively parallel importance weighting over plated models.

Every latent declaration ``i`` gets ``K`` sampled copies along its own copy
axis.  The importance weight of an index combination ``k = (k_1, ..., k_n)``
factorises into

* one factor per latent over ``{k_i} + {k_j : j in pa(i)}`` holding
  ``log P(z_i^{k_i} | z_pa^{k_pa}) - log Q(z_i^{k_i} | ...)``, and
* one factor per observation over the copy axes of the latents it reads,

with every plate axis already summed into the tables.  Summing ``K**n``
combinations is done by log-space variable elimination.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .distributions import ConventionalParams, MeanParams
from .errors import BroadcastError, DegenerateWeightsError, NumericalError, RankCapError, SchemaError
from .graph import (Call, Gather, ModelIR, Tensor, broadcast_apply, copy_axis, eval_expr, latent_refs, union_dims,
                    _walk)

DEFAULT_RANK_CAP = 4
# observation factors are evaluated in slices once their dense tensor would
# hold more elements than this
CHUNK_ELEMENTS = 1 << 22
SAMPLE_AXIS = "K:#sample"   # internal axes share the copy-axis prefix so plate sums skip them
JOINT_AXIS = "K:#joint"


# ---------------------------------------------------------------------------
# counter-based random streams
# ---------------------------------------------------------------------------

def stream(seed: int, iteration: int, key: str, purpose: int = 0) -> np.random.Generator:
    """Independent Philox generator keyed by (seed, iteration, key, purpose)."""
    ss = np.random.SeedSequence([int(seed) % (1 << 63), int(iteration), zlib.crc32(key.encode()), purpose])
    return np.random.Generator(np.random.Philox(ss))


def open_uniforms(gen: np.random.Generator, shape) -> np.ndarray:
    """Uniform draws on the open interval (0, 1) from 53 random bits."""
    n = int(np.prod(shape, dtype=np.int64))
    raw = gen.bit_generator.random_raw(n)
    return (((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53).reshape(shape)


def derive_seed(seed: int, iteration: int, key: str) -> int:
    ss = np.random.SeedSequence([int(seed) % (1 << 63), int(iteration), zlib.crc32(key.encode())])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------------------
# sample bank
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SampleBank:
    K: int
    values: dict          # latent -> array (K, *plate sizes)
    xi: dict              # latent -> uniforms of the same shape
    perms: dict           # (child, parent) -> permutation of range(K)
    seed: int = 0
    iteration: int = 0

    def tensor(self, model: ModelIR, name: str, axis: str | None = None) -> Tensor:
        return Tensor(self.values[name], (axis or copy_axis(name),) + model.latent[name].plates)


def _proposal_params(q, name) -> ConventionalParams:
    conv = getattr(q, "conventional", q)
    return conv[name]


def _split_logit(family, exprs):
    """Evaluate a probability written as ``sigmoid(e)`` through ``e`` on the logit scale."""
    idx = family.prob_index
    if idx is not None and isinstance(exprs[idx], Call) and exprs[idx].fn == "sigmoid":
        exprs = exprs[:idx] + (exprs[idx].arg,) + exprs[idx + 1:]
        return exprs, True
    return exprs, False


def _eval_params(family, exprs, bindings):
    exprs, logit = _split_logit(family, tuple(exprs))
    return tuple(eval_expr(e, bindings) for e in exprs), logit


def _log_prob(family, params, value: Tensor, logit) -> Tensor:
    def fn(*arrs):
        return family.log_prob(arrs[:-1], arrs[-1], logit)
    with np.errstate(divide="ignore", invalid="ignore"):
        return broadcast_apply(fn, *params, value)


def _base_bindings(model: ModelIR) -> dict:
    return {c.name: model.covariate_tensor(c.name) for c in model.covariates if c.name in model.data}


def draw_sample_bank(model: ModelIR, q, seed: int, K: int, iteration: int = 0, mixing: bool = True) -> SampleBank:
    """Draw ``K`` copies of every latent by inverse-transform sampling.

    Latents with ``proposal = "prior"`` are drawn from their prior given one
    parent copy each, chosen through a random permutation of the parent's
    copies (``mixing=False`` uses identity permutations, i.e. joint samples).
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    bindings = _base_bindings(model)
    values, xis, perms = {}, {}, {}
    for name in model.order:
        lat = model.latent[name]
        shape = (K,) + model.shape_of(lat.plates)
        xi = open_uniforms(stream(seed, iteration, name, 0), shape)
        for parent in model.parents[name]:
            if mixing and K > 1:
                perms[(name, parent)] = stream(seed, iteration, name + "|" + parent, 1).permutation(K)
            else:
                perms[(name, parent)] = np.arange(K)
        dims = (copy_axis(name),) + lat.plates
        if lat.proposal == "prior":
            local = dict(bindings)
            for parent in model.parents[name]:
                pv = values[parent][perms[(name, parent)]]
                local[parent] = Tensor(pv, (copy_axis(name),) + model.latent[parent].plates)
            params, logit = _eval_params(lat.prior_family, lat.prior_params, local)
            arrs = tuple(np.broadcast_to(p.align(dims), shape) for p in params)
            z = lat.prior_family.sample_it(arrs, xi, logit)
        else:
            conv = _proposal_params(q, name)
            arrs = tuple(np.broadcast_to(np.asarray(v)[None], shape) for v in conv.values)
            z = conv.family.sample_it(arrs, xi)
        values[name] = np.ascontiguousarray(np.broadcast_to(z, shape), dtype=float)
        xis[name] = xi
    return SampleBank(K, values, xis, perms, seed, iteration)


# ---------------------------------------------------------------------------
# log factors
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LogFactor:
    axes: tuple
    table: np.ndarray
    label: str = ""

    @property
    def tensor(self) -> Tensor:
        return Tensor(self.table, self.axes)


def _plate_sum(t: Tensor) -> Tensor:
    return t.sum_over([d for d in t.dims if not d.startswith("K:")])


def _latent_bindings(model, bank, base):
    b = dict(base)
    for lat in model.latents:
        b[lat.name] = bank.tensor(model, lat.name)
    return b


def _check_finite(t: np.ndarray, what: str):
    if np.isnan(t).any():
        raise NumericalError(f"NaN in {what}", {"factor": what})


def build_log_factors(model: ModelIR, bank: SampleBank, q, denominator: str = "permutation",
                      rank_cap: int = DEFAULT_RANK_CAP) -> list:
    """Log-weight factors whose joint log-sum-exp equals ``log sum_k r_k``.

    ``denominator`` selects how a prior-proposal latent's proposal density is
    evaluated: ``"permutation"`` uses the parent copy its sample was drawn
    from, ``"mixture"`` averages over all parent copies.
    """
    if denominator not in ("permutation", "mixture"):
        raise ValueError(f"unknown denominator convention {denominator!r}")
    base = _base_bindings(model)
    bindings = _latent_bindings(model, bank, base)
    factors = []
    for name in model.order:
        lat = model.latent[name]
        parents = model.parents[name]
        axes = (copy_axis(name),) + tuple(copy_axis(p) for p in parents)
        if len(axes) > rank_cap:
            raise RankCapError(f"factor of {name!r} spans {len(axes)} copy axes (cap {rank_cap})")
        params, logit = _eval_params(lat.prior_family, lat.prior_params, bindings)
        prior = _plate_sum(_log_prob(lat.prior_family, params, bindings[name], logit))
        prior_table = Tensor(np.broadcast_to(prior.align(axes), (bank.K,) * len(axes)), axes)
        if lat.proposal == "prior":
            if denominator == "permutation" or not parents:
                idx = (np.arange(bank.K),) + tuple(bank.perms[(name, p)] for p in parents)
                logq = prior_table.values[idx]
            else:
                logq = _logsumexp(prior_table.values, tuple(range(1, len(axes)))) - len(parents) * np.log(bank.K)
        else:
            conv = _proposal_params(q, name)
            qparams = tuple(Tensor(np.asarray(v), lat.plates) for v in conv.values)
            logq = _plate_sum(_log_prob(conv.family, qparams, bindings[name], False)).align((copy_axis(name),))
        table = prior_table.values - np.reshape(logq, (bank.K,) + (1,) * len(parents))
        _check_finite(table, name)
        factors.append(LogFactor(axes, table, name))
    for obs in model.observations:
        deps = model.obs_deps[obs.name]
        axes = tuple(copy_axis(d) for d in deps)
        if len(axes) > rank_cap:
            raise RankCapError(f"observation {obs.name!r} spans {len(axes)} copy axes (cap {rank_cap})")
        t = _observation_factor(model, obs, bindings, bank.K)
        table = np.broadcast_to(t.align(axes), (bank.K,) * len(axes)).copy()
        _check_finite(table, obs.name)
        factors.append(LogFactor(axes, table, obs.name))
    return factors


def _gather_axes(obs, model):
    out = set()
    for e in obs.params:
        for node in _walk(e):
            if isinstance(node, Gather):
                table = model.latent.get(node.table) or model.covariate.get(node.table)
                index = model.covariate[node.index]
                out |= set(table.plates) - set(index.plates)
    return out


def _observation_factor(model, obs, bindings, K) -> Tensor:
    """Observation log-likelihood summed over its plates, as a copy-axis tensor."""
    value = model.observed_tensor(obs)
    deps = model.obs_deps[obs.name]
    if obs.family.name == "Gaussian":
        # squared errors never carry the variance's copy axes
        rank = max(len(latent_refs(e, model)) for e in obs.params)
    else:
        rank = len(deps)
    dense = K ** rank * int(np.prod(model.shape_of(obs.plates), dtype=np.int64))
    candidates = [p for p in obs.plates if p not in _gather_axes(obs, model)]
    if dense <= CHUNK_ELEMENTS or not candidates:
        return _obs_chunk(obs, bindings, value)
    plate = max(candidates, key=lambda p: model.plate_sizes[p])
    n = model.plate_sizes[plate]
    step = max(1, int(n * CHUNK_ELEMENTS // dense))
    total = None
    for start in range(0, n, step):
        sl = slice(start, min(n, start + step))
        local = {k: _slice(t, plate, sl) for k, t in bindings.items()}
        part = _obs_chunk(obs, local, _slice(value, plate, sl))
        total = part if total is None else broadcast_apply(np.add, total, part)
    return total


def _slice(t: Tensor, dim, sl) -> Tensor:
    if dim not in t.dims:
        return t
    index = [slice(None)] * len(t.dims)
    index[t.dims.index(dim)] = sl
    return Tensor(t.values[tuple(index)], t.dims)


def _obs_chunk(obs, bindings, value: Tensor) -> Tensor:
    params, logit = _eval_params(obs.family, obs.params, bindings)
    if obs.family.name == "Gaussian":
        return _gaussian_obs(params[0], params[1], value)
    return _plate_sum(_log_prob(obs.family, params, value, logit))


def _gaussian_obs(mean: Tensor, var: Tensor, x: Tensor) -> Tensor:
    """Summed Gaussian log-likelihood, reducing squared errors over plates the
    variance does not vary over before combining with the variance."""
    if np.any(var.values <= 0):
        raise NumericalError("non-positive Gaussian variance in an observation", {})
    d = broadcast_apply(np.subtract, x, mean)
    d2 = Tensor(d.values * d.values, d.dims)
    plates = list(x.dims)
    var_plates = [p for p in var.dims if not p.startswith("K:")]
    rest = [p for p in plates if p not in var_plates]
    n_rest = int(np.prod([x.sizes[p] for p in rest], dtype=np.int64))
    a = d2.sum_over(rest)
    half_prec = Tensor(0.5 / var.values, var.dims)
    quad = named_einsum([a, half_prec], [d for d in union_dims(a, half_prec) if d.startswith("K:")])
    logv = Tensor(np.log(2 * np.pi * var.values), var.dims)
    norm = logv.sum_over(var_plates)
    # each variance cell is shared by n_rest data points
    norm = Tensor(norm.values * (0.5 * n_rest), norm.dims)
    return broadcast_apply(lambda q_, n_: -q_ - n_, quad, norm)


def named_einsum(tensors, out_dims) -> Tensor:
    letters = {}
    for t in tensors:
        for d in t.dims:
            letters.setdefault(d, chr(ord("a") + len(letters)))
    spec = ",".join("".join(letters[d] for d in t.dims) for t in tensors)
    spec += "->" + "".join(letters[d] for d in out_dims)
    return Tensor(np.einsum(spec, *(t.values for t in tensors), optimize=len(tensors) > 2), tuple(out_dims))


# ---------------------------------------------------------------------------
# elimination
# ---------------------------------------------------------------------------

def _logsumexp(a: np.ndarray, axis) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


@dataclass
class EliminationPlan:
    order: list
    ranks: list

    @property
    def peak_rank(self) -> int:
        return max(self.ranks, default=0)


def plan_elimination(factors, keep=()) -> EliminationPlan:
    """Greedy min-rank elimination order, ties broken by axis name."""
    sets = [set(f.axes) for f in factors]
    remaining = sorted({a for s in sets for a in s} - set(keep))
    order, ranks = [], []
    while remaining:
        best = None
        for a in remaining:
            u = set().union(*(s for s in sets if a in s))
            if best is None or len(u) < best[0]:
                best = (len(u), a, u)
        r, a, u = best
        sets = [s for s in sets if a not in s] + [u - {a}]
        order.append(a)
        ranks.append(r)
        remaining.remove(a)
    return EliminationPlan(order, ranks)


@dataclass
class _Step:
    axis: str
    combined: Tensor


class Contractor:
    """Runs eliminations over a fixed factor list, memoising every step.

    A step is keyed by the ids of the factors it combines and the axis it
    removes, so the shared prefixes of the per-latent marginal computations
    are computed once.
    """

    def __init__(self, factors, rank_cap: int = DEFAULT_RANK_CAP):
        self.tables = {i: f.tensor for i, f in enumerate(factors)}
        self.base = list(range(len(factors)))
        self.rank_cap = rank_cap
        self.cache = {}
        self.peak_rank = 0
        self.n_axes = len({a for f in factors for a in f.axes})

    def run(self, keep=(), order=None):
        ids = list(self.base)
        axes = {a for i in ids for a in self.tables[i].dims} - set(keep)
        steps = []
        while axes:
            if order is not None:
                a = order[len(steps)]
                inv = [i for i in ids if a in self.tables[i].dims]
            else:
                best = None
                for cand in sorted(axes):
                    inv_c = [i for i in ids if cand in self.tables[i].dims]
                    r = len(union_dims(*(self.tables[i] for i in inv_c)))
                    if best is None or r < best[0]:
                        best = (r, cand, inv_c)
                _, a, inv = best
            key = (tuple(sorted(inv)), a)
            if key not in self.cache:
                parts = [self.tables[i] for i in inv]
                dims = union_dims(*parts)
                if len(dims) > self.rank_cap:
                    raise RankCapError(f"eliminating {a!r} needs a factor over {len(dims)} copy axes "
                                       f"(cap {self.rank_cap})")
                total = parts[0].align(dims)
                for p in parts[1:]:
                    total = total + p.align(dims)
                shape = tuple(max(s) for s in zip(*(p.align(dims).shape for p in parts)))
                combined = Tensor(np.broadcast_to(total, shape), dims)
                msg_dims = tuple(d for d in dims if d != a)
                msg = Tensor(_logsumexp(combined.values, dims.index(a)), msg_dims)
                new_id = len(self.tables)
                self.tables[new_id] = msg
                self.cache[key] = (new_id, combined)
            new_id, combined = self.cache[key]
            self.peak_rank = max(self.peak_rank, len(combined.dims))
            steps.append(_Step(a, combined))
            ids = [i for i in ids if i not in inv] + [new_id]
            axes.discard(a)
        return ids, steps

    def log_total(self) -> float:
        """``log sum_k exp(sum of factors)`` (no 1/K**n)."""
        ids, _ = self.run()
        total = float(sum(float(self.tables[i].values) for i in ids))
        if np.isnan(total):
            raise NumericalError("log evidence is NaN", {})
        if total == -np.inf:
            raise DegenerateWeightsError("every importance weight is zero")
        return total

    def marginal(self, axis) -> np.ndarray:
        """Log-weights over one copy axis with all others summed out."""
        ids, _ = self.run(keep=(axis,))
        out = np.zeros(())
        for i in ids:
            t = self.tables[i]
            out = out + (t.align((axis,)) if t.dims else t.values)
        return out


def log_evidence(factors, plan: EliminationPlan | None = None, rank_cap: int = DEFAULT_RANK_CAP) -> float:
    """``log[(1/K**n) sum_k exp(sum of factors)]`` by sequential log-space contraction."""
    c = Contractor(factors, rank_cap)
    ids, _ = c.run(order=plan.order if plan is not None else None)
    total = float(sum(float(c.tables[i].values) for i in ids))
    if np.isnan(total):
        raise NumericalError("log evidence is NaN", {})
    if total == -np.inf:
        raise DegenerateWeightsError("every importance weight is zero")
    return total - c.n_axes * np.log(_axis_size(factors))


def _axis_size(factors) -> int:
    for f in factors:
        if f.axes:
            return f.table.shape[0]
    return 1


@dataclass
class MomentEstimate:
    moments: dict                  # latent -> MeanParams over its plate cells
    log_evidence: float
    weights: dict = field(default_factory=dict)   # latent -> normalised weights over its copies
    peak_rank: int = 0


def _suff_stats(model, name, values):
    fam = model.latent[name].prior_family
    return fam.suff_stats(values)


def posterior_moments(model: ModelIR, bank: SampleBank, factors, fresh_log_evidence: float | None = None,
                      rank_cap: int = DEFAULT_RANK_CAP) -> MomentEstimate:
    """Self-normalised MPIW moments of every latent.

    With ``fresh_log_evidence`` the weights are instead normalised by that
    (independent) evidence estimate, which makes the estimator unbiased.
    """
    c = Contractor(factors, rank_cap)
    total = c.log_total()
    n = len(model.latents)
    logpe = total - n * np.log(bank.K)
    moments, weights = {}, {}
    for lat in model.latents:
        lw = c.marginal(copy_axis(lat.name))
        lw = np.broadcast_to(lw, (bank.K,))
        w = np.exp(lw - _logsumexp(lw, 0))
        if fresh_log_evidence is not None:
            w = w * np.exp(logpe - fresh_log_evidence)
        weights[lat.name] = w
        stats = _suff_stats(model, lat.name, bank.values[lat.name])
        moments[lat.name] = MeanParams(lat.prior_family, np.tensordot(w, stats, axes=(0, 0)))
    return MomentEstimate(moments, logpe, weights, c.peak_rank)


def fresh_denominator_evidence(model: ModelIR, q, seed: int, K: int, iteration: int = 0,
                               rank_cap: int = DEFAULT_RANK_CAP) -> float:
    """Log evidence from a second bank drawn with a seed derived from ``seed``."""
    fresh = derive_seed(seed, iteration, "fresh")
    bank = draw_sample_bank(model, q, fresh, K, iteration)
    return log_evidence(build_log_factors(model, bank, q, rank_cap=rank_cap), rank_cap=rank_cap)


# ---------------------------------------------------------------------------
# resampling and prediction
# ---------------------------------------------------------------------------

def backward_resample(factors, plan: EliminationPlan | None, seed: int, count: int,
                      rank_cap: int = DEFAULT_RANK_CAP) -> dict:
    """Draw ``count`` index combinations with probability proportional to ``r_k``.

    Returns ``{copy axis: int array (count,)}``.  Sampling runs backwards over
    the elimination steps: each step's combined table, conditioned on the
    axes that were eliminated after it, is a categorical over its own axis.
    """
    c = Contractor(factors, rank_cap)
    ids, steps = c.run(order=plan.order if plan is not None else None)
    if sum(float(c.tables[i].values) for i in ids) == -np.inf:
        raise DegenerateWeightsError("every importance weight is zero")
    gen = stream(seed, 0, "backward", 2)
    u = open_uniforms(gen, (len(steps), count))
    chosen = {}
    for j in range(len(steps) - 1, -1, -1):
        step = steps[j]
        others = tuple(d for d in step.combined.dims if d != step.axis)
        table = step.combined.align(others + (step.axis,))
        index = tuple(chosen[d] for d in others)
        logits = table[index] if others else np.broadcast_to(table, (count, table.shape[-1]))
        logits = logits - np.max(logits, axis=-1, keepdims=True)
        p = np.exp(logits)
        cdf = np.cumsum(p, axis=-1)
        cdf /= cdf[:, -1:]
        k = np.minimum((u[j][:, None] > cdf).sum(axis=-1), table.shape[-1] - 1)
        chosen[step.axis] = k
    return chosen


def samples_by_latent(samples: Mapping) -> dict:
    return {axis[2:]: k for axis, k in samples.items()}


def predictive_log_likelihood(test_model: ModelIR, bank: SampleBank, samples: Mapping) -> float:
    """``log[(1/S) sum_s exp(test log-likelihood at z^{k_s})]``.

    ``test_model`` must declare the same latents (names and plate sizes) as
    the model the bank was drawn from; its observations carry the test data.
    """
    by_latent = samples_by_latent(samples) if any(k.startswith("K:") for k in samples) else dict(samples)
    S = None
    bindings = _base_bindings(test_model)
    for lat in test_model.latents:
        if lat.name not in bank.values:
            raise SchemaError(f"test model latent {lat.name!r} is not in the sample bank")
        vals = bank.values[lat.name]
        if vals.shape[1:] != test_model.shape_of(lat.plates):
            raise SchemaError(f"latent {lat.name!r} has plate shape {vals.shape[1:]} in the bank but "
                              f"{test_model.shape_of(lat.plates)} in the test model")
        idx = np.asarray(by_latent[lat.name])
        S = len(idx)
        bindings[lat.name] = Tensor(vals[idx], (SAMPLE_AXIS,) + lat.plates)
    if S is None:
        raise SchemaError("no latents to condition on")
    total = np.zeros(S)
    for obs in test_model.observations:
        if obs.source not in test_model.data:
            raise SchemaError(f"test data lacks column {obs.source!r}")
        params, logit = _eval_params(obs.family, obs.params, bindings)
        ll = _plate_sum(_log_prob(obs.family, params, test_model.observed_tensor(obs), logit))
        total = total + np.broadcast_to(ll.sum_over([d for d in ll.dims if d != SAMPLE_AXIS]).align((SAMPLE_AXIS,)), (S,))
    return float(_logsumexp(total, 0) - np.log(S))


# ---------------------------------------------------------------------------
# global importance weighting
# ---------------------------------------------------------------------------

def global_log_weights(model: ModelIR, bank: SampleBank, q) -> np.ndarray:
    """``log r_k`` of the K joint samples ``(z_1^k, ..., z_n^k)``."""
    base = _base_bindings(model)
    b = dict(base)
    for lat in model.latents:
        b[lat.name] = bank.tensor(model, lat.name, JOINT_AXIS)
    logr = np.zeros(bank.K)
    for name in model.order:
        lat = model.latent[name]
        params, logit = _eval_params(lat.prior_family, lat.prior_params, b)
        lp = _plate_sum(_log_prob(lat.prior_family, params, b[name], logit))
        if lat.proposal == "prior":
            lq = lp
        else:
            conv = _proposal_params(q, name)
            qparams = tuple(Tensor(np.asarray(v), lat.plates) for v in conv.values)
            lq = _plate_sum(_log_prob(conv.family, qparams, b[name], False))
        logr = logr + (np.broadcast_to(lp.align((JOINT_AXIS,)), (bank.K,))
                       - np.broadcast_to(lq.align((JOINT_AXIS,)), (bank.K,)))
    for obs in model.observations:
        params, logit = _eval_params(obs.family, obs.params, b)
        value = model.observed_tensor(obs)
        ll = _plate_sum(_log_prob(obs.family, params, value, logit))
        logr = logr + np.broadcast_to(ll.align((JOINT_AXIS,)), (bank.K,))
    _check_finite(logr, "global weights")
    return logr


def global_iw(model: ModelIR, q, seed: int, K: int, iteration: int = 0, bank: SampleBank | None = None) -> MomentEstimate:
    """Self-normalised importance weighting over K joint samples (no index mixing)."""
    if bank is None:
        bank = draw_sample_bank(model, q, seed, K, iteration, mixing=False)
    logr = global_log_weights(model, bank, q)
    total = float(_logsumexp(logr, 0))
    if total == -np.inf:
        raise DegenerateWeightsError("every importance weight is zero")
    w = np.exp(logr - total)
    moments = {}
    for lat in model.latents:
        stats = _suff_stats(model, lat.name, bank.values[lat.name])
        moments[lat.name] = MeanParams(lat.prior_family, np.tensordot(w, stats, axes=(0, 0)))
    return MomentEstimate(moments, total - np.log(K), {lat.name: w for lat in model.latents}, 1)


# ---------------------------------------------------------------------------
# memory bound
# ---------------------------------------------------------------------------

def predicted_peak_rank(model: ModelIR) -> int:
    """``max(1 + |pa(i)|)`` over latents, with observations counted as
    parentless children of the latents they read (``|deps(o)|``)."""
    ranks = [1 + len(model.parents[n]) for n in model.order]
    ranks += [len(d) for d in model.obs_deps.values()]
    return max(ranks, default=0)


def measured_peak_rank(model: ModelIR, q, seed: int = 0, K: int = 2, rank_cap: int = DEFAULT_RANK_CAP) -> int:
    bank = draw_sample_bank(model, q, seed, K)
    c = Contractor(build_log_factors(model, bank, q, rank_cap=rank_cap), rank_cap)
    c.log_total()
    return c.peak_rank

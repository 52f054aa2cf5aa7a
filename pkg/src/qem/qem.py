"""The QEM loop: MPIW E-step, moment-matching M-step, EMA over mean parameters.

``lambda`` is always the weight on *history*::

    m_t = lambda_t * m_{t-1} + (1 - lambda_t) * m_new

Fixed mode is configured through the new-sample weight ``w`` (``lambda = 1 - w``);
scheduled mode uses ``lambda_t = 1 - t**(-p)``, which discards the
initialisation at ``t = 1`` and averages all later estimates with weights
that make the running mean unbiased with vanishing variance.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import mpiw_engine as eng
from .distributions import (ConventionalParams, MeanParams, NaturalParams, conventional_to_mean,
                            conventional_to_natural, mean_to_conventional, natural_to_conventional)
from .errors import DomainError, InfeasibleMomentsError, MStepError, NumericalError, QEMError
from .graph import ModelIR


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmaConfig:
    mode: str = "scheduled"     # "fixed" or "scheduled"
    new_weight: float = 0.3     # fixed mode: weight of the new estimate
    p: float = 0.5              # scheduled mode exponent

    def __post_init__(self):
        if self.mode == "fixed":
            if not 0 < self.new_weight <= 1:
                raise DomainError("fixed EMA new_weight must lie in (0, 1]")
        elif self.mode == "scheduled":
            if not 0 < self.p < 1:
                raise DomainError("scheduled EMA exponent p must lie in (0, 1)")
        else:
            raise DomainError(f"unknown EMA mode {self.mode!r}")


@dataclass(frozen=True)
class QemConfig:
    K: int = 30
    iterations: int = 250
    seed: int = 0
    ema: EmaConfig = field(default_factory=EmaConfig)
    denominator: str = "self_normalized"   # or "fresh_sample"
    variance_floor: float = 1e-8
    bernoulli_floor: float = 1e-3          # keeps both outcomes reachable so a cell can recover
    estimator: str = "mpiw"                # or "global_iw"
    adapt: bool = True                     # False keeps the initial proposal (fixed-proposal MPIW)
    mixing: str = "permutation"            # denominator convention for prior proposals
    rank_cap: int = eng.DEFAULT_RANK_CAP
    predictive_samples: int = 100
    timing: bool = True

    def __post_init__(self):
        if self.K < 1 or self.iterations < 1:
            raise DomainError("K and iterations must be at least 1")
        if self.denominator not in ("self_normalized", "fresh_sample"):
            raise DomainError(f"unknown denominator mode {self.denominator!r}")
        if self.estimator not in ("mpiw", "global_iw"):
            raise DomainError(f"unknown estimator {self.estimator!r}")
        if not self.variance_floor > 0:
            raise DomainError("variance_floor must be positive")
        if not 0 < self.bernoulli_floor < 0.5:
            raise DomainError("bernoulli_floor must lie in (0, 0.5)")


def lambda_of(t: int, ema: EmaConfig) -> float:
    """History weight at iteration ``t`` (1-based)."""
    if t < 1:
        raise DomainError("iterations are numbered from 1")
    if ema.mode == "fixed":
        return 1.0 - ema.new_weight
    return 1.0 - float(t) ** (-ema.p)


def ema_update(m_prev: MeanParams, m_new: MeanParams, lam: float) -> MeanParams:
    if m_prev.family is not m_new.family:
        raise DomainError(f"cannot average {m_prev.family.name} and {m_new.family.name} mean parameters")
    if lam == 0:
        return MeanParams(m_new.family, m_new.m.copy())
    return MeanParams(m_new.family, lam * m_prev.m + (1.0 - lam) * m_new.m)


# ---------------------------------------------------------------------------
# proposal state
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QState:
    """Proposal of every independently-proposed latent.

    ``mean[name]`` holds per-cell mean parameters (plate shape + family dim)
    and ``conventional[name]`` the matching conventional parameters.
    """

    mean: dict
    conventional: dict
    clamp_count: int = 0

    @classmethod
    def initial(cls, model: ModelIR) -> "QState":
        mean, conv = {}, {}
        for lat in model.latents:
            if lat.proposal != "independent":
                continue
            shape = model.shape_of(lat.plates) + (lat.proposal_family.dim,)
            m = MeanParams(lat.proposal_family, np.broadcast_to(lat.proposal_init.m, shape).copy())
            mean[lat.name] = m
            conv[lat.name] = mean_to_conventional(m)
        return cls(mean, conv, 0)

    @property
    def families(self) -> dict:
        return {k: v.family for k, v in self.mean.items()}


def _gaussian_m_step(m: np.ndarray, floor: float):
    mu = m[..., 0]
    m2 = m[..., 1]
    var = m2 - mu * mu
    # the floor is relative to the second moment so that it commutes with
    # rescaling of the latent; it falls back to an absolute floor at m2 = 0
    limit = np.where(m2 > 0, floor * m2, floor)
    clamped = ~(var >= limit)
    var = np.where(clamped, limit, var)
    fixed = np.where(clamped[..., None], np.stack([mu, mu * mu + var], axis=-1), m)
    return (mu, var), fixed, int(np.count_nonzero(clamped))


def m_step(q: QState, m: dict, floor: float = 1e-8, bernoulli_floor: float = 1e-3) -> QState:
    """Moment-match every proposal to ``m`` (clamping degenerate moments).

    Gaussian variances are held above ``floor`` times the second moment and
    Bernoulli probabilities are clipped to ``[bernoulli_floor, 1 - bernoulli_floor]``.
    """
    mean, conv = dict(q.mean), dict(q.conventional)
    clamps = 0
    for name, mp in m.items():
        if name not in q.mean:
            continue
        fam = q.mean[name].family
        if mp.family is not fam:
            raise MStepError(name, f"mean parameters of family {mp.family.name}, proposal is {fam.name}")
        arr = np.asarray(mp.m, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise MStepError(name, "non-finite moment estimate")
        if fam.name == "Gaussian":
            values, arr, n = _gaussian_m_step(arr, floor)
            clamps += n
            c = ConventionalParams(fam, values)
        elif fam.name == "Bernoulli":
            p = np.clip(arr[..., 0], bernoulli_floor, 1.0 - bernoulli_floor)
            clamps += int(np.count_nonzero(p != arr[..., 0]))
            arr = p[..., None]
            c = ConventionalParams(fam, (p,))
        else:
            if not np.all(fam.mean_feasible(arr)):
                raise MStepError(name, f"infeasible {fam.name} moments")
            try:
                c = mean_to_conventional(MeanParams(fam, arr))
            except (NumericalError, InfeasibleMomentsError, DomainError) as exc:
                raise MStepError(name, str(exc)) from exc
        conv[name] = c
        mean[name] = MeanParams(fam, arr)
    return QState(mean, conv, clamps)


def ema_over_natural(q: QState, eta_new: dict, lam: float) -> QState:
    """Negative control: EMA of natural parameters instead of mean parameters."""
    mean, conv = dict(q.mean), dict(q.conventional)
    for name, eta in eta_new.items():
        prev = conventional_to_natural(q.conventional[name])
        if eta.family is not prev.family:
            raise DomainError("family mismatch in natural-parameter EMA")
        mixed = NaturalParams(eta.family, lam * prev.eta + (1.0 - lam) * eta.eta) if lam else eta
        c = natural_to_conventional(mixed)
        conv[name] = c
        mean[name] = conventional_to_mean(c)
    return QState(mean, conv, 0)


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------

@dataclass
class TraceRow:
    iter: int
    lam: float
    log_evidence: float
    moments: dict                      # latent -> ndarray (plate shape + dim), post-EMA
    clamp_count: int = 0
    elapsed_ms: float | None = None
    predictive_ll: float | None = None
    moment_mse: float | None = None


def _cell_names(name, shape):
    if not shape:
        return [name]
    return [f"{name}[{','.join(map(str, idx))}]" for idx in np.ndindex(*shape)]


def fmt(x) -> str:
    """Shortest round-trip decimal; empty for missing values."""
    if x is None:
        return ""
    return repr(float(x))


@dataclass
class Trace:
    rows: list = field(default_factory=list)
    latents: tuple = ()

    def __len__(self):
        return len(self.rows)

    def first_moments(self, name) -> np.ndarray:
        """(T, *plates) array of post-EMA first moments of one latent."""
        return np.stack([r.moments[name][..., 0] for r in self.rows])

    def mean_params(self, name) -> np.ndarray:
        return np.stack([r.moments[name] for r in self.rows])

    @property
    def log_evidence(self) -> np.ndarray:
        return np.array([r.log_evidence for r in self.rows])

    @property
    def moment_mse(self) -> np.ndarray:
        return np.array([np.nan if r.moment_mse is None else r.moment_mse for r in self.rows])

    def columns(self) -> list:
        cols = ["iter", "lambda", "log_evidence", "predictive_ll", "moment_mse"]
        if self.rows:
            for name in self.latents:
                cols += _cell_names(name, self.rows[0].moments[name].shape[:-1])
        return cols + ["clamp_count", "elapsed_ms"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for r in self.rows:
            cells = [str(r.iter), fmt(r.lam), fmt(r.log_evidence), fmt(r.predictive_ll), fmt(r.moment_mse)]
            for name in self.latents:
                cells += [fmt(v) for v in np.asarray(r.moments[name][..., 0]).ravel()]
            cells += [str(r.clamp_count), fmt(r.elapsed_ms)]
            w.writerow(cells)
        return buf.getvalue()


def read_trace_csv(text: str) -> dict:
    """Parse a trace CSV into ``{column: list}`` (floats, ``None`` for blanks)."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    out = {h: [] for h in header}
    for row in body:
        for h, v in zip(header, row):
            if h in ("iter", "clamp_count"):
                out[h].append(int(v))
            else:
                out[h].append(float(v) if v != "" else None)
    return out


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

def moment_mse(moments: dict, truth: dict) -> float:
    """Mean squared error of first moments over all cells of the latents in ``truth``."""
    err = [np.ravel(np.asarray(moments[k])[..., 0] - np.asarray(v)) for k, v in truth.items() if k in moments]
    if not err:
        return float("nan")
    e = np.concatenate(err)
    return float(np.mean(e * e))


def _annotate(exc: Exception, t: int) -> Exception:
    exc.iteration = t
    if exc.args and isinstance(exc.args[0], str):
        exc.args = (f"iteration {t}: {exc.args[0]}",) + exc.args[1:]
    return exc


def run_qem(model: ModelIR, cfg: QemConfig, test_model: ModelIR | None = None, truth: dict | None = None,
            callback=None) -> Trace:
    """Run ``cfg.iterations`` QEM iterations and return the trace.

    ``truth`` maps latent names to exact posterior first moments; when given
    every row carries the moment MSE against it.  ``test_model`` (same latents,
    test data bound) enables the predictive log-likelihood column.
    """
    q = QState.initial(model)
    m_prev = {name: mp for name, mp in q.mean.items()}
    trace = Trace([], tuple(lat.name for lat in model.latents))
    for t in range(1, cfg.iterations + 1):
        start = time.perf_counter()
        try:
            if cfg.adapt and t > 1:
                q = m_step(q, {k: v for k, v in m_prev.items() if k in q.mean}, cfg.variance_floor,
                               cfg.bernoulli_floor)
                m_prev.update(q.mean)
            est, bank, factors = _e_step(model, q, cfg, t)
            lam = lambda_of(t, cfg.ema)
            m_t = {}
            for name, mp in est.moments.items():
                m_t[name] = ema_update(m_prev[name], mp, lam) if name in m_prev else mp
            pll = None
            if test_model is not None:
                pll = _predictive(model, test_model, est, bank, factors, cfg, t)
        except QEMError as exc:
            raise _annotate(exc, t)
        elapsed = (time.perf_counter() - start) * 1e3 if cfg.timing else None
        row = TraceRow(t, lam, est.log_evidence, {k: v.m for k, v in m_t.items()}, q.clamp_count, elapsed, pll,
                       moment_mse(row_moments(m_t), truth) if truth else None)
        trace.rows.append(row)
        m_prev = m_t
        if callback is not None:
            callback(row)
    return trace


def row_moments(m: dict) -> dict:
    return {k: v.m for k, v in m.items()}


def _e_step(model, q, cfg: QemConfig, t: int):
    if cfg.estimator == "global_iw":
        bank = eng.draw_sample_bank(model, q, cfg.seed, cfg.K, t, mixing=False)
        return eng.global_iw(model, q, cfg.seed, cfg.K, t, bank=bank), bank, None
    bank = eng.draw_sample_bank(model, q, cfg.seed, cfg.K, t)
    factors = eng.build_log_factors(model, bank, q, cfg.mixing, cfg.rank_cap)
    fresh = None
    if cfg.denominator == "fresh_sample":
        fresh = eng.fresh_denominator_evidence(model, q, cfg.seed, cfg.K, t, cfg.rank_cap)
    return eng.posterior_moments(model, bank, factors, fresh, cfg.rank_cap), bank, factors


def _predictive(model, test_model, est, bank, factors, cfg, t):
    seed = eng.derive_seed(cfg.seed, t, "predict")
    S = cfg.predictive_samples
    if factors is None:
        w = next(iter(est.weights.values()))
        u = eng.open_uniforms(eng.stream(seed, 0, "joint", 2), (S,))
        k = np.minimum(np.searchsorted(np.cumsum(w) / np.sum(w), u), len(w) - 1)
        samples = {lat.name: k for lat in model.latents}
    else:
        samples = eng.samples_by_latent(eng.backward_resample(factors, None, seed, S, cfg.rank_cap))
    return eng.predictive_log_likelihood(test_model, bank, samples)


def summary(trace: Trace) -> dict:
    last = trace.rows[-1]
    out = {
        "iterations": len(trace),
        "final_moments": {k: np.asarray(v).tolist() for k, v in last.moments.items()},
        "final_log_evidence": last.log_evidence,
        "best_log_evidence": float(np.max(trace.log_evidence)),
        "total_ms": float(sum(r.elapsed_ms or 0.0 for r in trace.rows)),
        "clamp_count": int(sum(r.clamp_count for r in trace.rows)),
    }
    if last.moment_mse is not None:
        out["moment_mse"] = last.moment_mse
    if last.predictive_ll is not None:
        out["final_predictive_ll"] = last.predictive_ll
    return out


__all__ = ["EmaConfig", "QemConfig", "QState", "Trace", "TraceRow", "lambda_of", "ema_update", "m_step",
           "ema_over_natural", "run_qem", "moment_mse", "read_trace_csv", "summary"]

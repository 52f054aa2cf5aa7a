"""Built-in desk-scale model structures and their rescaled variants.

* ``conjugate_chain(d)``: a Gaussian random walk ``z1 -> z2 -> ... -> zd``
  with noisy observations of every step.
* ``radon_linear``: hierarchical radon regression with fixed variances
  (jointly Gaussian, so its posterior is available exactly).
* ``radon_full``: the same regression with latent log-variances.
* ``bus_mini``: hierarchical logistic regression of bus delays with
  company and journey-type weights looked up through index covariates.
* ``occupancy_mini``: multi-species occupancy with discrete presence
  indicators; ``occupancy_fixed`` keeps only the indicators latent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import (BERNOULLI, GAUSSIAN, ConventionalParams, MeanParams, conventional_to_mean,
                            scale_mean_params)
from .graph import (BinOp, Call, Const, CovariateDecl, Expr, Gather, LatentDecl, ModelIR, Neg,
                    ObservationDecl, PlateDecl, Ref, exp, sigmoid)

N01 = conventional_to_mean(ConventionalParams(GAUSSIAN, (0.0, 1.0)))
HALF = conventional_to_mean(ConventionalParams(BERNOULLI, (0.5,)))


def gaussian(name, plates, mean, var, init=N01, proposal="independent"):
    return LatentDecl(name, plates, GAUSSIAN, (mean, var), GAUSSIAN, init if proposal == "independent" else None,
                      proposal)


def bernoulli(name, plates, p, init=HALF):
    return LatentDecl(name, plates, BERNOULLI, (p,), BERNOULLI, init)


@dataclass(frozen=True, eq=False)
class BuiltinModel:
    """A model structure plus how to simulate its covariates."""

    id: str
    structure: ModelIR
    covariates: object = None        # callable(rng, structure) -> dict of arrays
    scaled_latent: str | None = None
    alpha: float = 1.0

    def scaled(self, alpha: float) -> "BuiltinModel":
        if self.scaled_latent is None:
            raise ValueError(f"{self.id} has no designated scaled latent")
        return BuiltinModel(self.id, scale_latent(self.structure, self.scaled_latent, alpha), self.covariates,
                            self.scaled_latent, self.alpha * alpha)


def conjugate_chain(d: int = 2, n_obs: int = 2, obs_var: float = 1.0) -> BuiltinModel:
    lats = [gaussian("z1", (), 0.0, 1.0)]
    for i in range(2, d + 1):
        lats.append(gaussian(f"z{i}", (), Ref(f"z{i - 1}"), 1.0))
    obs = [ObservationDecl(f"x{i}", ("N",), GAUSSIAN, (Ref(f"z{i}"), obs_var), f"x{i}") for i in range(1, d + 1)]
    return BuiltinModel(f"conjugate_chain", ModelIR([PlateDecl("N", n_obs)], [], lats, obs))


def _radon_covariates(rng, model):
    S, R = model.plate_sizes["States"], model.plate_sizes["Readings"]
    return {"Uranium": rng.normal(0.0, 1.0, S), "Basement": (rng.random((S, R)) < 0.5).astype(float)}


def _radon_mean():
    return Ref("StateMean") + Ref("UraniumWeight") * Ref("Uranium") + Ref("BasementWeight") * Ref("Basement")


def radon_linear(S: int = 4, R: int = 20) -> BuiltinModel:
    plates = [PlateDecl("States", S), PlateDecl("Readings", R)]
    covs = [CovariateDecl("Uranium", ("States",)), CovariateDecl("Basement", ("States", "Readings"))]
    lats = [
        gaussian("GlobalMean", (), 0.0, 1.0),
        gaussian("StateMean", ("States",), Ref("GlobalMean"), 1.0),
        gaussian("UraniumWeight", ("States",), 0.0, 1.0),
        gaussian("BasementWeight", ("States",), 0.0, 1.0),
    ]
    obs = [ObservationDecl("Radon", ("States", "Readings"), GAUSSIAN, (_radon_mean(), 1.0), "Radon")]
    return BuiltinModel("radon_linear", ModelIR(plates, covs, lats, obs), _radon_covariates, "StateMean")


def radon_full(S: int = 4, R: int = 20) -> BuiltinModel:
    plates = [PlateDecl("States", S), PlateDecl("Readings", R)]
    covs = [CovariateDecl("Uranium", ("States",)), CovariateDecl("Basement", ("States", "Readings"))]
    lats = [
        gaussian("GlobalMean", (), 0.0, 1.0),
        gaussian("GlobalVariance", (), 0.0, 1.0),
        gaussian("StateMean", ("States",), Ref("GlobalMean"), exp(Ref("GlobalVariance"))),
        gaussian("StateVariance", ("States",), 0.0, 1.0),
        gaussian("UraniumWeight", ("States",), 0.0, 1.0),
        gaussian("BasementWeight", ("States",), 0.0, 1.0),
    ]
    obs = [ObservationDecl("Radon", ("States", "Readings"), GAUSSIAN, (_radon_mean(), exp(Ref("StateVariance"))),
                           "Radon")]
    return BuiltinModel("radon_full", ModelIR(plates, covs, lats, obs), _radon_covariates, "StateMean")


def _bus_covariates(rng, model):
    Y, B, I = (model.plate_sizes[p] for p in ("Years", "Boroughs", "Ids"))
    C, J = model.plate_sizes["Companies"], model.plate_sizes["JourneyTypes"]
    return {"company": rng.integers(0, C, (Y, B, I)), "journey": rng.integers(0, J, (Y, B, I))}


def bus_mini(Y: int = 2, B: int = 2, I: int = 30, C: int = 3, J: int = 2) -> BuiltinModel:
    plates = [PlateDecl("Years", Y), PlateDecl("Boroughs", B), PlateDecl("Ids", I), PlateDecl("Companies", C),
              PlateDecl("JourneyTypes", J)]
    covs = [CovariateDecl("company", ("Years", "Boroughs", "Ids"), "int"),
            CovariateDecl("journey", ("Years", "Boroughs", "Ids"), "int")]
    lats = [
        gaussian("GlobalVariance", (), 0.0, 1.0),
        gaussian("GlobalMean", (), 0.0, 1.0),
        gaussian("YearMean", ("Years",), Ref("GlobalMean"), exp(Ref("GlobalVariance"))),
        gaussian("YearVariance", ("Boroughs",), 0.0, 1.0),
        gaussian("YearBoroughWeight", ("Years", "Boroughs"), Ref("YearMean"), exp(Ref("YearVariance"))),
        gaussian("CompanyWeight", ("Companies",), 0.0, 1.0),
        gaussian("JourneyTypeWeight", ("JourneyTypes",), 0.0, 1.0),
    ]
    logits = Ref("YearBoroughWeight") + Gather("CompanyWeight", "company") + Gather("JourneyTypeWeight", "journey")
    obs = [ObservationDecl("delay", ("Years", "Boroughs", "Ids"), BERNOULLI, (sigmoid(logits),), "delay")]
    return BuiltinModel("bus_mini", ModelIR(plates, covs, lats, obs), _bus_covariates, "YearBoroughWeight")


OCC_PLATES = ("Species", "Years", "Sites")


def _occupancy_covariates(rng, model):
    J, M, I, R = (model.plate_sizes[p] for p in ("Species", "Years", "Sites", "Repeats"))
    return {"Weather": rng.normal(0.0, 1.0, (J, M, I)), "Quality": rng.normal(1.0, 0.5, (J, M, I, R))}


def _occupancy_obs():
    z = Ref("z")
    logits = z * Ref("QualityWeight") * Ref("Quality") + (Const(1.0) - z) * Const(-10.0)
    return ObservationDecl("y", OCC_PLATES + ("Repeats",), BERNOULLI, (sigmoid(logits),), "y")


def _occupancy_plates(J, M, I, R):
    return [PlateDecl("Species", J), PlateDecl("Years", M), PlateDecl("Sites", I), PlateDecl("Repeats", R)]


def occupancy_mini(J: int = 2, M: int = 1, I: int = 3, R: int = 2) -> BuiltinModel:
    covs = [CovariateDecl("Weather", OCC_PLATES), CovariateDecl("Quality", OCC_PLATES + ("Repeats",))]
    lats = [
        gaussian("mu_BirdMean", (), 0.0, 1.0),
        gaussian("sigma_BirdMean", (), 0.0, 1.0),
        gaussian("mu_QualityWeight", (), 0.0, 1.0),
        gaussian("sigma_QualityWeight", (), 0.0, 1.0),
        gaussian("mu_WeatherWeight", (), 0.0, 1.0),
        gaussian("sigma_WeatherWeight", (), 0.0, 1.0),
        gaussian("QualityWeight", ("Species",), Ref("mu_QualityWeight"), exp(Ref("sigma_QualityWeight"))),
        gaussian("WeatherWeight", ("Species",), Ref("mu_WeatherWeight"), exp(Ref("sigma_WeatherWeight"))),
        gaussian("BirdMean", ("Species",), Ref("mu_BirdMean"), exp(Ref("sigma_BirdMean"))),
        gaussian("BirdYearMean", ("Species", "Years"), Ref("BirdMean"), 1.0),
        bernoulli("z", OCC_PLATES, sigmoid(Ref("BirdYearMean") * Ref("WeatherWeight") * Ref("Weather"))),
    ]
    model = ModelIR(_occupancy_plates(J, M, I, R), covs, lats, [_occupancy_obs()])
    return BuiltinModel("occupancy_mini", model, _occupancy_covariates, "BirdYearMean")


def occupancy_fixed(J: int = 2, M: int = 1, I: int = 3, R: int = 2) -> BuiltinModel:
    """Occupancy with the continuous parameters supplied as covariates, so the
    presence indicators are the only latents and the posterior is a finite sum."""
    covs = [CovariateDecl("Weather", OCC_PLATES), CovariateDecl("Quality", OCC_PLATES + ("Repeats",)),
            CovariateDecl("BirdYearMean", ("Species", "Years")), CovariateDecl("WeatherWeight", ("Species",)),
            CovariateDecl("QualityWeight", ("Species",))]
    lats = [bernoulli("z", OCC_PLATES, sigmoid(Ref("BirdYearMean") * Ref("WeatherWeight") * Ref("Weather")))]
    model = ModelIR(_occupancy_plates(J, M, I, R), covs, lats, [_occupancy_obs()])
    return BuiltinModel("occupancy_fixed", model, _occupancy_covariates)


BUILTINS = {
    "conjugate_chain": conjugate_chain,
    "radon_linear": radon_linear,
    "radon_full": radon_full,
    "bus_mini": bus_mini,
    "occupancy_mini": occupancy_mini,
    "occupancy_fixed": occupancy_fixed,
}


def get_builtin(name: str, **sizes) -> BuiltinModel:
    try:
        return BUILTINS[name](**sizes)
    except KeyError:
        raise ValueError(f"unknown builtin model {name!r} (known: {', '.join(BUILTINS)})") from None


# ---------------------------------------------------------------------------
# rescaling a latent
# ---------------------------------------------------------------------------

def _substitute(e: Expr, name: str, alpha: float) -> Expr:
    if isinstance(e, Ref):
        return BinOp("*", Const(alpha), e) if e.name == name else e
    if isinstance(e, Gather):
        return BinOp("*", Const(alpha), e) if e.table == name else e
    if isinstance(e, BinOp):
        return BinOp(e.op, _substitute(e.left, name, alpha), _substitute(e.right, name, alpha))
    if isinstance(e, Neg):
        return Neg(_substitute(e.operand, name, alpha))
    if isinstance(e, Call):
        return Call(e.fn, _substitute(e.arg, name, alpha))
    return e


def scale_latent(model: ModelIR, name: str, alpha: float) -> ModelIR:
    """Rewrite ``name`` as ``alpha * name~`` with ``name~`` the new latent.

    The prior ``N(mu, v)`` of ``name`` becomes ``N(mu / alpha, v / alpha**2)``,
    every use site multiplies the new latent by ``alpha``, and the initial
    proposal is rescaled by ``1 / alpha``.  The distribution of the data is
    unchanged.
    """
    inv = 1.0 / alpha
    lats = []
    for lat in model.latents:
        params = tuple(_substitute(p, name, alpha) for p in lat.prior_params)
        init = lat.proposal_init
        if lat.name == name:
            if lat.prior_family is not GAUSSIAN:
                raise ValueError("only Gaussian latents can be rescaled")
            params = (BinOp("/", params[0], Const(alpha)), BinOp("/", params[1], Const(alpha * alpha)))
            if init is not None:
                init = scale_mean_params(init, inv)
        lats.append(LatentDecl(lat.name, lat.plates, lat.prior_family, params, lat.proposal_family, init,
                               lat.proposal))
    obs = [ObservationDecl(o.name, o.plates, o.family, tuple(_substitute(p, name, alpha) for p in o.params),
                           o.source) for o in model.observations]
    return ModelIR(model.plates, model.covariates, lats, obs, model.data)


def scale_trajectory(m: np.ndarray, alpha: float) -> np.ndarray:
    """Apply the Gaussian mean-parameter map ``f(m, alpha)`` to an array."""
    return scale_mean_params(MeanParams(GAUSSIAN, m), alpha).m

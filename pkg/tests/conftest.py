import numpy as np
import pytest

from qem.distributions import (BERNOULLI, BETA, GAMMA, GAUSSIAN, NEGATIVE_BINOMIAL, ConventionalParams,
                               conventional_to_mean)
from qem.graph import Const, CovariateDecl, LatentDecl, ModelIR, ObservationDecl, PlateDecl, Ref, exp, sigmoid
from qem.oracles import synth_data


def _init(fam, rng):
    if fam is GAUSSIAN:
        vals = (rng.normal(0, 0.5), rng.uniform(0.5, 2.0))
    elif fam is BERNOULLI:
        vals = (rng.uniform(0.2, 0.8),)
    elif fam is BETA:
        vals = (rng.uniform(0.8, 3), rng.uniform(0.8, 3))
    else:
        vals = (rng.uniform(1, 4), rng.uniform(0.5, 2))
    return conventional_to_mean(ConventionalParams(fam, vals))


def _prior(fam, parents, rng):
    """Prior parameter expressions that stay valid whatever the parents' values."""
    drive = None
    for p in parents:
        term = Const(round(rng.uniform(-0.8, 0.8), 3)) * Ref(p)
        drive = term if drive is None else drive + term
    if fam is GAUSSIAN:
        mean = Const(round(rng.normal(), 3)) if drive is None else drive + Const(round(rng.normal(), 3))
        var = Const(round(rng.uniform(0.5, 2), 3))
        if parents and rng.random() < 0.3:
            var = exp(Const(0.2) * Ref(parents[0]))
        return (mean, var)
    if fam is BERNOULLI:
        return (sigmoid(drive if drive is not None else Const(round(rng.normal(), 3))),)
    if fam is BETA:
        a = exp(drive * Const(0.3)) if drive is not None else Const(round(rng.uniform(1, 3), 3))
        return (a, Const(round(rng.uniform(1, 3), 3)))
    shape = Const(round(rng.uniform(1, 3), 3))
    rate = exp(drive * Const(0.3)) if drive is not None else Const(round(rng.uniform(0.5, 2), 3))
    return (shape, rate)


def random_model(rng, max_latents=4, with_data=True):
    """A random valid plated model with up to ``max_latents`` latents and data."""
    n = int(rng.integers(1, max_latents + 1))
    plates = [PlateDecl("A", int(rng.integers(1, 4))), PlateDecl("B", int(rng.integers(1, 3)))]
    covs = [CovariateDecl("c", ("A",))]
    lats = []
    for i in range(n):
        fam = [GAUSSIAN, GAUSSIAN, BERNOULLI, BETA, GAMMA][int(rng.integers(0, 5))]
        cand = [l.name for l in lats if not l.plates or rng.random() < 0.5]
        parents = [c for c in cand if rng.random() < 0.5][:2]
        # plated latents may depend on parents with fewer plates only
        my_plates = ()
        if rng.random() < 0.5:
            my_plates = ("A",)
        parents = [p for p in parents if set(next(l for l in lats if l.name == p).plates) <= set(my_plates)]
        proposal = "prior" if rng.random() < 0.25 else "independent"
        lats.append(LatentDecl(f"z{i}", my_plates, fam, _prior(fam, parents, rng), fam,
                               _init(fam, rng) if proposal == "independent" else None, proposal))
    obs = []
    for j in range(int(rng.integers(1, 3))):
        deps = [l.name for l in lats if rng.random() < 0.6] or [lats[-1].name]
        deps = deps[:3]
        mean = None
        for d in deps:
            term = Const(round(rng.uniform(-1, 1), 3)) * Ref(d)
            mean = term if mean is None else mean + term
        mean = mean + Const(0.5) * Ref("c")
        kind = int(rng.integers(0, 3))
        if kind == 0:
            o = ObservationDecl(f"x{j}", ("A", "B"), GAUSSIAN, (mean, Const(round(rng.uniform(0.5, 2), 3))))
        elif kind == 1:
            o = ObservationDecl(f"x{j}", ("A", "B"), BERNOULLI, (sigmoid(mean),))
        else:
            o = ObservationDecl(f"x{j}", ("A",), NEGATIVE_BINOMIAL, (Const(3.0), sigmoid(mean * Const(0.3))))
        obs.append(o)
    model = ModelIR(plates, covs, lats, obs)
    if not with_data:
        return model
    cov = {"c": rng.normal(size=plates[0].size)}
    _, (data,) = synth_data(model, cov, seed=int(rng.integers(1 << 30)))
    return model.bind({**cov, **data})


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

import numpy as np
import pytest
from scipy import special, stats

from qem import mpiw_engine as eng
from qem.distributions import BERNOULLI, GAUSSIAN, ConventionalParams, conventional_to_mean
from qem.errors import EnumerationGuardError, UnsupportedModelError
from qem.graph import Const, ModelIR, ObservationDecl, PlateDecl, Ref, sigmoid
from qem.model_dsl import read_columns, write_dataset
from qem.models import bernoulli, gaussian, get_builtin
from qem.oracles import (_enumerate, discrete_posterior, enumerate_moments, enumerate_pe, exact_posterior,
                         linear_gaussian_posterior, make_instance, synth_data)
from qem.qem import QState, m_step

# exact z-marginals of occupancy_fixed (J=2, M=1, I=3, R=2) simulated with seed 0
OCCUPANCY_FIXED_SEED0_Z = [[[0.0254755849737512, 0.9999316241333617, 0.9999999949283531]],
                           [[0.999972049113388, 0.1920386065284207, 0.00296976081817275]]]
OCCUPANCY_FIXED_SEED0_LOG_EVIDENCE = -6.300904409155392
# enumerate_pe of conjugate_chain(d=3), data seed 7, bank seed 5, K=3, initial proposals
CHAIN3_ENUMERATED_LOG_PE = -9.30744688955623


def textbook(x=2.0):
    model = ModelIR([PlateDecl("N", 1)], [], [gaussian("z", (), 0.0, 1.0)],
                    [ObservationDecl("x", ("N",), GAUSSIAN, (Ref("z"), 1.0), "x")])
    return model.bind({"x": [x]})


def single_bernoulli(p_if_one, p_if_zero, y=1.0):
    b = Ref("b")
    lik = Const(p_if_zero) + Const(p_if_one - p_if_zero) * b
    model = ModelIR([PlateDecl("N", 1)], [], [bernoulli("b", (), 0.5)],
                    [ObservationDecl("y", ("N",), BERNOULLI, (lik,), "y")])
    return model.bind({"y": [y]})


class TestLinearGaussian:
    def test_textbook_update(self):
        post = linear_gaussian_posterior(textbook())
        np.testing.assert_allclose(post.moments["z"], [1.0, 1.0 + 0.5], rtol=1e-12)
        assert post.log_evidence == pytest.approx(stats.norm.logpdf(2.0, 0.0, np.sqrt(2.0)), rel=1e-12)

    def test_no_observations_gives_prior(self):
        model = ModelIR([PlateDecl("A", 2)], [], [gaussian("a", (), 0.5, 2.0), gaussian("b", ("A",), Ref("a"), 1.0)],
                        [])
        post = linear_gaussian_posterior(model)
        np.testing.assert_allclose(post.moments["a"], [0.5, 0.25 + 2.0], rtol=1e-12)
        np.testing.assert_allclose(post.moments["b"], [[0.5, 0.25 + 3.0]] * 2, rtol=1e-12)
        assert post.log_evidence == 0.0

    def test_rejects_nonlinear(self):
        with pytest.raises(UnsupportedModelError):
            linear_gaussian_posterior(make_instance("radon_full", seed=0).model)
        with pytest.raises(UnsupportedModelError):
            linear_gaussian_posterior(make_instance("bus_mini", seed=0).model)

    def test_chain_agrees_with_large_k_mpiw(self):
        inst = make_instance(get_builtin("conjugate_chain", d=3), seed=7)
        post = linear_gaussian_posterior(inst.model)
        # proposals at the exact marginals, so the large-K estimate is accurate
        q = QState.initial(inst.model)
        q = m_step(q, {k: conventional_to_mean(ConventionalParams(GAUSSIAN, (v[0], v[1] - v[0] ** 2)))
                       for k, v in post.moments.items()})
        ratios, firsts = [], []
        for seed in range(20):
            bank = eng.draw_sample_bank(inst.model, q, seed, 512)
            est = eng.posterior_moments(inst.model, bank, eng.build_log_factors(inst.model, bank, q))
            ratios.append(np.exp(est.log_evidence - post.log_evidence))
            firsts.append([float(est.moments[f"z{i}"].m[0]) for i in (1, 2, 3)])
        ratios, firsts = np.array(ratios), np.array(firsts)
        assert abs(ratios.mean() - 1.0) < 3 * ratios.std(ddof=1) / np.sqrt(len(ratios)) + 1e-3
        exact = [float(post.moments[f"z{i}"][0]) for i in (1, 2, 3)]
        se = firsts.std(axis=0, ddof=1) / np.sqrt(len(firsts))
        assert np.all(np.abs(firsts.mean(axis=0) - exact) < 4 * se + 5e-3)

    def test_radon_linear_posterior_is_consistent(self):
        post = linear_gaussian_posterior(make_instance("radon_linear", seed=0).model)
        for v in post.moments.values():
            assert np.all(v[..., 1] > v[..., 0] ** 2)
        assert np.all(np.linalg.eigvalsh(post.covariance) > 0)


class TestDiscrete:
    def test_two_term_bayes(self):
        post = discrete_posterior(single_bernoulli(0.75, 0.25))
        assert float(post.moments["b"][0]) == pytest.approx(0.75, abs=1e-15)
        assert post.log_evidence == pytest.approx(np.log(0.5), rel=1e-15)

    def test_uninformative_likelihood(self):
        post = discrete_posterior(single_bernoulli(0.3, 0.3))
        assert float(post.moments["b"][0]) == pytest.approx(0.5, abs=1e-15)

    def test_occupancy_fixed_fixture(self):
        post = discrete_posterior(make_instance("occupancy_fixed", seed=0).model)
        np.testing.assert_allclose(post.first_moments["z"], OCCUPANCY_FIXED_SEED0_Z, rtol=1e-10)
        assert post.log_evidence == pytest.approx(OCCUPANCY_FIXED_SEED0_LOG_EVIDENCE, rel=1e-12)

    def test_occupancy_fixed_cellwise_by_hand(self):
        inst = make_instance("occupancy_fixed", seed=3)
        d = inst.model.data
        prior = special.expit(d["BirdYearMean"][:, :, None] * d["WeatherWeight"][:, None, None] * d["Weather"])
        p_detect = special.expit(d["QualityWeight"][:, None, None, None] * d["Quality"])
        y = d["y"]
        lik1 = np.prod(np.where(y == 1, p_detect, 1 - p_detect), axis=-1)
        p_false = special.expit(-10.0)
        lik0 = np.prod(np.where(y == 1, p_false, 1 - p_false), axis=-1)
        expected = prior * lik1 / (prior * lik1 + (1 - prior) * lik0)
        np.testing.assert_allclose(discrete_posterior(inst.model).first_moments["z"], expected, rtol=1e-10)

    def test_gaussian_quadrature_matches_linear_oracle(self):
        model = textbook(0.7)
        post = discrete_posterior(model)
        ref = linear_gaussian_posterior(model)
        np.testing.assert_allclose(post.moments["z"], ref.moments["z"], rtol=1e-10)
        assert post.log_evidence == pytest.approx(ref.log_evidence, rel=1e-10)

    def test_guard(self):
        with pytest.raises(EnumerationGuardError):
            discrete_posterior(make_instance("occupancy_fixed", seed=0, I=10).model)

    def test_dispatch(self):
        assert exact_posterior(textbook()).moments["z"][0] == pytest.approx(1.0)
        assert float(exact_posterior(single_bernoulli(0.75, 0.25)).moments["b"][0]) == pytest.approx(0.75, abs=1e-15)


class TestEnumeration:
    def test_single_latent_collapses_to_global_iw(self):
        model = textbook(0.3)
        q = m_step(QState.initial(model), {"z": conventional_to_mean(ConventionalParams(GAUSSIAN, (0.5, 1.5)))})
        bank = eng.draw_sample_bank(model, q, 0, 6)
        gl = eng.global_iw(model, q, 0, 6, bank=bank)
        assert enumerate_pe(model, bank, q) == pytest.approx(gl.log_evidence, rel=1e-13)
        np.testing.assert_allclose(enumerate_moments(model, bank, q)["z"], gl.moments["z"].m, rtol=1e-13)

    def test_prior_equals_proposal(self):
        model = ModelIR([], [], [gaussian("a", (), 0.0, 1.0), gaussian("c", (), 0.0, 1.0)], [])
        q = QState.initial(model)
        bank = eng.draw_sample_bank(model, q, 3, 4)
        assert enumerate_pe(model, bank, q) == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(enumerate_moments(model, bank, q)["a"],
                                   GAUSSIAN.suff_stats(bank.values["a"]).mean(axis=0), rtol=1e-13)

    def test_chain_fixture_and_hand_checked_term(self):
        inst = make_instance(get_builtin("conjugate_chain", d=3), seed=7)
        model = inst.model
        q = QState.initial(model)
        bank = eng.draw_sample_bank(model, q, 5, 3)
        assert enumerate_pe(model, bank, q) == pytest.approx(CHAIN3_ENUMERATED_LOG_PE, rel=1e-12)
        names, combos, logr = _enumerate(model, bank, q)
        k = (0, 2, 1)
        row = int(np.flatnonzero((combos == [k[names.index(n)] for n in names]).all(axis=1))[0])
        z1, z2, z3 = (bank.values[f"z{i}"][k[i - 1]] for i in (1, 2, 3))
        hand = (stats.norm.logpdf(z1, 0, 1) + stats.norm.logpdf(z2, z1, 1) + stats.norm.logpdf(z3, z2, 1)
                + sum(stats.norm.logpdf(model.data[f"x{i}"], z, 1).sum() for i, z in ((1, z1), (2, z2), (3, z3)))
                - sum(stats.norm.logpdf(z, 0, 1) for z in (z1, z2, z3)))
        assert logr[row] == pytest.approx(hand, rel=1e-12)

    def test_guard(self):
        inst = make_instance(get_builtin("conjugate_chain", d=4), seed=0)
        q = QState.initial(inst.model)
        bank = eng.draw_sample_bank(inst.model, q, 0, 40)
        with pytest.raises(EnumerationGuardError):
            enumerate_pe(inst.model, bank, q)


class TestSynthData:
    def test_radon_rows(self, tmp_path):
        inst = make_instance("radon_linear", seed=0, S=4, R=20)
        write_dataset(tmp_path / "radon.csv", inst.model)
        cols = read_columns(tmp_path / "radon.csv")
        assert len(cols["Radon"]) == 80
        assert len(cols["Uranium"]) == 4

    def test_zero_noise_gives_mean(self):
        b = get_builtin("radon_full")
        rng = np.random.default_rng(0)
        covs = b.covariates(rng, b.structure)
        over = {"GlobalMean": 0.3, "GlobalVariance": 0.0, "StateMean": [1.0, -1.0, 0.5, 2.0],
                "StateVariance": -np.inf, "UraniumWeight": [0.1, 0.2, 0.3, 0.4], "BasementWeight": [-1, 0, 1, 2]}
        truth, (data,) = synth_data(b.structure, covs, seed=1, overrides=over)
        mean = (np.array(over["StateMean"])[:, None] + np.array(over["UraniumWeight"])[:, None] * covs["Uranium"][:, None]
                + np.array(over["BasementWeight"], float)[:, None] * covs["Basement"])
        np.testing.assert_array_equal(data["Radon"], mean)
        np.testing.assert_array_equal(truth["StateMean"], over["StateMean"])

    def test_bus_delay_rate_in_binomial_ci(self):
        inst = make_instance("bus_mini", seed=11, I=200)
        d, t = inst.model.data, inst.truth
        logits = (t["YearBoroughWeight"][:, :, None] + t["CompanyWeight"][d["company"]]
                  + t["JourneyTypeWeight"][d["journey"]])
        p = special.expit(logits)
        n = p.size
        sd = np.sqrt(np.sum(p * (1 - p))) / n
        assert set(np.unique(d["delay"])) <= {0.0, 1.0}
        assert abs(d["delay"].mean() - p.mean()) < 4 * sd

    def test_train_and_test_share_latents_but_not_noise(self):
        inst = make_instance("radon_linear", seed=2)
        assert not np.array_equal(inst.model.data["Radon"], inst.test_model.data["Radon"])
        np.testing.assert_array_equal(inst.model.data["Uranium"], inst.test_model.data["Uranium"])

    def test_deterministic(self):
        a, b = make_instance("bus_mini", seed=4), make_instance("bus_mini", seed=4)
        for k in a.model.data:
            np.testing.assert_array_equal(a.model.data[k], b.model.data[k])

    def test_scaled_instance_truth(self):
        inst = make_instance("radon_linear", seed=0)
        s = inst.scaled(1e-3)
        np.testing.assert_allclose(s.truth["StateMean"], inst.truth["StateMean"] / 1e-3)
        np.testing.assert_array_equal(s.model.data["Radon"], inst.model.data["Radon"])


def test_sigmoid_bernoulli_observation_logit_path_matches_direct():
    """The oracle evaluates sigmoid-parameterised Bernoulli terms on the logit scale."""
    model = ModelIR([PlateDecl("N", 3)], [], [gaussian("z", (), 0.0, 1.0)],
                    [ObservationDecl("y", ("N",), BERNOULLI, (sigmoid(Ref("z") * Const(40.0)),), "y")])
    model = model.bind({"y": [1.0, 0.0, 1.0]})
    q = QState.initial(model)
    bank = eng.draw_sample_bank(model, q, 0, 4)
    f = eng.build_log_factors(model, bank, q)
    assert eng.log_evidence(f) == pytest.approx(enumerate_pe(model, bank, q), rel=1e-12)

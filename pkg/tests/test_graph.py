import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qem.distributions import BERNOULLI, GAUSSIAN, NEGATIVE_BINOMIAL
from qem.errors import BroadcastError
from qem.graph import (Const, CovariateDecl, Gather, LatentDecl, ModelIR, ObservationDecl, PlateDecl, Ref, Tensor,
                       copy_axis, eval_expr, exp, parent_sets, sigmoid, validate)
from qem.models import N01, bus_mini, gaussian, radon_full, radon_linear


def single_latent_model(data=None):
    model = ModelIR([PlateDecl("N", 3)], [], [gaussian("z", (), 0.0, 1.0)],
                    [ObservationDecl("x", ("N",), GAUSSIAN, (Ref("z"), 1.0), "x")])
    return model.bind({"x": np.zeros(3) if data is None else data})


class TestValidate:
    def test_single_latent_ok(self):
        rep = validate(single_latent_model())
        assert rep.ok
        assert rep.order == ("z",)
        assert rep.parents == {"z": ()}
        assert rep.obs_deps == {"x": ("z",)}

    def test_cycle_names_both_latents(self):
        model = ModelIR([], [], [gaussian("z", (), Ref("w"), 1.0), gaussian("w", (), Ref("z"), 1.0)], [])
        rep = validate(model)
        assert not rep.ok
        cycles = [e for e in rep.errors if e.kind == "cycle"]
        assert cycles and set(cycles[0].names) == {"z", "w"}

    def test_wrong_data_length(self):
        rep = validate(single_latent_model(np.zeros(5)))
        assert not rep.ok
        err = next(e for e in rep.errors if e.kind == "plate-mismatch")
        assert "3" in err.message and "5" in err.message

    def test_unresolved_name(self):
        model = ModelIR([], [], [gaussian("z", (), Ref("nowhere"), 1.0)], [])
        rep = validate(model)
        assert [e.kind for e in rep.errors] == ["unknown-identifier"]
        assert "nowhere" in rep.errors[0].message

    def test_negative_binomial_cannot_be_a_proposal(self):
        lat = LatentDecl("z", (), NEGATIVE_BINOMIAL, (Const(2.0), Const(0.5)))
        rep = validate(ModelIR([], [], [lat], []))
        assert any(e.kind == "unsupported-family" for e in rep.errors)

    def test_plate_mismatch_between_parent_and_child(self):
        plates = [PlateDecl("A", 2), PlateDecl("B", 3)]
        lats = [gaussian("a", ("A",), 0.0, 1.0), gaussian("b", ("B",), Ref("a"), 1.0)]
        rep = validate(ModelIR(plates, [], lats, []))
        assert any(e.kind == "plate-mismatch" for e in rep.errors)

    def test_bernoulli_data_out_of_support(self):
        model = ModelIR([PlateDecl("N", 2)], [], [gaussian("z", (), 0.0, 1.0)],
                        [ObservationDecl("y", ("N",), BERNOULLI, (sigmoid(Ref("z")),), "y")])
        rep = validate(model.bind({"y": np.array([0.0, 2.0])}))
        assert not rep.ok

    def test_unobserved_latent_warns(self):
        model = single_latent_model()
        model = ModelIR(model.plates, [], list(model.latents) + [gaussian("lonely", (), 0.0, 1.0)],
                        model.observations, model.data)
        rep = validate(model)
        assert rep.ok
        assert any("lonely" in w for w in rep.warnings)

    def test_topological_order_respects_parents(self):
        lats = [gaussian("c", (), Ref("b"), 1.0), gaussian("b", (), Ref("a"), 1.0), gaussian("a", (), 0.0, 1.0)]
        rep = validate(ModelIR([], [], lats, []))
        assert rep.ok
        pos = {n: i for i, n in enumerate(rep.order)}
        for child, parents in rep.parents.items():
            assert all(pos[p] < pos[child] for p in parents)


class TestEvalExpr:
    def test_constant_times_covariate(self):
        out = eval_expr(Const(2.0) * Ref("c"), {"c": Tensor(np.array([1.0, 2.0, 3.0]), ("A",))})
        np.testing.assert_array_equal(out.values, [2, 4, 6])
        assert out.dims == ("A",)

    def test_exp_keeps_copy_axis(self):
        out = eval_expr(exp(Ref("z")), {"z": Tensor(np.zeros(3), (copy_axis("z"),))})
        np.testing.assert_array_equal(out.values, np.ones(3))
        assert out.dims == (copy_axis("z"),)

    def test_two_copy_axes_give_all_pairwise_sums(self):
        a = np.array([1.0, 10.0])
        b = np.array([100.0, 200.0, 300.0])
        out = eval_expr(Ref("a") + Ref("b"), {"a": Tensor(a, (copy_axis("a"),)), "b": Tensor(b, (copy_axis("b"),))})
        assert out.values.size == 6
        expected = np.array([[x + y for y in b] for x in a])
        np.testing.assert_array_equal(out.align((copy_axis("a"), copy_axis("b"))), expected)

    def test_size_mismatch_names_the_axis(self):
        with pytest.raises(BroadcastError, match="'A'"):
            eval_expr(Ref("u") + Ref("v"), {"u": Tensor(np.zeros(2), ("A",)), "v": Tensor(np.zeros(3), ("A",))})

    def test_gather(self):
        table = Tensor(np.array([0.5, -1.0, 2.0]), ("C",))
        index = Tensor(np.array([[2, 0], [1, 1]]), ("Y", "I"))
        out = eval_expr(Gather("w", "idx"), {"w": table, "idx": index})
        np.testing.assert_array_equal(out.align(("Y", "I")), [[2.0, 0.5], [-1.0, -1.0]])

    def test_gather_keeps_copy_axis(self):
        table = Tensor(np.arange(6.0).reshape(2, 3), (copy_axis("w"), "C"))
        index = Tensor(np.array([2, 0, 1, 1]), ("I",))
        out = eval_expr(Gather("w", "idx"), {"w": table, "idx": index})
        np.testing.assert_array_equal(out.align((copy_axis("w"), "I")), [[2, 0, 1, 1], [5, 3, 4, 4]])

    def test_gather_index_out_of_range(self):
        with pytest.raises(BroadcastError, match="out of range"):
            eval_expr(Gather("w", "idx"), {"w": Tensor(np.zeros(2), ("C",)), "idx": Tensor(np.array([2]), ("I",))})

    def test_referentially_transparent(self, rng):
        b = {"z": Tensor(rng.normal(size=(4, 3)), (copy_axis("z"), "A")), "c": Tensor(rng.normal(size=3), ("A",))}
        e = sigmoid(Ref("z") * Ref("c") - exp(Ref("c")) / Const(3.0))
        first, second = eval_expr(e, b), eval_expr(e, b)
        assert first.dims == second.dims
        assert first.values.tobytes() == second.values.tobytes()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.permutations(["A", "B", "C"]))
    def test_plate_permutation_invariance(self, seed, perm):
        rng = np.random.default_rng(seed)
        sizes = {"A": 2, "B": 3, "C": 4}
        x = rng.normal(size=(2, 3, 4))
        y = rng.normal(size=(3, 4))
        e = Ref("x") * Ref("y") + exp(Ref("y")) - Const(0.5)
        ref = eval_expr(e, {"x": Tensor(x, ("A", "B", "C")), "y": Tensor(y, ("B", "C"))}).align(("A", "B", "C"))
        order = [("A", "B", "C").index(p) for p in perm]
        xp = np.transpose(x, order)
        yperm = [p for p in perm if p != "A"]
        yp = np.transpose(y, [("B", "C").index(p) for p in yperm])
        out = eval_expr(e, {"x": Tensor(xp, tuple(perm)), "y": Tensor(yp, tuple(yperm))})
        assert out.values.shape == tuple(sizes[d] for d in out.dims)
        np.testing.assert_array_equal(out.align(("A", "B", "C")), ref)


class TestParentSets:
    def test_radon(self):
        parents, obs = parent_sets(radon_full().structure)
        assert set(parents["StateMean"]) == {"GlobalMean", "GlobalVariance"}
        assert parents["GlobalMean"] == ()
        assert set(obs["Radon"]) == {"StateMean", "StateVariance", "UraniumWeight", "BasementWeight"}

    def test_radon_linear_root(self):
        parents, _ = parent_sets(radon_linear().structure)
        assert parents["GlobalMean"] == ()
        assert parents["StateMean"] == ("GlobalMean",)

    def test_bus_logits(self):
        parents, obs = parent_sets(bus_mini().structure)
        assert set(obs["delay"]) == {"YearBoroughWeight", "CompanyWeight", "JourneyTypeWeight"}
        assert set(parents["YearBoroughWeight"]) == {"YearMean", "YearVariance"}

    def test_deterministic(self):
        assert parent_sets(bus_mini().structure) == parent_sets(bus_mini().structure)


def test_covariate_reference_is_not_a_parent():
    model = ModelIR([PlateDecl("A", 2)], [CovariateDecl("c", ("A",))],
                    [gaussian("a", ("A",), Ref("c"), 1.0)], []).bind({"c": np.zeros(2)})
    parents, _ = parent_sets(model)
    assert parents == {"a": ()}


def test_default_init_is_standard_normal():
    np.testing.assert_array_equal(N01.m, [0.0, 1.0])

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qem.errors import SchemaError
from qem.graph import Const, Gather, ModelIR, Ref, exp, parent_sets
from qem.model_dsl import (ParseError, SourceSpan, format_expr, load_dataset, load_model, parse, pretty_print,
                           shipped_model_path, write_dataset)
from qem.models import BUILTINS, get_builtin
from qem.oracles import make_instance


def structure(model: ModelIR):
    """Everything a ModelIR declares, in a comparable form."""
    return (
        tuple((p.name, p.size) for p in model.plates),
        tuple((c.name, c.plates, c.dtype) for c in model.covariates),
        tuple((l.name, l.plates, l.prior_family.name, l.prior_params, l.proposal_family.name, l.proposal,
               None if l.proposal_init is None else tuple(np.round(l.proposal_init.m, 12)))
              for l in model.latents),
        tuple((o.name, o.plates, o.family.name, o.params, o.source) for o in model.observations),
    )


def errors_of(source):
    out = parse(source)
    assert isinstance(out, list), "expected parse errors"
    return out


class TestParse:
    def test_minimal_model(self):
        m = parse("latent z ~ Gaussian(0,1)\nobserve x ~ Gaussian(z,1) from xdata")
        assert isinstance(m, ModelIR)
        assert [l.name for l in m.latents] == ["z"]
        assert [o.name for o in m.observations] == ["x"]
        assert m.observations[0].source == "xdata"

    def test_default_proposal_is_standard_normal(self):
        m = parse("latent z ~ Gaussian(3, 2)\n")
        np.testing.assert_array_equal(m.latents[0].proposal_init.m, [0.0, 1.0])
        assert m.latents[0].proposal == "independent"

    def test_cycle(self):
        errs = errors_of("latent z ~ Gaussian(w,1)\nlatent w ~ Gaussian(z,1)")
        cycle = [e for e in errs if e.kind == "cycle"]
        assert cycle
        assert "z" in cycle[0].message and "w" in cycle[0].message

    def test_forward_references_allowed(self):
        m = parse("latent b ~ Gaussian(a, 1)\nlatent a ~ Gaussian(0, 1)\n")
        assert m.order == ("a", "b")

    def test_comments_and_blank_lines(self):
        src = "# header\n\nplate A[2]   # two cells\nlatent z[A] ~ Gaussian(0, exp(0.5))  # prior\n"
        m = parse(src)
        assert m.plate_sizes == {"A": 2}
        assert m.latents[0].prior_params[1] == exp(Const(0.5))

    def test_operator_precedence(self):
        m = parse("latent a ~ Gaussian(0,1)\nlatent b ~ Gaussian(1 + 2 * a - -a / 4, 1)\n")
        assert format_expr(m.latents[1].prior_params[0]) == "1 + 2 * a - -a / 4"
        mean = m.latents[1].prior_params[0]
        assert mean.op == "-" and mean.left.op == "+"

    def test_gather_expression(self):
        src = ("plate C[3]\nplate I[5]\ncovariate company[I] : int\nlatent w[C] ~ Gaussian(0, 1)\n"
               "observe y[I] ~ Bernoulli(sigmoid(gather(w, company))) from y\n")
        m = parse(src)
        assert m.observations[0].params[0].arg == Gather("w", "company")

    def test_prior_proposal(self):
        m = parse("latent v ~ Gaussian(0, 1)\nlatent z ~ Gaussian(v, 1) proposal prior\n")
        assert m.latent["z"].proposal == "prior"

    @pytest.mark.parametrize("source,kind", [
        ("latent z ~ Gaussian(0, 1\n", "syntax"),
        ("plate A[0]\n", "plate-mismatch"),
        ("latent z ~ Gaussian(q, 1)\n", "unknown-identifier"),
        ("latent z ~ Gaussian(0, 1)\nlatent z ~ Gaussian(0, 1)\n", "duplicate-name"),
        ("latent z ~ Poisson(1)\n", "unsupported-family"),
        ("latent z ~ NegativeBinomialLik(2, 0.5)\n", "unsupported-family"),
        ("plate A[2]\nplate B[3]\nlatent a[A] ~ Gaussian(0,1)\nlatent b[B] ~ Gaussian(a,1)\n", "plate-mismatch"),
        ("observe x ~ Gaussian(0, 1)\n", "syntax"),
        ("frobnicate z\n", "syntax"),
    ])
    def test_error_kinds(self, source, kind):
        errs = errors_of(source)
        assert kind in {e.kind for e in errs}

    def test_error_spans_point_at_real_characters(self):
        source = "plate A[2]\nlatent z[A] ~ Gaussian(mystery, 1)\n"
        (err,) = errors_of(source)
        line = source.splitlines()[err.span.line - 1]
        assert line[err.span.column - 1:err.span.column - 1 + err.span.length] == "mystery"
        assert "^^^^^^^" in err.format(source)

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet="latentobserv plate[]()~,:+-*/#\n GaussianBernoulli0123456789.xyzAB_", max_size=120))
    def test_total_and_spans_in_range(self, source):
        out = parse(source)
        if isinstance(out, list):
            lines = source.splitlines()
            for e in out:
                assert isinstance(e, ParseError) and isinstance(e.span, SourceSpan)
                assert 1 <= e.span.line <= max(1, len(lines))
                assert e.span.column >= 1 and e.span.length >= 1
                if lines:
                    text = lines[e.span.line - 1]
                    assert e.span.column - 1 <= len(text)

    def test_deterministic(self):
        src = shipped_model_path("bus_mini").read_text()
        assert structure(parse(src)) == structure(parse(src))


class TestPrettyPrint:
    @pytest.mark.parametrize("name", sorted(BUILTINS))
    def test_round_trip(self, name):
        model = get_builtin(name).structure
        text = pretty_print(model)
        again = parse(text)
        assert isinstance(again, ModelIR), again
        assert structure(again) == structure(model)
        assert pretty_print(again) == text

    def test_round_trip_random_models(self, rng):
        from conftest import random_model
        for _ in range(20):
            model = random_model(rng, with_data=False)
            assert structure(parse(pretty_print(model))) == structure(model)


class TestShippedFiles:
    @pytest.mark.parametrize("name", ["conjugate_chain", "radon_linear", "radon_full", "bus_mini", "occupancy_mini"])
    def test_parent_sets_match_builtin(self, name):
        shipped = load_model(shipped_model_path(name))
        sizes = {p.name: p.size for p in shipped.plates}
        builtin = get_builtin(name, **({"d": 3} if name == "conjugate_chain" else {})).structure
        assert parent_sets(shipped) == parent_sets(builtin)
        assert sizes == builtin.plate_sizes

    def test_radon_structure(self):
        parents, obs = parent_sets(load_model(shipped_model_path("radon_full")))
        assert set(parents["StateMean"]) == {"GlobalMean", "GlobalVariance"}
        assert set(obs["Radon"]) == {"StateMean", "StateVariance", "UraniumWeight", "BasementWeight"}

    def test_missing(self):
        with pytest.raises(FileNotFoundError):
            shipped_model_path("nonexistent")


class TestDatasets:
    def test_radon_shape(self, tmp_path):
        inst = make_instance("radon_linear", seed=3, S=4, R=300)
        write_dataset(tmp_path / "radon.csv", inst.model)
        loaded = load_dataset(tmp_path / "radon.csv", inst.builtin.structure)
        assert loaded.data["Radon"].shape == (4, 300)
        np.testing.assert_array_equal(loaded.data["Radon"], inst.model.data["Radon"])

    def test_bus_round_trip(self, tmp_path):
        inst = make_instance("bus_mini", seed=5)
        write_dataset(tmp_path / "bus.csv", inst.model)
        loaded = load_dataset(tmp_path / "bus.csv", inst.builtin.structure)
        assert loaded.report.ok
        for k, v in inst.model.data.items():
            np.testing.assert_array_equal(loaded.data[k], v)
        assert loaded.data["company"].dtype == np.int64

    def _bernoulli_model(self):
        return parse("plate N[3]\nlatent z ~ Gaussian(0, 1)\nobserve y[N] ~ Bernoulli(sigmoid(z)) from y\n")

    def test_out_of_support_names_row(self, tmp_path):
        (tmp_path / "d.csv").write_text("y\n0\n2\n1\n")
        with pytest.raises(SchemaError, match=r"'y' row 3"):
            load_dataset(tmp_path / "d.csv", self._bernoulli_model())

    def test_wrong_row_count(self, tmp_path):
        (tmp_path / "d.csv").write_text("y\n0\n1\n")
        with pytest.raises(SchemaError, match="2 rows, expected 3"):
            load_dataset(tmp_path / "d.csv", self._bernoulli_model())

    def test_missing_column(self, tmp_path):
        (tmp_path / "d.csv").write_text("x\n0\n1\n1\n")
        with pytest.raises(SchemaError, match="missing column 'y'"):
            load_dataset(tmp_path / "d.csv", self._bernoulli_model())

    def test_non_numeric_cell(self, tmp_path):
        (tmp_path / "d.csv").write_text("y\n0\nabc\n1\n")
        with pytest.raises(SchemaError, match="not a number"):
            load_dataset(tmp_path / "d.csv", self._bernoulli_model())

    def test_row_major_order(self, tmp_path):
        model = parse("plate A[2]\nplate B[3]\ncovariate c[A, B] : real\nlatent z ~ Gaussian(0, 1)\n")
        (tmp_path / "d.csv").write_text("c\n" + "\n".join(str(i) for i in range(6)) + "\n")
        loaded = load_dataset(tmp_path / "d.csv", model)
        np.testing.assert_array_equal(loaded.data["c"], [[0, 1, 2], [3, 4, 5]])


def test_format_expr_parenthesises_only_when_needed():
    e = (Ref("a") + Ref("b")) * Ref("c") - (Ref("d") - Ref("e"))
    assert format_expr(e) == "(a + b) * c - (d - e)"

from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from causal_bo.causal_graph import parse_graph
from causal_bo.errors import (
    DependencyViolation,
    DomainViolation,
    InvalidSampleSize,
    NonManipulativeCut,
    NumericOverflow,
    SemSyntaxError,
    UnknownFunction,
    UnknownNode,
)
from causal_bo.estimation import fit_regressor
from causal_bo.models import Direction
from causal_bo.scm import (
    LinearCoefficients,
    NoiseSpec,
    build_linear_sem,
    grid_optimum,
    oracle_mean,
    parse_linear,
    parse_sem,
    sample_interventional,
    sample_observational,
)

TOY_GRAPH = "node X treatment\nnode Z treatment\nnode Y target\nedge X -> Z\nedge Z -> Y\n"

NOISELESS_TOY = """
let X = 0
let Z = exp(-X)
let Y = cos(Z) - exp(-Z / 20)
domain X = [-5, 5]
domain Z = [-5, 20]
"""


@pytest.fixture
def noiseless_toy():
    return parse_sem(NOISELESS_TOY, parse_graph(TOY_GRAPH))


class TestParseSem:
    def test_toy(self, toy):
        assert sorted(toy.sem.equations) == ["X", "Y", "Z"]
        assert toy.sem.domains == {"X": (-5.0, 5.0), "Z": (-5.0, 20.0)}

    def test_healthcare(self, healthcare):
        assert len(healthcare.sem.equations) == 6
        assert healthcare.sem.noises["aspirin"] is None
        assert healthcare.sem.noises["age"].kind == "uniform"

    def test_inline_graph_declarations(self):
        sem = parse_sem(TOY_GRAPH + NOISELESS_TOY)
        assert sem.graph.target == "Y"

    def test_unknown_name(self):
        with pytest.raises(UnknownNode):
            parse_sem(TOY_GRAPH + "let X = 0\nlet Z = W\nlet Y = Z\n")

    def test_non_parent_reference(self):
        with pytest.raises(DependencyViolation) as excinfo:
            parse_sem(TOY_GRAPH + "let X = 0\nlet Z = X\nlet Y = X + Z\n")
        assert excinfo.value.nodes == ("X",)

    def test_missing_equation(self):
        with pytest.raises(DependencyViolation):
            parse_sem(TOY_GRAPH + "let X = 0\nlet Z = X\n")

    def test_unknown_function(self):
        with pytest.raises(UnknownFunction):
            parse_sem(TOY_GRAPH + "let X = 0\nlet Z = tanh(X)\nlet Y = Z\n")

    def test_syntax_error_has_line(self):
        with pytest.raises(SemSyntaxError) as excinfo:
            parse_sem(TOY_GRAPH + "let X = 0\nlet Z = X +\nlet Y = Z\n")
        assert excinfo.value.line == 7

    def test_confounder_needs_shared_latent(self):
        text = TOY_GRAPH + "confounder X <-> Y\nlet X = noise normal(0, 1)\nlet Z = X\nlet Y = Z\n"
        with pytest.raises(DependencyViolation):
            parse_sem(text)

    def test_declaration_order_does_not_matter(self, toy):
        shuffled = "\n".join([
            "domain Z = [-5, 20]",
            "let Y = cos(Z) - exp(-Z / 20) + noise normal(0, 1)",
            "let Z = exp(-X) + noise normal(0, 1)",
            "let X = noise normal(0, 1)",
            "domain X = [-5, 5]",
        ])
        sem = parse_sem(shuffled, toy.graph)
        a = sample_observational(sem, 50, seed=3).frame
        b = sample_observational(toy.sem, 50, seed=3).frame
        assert_array_equal(a.to_numpy(), b.to_numpy())


class TestSampling:
    def test_noiseless_rows(self, noiseless_toy):
        frame = sample_observational(noiseless_toy, 5, seed=0).frame
        assert_allclose(frame["X"], 0.0)
        assert_allclose(frame["Z"], 1.0)
        assert_allclose(frame["Y"], math.cos(1.0) - math.exp(-1.0 / 20), atol=1e-12)
        assert_allclose(frame["Y"], -0.4109, atol=1e-4)

    def test_intervention_replaces_equation(self, noiseless_toy):
        frame = sample_interventional(noiseless_toy, {"Z": 0.0}, 5, seed=0).frame
        assert_allclose(frame["Y"], 0.0, atol=1e-12)

    def test_same_seed_same_rows(self, synthetic):
        a = sample_observational(synthetic.sem, 100, seed=5)
        b = sample_observational(synthetic.sem, 100, seed=5)
        assert a.digest() == b.digest()
        assert a.seed == 5

    def test_append_drops_stale_seed(self, toy):
        first = sample_observational(toy.sem, 10, seed=1)
        more = first.append(sample_observational(toy.sem, 5, seed=2))
        assert more.n_rows == 15
        assert more.seed is None
        assert more.provenance == "observational"
        mixed = first.append(sample_interventional(toy.sem, {"Z": 0.0}, 5, seed=3))
        assert mixed.provenance == "mixed"
        assert mixed.intervention == ()

    def test_degenerate_uniform_noise(self):
        noise = NoiseSpec("uniform", 0.5, 0.5)
        assert_allclose(noise.sample(np.random.default_rng(0), 4), 0.5)
        with pytest.raises(SemSyntaxError, match="a <= b"):
            NoiseSpec("uniform", 1.0, 0.5)

    def test_empty_intervention_matches_observational(self, synthetic):
        a = sample_observational(synthetic.sem, 100, seed=9).frame
        b = sample_interventional(synthetic.sem, {}, 100, seed=9).frame
        assert_array_equal(a.to_numpy(), b.to_numpy())

    def test_zero_rows_rejected(self, toy):
        with pytest.raises(InvalidSampleSize):
            sample_observational(toy.sem, 0)

    def test_domain_violation(self, toy):
        with pytest.raises(DomainViolation) as excinfo:
            sample_interventional(toy.sem, {"Z": 25.0}, 10, seed=0)
        assert excinfo.value.nodes == ("Z",)

    def test_intervention_on_unknown_node(self, toy):
        with pytest.raises(UnknownNode):
            sample_interventional(toy.sem, {"W": 0.0}, 10)

    @pytest.mark.parametrize("node", ["C", "F"])
    def test_intervention_on_context_node(self, synthetic, node):
        with pytest.raises(NonManipulativeCut) as excinfo:
            oracle_mean(synthetic.sem, {node: 0.5}, 100, seed=0)
        assert excinfo.value.nodes == (node,)
        with pytest.raises(NonManipulativeCut):
            sample_interventional(synthetic.sem, {"B": 0.0, node: 0.5}, 10, seed=0)

    def test_overflow(self):
        text = TOY_GRAPH + "let X = 1000\nlet Z = exp(X)\nlet Y = Z\n"
        with pytest.raises(NumericOverflow) as excinfo:
            sample_observational(parse_sem(text), 3, seed=0)
        assert excinfo.value.nodes == ("Z",)

    def test_shared_latent_correlates_confounded_nodes(self, synthetic):
        frame = sample_observational(synthetic.sem, 5000, seed=1).frame
        assert np.corrcoef(frame["B"], frame["Y"])[0, 1] > 0.2


class TestOracle:
    def test_minimal_sample_size(self, toy):
        res = oracle_mean(toy.sem, {"Z": 1.0}, 2, seed=0)
        assert np.isfinite(res.mean) and np.isfinite(res.se)
        with pytest.raises(InvalidSampleSize):
            oracle_mean(toy.sem, {"Z": 1.0}, 1, seed=0)

    def test_cached_result_is_identical(self, toy):
        first = oracle_mean(toy.sem, {"Z": 1.0}, 1000, seed=4)
        assert oracle_mean(toy.sem, {"Z": 1.0}, 1000, seed=4) == first

    @pytest.mark.slow
    def test_toy_analytic_value(self, toy):
        res = oracle_mean(toy.sem, {"Z": math.pi}, 1_000_000, seed=0)
        expected = math.cos(math.pi) - math.exp(-math.pi / 20)
        assert expected == pytest.approx(-1.8546, abs=1e-4)
        assert abs(res.mean - expected) <= 3 * res.se

    @pytest.mark.slow
    def test_b_is_irrelevant_given_d_and_e(self, synthetic):
        rng = np.random.default_rng(0)
        for b, d, e in rng.uniform(-5, 5, size=(20, 3)):
            full = oracle_mean(synthetic.sem, {"B": b, "D": d, "E": e}, 100_000, seed=1)
            part = oracle_mean(synthetic.sem, {"D": d, "E": e}, 100_000, seed=2)
            assert abs(full.mean - part.mean) <= 3 * math.hypot(full.se, part.se)

    @pytest.mark.slow
    def test_root_treatment_matches_conditional_mean(self, toy):
        data = sample_observational(toy.sem, 5000, seed=2)
        reg = fit_regressor(data, "Y", ["X"])
        for x in (-1.0, 0.0, 1.0):
            res = oracle_mean(toy.sem, {"X": x}, 100_000, seed=3)
            mean, _ = reg.predict([[x]])
            assert abs(mean[0] - res.mean) < 0.15

    def test_grid_optimum_on_toy(self, toy):
        point, res = grid_optimum(toy.sem, ["Z"], toy.box.bounds, 101, 2000, seed=0, direction=Direction.MIN)
        # cos(z) - exp(-z/20) の最小は z ≈ -3.2 付近
        assert point[0] == pytest.approx(-3.2, abs=0.4)
        assert res.mean < -1.5

    @pytest.mark.slow
    def test_healthcare_optimum_at_corner(self, healthcare):
        point, _ = grid_optimum(
            healthcare.sem, ["aspirin", "statin"], healthcare.box.bounds, 21, 20_000, seed=0,
        )
        assert point == (0.0, 1.0)


class TestLinearSem:
    GRAPH = "node A treatment\nnode B treatment\nnode Y target\nedge A -> B\nedge B -> Y\nconfounder A <-> Y\n"

    def test_builder_adds_confounder_latent(self):
        coefs = LinearCoefficients(
            weights={("B", "A"): 2.0, ("Y", "B"): -1.0},
            intercepts={"Y": 3.0},
            noise_std={"A": 0.0, "B": 0.0, "Y": 0.0},
        )
        sem = build_linear_sem(parse_graph(self.GRAPH), coefs, domains={"A": (-1.0, 1.0)})
        assert list(sem.latents) == ["U_A_Y"]
        frame = sample_interventional(sem, {"A": 1.0}, 20_000, seed=0).frame
        assert_allclose(frame["B"], 2.0)
        # Y = 3 - B + U_A_Y
        assert frame["Y"].mean() == pytest.approx(1.0, abs=0.05)
        assert frame["Y"].std() == pytest.approx(1.0, abs=0.05)

    def test_parse_linear(self):
        coefs = parse_linear(
            "# header\ncoef B A = 2\nintercept Y = 3\nnoise Y = 0.5\ndomain A = [-1, 1]\n"
        )
        assert coefs.weights == {("B", "A"): 2.0}
        assert coefs.intercepts == {"Y": 3.0}
        assert coefs.noise_std == {"Y": 0.5}
        assert coefs.domains == {"A": (-1.0, 1.0)}

    def test_parse_linear_rejects_garbage(self):
        with pytest.raises(SemSyntaxError) as excinfo:
            parse_linear("coef B A = 2\nslope B = 1\n")
        assert excinfo.value.line == 2

    def test_unknown_nodes(self):
        with pytest.raises(UnknownNode):
            build_linear_sem(parse_graph(self.GRAPH), LinearCoefficients(intercepts={"Q": 1.0}))

    def test_bundled_ecology(self):
        from causal_bo.scenarios import scenario_service

        scenario = scenario_service.get("ecology")
        assert scenario.box.bounds["TA"] == (2200.0, 2550.0)
        frame = sample_observational(scenario.sem, 200, seed=0).frame
        assert np.all(np.isfinite(frame.to_numpy()))

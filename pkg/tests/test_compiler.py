import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ReferenceModel
from conftest import ehealth_parts, seeds_parts
from parabugs import compile_graph, parse_data, parse_model
from parabugs.errors import CompileError
from parabugs.graph import CONSTANT, OBSERVED, PARAMETER
from parabugs.samplers import TermPlan


def test_seeds_parameters(seeds_dag):
    assert len(seeds_dag.parameters) == 26
    assert len(seeds_dag.children(seeds_dag.node("alpha0"))) == 21
    assert len(seeds_dag.children(seeds_dag.node("beta[1]"))) == 1


def test_single_node():
    dag = compile_graph(parse_model("model { x ~ dnorm(0, 1) }"))
    assert list(dag.kind[dag.kind != CONSTANT]) == [PARAMETER]
    assert int((dag.kind == CONSTANT).sum()) == 2
    # the two literal arguments are its parents; it has no children
    assert len(dag.children(dag.node("x"))) == 0
    assert len(dag.parents(dag.node("x"))) == 2


def test_logicals_are_inlined(seeds_dag):
    assert not any(n.startswith(("p[", "tau")) for n in seeds_dag.names)
    # tau's dependence on sigma becomes a direct edge to every beta
    sigma = seeds_dag.node("sigma")
    kids = seeds_dag.children(sigma)
    assert [seeds_dag.names[k] for k in kids] == [f"beta[{i}]" for i in range(1, 22)]


def test_observed_nodes_carry_values(seeds_dag):
    r1 = seeds_dag.node("r[1]")
    assert seeds_dag.kind[r1] == OBSERVED and seeds_dag.values[r1] == 10


def test_missing_values_become_parameters():
    dag = compile_graph(
        parse_model("model { for (i in 1:3) { y[i] ~ dnorm(m, 1) } m ~ dnorm(0, 1) }"),
        parse_data("list(y = c(1, NA, 3))"),
    )
    assert dag.kind[dag.node("y[2]")] == PARAMETER
    assert dag.kind[dag.node("y[1]")] == OBSERVED


def stochastic_count(ast, data):
    """Sum over relations of the product of their loop ranges."""
    total = 0

    def walk(stmts, mult):
        nonlocal total
        for s in stmts:
            if hasattr(s, "body"):
                lo = s.lower.value if hasattr(s.lower, "value") else float(data[s.lower.name])
                hi = s.upper.value if hasattr(s.upper, "value") else float(data[s.upper.name])
                walk(s.body, mult * int(hi - lo + 1))
            elif hasattr(s, "dist"):
                total += mult

    walk(ast.statements, 1)
    return total


def test_unrolling_count():
    ast, data = seeds_parts()
    dag = compile_graph(ast, data)
    assert int((dag.kind != CONSTANT).sum()) == stochastic_count(ast, data) == 47
    ast, env, _ = ehealth_parts(persons=50, regions=4, prescriptions=800, seed=3)
    dag = compile_graph(ast, env)
    assert int((dag.kind != CONSTANT).sum()) == stochastic_count(ast, env)


@pytest.mark.parametrize(
    "src, data, fragment",
    [
        ("model { y ~ dnorm(m, 1) }", "list()", "undefined name"),
        ("model { for (i in 1:N) { y[i] ~ dnorm(0, 1) } }", "list()", "undefined name"),
        ("model { a <- b + 1 \n b <- a \n y ~ dnorm(a, 1) }", "list()", "cyclic"),
        ("model { y ~ dnorm(x[4], 1) }", "list(x = c(1, 2))", "out of range"),
        ("model { y ~ dnorm(x[2], 1) }", "list(x = c(1, NA))", "missing value"),
        ("model { y[1] ~ dnorm(0, 1) \n y[1] ~ dnorm(1, 1) }", "list()", "more than once"),
        ("model { y ~ dnorm(z, 1) \n z ~ dnorm(y, 1) }", "list()", "cycl"),
    ],
)
def test_compile_errors(src, data, fragment):
    with pytest.raises(CompileError) as info:
        compile_graph(parse_model(src), parse_data(data))
    assert fragment in str(info.value)


def _compiled_log_joint(dag, values):
    stoch = np.flatnonzero(dag.kind != CONSTANT)
    return float(TermPlan(dag, [stoch]).evaluate(values)[0])


def _random_assignment(dag, rng):
    values = dag.values.copy()
    out = {}
    for v in dag.parameters:
        name = dag.names[v]
        x = rng.uniform(0.2, 5.0) if name.startswith(("sigma", "sd.")) else rng.normal(0, 1)
        values[v] = x
        out[name] = x
    return values, out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_inlining_invariance_seeds(seed):
    ast, data = seeds_parts()
    dag = compile_graph(ast, data)
    ref = ReferenceModel(ast, data)
    values, named = _random_assignment(dag, np.random.default_rng(seed))
    with np.errstate(all="ignore"):
        assert abs(_compiled_log_joint(dag, values) - ref.log_joint(named)) < 1e-10 * max(1.0, abs(ref.log_joint(named)))


def test_inlining_invariance_ehealth():
    ast, env, _ = ehealth_parts(persons=30, regions=3, prescriptions=300, seed=5)
    dag = compile_graph(ast, env)
    ref = ReferenceModel(ast, env)
    rng = np.random.default_rng(0)
    for _ in range(3):
        values, named = _random_assignment(dag, rng)
        expected = ref.log_joint(named)
        assert abs(_compiled_log_joint(dag, values) - expected) < 1e-10 * max(1.0, abs(expected))

import pytest

from rescurrents.hermitian import ComplexSpec, chern_connections
from rescurrents.scenarios import build_scenario, builtin_config, parse_config


def affine_spec(ranks, phis, F, metrics=None, n=2) -> ComplexSpec:
    """Build an affine complex from matrix text (rows separated by ';')."""
    lines = ["[scenario]", "name = test", f"manifold = affine {n}", "[complex]",
             "ranks = " + ", ".join(map(str, ranks))]
    lines += [f"phi{k} = {p}" for k, p in enumerate(phis, start=1)]
    for k, h in (metrics or {}).items():
        lines.append(f"h{k} = {h}")
    lines += ["[cutoff]", f"F = {F}"]
    return build_scenario(parse_config("\n".join(lines) + "\n")).spec


@pytest.fixture(scope="session")
def koszul():
    sc = build_scenario(builtin_config("koszul-xy"))
    return sc.spec, sc.conns[0]


@pytest.fixture(scope="session")
def p2():
    sc = build_scenario(builtin_config("p2-example"))
    return sc.spec, sc.conns[0]


@pytest.fixture(scope="session")
def p2_perturbed():
    sc = build_scenario(builtin_config("p2-example:metric=perturbed"))
    return sc.spec, sc.conns[0]


def connections(spec):
    return chern_connections(spec)

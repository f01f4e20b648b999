import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import affine_spec
from rescurrents.scenarios import (
    BUILTIN,
    ConfigError,
    ScenarioConfig,
    build_scenario,
    builtin_config,
    evaluate_reference,
    format_config,
    load_config,
    parse_config,
    parse_number,
    parse_test,
    run_target,
)

keys = st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)
values = st.from_regex(r"[A-Za-z0-9*+(),;^/.-]([A-Za-z0-9*+(),;^/. -]{0,20}[A-Za-z0-9*+(),;^/.-])?", fullmatch=True)
values = values.map(lambda v: " ".join(v.split()))


@st.composite
def configs(draw):
    sections = {"scenario": {"name": draw(values)}, "complex": draw(st.dictionaries(keys, values, max_size=4))}
    for s in ("cutoff", "schedule"):
        if draw(st.booleans()):
            sections[s] = draw(st.dictionaries(keys, values, max_size=3))
    targets = draw(st.dictionaries(keys, st.dictionaries(keys, values, max_size=3), max_size=3))
    return ScenarioConfig(sections, targets)


@settings(max_examples=50, deadline=None)
@given(configs())
def test_config_round_trip(cfg):
    text = format_config(cfg)
    assert parse_config(text) == cfg
    assert format_config(parse_config(text)) == text


@pytest.mark.parametrize("name", BUILTIN)
def test_builtin_configs_round_trip_and_build(name):
    cfg = builtin_config(name)
    assert parse_config(format_config(cfg)) == cfg
    build_scenario(cfg)


def test_builtin_parameters_and_labels():
    cfg = builtin_config("p2-example:k=4,l=2,m=3")
    assert "k=4" in cfg.name and "m=3" in cfg.name
    assert load_config("p2-example k=4 l=2 m=3") == cfg
    assert "chi=alt" in builtin_config("p2-example:chi=alt").name
    with pytest.raises(ConfigError):
        builtin_config("no-such-scenario")


def test_config_syntax_errors_name_the_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("[scenario]\nname = a\nname = b\n[complex]\n")
    assert "line" in str(exc.value)
    with pytest.raises(ConfigError):
        parse_config("[scenario]\nname = a\n")
    with pytest.raises(ConfigError):
        parse_config("[scenario]\nname = a\n[complex]\n[bogus]\n")


def test_expression_errors_name_the_column():
    with pytest.raises(ConfigError) as exc:
        affine_spec((1, 1), ["x + * y"], "x")
    assert "column" in str(exc.value)


def test_shape_errors():
    with pytest.raises((ConfigError, ValueError)):
        affine_spec((1, 2), ["x"], "x")


def test_numbers():
    assert parse_number("2") == 2
    assert parse_number("-1.5") == -1.5
    assert parse_number("2*I") == 2j
    assert parse_number("(1 - 2*I)^2") == (1 - 2j) ** 2
    assert parse_number("pi") == pytest.approx(math.pi)
    with pytest.raises(ConfigError):
        parse_number("__import__('os')")


def test_reference_expressions():
    sc = build_scenario(builtin_config("divisor-pl"))
    test = parse_test(sc, "disc(1) * disc(1)")
    # psi(0) of a product of disc bumps is 1
    assert evaluate_reference(sc, "2 * psi(0)", test)[0] == pytest.approx(2)


def test_pointwise_identity_targets_pass():
    sc = build_scenario(builtin_config("exactness-whitney"))
    for name, t in sc.config.targets.items():
        r = run_target(sc, name)
        assert r.passed is True, (name, r.notes)


def test_unknown_target_kind_is_reported():
    sc = build_scenario(builtin_config("divisor-pl"))
    r = run_target(sc, "bad", {"kind": "nonsense"})
    assert r.passed is False and "error" in r.notes

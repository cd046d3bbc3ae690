import pytest

from ebf.config import (
    ConfigSyntaxError,
    ConstraintViolation,
    UnknownKey,
    config_hash,
    load_config,
    parse_config,
    serialize,
)
from ebf.core import Branch, Seq, Tiered

from conftest import preset_text

SMALL = """\
name: small
components:
  - {id: a, service: {exponential: {rate_per_s: 50}}}
  - {id: b, servers: 2, service: {lognormal: {m: 1.0, s: 0.5}}}
topology:
  root: {seq: [a, b]}
workload:
  open: {rate_per_s: 5}
  requests: 100
"""


@pytest.mark.parametrize("name", ["mm1", "ecommerce"])
def test_round_trip_and_hash(name):
    cfg = parse_config(preset_text(name))
    again = parse_config(serialize(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)
    assert len(config_hash(cfg)) == 64


def test_hash_ignores_formatting_but_not_content():
    a = parse_config(SMALL)
    b = parse_config("# comment\n" + SMALL.replace("{rate_per_s: 5}", "{rate_per_s: 5.0}"))
    c = parse_config(SMALL.replace("{rate_per_s: 5}", "{rate_per_s: 6}"))
    assert config_hash(a) == config_hash(b) != config_hash(c)


def test_ecommerce_preset_topology(ecommerce):
    t = ecommerce.topology
    assert t.entry == "search_planner"
    root = t.root
    assert isinstance(root, Seq) and len(root.children) == 4
    planner, recommender, searcher, ranker = root.children
    assert (planner.id, ranker.id) == ("search_planner", "ranker")
    assert recommender.name == "recommender"
    assert any(isinstance(c, Branch) and c.by == "class" for c in recommender.children)
    assert isinstance(searcher, Tiered) and searcher.quota == 20
    assert [tier.component for tier in searcher.tiers] == ["search_high", "search_medium", "search_low"]
    assert ecommerce.workload.fraction_text == 0.9


def test_empty_file():
    with pytest.raises(ConfigSyntaxError):
        parse_config("")
    with pytest.raises(ConfigSyntaxError):
        parse_config("   \n# only a comment\n")


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigSyntaxError) as exc:
        parse_config("name: x\ncomponents: [\n  - a\n")
    assert exc.value.line is not None


def test_misspelled_distribution_names_path():
    bad = SMALL.replace("exponential:", "exponentail:")
    with pytest.raises(UnknownKey) as exc:
        parse_config(bad)
    assert exc.value.path == "components[0].service.exponentail"


def test_unknown_top_level_key():
    with pytest.raises(UnknownKey) as exc:
        parse_config(SMALL + "colour: blue\n")
    assert exc.value.path == "colour"


@pytest.mark.parametrize(
    "old,new,path",
    [
        ("servers: 2", "servers: 0", "components[1].servers"),
        ("{rate_per_s: 5}", "{rate_per_s: -1}", "workload.open.rate_per_s"),
        ("requests: 100", "requests: 100\nsweep: [3, 2]", "sweep"),
    ],
)
def test_constraint_paths(old, new, path):
    with pytest.raises(ConstraintViolation) as exc:
        parse_config(SMALL.replace(old, new))
    assert exc.value.path == path


def test_topology_errors_surface():
    with pytest.raises(ConstraintViolation) as exc:
        parse_config(SMALL.replace("[a, b]", "[a, c]"))
    assert "'c'" in str(exc.value)


def test_entry_defaults_to_first_station():
    assert parse_config(SMALL).topology.entry == "a"
    with pytest.raises(ConstraintViolation):
        parse_config(SMALL.replace("root: {seq: [a, b]}", "root: {seq: [a, b]}\n  entry: b"))


def test_env_seed_override(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(SMALL + "seed: 4\n")
    assert load_config(p, env={}).seed == 4
    cfg = load_config(p, env={"EBF_SEED": "99"})
    assert cfg.seed == 99 and cfg.workload.seed == 99
    with pytest.raises(ConstraintViolation):
        load_config(p, env={"EBF_SEED": "nope"})


def test_hash_ignores_output_paths():
    a = parse_config(SMALL)
    b = parse_config(SMALL + "output: {report: elsewhere.json, traces: t.jsonl}\n")
    assert config_hash(a) == config_hash(b)

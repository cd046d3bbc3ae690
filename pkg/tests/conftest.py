from __future__ import annotations

from importlib.resources import files

import pytest

from ebf.config import parse_config
from ebf.core import ComponentSpec, Deterministic, Exponential, Kind, Leaf, Seq, Topology, validate_topology


def preset_text(name: str) -> str:
    return files("ebf.presets").joinpath(f"{name}.yaml").read_text()


def station(cid: str, model=None, servers: int = 1, kind: Kind = Kind.AI, quality=None) -> ComponentSpec:
    return ComponentSpec(cid, kind, servers, model or Deterministic(1.0), quality=quality)


def topo(components, root=None, entry=None) -> Topology:
    if root is None:
        root = Seq(tuple(Leaf(c.id) for c in components))
    entry = entry or components[0].id
    return validate_topology(Topology(tuple(components), root, entry))


def mm1(mu: float = 20.0) -> Topology:
    return topo([station("server", Exponential(mu))])


@pytest.fixture(scope="session")
def ecommerce():
    return parse_config(preset_text("ecommerce"))


@pytest.fixture(scope="session")
def mm1_config():
    return parse_config(preset_text("mm1"))


# One pass/fail line per acceptance criterion, printed after the run.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])

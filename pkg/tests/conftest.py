"""Shared fixtures: the 33-bus feeder, its exact power-flow solution, the
full measurement set at the solution, and a hand-solvable two-bus case."""

import json

import numpy as np
import pytest

from dsse.measurements import full_measurement_set
from dsse.network import builtin_ieee33, parse_case
from dsse.powerflow import build_linear_model, solve_ac

TWO_BUS_JSON = json.dumps(
    {
        "name": "two-bus",
        "base_mva": 1.0,
        "base_kv": 1.0,
        "buses": [
            {"id": 0, "kind": "slack", "p_load_mw": 0.0, "q_load_mvar": 0.0},
            {"id": 1, "kind": "load", "p_load_mw": 0.5, "q_load_mvar": 0.0},
        ],
        "branches": [{"from": 0, "to": 1, "r_ohm": 0.04, "x_ohm": 0.0}],
    }
)


@pytest.fixture(scope="session")
def net():
    return builtin_ieee33()


@pytest.fixture(scope="session")
def truth(net):
    return solve_ac(net)


@pytest.fixture(scope="session")
def full_set(net, truth):
    return full_measurement_set(truth.v, net)


@pytest.fixture(scope="session")
def linmodel(net):
    return build_linear_model(net)


@pytest.fixture(scope="session")
def two_bus():
    return parse_case(TWO_BUS_JSON)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)

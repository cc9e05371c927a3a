"""Measurement functions, analytic Jacobian, state vector mapping."""

import numpy as np
import pytest

from dsse.measurement_model import (
    I_LINE_IM,
    I_LINE_RE,
    P_INJ,
    Q_INJ,
    REF_VOLT_IM,
    REF_VOLT_RE,
    VMAG,
    MeasurementKind,
    flat_state,
    measurement_function,
    measurement_jacobian,
    state_from_voltage,
    voltage_from_state,
)
from dsse.network import build_ybus
from dsse.powerflow import branch_currents, injected_power


def test_kind_ordering_and_identity():
    a = MeasurementKind(VMAG, 3)
    b = MeasurementKind(VMAG, 3)
    assert a == b
    assert MeasurementKind(P_INJ, 0) < MeasurementKind(Q_INJ, 0)
    assert MeasurementKind(VMAG, 1) < MeasurementKind(VMAG, 2)
    assert not a.on_branch
    assert MeasurementKind(I_LINE_RE, 4).on_branch


def test_unknown_tag_rejected():
    with pytest.raises(ValueError):
        MeasurementKind("Frequency", 0)


def test_state_round_trip(truth):
    x = state_from_voltage(truth.v)
    assert x.shape == (66,)
    assert np.array_equal(voltage_from_state(x), truth.v)


def test_flat_state(net):
    x = flat_state(net)
    v = voltage_from_state(x)
    assert np.array_equal(v, np.ones(33, dtype=complex))
    shifted = voltage_from_state(flat_state(net, v_slack=1.02 + 0.0j))
    assert np.array_equal(shifted, np.full(33, 1.02 + 0.0j))


def test_measurement_function_matches_physics(net, truth):
    ybus = build_ybus(net)
    s = injected_power(ybus, truth.v)
    currents = branch_currents(net, truth.v)
    kinds = [
        MeasurementKind(REF_VOLT_RE, 0),
        MeasurementKind(REF_VOLT_IM, 0),
        MeasurementKind(VMAG, 17),
        MeasurementKind(P_INJ, 5),
        MeasurementKind(Q_INJ, 5),
        MeasurementKind(I_LINE_RE, 3),
        MeasurementKind(I_LINE_IM, 3),
    ]
    h = measurement_function(net, kinds, state_from_voltage(truth.v))
    expected = np.array(
        [
            truth.v[0].real,
            truth.v[0].imag,
            abs(truth.v[17]),
            s[5].real,
            s[5].imag,
            currents[3].real,
            currents[3].imag,
        ]
    )
    assert np.max(np.abs(h - expected)) < 1e-14


def test_measurement_function_accepts_precomputed_ybus(net, truth):
    ybus = build_ybus(net)
    kinds = [MeasurementKind(P_INJ, i) for i in range(33)]
    x = state_from_voltage(truth.v)
    assert np.array_equal(
        measurement_function(net, kinds, x),
        measurement_function(net, kinds, x, ybus=ybus),
    )


def test_jacobian_matches_finite_differences(net, truth):
    # every kind, random perturbed state, central differences
    rng = np.random.default_rng(5)
    x = state_from_voltage(truth.v) + 0.02 * rng.standard_normal(66)
    kinds = [
        MeasurementKind(REF_VOLT_RE, 0),
        MeasurementKind(REF_VOLT_IM, 0),
        MeasurementKind(VMAG, 0),
        MeasurementKind(VMAG, 17),
        MeasurementKind(P_INJ, 0),
        MeasurementKind(P_INJ, 12),
        MeasurementKind(Q_INJ, 25),
        MeasurementKind(I_LINE_RE, 0),
        MeasurementKind(I_LINE_IM, 31),
    ]
    jac = measurement_jacobian(net, kinds, x)
    assert jac.shape == (len(kinds), 66)
    step = 1e-6
    fd = np.zeros_like(jac)
    for col in range(66):
        up = x.copy()
        dn = x.copy()
        up[col] += step
        dn[col] -= step
        fd[:, col] = (
            measurement_function(net, kinds, up) - measurement_function(net, kinds, dn)
        ) / (2 * step)
    assert np.max(np.abs(jac - fd)) < 1e-6


def test_jacobian_reference_rows_are_selectors(net):
    kinds = [MeasurementKind(REF_VOLT_RE, 0), MeasurementKind(REF_VOLT_IM, 0)]
    jac = measurement_jacobian(net, kinds, flat_state(net))
    expected = np.zeros((2, 66))
    expected[0, 0] = 1.0
    expected[1, 33] = 1.0
    assert np.array_equal(jac, expected)


def test_current_rows_are_state_independent(net, truth):
    # branch currents are linear in the rectangular state
    kinds = [MeasurementKind(I_LINE_RE, 7), MeasurementKind(I_LINE_IM, 7)]
    j1 = measurement_jacobian(net, kinds, flat_state(net))
    j2 = measurement_jacobian(net, kinds, state_from_voltage(truth.v))
    assert np.allclose(j1, j2, atol=1e-15)

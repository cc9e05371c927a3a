"""Ground-truth power flow and the fixed-point linear voltage model."""

import math

import numpy as np
import pytest

from dsse.errors import PowerFlowDivergenceError
from dsse.network import build_ybus
from dsse.powerflow import (
    branch_currents,
    build_linear_model,
    injected_power,
    nominal_injections,
    solve_ac,
)


def test_two_bus_closed_form(two_bus):
    # v1 solves v1^2 - v1 + r*p = 0 with r = 0.04, p = 0.5
    result = solve_ac(two_bus)
    v1 = (1.0 + math.sqrt(1.0 - 4.0 * 0.04 * 0.5)) / 2.0
    assert abs(result.v[1] - v1) < 1e-12
    assert result.v[1].imag == pytest.approx(0.0, abs=1e-12)
    assert abs(result.v[0] - 1.0) < 1e-15


def test_feeder_solution(net, truth):
    assert truth.max_mismatch < 1e-10
    assert truth.iterations <= 10
    vmag = np.abs(truth.v)
    assert truth.v[0] == 1.0 + 0.0j
    # minimum voltage sits at the end of the main lateral
    assert int(np.argmin(vmag)) == 17
    assert abs(vmag[17] - 0.913090) < 5e-7


def test_mismatch_is_tiny_at_solution(net, truth):
    ybus = build_ybus(net)
    s = injected_power(ybus, truth.v)
    target = nominal_injections(net)
    assert np.max(np.abs(s[1:] - target[1:])) < 1e-10


def test_slack_injection_balances_losses(net, truth):
    ybus = build_ybus(net)
    s = injected_power(ybus, truth.v)
    # slack supplies total load plus series losses
    assert abs(s[0] - (0.391768 + 0.243514j)) < 5e-6
    losses = np.sum(s)
    assert abs(losses.real * net.base_mva - 0.202677) < 5e-6
    assert abs(losses.imag * net.base_mva - 0.135141) < 5e-6


def test_nominal_injections_signs(net):
    inj = nominal_injections(net)
    assert inj[0] == 0.0 + 0.0j
    assert np.all(inj[1:].real <= 0.0)
    assert abs(np.sum(inj.real) + 0.3715) < 1e-12
    assert abs(np.sum(inj.imag) + 0.23) < 1e-12


def test_zero_injections_give_flat_profile(net):
    result = solve_ac(net, injections=np.zeros(net.n_bus, dtype=complex))
    assert result.iterations == 0
    assert np.array_equal(result.v, np.ones(net.n_bus, dtype=complex))


def test_custom_slack_voltage(net):
    result = solve_ac(net, v_slack=1.02 + 0.0j)
    assert result.v[0] == 1.02 + 0.0j
    assert np.min(np.abs(result.v)) > 0.91


def test_solution_is_deterministic(net, truth):
    again = solve_ac(net)
    assert np.array_equal(again.v, truth.v)


def test_heavy_loading_converges(net):
    result = solve_ac(net, injections=3.0 * nominal_injections(net))
    assert np.min(np.abs(result.v)) == pytest.approx(0.6603, abs=5e-4)


def test_divergence_raises(net):
    with pytest.raises(PowerFlowDivergenceError) as err:
        solve_ac(net, injections=5.0 * nominal_injections(net))
    assert err.value.iterations == 30
    assert err.value.mismatch > 1.0


def test_branch_currents_satisfy_kcl(net, truth):
    currents = branch_currents(net, truth.v)
    assert currents.shape == (32,)
    ybus = build_ybus(net)
    # bus current balance: sum of branch flows at a bus equals Ybus row action
    injected = ybus @ truth.v
    accum = np.zeros(net.n_bus, dtype=complex)
    for k, branch in enumerate(net.branches):
        accum[branch.from_bus] += currents[k]
        accum[branch.to_bus] -= currents[k]
    assert np.max(np.abs(accum - injected)) < 1e-12


def test_linear_model_shapes(net, linmodel):
    n = net.n_bus
    assert linmodel.slack == 0
    assert len(linmodel.non_slack) == n - 1
    assert linmodel.w.shape == (n - 1,)
    assert linmodel.d.shape == (n - 1, 2 * n)
    assert linmodel.k.shape == (n - 1, 2 * n)


def test_linear_model_zero_load_is_exact(net, linmodel):
    # with no injections the network floats at the slack voltage
    x = np.zeros(2 * net.n_bus)
    assert np.max(np.abs(linmodel.predict_v(x) - 1.0)) < 1e-12
    assert np.max(np.abs(linmodel.w - 1.0)) < 1e-12


def test_linear_model_slack_columns_are_zero(net, linmodel):
    n = net.n_bus
    assert np.all(linmodel.d[:, 0] == 0.0)
    assert np.all(linmodel.d[:, n] == 0.0)


def test_linear_model_magnitude_row_identity(net, linmodel):
    # k is the real part of the phasor sensitivity rotated to |w|
    expected = np.real((np.conj(linmodel.w) / np.abs(linmodel.w))[:, None] * linmodel.d)
    assert np.array_equal(linmodel.k, expected)


def test_linear_model_gap_grows_with_load(net, linmodel, truth):
    gaps = []
    for lam in (0.25, 0.5, 1.0, 1.5):
        pf = solve_ac(net, injections=lam * nominal_injections(net))
        s = pf.v * np.conj(build_ybus(net) @ pf.v)
        x = np.concatenate([s.real, s.imag])
        gaps.append(float(np.max(np.abs(pf.v[1:] - linmodel.predict_v(x)))))
    assert gaps == sorted(gaps)
    assert abs(gaps[0] - 3.566747e-4) < 1e-9
    assert abs(gaps[2] - 6.428744e-3) < 1e-8


def test_linear_model_vmag_prediction_tracks_ac(net, linmodel, truth):
    s = truth.v * np.conj(build_ybus(net) @ truth.v)
    x = np.concatenate([s.real, s.imag])
    vmag = linmodel.predict_vmag(x)
    assert np.max(np.abs(vmag - np.abs(truth.v[1:]))) < 1e-2

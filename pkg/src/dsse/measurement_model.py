"""Meter model: measurement functions h(x) and their Jacobian.

The estimation state is the stacked rectangular voltage vector
``x = [e; f]`` of length 2n (slack included; the reference-phasor
measurements pin its entries). Seven measurement kinds are modeled:

    RefVoltRe   e at the slack bus
    RefVoltIm   f at the slack bus
    Vmag        sqrt(e_i^2 + f_i^2)
    Pinj        Re(v_i conj((Y v)_i))
    Qinj        Im(v_i conj((Y v)_i))
    IlineRe     Re(y_ij (v_i - v_j)) at a branch's sending end
    IlineIm     Im(y_ij (v_i - v_j))

All functions are polynomial or smooth in (e, f), so the analytic
Jacobian is exact.
"""

from dataclasses import dataclass

import numpy as np

from .network import branch_admittance, build_ybus

REF_VOLT_RE = "RefVoltRe"
REF_VOLT_IM = "RefVoltIm"
VMAG = "Vmag"
P_INJ = "Pinj"
Q_INJ = "Qinj"
I_LINE_RE = "IlineRe"
I_LINE_IM = "IlineIm"

BUS_TAGS = frozenset({REF_VOLT_RE, REF_VOLT_IM, VMAG, P_INJ, Q_INJ})
BRANCH_TAGS = frozenset({I_LINE_RE, I_LINE_IM})
ALL_TAGS = BUS_TAGS | BRANCH_TAGS


@dataclass(frozen=True, order=True)
class MeasurementKind:
    """A meter identity: what is measured and where.

    ``index`` is a bus id for bus-attached kinds and a position into
    ``network.branches`` for line-current kinds.
    """

    tag: str
    index: int

    def __post_init__(self):
        if self.tag not in ALL_TAGS:
            raise ValueError(f"unknown measurement tag '{self.tag}'")

    @property
    def on_branch(self):
        return self.tag in BRANCH_TAGS


def state_from_voltage(v):
    """Stack a complex voltage profile into the real state ``[e; f]``."""
    v = np.asarray(v, dtype=complex)
    return np.concatenate([v.real, v.imag])


def voltage_from_state(x):
    """Inverse of :func:`state_from_voltage`."""
    x = np.asarray(x, dtype=float)
    n = x.size // 2
    return x[:n] + 1j * x[n:]


def flat_state(network, v_slack=1.0 + 0.0j):
    """All buses at the slack phasor; the usual estimator start point."""
    n = network.n_bus
    return np.concatenate([np.full(n, v_slack.real), np.full(n, v_slack.imag)])


def measurement_function(network, kinds, x, ybus=None):
    """Evaluate h(x) for each kind, in order."""
    if ybus is None:
        ybus = build_ybus(network)
    n = network.n_bus
    e, f = x[:n], x[n:]
    g_e = ybus.real @ e - ybus.imag @ f  # Re(Y v)
    g_f = ybus.real @ f + ybus.imag @ e  # Im(Y v)

    out = np.empty(len(kinds))
    for row, kind in enumerate(kinds):
        i = kind.index
        if kind.tag == REF_VOLT_RE:
            out[row] = e[i]
        elif kind.tag == REF_VOLT_IM:
            out[row] = f[i]
        elif kind.tag == VMAG:
            out[row] = np.hypot(e[i], f[i])
        elif kind.tag == P_INJ:
            out[row] = e[i] * g_e[i] + f[i] * g_f[i]
        elif kind.tag == Q_INJ:
            out[row] = f[i] * g_e[i] - e[i] * g_f[i]
        else:
            branch = network.branches[i]
            y = branch_admittance(branch)
            de = e[branch.from_bus] - e[branch.to_bus]
            df = f[branch.from_bus] - f[branch.to_bus]
            if kind.tag == I_LINE_RE:
                out[row] = y.real * de - y.imag * df
            else:
                out[row] = y.real * df + y.imag * de
    return out


def measurement_jacobian(network, kinds, x, ybus=None):
    """Dense Jacobian dh/dx, shape ``(len(kinds), 2n)``."""
    if ybus is None:
        ybus = build_ybus(network)
    n = network.n_bus
    e, f = x[:n], x[n:]
    g_mat, b_mat = ybus.real, ybus.imag
    g_e = g_mat @ e - b_mat @ f
    g_f = g_mat @ f + b_mat @ e

    jac = np.zeros((len(kinds), 2 * n))
    for row, kind in enumerate(kinds):
        i = kind.index
        if kind.tag == REF_VOLT_RE:
            jac[row, i] = 1.0
        elif kind.tag == REF_VOLT_IM:
            jac[row, n + i] = 1.0
        elif kind.tag == VMAG:
            mag = np.hypot(e[i], f[i])
            jac[row, i] = e[i] / mag
            jac[row, n + i] = f[i] / mag
        elif kind.tag == P_INJ:
            jac[row, :n] = e[i] * g_mat[i] + f[i] * b_mat[i]
            jac[row, n:] = -e[i] * b_mat[i] + f[i] * g_mat[i]
            jac[row, i] += g_e[i]
            jac[row, n + i] += g_f[i]
        elif kind.tag == Q_INJ:
            jac[row, :n] = f[i] * g_mat[i] - e[i] * b_mat[i]
            jac[row, n:] = -f[i] * b_mat[i] - e[i] * g_mat[i]
            jac[row, i] -= g_f[i]
            jac[row, n + i] += g_e[i]
        else:
            branch = network.branches[i]
            y = branch_admittance(branch)
            a, b = branch.from_bus, branch.to_bus
            if kind.tag == I_LINE_RE:
                jac[row, a], jac[row, b] = y.real, -y.real
                jac[row, n + a], jac[row, n + b] = -y.imag, y.imag
            else:
                jac[row, a], jac[row, b] = y.imag, -y.imag
                jac[row, n + a], jac[row, n + b] = y.real, -y.real
    return jac

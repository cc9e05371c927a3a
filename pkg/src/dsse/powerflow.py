"""AC power flow and a linearized voltage model.

The exact solver is Newton-Raphson in rectangular voltage coordinates
``v = e + jf``: the slack bus is held at a fixed phasor and the active
and reactive injection equations at every other bus are driven to zero.
Rectangular coordinates keep the residual polynomial (quadratic), so
the Jacobian is exact and convergence near the solution is quadratic.

The linearized model is a first-order fixed-point expansion around the
zero-load voltage profile ``w``: for non-slack buses,

    v  ~=  w + D x        (complex voltage)
    |v| ~=  |w| + K x     (voltage magnitude)

with ``x = [p; q]`` the stacked real injections at all buses (slack
columns are zero, since the slack voltage is pinned). Estimators use
``D`` and ``K`` as soft consistency constraints between voltage and
injection variables.
"""

from dataclasses import dataclass

import numpy as np

from .errors import LinearModelError, PowerFlowDivergenceError
from .network import branch_admittance, build_ybus


@dataclass(frozen=True)
class PowerFlowResult:
    """Solved operating point.

    Attributes:
        v: complex bus voltages, per-unit, indexed by bus id.
        iterations: Newton steps taken.
        max_mismatch: worst absolute injection residual at exit.
    """

    v: np.ndarray
    iterations: int
    max_mismatch: float


def nominal_injections(network):
    """Net complex power injection per bus from the case loads.

    Loads consume, so a load of ``p + jq`` is an injection of
    ``-(p + jq)``. The slack entry is zero; the solver ignores it.
    """
    s = np.zeros(network.n_bus, dtype=complex)
    for bus in network.buses:
        s[bus.id] = -complex(bus.p_load, bus.q_load)
    s[network.slack] = 0.0
    return s


def injected_power(ybus, v):
    """Complex injections ``s_i = v_i * conj((Y v)_i)`` for a voltage profile."""
    return v * np.conj(ybus @ v)


def branch_currents(network, v):
    """Series current ``I_ij = y_ij (v_i - v_j)`` for every branch, sending end."""
    out = np.empty(network.n_branch, dtype=complex)
    for k, branch in enumerate(network.branches):
        out[k] = branch_admittance(branch) * (v[branch.from_bus] - v[branch.to_bus])
    return out


def solve_ac(network, injections=None, v_slack=1.0 + 0.0j, tol=1e-10, max_iter=30):
    """Newton-Raphson power flow in rectangular coordinates.

    Args:
        network: the feeder to solve.
        injections: complex net injection per bus (defaults to
            :func:`nominal_injections`); the slack entry is ignored.
        v_slack: fixed slack phasor, per-unit.
        tol: convergence threshold on the worst injection mismatch.
        max_iter: Newton step budget.

    Returns:
        PowerFlowResult with the converged voltage profile.

    Raises:
        PowerFlowDivergenceError: mismatch still above ``tol`` after
            ``max_iter`` steps.
    """
    ybus = build_ybus(network)
    if injections is None:
        injections = nominal_injections(network)
    n = network.n_bus
    slack = network.slack
    free = np.array([i for i in range(n) if i != slack])
    p_spec = injections.real
    q_spec = injections.imag

    e = np.full(n, v_slack.real)
    f = np.full(n, v_slack.imag)

    for iteration in range(max_iter + 1):
        g_e = ybus.real @ e - ybus.imag @ f  # Re(Y v)
        g_f = ybus.real @ f + ybus.imag @ e  # Im(Y v)
        p = e * g_e + f * g_f
        q = f * g_e - e * g_f
        mismatch = np.concatenate([(p_spec - p)[free], (q_spec - q)[free]])
        max_mismatch = float(np.max(np.abs(mismatch))) if free.size else 0.0
        if max_mismatch < tol:
            return PowerFlowResult(v=e + 1j * f, iterations=iteration, max_mismatch=max_mismatch)
        if iteration == max_iter:
            break

        g_mat = ybus.real
        b_mat = ybus.imag
        j_pe = e[:, None] * g_mat + f[:, None] * b_mat + np.diag(g_e)
        j_pf = -e[:, None] * b_mat + f[:, None] * g_mat + np.diag(g_f)
        j_qe = f[:, None] * g_mat - e[:, None] * b_mat - np.diag(g_f)
        j_qf = -f[:, None] * b_mat - e[:, None] * g_mat + np.diag(g_e)
        jac = np.block(
            [
                [j_pe[np.ix_(free, free)], j_pf[np.ix_(free, free)]],
                [j_qe[np.ix_(free, free)], j_qf[np.ix_(free, free)]],
            ]
        )
        try:
            step = np.linalg.solve(jac, mismatch)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowDivergenceError(
                f"singular Jacobian at iteration {iteration}",
                mismatch=max_mismatch,
                iterations=iteration,
            ) from exc
        e[free] += step[: free.size]
        f[free] += step[free.size :]

    raise PowerFlowDivergenceError(
        f"no convergence after {max_iter} iterations (mismatch {max_mismatch:.3e})",
        mismatch=max_mismatch,
        iterations=max_iter,
    )


@dataclass(frozen=True)
class LinearModel:
    """First-order voltage model around the zero-load profile.

    Attributes:
        slack: slack bus id.
        non_slack: bus ids covered by the model rows, in order.
        w: complex zero-load voltages at the non-slack buses.
        d: complex sensitivity, shape ``(n-1, 2n)``; columns are the
            stacked ``[p; q]`` injections at all buses (slack columns 0).
        k: real magnitude sensitivity, same shape, ``|v| ~= |w| + k x``.
    """

    slack: int
    non_slack: np.ndarray
    w: np.ndarray
    d: np.ndarray
    k: np.ndarray

    def predict_v(self, x):
        """Complex non-slack voltages for stacked injections ``x = [p; q]``."""
        return self.w + self.d @ x

    def predict_vmag(self, x):
        """Non-slack voltage magnitudes for stacked injections ``x``."""
        return np.abs(self.w) + self.k @ x


def build_linear_model(network, v_slack=1.0 + 0.0j):
    """Build the fixed-point linearization for a network.

    Raises:
        LinearModelError: the reduced admittance matrix is singular or
            the zero-load profile has a zero-magnitude entry.
    """
    ybus = build_ybus(network)
    n = network.n_bus
    slack = network.slack
    non_slack = np.array([i for i in range(n) if i != slack])

    y_ll = ybus[np.ix_(non_slack, non_slack)]
    y_l0 = ybus[non_slack, slack]
    try:
        w = np.linalg.solve(y_ll, -y_l0 * v_slack)
    except np.linalg.LinAlgError as exc:
        raise LinearModelError("reduced admittance matrix is singular") from exc
    if np.any(np.abs(w) == 0.0):
        raise LinearModelError("zero-load profile has a zero-magnitude voltage")

    # columns of Y_LL^-1 diag(1/conj(w)), scattered to full bus indexing
    core = np.linalg.solve(y_ll, np.diag(1.0 / np.conj(w)))
    d = np.zeros((non_slack.size, 2 * n), dtype=complex)
    d[:, non_slack] = core
    d[:, n + non_slack] = -1j * core
    k = np.real((np.conj(w) / np.abs(w))[:, None] * d)
    return LinearModel(slack=slack, non_slack=non_slack, w=w, d=d, k=k)

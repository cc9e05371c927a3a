"""State estimators: WLS, WLS-LNR, MCSE, and RMCSE.

WLS is Gauss-Newton over the rectangular voltage state and needs an
observable measurement set. WLS-LNR wraps it with largest-normalized-
residual bad-data removal.

The matrix-completion estimators arrange the state into an m x 12
state-measurement matrix X with one row per branch,

    [Re Vi, Im Vi, |Vi|, Pi, Qi, Re Vj, Im Vj, |Vj|, Pj, Qj, Re Iij, Im Iij],

and exploit its low rank: minimize the nuclear norm of X subject to
consistency with the observed entries plus physics side constraints
(per-branch Ohm's law within a slack, and a linearized voltage model
within infinity-norm bounds). Cells of buses shared by several rows
refer to the same underlying variable, so cross-row consistency holds
by construction. The magnitude column is an independent variable u
tied to the phasor components only through the linear model; the exact
relation u = sqrt(e^2 + f^2) is nonconvex and never imposed.

RMCSE charges each observed cell a Huber penalty: quadratic within
HUBER_K sigmas of the measured value, linear with slope w1 beyond.
MCSE instead caps the Euclidean norm of the raw per-cell mismatches
with a hard bound delta. Both pin the slack-bus phasor cells to the
reference measurements, which fixes the otherwise-free global phase.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from . import conic
from .conic import ConicProgram, LinExpr
from .errors import ExtractionError, NonConvergenceError, UnobservableError
from .measurement_model import (
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
from .measurements import MeasurementSet, numerical_rank
from .network import build_ybus, branch_admittance
from .powerflow import branch_currents, build_linear_model, injected_power

LNR_THRESHOLD = 3.0
# normalized-residual variances below this are treated as critical
# (residual identically zero, error not identifiable)
OMEGA_FLOOR = 1e-10
# false-alarm probability of the chi-square detection test that gates
# each removal round
CHI2_ALPHA = 0.01

WLS_TOL = 1e-8
WLS_MAX_ITER = 50
# step halvings per Gauss-Newton iteration before giving up on descent
WLS_MAX_BACKTRACK = 16

# width of the quadratic core of the per-cell Huber penalty, in sigmas
HUBER_K = 3.0


@dataclass(frozen=True)
class RmcseWeights:
    """Objective weights (residual, Ohm slacks, phasor bound, magnitude bound)."""

    w1: float = 2.0
    w2: float = 200.0
    w3: float = 200.0
    w4: float = 200.0

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class EstimationResult:
    """Common estimator output.

    ``vmag`` is ``abs(voltage)`` for WLS-family estimators; for the
    completion estimators it is the independent magnitude column u,
    which need not equal the phasor magnitude exactly.
    """

    voltage: np.ndarray
    vmag: np.ndarray
    angle_deg: np.ndarray
    injections: np.ndarray
    line_currents: np.ndarray
    solver_status: str
    removed_measurements: tuple = ()
    iterations: int = 0


# ---------------------------------------------------------------------------
# state-measurement matrix schema
# ---------------------------------------------------------------------------

E_RE = "e"
E_IM = "f"
U_MAG = "u"
P_VAR = "p"
Q_VAR = "q"
I_RE = "ir"
I_IM = "ii"

_KIND_FAMILY = {
    REF_VOLT_RE: E_RE,
    REF_VOLT_IM: E_IM,
    VMAG: U_MAG,
    P_INJ: P_VAR,
    Q_INJ: Q_VAR,
    I_LINE_RE: I_RE,
    I_LINE_IM: I_IM,
}


@dataclass(frozen=True)
class StateMatrixSchema:
    """Cell layout of the m x 12 state-measurement matrix.

    Each row belongs to one branch; the 12 columns hold the two endpoint
    bus blocks (Re V, Im V, |V|, P, Q) followed by the branch-current
    components. ``cell_ref`` resolves a cell to its underlying variable
    reference (family tag, bus or branch index); shared buses resolve to
    the same reference from every row that contains them.
    """

    n_bus: int
    endpoints: tuple  # (from_bus, to_bus) per row

    @staticmethod
    def from_network(network):
        return StateMatrixSchema(
            n_bus=network.n_bus,
            endpoints=tuple((br.from_bus, br.to_bus) for br in network.branches),
        )

    @property
    def n_row(self):
        return len(self.endpoints)

    def cell_ref(self, row, col):
        i, j = self.endpoints[row]
        bus_families = (E_RE, E_IM, U_MAG, P_VAR, Q_VAR)
        if col < 5:
            return (bus_families[col], i)
        if col < 10:
            return (bus_families[col - 5], j)
        return (I_RE if col == 10 else I_IM, row)

    def cells_for(self, family, index):
        """All (row, col) cells backed by one variable reference."""
        out = []
        for row in range(self.n_row):
            for col in range(12):
                if self.cell_ref(row, col) == (family, index):
                    out.append((row, col))
        return out

    def kind_ref(self, kind):
        """Variable reference measured by a measurement kind."""
        return (_KIND_FAMILY[kind.tag], kind.index)


def build_state_matrix(v, network):
    """Ground-truth m x 12 state-measurement matrix for a voltage profile."""
    schema = StateMatrixSchema.from_network(network)
    v = np.asarray(v, dtype=complex)
    s = injected_power(build_ybus(network), v)
    i_line = branch_currents(network, v)
    values = {
        E_RE: v.real,
        E_IM: v.imag,
        U_MAG: np.abs(v),
        P_VAR: s.real,
        Q_VAR: s.imag,
        I_RE: i_line.real,
        I_IM: i_line.imag,
    }
    mat = np.empty((schema.n_row, 12))
    for row in range(schema.n_row):
        for col in range(12):
            family, index = schema.cell_ref(row, col)
            mat[row, col] = values[family][index]
    return mat


# ---------------------------------------------------------------------------
# WLS and largest-normalized-residual removal
# ---------------------------------------------------------------------------

def _check_sigmas(mset):
    if any(m.sigma <= 0 for m in mset):
        raise ValueError("all measurement sigmas must be positive (apply add_noise first)")


def _require_observable(mset, network, x):
    jac = measurement_jacobian(network, mset.kinds, x)
    rank = numerical_rank(jac)
    n_states = 2 * network.n_bus
    if rank < n_states:
        raise UnobservableError(
            f"measurement set observes rank {rank} of {n_states} states",
            rank=rank,
            states=n_states,
        )
    return jac


def wls(mset, network, init=None, tol=WLS_TOL, max_iter=WLS_MAX_ITER):
    """Gauss-Newton weighted least squares over rectangular voltages.

    Args:
        mset: observable measurement set with positive sigmas.
        network: the feeder.
        init: starting complex voltage profile (flat start by default).

    Raises:
        UnobservableError: Jacobian rank below 2n at the initial point.
        NonConvergenceError: step norm still above ``tol`` after
            ``max_iter`` iterations; carries the last iterate.
    """
    _check_sigmas(mset)
    ybus = build_ybus(network)
    kinds = mset.kinds
    z = mset.values()
    weights = 1.0 / mset.sigmas() ** 2

    x = state_from_voltage(init) if init is not None else flat_state(network)
    x = x.astype(float).copy()
    _require_observable(mset, network, x)

    for iteration in range(1, max_iter + 1):
        h = measurement_function(network, kinds, x, ybus=ybus)
        jac = measurement_jacobian(network, kinds, x, ybus=ybus)
        gain = (jac * weights[:, None]).T @ jac
        rhs = (jac * weights[:, None]).T @ (z - h)
        # minimum-norm step: the flat start is a degenerate point where
        # the gain can be near-singular even for observable sets, and a
        # plain solve would take a wild first step and diverge
        step = np.linalg.lstsq(gain, rhs, rcond=1e-10)[0]
        # the step is always a descent direction for the weighted
        # objective, but the full update can cycle without progress on
        # ill-conditioned sets; halve it until the objective decreases
        obj = float(weights @ (z - h) ** 2)
        scale = 1.0
        for _ in range(WLS_MAX_BACKTRACK):
            h_new = measurement_function(network, kinds, x + scale * step, ybus=ybus)
            if float(weights @ (z - h_new) ** 2) <= obj:
                break
            scale *= 0.5
        step = scale * step
        x += step
        if np.max(np.abs(step)) < tol:
            v = voltage_from_state(x)
            return EstimationResult(
                voltage=v,
                vmag=np.abs(v),
                angle_deg=np.degrees(np.angle(v)),
                injections=injected_power(ybus, v),
                line_currents=branch_currents(network, v),
                solver_status="optimal",
                iterations=iteration,
            )

    raise NonConvergenceError(
        f"no convergence after {max_iter} Gauss-Newton iterations",
        iterate=voltage_from_state(x),
        iterations=max_iter,
    )


def normalized_residuals(result, mset, network):
    """Largest-normalized-residual statistics for a WLS solution.

    Returns |r_i| / sqrt(Omega_ii) per measurement, where Omega is the
    residual covariance R - H G^-1 H^T. Entries whose residual variance
    vanishes (critical measurements) come back as NaN: their errors are
    not identifiable.
    """
    _check_sigmas(mset)
    x = state_from_voltage(result.voltage)
    kinds = mset.kinds
    z = mset.values()
    sigmas = mset.sigmas()
    weights = 1.0 / sigmas**2

    h = measurement_function(network, kinds, x)
    jac = measurement_jacobian(network, kinds, x)
    gain = (jac * weights[:, None]).T @ jac
    try:
        core = np.linalg.solve(gain, jac.T)
    except np.linalg.LinAlgError as exc:
        raise UnobservableError(
            "gain matrix singular in residual analysis",
            rank=numerical_rank(jac),
            states=x.size,
        ) from exc
    omega_diag = sigmas**2 - np.einsum("ij,ji->i", jac, core)
    r = z - h
    out = np.full(len(kinds), np.nan)
    identifiable = omega_diag > OMEGA_FLOOR
    out[identifiable] = np.abs(r[identifiable]) / np.sqrt(omega_diag[identifiable])
    return out


def _weighted_ssr(result, mset, network):
    """Objective of the WLS fit: sum of squared sigma-scaled residuals."""
    h = measurement_function(network, mset.kinds, state_from_voltage(result.voltage))
    return float(np.sum(((mset.values() - h) / mset.sigmas()) ** 2))


def wls_lnr(mset, network, threshold=LNR_THRESHOLD, init=None):
    """WLS with chi-square-gated largest-normalized-residual removal.

    Each round first runs the chi-square detection test on the WLS
    objective (degrees of freedom = measurements minus states, false
    alarm probability CHI2_ALPHA); only when it reports bad data is the
    measurement with the largest normalized residual removed, provided
    that residual exceeds ``threshold`` and the set stays observable.
    Without the detection gate the bare residual loop false-alarms on
    a few percent of clean trials (the maximum of a hundred-odd unit
    normals regularly crosses 3) and cascades into extra removals
    after a genuine hit. Removed kinds are recorded on the result.

    Raises:
        UnobservableError: the initial set is already unobservable.
    """
    current = mset
    removed = []
    result = wls(current, network, init=init)
    n_states = 2 * network.n_bus

    while True:
        dof = len(current) - n_states
        if dof <= 0:
            break
        if _weighted_ssr(result, current, network) <= chi2.ppf(1.0 - CHI2_ALPHA, dof):
            break  # objective consistent with the claimed sigmas
        r_norm = normalized_residuals(result, current, network)
        if np.all(np.isnan(r_norm)):
            break
        worst = int(np.nanargmax(r_norm))
        if r_norm[worst] <= threshold:
            break
        candidate = tuple(
            m for pos, m in enumerate(current.measurements) if pos != worst
        )
        candidate_set = MeasurementSet(candidate, network_name=current.network_name)
        jac = measurement_jacobian(network, candidate_set.kinds, flat_state(network))
        if numerical_rank(jac) < n_states:
            break  # removal would destroy observability; keep the suspect
        removed.append(current.measurements[worst].kind)
        current = candidate_set
        result = wls(current, network, init=init)

    if removed:
        result = EstimationResult(
            voltage=result.voltage,
            vmag=result.vmag,
            angle_deg=result.angle_deg,
            injections=result.injections,
            line_currents=result.line_currents,
            solver_status=result.solver_status,
            removed_measurements=tuple(removed),
            iterations=result.iterations,
        )
    return result


# ---------------------------------------------------------------------------
# matrix-completion estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarLayout:
    """Index layout of the completion program's physical variables."""

    n: int
    m: int

    def e(self, i):
        return i

    def f(self, i):
        return self.n + i

    def u(self, i):
        return 2 * self.n + i

    def p(self, i):
        return 3 * self.n + i

    def q(self, i):
        return 4 * self.n + i

    def ir(self, k):
        return 5 * self.n + k

    def ii(self, k):
        return 5 * self.n + self.m + k

    @property
    def size(self):
        return 5 * self.n + 2 * self.m

    def ref_index(self, family, index):
        return {
            E_RE: self.e,
            E_IM: self.f,
            U_MAG: self.u,
            P_VAR: self.p,
            Q_VAR: self.q,
            I_RE: self.ir,
            I_IM: self.ii,
        }[family](index)


def _completion_program(mset, network, weights, linmodel, frob_in_objective, delta):
    """Shared conic program for MCSE/RMCSE; returns (program, layout)."""
    _check_sigmas(mset)
    n, m = network.n_bus, network.n_branch
    layout = VarLayout(n=n, m=m)
    schema = StateMatrixSchema.from_network(network)
    prog = ConicProgram()
    prog.add_var(layout.size)

    x_matrix = [
        [prog.var(layout.ref_index(*schema.cell_ref(row, col))) for col in range(12)]
        for row in range(schema.n_row)
    ]
    t = prog.add_nuclear_norm_epigraph(x_matrix)
    prog.add_objective(prog.var(t))

    # (a) Ohm's law per branch within a nonnegative slack eps_k
    for k, branch in enumerate(network.branches):
        y = branch_admittance(branch)
        i, j = branch.from_bus, branch.to_bus
        de = prog.var(layout.e(i)) - prog.var(layout.e(j))
        df = prog.var(layout.f(i)) - prog.var(layout.f(j))
        res_re = prog.var(layout.ir(k)) - (de * y.real - df * y.imag)
        res_im = prog.var(layout.ii(k)) - (df * y.real + de * y.imag)
        eps = prog.add_var()
        prog.add_nonneg(prog.var(eps))
        prog.add_soc([prog.var(eps), res_re, res_im])
        prog.add_objective(prog.var(eps), weights.w2)

    # (b), (c) linearized voltage model within shared bounds gamma, alpha
    gamma = prog.add_var()
    alpha = prog.add_var()
    prog.add_objective(prog.var(gamma), weights.w3)
    prog.add_objective(prog.var(alpha), weights.w4)
    w_abs = np.abs(linmodel.w)
    for row, bus in enumerate(linmodel.non_slack):
        model_re = LinExpr(const=linmodel.w[row].real)
        model_im = LinExpr(const=linmodel.w[row].imag)
        model_mag = LinExpr(const=w_abs[row])
        for col_bus in linmodel.non_slack:
            for offset, pick in ((0, layout.p), (n, layout.q)):
                coef = linmodel.d[row, offset + col_bus]
                var = prog.var(pick(col_bus))
                model_re = model_re + var * coef.real
                model_im = model_im + var * coef.imag
                model_mag = model_mag + var * linmodel.k[row, offset + col_bus]
        prog.add_soc(
            [
                prog.var(gamma),
                prog.var(layout.e(bus)) - model_re,
                prog.var(layout.f(bus)) - model_im,
            ]
        )
        prog.add_abs_bound(prog.var(layout.u(bus)) - model_mag, prog.var(alpha))

    # (e) pin the slack phasor cells to the reference measurements
    slack = network.slack
    ref_re = mset.measurements[mset.find(MeasurementKind(REF_VOLT_RE, slack))]
    ref_im = mset.measurements[mset.find(MeasurementKind(REF_VOLT_IM, slack))]
    prog.add_zero(prog.var(layout.e(slack)) - ref_re.value)
    prog.add_zero(prog.var(layout.f(slack)) - ref_im.value)

    # (d) observed-cell misfit; the pinned reference measurements stay
    # out of the sampling mask
    cells = []
    for meas in mset:
        if meas.kind.tag in (REF_VOLT_RE, REF_VOLT_IM):
            continue
        family, index = schema.kind_ref(meas.kind)
        var = prog.var(layout.ref_index(family, index))
        for _ in schema.cells_for(family, index):
            cells.append((var - meas.value, meas.sigma))
    if frob_in_objective:
        # per-cell Huber penalty: quadratic at the noise scale, linear
        # with slope w1 beyond HUBER_K sigmas. The quadratic core keeps
        # the fit at weighted-least-squares fidelity; the capped tail
        # slope keeps any gross error cheaper to ignore (w1 per unit)
        # than to absorb by bending the Ohm or model bounds (w2..w4 per
        # unit), which is what makes the estimator robust to bad data.
        # A plain norm penalty cannot do both at once: weighted by
        # 1/sigma it hands gross errors on small cells enough leverage
        # to hoist the shared model bounds, unweighted it is too soft
        # to anchor the small-valued current cells and the nuclear term
        # flattens the voltage angles.
        quad = []
        for resid, sigma in cells:
            tail = prog.add_var()
            tail_abs = prog.add_var()
            prog.add_abs_bound(prog.var(tail), prog.var(tail_abs))
            prog.add_objective(prog.var(tail_abs), weights.w1)
            core = resid - prog.var(tail)
            quad.append(core * np.sqrt(weights.w1 / (HUBER_K * sigma)))
        z = prog.add_sq_norm_epigraph(quad)
        prog.add_objective(prog.var(z), 0.5)
    else:
        # hard cap on the raw residual norm at the expected value under
        # the claimed sigmas
        s_frob = prog.add_soc_norm([resid for resid, _ in cells])
        noise_sq = sum(sigma**2 for _, sigma in cells)
        bound = float(np.sqrt(noise_sq)) if delta is None else float(delta)
        prog.add_nonneg(LinExpr(const=bound) - prog.var(s_frob))

    return prog, layout


def extract_result(solution, layout):
    """Read an EstimationResult out of a completion-program solution.

    Raises:
        ExtractionError: solution carries no primal point.
    """
    if solution.primal is None:
        raise ExtractionError(f"no primal point available (status {solution.status})")
    x = solution.primal
    n, m = layout.n, layout.m
    e = np.array([x[layout.e(i)] for i in range(n)])
    f = np.array([x[layout.f(i)] for i in range(n)])
    v = e + 1j * f
    return EstimationResult(
        voltage=v,
        vmag=np.array([x[layout.u(i)] for i in range(n)]),
        angle_deg=np.degrees(np.arctan2(f, e)),
        injections=np.array(
            [complex(x[layout.p(i)], x[layout.q(i)]) for i in range(n)]
        ),
        line_currents=np.array(
            [complex(x[layout.ir(k)], x[layout.ii(k)]) for k in range(m)]
        ),
        solver_status=solution.status,
        iterations=solution.iterations,
    )


def _empty_result(network, status, iterations):
    n, m = network.n_bus, network.n_branch
    nan_c = np.full(n, np.nan + 1j * np.nan)
    return EstimationResult(
        voltage=nan_c,
        vmag=np.full(n, np.nan),
        angle_deg=np.full(n, np.nan),
        injections=nan_c.copy(),
        line_currents=np.full(m, np.nan + 1j * np.nan),
        solver_status=status,
        iterations=iterations,
    )


def _solve_completion(mset, network, weights, linmodel, frob_in_objective, delta):
    if linmodel is None:
        linmodel = build_linear_model(network)
    prog, layout = _completion_program(
        mset, network, weights, linmodel, frob_in_objective, delta
    )
    solution = conic.solve(prog)
    if solution.primal is None:
        return _empty_result(network, solution.status, solution.iterations)
    return extract_result(solution, layout)


def rmcse(mset, network, weights=None, linmodel=None):
    """Robust matrix-completion state estimation.

    Minimizes nuclear norm + Huber observed-entry misfit (tail slope
    w1) + w2 * Ohm slacks + w3 * phasor-model bound + w4 *
    magnitude-model bound. Works on unobservable sets as long as the
    reference phasor is present.

    Solver trouble is reported through ``solver_status`` on the result
    (``numerical_limit`` keeps the best iterate), never raised.
    """
    return _solve_completion(
        mset,
        network,
        weights or RmcseWeights(),
        linmodel,
        frob_in_objective=True,
        delta=None,
    )


def mcse(mset, network, delta=None, weights=None, linmodel=None):
    """Matrix-completion state estimation with a hard residual budget.

    Same program as :func:`rmcse` except the observed-entry residual is
    capped, ``||P(X) - P(M)|| <= delta``, instead of penalized. Both
    sides are in raw measurement units; the default delta is the
    expected residual norm under the claimed sigmas,
    ``sqrt(sum(sigma**2))`` over the observed cells.

    Raises:
        ValueError: negative ``delta``.
    """
    if delta is not None and delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    return _solve_completion(
        mset,
        network,
        weights or RmcseWeights(),
        linmodel,
        frob_in_objective=False,
        delta=delta,
    )


# ---------------------------------------------------------------------------
# result serialization
# ---------------------------------------------------------------------------

def result_to_dict(result, audit=False):
    """JSON-ready dict: per-bus magnitude/angle, currents, run stats."""
    doc = {
        "status": result.solver_status,
        "iterations": result.iterations,
        "buses": [
            {"vmag": float(result.vmag[i]), "angle_deg": float(result.angle_deg[i])}
            for i in range(result.vmag.size)
        ],
        "branches": [
            {"i_re": float(c.real), "i_im": float(c.imag)} for c in result.line_currents
        ],
        "removed_measurements": [
            {"kind": kind.tag, "branch" if kind.on_branch else "bus": kind.index}
            for kind in result.removed_measurements
        ],
    }
    if audit:
        for i, entry in enumerate(doc["buses"]):
            entry["v_re"] = float(result.voltage[i].real)
            entry["v_im"] = float(result.voltage[i].imag)
            entry["vmag_from_phasor"] = float(abs(result.voltage[i]))
            entry["p"] = float(result.injections[i].real)
            entry["q"] = float(result.injections[i].imag)
    return doc

"""Solver-agnostic conic programs and convex building blocks.

A :class:`ConicProgram` is a linear objective over scalar variables
plus affine-maps-into-cones constraints (zero, nonnegative,
second-order, positive-semidefinite). Symmetric PSD blocks use scaled
upper-triangular vectorization, column-major with off-diagonals
multiplied by sqrt(2), which preserves inner products.

The two modeling blocks the estimators need are built here once:

* nuclear-norm epigraph via the standard semidefinite lifting
  ``[[W1, X], [X^T, W2]] >= 0`` with ``t = (tr W1 + tr W2) / 2``;
* Euclidean-norm epigraph via a second-order cone.

Solving is delegated to Clarabel, an interior-point conic solver with
native support for this cone list; see :func:`solve`. The solve is
deterministic for a fixed program, and every claimed-optimal solution
is re-audited against the cones before being reported as optimal.
"""

import io
import math
from dataclasses import dataclass

import clarabel
import numpy as np
import scipy.sparse as sp

from .errors import ProgramBuildError

SOLVE_TOL = 1e-8
MAX_ITER = 200
AUDIT_TOL = 1e-6

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_LIMIT = "numerical_limit"


class LinExpr:
    """Affine expression ``const + sum(coef * var)`` over program variables."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def variable(index):
        return LinExpr({index: 1.0})

    @staticmethod
    def constant(value):
        return LinExpr(const=value)

    @staticmethod
    def wrap(value):
        if isinstance(value, LinExpr):
            return value
        return LinExpr(const=float(value))

    def __add__(self, other):
        other = LinExpr.wrap(other)
        terms = dict(self.terms)
        for var, coef in other.terms.items():
            terms[var] = terms.get(var, 0.0) + coef
        return LinExpr(terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return LinExpr({v: -c for v, c in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-LinExpr.wrap(other))

    def __rsub__(self, other):
        return LinExpr.wrap(other) + (-self)

    def __mul__(self, scalar):
        scalar = float(scalar)
        return LinExpr({v: c * scalar for v, c in self.terms.items()}, self.const * scalar)

    __rmul__ = __mul__

    def value(self, x):
        return self.const + sum(coef * x[var] for var, coef in self.terms.items())


@dataclass(frozen=True)
class ConicSolution:
    """Outcome of a solve.

    Attributes:
        status: one of optimal / infeasible / unbounded / numerical_limit.
        primal: variable values; present for optimal and numerical_limit.
        objective_value: objective at ``primal`` (NaN when no primal).
        iterations: interior-point iterations taken.
        max_violation: worst cone-constraint violation of ``primal``.
    """

    status: str
    primal: np.ndarray
    objective_value: float
    iterations: int
    max_violation: float


class ConicProgram:
    """Incrementally built conic program, minimization sense."""

    def __init__(self):
        self.num_vars = 0
        self.objective = {}
        # each bucket holds rows in the s = expr convention: the slack
        # equals the expression value and must lie in the bucket's cone
        self.zero_rows = []
        self.nonneg_rows = []
        self.soc_blocks = []
        self.psd_blocks = []

    def add_var(self, count=1):
        """Allocate variables; returns the first new index."""
        first = self.num_vars
        self.num_vars += count
        return first

    def var(self, index):
        return LinExpr.variable(index)

    def add_objective(self, expr, coef=1.0):
        """Accumulate ``coef * expr`` into the objective (constants dropped)."""
        expr = LinExpr.wrap(expr)
        for var, c in expr.terms.items():
            self.objective[var] = self.objective.get(var, 0.0) + coef * c

    def add_zero(self, expr):
        """Constrain ``expr == 0``."""
        self.zero_rows.append(LinExpr.wrap(expr))

    def add_nonneg(self, expr):
        """Constrain ``expr >= 0``."""
        self.nonneg_rows.append(LinExpr.wrap(expr))

    def add_soc(self, exprs):
        """Constrain ``(exprs[0], exprs[1:]) in SOC``: exprs[0] >= ||exprs[1:]||."""
        if len(exprs) < 1:
            raise ProgramBuildError("second-order cone needs at least one entry")
        self.soc_blocks.append([LinExpr.wrap(e) for e in exprs])

    def add_psd(self, matrix):
        """Constrain a symmetric matrix of affine entries to be PSD.

        ``matrix`` is indexable as matrix[i][j]; only the upper triangle
        is read.
        """
        d = len(matrix)
        if d == 0:
            raise ProgramBuildError("PSD block must have positive dimension")
        rows = []
        for j in range(d):
            for i in range(j + 1):
                scale = 1.0 if i == j else math.sqrt(2.0)
                rows.append(LinExpr.wrap(matrix[i][j]) * scale)
        self.psd_blocks.append((d, rows))

    # -- modeling blocks ----------------------------------------------------

    def add_soc_norm(self, vec):
        """New variable s with s >= ||vec||_2; returns its index."""
        s = self.add_var()
        self.add_soc([self.var(s)] + list(vec))
        return s

    def add_sq_norm_epigraph(self, vec):
        """New variable z with z >= sum of squared entries; returns its index.

        Second-order-cone form of the quadratic epigraph:
        ||[vec, (z - 1)/2]||_2 <= (z + 1)/2.
        """
        if not vec:
            raise ProgramBuildError("squared-norm epigraph needs at least one entry")
        z = self.add_var()
        zv = self.var(z)
        self.add_soc([(zv + 1.0) * 0.5] + list(vec) + [(zv - 1.0) * 0.5])
        return z

    def add_abs_bound(self, expr, bound):
        """|expr| <= bound as two nonnegative rows; bound is an expression."""
        expr = LinExpr.wrap(expr)
        bound = LinExpr.wrap(bound)
        self.add_nonneg(bound - expr)
        self.add_nonneg(bound + expr)

    def add_nuclear_norm_epigraph(self, x_matrix):
        """New variable t with t >= nuclear norm of the affine r x c matrix.

        Standard semidefinite lifting: symmetric W1 (r x r) and W2
        (c x c) with [[W1, X], [X^T, W2]] PSD and
        t = (tr W1 + tr W2) / 2.

        Raises:
            ProgramBuildError: empty matrix.
        """
        r = len(x_matrix)
        c = len(x_matrix[0]) if r else 0
        if r == 0 or c == 0:
            raise ProgramBuildError("nuclear-norm epigraph of an empty matrix")

        w1 = [[None] * r for _ in range(r)]
        for j in range(r):
            for i in range(j + 1):
                v = self.var(self.add_var())
                w1[i][j] = w1[j][i] = v
        w2 = [[None] * c for _ in range(c)]
        for j in range(c):
            for i in range(j + 1):
                v = self.var(self.add_var())
                w2[i][j] = w2[j][i] = v

        big = [[None] * (r + c) for _ in range(r + c)]
        for i in range(r):
            for j in range(r):
                big[i][j] = w1[i][j]
        for i in range(c):
            for j in range(c):
                big[r + i][r + j] = w2[i][j]
        for i in range(r):
            for j in range(c):
                entry = LinExpr.wrap(x_matrix[i][j])
                big[i][r + j] = entry
                big[r + j][i] = entry
        self.add_psd(big)

        t = self.add_var()
        trace = LinExpr()
        for i in range(r):
            trace = trace + w1[i][i]
        for i in range(c):
            trace = trace + w2[i][i]
        self.add_zero(self.var(t) - trace * 0.5)
        return t

    # -- assembly and solving -----------------------------------------------

    def _row_order(self):
        """Rows in cone order: zero, nonneg, SOC blocks, PSD blocks."""
        rows = list(self.zero_rows) + list(self.nonneg_rows)
        for block in self.soc_blocks:
            rows.extend(block)
        for _, block_rows in self.psd_blocks:
            rows.extend(block_rows)
        return rows

    def assemble(self):
        """Matrices (P, q, A, b) with slacks s = b - A x constrained to cones."""
        rows = self._row_order()
        data, row_idx, col_idx = [], [], []
        b = np.zeros(len(rows))
        for k, expr in enumerate(rows):
            b[k] = expr.const
            for var, coef in expr.terms.items():
                if var >= self.num_vars:
                    raise ProgramBuildError(f"expression references unknown variable {var}")
                row_idx.append(k)
                col_idx.append(var)
                data.append(-coef)
        a_mat = sp.csc_matrix((data, (row_idx, col_idx)), shape=(len(rows), self.num_vars))
        q = np.zeros(self.num_vars)
        for var, coef in self.objective.items():
            if var >= self.num_vars:
                raise ProgramBuildError(f"objective references unknown variable {var}")
            q[var] = coef
        p_mat = sp.csc_matrix((self.num_vars, self.num_vars))
        return p_mat, q, a_mat, b

    def audit(self, x):
        """Worst cone violation of a candidate point (0 = feasible)."""
        worst = 0.0
        for expr in self.zero_rows:
            worst = max(worst, abs(expr.value(x)))
        for expr in self.nonneg_rows:
            worst = max(worst, -expr.value(x))
        for block in self.soc_blocks:
            vals = [expr.value(x) for expr in block]
            worst = max(worst, np.linalg.norm(vals[1:]) - vals[0])
        for d, block_rows in self.psd_blocks:
            vals = [expr.value(x) for expr in block_rows]
            mat = np.zeros((d, d))
            k = 0
            for j in range(d):
                for i in range(j + 1):
                    v = vals[k] if i == j else vals[k] / math.sqrt(2.0)
                    mat[i, j] = mat[j, i] = v
                    k += 1
            worst = max(worst, -float(np.linalg.eigvalsh(mat)[0]))
        return worst

    def objective_value(self, x):
        return float(sum(coef * x[var] for var, coef in self.objective.items()))

    def dump(self, stream=None):
        """Plain-text sparse form for debugging; deterministic ordering.

        Layout: variable count, objective triplets, then one section per
        cone bucket with rows as `const var:coef ...`, terms sorted by
        variable index.
        """
        out = stream or io.StringIO()
        out.write(f"vars {self.num_vars}\n")
        out.write("minimize\n")
        for var in sorted(self.objective):
            out.write(f"  {var}:{self.objective[var]:.17g}\n")

        def write_row(expr):
            parts = [f"{expr.const:.17g}"]
            parts += [f"{var}:{expr.terms[var]:.17g}" for var in sorted(expr.terms)]
            out.write("  " + " ".join(parts) + "\n")

        out.write(f"zero {len(self.zero_rows)}\n")
        for expr in self.zero_rows:
            write_row(expr)
        out.write(f"nonneg {len(self.nonneg_rows)}\n")
        for expr in self.nonneg_rows:
            write_row(expr)
        for block in self.soc_blocks:
            out.write(f"soc {len(block)}\n")
            for expr in block:
                write_row(expr)
        for d, block_rows in self.psd_blocks:
            out.write(f"psd {d}\n")
            for expr in block_rows:
                write_row(expr)
        if stream is None:
            return out.getvalue()
        return None


def solve(program):
    """Solve a program with Clarabel; never raises for solver outcomes.

    Infeasible and unbounded are reported as statuses. Any other
    non-optimal termination (iteration cap, numerical trouble) comes
    back as ``numerical_limit`` with the best iterate. A claimed-optimal
    point that fails the feasibility audit is demoted to
    ``numerical_limit`` as well.
    """
    p_mat, q, a_mat, b = program.assemble()
    cones = []
    if program.zero_rows:
        cones.append(clarabel.ZeroConeT(len(program.zero_rows)))
    if program.nonneg_rows:
        cones.append(clarabel.NonnegativeConeT(len(program.nonneg_rows)))
    for block in program.soc_blocks:
        cones.append(clarabel.SecondOrderConeT(len(block)))
    for d, _ in program.psd_blocks:
        cones.append(clarabel.PSDTriangleConeT(d))

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = MAX_ITER
    settings.tol_gap_abs = SOLVE_TOL
    settings.tol_gap_rel = SOLVE_TOL
    settings.tol_feas = SOLVE_TOL

    solver = clarabel.DefaultSolver(p_mat, q, a_mat, b, cones, settings)
    raw = solver.solve()
    status_name = str(raw.status)

    if status_name == "Solved":
        status = OPTIMAL
    elif status_name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = INFEASIBLE
    elif status_name in ("DualInfeasible", "AlmostDualInfeasible"):
        status = UNBOUNDED
    else:
        status = NUMERICAL_LIMIT

    if status in (INFEASIBLE, UNBOUNDED):
        return ConicSolution(
            status=status,
            primal=None,
            objective_value=float("nan"),
            iterations=int(raw.iterations),
            max_violation=float("nan"),
        )

    x = np.array(raw.x)
    violation = program.audit(x)
    if status == OPTIMAL and violation > AUDIT_TOL:
        status = NUMERICAL_LIMIT
    return ConicSolution(
        status=status,
        primal=x,
        objective_value=program.objective_value(x),
        iterations=int(raw.iterations),
        max_violation=float(violation),
    )

"""Minimal conic-program IR and an embedded interior-point solve.

The resource-allocation models are assembled into a solver-agnostic program
over a flat vector of scalar variables (some flagged binary): linear
equalities/inequalities, second-order cones, exponential cones, and a linear
objective.  Continuous relaxations are handed to clarabel, an interior-point
conic solver, at tight tolerance; the branch-and-bound driver re-solves the
same program with per-node variable-bound overrides, which only touch the
right-hand side of the canonical form (the matrices are built once).

Programs are dumpable to a plain-text listing for debugging.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

import clarabel

__all__ = ["LinExpr", "ConicProgram", "SolveResult", "solve_conic"]


class LinExpr:
    """Sparse affine expression sum_i c_i * v_i + const."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def var(i, coef=1.0):
        return LinExpr({int(i): float(coef)})

    @staticmethod
    def constant(c):
        return LinExpr({}, c)

    def copy(self):
        return LinExpr(self.terms, self.const)

    def __add__(self, other):
        if np.isscalar(other):
            return LinExpr(self.terms, self.const + other)
        out = dict(self.terms)
        for i, c in other.terms.items():
            out[i] = out.get(i, 0.0) + c
        return LinExpr(out, self.const + other.const)

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return LinExpr(self.terms, self.const - other)
        return self + (other * -1.0)

    def __rsub__(self, other):
        return (self * -1.0) + other

    def __mul__(self, a):
        a = float(a)
        return LinExpr({i: c * a for i, c in self.terms.items()}, self.const * a)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(c * x[i] for i, c in self.terms.items())

    def __repr__(self):
        bits = [f"{c:+.6g}*v{i}" for i, c in sorted(self.terms.items())]
        if self.const or not bits:
            bits.append(f"{self.const:+.6g}")
        return " ".join(bits)


@dataclass
class SolveResult:
    status: str                 # optimal | infeasible | unbounded | inaccurate | failed
    x: np.ndarray | None
    objective: float            # in the program's own sense (maximize)
    solve_time: float
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "inaccurate")


@dataclass
class ConicProgram:
    """Conic model: variables, linear/SOC/exp-cone constraints, linear objective.

    The objective sense is always maximize; builders that minimize flip signs.
    ``decode``/``integral_eval``/``rounding`` are optional hooks attached by
    the model builders and consumed by the branch-and-bound driver (see
    design.py); they do not affect the continuous solve.
    """

    names: list = field(default_factory=list)
    lb: list = field(default_factory=list)
    ub: list = field(default_factory=list)
    binary: list = field(default_factory=list)
    eqs: list = field(default_factory=list)     # (LinExpr, rhs): expr == rhs
    ineqs: list = field(default_factory=list)   # (LinExpr, rhs): expr <= rhs
    socs: list = field(default_factory=list)    # (bound LinExpr, [LinExpr,...]): ||vec|| <= bound
    exps: list = field(default_factory=list)    # (x, y, z LinExprs): y*exp(x/y) <= z
    obj: LinExpr = field(default_factory=LinExpr)
    decode: object = None
    integral_eval: object = None
    rounding: object = None
    meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    # -- construction ------------------------------------------------------

    def add_var(self, name, lb=None, ub=None, binary=False) -> int:
        i = len(self.names)
        self.names.append(name)
        if binary:
            lb = 0.0 if lb is None else lb
            ub = 1.0 if ub is None else ub
        self.lb.append(-np.inf if lb is None else float(lb))
        self.ub.append(np.inf if ub is None else float(ub))
        self.binary.append(bool(binary))
        self._cache.clear()
        return i

    def add_eq(self, expr: LinExpr, rhs=0.0):
        self.eqs.append((expr, float(rhs)))
        self._cache.clear()

    def add_ineq(self, expr: LinExpr, rhs=0.0):
        """expr <= rhs"""
        self.ineqs.append((expr, float(rhs)))
        self._cache.clear()

    def add_soc(self, bound: LinExpr, vec):
        self.socs.append((bound, list(vec)))
        self._cache.clear()

    def add_exp(self, x: LinExpr, y: LinExpr, z: LinExpr):
        self.exps.append((x, y, z))
        self._cache.clear()

    def set_objective(self, expr: LinExpr):
        self.obj = expr

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def binary_ids(self):
        return [i for i, b in enumerate(self.binary) if b]

    # -- canonical form ----------------------------------------------------

    def _build_canonical(self):
        """Cache (A, b, cones, bound-row map).  b alone changes per node."""
        if "A" in self._cache:
            return
        n = self.n_vars
        rows_i, cols_i, vals = [], [], []
        b = []
        cones = []
        r = 0

        def put(expr: LinExpr, rhs_minus_const: float):
            # canonical row: s_r = b_r - sum A[r, i] x_i
            nonlocal r
            for i, c in expr.terms.items():
                if c != 0.0:
                    rows_i.append(r)
                    cols_i.append(i)
                    vals.append(c)
            b.append(rhs_minus_const)
            r += 1

        # zero cone: equalities
        for expr, rhs in self.eqs:
            put(expr, rhs - expr.const)
        if self.eqs:
            cones.append(clarabel.ZeroConeT(len(self.eqs)))

        # nonnegative cone: inequalities then variable bounds
        n_nonneg = 0
        for expr, rhs in self.ineqs:
            put(expr, rhs - expr.const)
            n_nonneg += 1
        bound_rows = {}
        for i in range(n):
            lo, hi, is_bin = self.lb[i], self.ub[i], self.binary[i]
            lo_row = hi_row = None
            if is_bin or np.isfinite(lo):
                # -x <= -lo
                lo_row = r
                put(LinExpr.var(i, -1.0), -(0.0 if not np.isfinite(lo) else lo))
                n_nonneg += 1
            if is_bin or np.isfinite(hi):
                hi_row = r
                put(LinExpr.var(i, 1.0), (1.0 if not np.isfinite(hi) else hi))
                n_nonneg += 1
            if is_bin:
                bound_rows[i] = (lo_row, hi_row)
        if n_nonneg:
            cones.append(clarabel.NonnegativeConeT(n_nonneg))

        # second-order cones: s = (bound, vec)
        for bound, vec in self.socs:
            put(bound * -1.0, bound.const)
            for u in vec:
                put(u * -1.0, u.const)
            cones.append(clarabel.SecondOrderConeT(len(vec) + 1))

        # exponential cones: s = (x, y, z)
        for x, y, z in self.exps:
            put(x * -1.0, x.const)
            put(y * -1.0, y.const)
            put(z * -1.0, z.const)
            cones.append(clarabel.ExponentialConeT())

        a = sparse.csc_matrix(
            (np.asarray(vals), (np.asarray(rows_i), np.asarray(cols_i))),
            shape=(r, n))
        q = np.zeros(n)
        for i, c in self.obj.terms.items():
            q[i] = -c  # clarabel minimizes
        self._cache.update(A=a, b=np.asarray(b, dtype=float), cones=cones,
                           q=q, P=sparse.csc_matrix((n, n)),
                           bound_rows=bound_rows)

    def dump(self) -> str:
        """Human-readable listing of the program."""
        out = [f"conic program: {self.n_vars} vars "
               f"({sum(self.binary)} binary), maximize {self.obj!r}"]
        for i, name in enumerate(self.names):
            tag = "bin" if self.binary[i] else "cont"
            out.append(f"  v{i} {name} [{self.lb[i]:g}, {self.ub[i]:g}] {tag}")
        for expr, rhs in self.eqs:
            out.append(f"  eq: {expr!r} == {rhs:g}")
        for expr, rhs in self.ineqs:
            out.append(f"  ineq: {expr!r} <= {rhs:g}")
        for bound, vec in self.socs:
            out.append(f"  soc: ||[{'; '.join(map(repr, vec))}]|| <= {bound!r}")
        for x, y, z in self.exps:
            out.append(f"  exp: ({x!r}, {y!r}, {z!r}) in Kexp")
        return "\n".join(out)


_STATUS_MAP = {
    "Solved": "optimal",
    "AlmostSolved": "inaccurate",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def solve_conic(program: ConicProgram, bounds_override=None,
                tol: float = 1e-8, max_iter: int = 200,
                verbose: bool = False) -> SolveResult:
    """Interior-point solve of the continuous relaxation.

    bounds_override maps binary variable id -> (lo, hi); only the canonical
    right-hand side is touched, so repeated node solves share the matrices.
    """
    program._build_canonical()
    c = program._cache
    b = c["b"].copy()
    if bounds_override:
        for i, (lo, hi) in bounds_override.items():
            lo_row, hi_row = c["bound_rows"][i]
            b[lo_row] = -lo
            b[hi_row] = hi

    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(c["P"], c["q"], c["A"], b, c["cones"], settings)
    sol = solver.solve()
    dt = time.perf_counter() - t0
    status = _STATUS_MAP.get(str(sol.status), "failed")
    if status in ("optimal", "inaccurate"):
        x = np.asarray(sol.x)
        return SolveResult(status=status, x=x, objective=program.obj.value(x),
                           solve_time=dt, iterations=int(sol.iterations))
    return SolveResult(status=status, x=None, objective=np.nan,
                       solve_time=dt, iterations=int(sol.iterations))

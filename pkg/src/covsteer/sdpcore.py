"""A small semidefinite-program builder with verified solutions.

Problems are declared with named variables and constraint *expressions*.
An expression is a callable taking a mapping ``name -> value`` and returning
a matrix. The same callable is evaluated twice: with ``cvxpy`` variables to
hand the problem to a conic solver, and with ``numpy`` arrays to recompute
residuals from the returned values. Expressions may use ``@``, ``+``, ``-``,
``.T``, scalar multiplication, indexing and the helpers :func:`block`,
:func:`trace`, :func:`hstack` and :func:`vstack`, which work for both.

Example::

    p = SdpProblem()
    p.add_variable("X", 2, kind="symmetric")
    p.add_psd_block("X_psd", lambda v: v["X"])
    p.add_equality("X11", lambda v: v["X"][0:1, 0:1], [[1.0]])
    p.set_objective(lambda v: trace(v["X"]))
    sol = solve(p)            # sol.objective_value ~ 1
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import cvxpy as cp
import numpy as np

log = logging.getLogger(__name__)

Expr = Callable[[Mapping[str, object]], object]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"

_KINDS = ("symmetric", "rect", "scalar")


class SdpBuildError(ValueError):
    """Malformed problem: unknown variable, bad dimensions, asymmetric block."""


# --- expression helpers ------------------------------------------------------

def _symbolic(*xs) -> bool:
    for x in xs:
        if isinstance(x, cp.Expression):
            return True
        if isinstance(x, (list, tuple)) and _symbolic(*x):
            return True
    return False


def block(rows):
    """Block matrix from a nested list, like ``np.block``."""
    if _symbolic(rows):
        return cp.bmat([[_as2d(x) for x in row] for row in rows])
    return np.block([[np.atleast_2d(np.asarray(x, dtype=float)) for x in row] for row in rows])


def trace(x):
    return cp.trace(x) if _symbolic(x) else np.trace(x)


def hstack(xs):
    return cp.hstack([_as2d(x) for x in xs]) if _symbolic(xs) else np.hstack(xs)


def vstack(xs):
    return cp.vstack([_as2d(x) for x in xs]) if _symbolic(xs) else np.vstack(xs)


def _as2d(x):
    if isinstance(x, cp.Expression):
        if x.ndim == 0:
            return cp.reshape(x, (1, 1), order="F")
        if x.ndim == 1:
            return cp.reshape(x, (x.shape[0], 1), order="F")
        return x
    return np.atleast_2d(np.asarray(x, dtype=float))


# --- problem ---------------------------------------------------------------

@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    shape: tuple


@dataclass(frozen=True)
class _Constraint:
    name: str
    expr: Expr
    shape: tuple
    rhs: Optional[np.ndarray] = None


class SdpProblem:
    """Minimize a linear objective subject to affine equalities and PSD blocks."""

    def __init__(self, title: str = "sdp"):
        self.title = title
        self.variables: dict[str, Variable] = {}
        self.equalities: list[_Constraint] = []
        self.psd_blocks: list[_Constraint] = []
        self.objective: Optional[Expr] = None
        self._names: set[str] = set()
        self._frozen = False
        self._probe_cache: Optional[dict] = None
        self.data_scale = 1.0

    # builder -----------------------------------------------------------

    def _check_mutable(self):
        if self._frozen:
            raise SdpBuildError(f"problem '{self.title}' is frozen")

    def _claim(self, name: str):
        if name in self._names:
            raise SdpBuildError(f"duplicate name '{name}'")
        self._names.add(name)

    def add_variable(self, name: str, shape, kind: str = "rect") -> Variable:
        self._check_mutable()
        if kind not in _KINDS:
            raise SdpBuildError(f"unknown variable kind '{kind}'")
        if kind == "scalar":
            shape = ()
        else:
            shape = (int(shape), int(shape)) if np.isscalar(shape) else tuple(int(s) for s in shape)
            if len(shape) != 2 or min(shape) < 1:
                raise SdpBuildError(f"variable '{name}': dimensions must be positive, got {shape}")
            if kind == "symmetric" and shape[0] != shape[1]:
                raise SdpBuildError(f"symmetric variable '{name}' must be square, got {shape}")
        self._claim(name)
        var = Variable(name, kind, shape)
        self.variables[name] = var
        self._probe_cache = None
        return var

    def add_equality(self, name: str, expr: Expr, rhs=0.0) -> None:
        self._check_mutable()
        value = self._probe(name, expr)
        target = np.broadcast_to(np.asarray(rhs, dtype=float), value.shape).copy() \
            if np.ndim(rhs) == 0 else np.atleast_2d(np.asarray(rhs, dtype=float))
        if target.shape != value.shape:
            raise SdpBuildError(
                f"equality '{name}': expression is {value.shape}, right-hand side is {target.shape}"
            )
        self._claim(name)
        self.equalities.append(_Constraint(name, expr, value.shape, target))

    def add_psd_block(self, name: str, expr: Expr) -> None:
        self._check_mutable()
        value = self._probe(name, expr)
        if value.shape[0] != value.shape[1]:
            raise SdpBuildError(f"psd block '{name}' is not square: {value.shape}")
        asym = np.max(np.abs(value - value.T))
        if asym > 1e-9 * (1.0 + np.max(np.abs(value))):
            raise SdpBuildError(f"psd block '{name}' is not symmetric (asymmetry {asym:.2e})")
        self._claim(name)
        self.psd_blocks.append(_Constraint(name, expr, value.shape))

    def set_objective(self, expr: Expr) -> None:
        self._check_mutable()
        value = self._probe("objective", expr)
        if value.size != 1:
            raise SdpBuildError(f"objective must be scalar, got shape {value.shape}")
        self.objective = expr

    def freeze(self) -> "SdpProblem":
        if not self._frozen:
            if self.objective is None:
                raise SdpBuildError("objective not set")
            self.data_scale = self._data_scale()
            self._frozen = True
        return self

    # evaluation --------------------------------------------------------

    def _probe_values(self) -> dict:
        if self._probe_cache is None:
            rng = np.random.default_rng(12345)
            vals = {}
            for v in self.variables.values():
                if v.kind == "scalar":
                    vals[v.name] = np.float64(rng.uniform(-1, 1))
                else:
                    x = rng.uniform(-1, 1, v.shape)
                    vals[v.name] = 0.5 * (x + x.T) if v.kind == "symmetric" else x
            self._probe_cache = vals
        return self._probe_cache

    def _zero_values(self) -> dict:
        return {
            v.name: np.float64(0.0) if v.kind == "scalar" else np.zeros(v.shape)
            for v in self.variables.values()
        }

    def _probe(self, name: str, expr: Expr) -> np.ndarray:
        try:
            value = self.evaluate(expr, self._probe_values())
        except KeyError as exc:
            raise SdpBuildError(f"'{name}' references undeclared variable {exc}") from None
        except ValueError as exc:
            raise SdpBuildError(f"'{name}': dimension mismatch ({exc})") from None
        if not np.all(np.isfinite(value)):
            raise SdpBuildError(f"'{name}' evaluates to non-finite values")
        return value

    @staticmethod
    def evaluate(expr: Expr, values: Mapping) -> np.ndarray:
        return np.atleast_2d(np.asarray(expr(values), dtype=float))

    def _data_scale(self) -> float:
        zero, probe = self._zero_values(), self._probe_values()
        mag = 0.0
        for c in self.equalities + self.psd_blocks:
            c0 = self.evaluate(c.expr, zero)
            c1 = self.evaluate(c.expr, probe)
            mag = max(mag, np.max(np.abs(c0)), np.max(np.abs(c1 - c0)))
            if c.rhs is not None:
                mag = max(mag, np.max(np.abs(c.rhs)))
        return 1.0 + float(mag)

    def residuals(self, values: Mapping) -> tuple[float, float]:
        """``(max |equality residual|, min eigenvalue over PSD blocks)``."""
        eq = 0.0
        for c in self.equalities:
            r = self.evaluate(c.expr, values) - c.rhs
            eq = max(eq, float(np.max(np.abs(r))) if r.size else 0.0)
        mineig = np.inf
        for c in self.psd_blocks:
            m = self.evaluate(c.expr, values)
            mineig = min(mineig, float(np.linalg.eigvalsh(0.5 * (m + m.T))[0]))
        return eq, mineig

    def dump(self) -> str:
        """Deterministic text listing: variables, objective, constraints."""
        self.freeze()
        lines = [f"problem {self.title}", f"data_scale {self.data_scale:.6e}", "variables"]
        for v in self.variables.values():
            dims = "1x1" if v.kind == "scalar" else f"{v.shape[0]}x{v.shape[1]}"
            lines.append(f"  var {v.name} {v.kind} {dims}")
        zero = self._zero_values()
        lines.append(f"objective minimize const={float(self.evaluate(self.objective, zero)[0, 0]):.6e}")
        lines.append("constraints")
        for c in self.equalities:
            const = self.evaluate(c.expr, zero) - c.rhs
            lines.append(
                f"  eq  {c.name} {c.shape[0]}x{c.shape[1]} |const|_max={np.max(np.abs(const)):.6e}"
            )
        for c in self.psd_blocks:
            const = self.evaluate(c.expr, zero)
            lines.append(
                f"  psd {c.name} {c.shape[0]}x{c.shape[1]} |const|_max={np.max(np.abs(const)):.6e}"
            )
        return "\n".join(lines) + "\n"


# --- solving -----------------------------------------------------------------

@dataclass
class SolverAdapter:
    """Interior-point backend behind ``cvxpy``.

    ``backend`` is ``"clarabel"`` (default) or ``"cvxopt"``; ``"scs"`` is
    accepted for experiments but is a first-order method and rarely meets the
    verification tolerances.
    """

    backend: str = "clarabel"
    tol: float = 1e-8
    max_iters: int = 500
    eq_tol: float = 1e-6
    psd_tol: float = 1e-7
    verbose: bool = False

    def options(self) -> dict:
        b = self.backend.lower()
        if b == "clarabel":
            return dict(
                tol_gap_abs=self.tol, tol_gap_rel=self.tol, tol_feas=self.tol,
                max_iter=self.max_iters,
            )
        if b == "cvxopt":
            return dict(abstol=self.tol, reltol=self.tol, feastol=self.tol, max_iters=self.max_iters)
        if b == "scs":
            return dict(eps_abs=self.tol, eps_rel=self.tol, max_iters=100 * self.max_iters)
        raise ValueError(f"unknown backend '{self.backend}'")

    @property
    def solver_name(self) -> str:
        return self.backend.upper()


@dataclass
class SdpSolution:
    status: str
    values: dict
    objective_value: float
    primal_eq: float
    min_psd_eig: float
    scale: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def __getitem__(self, name):
        return self.values[name]


_STATUS_MAP = {
    cp.OPTIMAL: OPTIMAL,
    cp.OPTIMAL_INACCURATE: OPTIMAL,
    cp.INFEASIBLE: INFEASIBLE,
    cp.INFEASIBLE_INACCURATE: INFEASIBLE,
    cp.UNBOUNDED: UNBOUNDED,
    cp.UNBOUNDED_INACCURATE: UNBOUNDED,
}


def solve(problem: SdpProblem, adapter: Optional[SolverAdapter] = None) -> SdpSolution:
    """Solve ``problem`` and verify the answer by substitution.

    A solver that claims optimality but whose values violate the equality or
    PSD tolerances (relative to ``problem.data_scale``) is reported as
    ``numerical_failure``.
    """
    adapter = adapter or SolverAdapter()
    problem.freeze()
    cvars = {}
    for v in problem.variables.values():
        if v.kind == "scalar":
            cvars[v.name] = cp.Variable(name=v.name)
        else:
            cvars[v.name] = cp.Variable(v.shape, name=v.name, symmetric=v.kind == "symmetric")

    cons = []
    for c in problem.equalities:
        cons.append(_as2d(c.expr(cvars)) == c.rhs)
    for c in problem.psd_blocks:
        e = _as2d(c.expr(cvars))
        cons.append(0.5 * (e + e.T) >> 0)
    obj = problem.objective(cvars)
    if isinstance(obj, cp.Expression) and obj.size == 1 and obj.ndim:
        obj = cp.sum(obj)
    prob = cp.Problem(cp.Minimize(obj), cons)

    diag = {"backend": adapter.backend, "title": problem.title}
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prob.solve(solver=adapter.solver_name, verbose=adapter.verbose, **adapter.options())
        raw = prob.status
    except (cp.error.SolverError, ArithmeticError, ValueError) as exc:
        raw = "solver_error"
        diag["error"] = str(exc)
    diag["solve_time"] = time.perf_counter() - t0
    diag["raw_status"] = raw
    status = _STATUS_MAP.get(raw, NUMERICAL_FAILURE)

    if status != OPTIMAL:
        return SdpSolution(status, {}, float("nan"), float("nan"), float("nan"),
                           problem.data_scale, diag)

    values = {}
    for name, var in cvars.items():
        val = var.value
        if val is None:
            diag["error"] = f"solver returned no value for '{name}'"
            return SdpSolution(NUMERICAL_FAILURE, {}, float("nan"), float("nan"),
                               float("nan"), problem.data_scale, diag)
        val = np.asarray(val, dtype=float)
        if problem.variables[name].kind == "symmetric":
            val = 0.5 * (val + val.T)
        values[name] = np.float64(val) if val.ndim == 0 else val

    eq, mineig = problem.residuals(values)
    objective = float(SdpProblem.evaluate(problem.objective, values)[0, 0])
    scale = problem.data_scale
    if raw == cp.OPTIMAL_INACCURATE:
        diag["inaccurate"] = True
    if eq > adapter.eq_tol * scale or mineig < -adapter.psd_tol * scale:
        diag["error"] = (
            f"verification failed: equality residual {eq:.2e}, min psd eig {mineig:.2e} "
            f"(scale {scale:.2e})"
        )
        log.warning("%s: %s", problem.title, diag["error"])
        status = NUMERICAL_FAILURE
    return SdpSolution(status, values, objective, eq, mineig, scale, diag)

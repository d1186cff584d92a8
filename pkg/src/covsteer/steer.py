"""Covariance-steering synthesis from data and from a model.

Control law: ``u_k = K_k (x_k - mu_k) + v_k``. Mean and covariance are
designed separately. The covariance program works with the data-driven
parameterization ``[K_k; I] = [U0; X0] G_k`` and the substitution
``S_k = G_k Sigma_k``, which makes every constraint an LMI:

* ``[[Sigma_k, S_k'], [S_k, Y_k]] >= 0``           (input-energy slack)
* ``[[Sigma_{k+1} - Sigma_xi, F S_k], [., Sigma_k]] >= 0`` with
  ``F = X1 - Xi_hat``                               (relaxed dynamics)
* ``Sigma_k = X0 S_k``, ``Sigma_0 = Sigma_i``, ``Sigma_N = Sigma_f``.

The robust variant protects the dynamics LMI against every realization error
``||Delta Xi|| <= rho`` through one multiplier ``lambda_k`` per step.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import sdpcore
from .estimate import NoiseEstimate
from .matlib import as_mat, as_sym, is_psd, pinv
from .sdpcore import SdpProblem, SolverAdapter, block, trace
from .sysdata import GaussianMoments, HankelData, LtiSystem, propagate_moments

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8


class PreconditionError(ValueError):
    """Data do not satisfy the rank condition ``rank [U0; X0] = n + m``."""


class SynthesisError(RuntimeError):
    def __init__(self, message: str, diagnostics: Optional[dict] = None,
                 largest_feasible_rho: Optional[float] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.largest_feasible_rho = largest_feasible_rho


# --- problem data ------------------------------------------------------------

@dataclass
class SteeringSpec:
    N: int
    Q: list
    R: list
    init: GaussianMoments
    terminal: GaussianMoments

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be >= 1")
        if len(self.Q) != self.N or len(self.R) != self.N:
            raise ValueError(f"need {self.N} weights, got {len(self.Q)} Q and {len(self.R)} R")
        self.Q = [as_sym(q, "Q") for q in self.Q]
        self.R = [as_sym(r, "R") for r in self.R]
        n = self.init.n
        if self.terminal.n != n or any(q.shape != (n, n) for q in self.Q):
            raise ValueError("state dimensions of weights and boundary moments disagree")
        if any(r.shape != self.R[0].shape for r in self.R):
            raise ValueError("input weights must share one shape")
        for q in self.Q:
            if not is_psd(q):
                raise ValueError("Q_k must be positive semidefinite")
        for r in self.R:
            if np.linalg.eigvalsh(r)[0] <= 0:
                raise ValueError("R_k must be positive definite")
        for name, g in (("initial", self.init), ("terminal", self.terminal)):
            if np.linalg.eigvalsh(g.cov)[0] <= 0:
                raise ValueError(f"{name} covariance must be positive definite")

    @classmethod
    def constant(cls, N: int, Q, R, init: GaussianMoments, terminal: GaussianMoments):
        return cls(N, [as_sym(Q)] * N, [as_sym(R)] * N, init, terminal)

    @property
    def n(self) -> int:
        return self.init.n

    @property
    def m(self) -> int:
        return self.R[0].shape[0]


@dataclass
class Policy:
    mode: str
    gains: np.ndarray              # (N, m, n)
    feedforward: np.ndarray        # (N, m)
    planned_means: np.ndarray      # (N + 1, n)
    planned_covs: np.ndarray       # (N + 1, n, n)
    cost_mean: float = 0.0
    cost_cov: float = 0.0
    rho: float = 0.0
    aux: dict = field(default_factory=dict, repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("dd", "rdd", "mb"):
            raise ValueError(f"unknown policy mode '{self.mode}'")
        self.gains = np.asarray(self.gains, dtype=float)
        self.feedforward = np.asarray(self.feedforward, dtype=float).reshape(len(self.gains), -1)
        self.planned_means = np.asarray(self.planned_means, dtype=float)
        self.planned_covs = np.asarray(self.planned_covs, dtype=float)
        N = self.gains.shape[0]
        if self.planned_means.shape[0] != N + 1 or self.planned_covs.shape[0] != N + 1:
            raise ValueError("planned moments must have N + 1 entries")

    @property
    def N(self) -> int:
        return self.gains.shape[0]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "N": self.N,
            "gains": self.gains.tolist(),
            "feedforward": self.feedforward.tolist(),
            "planned_means": self.planned_means.tolist(),
            "planned_covs": self.planned_covs.tolist(),
            "cost": {"mean": float(self.cost_mean), "cov": float(self.cost_cov)},
            "rho": float(self.rho),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        N = int(d["N"])
        gains = np.array(d["gains"], dtype=float)
        if gains.shape[0] != N:
            raise ValueError(f"policy lists {gains.shape[0]} gains for N = {N}")
        return cls(
            d["mode"],
            gains,
            np.array(d["feedforward"], dtype=float),
            np.array(d["planned_means"], dtype=float),
            np.array(d["planned_covs"], dtype=float),
            d["cost"]["mean"],
            d["cost"]["cov"],
            d.get("rho", 0.0),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Policy":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RobustLmiParts:
    """Split of the dynamics LMI into nominal part and perturbation factors.

    With ``Delta = Xi_true - Xi_hat`` the LMI on the true data is
    ``G_hat + R_blk' Delta L + L' Delta' R_blk``.
    """

    G_hat: np.ndarray
    L: np.ndarray
    R_blk: np.ndarray
    rho: float

    @classmethod
    def at_step(cls, policy: Policy, h: HankelData, est: NoiseEstimate, k: int,
                rho: Optional[float] = None) -> "RobustLmiParts":
        S = policy.aux["S"][k]
        n = h.n
        F = h.X1T - est.Xi_hat
        Sk, Sk1 = policy.planned_covs[k], policy.planned_covs[k + 1]
        G = np.block([[Sk1 - est.Sigma_xi, F @ S], [(F @ S).T, Sk]])
        L = np.hstack([np.zeros((h.T, n)), -S])
        R_blk = np.hstack([np.eye(n), np.zeros((n, n))])
        return cls(0.5 * (G + G.T), L, R_blk, policy.rho if rho is None else rho)

    def perturbation(self, delta_xi: np.ndarray) -> np.ndarray:
        return self.R_blk.T @ delta_xi @ self.L + self.L.T @ delta_xi.T @ self.R_blk

    def perturbed(self, delta_xi: np.ndarray) -> np.ndarray:
        return self.G_hat + self.perturbation(delta_xi)


@dataclass
class EvaluationReport:
    means: np.ndarray
    covs: np.ndarray
    terminal_mean_error: float
    terminal_cov_slack: float
    realized_cost: float
    cov_gaps: np.ndarray

    @property
    def passed(self) -> bool:
        return self.terminal_cov_slack >= -1e-6

    def summary(self) -> dict:
        return {
            "terminal_mean_error": float(self.terminal_mean_error),
            "terminal_cov_slack": float(self.terminal_cov_slack),
            "realized_cost": float(self.realized_cost),
            "max_cov_gap": float(np.max(self.cov_gaps)),
            "passed": self.passed,
        }


# --- mean steering -----------------------------------------------------------

def data_dynamics(h: HankelData, Xi_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``[F_v, F_mu] = (X1 - Xi_hat) pinv([U0; X0])``."""
    F = (h.X1T - Xi_hat) @ pinv(h.S)
    return F[:, h.m:], F[:, :h.m]


def _mean_qp(Fmu: np.ndarray, Fv: np.ndarray, spec: SteeringSpec):
    # dense KKT system in z = [mu_0..mu_N, v_0..v_{N-1}]
    n, m, N = Fmu.shape[0], Fv.shape[1], spec.N
    nz = n * (N + 1) + m * N
    mu = lambda k: slice(k * n, (k + 1) * n)
    vv = lambda k: slice(n * (N + 1) + k * m, n * (N + 1) + (k + 1) * m)
    H = np.zeros((nz, nz))
    for k in range(N):
        H[mu(k), mu(k)] = 2.0 * spec.Q[k]
        H[vv(k), vv(k)] = 2.0 * spec.R[k]
    neq = n * (N + 2)
    E = np.zeros((neq, nz))
    b = np.zeros(neq)
    E[0:n, mu(0)] = np.eye(n)
    b[0:n] = spec.init.mean
    for k in range(N):
        r = slice(n * (k + 1), n * (k + 2))
        E[r, mu(k + 1)] = np.eye(n)
        E[r, mu(k)] = -Fmu
        E[r, vv(k)] = -Fv
    E[n * (N + 1):, mu(N)] = np.eye(n)
    b[n * (N + 1):] = spec.terminal.mean
    KKT = np.block([[H, E.T], [E, np.zeros((neq, neq))]])
    rhs = np.concatenate([np.zeros(nz), b])
    if np.linalg.matrix_rank(E) < neq:
        raise SynthesisError("terminal mean is not reachable under the identified dynamics")
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError as exc:
        raise SynthesisError(f"mean-steering KKT system is singular: {exc}") from None
    resid = float(np.linalg.norm(KKT @ sol - rhs) / (1.0 + np.linalg.norm(rhs)))
    z = sol[:nz]
    means = np.array([z[mu(k)] for k in range(N + 1)])
    ff = np.array([z[vv(k)] for k in range(N)])
    cost = float(0.5 * z @ H @ z)
    return means, ff, cost, resid


@dataclass
class MeanPlan:
    means: np.ndarray
    feedforward: np.ndarray
    cost: float
    kkt_residual: float


def solve_mean(h: HankelData, est: NoiseEstimate, spec: SteeringSpec) -> MeanPlan:
    """Minimize ``sum mu'Q mu + v'R v`` along ``mu_{k+1} = F_mu mu_k + F_v v_k``."""
    _require_rank(h)
    Fmu, Fv = data_dynamics(h, est.Xi_hat)
    return MeanPlan(*_mean_qp(Fmu, Fv, spec))


def model_mean(sys: LtiSystem, spec: SteeringSpec) -> MeanPlan:
    return MeanPlan(*_mean_qp(sys.A, sys.B, spec))


# --- covariance steering -----------------------------------------------------

def _require_rank(h: HankelData):
    if not h.full_row_rank:
        raise PreconditionError(
            f"rank [U0; X0] = {h.rank_S} < n + m = {h.n + h.m}; data are not rich enough"
        )


def _check_dims(h: HankelData, est: NoiseEstimate, spec: SteeringSpec):
    if spec.n != h.n or spec.m != h.m:
        raise ValueError(f"spec is n={spec.n}, m={spec.m}; data are n={h.n}, m={h.m}")
    if est.Xi_hat.shape != (h.n, h.T):
        raise ValueError(f"estimate is {est.Xi_hat.shape}, data need {(h.n, h.T)}")


def _dd_problem(h: HankelData, est: NoiseEstimate, spec: SteeringSpec,
                rho: Optional[float]) -> SdpProblem:
    n, T, N = h.n, h.T, spec.N
    F = h.X1T - est.Xi_hat
    W = est.Sigma_xi
    U0, X0 = h.U0T, h.X0T
    p = SdpProblem("rddcs" if rho is not None else "ddcs")
    for k in range(N + 1):
        p.add_variable(f"Sigma_{k}", n, kind="symmetric")
    for k in range(N):
        p.add_variable(f"S_{k}", (T, n))
        p.add_variable(f"Y_{k}", T, kind="symmetric")
        if rho is not None:
            p.add_variable(f"lam_{k}", None, kind="scalar")
    p.add_equality("Sigma_init", lambda v: v["Sigma_0"], spec.init.cov)
    p.add_equality("Sigma_term", lambda v: v[f"Sigma_{N}"], spec.terminal.cov)
    Rblk = np.hstack([np.eye(n), np.zeros((n, n))])
    RtR = Rblk.T @ Rblk
    for k in range(N):
        Sig, Sig1, S, Y = f"Sigma_{k}", f"Sigma_{k + 1}", f"S_{k}", f"Y_{k}"
        p.add_equality(f"gain_param_{k}", lambda v, Sig=Sig, S=S: v[Sig] - X0 @ v[S], 0.0)
        p.add_psd_block(
            f"C1_{k}", lambda v, Sig=Sig, S=S, Y=Y: block([[v[Sig], v[S].T], [v[S], v[Y]]])
        )

        def G_hat(v, Sig=Sig, Sig1=Sig1, S=S):
            FS = F @ v[S]
            return block([[v[Sig1] - W, FS], [FS.T, v[Sig]]])

        if rho is None:
            p.add_psd_block(f"C2_{k}", G_hat)
        else:
            lam = f"lam_{k}"

            def robust(v, S=S, lam=lam, G_hat=G_hat):
                L = sdpcore.hstack([np.zeros((T, n)), -v[S]])
                return block([
                    [v[lam] * np.eye(T), rho * L],
                    [rho * L.T, G_hat(v) - v[lam] * RtR],
                ])

            p.add_psd_block(f"RC_{k}", robust)
            p.add_psd_block(f"lam_nonneg_{k}", lambda v, lam=lam: block([[v[lam]]]))
        if k > 0:
            p.add_psd_block(f"Sigma_floor_{k}", lambda v, Sig=Sig: v[Sig] - SIGMA_FLOOR * np.eye(n))

    def objective(v):
        total = 0.0
        for k in range(N):
            total = total + trace(spec.Q[k] @ v[f"Sigma_{k}"])
            total = total + trace(spec.R[k] @ U0 @ v[f"Y_{k}"] @ U0.T)
        return total

    p.set_objective(objective)
    return p.freeze()


def _dd_policy(mode: str, sol, h: HankelData, est: NoiseEstimate, spec: SteeringSpec,
               mean: MeanPlan, rho: float) -> Policy:
    N = spec.N
    covs = np.array([sol[f"Sigma_{k}"] for k in range(N + 1)])
    S = [sol[f"S_{k}"] for k in range(N)]
    Y = [sol[f"Y_{k}"] for k in range(N)]
    G = [S[k] @ np.linalg.inv(covs[k]) for k in range(N)]
    gains = np.array([h.U0T @ G[k] for k in range(N)])
    aux = {"S": S, "Y": Y, "G": G}
    if mode == "rdd":
        aux["lam"] = [float(sol[f"lam_{k}"]) for k in range(N)]
    diag = dict(sol.diagnostics)
    diag.update(
        status=sol.status,
        primal_eq=sol.primal_eq,
        min_psd_eig=sol.min_psd_eig,
        y_relaxation_gap=max(
            float(np.linalg.norm(Y[k] - S[k] @ np.linalg.solve(covs[k], S[k].T))) for k in range(N)
        ),
        kkt_residual=mean.kkt_residual,
    )
    return Policy(mode, gains, mean.feedforward, mean.means, covs,
                  mean.cost, sol.objective_value, rho, aux, diag)


def solve_ddcs(h: HankelData, est: NoiseEstimate, spec: SteeringSpec,
               sdp: Optional[SolverAdapter] = None) -> Policy:
    """Nominal data-driven covariance steering (point estimate ``Xi_hat``)."""
    _require_rank(h)
    _check_dims(h, est, spec)
    sol = sdpcore.solve(_dd_problem(h, est, spec, None), sdp)
    if not sol.ok:
        raise SynthesisError(f"covariance program ended with status {sol.status}", sol.diagnostics)
    return _dd_policy("dd", sol, h, est, spec, solve_mean(h, est, spec), 0.0)


def solve_rddcs(h: HankelData, est: NoiseEstimate, spec: SteeringSpec,
                sdp: Optional[SolverAdapter] = None, rho: Optional[float] = None,
                bisection_steps: int = 20) -> Policy:
    """Data-driven covariance steering robust to ``||Xi_true - Xi_hat|| <= rho``.

    ``rho`` defaults to ``est.rho``. If the program is infeasible, a bisection
    over ``[0, rho]`` locates the largest feasible radius, which is attached to
    the raised :class:`SynthesisError`.
    """
    _require_rank(h)
    _check_dims(h, est, spec)
    rho = est.rho if rho is None else float(rho)
    if rho < 0:
        raise ValueError("rho must be >= 0")
    sol = sdpcore.solve(_dd_problem(h, est, spec, rho), sdp)
    if not sol.ok:
        best = _largest_feasible_rho(h, est, spec, sdp, rho, bisection_steps)
        raise SynthesisError(
            f"robust program ended with status {sol.status} at rho = {rho:.6g}; "
            f"largest feasible rho found: {best:.6g}" if best is not None else
            f"robust program ended with status {sol.status} at rho = {rho:.6g}; "
            "not feasible even at rho = 0",
            sol.diagnostics,
            best,
        )
    return _dd_policy("rdd", sol, h, est, spec, solve_mean(h, est, spec), rho)


def _largest_feasible_rho(h, est, spec, sdp, rho, steps) -> Optional[float]:
    if not sdpcore.solve(_dd_problem(h, est, spec, 0.0), sdp).ok:
        return None
    lo, hi = 0.0, rho
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if sdpcore.solve(_dd_problem(h, est, spec, mid), sdp).ok:
            lo = mid
        else:
            hi = mid
    return lo


def solve_mbcs(sys: LtiSystem, spec: SteeringSpec, sdp: Optional[SolverAdapter] = None,
               formulation: str = "relaxed") -> Policy:
    """Covariance steering with a known model ``(A, B, D D')``.

    ``formulation="relaxed"`` uses the same two LMIs as the data-driven
    program with ``F S_k`` replaced by ``A Sigma_k + B P_k``, so costs compare
    like with like. ``formulation="exact"`` keeps the covariance recursion as
    a linear equality
    ``Sigma_{k+1} = A Sigma A' + B P A' + A P' B' + B Y B' + W`` and relaxes
    only ``Y_k >= P_k Sigma_k^-1 P_k'``; its realized terminal covariance
    matches the target when that relaxation is tight.
    """
    if formulation not in ("relaxed", "exact"):
        raise ValueError(f"unknown formulation '{formulation}'")
    if spec.n != sys.n or spec.m != sys.m:
        raise ValueError(f"spec is n={spec.n}, m={spec.m}; system is n={sys.n}, m={sys.m}")
    n, m, N = sys.n, sys.m, spec.N
    A, B, W = sys.A, sys.B, sys.noise_cov
    p = SdpProblem(f"mbcs_{formulation}")
    for k in range(N + 1):
        p.add_variable(f"Sigma_{k}", n, kind="symmetric")
    for k in range(N):
        p.add_variable(f"P_{k}", (m, n))
        p.add_variable(f"Y_{k}", m, kind="symmetric")
    p.add_equality("Sigma_init", lambda v: v["Sigma_0"], spec.init.cov)
    p.add_equality("Sigma_term", lambda v: v[f"Sigma_{N}"], spec.terminal.cov)
    for k in range(N):
        Sig, Sig1, P, Y = f"Sigma_{k}", f"Sigma_{k + 1}", f"P_{k}", f"Y_{k}"
        p.add_psd_block(
            f"C1_{k}", lambda v, Sig=Sig, P=P, Y=Y: block([[v[Sig], v[P].T], [v[P], v[Y]]])
        )
        if formulation == "relaxed":
            def C2(v, Sig=Sig, Sig1=Sig1, P=P):
                M = A @ v[Sig] + B @ v[P]
                return block([[v[Sig1] - W, M], [M.T, v[Sig]]])
            p.add_psd_block(f"C2_{k}", C2)
        else:
            def rec(v, Sig=Sig, Sig1=Sig1, P=P, Y=Y):
                BPA = B @ v[P] @ A.T
                return v[Sig1] - (A @ v[Sig] @ A.T + BPA + BPA.T + B @ v[Y] @ B.T + W)
            p.add_equality(f"recursion_{k}", rec, 0.0)
        if k > 0:
            p.add_psd_block(f"Sigma_floor_{k}", lambda v, Sig=Sig: v[Sig] - SIGMA_FLOOR * np.eye(n))
    p.set_objective(lambda v: sum(
        trace(spec.Q[k] @ v[f"Sigma_{k}"]) + trace(spec.R[k] @ v[f"Y_{k}"]) for k in range(N)
    ))
    sol = sdpcore.solve(p, sdp)
    if not sol.ok:
        raise SynthesisError(f"model-based program ended with status {sol.status}",
                             sol.diagnostics)
    covs = np.array([sol[f"Sigma_{k}"] for k in range(N + 1)])
    Ps = [sol[f"P_{k}"] for k in range(N)]
    gains = np.array([Ps[k] @ np.linalg.inv(covs[k]) for k in range(N)])
    mean = model_mean(sys, spec)
    diag = dict(sol.diagnostics)
    diag.update(status=sol.status, primal_eq=sol.primal_eq, min_psd_eig=sol.min_psd_eig,
                formulation=formulation, kkt_residual=mean.kkt_residual)
    aux = {"P": Ps, "Y": [sol[f"Y_{k}"] for k in range(N)]}
    return Policy("mb", gains, mean.feedforward, mean.means, covs,
                  mean.cost, sol.objective_value, 0.0, aux, diag)


# --- evaluation ----------------------------------------------------------------

def evaluate_policy(sys: LtiSystem, policy: Policy, spec: SteeringSpec) -> EvaluationReport:
    """Exact closed-loop moments of ``policy`` on ``sys`` and terminal checks."""
    if policy.N != spec.N:
        raise ValueError(f"policy horizon {policy.N} differs from spec horizon {spec.N}")
    means, covs = propagate_moments(sys, policy, spec.init)
    cost = 0.0
    for k in range(spec.N):
        K = policy.gains[k]
        u_mean = K @ (means[k] - policy.planned_means[k]) + policy.feedforward[k]
        cost += np.trace(spec.Q[k] @ covs[k]) + means[k] @ spec.Q[k] @ means[k]
        cost += np.trace(spec.R[k] @ K @ covs[k] @ K.T) + u_mean @ spec.R[k] @ u_mean
    gaps = np.array([np.linalg.norm(policy.planned_covs[k] - covs[k]) for k in range(spec.N + 1)])
    return EvaluationReport(
        means=means,
        covs=covs,
        terminal_mean_error=float(np.linalg.norm(means[-1] - spec.terminal.mean)),
        terminal_cov_slack=float(np.linalg.eigvalsh(spec.terminal.cov - covs[-1])[0]),
        realized_cost=float(cost),
        cov_gaps=gaps,
    )


def _worst_case_delta(parts: RobustLmiParts, iters: int = 30) -> np.ndarray:
    # alternate between the minimizing eigenvector and the rank-one Delta that
    # pushes that eigenvalue down the most
    n = parts.R_blk.shape[0]
    T = parts.L.shape[0]
    delta = np.zeros((n, T))
    for _ in range(iters):
        w, V = np.linalg.eigh(parts.perturbed(delta))
        z = V[:, 0]
        a, b = parts.R_blk @ z, parts.L @ z
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na < 1e-14 or nb < 1e-14:
            break
        delta = -parts.rho * np.outer(a / na, b / nb)
    return delta


@dataclass
class Certificate:
    min_eig: float
    per_step: np.ndarray
    samples: int
    passed: bool


def certify_robust(policy: Policy, h: HankelData, est: NoiseEstimate, samples: int = 10_000,
                   seed: int = 0, tol: float = 1e-7, rho: Optional[float] = None) -> Certificate:
    """Sample ``Delta`` on the sphere ``||Delta|| = rho`` and check every step's LMI.

    The minimum eigenvalue is concave in ``Delta``, so its minimum over the
    ball sits on the boundary; boundary samples and one adversarial rank-one
    perturbation per step are checked.
    """
    if policy.mode != "rdd" or "S" not in policy.aux:
        raise ValueError("certification needs a robust policy carrying its S_k")
    rng = np.random.default_rng(seed)
    n, T = h.n, h.T
    rho = policy.rho if rho is None else rho
    raw = rng.standard_normal((samples, n, T))
    norms = np.linalg.norm(raw, ord=2, axis=(1, 2))
    deltas = rho * raw / norms[:, None, None]
    per_step = np.empty(policy.N)
    for k in range(policy.N):
        parts = RobustLmiParts.at_step(policy, h, est, k, rho)
        P = np.einsum("ij,sjk->sik", parts.R_blk.T, deltas @ parts.L)
        mats = parts.G_hat + P + np.transpose(P, (0, 2, 1))
        worst = np.linalg.eigvalsh(mats)[:, 0].min()
        adv = np.linalg.eigvalsh(parts.perturbed(_worst_case_delta(parts)))[0]
        per_step[k] = min(worst, adv)
    m = float(per_step.min())
    return Certificate(m, per_step, samples, m >= -tol)


def with_true_noise(est: NoiseEstimate, Xi_true: np.ndarray, Sigma_xi=None) -> NoiseEstimate:
    """Oracle estimate carrying the realized noise (for equivalence checks)."""
    Sigma = est.Sigma_xi if Sigma_xi is None else Sigma_xi
    return NoiseEstimate(as_mat(Xi_true), Sigma, est.sigma_source, est.delta, 0.0)

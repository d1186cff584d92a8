"""Noise-realization estimation and norm bounds on the estimation error.

The data satisfy ``X1 = A X0 + B U0 + Xi`` for an unknown noise matrix ``Xi``
(``n x T``). Any admissible realization must reproduce the data along the
null space of ``S = [U0; X0]``: ``(X1 - Xi) Gamma = 0`` with
``Gamma = I - pinv(S) S``. Under Gaussian noise the most likely realization
is ``X1 Gamma``; :func:`mle_noise_dc` reaches the same point (and, jointly, a
covariance estimate) through a sequence of semidefinite programs.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import sdpcore
from .matlib import as_sym, chi2_quantile, is_psd, kron, pinv, sqrtm_psd, spectral_norm
from .sdpcore import SdpProblem, SolverAdapter, block, trace
from .sysdata import HankelData

log = logging.getLogger(__name__)

KNOWN = "known"
ESTIMATED = "estimated"


class EstimationError(RuntimeError):
    """Estimator failure; ``report`` holds the CCP progress made so far."""

    def __init__(self, message: str, report: Optional["CcpReport"] = None):
        super().__init__(message)
        self.report = report


@dataclass
class NoiseEstimate:
    Xi_hat: np.ndarray
    Sigma_xi: np.ndarray
    sigma_source: str
    delta: float
    rho: float

    def __post_init__(self):
        self.Xi_hat = np.atleast_2d(np.asarray(self.Xi_hat, dtype=float))
        self.Sigma_xi = as_sym(self.Sigma_xi, "Sigma_xi")
        if self.sigma_source not in (KNOWN, ESTIMATED):
            raise ValueError(f"sigma_source must be '{KNOWN}' or '{ESTIMATED}'")
        if self.Sigma_xi.shape[0] != self.Xi_hat.shape[0]:
            raise ValueError("Sigma_xi and Xi_hat disagree on the state dimension")
        if not is_psd(self.Sigma_xi):
            raise ValueError("Sigma_xi must be positive semidefinite")
        if not self.rho >= 0.0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")
        self.delta = float(self.delta)
        self.rho = float(self.rho)

    def consistency_residual(self, h: HankelData) -> float:
        """``||(X1 - Xi_hat) Gamma||_F / (1 + ||X1||_F)``."""
        r = (h.X1T - self.Xi_hat) @ h.Gamma
        return float(np.linalg.norm(r) / (1.0 + np.linalg.norm(h.X1T)))

    def to_dict(self) -> dict:
        return {
            "Xi_hat": self.Xi_hat.tolist(),
            "Sigma_xi": self.Sigma_xi.tolist(),
            "sigma_source": self.sigma_source,
            "delta": self.delta,
            "rho": self.rho,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseEstimate":
        return cls(
            np.array(d["Xi_hat"], dtype=float),
            np.array(d["Sigma_xi"], dtype=float),
            d["sigma_source"],
            d["delta"],
            d["rho"],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "NoiseEstimate":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_rho(self, rho: float) -> "NoiseEstimate":
        return NoiseEstimate(self.Xi_hat, self.Sigma_xi, self.sigma_source, self.delta, rho)


@dataclass
class CcpOptions:
    max_iters: int = 50
    tol: float = 1e-7        # relative objective decrease that stops the loop
    eps: float = 1e-6        # floor on the covariance iterate


@dataclass
class CcpReport:
    iterations: int = 0
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    final_slack_gap: float = float("nan")
    floor_active: bool = False
    statuses: list = field(default_factory=list)
    sigma_estimate: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "objective_trace": [float(f) for f in self.objective_trace],
            "converged": self.converged,
            "final_slack_gap": float(self.final_slack_gap),
            "floor_active": self.floor_active,
            "statuses": list(self.statuses),
            "sigma_estimate": None if self.sigma_estimate is None else self.sigma_estimate.tolist(),
        }


# --- maximum likelihood ------------------------------------------------------

def mle_noise_analytic(h: HankelData) -> np.ndarray:
    """Closed-form most-likely realization ``X1 Gamma``; independent of ``Sigma_xi``."""
    return h.X1T @ h.Gamma


def _range_basis(gamma: np.ndarray) -> np.ndarray:
    # orthonormal basis of range(Gamma); the equality (X1 - Xi) V = 0 has full
    # row rank, unlike the projected form (X1 - Xi) Gamma = 0
    w, v = np.linalg.eigh(gamma)
    return v[:, w > 0.5]


def _nll(Xi: np.ndarray, Sigma: np.ndarray, T: int) -> float:
    # negative log-likelihood up to constants: 1/2 tr(Xi' Sigma^-1 Xi) + T/2 logdet Sigma
    sign, logdet = np.linalg.slogdet(Sigma)
    if sign <= 0:
        return math.inf
    return 0.5 * float(np.trace(Xi.T @ np.linalg.solve(Sigma, Xi))) + 0.5 * T * logdet


def _slack_gap(U: np.ndarray, Xi: np.ndarray, Sigma: np.ndarray) -> float:
    return float(np.linalg.norm(U - Xi.T @ np.linalg.solve(Sigma, Xi)))


def mle_noise_dc(
    h: HankelData,
    sdp: Optional[SolverAdapter] = None,
    opts: Optional[CcpOptions] = None,
    Sigma_xi=None,
    delta: float = 0.001,
) -> tuple[NoiseEstimate, CcpReport]:
    """Most-likely noise realization from the semidefinite formulation.

    With ``Sigma_xi`` given, a single convex program in ``(Xi, U)`` is solved:
    minimize ``tr(U) / 2`` subject to ``[[Sigma, Xi], [Xi', U]] >= 0`` and
    ``(X1 - Xi) Gamma = 0``.

    Without it, ``Sigma`` becomes a variable and the concave ``log det`` term
    of the likelihood is linearized at the current iterate (convex-concave
    procedure). The iterate starts at the analytic realization and its sample
    covariance, and ``Sigma >= opts.eps * I`` is enforced throughout.
    """
    sdp = sdp or SolverAdapter()
    opts = opts or CcpOptions()
    n, T = h.n, h.T
    V = _range_basis(h.Gamma)
    report = CcpReport()
    Xi0 = mle_noise_analytic(h)

    def base_problem(title: str) -> SdpProblem:
        p = SdpProblem(title)
        p.add_variable("Xi", (n, T))
        p.add_variable("U", T, kind="symmetric")
        if V.shape[1]:
            p.add_equality("consistency", lambda v: (h.X1T - v["Xi"]) @ V, 0.0)
        return p

    if Sigma_xi is not None:
        Sigma = as_sym(Sigma_xi, "Sigma_xi")
        if Sigma.shape != (n, n):
            raise ValueError(f"Sigma_xi must be {n}x{n}, got {Sigma.shape}")
        if np.linalg.eigvalsh(Sigma)[0] <= 1e-12 * max(1.0, np.abs(Sigma).max()):
            raise EstimationError(
                "Sigma_xi is singular; use mle_noise_analytic, which does not need it"
            )
        p = base_problem("mle_known_sigma")
        p.add_psd_block("schur", lambda v: block([[Sigma, v["Xi"]], [v["Xi"].T, v["U"]]]))
        p.set_objective(lambda v: 0.5 * trace(v["U"]))
        sol = sdpcore.solve(p, sdp)
        report.statuses.append(sol.status)
        report.iterations = 1
        if not sol.ok:
            raise EstimationError(f"SDP ended with status {sol.status}", report)
        Xi = sol["Xi"]
        report.objective_trace.append(_nll(Xi, Sigma, T))
        report.converged = True
        report.final_slack_gap = _slack_gap(sol["U"], Xi, Sigma)
        rho = uq_bound_mle(Sigma, n, T, delta)
        return NoiseEstimate(Xi, Sigma, KNOWN, delta, rho), report

    # joint estimation
    Sigma0 = Xi0 @ Xi0.T / T
    if np.any(Xi0) and np.linalg.matrix_rank(Xi0, tol=1e-9 * np.abs(Xi0).max()) < n:
        raise EstimationError(
            "noise realization is rank deficient (singular noise covariance); "
            "joint estimation needs Sigma_xi > 0, supply a known Sigma_xi instead"
        )
    Sigma_t = 0.5 * (Sigma0 + Sigma0.T) + opts.eps * np.eye(n)
    report.objective_trace.append(_nll(Xi0, Sigma_t, T))
    Xi, U = Xi0, Xi0.T @ np.linalg.solve(Sigma_t, Xi0)

    for it in range(opts.max_iters):
        W = np.linalg.inv(Sigma_t)
        W = 0.5 * (W + W.T)
        p = base_problem(f"mle_ccp_{it}")
        p.add_variable("Sigma", n, kind="symmetric")
        p.add_psd_block(
            "schur", lambda v: block([[v["Sigma"], v["Xi"]], [v["Xi"].T, v["U"]]])
        )
        p.add_psd_block("floor", lambda v: v["Sigma"] - opts.eps * np.eye(n))
        p.set_objective(lambda v, W=W: 0.5 * trace(v["U"]) + 0.5 * T * trace(W @ v["Sigma"]))
        sol = sdpcore.solve(p, sdp)
        report.statuses.append(sol.status)
        report.iterations = it + 1
        if not sol.ok:
            raise EstimationError(f"CCP iteration {it} ended with status {sol.status}", report)
        Xi, U = sol["Xi"], sol["U"]
        Sigma_t = 0.5 * (sol["Sigma"] + sol["Sigma"].T)
        f_prev = report.objective_trace[-1]
        f = _nll(Xi, Sigma_t, T)
        report.objective_trace.append(f)
        if (f_prev - f) < opts.tol * max(1.0, abs(f_prev)):
            report.converged = True
            break

    report.floor_active = bool(np.linalg.eigvalsh(Sigma_t)[0] <= opts.eps * (1.0 + 1e-3))
    if report.floor_active:
        log.warning("covariance estimate hit the floor %.1e * I", opts.eps)
    report.final_slack_gap = _slack_gap(U, Xi, Sigma_t)
    report.sigma_estimate = Sigma_t
    rho = uq_bound_mle(Sigma_t, n, T, delta)
    return NoiseEstimate(Xi, Sigma_t, ESTIMATED, delta, rho), report


# --- uncertainty quantification --------------------------------------------

def error_covariance(h: HankelData, Sigma_xi) -> np.ndarray:
    """Covariance of ``vec(Xi_hat - Xi)``: ``(pinv(S) S) kron Sigma_xi``."""
    Sigma = as_sym(Sigma_xi, "Sigma_xi")
    if not is_psd(Sigma):
        raise ValueError("Sigma_xi must be positive semidefinite")
    P = pinv(h.S) @ h.S
    return as_sym(kron(0.5 * (P + P.T), Sigma))


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return delta


def uq_bound_general(Sigma_Delta, n: int, T: int, delta: float) -> float:
    """``rho = chi_{nT, 1-delta} / sqrt(lambda_min(Sigma_Delta^-1))``.

    ``lambda_min`` of the inverse is ``1 / lambda_max(Sigma_Delta)``, which is
    what is evaluated. Singular ``Sigma_Delta`` is rejected: use
    :func:`uq_bound_mle` for the projected (singular) case.
    """
    delta = _check_delta(delta)
    S = as_sym(Sigma_Delta, "Sigma_Delta")
    if S.shape != (n * T, n * T):
        raise ValueError(f"Sigma_Delta must be {n * T}x{n * T}, got {S.shape}")
    w = np.linalg.eigvalsh(S)
    if w[0] <= 1e-12 * max(1.0, abs(w[-1])):
        raise ValueError("Sigma_Delta is singular; use uq_bound_mle instead")
    return math.sqrt(chi2_quantile(n * T, 1.0 - delta)) * math.sqrt(w[-1])


def uq_bound_mle(Sigma_xi, n: int, T: int, delta: float) -> float:
    """``rho = ||Sigma_xi^{1/2}|| * chi_{nT, 1-delta}`` (spectral norm)."""
    delta = _check_delta(delta)
    Sigma = as_sym(Sigma_xi, "Sigma_xi")
    if Sigma.shape != (n, n):
        raise ValueError(f"Sigma_xi must be {n}x{n}, got {Sigma.shape}")
    return spectral_norm(sqrtm_psd(Sigma)) * math.sqrt(chi2_quantile(n * T, 1.0 - delta))


def estimate_noise(
    h: HankelData,
    delta: float,
    estimator: str = "analytic",
    Sigma_xi=None,
    sdp: Optional[SolverAdapter] = None,
    opts: Optional[CcpOptions] = None,
) -> tuple[NoiseEstimate, Optional[CcpReport]]:
    """Build a :class:`NoiseEstimate` with its bound ``rho``.

    ``estimator="analytic"`` uses ``X1 Gamma``; if ``Sigma_xi`` is not given,
    the plug-in ``Xi_hat Xi_hat' / T`` (the joint maximizer) is used for the
    bound. ``estimator="dc-joint"`` runs the convex-concave procedure.
    A supplied ``Sigma_xi`` always wins and is marked ``known``.
    """
    delta = _check_delta(delta)
    n, T = h.n, h.T
    if estimator == "analytic":
        Xi = mle_noise_analytic(h)
        if Sigma_xi is None:
            Sigma, source = as_sym(Xi @ Xi.T / T), ESTIMATED
        else:
            Sigma, source = as_sym(Sigma_xi, "Sigma_xi"), KNOWN
        return NoiseEstimate(Xi, Sigma, source, delta, uq_bound_mle(Sigma, n, T, delta)), None
    if estimator == "dc-joint":
        est, report = mle_noise_dc(h, sdp, opts, None, delta)
        if Sigma_xi is not None:
            Sigma = as_sym(Sigma_xi, "Sigma_xi")
            est = NoiseEstimate(est.Xi_hat, Sigma, KNOWN, delta, uq_bound_mle(Sigma, n, T, delta))
        return est, report
    raise ValueError(f"unknown estimator '{estimator}'")

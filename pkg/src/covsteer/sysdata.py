"""Ground-truth LTI simulation, data collection and Hankel assembly.

The :class:`Dataset` keeps the true noise realization next to the measured
signals for validation only. Nothing on the synthesis path reads
``Dataset.true_noise``; estimators see a :class:`HankelData`, which carries
measured quantities exclusively.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .matlib import as_mat, as_sym, consistency_projector, hankel, rank, sqrtm_psd


@dataclass(frozen=True)
class LtiSystem:
    """``x_{k+1} = A x_k + B u_k + D w_k`` with ``w_k ~ N(0, I_d)``."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = as_mat(self.A, "A")
        B = as_mat(self.B, "B")
        D = as_mat(self.D, "D")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n or D.shape[0] != n:
            raise ValueError(
                f"B and D need {n} rows, got B {B.shape}, D {D.shape}"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return self.D.shape[1]

    @property
    def noise_cov(self) -> np.ndarray:
        return self.D @ self.D.T

    def perturbed(self, dA=None, dB=None, dD=None) -> "LtiSystem":
        """Additively perturbed copy; ``None`` leaves a matrix unchanged."""
        def add(base, delta):
            return base if delta is None else base + np.broadcast_to(delta, base.shape)
        return LtiSystem(add(self.A, dA), add(self.B, dB), add(self.D, dD))


def double_integrator(dt: float = 1.0, noise: float = 0.1) -> LtiSystem:
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.0], [dt]])
    return LtiSystem(A, B, noise * np.eye(2))


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = as_mat(self.mean, "mean").ravel()
        cov = as_sym(self.cov, "cov")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self) -> int:
        return self.mean.size


@dataclass
class Dataset:
    """One experiment: inputs ``u_0..u_{T-1}``, states ``x_0..x_T``.

    Arrays are time-major: ``inputs`` is ``(T, m)``, ``states`` is
    ``(T + 1, n)`` and ``true_noise`` (validation only) is ``(T, n)``.
    """

    inputs: np.ndarray
    states: np.ndarray
    seed: int = 0
    true_noise: Optional[np.ndarray] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(len(self.inputs), -1)
        self.states = np.asarray(self.states, dtype=float).reshape(len(self.states), -1)
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ValueError(
                f"need one more state than inputs, got {self.states.shape[0]} states "
                f"and {self.inputs.shape[0]} inputs"
            )
        if self.true_noise is not None:
            self.true_noise = np.asarray(self.true_noise, dtype=float).reshape(
                self.inputs.shape[0], self.states.shape[1]
            )
        for name in ("inputs", "states", "true_noise"):
            arr = getattr(self, name)
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError(f"dataset {name} contains non-finite values")

    @property
    def T(self) -> int:
        return self.inputs.shape[0]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def to_dict(self) -> dict:
        out = {
            "m": self.m,
            "n": self.n,
            "T": self.T,
            "seed": int(self.seed),
            "inputs": self.inputs.tolist(),
            "states": self.states.tolist(),
        }
        if self.true_noise is not None:
            out["true_noise"] = self.true_noise.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        m, n, T = int(d["m"]), int(d["n"]), int(d["T"])
        inputs = np.array(d["inputs"], dtype=float).reshape(T, m)
        states = np.array(d["states"], dtype=float).reshape(T + 1, n)
        noise = d.get("true_noise")
        if noise is not None:
            noise = np.array(noise, dtype=float).reshape(T, n)
        return cls(inputs, states, int(d.get("seed", 0)), noise)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class HankelData:
    """Depth-one Hankel matrices of a dataset and the consistency projector."""

    U0T: np.ndarray
    X0T: np.ndarray
    X1T: np.ndarray
    S: np.ndarray
    Gamma: np.ndarray
    rank_S: int

    @property
    def n(self) -> int:
        return self.X0T.shape[0]

    @property
    def m(self) -> int:
        return self.U0T.shape[0]

    @property
    def T(self) -> int:
        return self.S.shape[1]

    @property
    def full_row_rank(self) -> bool:
        """Whether ``rank [U; X] = n + m``, the data-richness assumption."""
        return self.rank_S == self.n + self.m


def build_hankel(data: Dataset, pinv_tol: Optional[float] = None) -> HankelData:
    U0T = hankel(data.inputs, 0, 1, data.T)
    X0T = hankel(data.states, 0, 1, data.T)
    X1T = hankel(data.states, 1, 1, data.T)
    S = np.vstack([U0T, X0T])
    return HankelData(
        U0T=U0T,
        X0T=X0T,
        X1T=X1T,
        S=S,
        Gamma=consistency_projector(S, pinv_tol),
        rank_S=rank(S, pinv_tol),
    )


def is_persistently_exciting(signal, order: int, tol: Optional[float] = None) -> bool:
    z = np.asarray(signal, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    T, sigma = z.shape
    width = T - order + 1
    if order < 1 or width < 1:
        return False
    H = hankel(z, 0, order, width)
    if not np.any(H):
        return False
    return rank(H, tol) == sigma * order


def excitation_input(m: int, T: int, amplitude: float = 1.0, seed: int = 0) -> np.ndarray:
    """I.i.d. zero-mean Gaussian inputs, shape ``(T, m)``.

    Persistence of excitation is not guaranteed; check it with
    :func:`is_persistently_exciting`.
    """
    rng = np.random.default_rng(seed)
    return amplitude * rng.standard_normal((T, m))


def simulate(
    sys: LtiSystem,
    x0_dist: GaussianMoments,
    inputs,
    seed: int = 0,
) -> Dataset:
    """Run the stochastic system open loop on a given input sequence.

    ``x_0`` is drawn first, then ``w_0, ..., w_{T-1}``, all from one stream
    seeded by ``seed``.
    """
    u = np.asarray(inputs, dtype=float).reshape(len(inputs), -1)
    if u.shape[1] != sys.m:
        raise ValueError(f"inputs have {u.shape[1]} channels, system expects {sys.m}")
    if x0_dist.n != sys.n:
        raise ValueError(f"initial distribution has dim {x0_dist.n}, system has {sys.n}")
    T = u.shape[0]
    rng = np.random.default_rng(seed)
    x = x0_dist.mean + sqrtm_psd(x0_dist.cov) @ rng.standard_normal(sys.n)
    states = np.empty((T + 1, sys.n))
    noise = np.empty((T, sys.n))
    states[0] = x
    for k in range(T):
        xi = sys.D @ rng.standard_normal(sys.d)
        x = sys.A @ x + sys.B @ u[k] + xi
        states[k + 1] = x
        noise[k] = xi
    return Dataset(u, states, seed, noise)


def collect(
    sys: LtiSystem,
    x0_dist: GaussianMoments,
    T: int,
    amplitude: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Excite ``sys`` for ``T`` steps; inputs and noise use independent child streams."""
    ss_input, ss_noise = np.random.SeedSequence(seed).spawn(2)
    u = excitation_input(sys.m, T, amplitude, ss_input)
    data = simulate(sys, x0_dist, u, ss_noise)
    data.seed = seed
    return data


# --- closed-loop evaluation -------------------------------------------------

def propagate_moments(sys: LtiSystem, policy, x0: GaussianMoments):
    """Exact mean/covariance of ``x_k`` under ``u_k = K_k (x_k - mu_k) + v_k``.

    ``mu_k`` are the policy's planned means; the realized mean follows the
    closed loop, so a model mismatch shows up as a mean offset.
    Returns ``(means, covs)`` with shapes ``(N + 1, n)`` and ``(N + 1, n, n)``.
    """
    gains = policy.gains
    N = len(gains)
    means = np.empty((N + 1, sys.n))
    covs = np.empty((N + 1, sys.n, sys.n))
    means[0], covs[0] = x0.mean, x0.cov
    W = sys.noise_cov
    for k in range(N):
        K = np.asarray(gains[k])
        if K.shape != (sys.m, sys.n):
            raise ValueError(f"gain {k} has shape {K.shape}, expected {(sys.m, sys.n)}")
        Acl = sys.A + sys.B @ K
        u_mean = K @ (means[k] - policy.planned_means[k]) + policy.feedforward[k]
        means[k + 1] = sys.A @ means[k] + sys.B @ u_mean
        c = Acl @ covs[k] @ Acl.T + W
        covs[k + 1] = 0.5 * (c + c.T)
    return means, covs


@dataclass
class RolloutStats:
    sample_means: np.ndarray
    sample_covs: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    trials: int
    trajectories: Optional[np.ndarray] = field(default=None, repr=False)


def monte_carlo_closed_loop(
    sys: LtiSystem,
    policy,
    x0_dist: GaussianMoments,
    trials: int = 1000,
    seed: int = 0,
    keep_trajectories: bool = False,
) -> RolloutStats:
    """Sample closed-loop trajectories and compare with exact propagation.

    Trial ``i`` draws from ``SeedSequence(seed, spawn_key=(i,))``, so results
    do not depend on how trials are scheduled.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    N = len(policy.gains)
    n, d = sys.n, sys.d
    x0_draw = np.empty((trials, n))
    w_draw = np.empty((trials, N, d))
    for i in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        x0_draw[i] = rng.standard_normal(n)
        w_draw[i] = rng.standard_normal((N, d))

    x = x0_dist.mean + x0_draw @ sqrtm_psd(x0_dist.cov).T
    traj = np.empty((trials, N + 1, n))
    traj[:, 0] = x
    for k in range(N):
        K = np.asarray(policy.gains[k])
        if K.shape != (sys.m, n):
            raise ValueError(f"gain {k} has shape {K.shape}, expected {(sys.m, n)}")
        u = (x - policy.planned_means[k]) @ K.T + policy.feedforward[k]
        x = x @ sys.A.T + u @ sys.B.T + w_draw[:, k] @ sys.D.T
        traj[:, k + 1] = x

    sample_means = traj.mean(axis=0)
    centered = traj - sample_means
    ddof = 1 if trials > 1 else 0
    sample_covs = np.einsum("tki,tkj->kij", centered, centered) / (trials - ddof)
    means, covs = propagate_moments(sys, policy, x0_dist)
    return RolloutStats(
        sample_means=sample_means,
        sample_covs=sample_covs,
        means=means,
        covs=covs,
        trials=trials,
        trajectories=traj if keep_trajectories else None,
    )

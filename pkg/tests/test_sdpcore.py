import cvxpy as cp
import numpy as np
import pytest

from covsteer import sdpcore
from covsteer.estimate import NoiseEstimate
from covsteer.sdpcore import SdpBuildError, SdpProblem, SolverAdapter, block, solve, trace
from covsteer.steer import SteeringSpec, _dd_problem
from covsteer.sysdata import GaussianMoments, LtiSystem, build_hankel, collect


def psd_toy(x11=1.0, sign=1.0):
    p = SdpProblem("toy")
    p.add_variable("X", 2, kind="symmetric")
    p.add_psd_block("X_psd", lambda v: v["X"])
    p.add_equality("X11", lambda v: v["X"][0:1, 0:1], [[x11]])
    p.set_objective(lambda v: sign * trace(v["X"]))
    return p


def test_fixed_sigma_identity():
    p = SdpProblem()
    p.add_variable("Sigma", 2, kind="symmetric")
    p.add_equality("fix", lambda v: v["Sigma"], np.eye(2))
    p.set_objective(lambda v: trace(v["Sigma"]))
    sol = solve(p)
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(2.0, abs=1e-8)


def test_trace_min_with_unit_corner():
    sol = solve(psd_toy())
    assert sol.ok
    assert sol.objective_value == pytest.approx(1.0, abs=1e-7)
    np.testing.assert_allclose(sol["X"], np.diag([1.0, 0.0]), atol=1e-6)


def test_schur_complement_scalar():
    p = SdpProblem()
    p.add_variable("y", None, kind="scalar")
    p.add_psd_block("schur", lambda v: block([[1.0, 0.5], [0.5, v["y"]]]))
    p.set_objective(lambda v: v["y"])
    sol = solve(p)
    assert sol.objective_value == pytest.approx(0.25, abs=1e-7)


def test_infeasible_and_unbounded():
    assert solve(psd_toy(-1.0)).status == "infeasible"
    p = SdpProblem()
    p.add_variable("X", 2, kind="symmetric")
    p.add_psd_block("X_psd", lambda v: v["X"])
    p.set_objective(lambda v: -trace(v["X"]))
    assert solve(p).status == "unbounded"


def test_residuals_recomputed_and_within_invariant():
    sol = solve(psd_toy())
    eq, mineig = sol.primal_eq, sol.min_psd_eig
    assert eq <= 1e-6 * sol.scale and mineig >= -1e-7 * sol.scale
    # independent substitution gives the same numbers
    p = psd_toy().freeze()
    assert p.residuals(sol.values) == pytest.approx((eq, mineig), abs=1e-15)


def test_verification_failure_downgrades_status():
    sol = solve(psd_toy(), SolverAdapter(eq_tol=0.0, psd_tol=0.0))
    if sol.primal_eq > 0 or sol.min_psd_eig < 0:
        assert sol.status == "numerical_failure"
        assert "verification failed" in sol.diagnostics["error"]


def test_adapter_crash_reports_numerical_failure(monkeypatch):
    def boom(self, *a, **k):
        raise cp.error.SolverError("simulated crash")
    monkeypatch.setattr(cp.Problem, "solve", boom)
    sol = solve(psd_toy())
    assert sol.status == "numerical_failure"
    assert "simulated crash" in sol.diagnostics["error"]


def test_objective_scaling_leaves_argmin():
    def make(c):
        p = SdpProblem()
        p.add_variable("X", 2, kind="symmetric")
        p.add_psd_block("X_psd", lambda v: v["X"] - np.diag([1.0, 2.0]))
        p.add_equality("off", lambda v: v["X"][0:1, 1:2], [[0.3]])
        p.set_objective(lambda v: c * trace(np.diag([1.0, 3.0]) @ v["X"]))
        return solve(p)
    a, b = make(1.0), make(250.0)
    np.testing.assert_allclose(a["X"], b["X"], rtol=1e-6, atol=1e-8)
    assert b.objective_value == pytest.approx(250.0 * a.objective_value, rel=1e-7)


@pytest.mark.parametrize("backend", ["cvxopt"])
def test_second_backend_agrees(backend):
    a = solve(psd_toy())
    b = solve(psd_toy(), SolverAdapter(backend=backend))
    assert b.ok
    assert b.objective_value == pytest.approx(a.objective_value, abs=1e-6)


def test_build_errors():
    p = SdpProblem()
    p.add_variable("X", 2, kind="symmetric")
    with pytest.raises(SdpBuildError, match="duplicate"):
        p.add_variable("X", 3)
    with pytest.raises(SdpBuildError, match="undeclared"):
        p.add_psd_block("bad", lambda v: v["Z"])
    with pytest.raises(SdpBuildError, match="dimension"):
        p.add_equality("bad", lambda v: v["X"] @ np.ones((3, 3)), 0.0)
    with pytest.raises(SdpBuildError, match="right-hand side"):
        p.add_equality("bad", lambda v: v["X"], np.eye(3))
    with pytest.raises(SdpBuildError, match="not symmetric"):
        p.add_psd_block("asym", lambda v: v["X"] + np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(SdpBuildError, match="not square"):
        p.add_psd_block("rect", lambda v: v["X"][:, :1])
    with pytest.raises(SdpBuildError, match="scalar"):
        p.set_objective(lambda v: v["X"])
    with pytest.raises(SdpBuildError, match="positive"):
        p.add_variable("Z", (0, 2))
    with pytest.raises(SdpBuildError, match="square"):
        p.add_variable("W", (2, 3), kind="symmetric")
    with pytest.raises(SdpBuildError, match="objective"):
        p.freeze()
    p.set_objective(lambda v: trace(v["X"]))
    p.freeze()
    with pytest.raises(SdpBuildError, match="frozen"):
        p.add_variable("late", 1)


def test_dump_is_deterministic_one_line_per_constraint():
    a, b = psd_toy().dump(), psd_toy().dump()
    assert a == b
    lines = a.splitlines()
    assert sum(l.strip().startswith(("eq ", "psd ")) for l in lines) == 2
    assert "  var X symmetric 2x2" in lines


def test_covariance_program_one_step_noiseless():
    sys = LtiSystem([[1.0, 1.0], [0.0, 1.0]], [[0.0], [1.0]], np.zeros((2, 2)))
    init = GaussianMoments([1.0, 0.0], np.eye(2))
    data = collect(sys, init, 8, 1.0, 2)
    h = build_hankel(data)
    est = NoiseEstimate(np.zeros((2, 8)), np.zeros((2, 2)), "known", 0.1, 0.0)
    spec = SteeringSpec.constant(1, np.eye(2), np.eye(1), init, GaussianMoments([0, 0], 10 * np.eye(2)))
    p = _dd_problem(h, est, spec, None)
    sol = solve(p)
    assert sol.status == "optimal"
    assert p.residuals(sol.values)[0] <= 1e-6 * sol.scale
    assert p.residuals(sol.values)[1] >= -1e-7 * sol.scale


def test_helpers_dispatch_on_type():
    a = np.arange(4.0).reshape(2, 2)
    np.testing.assert_array_equal(sdpcore.hstack([a, a]), np.hstack([a, a]))
    np.testing.assert_array_equal(sdpcore.vstack([a, a]), np.vstack([a, a]))
    assert trace(a) == 3.0
    x = cp.Variable((2, 2))
    assert isinstance(sdpcore.hstack([a, x]), cp.Expression)
    assert sdpcore.block([[a, x], [x, a]]).shape == (4, 4)

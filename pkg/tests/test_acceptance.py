"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are also collected in the terminal summary.
"""

import math
import time

import mpmath
import numpy as np
import pytest

from covsteer import matlib
from covsteer.cli import run_scenario, scenario_config
from covsteer.estimate import (
    EstimationError,
    error_covariance,
    estimate_noise,
    mle_noise_analytic,
    mle_noise_dc,
    uq_bound_mle,
)
from covsteer.sdpcore import SolverAdapter
from covsteer.steer import (
    SteeringSpec,
    certify_robust,
    evaluate_policy,
    solve_ddcs,
    solve_mbcs,
    solve_rddcs,
    with_true_noise,
)
from covsteer.sysdata import GaussianMoments, LtiSystem, build_hankel, collect, double_integrator

from conftest import rand_pd, record_criterion

PRESET_X0 = GaussianMoments([30.0, 1.0], np.diag([1.0, 0.5]))
PRESET_XF = GaussianMoments([-10.0, 0.0], 0.5 * np.eye(2))
REFERENCE_SIGMA_N = np.array([[0.2612, 0.0252], [0.0252, 0.0941]])


def preset_spec():
    return SteeringSpec.constant(10, 0.1 * np.eye(2), np.eye(1), PRESET_X0, PRESET_XF)


def preset_data(seed, sys=None):
    data = collect(sys or double_integrator(), PRESET_X0, 15, 10.0, seed)
    return data, build_hankel(data)


def random_instance(rng):
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    T = int(rng.integers(8, 16))
    A = rng.standard_normal((n, n))
    A *= 0.95 / max(1e-9, np.max(np.abs(np.linalg.eigvals(A))))
    D = matlib.sqrtm_psd(rand_pd(rng, n, 0.02, 0.3))
    sys = LtiSystem(A, rng.standard_normal((n, m)), D)
    data = collect(sys, GaussianMoments(rng.standard_normal(n), np.eye(n)), T, 1.0,
                   int(rng.integers(2**31)))
    return sys, data, build_hankel(data)


def chi2_oracle(dof, q):
    """Quantile by bisection on mpmath's regularized lower incomplete gamma."""
    mpmath.mp.dps = 40
    lo, hi = mpmath.mpf(0), mpmath.mpf(10 * dof + 100)
    for _ in range(200):
        mid = (lo + hi) / 2
        if mpmath.gammainc(dof / 2.0, 0, mid / 2, regularized=True) < q:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def test_c01_dc_program_matches_closed_form():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        sys, _, h = random_instance(rng)
        est, _ = mle_noise_dc(h, Sigma_xi=sys.noise_cov)
        ref = mle_noise_analytic(h)
        worst = max(worst, np.linalg.norm(est.Xi_hat - ref) / max(np.linalg.norm(ref), 1e-300))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt < 120
    record_criterion(1, "DC estimate equals closed form", ok,
                     f"max rel Frobenius {worst:.2e} over 50 instances, {dt:.1f} s")
    assert ok


def test_c02_consistency_residual():
    rng = np.random.default_rng(202)
    worst = 0.0
    count = 0
    for i in range(30):
        sys, _, h = random_instance(rng)
        scale = 1 + np.linalg.norm(h.X1T)
        ests = [estimate_noise(h, 0.1, Sigma_xi=sys.noise_cov)[0],
                mle_noise_dc(h, Sigma_xi=sys.noise_cov)[0]]
        if h.n <= 2 and i % 3 == 0:
            try:
                ests.append(mle_noise_dc(h)[0])
            except EstimationError:
                pass                      # rank-deficient realizations are refused by design
        for est in ests:
            worst = max(worst, est.consistency_residual(h) / scale)
            count += 1
    for seed in range(10):
        _, h = preset_data(seed)
        for est in (estimate_noise(h, 0.001, Sigma_xi=0.01 * np.eye(2))[0], mle_noise_dc(h)[0]):
            worst = max(worst, est.consistency_residual(h) / (1 + np.linalg.norm(h.X1T)))
            count += 1
    ok = worst <= 1e-7
    record_criterion(2, "consistency residual", ok,
                     f"max ||(X1 - Xi)Gamma|| / (1 + ||X1||) = {worst:.2e} over {count} estimates")
    assert ok


def test_c03_error_covariance_identity_and_spectrum():
    rng = np.random.default_rng(303)
    worst, spec_err = 0.0, 0.0
    for _ in range(20):
        sys, _, h = random_instance(rng)
        Sigma = sys.noise_cov
        lhs = np.kron(np.eye(h.T), Sigma) - np.kron(h.Gamma, Sigma)
        SD = error_covariance(h, Sigma)
        worst = max(worst, np.max(np.abs(lhs - SD)))
        w = np.sort(np.linalg.eigvalsh(SD))
        want = np.sort(np.concatenate([np.zeros(h.n * (h.T - h.rank_S)),
                                       np.tile(np.linalg.eigvalsh(Sigma), h.rank_S)]))
        spec_err = max(spec_err, np.max(np.abs(w - want)))
    ok = worst <= 1e-10 and spec_err <= 1e-10
    record_criterion(3, "projected error covariance identity", ok,
                     f"identity {worst:.1e}, spectrum {spec_err:.1e} on 20 instances")
    assert ok


def test_c04_bound_value():
    rho = uq_bound_mle(0.01 * np.eye(2), 2, 15, 0.001)
    ref = 0.1 * math.sqrt(chi2_oracle(30, 0.999))
    err = abs(rho - ref)
    ok = err <= 1e-6 and abs(rho - 0.77268) <= 1e-5
    record_criterion(4, "uncertainty radius", ok, f"rho = {rho:.10f}, oracle {ref:.10f}, |diff| {err:.1e}")
    assert ok


@pytest.mark.slow
def test_c05_coverage():
    t0 = time.perf_counter()
    sys = double_integrator()
    hits = 0
    for seed in range(1000):
        data, h = preset_data(seed, sys)
        est, _ = estimate_noise(h, 0.1, Sigma_xi=sys.noise_cov)
        hits += matlib.spectral_norm(data.true_noise.T - est.Xi_hat) <= est.rho
    dt = time.perf_counter() - t0
    ok = hits / 1000 >= 0.90 and dt < 300
    record_criterion(5, "coverage at delta 0.1", ok, f"{hits}/1000 = {hits / 1000:.3f}, {dt:.1f} s")
    assert ok


def test_c06_exact_noise_equivalence():
    adapter = SolverAdapter(tol=1e-11, max_iters=2000)
    cost_err, cov_err = 0.0, 0.0
    for i in range(10):
        rng = np.random.default_rng([6, i])
        A = rng.standard_normal((2, 2))
        A *= 0.95 / max(abs(np.linalg.eigvals(A)))
        sys = LtiSystem(A, rng.standard_normal((2, 1)), rand_pd(rng, 2, 0.05, 0.2))
        init = GaussianMoments(rng.standard_normal(2), rand_pd(rng, 2, 0.5, 1.5))
        term = GaussianMoments(rng.standard_normal(2), rand_pd(rng, 2, 0.5, 1.5))
        spec = SteeringSpec.constant(5, rand_pd(rng, 2, 0.5, 2), rand_pd(rng, 1, 0.5, 2), init, term)
        data = collect(sys, init, 12, 1.0, int(rng.integers(1 << 30)))
        h = build_hankel(data)
        est, _ = estimate_noise(h, 0.1, Sigma_xi=sys.noise_cov)
        oracle = with_true_noise(est, data.true_noise.T)
        dd = solve_ddcs(h, oracle, spec, adapter)
        mb = solve_mbcs(sys, spec, adapter)
        cost_err = max(cost_err, abs(dd.cost_cov - mb.cost_cov) / abs(mb.cost_cov))
        cov_err = max(cov_err, np.max(np.abs(dd.planned_covs - mb.planned_covs) / np.abs(mb.planned_covs)))
    ok = cost_err <= 1e-4 and cov_err <= 1e-4
    record_criterion(6, "exact-noise data-driven equals model-based", ok,
                     f"cost rel {cost_err:.1e}, covariance elementwise rel {cov_err:.1e} on 10 systems")
    assert ok


def test_c07_robust_reduction_and_monotonicity():
    spec = preset_spec()
    red, mono = 0.0, True
    for seed in range(3):
        _, h = preset_data(seed)
        est, _ = estimate_noise(h, 0.001, Sigma_xi=0.01 * np.eye(2))
        dd = solve_ddcs(h, est, spec)
        costs = [solve_rddcs(h, est, spec, rho=r).cost_cov for r in (0.0, 0.5 * est.rho, est.rho)]
        red = max(red, abs(costs[0] - dd.cost_cov) / abs(dd.cost_cov))
        mono &= all(b >= a * (1 - 1e-7) for a, b in zip(costs, costs[1:]))
    ok = red <= 1e-6 and mono
    record_criterion(7, "robust program reduces at rho 0 and cost grows with rho", ok,
                     f"rho=0 vs nominal rel {red:.1e}, monotone {mono} on 3 datasets")
    assert ok


def test_c08_robust_certification():
    spec = preset_spec()
    t0 = time.perf_counter()
    worst, n_pol = np.inf, 0
    for seed in range(8):
        _, h = preset_data(seed)
        est, _ = estimate_noise(h, 0.001, Sigma_xi=0.01 * np.eye(2))
        pol = solve_rddcs(h, est, spec)
        cert = certify_robust(pol, h, est, samples=10_000, seed=seed)
        worst = min(worst, cert.min_eig)
        n_pol += 1
    dt = time.perf_counter() - t0
    ok = worst >= -1e-7 and dt < 60
    record_criterion(8, "robust certificate under sampled perturbations", ok,
                     f"min eig {worst:.2e} over {n_pol} policies x 10^4 samples, {dt:.1f} s")
    assert ok


def scenario_stats(name, runs=50, seed0=1000):
    cfg = scenario_config(name)
    mb_cache = None
    rdd_pass = mb_pass = close = 0
    for s in range(runs):
        modes = ("rdd",) if mb_cache is not None else ("rdd", "mb")
        run = run_scenario(cfg, seed0 + s, modes)
        if mb_cache is None:
            # model-based design does not depend on the data; its evaluation neither
            mb_cache = run.reports["mb"].passed
        mb_pass += mb_cache
        rep = run.reports.get("rdd")
        if rep is not None and rep.passed:
            rdd_pass += 1
        if rep is not None:
            iu = np.triu_indices(2)
            e, r = np.abs(rep.covs[-1][iu]), REFERENCE_SIGMA_N[iu]
            close += bool(np.all((e <= 3 * r) & (e >= r / 3)))
    return rdd_pass, mb_pass, close


@pytest.mark.slow
def test_c09_nominal_scenario():
    t0 = time.perf_counter()
    rdd, mb, close = scenario_stats("fig1a")
    dt = time.perf_counter() - t0
    ok = rdd >= 45 and mb == 50 and close >= 25
    record_criterion(9, "nominal scenario, 50 datasets", ok,
                     f"robust meets target {rdd}/50, model-based {mb}/50, "
                     f"terminal covariance within factor 3 of reference {close}/50, {dt:.0f} s")
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("name", ["fig1b", "fig3"])
def test_c10_perturbed_scenarios(name):
    t0 = time.perf_counter()
    rdd, mb, _ = scenario_stats(name)
    dt = time.perf_counter() - t0
    ok = rdd >= 45 and (50 - mb) >= 45
    record_criterion(10, f"perturbed scenario {name}", ok,
                     f"model-based violates {50 - mb}/50, robust meets target {rdd}/50, {dt:.0f} s")
    assert ok


def test_c11_mean_steering_with_true_noise():
    spec = preset_spec()
    sys = double_integrator()
    worst_mu, worst_kkt = 0.0, 0.0
    for seed in range(5):
        data, h = preset_data(seed)
        est, _ = estimate_noise(h, 0.001, Sigma_xi=sys.noise_cov)
        pol = solve_ddcs(h, with_true_noise(est, data.true_noise.T), spec)
        rep = evaluate_policy(sys, pol, spec)
        worst_mu = max(worst_mu, rep.terminal_mean_error)
        worst_kkt = max(worst_kkt, pol.diagnostics["kkt_residual"])
    ok = worst_mu <= 1e-6 and worst_kkt <= 1e-8
    record_criterion(11, "mean steering with exact noise", ok,
                     f"||mu_N - mu_f|| {worst_mu:.1e}, KKT residual {worst_kkt:.1e} on 5 datasets")
    assert ok


def test_c12_chi_square_quantile():
    err = max(abs(matlib.chi2_quantile(2, q) + 2 * math.log1p(-q)) for q in (0.5, 0.9, 0.99, 0.999))
    grid = np.linspace(0.005, 0.995, 100)
    mono = all(b > a for dof in (1, 2, 5, 30)
               for a, b in zip(*(lambda v: (v[:-1], v[1:]))([matlib.chi2_quantile(dof, q) for q in grid])))
    ok = err <= 1e-8 and mono
    record_criterion(12, "chi-square quantile", ok,
                     f"2-dof closed form error {err:.1e}, strictly increasing on 100-point grid {mono}")
    assert ok

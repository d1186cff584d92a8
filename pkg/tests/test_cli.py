import json

import numpy as np
import pytest

from covsteer import cli
from covsteer.cli import ExperimentConfig, main, read_moments_csv, render_svg
from covsteer.steer import Policy
from covsteer.sysdata import Dataset, GaussianMoments


def run(tmp_path, *argv, config=None):
    args = list(argv) + ["--out", str(tmp_path)]
    if config is not None:
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config))
        args += ["--config", str(path)]
    return main(args)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    assert main(["collect", "--out", str(out), "--seed", "5"]) == 0
    assert main(["estimate", "--out", str(out), "--seed", "5", "--oracle"]) == 0
    assert main(["synthesize", "--out", str(out), "--seed", "5", "--mode", "rdd"]) == 0
    assert main(["validate", "--out", str(out), "--seed", "5", "--trials", "500"]) == 0
    return out


def test_pipeline_outputs(pipeline, capsys):
    out = pipeline
    for name in ("dataset.json", "estimate.json", "policy.json", "policy_diagnostics.json"):
        assert (out / name).exists()
    est = json.loads((out / "estimate.json").read_text())
    assert est["rho"] == pytest.approx(0.7726775803, abs=1e-9)
    pol = Policy.load(out / "policy.json")
    assert pol.mode == "rdd" and pol.N == 10
    rep = json.loads((out / "validate" / "report.json").read_text())
    assert rep["passed"] is True


def test_csv_schema_and_readback(pipeline):
    path = pipeline / "validate" / "moments.csv"
    header = path.read_text().splitlines()[0].split(",")
    assert header == ["k", "mu_1", "mu_2", "sigma_11", "sigma_12", "sigma_22"]
    ks, means, covs = read_moments_csv(path)
    assert list(ks) == list(range(11))
    np.testing.assert_allclose(covs, np.transpose(covs, (0, 2, 1)))
    np.testing.assert_allclose(covs[0], np.diag([1.0, 0.5]), atol=1e-7)
    np.testing.assert_allclose(means[0], [30.0, 1.0])
    tk, tm, tc = read_moments_csv(pipeline / "validate" / "target.csv")
    assert list(tk) == [10]
    np.testing.assert_allclose(tc[0], 0.5 * np.eye(2))


def test_svg_is_standalone(pipeline):
    svg = (pipeline / "validate" / "moments.svg").read_text()
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    assert "xmlns=\"http://www.w3.org/2000/svg\"" in svg
    assert "href" not in svg and "<image" not in svg and "@import" not in svg
    direct = render_svg(np.zeros((2, 2)), np.stack([np.eye(2)] * 2),
                        GaussianMoments([0, 0], np.eye(2)))
    assert direct.count("<polyline") + direct.count("<polygon") >= 3


def test_collect_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["collect", "--out", str(a), "--seed", "17"]) == 0
    assert main(["collect", "--out", str(b), "--seed", "17"]) == 0
    assert (a / "dataset.json").read_bytes() == (b / "dataset.json").read_bytes()
    c = tmp_path / "c"
    assert main(["collect", "--out", str(c), "--seed", "18"]) == 0
    assert (a / "dataset.json").read_bytes() != (c / "dataset.json").read_bytes()


def test_zero_excitation_is_data_quality_failure(tmp_path, capsys):
    code = run(tmp_path, "collect", config={"amplitude": 0.0})
    assert code == 3
    assert "rank condition violated" in capsys.readouterr().out


def test_config_errors(tmp_path, capsys):
    assert run(tmp_path, "collect", config={"bogus": 1}) == 2
    assert run(tmp_path, "collect", config={"N": 0}) == 2
    assert main(["collect", "--mode", "nope"]) == 2
    assert main(["nothing"]) == 2
    capsys.readouterr()


def test_config_roundtrip_and_digest(tmp_path):
    cfg = ExperimentConfig()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = ExperimentConfig.load(path)
    assert back.digest() == cfg.digest()
    assert cfg.replace(seed=cfg.seed + 1).digest() != cfg.digest()
    # scalar perturbations are multiples of the identity
    fig3 = cli.scenario_config("fig3")
    np.testing.assert_allclose(fig3.true_system().D, 0.3 * np.eye(2))
    fig1b = cli.scenario_config("fig1b")
    np.testing.assert_allclose(fig1b.true_system().A, [[1.0, 1.05], [0.0, 1.0]])
    np.testing.assert_allclose(fig1b.true_system().B, [[0.0], [1.05]])
    with pytest.raises(cli.ConfigError):
        cli.scenario_config("fig9")


def test_estimation_failure_exit_code(tmp_path, capsys):
    # a single noise channel makes the joint covariance singular
    cfg = {"dD": [[0.0, 0.0], [0.0, -0.1]], "estimator": "dc-joint"}
    assert run(tmp_path, "collect", config=cfg) == 0
    assert run(tmp_path, "estimate", config=cfg) == 4
    assert "estimation failed" in capsys.readouterr().err


def test_dc_joint_reports_trace(tmp_path, capsys):
    assert run(tmp_path, "collect") == 0
    capsys.readouterr()
    assert run(tmp_path, "estimate", "--estimator", "dc-joint") == 0
    out = capsys.readouterr().out
    assert "objective trace:" in out and "CCP iterations" in out
    assert "Sigma_xi estimated" in out


def test_synthesis_failure_exit_code(tmp_path, capsys):
    cfg = {"Sigmaf": 0.001}
    assert run(tmp_path, "collect", config=cfg) == 0
    assert run(tmp_path, "estimate", config=cfg) == 0
    assert run(tmp_path, "synthesize", config=cfg) == 5
    assert "synthesis failed" in capsys.readouterr().err


def test_validation_failure_exit_code(tmp_path, capsys):
    assert run(tmp_path, "synthesize", "--mode", "mb") == 0
    cfg = {"N": 4}
    assert run(tmp_path, "validate", config=cfg) == 6
    capsys.readouterr()


def test_mb_hits_terminal_covariance(tmp_path):
    assert run(tmp_path, "synthesize", "--mode", "mb") == 0
    assert run(tmp_path, "validate", "--trials", "200") == 0
    rep = json.loads((tmp_path / "validate" / "report.json").read_text())
    np.testing.assert_allclose(rep["terminal_cov"], 0.5 * np.eye(2), atol=1e-5)


def test_rdd_at_zero_radius_matches_dd(tmp_path):
    cfg = ExperimentConfig(seed=3)
    data = cli.stage_collect(cfg)
    est, _ = cli.stage_estimate(cfg, data)
    dd = cli.stage_synthesize(cfg, data, est, "dd")
    r0 = cli.stage_synthesize(cfg, data, est.with_rho(0.0), "rdd")
    assert r0.cost_cov == pytest.approx(dd.cost_cov, rel=1e-6)


def test_reproduce_manifests_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["reproduce", "fig1a", "--out", str(out), "--trials", "200"]) == 0
    ma = json.loads((a / "fig1a" / "manifest.json").read_text())
    mb = json.loads((b / "fig1a" / "manifest.json").read_text())
    for m in (ma, mb):
        m.pop("timings")
        m["outputs"] = {k: v.split("/fig1a/")[-1] for k, v in m["outputs"].items()}
    assert ma == mb
    assert ma["statuses"] == {"mb": "PASS", "rdd": "PASS"}
    for mode in ("mb", "rdd"):
        assert (a / "fig1a" / mode / "moments.csv").read_bytes() == \
            (b / "fig1a" / mode / "moments.csv").read_bytes()


def test_reproduce_coverage_small(tmp_path, capsys):
    assert main(["reproduce", "coverage", "--runs", "40", "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "coverage" / "coverage.json").read_text())
    assert res["runs"] == 40 and res["coverage"] >= 0.9
    assert "coverage" in capsys.readouterr().out


def test_dataset_reload_matches(pipeline):
    d = Dataset.load(pipeline / "dataset.json")
    assert (d.T, d.n, d.m, d.seed) == (15, 2, 1, 5)

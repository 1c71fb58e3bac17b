import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from proofbandit import cli, harness
from proofbandit.algorithms import NonFiniteStateError, PolicyConfig
from proofbandit.harness import (
    AGGREGATE_COLUMNS,
    PRESET_NAMES,
    TRACE_COLUMNS,
    ConfigError,
    EnvParams,
    ExperimentConfig,
    load_config,
    preset,
    read_trace_csv,
    resolve_output_dir,
    run_experiment,
)
from proofbandit.plotting import SchemaError, plot, read_aggregate
from proofbandit.streams import RandomStreams, replication_seed, splitmix64


def tiny(name="tiny", **kw):
    env = EnvParams(m=3, d=2, n=3, K_F=2.0)
    pols = (PolicyConfig(restarts=2), PolicyConfig(kind="vanilla_ofu", restarts=2), PolicyConfig(kind="pto_only"))
    base = dict(name=name, env=env, policies=pols, T=5, replications=2, master_seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def test_splitmix_reference_values():
    # reference outputs of the published splitmix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert replication_seed(0, 1) == splitmix64(0x9E3779B97F4A7C15)
    assert replication_seed(5, 0) != replication_seed(5, 1)


def test_streams_are_keyed():
    s = RandomStreams(1)
    assert s.round_rng(3).random() == RandomStreams(1).round_rng(3).random()
    assert s.round_rng(3).random() != s.round_rng(4).random()
    assert s.bandit_rng("a", 1).random() != s.bandit_rng("b", 1).random()


def test_smoke_run(tmp_path):
    res = run_experiment(tiny(), output_dir=tmp_path / "out")
    out = res.output_dir
    for label in ("proof", "vanilla_ofu", "pto_only"):
        assert sorted(p.name for p in (out / "traces").glob(f"{label}_rep*.csv")) == [
            f"{label}_rep0.csv", f"{label}_rep1.csv"]
    with open(out / "aggregate.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len([r for r in rows if r["policy"] == "proof"]) == 5
    assert list(rows[0]) == AGGREGATE_COLUMNS
    with open(out / "traces" / "proof_rep0.csv") as fh:
        assert fh.readline().strip().split(",") == TRACE_COLUMNS
    assert (out / "envs" / "rep1.json").exists()
    assert json.loads((out / "timings.json").read_text())


def test_determinism_and_manifest_replay(tmp_path):
    a = run_experiment(tiny(), output_dir=tmp_path / "a")
    b = run_experiment(tiny(), output_dir=tmp_path / "b")
    replay = run_experiment(load_config(a.output_dir / "manifest.json"), output_dir=tmp_path / "c")
    for f in (a.output_dir / "traces").iterdir():
        assert f.read_bytes() == (b.output_dir / "traces" / f.name).read_bytes()
        assert f.read_bytes() == (replay.output_dir / "traces" / f.name).read_bytes()
    assert (a.output_dir / "aggregate.csv").read_bytes() == (b.output_dir / "aggregate.csv").read_bytes()


def test_paired_environment_streams(tmp_path):
    res = run_experiment(tiny(), output_dir=tmp_path)
    for rep in range(2):
        digests = {res.digests[f"{p}/rep{rep}"] for p in ("proof", "vanilla_ofu", "pto_only")}
        assert len(digests) == 1
    assert res.digests["proof/rep0"] != res.digests["proof/rep1"]


def test_aggregate_roundtrip(tmp_path):
    res = run_experiment(tiny(replications=3), output_dir=tmp_path)
    agg = read_aggregate(tmp_path / "aggregate.csv")
    runs = [read_trace_csv(tmp_path / "traces" / f"proof_rep{r}.csv") for r in range(3)]
    avg = np.mean([r["avg_regret_cum"] for r in runs], axis=0)
    np.testing.assert_allclose(agg["proof"]["avg_regret_mean"], avg, rtol=0, atol=1e-12)
    np.testing.assert_allclose(agg["proof"]["avg_regret_std"], np.std([r["avg_regret_cum"] for r in runs], axis=0),
                               atol=1e-12)
    steps = np.arange(1, 6)
    opt = np.mean([np.cumsum(r["opt_regret"]) / (steps * 3) for r in runs], axis=0)
    np.testing.assert_allclose(agg["proof"]["opt_regret_mean"], opt, atol=1e-12)
    assert np.isnan(agg["vanilla_ofu"]["pred_error_mean"]).all()
    assert np.isnan(runs[0]["ball_contains_mu"]).sum() == 0
    assert np.isnan(read_trace_csv(tmp_path / "traces" / "pto_only_rep0.csv")["ball_contains_mu"]).all()
    assert res.aggregate["proof"]["n_reps"] == 3


def test_failed_replications_recorded(tmp_path, monkeypatch):
    real = harness.simulate

    def flaky(spec, T, cfg, rng, replication=0):
        if replication == 1:
            raise NonFiniteStateError("injected")
        return real(spec, T, cfg, rng, replication=replication)

    monkeypatch.setattr(harness, "simulate", flaky)
    res = run_experiment(tiny(replications=3), output_dir=tmp_path)
    assert [f["replication"] for f in res.failed] == [1]
    assert res.aggregate["proof"]["n_reps"] == 2
    assert res.failure_rate == pytest.approx(1 / 3)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["failed"][0]["error"] == "injected"
    code = cli.main(["run", "--config", str(tmp_path / "manifest.json"), "--out", str(tmp_path / "again")])
    assert code == cli.EXIT_RUNTIME


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError, match="not writable"):
        run_experiment(tiny(), output_dir=blocker / "sub")


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = tiny()
    monkeypatch.delenv(harness.OUT_ENV_VAR, raising=False)
    assert str(resolve_output_dir(cfg)) == "runs/tiny"
    monkeypatch.setenv(harness.OUT_ENV_VAR, str(tmp_path))
    assert resolve_output_dir(cfg) == tmp_path / "tiny"
    assert str(resolve_output_dir(replace(cfg, output_dir="cfgdir"))) == "cfgdir"
    assert str(resolve_output_dir(cfg, "cli")) == "cli"


def test_presets():
    f = preset("fig4a")
    assert (f.env.n, f.env.m, f.env.d, f.env.K_F, f.env.label_var, f.env.bandit_var) == (20, 20, 5, 10, 0.1, 1e-4)
    assert (f.T, f.replications) == (500, 10)
    assert {p.kind for p in f.policies} == {"proof", "vanilla_ofu"}
    assert all(p.beta_mode == "constant" and p.beta_value == 1.0 for p in f.policies)
    g = preset("fig4f")
    assert (g.env.label_var, g.env.n, g.env.m, g.env.d, g.env.K_F) == (0.5, 500, 50, 5, 10)
    assert preset("fig4e").env.K_F == 1
    assert preset("fig4b").env.n == 40 and preset("fig4c").env.K_F == 100
    assert len(PRESET_NAMES) == 10
    with pytest.raises(ConfigError) as exc:
        preset("nope")
    for name in PRESET_NAMES:
        assert name in str(exc.value)


def test_config_validation_and_roundtrip(tmp_path):
    cfg = tiny()
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ConfigError):
        tiny(T=0)
    with pytest.raises(ConfigError):
        tiny(replications=0)
    with pytest.raises(ConfigError):
        tiny(policies=())
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_config(path) == cfg
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_env_params_build_variants():
    rng = np.random.default_rng(0)
    spec = EnvParams(m=3, d=2, n=2, variant="per_action",
                     action_space={"type": "random_finite", "count": 3}).build(rng)
    assert spec.setting == "per_action" and len(spec.action_space) == 3
    assert EnvParams(m=3, d=2, n=2, variant="continuous").build(rng).setting == "continuous"
    fixed = EnvParams(m=3, d=2, n=2, action_space={"type": "finite", "actions": [[1, 0], [0, 1]]}).build(rng)
    assert len(fixed.action_space) == 2


def test_plotting(tmp_path):
    run_experiment(tiny(), output_dir=tmp_path)
    out = plot(tmp_path / "aggregate.csv", tmp_path / "fig.svg", title="tiny")
    assert out.exists() and out.read_text().lstrip().startswith("<?xml")
    assert set(read_aggregate(tmp_path / "aggregate.csv")) == {"proof", "vanilla_ofu", "pto_only"}
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(AGGREGATE_COLUMNS) + "\n")
    with pytest.raises(SchemaError, match="no data rows"):
        read_aggregate(empty)
    broken = tmp_path / "broken.csv"
    broken.write_text("policy,t\nproof,1\n")
    with pytest.raises(SchemaError, match="avg_regret_mean"):
        read_aggregate(broken)


def test_single_policy_plot(tmp_path):
    run_experiment(tiny(policies=(PolicyConfig(kind="pto_only"),)), output_dir=tmp_path)
    assert len(read_aggregate(tmp_path / "aggregate.csv")) == 1
    plot(tmp_path / "aggregate.csv", tmp_path / "one.png")
    assert (tmp_path / "one.png").stat().st_size > 0


def test_cli_commands(tmp_path, capsys, monkeypatch):
    assert cli.main(["presets"]) == cli.EXIT_OK
    assert "fig4a" in capsys.readouterr().out
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(tiny().to_dict()))
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out), "--reps", "1", "--T", "3",
                     "--seed", "9", "--plot"]) == cli.EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["T"] == 3 and manifest["config"]["master_seed"] == 9
    assert (out / "regret.svg").exists()
    assert cli.main(["plot", "--in", str(out / "aggregate.csv"), "--out", str(tmp_path / "p.svg")]) == cli.EXIT_OK
    assert cli.main(["plot", "--in", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "p.svg")]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    monkeypatch.setenv(harness.OUT_ENV_VAR, str(tmp_path / "envout"))
    assert cli.main(["run", "--config", str(cfg_path), "--reps", "1", "--T", "2"]) == cli.EXIT_OK
    assert (tmp_path / "envout" / "tiny" / "aggregate.csv").exists()
    with pytest.raises(SystemExit):
        cli.main(["run", "--preset", "nope"])


def test_parallel_matches_serial(tmp_path):
    a = run_experiment(tiny(), output_dir=tmp_path / "s", workers=1)
    b = run_experiment(tiny(), output_dir=tmp_path / "p", workers=2)
    for f in (a.output_dir / "traces").iterdir():
        assert f.read_bytes() == (b.output_dir / "traces" / f.name).read_bytes()

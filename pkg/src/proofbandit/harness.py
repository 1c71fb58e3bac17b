"""Experiment configuration, multi-replication runs, trace files and aggregation.

Output layout of :func:`run_experiment`::

    <out>/manifest.json            resolved config, seeds, failures, env digests
    <out>/aggregate.csv            mean/std per (policy, t) across replications
    <out>/timings.json             wall-clock per (policy, replication)
    <out>/traces/<policy>_rep<k>.csv
    <out>/envs/rep<k>.json         ground-truth EnvSpec of replication k

Trace CSVs contain no timing so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from proofbandit.algorithms import NonFiniteStateError, PolicyConfig, simulate
from proofbandit.environment import EnvSpec, make_env
from proofbandit.spaces import FiniteActions, UnitBall
from proofbandit.streams import RandomStreams, replication_seed

log = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "replication",
    "t",
    "policy",
    "total_regret",
    "opt_regret",
    "bandit_regret",
    "avg_regret_cum",
    "pred_error",
    "ball_contains_mu",
]

AGGREGATE_COLUMNS = [
    "policy",
    "t",
    "n_reps",
    "avg_regret_mean",
    "avg_regret_std",
    "opt_regret_mean",
    "opt_regret_std",
    "bandit_regret_mean",
    "bandit_regret_std",
    "pred_error_mean",
    "pred_error_std",
]

OUT_ENV_VAR = "PROOFBANDIT_OUT"
FAILURE_THRESHOLD = 0.2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvParams:
    """Generation parameters of the ground truth; variances, not std devs."""

    m: int = 20
    d: int = 5
    n: int = 20
    K_F: float = 10.0
    label_var: float = 0.1
    bandit_var: float = 1e-4
    variant: str = "base"
    # {"type": "unit_ball"}, {"type": "finite", "actions": [...]} or {"type": "random_finite", "count": k}
    action_space: dict = field(default_factory=lambda: {"type": "unit_ball"})
    mu_zero: bool = False
    K_G: float = 1.0

    def build(self, rng: np.random.Generator) -> EnvSpec:
        kind = self.action_space.get("type", "unit_ball")
        space = None
        n_actions = None
        if kind == "unit_ball":
            space = UnitBall(self.d)
        elif kind == "finite":
            space = FiniteActions(np.asarray(self.action_space["actions"], dtype=float))
        elif kind == "random_finite":
            n_actions = int(self.action_space["count"])
        else:
            raise ConfigError(f"unknown action space type {kind!r}")
        return make_env(
            self.m, self.d, self.n, self.K_F, self.label_var, self.bandit_var, rng,
            variant=self.variant, action_space=space, n_actions=n_actions,
            mu_zero=self.mu_zero, K_G=self.K_G,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    env: EnvParams
    policies: tuple
    T: int = 500
    replications: int = 10
    master_seed: int = 0
    output_dir: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.T < 2:
            raise ConfigError("T must be >= 2")
        if not self.policies:
            raise ConfigError("at least one policy is required")
        labels = [p.label for p in self.policies]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"policy labels must be unique, got {labels}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "env": asdict(self.env),
            "policies": [p.to_dict() for p in self.policies],
            "T": self.T,
            "replications": self.replications,
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        try:
            return cls(
                name=obj.get("name", "custom"),
                env=EnvParams(**obj.get("env", {})),
                policies=tuple(PolicyConfig.from_dict(p) for p in obj["policies"]),
                T=int(obj.get("T", 500)),
                replications=int(obj.get("replications", 10)),
                master_seed=int(obj.get("master_seed", 0)),
                output_dir=obj.get("output_dir"),
                workers=int(obj.get("workers", 1)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if "config" in obj and "env" not in obj:  # a manifest
        obj = obj["config"]
    return ExperimentConfig.from_dict(obj)


# --------------------------------------------------------------------------
# presets


def _fig4(name, **env) -> ExperimentConfig:
    return ExperimentConfig(
        name=name,
        env=EnvParams(**env),
        policies=(PolicyConfig(kind="proof", beta_value=1.0), PolicyConfig(kind="vanilla_ofu", beta_value=1.0)),
        T=500,
        replications=10,
    )


_PRESETS = {
    "fig4a": lambda: _fig4("fig4a"),
    "fig4b": lambda: _fig4("fig4b", n=40),
    "fig4c": lambda: _fig4("fig4c", K_F=100.0),
    "fig4d": lambda: _fig4("fig4d", n=500, m=50),
    "fig4e": lambda: _fig4("fig4e", n=500, m=50, K_F=1.0),
    "fig4f": lambda: _fig4("fig4f", n=500, m=50, label_var=0.5),
    "thm1": lambda: ExperimentConfig(
        name="thm1",
        env=EnvParams(mu_zero=True),
        policies=(PolicyConfig(kind="pto_only"),),
        T=500,
        replications=10,
    ),
    "alg3_finite": lambda: ExperimentConfig(
        name="alg3_finite",
        env=EnvParams(d=4, variant="per_action", action_space={"type": "random_finite", "count": 4}),
        policies=(PolicyConfig(kind="proof_explore_finite", beta_value=1.0, explore_rounds=171),),
        T=400,
        replications=10,
    ),
    "alg3_continuous": lambda: ExperimentConfig(
        name="alg3_continuous",
        env=EnvParams(m=5, d=3, variant="continuous"),
        policies=(PolicyConfig(kind="proof_explore_continuous", beta_value=1.0),),
        T=400,
        replications=10,
    ),
    "lemma2": lambda: ExperimentConfig(
        name="lemma2",
        env=EnvParams(),
        policies=(PolicyConfig(kind="proof", beta_mode="theoretical", gamma=0.05),),
        T=200,
        replications=20,
    ),
}

PRESET_NAMES = tuple(_PRESETS)


def preset(name: str) -> ExperimentConfig:
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}") from None


# --------------------------------------------------------------------------
# running


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace_csv(path: Path, traces) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for tr in traces:
            writer.writerow([_fmt(getattr(tr, col)) for col in TRACE_COLUMNS])


def read_trace_csv(path) -> dict:
    """Numeric columns of a trace file as arrays (``ball_contains_mu`` as float, NaN if absent)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for col in TRACE_COLUMNS:
        if col == "policy":
            out[col] = [r[col] for r in rows]
        elif col == "ball_contains_mu":
            out[col] = np.array([np.nan if r[col] == "" else float(r[col] == "true") for r in rows])
        else:
            out[col] = np.array([float(r[col]) for r in rows])
    return out


def _run_one(config: ExperimentConfig, rep: int):
    seed = replication_seed(config.master_seed, rep)
    streams = RandomStreams(seed)
    spec = config.env.build(streams.env_rng())
    results = {}
    for pcfg in config.policies:
        start = time.perf_counter()
        try:
            run = simulate(spec, config.T, pcfg, streams, replication=rep)
        except NonFiniteStateError as exc:
            log.warning("replication %d failed: %s", rep, exc)
            return {"rep": rep, "seed": seed, "failed": str(exc)}
        results[pcfg.label] = {
            "traces": run.traces,
            "digest": run.env_digest,
            "wall_ms": 1000.0 * (time.perf_counter() - start),
        }
    return {"rep": rep, "seed": seed, "spec": spec.to_dict(), "results": results}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    output_dir: Path
    aggregate: dict
    traces: dict  # (policy, rep) -> list[RoundTrace]
    failed: list
    digests: dict

    @property
    def failure_rate(self) -> float:
        return len(self.failed) / self.config.replications


def resolve_output_dir(config: ExperimentConfig, cli_out: Optional[str] = None) -> Path:
    if cli_out:
        return Path(cli_out)
    if config.output_dir:
        return Path(config.output_dir)
    env_out = os.environ.get(OUT_ENV_VAR)
    if env_out:
        return Path(env_out) / config.name
    return Path("runs") / config.name


def _check_writable(out: Path) -> None:
    try:
        (out / "traces").mkdir(parents=True, exist_ok=True)
        (out / "envs").mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("ok")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc


def aggregate_traces(traces: dict, policies, T: int, n: int) -> dict:
    """Mean and std across replications of the plotted series, per policy.

    ``opt`` and ``bandit`` series are cumulative component regret divided by
    ``t * n``, like ``avg_regret_cum``.
    """
    out = {}
    steps = np.arange(1, T + 1)
    for label in policies:
        reps = sorted(r for (p, r) in traces if p == label)
        if not reps:
            continue
        rows = [traces[(label, r)] for r in reps]
        avg = np.array([[tr.avg_regret_cum for tr in run] for run in rows])
        opt = np.array([np.cumsum([tr.opt_regret for tr in run]) for run in rows]) / (steps * n)
        ban = np.array([np.cumsum([tr.bandit_regret for tr in run]) for run in rows]) / (steps * n)
        err = np.array([[tr.pred_error for tr in run] for run in rows])
        series = {"t": steps, "n_reps": len(reps)}
        for key, arr in (("avg_regret", avg), ("opt_regret", opt), ("bandit_regret", ban), ("pred_error", err)):
            if np.isnan(arr).all():
                series[f"{key}_mean"] = np.full(T, np.nan)
                series[f"{key}_std"] = np.full(T, np.nan)
            else:
                # columns that are NaN in every replication stay NaN
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    series[f"{key}_mean"] = np.nanmean(arr, axis=0)
                    series[f"{key}_std"] = np.nanstd(arr, axis=0)
        out[label] = series
    return out


def write_aggregate_csv(path: Path, aggregate: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for label, series in aggregate.items():
            for k, t in enumerate(series["t"]):
                row = [label, int(t), series["n_reps"]]
                for col in AGGREGATE_COLUMNS[3:]:
                    row.append(repr(float(series[col][k])))
                writer.writerow(row)


def run_experiment(config: ExperimentConfig, output_dir=None, workers: Optional[int] = None) -> ExperimentResult:
    """Run every policy on every replication and persist traces and aggregates.

    All policies of a replication share one environment draw and one set of
    per-round feature/noise streams.
    """
    out = resolve_output_dir(config, output_dir)
    _check_writable(out)
    workers = workers or config.workers or 1
    reps = range(config.replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, [config] * config.replications, reps))
    else:
        outcomes = [_run_one(config, rep) for rep in reps]

    traces, failed, digests, timings, seeds = {}, [], {}, {}, {}
    labels = [p.label for p in config.policies]
    for res in outcomes:
        rep = res["rep"]
        seeds[rep] = res["seed"]
        if "failed" in res:
            failed.append({"replication": rep, "error": res["failed"]})
            continue
        with open(out / "envs" / f"rep{rep}.json", "w") as fh:
            json.dump(res["spec"], fh)
        for label, data in res["results"].items():
            traces[(label, rep)] = data["traces"]
            digests[f"{label}/rep{rep}"] = data["digest"]
            timings[f"{label}/rep{rep}"] = round(data["wall_ms"], 3)
            write_trace_csv(out / "traces" / f"{label}_rep{rep}.csv", data["traces"])

    aggregate = aggregate_traces(traces, labels, config.T, config.env.n)
    write_aggregate_csv(out / "aggregate.csv", aggregate)
    manifest = {
        "config": replace(config, output_dir=str(out)).to_dict(),
        "replication_seeds": {str(k): v for k, v in sorted(seeds.items())},
        "seed_derivation": "splitmix64(master_seed + replication * 0x9E3779B97F4A7C15)",
        "failed": failed,
        "env_digests": digests,
        "trace_columns": TRACE_COLUMNS,
        "aggregate_columns": AGGREGATE_COLUMNS,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    with open(out / "timings.json", "w") as fh:
        json.dump(timings, fh, indent=2, sort_keys=True)
    return ExperimentResult(config, out, aggregate, traces, failed, digests)

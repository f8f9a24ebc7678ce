"""Run orchestration, artifacts, ablations and exports used by the CLI."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import pickle
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .driver import (PretrainResult, eval_milestones, run_adaptation, run_flat_baseline, run_pretraining)
from .env import VarKind
from .graphs import graph_from_json, graph_to_dot, graph_to_json
from .worlds import HiddenVars, Monitor, make_world

log = logging.getLogger(__name__)

METRICS_HEADER = ["iteration", "env_steps", "shd", "sid", "n_controllable", "mean_subgoal_success",
                  "m0", "m1", "m2", "m3", "m4", "wall_clock_s"]
ABLATION_HEADER = ["iteration", "shd_policy", "shd_random", "sid_policy", "sid_random"]


class ArtifactError(RuntimeError):
    pass


def effective_vars(schema) -> list[int]:
    return schema.ids_of_kind(VarKind.ITEM, VarKind.STATE_VALUE)


def dropout_count(ratio: float, n_effective: int) -> int:
    """Ceiling of ratio * n, robust to float noise such as 0.3 * 10."""
    return int(math.ceil(round(ratio * n_effective, 9)))


def choose_dropped(schema, ratio: float, rng, drop_vars=()) -> list[str]:
    if drop_vars:
        names = [schema.entries[v].name if isinstance(v, int) else v for v in drop_vars]
        for n in names:
            schema.index(n)
        return sorted(names, key=schema.index)
    eff = effective_vars(schema)
    k = dropout_count(ratio, len(eff))
    picked = sorted(rng.choice(eff, size=k, replace=False).tolist()) if k else []
    return [schema.entries[v].name for v in picked]


def build_env(cfg: RunConfig):
    """World for ``cfg`` plus the names of variables hidden from the agent."""
    env = make_world(cfg.env.name, cfg.env.params, seed=cfg.seed)
    dropped: list[str] = []
    if cfg.ablation.mode == "ev_dropout":
        rng = np.random.default_rng([cfg.seed, 7])
        dropped = choose_dropped(env.schema(), cfg.ablation.dropout_ratio, rng, cfg.ablation.drop_vars)
        if dropped:
            last = env.schema().entries[effective_vars(env.schema())[-1]].name
            if last in dropped:
                log.warning("dropping %s removes the final-milestone variable; the run proceeds", last)
            env = HiddenVars(env, dropped)
    return env, dropped


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([r["iteration"], r["env_steps"], r["shd"], r["sid"], r["n_controllable"],
                    f"{r['mean_subgoal_success']:.6f}", r["m0"], r["m1"], r["m2"], r["m3"], r["m4"],
                    f"{r['wall_clock_s']:.3f}"])
    return buf.getvalue()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@dataclass
class RunSummary:
    out_dir: Path
    pretrain: PretrainResult
    rows: list[dict]
    dropped: list[str]
    adaptation_steps: int = 0


def run_pretraining_to(cfg: RunConfig, out: Path, random_intervention: bool | None = None) -> RunSummary:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    env, dropped = build_env(cfg)
    settings = cfg.driver
    if random_intervention is not None:
        settings = replace(settings, random_intervention=random_intervention)
    elif cfg.ablation.mode == "random_intervention":
        settings = replace(settings, random_intervention=True)
    _write_json(out / "config-echo.json", cfg.to_dict())
    monitor = Monitor(env)
    _write_json(out / "truth.json", graph_to_json(monitor.ground_truth_graph()))

    def on_iteration(snap):
        k = snap.iteration
        _write_json(out / f"graph-iter{k}.json", graph_to_json(snap.graph, snap.sigma))
        (out / f"graph-iter{k}.dot").write_text(graph_to_dot(snap.graph))
        if snap.dataset is not None:
            snap.dataset.to_jsonl(out / f"interventions-iter{k}.jsonl")

    result = run_pretraining(monitor, cfg.scm, cfg.hrl, settings, cfg.seed, on_iteration)
    rows = [s.metrics for s in result.state.snapshots if s.metrics]
    (out / "metrics.csv").write_text(metrics_csv(rows))
    if result.graph is not None:
        _write_json(out / "graph.json", graph_to_json(result.graph, result.state.snapshots[-1].sigma))
        (out / "graph.dot").write_text(graph_to_dot(result.graph))
    _write_json(out / "hierarchy.json", result.hierarchy.to_json())
    with open(out / "events.jsonl", "w") as fh:
        for e in result.state.events:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    _write_json(out / "loop.json", {
        "stop_reason": result.state.stop_reason,
        "S_IV": sorted(int(v) for v in result.state.S_IV),
        "dropped": dropped,
        "diagnostics": result.state.diagnostics[-50:],
        "trace": [{"iteration": s.iteration, "S_IV": s.S_IV, "S_CC": s.S_CC, "S_C": s.S_C} for s in result.state.snapshots],
    })
    return RunSummary(out, result, rows, dropped)


def cli_run(cfg: RunConfig, out: Path | None = None) -> RunSummary:
    """Pretraining, then adaptation; writes every artifact under ``out``."""
    out = Path(out or cfg.out_dir)
    summary = run_pretraining_to(cfg, out)
    res = summary.pretrain
    rng = np.random.default_rng([cfg.seed, 1])
    res.env.take_log()
    tp, curve = run_adaptation(res.env, res.hierarchy, cfg.hrl, cfg.driver.adaptation_steps, rng)
    summary.adaptation_steps = res.env.take_log().env_steps
    with open(out / "adaptation.csv", "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "env_steps", "reward", "milestones"])
        for c in curve:
            w.writerow([c["episode"], c["env_steps"], c["reward"], c["milestones"]])
    models = {"env": res.env, "hierarchy": res.hierarchy, "task_policy": tp,
              "pretrain_steps": summary.rows[-1]["env_steps"] if summary.rows else 0,
              "adaptation_steps": summary.adaptation_steps}
    if cfg.eval.flat_baseline:
        total = models["pretrain_steps"] + summary.adaptation_steps
        fp, _, used = run_flat_baseline(res.env, cfg.hrl, models["pretrain_steps"], total, np.random.default_rng([cfg.seed, 2]))
        models["flat_policy"] = fp
        models["flat_steps"] = used
    with open(out / "models.pkl", "wb") as fh:
        pickle.dump(models, fh)
    return summary


def pad_series(values, n):
    values = list(values)
    return values + [values[-1]] * (n - len(values)) if values else [0] * n


def ablation_rows(policy_rows, random_rows) -> list[dict]:
    n = max(len(policy_rows), len(random_rows))
    sp = pad_series([r["shd"] for r in policy_rows], n)
    sr = pad_series([r["shd"] for r in random_rows], n)
    dp = pad_series([r["sid"] for r in policy_rows], n)
    dr = pad_series([r["sid"] for r in random_rows], n)
    return [{"iteration": k, "shd_policy": sp[k], "shd_random": sr[k], "sid_policy": dp[k], "sid_random": dr[k]}
            for k in range(n)]


def cli_ablate_random_intervention(cfg: RunConfig, out: Path | None = None):
    """Two matched pretrainings; the shorter run's last values are carried forward."""
    out = Path(out or cfg.out_dir)
    pol = run_pretraining_to(cfg, out / "policy", random_intervention=False)
    rnd = run_pretraining_to(cfg, out / "random", random_intervention=True)
    rows = ablation_rows(pol.rows, rnd.rows)
    with open(out / "ablation.csv", "w") as fh:
        w = csv.DictWriter(fh, ABLATION_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return pol, rnd, rows


def cli_ablate_ev_dropout(cfg: RunConfig, ratio: float | None = None, out: Path | None = None) -> RunSummary:
    ab = replace(cfg.ablation, mode="ev_dropout",
                 dropout_ratio=cfg.ablation.dropout_ratio if ratio is None else ratio)
    if not 0 <= ab.dropout_ratio < 1:
        raise ValueError("ratio must lie in [0, 1)")
    return cli_run(replace(cfg, ablation=ab), out)


def cli_export_graph(run_dir: Path, which: str = "learned", fmt: str = "json", dest: Path | None = None) -> Path:
    run_dir = Path(run_dir)
    src = run_dir / ("truth.json" if which == "truth" else "graph.json")
    if not src.exists():
        raise ArtifactError(f"missing artifact {src}")
    graph, sigma = graph_from_json(src.read_text())
    dest = Path(dest) if dest else run_dir / f"export-{which}.{fmt}"
    if fmt == "dot":
        dest.write_text(graph_to_dot(graph))
    elif fmt == "json":
        _write_json(dest, graph_to_json(graph, sigma))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return dest


def load_models(run_dir: Path) -> dict:
    path = Path(run_dir) / "models.pkl"
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    with open(path, "rb") as fh:
        return pickle.load(fh)


def cli_eval_milestones(run_dir: Path, episodes: int = 1000, seed: int = 0, policy: str = "task_policy") -> list[int]:
    models = load_models(run_dir)
    if policy not in models:
        raise ArtifactError(f"run has no {policy}")
    counts = eval_milestones(models["env"], models[policy], episodes, np.random.default_rng(seed))
    _write_json(Path(run_dir) / f"milestones-{policy}.json", {"episodes": episodes, "counts": counts})
    return counts

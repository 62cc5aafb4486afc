"""Experiment drivers: seeded training runs, k/tier sweeps, analysis reports.

Every driver writes delimited output plus rendered figures into its output
directory. Files named ``*timing*`` carry wall-clock measurements and are the
only outputs exempt from bit-identical reproducibility; everything else is a
pure function of the configuration and seed.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..action_index import ActionSet, IndexConfig, IndexTier, build, measure_recall
from ..ddpg import Trainer, TrainerConfig, save_checkpoint, load_checkpoint
from ..envs import CartPoleSwingUp, PuddleWorld, benchmark_map, synth_recommender
from ..envs.base import Environment
from ..envs.puddle import dp_optimal_return, generate_puddle_map, parse_ascii_map
from ..envs.recommender import RecommenderSim
from ..lemma import GRID_BC, GRID_K, GRID_P, LemmaScenario, expected_max, monte_carlo_max
from ..nets import params_digest
from ..policy import PolicyConfig, WolpertingerPolicy, make_actor, make_critic
from .config import ExperimentConfig
from . import plots


# ---------------------------------------------------------------------------
# CSV helpers (all harness output is round-trippable through these)

def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(s: str):
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            continue
    return s


def write_csv(path, header, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def load_csv(path) -> tuple[list[str], list[tuple]]:
    import csv

    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [tuple(_parse(v) for v in rec) for rec in r]
    return header, rows


# ---------------------------------------------------------------------------
# Environment factory and seed derivation

def make_env(env_cfg: dict, seed: int) -> Environment:
    cfg = dict(env_cfg)
    name = cfg.pop("name")
    if name == "puddle":
        size = int(cfg.pop("size", 20))
        plan_length = int(cfg.pop("plan_length", 8))
        window_radius = int(cfg.pop("window_radius", 2))
        map_path = cfg.pop("map_path", None)
        map_seed = cfg.pop("map_seed", None)
        puddle_rects = cfg.pop("puddle_rects", None)
        _reject_unknown(name, cfg)
        if map_path is not None:
            grid = parse_ascii_map(Path(map_path).read_text())
        elif map_seed is not None:
            grid = generate_puddle_map(size, size, int(map_seed), puddle_rects)
        else:
            grid = benchmark_map(size)
        return PuddleWorld(grid, plan_length=plan_length, window_radius=window_radius, seed=seed)
    if name == "recommender":
        load_path = cfg.pop("load_path", None)
        if load_path is not None:
            _reject_unknown(name, cfg)
            return RecommenderSim.load(load_path, seed=seed)
        kwargs = {
            "num_items": int(cfg.pop("num_items", 49)),
            "embed_dim": int(cfg.pop("embed_dim", 20)),
            "sparsity": float(cfg.pop("sparsity", 0.2)),
            "seed": int(cfg.pop("sim_seed", 0)),
        }
        for key in ("num_clusters", "temperature", "peak_accept"):
            if key in cfg:
                kwargs[key] = cfg.pop(key)
        guided = bool(cfg.pop("guided_exploration", True))
        _reject_unknown(name, cfg)
        sim = synth_recommender(env_seed=seed, **kwargs)
        if not guided:
            sim.exploration_support = lambda: None  # type: ignore[method-assign]
        return sim
    if name == "cartpole":
        num_forces = int(cfg.pop("num_forces", 1_000_000))
        _reject_unknown(name, cfg)
        return CartPoleSwingUp(num_forces=num_forces, seed=seed)
    raise ValueError(f"unknown environment {name!r}")


def _reject_unknown(name: str, leftover: dict) -> None:
    if leftover:
        raise ValueError(f"unknown {name} environment keys: {sorted(leftover)}")


def derive_seeds(seed: int) -> dict[str, int]:
    """Independent per-component integer seeds from the experiment seed."""
    names = ("env", "actor", "critic", "index", "trainer", "eval_env")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


# ---------------------------------------------------------------------------
# Single experiment

@dataclass
class MetricRow:
    env_steps: int
    wall_seconds: float
    mean_return: float
    median_steps_per_sec: float


@dataclass
class RunMetrics:
    rows: list[MetricRow]

    def validate(self) -> None:
        steps = [r.env_steps for r in self.rows]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise RuntimeError("metric rows must have strictly increasing env_steps")

    def write(self, metrics_path, timing_path) -> None:
        self.validate()
        write_csv(
            metrics_path,
            ("env_steps", "mean_return"),
            [(r.env_steps, r.mean_return) for r in self.rows],
        )
        write_csv(
            timing_path,
            ("env_steps", "wall_seconds", "median_steps_per_sec"),
            [(r.env_steps, r.wall_seconds, r.median_steps_per_sec) for r in self.rows],
        )


@dataclass
class RunResult:
    config: ExperimentConfig
    out_dir: Path
    metrics: RunMetrics
    episodes: int
    env_steps: int

    @property
    def final_return(self) -> float:
        return self.metrics.rows[-1].mean_return


def greedy_eval(policy: WolpertingerPolicy, env: Environment, episodes: int, max_steps: int) -> float:
    """Mean return of the frozen policy (no epsilon, no noise)."""
    total = 0.0
    for _ in range(episodes):
        obs = env.reset()
        for _ in range(max_steps):
            step = env.step(policy.select_action(obs).chosen)
            total += step.reward
            obs = step.observation
            if step.terminal:
                break
    return total / episodes


def build_policy(config: ExperimentConfig, env: Environment, seeds: dict[str, int]) -> WolpertingerPolicy:
    actions = env.action_set
    pol = config.policy
    k = PolicyConfig(k=pol["k"]).resolve_k(len(actions))
    hidden = tuple(pol.get("hidden", (64, 64)))
    index = build(actions, IndexConfig.for_tier(pol["tier"]), seed=seeds["index"])
    actor = make_actor(env.observation_dim, actions, np.random.default_rng(seeds["actor"]), hidden=hidden)
    critic = make_critic(env.observation_dim, actions.dim, np.random.default_rng(seeds["critic"]), hidden=hidden)
    return WolpertingerPolicy(actor, critic, index, actions, k=k, refine=bool(pol["refine"]))


def run_experiment(config: ExperimentConfig, out_dir=None) -> RunResult:
    out = out_dir or config.out_dir
    if out is None:
        raise ValueError("an output directory is required (config.out_dir or out_dir)")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    if "seed" in config.trainer:
        raise ValueError("set the top-level experiment seed, not trainer.seed")
    seeds = derive_seeds(config.seed)
    trainer_cfg = config.trainer_config()
    trainer_cfg.seed = seeds["trainer"]

    eval_every = int(config.evaluation["every_steps"])
    eval_episodes = int(config.evaluation["episodes"])
    if eval_every < 1 or eval_episodes < 1:
        raise ValueError("evaluation cadence and episode count must be >= 1")
    eval_max_steps = int(
        config.evaluation.get("max_steps_per_episode") or trainer_cfg.max_steps_per_episode
    )

    echo = ExperimentConfig.from_dict(config.to_dict())
    echo.out_dir = str(out)
    echo.write_json(out / "config.json")

    # single-threaded BLAS: the training loop's matmuls are tiny, and runs
    # must be bit-reproducible regardless of the machine's core count
    with threadpool_limits(limits=1):
        env = make_env(config.environment, seed=seeds["env"])
        eval_env = make_env(config.environment, seed=seeds["eval_env"])
        policy = build_policy(config, env, seeds)
        trainer = Trainer(env, policy, trainer_cfg)

        metrics = RunMetrics(rows=[])
        t_start = time.perf_counter()
        step_durations: list[float] = []
        last_time = [t_start]
        last_eval = [-1]

        def do_eval(env_steps: int) -> None:
            before = params_digest(policy.actor) + params_digest(policy.critic)
            mean_ret = greedy_eval(policy, eval_env, eval_episodes, eval_max_steps)
            after = params_digest(policy.actor) + params_digest(policy.critic)
            if before != after:
                raise RuntimeError("evaluation mutated learned parameters")
            sps = 1.0 / float(np.median(step_durations)) if step_durations else math.nan
            metrics.rows.append(
                MetricRow(
                    env_steps=env_steps,
                    wall_seconds=time.perf_counter() - t_start,
                    mean_return=mean_ret,
                    median_steps_per_sec=sps,
                )
            )
            step_durations.clear()
            last_eval[0] = env_steps
            last_time[0] = time.perf_counter()

        def on_step(env_steps: int) -> None:
            now = time.perf_counter()
            step_durations.append(now - last_time[0])
            last_time[0] = now
            if env_steps % eval_every == 0 and env_steps != last_eval[0]:
                do_eval(env_steps)

        do_eval(0)
        log = trainer.train(step_callback=on_step)
        if trainer.env_steps != last_eval[0]:
            do_eval(trainer.env_steps)

        metrics.write(out / "metrics.csv", out / "timing.csv")
        log.write_csv(out / "training_log.csv")
        save_checkpoint(out / "checkpoint", policy, trainer.target_policy, trainer_cfg, trainer.env_steps)

    plots.plot_learning_curve(
        [(r.env_steps, r.mean_return) for r in metrics.rows],
        out / "learning_curve.png",
        title=f"{config.environment['name']} (k={policy.k}, {config.policy['tier']})",
    )
    summary = {
        "env_steps": trainer.env_steps,
        "episodes": len(log),
        "final_mean_return": metrics.rows[-1].mean_return,
        "resolved_k": policy.k,
        "action_set_size": len(policy.actions),
        "exploration": "guided-synthetic-structure"
        if config.environment.get("name") == "recommender"
        and config.environment.get("guided_exploration", True)
        else "uniform",
    }
    if config.environment["name"] == "puddle":
        grid = getattr(env, "grid", None)
        if grid is not None:
            summary["dp_optimal_return"] = dp_optimal_return(grid)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return RunResult(
        config=config,
        out_dir=out,
        metrics=metrics,
        episodes=len(log),
        env_steps=trainer.env_steps,
    )


# ---------------------------------------------------------------------------
# Sweeps

@dataclass
class SweepResult:
    out_dir: Path
    rows: list[tuple]
    failures: list[dict]

    @property
    def ok(self) -> bool:
        return not self.failures


def _k_label(k) -> str:
    return repr(float(k)) if isinstance(k, float) else str(int(k))


def run_sweep(base: ExperimentConfig, k_list, tier_list, out_dir) -> SweepResult:
    """One run per (k, tier) cell; failures are recorded and the sweep
    continues."""
    if not k_list or not tier_list:
        raise ValueError("k_list and tier_list must be non-empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[tuple] = []
    timing_rows: list[tuple] = []
    speed_cells: list[tuple] = []
    curve_cells: dict[tuple, list] = {}
    failures: list[dict] = []
    for k in k_list:
        for tier in tier_list:
            tier = str(IndexTier(tier).value)
            label = _k_label(k)
            cell_dir = out / f"k_{label}_tier_{tier}"
            cfg = ExperimentConfig.from_dict(base.to_dict())
            cfg.policy["k"] = k
            cfg.policy["tier"] = tier
            cfg.out_dir = None
            try:
                res = run_experiment(cfg, out_dir=cell_dir)
            except Exception as exc:  # cell failures must not kill the sweep
                failures.append({"k": label, "tier": tier, "error": repr(exc)})
                continue
            cell_curve = []
            cell_speeds = []
            for r in res.metrics.rows:
                rows.append((label, tier, r.env_steps, r.mean_return))
                timing_rows.append(
                    (label, tier, r.env_steps, r.wall_seconds, r.median_steps_per_sec)
                )
                cell_curve.append((r.env_steps, r.mean_return))
                if not math.isnan(r.median_steps_per_sec):
                    cell_speeds.append(r.median_steps_per_sec)
            curve_cells[(label, tier)] = cell_curve
            if cell_speeds:
                speed_cells.append((label, tier, float(np.median(cell_speeds))))
    write_csv(out / "sweep.csv", ("k", "tier", "env_steps", "mean_return"), rows)
    write_csv(
        out / "sweep_timing.csv",
        ("k", "tier", "env_steps", "wall_seconds", "median_steps_per_sec"),
        timing_rows,
    )
    if curve_cells:
        plots.plot_sweep_returns(curve_cells, out / "sweep_returns.png")
    if speed_cells:
        plots.plot_sweep_speed(speed_cells, out / "sweep_speed.png")
    with open(out / "sweep_summary.json", "w") as fh:
        json.dump({"failures": failures, "cells": len(curve_cells)}, fh, indent=2)
        fh.write("\n")
    return SweepResult(out_dir=out, rows=rows, failures=failures)


# ---------------------------------------------------------------------------
# Analysis reports

@dataclass
class LemmaReport:
    out_dir: Path
    rows: list[dict]
    all_pass: bool


LEMMA_HEADER = ("p", "b", "c", "k", "expected_max", "mc_mean", "mc_se", "marginal_gain")


def run_lemma_report(out_dir, samples: int = 1_000_000, grid: dict | None = None, seed: int = 0) -> LemmaReport:
    """Closed-form vs Monte Carlo agreement over the scenario grid, plus
    diminishing-returns curves. A cell passes when |closed - MC| <= 4 SE."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if grid is None:
        grid = {"p": list(GRID_P), "bc": [list(x) for x in GRID_BC], "k": list(GRID_K)}
    ps = grid.get("p", [])
    bcs = grid.get("bc", [])
    ks = sorted(int(k) for k in grid.get("k", []))
    root = np.random.SeedSequence(seed)
    rows: list[dict] = []
    verdicts: list[bool] = []
    for p in ps:
        for b, c in bcs:
            prev = None
            for k in ks:
                scn = LemmaScenario(p=float(p), b=float(b), c=float(c), k=int(k))
                e = expected_max(scn)
                rng = np.random.default_rng(root.spawn(1)[0])
                mc, se = monte_carlo_max(scn, samples, rng)
                rows.append(
                    {
                        "p": float(p),
                        "b": float(b),
                        "c": float(c),
                        "k": int(k),
                        "expected_max": e,
                        "mc_mean": mc,
                        "mc_se": se,
                        "marginal_gain": math.nan if prev is None else e - prev,
                    }
                )
                verdicts.append(abs(e - mc) <= 4.0 * se)
                prev = e
    write_csv(out / "lemma.csv", LEMMA_HEADER, [tuple(r[h] for h in LEMMA_HEADER) for r in rows])
    all_pass = all(verdicts)
    with open(out / "lemma_summary.json", "w") as fh:
        json.dump(
            {"all_pass": all_pass, "cells": len(rows), "samples": samples,
             "failed_cells": int(sum(not v for v in verdicts))},
            fh,
            indent=2,
        )
        fh.write("\n")
    if rows:
        plots.plot_lemma_curves(rows, out / "lemma_curves.png")
    return LemmaReport(out_dir=out, rows=rows, all_pass=all_pass)


@dataclass
class RecallReport:
    out_dir: Path
    rows: list[tuple]
    medians: dict[str, float]


def run_recall_report(
    out_dir,
    num_points: int = 13138,
    dim: int = 20,
    k: int = 10,
    num_queries: int = 200,
    num_seeds: int = 5,
    base_seed: int = 0,
    tiers=(IndexTier.EXACT, IndexTier.SLOW, IndexTier.MEDIUM, IndexTier.FAST),
) -> RecallReport:
    """Recall benchmark on uniform random embeddings, per tier and seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[tuple] = []
    for s in range(num_seeds):
        rng = np.random.default_rng(np.random.SeedSequence([base_seed, s]))
        actions = ActionSet(rng.uniform(0.0, 1.0, size=(num_points, dim)))
        for tier in tiers:
            tier = IndexTier(tier)
            index = build(actions, IndexConfig.for_tier(tier), seed=s)
            recall = measure_recall(index, actions, num_queries=num_queries, k=k, seed=1_000 + s)
            rows.append((tier.value, s, recall))
    medians = {
        t: float(np.median([r[2] for r in rows if r[0] == t]))
        for t in {r[0] for r in rows}
    }
    write_csv(out / "recall.csv", ("tier", "seed", "recall"), rows)
    with open(out / "recall_summary.json", "w") as fh:
        json.dump(
            {"medians": medians, "num_points": num_points, "dim": dim, "k": k,
             "num_queries": num_queries},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    plots.plot_recall(rows, out / "recall.png")
    return RecallReport(out_dir=out, rows=rows, medians=medians)


def run_eval(run_dir, episodes: int = 20, seed: int = 0) -> float:
    """Load a finished run's checkpoint and play greedy episodes."""
    run_dir = Path(run_dir)
    config = ExperimentConfig.from_json(run_dir / "config.json")
    ckpt = load_checkpoint(run_dir / "checkpoint")
    seeds = derive_seeds(config.seed)
    env = make_env(config.environment, seed=int(np.random.SeedSequence([seed, 1]).generate_state(1)[0]))
    actions = env.action_set
    index = build(actions, IndexConfig.for_tier(config.policy["tier"]), seed=seeds["index"])
    policy = WolpertingerPolicy(
        ckpt["actor"],
        ckpt["critic"],
        index,
        actions,
        k=int(ckpt["manifest"]["k"]),
        refine=bool(ckpt["manifest"]["refine"]),
    )
    max_steps = int(
        config.evaluation.get("max_steps_per_episode")
        or config.trainer_config().max_steps_per_episode
    )
    returns = []
    for _ in range(episodes):
        obs = env.reset()
        total = 0.0
        for _ in range(max_steps):
            step = env.step(policy.select_action(obs).chosen)
            total += step.reward
            obs = step.observation
            if step.terminal:
                break
        returns.append(total)
    write_csv(
        run_dir / "eval.csv",
        ("episode", "episode_return"),
        list(enumerate(returns)),
    )
    return float(np.mean(returns))

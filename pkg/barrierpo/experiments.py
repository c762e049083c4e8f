"""Run protocols behind the commands: training runs, evaluation, sweeps, comparisons."""

from __future__ import annotations

import logging
import statistics
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from barrierpo.checkpoint import checkpoint_path, encode_checkpoint, read_checkpoint, write_checkpoint
from barrierpo.cmdp import ConstraintKind
from barrierpo.config import CriticDesign, RunConfig, RunMode
from barrierpo.envs import make_env
from barrierpo.exceptions import NumericFailureError
from barrierpo.losses import symmetry_mismatch
from barrierpo.metrics import (
    SUMMARY_FILE,
    ConstraintVerdict,
    MetricsSchema,
    MetricsWriter,
    rows_to_csv,
    verdicts,
    write_summary,
)
from barrierpo.networks import policy_forward
from barrierpo.optimizer import BarrierProblem, IterationReport, adaptive_thresholds, policy_step
from barrierpo.rollout import AdvantageSet, build_advantages, collect, dump_batch
from barrierpo.trainer import Trainer, build_cost_critic, critic_columns

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json5"
BATCH_DUMP_FILE = "batch.txt"
SWEEP_RUNS_FILE = "sweep_runs.csv"
SWEEP_SUMMARY_FILE = "sweep_summary.csv"
COMPARE_FILE = "compare.csv"
TIMING_FILE = "timing.csv"
CRITICS_FILE = "critics.csv"

# Window for the step-acceptance proxy of the policy update rate.
UPDATE_RATE_WINDOW = 100


@dataclass(frozen=True, eq=False)
class TrainingResult:
    config: RunConfig
    reports: list[IterationReport]
    verdicts: list[ConstraintVerdict]
    output_dir: Path

    @property
    def final_reward(self) -> float:
        return self.reports[-1].mean_reward if self.reports else float("nan")

    @property
    def final_j_c(self) -> list[float]:
        return [v.j_c for v in self.verdicts]

    def acceptance_rate(self, window: int | None = None) -> float:
        reports = self.reports if window is None else self.reports[:window]
        if not reports:
            return float("nan")
        return sum(r.accepted for r in reports) / len(reports)


def schema_for(trainer: Trainer) -> MetricsSchema:
    return MetricsSchema(trainer.monitored_names, trainer.enforced_names)


def final_verdicts(config: RunConfig, reports: Sequence[IterationReport]) -> list[ConstraintVerdict]:
    """Last iteration's J against the true (unadapted) limits."""
    limits = config.cmdp.limits()
    j = reports[-1].j_c if reports else np.full(limits.size, np.nan)
    return verdicts(config.cmdp.names, j, limits)


def run_training(
    config: RunConfig,
    *,
    output_dir: Path | None = None,
    resume: Path | None = None,
    dump_batch_path: Path | None = None,
) -> TrainingResult:
    """Train for ``config.iterations`` iterations, writing metrics, checkpoints and a summary.

    On a numeric failure the last consistent trainer state is written as a
    checkpoint before the error propagates.
    """
    output_dir = output_dir or config.output_path
    output_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(config) if resume is None else read_checkpoint(resume, config=config)
    start = trainer.iteration
    (output_dir / CONFIG_FILE).write_text(config.to_json5(), encoding="utf-8")
    logger.info("Training %s for %d iterations into %s.", config.cmdp.env_name, config.iterations - start, output_dir)

    reports: list[IterationReport] = []
    with MetricsWriter(output_dir, schema_for(trainer), keep_until=start if resume else None) as writer:
        while trainer.iteration < config.iterations:
            snapshot = encode_checkpoint(trainer)
            try:
                report = trainer.train_iteration()
            except NumericFailureError:
                path = checkpoint_path(output_dir, trainer.iteration)
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(snapshot)
                logger.error("Numeric failure at iteration %d; state saved to %s.", trainer.iteration, path)
                raise
            writer.write(report)
            reports.append(report)
            if trainer.iteration % config.checkpoint_every == 0 or trainer.iteration == config.iterations:
                write_checkpoint(checkpoint_path(output_dir, trainer.iteration), trainer)

    if dump_batch_path is not None and trainer.last_batch is not None:
        dump_batch(trainer.last_batch, dump_batch_path)

    result = TrainingResult(config, reports, final_verdicts(config, reports), output_dir)
    with (output_dir / SUMMARY_FILE).open("w", encoding="utf-8") as handle:
        write_summary(
            handle,
            f"{config.cmdp.env_name} ({config.mode.value}, seed {config.seed})",
            result.verdicts,
            mean_reward=result.final_reward,
        )
    return result


def evaluate(checkpoint: Path, episodes: int, *, seed: int | None = None) -> dict[str, Any]:
    """Run deterministic-mean-action episodes from a trainer checkpoint.

    Costs are reported per step, on the same scale as the constraint limits.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1.")
    trainer = read_checkpoint(checkpoint)
    config = trainer.config
    env = make_env(config.cmdp, k_c=config.env.k_c, effort_coef=config.env.effort_coef)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    returns: list[float] = []
    cost_sums = np.zeros(config.cmdp.num_constraints)
    states: list[np.ndarray] = []
    steps = 0
    for _ in range(episodes):
        state = env.reset(int(rng.integers(2**31 - 1)))
        total = 0.0
        done = False
        while not done:
            states.append(state)
            means, _ = policy_forward(trainer.policy, state[None, :])
            result = env.step(means[0])
            total += result.reward
            cost_sums += result.costs
            steps += 1
            state = result.next_state
            done = result.done
        returns.append(total)

    mean_costs = cost_sums / steps
    mirror = env.mirror()
    mismatch = None if mirror is None else symmetry_mismatch(trainer.policy, np.asarray(states), mirror)
    constraints = []
    for index, constraint in enumerate(config.cmdp.enabled):
        value = mismatch if constraint.kind is ConstraintKind.SYMMETRY else float(mean_costs[index])
        constraints.append(
            {
                "name": constraint.name,
                "kind": constraint.kind.value,
                "mean_cost": value,
                "limit": constraint.limit,
                "satisfied": value is not None and value <= constraint.limit,
            }
        )
    return {
        "checkpoint": str(checkpoint),
        "iteration": trainer.iteration,
        "episodes": episodes,
        "mean_return": float(np.mean(returns)),
        "symmetry_mismatch": mismatch,
        "constraints": constraints,
    }


def _cell_dir(base: Path, t: float, alpha: float, seed: int) -> Path:
    return base / f"t{t:g}_alpha{alpha:g}" / f"seed{seed}"


def _run_cell(config: RunConfig, t: float, alpha: float, seed: int, output_dir: Path) -> dict[str, Any]:
    row: dict[str, Any] = {"t": t, "alpha": alpha, "seed": seed}
    try:
        cell = config.with_overrides(
            {"barrier.t": t, "barrier.alpha": alpha, "seed": seed, "output_dir": str(output_dir)}
        )
        result = run_training(cell, output_dir=output_dir)
    except Exception as exc:
        logger.warning("Sweep cell t=%g alpha=%g seed=%d failed: %s", t, alpha, seed, exc)
        row.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
        return row
    row.update(
        {
            "status": "ok",
            "error": "",
            "final_reward": result.final_reward,
            "acceptance_rate": result.acceptance_rate(),
            "first100_acceptance_rate": result.acceptance_rate(UPDATE_RATE_WINDOW),
        }
    )
    for verdict in result.verdicts:
        row[f"j_c_{verdict.name}"] = verdict.j_c
        row[f"limit_{verdict.name}"] = verdict.limit
    return row


def sweep(
    config: RunConfig,
    ts: Sequence[float],
    alphas: Sequence[float],
    seeds: int,
    output_dir: Path,
    *,
    workers: int = 1,
) -> list[dict[str, Any]]:
    """One run per (t, alpha, seed) cell; writes per-run and seed-averaged CSVs.

    A failing cell is recorded and the sweep carries on.
    """
    if any(not v > 0 for v in (*ts, *alphas)):
        raise ValueError("Sweep grid values must be positive.")
    if seeds < 1:
        raise ValueError("seeds must be at least 1.")
    cells = [(t, a, config.seed + s) for t in ts for a in alphas for s in range(seeds)]
    rows: dict[int, dict[str, Any]] = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(_run_cell, config, t, a, seed, _cell_dir(output_dir, t, a, seed)): index
                for index, (t, a, seed) in enumerate(cells)
            }
            for future in as_completed(futures):
                rows[futures[future]] = future.result()
    else:
        for index, (t, a, seed) in enumerate(cells):
            rows[index] = _run_cell(config, t, a, seed, _cell_dir(output_dir, t, a, seed))

    ordered = [rows[i] for i in range(len(cells))]
    names = config.cmdp.names
    limits = dict(zip(names, config.cmdp.limits().tolist(), strict=True))
    columns = ["t", "alpha", "seed", "status", "final_reward", "acceptance_rate", "first100_acceptance_rate"]
    columns += [f"j_c_{n}" for n in names] + [f"limit_{n}" for n in names] + ["error"]
    rows_to_csv(output_dir / SWEEP_RUNS_FILE, [{c: row.get(c, "") for c in columns} for row in ordered])
    summary = summarize_sweep(ordered, names, limits)
    rows_to_csv(output_dir / SWEEP_SUMMARY_FILE, summary)
    return summary


def summarize_sweep(
    rows: Sequence[dict[str, Any]],
    names: Sequence[str],
    limits: dict[str, float],
) -> list[dict[str, Any]]:
    """Seed-averaged metrics per (t, alpha) cell with violation verdicts."""
    cells: dict[tuple[float, float], list[dict[str, Any]]] = {}
    for row in rows:
        cells.setdefault((row["t"], row["alpha"]), []).append(row)
    summary = []
    for (t, alpha), group in cells.items():
        ok = [row for row in group if row["status"] == "ok"]
        entry: dict[str, Any] = {"t": t, "alpha": alpha, "seeds_ok": len(ok), "seeds_failed": len(group) - len(ok)}
        if ok:
            entry["final_reward"] = statistics.fmean(row["final_reward"] for row in ok)
            entry["acceptance_rate"] = statistics.fmean(row["acceptance_rate"] for row in ok)
            entry["first100_acceptance_rate"] = statistics.fmean(row["first100_acceptance_rate"] for row in ok)
            j = {name: statistics.fmean(row[f"j_c_{name}"] for row in ok) for name in names}
            judged = verdicts(names, [j[n] for n in names], [limits[n] for n in names])
            for verdict in judged:
                entry[f"j_c_{verdict.name}"] = verdict.j_c
                entry[f"margin_{verdict.name}"] = verdict.limit - verdict.j_c
            entry["violated"] = ",".join(v.name for v in judged if v.violated)
            entry["near_limit"] = ",".join(v.name for v in judged if v.near_limit)
        summary.append(entry)
    columns = ["t", "alpha", "seeds_ok", "seeds_failed", "final_reward", "acceptance_rate", "first100_acceptance_rate"]
    columns += [f"j_c_{n}" for n in names] + [f"margin_{n}" for n in names] + ["violated", "near_limit"]
    return [{c: entry.get(c, "") for c in columns} for entry in summary]


def _tiled_problem(
    config: RunConfig, adv_set: AdvantageSet, k: int
) -> tuple[AdvantageSet, BarrierProblem]:
    """Repeat the first cost column ``k`` times with thresholds adapted as in training."""
    column = adv_set.adv_c[:, :1]
    j = np.repeat(adv_set.j_c[:1], k)
    d = np.repeat(config.cmdp.limits()[critic_columns(config)[:1]], k)
    tiled = AdvantageSet(
        adv_set.adv_r,
        adv_set.ret_r,
        np.repeat(column, k, axis=1),
        np.repeat(adv_set.ret_c[:, :1], k, axis=1),
        j,
    )
    thresholds = adaptive_thresholds(j, d, config.barrier.alpha, config.barrier.epsilon_min)
    return tiled, BarrierProblem.constrained(config.cmdp.gamma, thresholds)


def time_policy_step(config: RunConfig, ks: Sequence[int], *, repeats: int = 5) -> list[dict[str, Any]]:
    """Median policy-step wall time per constraint count on one frozen batch."""
    if not critic_columns(config):
        raise ValueError("Timing needs at least one enabled critic-backed constraint.")
    if any(k < 1 for k in ks):
        raise ValueError("Constraint counts must be positive.")
    trainer = Trainer(config)
    batch = collect(trainer.policy, trainer.pool, trainer.total_steps, trainer.value_net, trainer.cost_critic)
    adv_set = build_advantages(batch, config.cmdp.gamma, config.gae_lambda, trainer.critic_columns)
    medians: dict[int, float] = {}
    for k in ks:
        tiled, problem = _tiled_problem(config, adv_set, k)
        durations = []
        for _ in range(repeats):
            started = time.perf_counter()
            policy_step(batch, tiled, trainer.policy, config.barrier, problem)
            durations.append(time.perf_counter() - started)
        medians[k] = statistics.median(durations)
        logger.info("Policy step with K=%d: median %.2f ms.", k, 1000.0 * medians[k])
    baseline = medians[min(ks)]
    return [
        {"k": k, "median_ms": 1000.0 * medians[k], "ratio_to_min_k": medians[k] / baseline}
        for k in ks
    ]


def critic_sizes(config: RunConfig, ks: Sequence[int]) -> list[dict[str, Any]]:
    """Trainable parameters of both critic designs at each head count."""
    obs_dim = make_env(config.cmdp).obs_dim
    rows = []
    for k in ks:
        counts = {}
        for design in CriticDesign:
            variant = config.with_overrides({"network.critic_design": design.value})
            critic = build_cost_critic(variant, obs_dim, k, np.random.default_rng(0))
            counts[design] = 0 if critic is None else critic.num_params
        rows.append(
            {
                "k": k,
                "multi_head_params": counts[CriticDesign.MULTI_HEAD],
                "separate_params": counts[CriticDesign.SEPARATE],
                "ratio": counts[CriticDesign.MULTI_HEAD] / counts[CriticDesign.SEPARATE],
            }
        )
    return rows


def compare(
    config: RunConfig,
    output_dir: Path,
    *,
    ks: Sequence[int] = (1, 5, 10),
    lambda_scales: Sequence[float] = (1.0,),
    modes: Sequence[RunMode] = (RunMode.CONSTRAINED, RunMode.PENALTY),
) -> dict[str, list[dict[str, Any]]]:
    """Side-by-side final reward and J per mode on identical seeds, plus timing tables."""
    base_lambdas = list(config.penalty_lambdas) or [1.0] * config.cmdp.num_constraints
    names = config.cmdp.names
    runs: list[dict[str, Any]] = []
    for mode in modes:
        scales = lambda_scales if mode is RunMode.PENALTY else (None,)
        for scale in scales:
            label = mode.value if scale is None else f"{mode.value}_x{scale:g}"
            overrides: dict[str, Any] = {"mode": mode.value, "output_dir": str(output_dir / label)}
            if scale is not None:
                overrides["penalty.lambdas"] = [scale * lam for lam in base_lambdas]
            result = run_training(config.with_overrides(overrides), output_dir=output_dir / label)
            row: dict[str, Any] = {
                "mode": mode.value,
                "lambda_scale": "" if scale is None else float(scale),
                "final_reward": result.final_reward,
            }
            for verdict in result.verdicts:
                row[f"j_c_{verdict.name}"] = verdict.j_c
                row[f"satisfied_{verdict.name}"] = int(verdict.satisfied)
            runs.append(row)
    columns = ["mode", "lambda_scale", "final_reward"]
    columns += [f"j_c_{n}" for n in names] + [f"satisfied_{n}" for n in names]
    runs = [{c: row.get(c, "") for c in columns} for row in runs]
    rows_to_csv(output_dir / COMPARE_FILE, runs)

    timing = time_policy_step(replace(config, mode=RunMode.CONSTRAINED), ks) if critic_columns(config) else []
    rows_to_csv(output_dir / TIMING_FILE, timing)
    sizes = critic_sizes(config, ks)
    rows_to_csv(output_dir / CRITICS_FILE, sizes)
    return {"runs": runs, "timing": timing, "critics": sizes}


__all__ = [
    "BATCH_DUMP_FILE",
    "COMPARE_FILE",
    "CONFIG_FILE",
    "CRITICS_FILE",
    "SWEEP_RUNS_FILE",
    "SWEEP_SUMMARY_FILE",
    "TIMING_FILE",
    "TrainingResult",
    "compare",
    "critic_sizes",
    "evaluate",
    "final_verdicts",
    "run_training",
    "summarize_sweep",
    "sweep",
    "time_policy_step",
]

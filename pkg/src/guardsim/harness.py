"""Experiment orchestration: training runs, evaluation campaigns over
the (N, mode) grid, aggregation and file outputs.

Reproducibility contract: the seed of run r in cell (n, mode) is
``seed_base XOR sha256("n|mode|r")[:8]``, evaluation streams are
spawned from it, and every output file is written atomically with no
timestamps, so a plan file plus seed_base determines every byte.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .env import EnvConfig, NegotiationEnv
from .errors import CheckpointError, GuardsimError
from .ledger import LedgerState
from .metrics import (
    AggregateCell,
    EpisodeMetrics,
    aggregate_cells,
    baselines,
    efficiency,
    incentive_compatibility,
    jain,
    payoff_matrix,
    safety,
)
from .policies import (
    Block,
    CooperatePolicy,
    DefectPolicy,
    EpisodeTrace,
    LearnerParams,
    LearnerPolicy,
    Policy,
    RandomPolicy,
    learner_act,
    learner_update,
    save_checkpoint,
)
from .regulator import BlacklistConfig, RegulatorState
from .types import Mode, RewardSchedule

DEFAULT_GRID_AGENTS = (3, 4, 8, 10)
DEFAULT_MODES = (Mode.FREE, Mode.RECOMMENDED, Mode.IMPOSED)


# -- plans and seeds ---------------------------------------------------------


@dataclass
class LearnerHyper:
    """Training hyperparameters shared by every run of a plan.

    The sampling temperature anneals linearly from ``temperature_start``
    to ``temperature_end`` over the step budget, so late training
    optimizes (and experiences the consequences of) nearly the same
    deterministic policy that greedy evaluation measures.
    """

    learning_rate: float = 0.2
    entropy_bonus: float = 0.03
    gamma: float = 0.99
    batch_episodes: int = 128
    block_episodes: int = 16
    temperature_start: float = 1.0
    temperature_end: float = 0.15
    probe_episodes: int = 16


@dataclass
class ExperimentPlan:
    grid: list[tuple[int, Mode]] = field(
        default_factory=lambda: [(n, m) for n in DEFAULT_GRID_AGENTS for m in DEFAULT_MODES]
    )
    runs_per_cell: int = 5
    eval_episodes: int = 100
    train_step_budget: int = 100_000
    seed_base: int = 0
    max_steps: int = 10
    rewards: RewardSchedule = field(default_factory=RewardSchedule)
    blacklist_threshold: int = 3
    blacklist_duration: int = 5
    recommendation_basis: str = "consumed"
    learner: LearnerHyper = field(default_factory=LearnerHyper)

    @classmethod
    def from_json(cls, path) -> "ExperimentPlan":
        with open(path) as fh:
            doc = json.load(fh)
        plan = cls()
        if "grid" in doc:
            plan.grid = [(int(n), Mode.parse(m)) for n, m in (tuple(cell) for cell in doc["grid"])]
        for key in (
            "runs_per_cell",
            "eval_episodes",
            "train_step_budget",
            "seed_base",
            "max_steps",
            "blacklist_threshold",
            "blacklist_duration",
        ):
            if key in doc:
                setattr(plan, key, int(doc[key]))
        if "recommendation_basis" in doc:
            plan.recommendation_basis = doc["recommendation_basis"]
        if "rewards" in doc:
            plan.rewards = RewardSchedule(**doc["rewards"])
        if "learner" in doc:
            plan.learner = LearnerHyper(**doc["learner"])
        return plan

    def env_config(self, n_agents: int, mode: Mode, seed: int) -> EnvConfig:
        mode = Mode.parse(mode)
        return EnvConfig(
            n_agents=n_agents,
            mode=mode,
            max_steps=self.max_steps,
            rewards=self.rewards,
            blacklist=BlacklistConfig(
                refusal_threshold=self.blacklist_threshold,
                duration=self.blacklist_duration,
                enabled=mode is Mode.IMPOSED,
            ),
            seed=seed,
            recommendation_basis=self.recommendation_basis,
        )


def derive_seed(seed_base: int, n_agents: int, mode: Mode, run: int, stream: str = "train") -> int:
    """Stable 64-bit seed for one run of one cell (documented scheme)."""
    tag = f"{n_agents}|{Mode.parse(mode).value}|{run}|{stream}".encode()
    digest = hashlib.sha256(tag).digest()
    return (seed_base ^ int.from_bytes(digest[:8], "big")) % 2**64


# -- training ----------------------------------------------------------------


@dataclass
class TrainingResult:
    params: list[LearnerParams]
    log_rows: list[dict]
    env: NegotiationEnv


def _greedy_probe(
    config: EnvConfig,
    params: Sequence[LearnerParams],
    env: NegotiationEnv,
    episodes: int,
    rng: np.random.Generator,
) -> float:
    """Score the current joint policy as evaluation will see it.

    Plays greedy episodes on a clone of the training environment and
    returns the worst agent's mean return.  Maximizing the minimum
    respects every agent's own objective: a lopsided arrangement that
    parks one agent on permanent guard duty scores below mutual
    defection and is never selected.
    """
    probe_env = NegotiationEnv(config, rng=rng)
    probe_env.ledger = env.ledger.copy()
    probe_env.regulator = env.regulator.copy()
    probe_env.episode_index = env.episode_index
    policies = [LearnerPolicy(p, greedy=True) for p in params]
    totals = np.zeros(config.n_agents)
    for _ in range(episodes):
        probe_env.reset()
        if not probe_env.done:
            _play_episode(probe_env, policies, probe_env.episode_index)
        totals += probe_env.last_outcome.per_agent_return_undiscounted
    return float(np.min(totals / episodes))


def _rollout_block(
    env: NegotiationEnv,
    params: Sequence[LearnerParams],
    rngs: Sequence[np.random.Generator],
    block_episodes: int,
) -> tuple[list[list[EpisodeTrace]], int]:
    """Play one block of consecutive episodes with sampled actions.

    Returns one EpisodeTrace list per agent plus the env steps used.
    Excluded agents still get a trace (empty, with their exclusion
    return) so the block structure lines up across agents.
    """
    n = env.config.n_agents
    per_agent: list[list[EpisodeTrace]] = [[] for _ in range(n)]
    steps_used = 0
    for _ in range(block_episodes):
        observations = env.reset()
        traces = [EpisodeTrace() for _ in range(n)]
        while not env.done:
            actions = {}
            for i in env.active_agents:
                features = observations[i].to_vector()
                action = learner_act(params[i], observations[i], i, rng=rngs[i])
                traces[i].features.append(features)
                traces[i].bits.append(action.to_vector())
                actions[i] = action
            result = env.step(actions)
            steps_used += 1
            for i in actions:
                traces[i].rewards.append(result.rewards[i])
            observations = result.observations
        outcome = env.last_outcome
        for i in range(n):
            traces[i].total_return = outcome.per_agent_return_undiscounted[i]
            per_agent[i].append(traces[i])
    return per_agent, steps_used


def run_training(
    config: EnvConfig,
    budget_steps: int,
    seed: int,
    hyper: Optional[LearnerHyper] = None,
) -> TrainingResult:
    """Train all N policies concurrently in self-play.

    Stops at the first batch boundary at or past the step budget; a
    zero budget returns the all-zero initialization untouched.  After
    each update the joint policy is probed greedily on a clone of the
    environment and the checkpoint returned is the probe-best one, so
    a late exploration wobble cannot undo a good joint policy.
    """
    hyper = hyper or LearnerHyper()
    n = config.n_agents
    seq = np.random.SeedSequence(seed)
    children = seq.spawn(n + 2)
    env = NegotiationEnv(config, rng=np.random.default_rng(children[0]))
    rngs = [np.random.default_rng(child) for child in children[1 : n + 1]]
    probe_seq = children[n + 1]
    params = [
        LearnerParams.zeros(
            n,
            learning_rate=hyper.learning_rate,
            entropy_bonus=hyper.entropy_bonus,
            gamma=hyper.gamma,
            batch_episodes=hyper.batch_episodes,
            block_episodes=hyper.block_episodes,
        )
        for _ in range(n)
    ]
    blocks_per_batch = max(1, hyper.batch_episodes // hyper.block_episodes)

    log_rows: list[dict] = []
    steps_done = 0
    iteration = 0
    best_probe = -np.inf
    best_params: Optional[list[LearnerParams]] = None
    while steps_done < budget_steps:
        progress = min(1.0, steps_done / budget_steps)
        tau = hyper.temperature_start + progress * (
            hyper.temperature_end - hyper.temperature_start
        )
        for i in range(n):
            params[i].temperature = tau
            params[i].entropy_bonus = hyper.entropy_bonus * (1.0 - progress)
        batch: list[list[Block]] = [[] for _ in range(n)]
        for _ in range(blocks_per_batch):
            per_agent, used = _rollout_block(env, params, rngs, hyper.block_episodes)
            steps_done += used
            for i in range(n):
                batch[i].append(per_agent[i])
        mean_returns = []
        grad_norms = []
        for i in range(n):
            params[i], diag = learner_update(params[i], i, batch[i])
            mean_returns.append(diag["mean_return"])
            grad_norms.append(diag["grad_norm"])
        iteration += 1
        probe_return = _greedy_probe(
            config, params, env, hyper.probe_episodes, np.random.default_rng(probe_seq.spawn(1)[0])
        )
        if probe_return > best_probe:
            best_probe = probe_return
            best_params = [p.copy() for p in params]
        log_rows.append(
            {
                "iteration": iteration,
                "env_steps": steps_done,
                "mean_return": sum(mean_returns) / n,
                "grad_norm": sum(grad_norms) / n,
                "probe_return": probe_return,
            }
        )
    if best_params is None:
        best_params = params
    return TrainingResult(params=best_params, log_rows=log_rows, env=env)


# -- evaluation --------------------------------------------------------------


@dataclass
class EvalResult:
    rows: list[EpisodeMetrics]
    ledger: LedgerState
    final_savings: tuple[float, ...]


def make_policies(
    kind: str,
    config: EnvConfig,
    params_list: Optional[Sequence[LearnerParams]] = None,
    rng: Optional[np.random.Generator] = None,
) -> list[Policy]:
    """Build one policy object per agent: a scripted family by name or
    greedy learner policies from checkpoint parameters."""
    n = config.n_agents
    if kind == "cooperate":
        return [CooperatePolicy(n) for _ in range(n)]
    if kind == "defect":
        return [DefectPolicy(n) for _ in range(n)]
    if kind == "random":
        if rng is None:
            rng = np.random.default_rng(0)
        return [RandomPolicy(n, rng) for _ in range(n)]
    if kind == "learner":
        if params_list is None or len(params_list) != n:
            raise CheckpointError("learner evaluation needs one parameter set per agent")
        return [LearnerPolicy(p, greedy=True) for p in params_list]
    raise ValueError(f"unknown policy kind: {kind!r}")


def _play_episode(
    env: NegotiationEnv, policies: Sequence[Policy], episode_index: int
) -> tuple[tuple[float, ...], int, bool, Optional[int]]:
    """Run one episode to completion; the env must be freshly reset."""
    observations = {i: env.encode_observation(i) for i in range(env.config.n_agents)}
    for policy in policies:
        policy.begin_episode(episode_index)
    while not env.done:
        actions = {i: policies[i].act(observations[i], i) for i in env.active_agents}
        result = env.step(actions)
        observations = result.observations
    outcome = env.last_outcome
    return (
        outcome.per_agent_return_undiscounted,
        outcome.steps_taken,
        outcome.success,
        outcome.on_guard,
    )


def _replay_episode(
    config: EnvConfig,
    ledger_snapshot: LedgerState,
    regulator_snapshot: RegulatorState,
    episode_index: int,
    policies: Sequence[Policy],
    rng: np.random.Generator,
) -> tuple[float, ...]:
    """Counterfactually replay one episode from its start state.

    The replay env is discarded afterwards, so ledger and regulator
    side effects never leak back into the evaluation stream.
    """
    env = NegotiationEnv(config, rng=rng)
    env.ledger = ledger_snapshot.copy()
    env.regulator = regulator_snapshot.copy()
    env.episode_index = episode_index
    env.reset()
    if env.done:
        return env.last_outcome.per_agent_return_undiscounted
    returns, _, _, _ = _play_episode(env, policies, episode_index)
    return returns


def run_evaluation(
    config: EnvConfig,
    policies: Sequence[Policy],
    episodes: int,
    seed: int,
    run: int = 0,
    counterfactuals: bool = True,
) -> EvalResult:
    """Greedy evaluation campaign with per-episode counterfactual
    replays for the safety and incentive-compatibility scores.

    The environment (hence the savings ledger) starts fresh, so the
    fairness index reads cumulative savings since evaluation start.
    """
    seq = np.random.SeedSequence(seed)
    env_seed, replay_seq = seq.spawn(2)
    env = NegotiationEnv(config, rng=np.random.default_rng(env_seed))
    replay_rng = np.random.default_rng(replay_seq)
    payoffs = payoff_matrix(
        o=config.rewards.r_found, a=config.rewards.r_fail, g=config.rewards.r_on_guard
    )
    defectors = [DefectPolicy(config.n_agents) for _ in range(config.n_agents)]

    rows: list[EpisodeMetrics] = []
    for episode in range(episodes):
        ledger_snap = env.ledger.copy()
        regulator_snap = env.regulator.copy()
        episode_index = env.episode_index
        env.reset()
        active = tuple(env.active_agents)

        if env.done:
            savings = env.ledger.saved
            rows.append(
                EpisodeMetrics(
                    n_agents=config.n_agents,
                    mode=config.mode,
                    run=run,
                    episode=episode + 1,
                    active=active,
                    efficiency=0.0,
                    safety_values=(),
                    ic_values=(),
                    jain=jain(savings, active) if active else 0.0,
                    jain_degenerate=all(savings[i] == 0.0 for i in active) if active else True,
                    steps_taken=0,
                    success=False,
                    on_guard=None,
                    degenerate=True,
                )
            )
            continue

        returns, steps_taken, success, on_guard = _play_episode(env, policies, episode_index)
        base = baselines(len(active), config.rewards, config.max_steps)
        e_value = efficiency([returns[i] for i in active], base)

        sf_values: list[float] = []
        ic_values: list[float] = []
        if counterfactuals:
            all_defect_returns = _replay_episode(
                config, ledger_snap, regulator_snap, episode_index, defectors, replay_rng
            )
            for i in active:
                lone = list(defectors)
                lone[i] = policies[i]
                lone_returns = _replay_episode(
                    config, ledger_snap, regulator_snap, episode_index, lone, replay_rng
                )
                sf_values.append(safety(lone_returns[i], all_defect_returns[i], payoffs))

                drop_out = list(policies)
                drop_out[i] = defectors[i]
                drop_returns = _replay_episode(
                    config, ledger_snap, regulator_snap, episode_index, drop_out, replay_rng
                )
                ic_values.append(incentive_compatibility(returns[i], drop_returns[i], payoffs))

        savings = env.ledger.saved
        rows.append(
            EpisodeMetrics(
                n_agents=config.n_agents,
                mode=config.mode,
                run=run,
                episode=episode + 1,
                active=active,
                efficiency=e_value,
                safety_values=tuple(sf_values),
                ic_values=tuple(ic_values),
                jain=jain(savings, active),
                jain_degenerate=all(savings[i] == 0.0 for i in active),
                steps_taken=steps_taken,
                success=success,
                on_guard=on_guard,
                degenerate=False,
            )
        )
    return EvalResult(rows=rows, ledger=env.ledger, final_savings=tuple(env.ledger.saved))


# -- file outputs ------------------------------------------------------------


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    return f"{value:.6f}"


def episodes_csv_text(rows: Sequence[EpisodeMetrics]) -> str:
    lines = ["n_agents,mode,run,episode,E,Sf_mean,IC_mean,J"]
    for row in rows:
        lines.append(
            ",".join(
                [
                    str(row.n_agents),
                    row.mode.value,
                    str(row.run),
                    str(row.episode),
                    _fmt(row.efficiency),
                    _fmt(row.safety_mean),
                    _fmt(row.ic_mean),
                    _fmt(row.jain),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def aggregate_csv_text(cells: Sequence[AggregateCell]) -> str:
    lines = ["n_agents,mode,episodes,E_mean,E_std,Sf_mean,Sf_std,IC_mean,IC_std,J_mean,J_std"]
    for cell in cells:
        lines.append(
            ",".join(
                [
                    str(cell.n_agents),
                    cell.mode.value,
                    str(cell.episodes),
                    _fmt(cell.e_mean),
                    _fmt(cell.e_std),
                    _fmt(cell.sf_mean),
                    _fmt(cell.sf_std),
                    _fmt(cell.ic_mean),
                    _fmt(cell.ic_std),
                    _fmt(cell.j_mean),
                    _fmt(cell.j_std),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def radar_csv_text(cells: Sequence[AggregateCell], n_agents: int) -> str:
    """Radar-chart data for one agent count: one row per metric, one
    column per mode present in the aggregate."""
    present = [c for c in cells if c.n_agents == n_agents]
    modes = sorted({c.mode for c in present}, key=lambda m: "FRI".index(m.value))
    by_mode = {c.mode: c for c in present}
    lines = ["metric," + ",".join(m.value for m in modes)]
    for metric, attr in (("E", "e_mean"), ("Sf", "sf_mean"), ("IC", "ic_mean"), ("J", "j_mean")):
        values = [_fmt(getattr(by_mode[m], attr)) for m in modes]
        lines.append(",".join([metric] + values))
    return "\n".join(lines) + "\n"


def training_log_csv_text(log_rows: Sequence[dict]) -> str:
    lines = ["iteration,env_steps,mean_return,grad_norm,probe_return"]
    for row in log_rows:
        lines.append(
            f"{row['iteration']},{row['env_steps']},{row['mean_return']:.6f},"
            f"{row['grad_norm']:.6f},{row['probe_return']:.6f}"
        )
    return "\n".join(lines) + "\n"


# -- grid driver -------------------------------------------------------------


def run_cell(
    plan: ExperimentPlan, n_agents: int, mode: Mode, out_dir: Optional[Path] = None
) -> list[EpisodeMetrics]:
    """Train and evaluate every run of one (N, mode) cell."""
    rows: list[EpisodeMetrics] = []
    for run in range(plan.runs_per_cell):
        train_seed = derive_seed(plan.seed_base, n_agents, mode, run, "train")
        eval_seed = derive_seed(plan.seed_base, n_agents, mode, run, "eval")
        config = plan.env_config(n_agents, mode, train_seed)
        result = run_training(config, plan.train_step_budget, train_seed, plan.learner)
        policies = make_policies("learner", config, result.params)
        eval_result = run_evaluation(config, policies, plan.eval_episodes, eval_seed, run=run)
        rows.extend(eval_result.rows)
        if out_dir is not None:
            run_dir = Path(out_dir) / f"cell_N{n_agents}_{mode.value}" / f"run{run}"
            run_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(run_dir / "checkpoint.json", mode, result.params)
            atomic_write_text(run_dir / "training_log.csv", training_log_csv_text(result.log_rows))
            eval_result.ledger.write_csv(run_dir / "ledger.csv")
    return rows


def run_grid(plan: ExperimentPlan, out_dir) -> dict:
    """Run the whole plan and write all output files.

    Returns the summary dict (also written as summary.json).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_rows: list[EpisodeMetrics] = []
    completed: list[list] = []
    failed: list[list] = []
    for n_agents, mode in plan.grid:
        try:
            rows = run_cell(plan, n_agents, mode, out)
            all_rows.extend(rows)
            completed.append([n_agents, mode.value])
        except GuardsimError as exc:
            failed.append([n_agents, mode.value, str(exc)])
    cells = aggregate_cells(all_rows)
    atomic_write_text(out / "episodes.csv", episodes_csv_text(all_rows))
    atomic_write_text(out / "aggregate.csv", aggregate_csv_text(cells))
    for n_agents in sorted({n for n, _ in plan.grid}):
        atomic_write_text(out / f"radar_N{n_agents}.csv", radar_csv_text(cells, n_agents))
    summary = {
        "partial": bool(failed),
        "completed_cells": completed,
        "failed_cells": failed,
        "runs_per_cell": plan.runs_per_cell,
        "eval_episodes": plan.eval_episodes,
        "train_step_budget": plan.train_step_budget,
        "seed_base": plan.seed_base,
    }
    atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary

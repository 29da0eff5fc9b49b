"""Command-line entry point: payoffs, train, eval, grid, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .env import EnvConfig
from .harness import (
    ExperimentPlan,
    LearnerHyper,
    aggregate_cells,
    aggregate_csv_text,
    atomic_write_text,
    derive_seed,
    episodes_csv_text,
    make_policies,
    run_evaluation,
    run_grid,
    run_training,
    training_log_csv_text,
)
from .metrics import payoff_matrix
from .policies import load_checkpoint, save_checkpoint
from .regulator import BlacklistConfig
from .types import Mode
from .wire import serve_stdio, serve_tcp


@click.group()
def main():
    """Inter-operator on-guard negotiation simulator."""


def _env_options(fn):
    fn = click.option("--agents", "n_agents", type=int, default=3, show_default=True)(fn)
    fn = click.option(
        "--mode",
        "mode",
        type=click.Choice(["F", "R", "I"], case_sensitive=False),
        default="I",
        show_default=True,
        help="Service mode: free, recommended or imposed.",
    )(fn)
    fn = click.option("--max-steps", type=int, default=10, show_default=True)(fn)
    fn = click.option("--blacklist-m", type=int, default=3, show_default=True,
                      help="Refusals before temporary exclusion (imposed mode).")(fn)
    fn = click.option("--blacklist-duration", type=int, default=5, show_default=True,
                      help="Exclusion length in episodes.")(fn)
    fn = click.option("--no-blacklist", is_flag=True, default=False,
                      help="Disable blacklisting even in imposed mode.")(fn)
    return fn


def _build_config(n_agents, mode, max_steps, blacklist_m, blacklist_duration, no_blacklist, seed):
    mode = Mode.parse(mode)
    return EnvConfig(
        n_agents=n_agents,
        mode=mode,
        max_steps=max_steps,
        blacklist=BlacklistConfig(
            refusal_threshold=blacklist_m,
            duration=blacklist_duration,
            enabled=(mode is Mode.IMPOSED) and not no_blacklist,
        ),
        seed=seed,
    )


@main.command()
@click.option("--o", "o", type=float, default=-0.01, show_default=True, help="Cost of an off period.")
@click.option("--a", "a", type=float, default=-0.90, show_default=True, help="Cost of an active-alone period.")
@click.option("--g", "g", type=float, default=-1.00, show_default=True, help="Cost of an on-guard period.")
def payoffs(o, a, g):
    """Print the two-cycle payoff matrix and its dilemma properties."""
    pm = payoff_matrix(o, a, g)
    click.echo(f"T = {pm.t!r}")
    click.echo(f"R = {pm.r!r}")
    click.echo(f"P = {pm.p!r}")
    click.echo(f"S = {pm.s!r}")
    click.echo(f"T > R > P > S: {pm.is_prisoners_dilemma()}")
    click.echo(f"2R = T + S: {pm.is_boundary_case()}")
    click.echo(f"normalization amplitude (T - P): {pm.amplitude!r}")
    if not pm.is_prisoners_dilemma():
        sys.exit(1)


def _hyper_options(fn):
    fn = click.option("--lr", type=float, default=LearnerHyper.learning_rate, show_default=True)(fn)
    fn = click.option("--entropy", type=float, default=LearnerHyper.entropy_bonus, show_default=True)(fn)
    fn = click.option("--gamma", type=float, default=LearnerHyper.gamma, show_default=True)(fn)
    fn = click.option("--batch-episodes", type=int, default=LearnerHyper.batch_episodes, show_default=True)(fn)
    fn = click.option("--block-episodes", type=int, default=LearnerHyper.block_episodes, show_default=True)(fn)
    return fn


@main.command()
@_env_options
@_hyper_options
@click.option("--steps", type=int, required=True, help="Environment step budget.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
def train(n_agents, mode, max_steps, blacklist_m, blacklist_duration, no_blacklist,
          lr, entropy, gamma, batch_episodes, block_episodes, steps, seed, out_dir):
    """Train N self-play learner policies and write a checkpoint."""
    config = _build_config(n_agents, mode, max_steps, blacklist_m, blacklist_duration,
                           no_blacklist, seed)
    hyper = LearnerHyper(learning_rate=lr, entropy_bonus=entropy, gamma=gamma,
                         batch_episodes=batch_episodes, block_episodes=block_episodes)
    result = run_training(config, steps, seed, hyper)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint.json", config.mode, result.params)
    atomic_write_text(out_dir / "training_log.csv", training_log_csv_text(result.log_rows))
    result.env.ledger.write_csv(out_dir / "ledger.csv")
    final = result.log_rows[-1]["mean_return"] if result.log_rows else float("nan")
    click.echo(f"trained {steps} steps; final mean return {final:.4f}")
    click.echo(f"checkpoint: {out_dir / 'checkpoint.json'}")


@main.command("eval")
@_env_options
@click.option("--checkpoint", "checkpoint_path", required=True,
              help="Checkpoint JSON path, or one of: cooperate, defect, random.")
@click.option("--episodes", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
def eval_cmd(n_agents, mode, max_steps, blacklist_m, blacklist_duration, no_blacklist,
             checkpoint_path, episodes, seed, out_dir):
    """Evaluate a checkpoint (or scripted policies) for N episodes."""
    if checkpoint_path in ("cooperate", "defect", "random"):
        config = _build_config(n_agents, mode, max_steps, blacklist_m, blacklist_duration,
                               no_blacklist, seed)
        policies = make_policies(checkpoint_path, config,
                                 rng=np.random.default_rng(seed))
    else:
        ckpt_agents, ckpt_mode, params = load_checkpoint(checkpoint_path)
        config = _build_config(ckpt_agents, ckpt_mode, max_steps, blacklist_m,
                               blacklist_duration, no_blacklist, seed)
        policies = make_policies("learner", config, params)
    result = run_evaluation(config, policies, episodes, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "episodes.csv", episodes_csv_text(result.rows))
    result.ledger.write_csv(out_dir / "ledger.csv")
    cells = aggregate_cells(result.rows)
    atomic_write_text(out_dir / "aggregate.csv", aggregate_csv_text(cells))
    for cell in cells:
        click.echo(
            f"N={cell.n_agents} mode={cell.mode.value}: "
            f"E {cell.e_mean:.3f}±{cell.e_std:.3f}  Sf {cell.sf_mean:.3f}±{cell.sf_std:.3f}  "
            f"IC {cell.ic_mean:.3f}±{cell.ic_std:.3f}  J {cell.j_mean:.3f}±{cell.j_std:.3f}"
        )


@main.command()
@click.option("--plan", "plan_path", type=click.Path(path_type=Path), required=True,
              help="JSON plan file (grid, runs_per_cell, eval_episodes, ...).")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
def grid(plan_path, out_dir):
    """Run a whole experiment grid from a plan file."""
    plan = ExperimentPlan.from_json(plan_path)
    summary = run_grid(plan, out_dir)
    status = "partial" if summary["partial"] else "complete"
    click.echo(f"grid {status}: {len(summary['completed_cells'])} cells -> {out_dir}")


@main.command()
@click.option("--mode", "transport", type=click.Choice(["stdio", "tcp"]), default="stdio",
              show_default=True, help="Transport to serve on.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=7421, show_default=True)
@click.option("--agents", "n_agents", type=int, default=3, show_default=True)
@click.option("--env-mode", "env_mode", type=click.Choice(["F", "R", "I"], case_sensitive=False),
              default="I", show_default=True)
@click.option("--max-steps", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def serve(transport, host, port, n_agents, env_mode, max_steps, seed):
    """Serve the environment over the newline-delimited JSON protocol."""
    base = EnvConfig(n_agents=n_agents, mode=Mode.parse(env_mode), max_steps=max_steps, seed=seed)
    if transport == "stdio":
        serve_stdio(base)
    else:
        server = serve_tcp(base, host, port)
        click.echo(f"listening on {server.server_address[0]}:{server.server_address[1]}",
                   err=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            server.shutdown()


if __name__ == "__main__":
    main()

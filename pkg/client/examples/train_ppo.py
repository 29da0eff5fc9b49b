"""Train a PPO agent against the negotiation server over the wire.

All agents share one actor-critic network (parameter sharing is the
standard trick for symmetric multi-agent games); each agent still acts
on its own observation, with its own self-bits masked out.  Advantages
are computed on the team-mean reward (cooperative formulation): a lone
per-episode view makes refusing guard duty marginally dominant, which
is the social dilemma itself, not a trainable objective for a short
smoke run.  The server runs as a subprocess speaking the stdio
protocol, so this script exercises exactly the surface an external
trainer would use.

Usage:
    python train_ppo.py --steps 20000 --seed 1 --out runs/ppo
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np
import torch
from torch import nn

from guardsim_client import GuardEnv, default_server_command


class ActorCritic(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden: int = 64):
        super().__init__()
        self.body = nn.Sequential(
            nn.Linear(obs_dim, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
        )
        self.policy_head = nn.Linear(hidden, act_dim)
        self.value_head = nn.Linear(hidden, 1)

    def forward(self, obs: torch.Tensor, mask: torch.Tensor):
        h = self.body(obs)
        logits = self.policy_head(h)
        # Self-bits are forced to (numerically) zero probability.
        logits = torch.where(mask, logits, torch.full_like(logits, -30.0))
        return logits, self.value_head(h).squeeze(-1)


def agent_masks(n_agents: int) -> torch.Tensor:
    masks = torch.ones(n_agents, 2 * n_agents, dtype=torch.bool)
    for i in range(n_agents):
        masks[i, i] = False
        masks[i, n_agents + i] = False
    return masks


class RolloutBuffer:
    def __init__(self):
        self.obs, self.masks, self.actions = [], [], []
        self.log_probs, self.values, self.rewards, self.dones = [], [], [], []

    def __len__(self):
        return len(self.obs)

    def add(self, obs, mask, action, log_prob, value, reward, done):
        self.obs.append(obs)
        self.masks.append(mask)
        self.actions.append(action)
        self.log_probs.append(log_prob)
        self.values.append(value)
        self.rewards.append(reward)
        self.dones.append(done)

    def compute_advantages(self, gamma: float, lam: float):
        # Buffers only ever contain whole episodes, so no bootstrap term.
        n = len(self.rewards)
        advantages = np.zeros(n, dtype=np.float64)
        gae = 0.0
        next_value = 0.0
        for t in range(n - 1, -1, -1):
            if self.dones[t]:
                gae = 0.0
                next_value = 0.0
            delta = self.rewards[t] + gamma * next_value - self.values[t]
            gae = delta + gamma * lam * gae
            advantages[t] = gae
            next_value = self.values[t]
        returns = advantages + np.asarray(self.values)
        return advantages, returns


def ppo_update(model, optimizer, buffer, args):
    obs = torch.tensor(np.asarray(buffer.obs), dtype=torch.float32)
    masks = torch.stack(buffer.masks)
    actions = torch.tensor(np.asarray(buffer.actions), dtype=torch.float32)
    old_log_probs = torch.tensor(np.asarray(buffer.log_probs), dtype=torch.float32)
    advantages, returns = buffer.compute_advantages(args.gamma, args.gae_lambda)
    advantages = torch.tensor(advantages, dtype=torch.float32)
    returns = torch.tensor(returns, dtype=torch.float32)
    if advantages.std() > 1e-8:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    n = len(buffer)
    indices = np.arange(n)
    for _ in range(args.epochs):
        np.random.shuffle(indices)
        for start in range(0, n, args.minibatch):
            batch = indices[start : start + args.minibatch]
            logits, values = model(obs[batch], masks[batch])
            dist = torch.distributions.Bernoulli(logits=logits)
            log_probs = (dist.log_prob(actions[batch]) * masks[batch]).sum(-1)
            entropy = (dist.entropy() * masks[batch]).sum(-1).mean()
            ratio = torch.exp(log_probs - old_log_probs[batch])
            adv = advantages[batch]
            surrogate = torch.min(
                ratio * adv,
                torch.clamp(ratio, 1 - args.clip, 1 + args.clip) * adv,
            ).mean()
            value_loss = ((values - returns[batch]) ** 2).mean()
            loss = -surrogate + args.value_coef * value_loss - args.entropy_coef * entropy
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), 0.5)
            optimizer.step()


def run(args) -> dict:
    torch.manual_seed(args.seed)
    np.random.seed(args.seed)
    torch.set_num_threads(1)

    command = default_server_command(
        ["--agents", str(args.agents), "--env-mode", args.env_mode]
    )
    env = GuardEnv(command)
    n = env.n_agents
    masks = agent_masks(n)
    model = ActorCritic(env.observation_length, env.action_length)
    optimizer = torch.optim.Adam(model.parameters(), lr=args.lr)

    buffer = RolloutBuffer()
    episode_log: list[tuple[int, float]] = []
    protocol_errors = 0
    env_steps = 0
    episode_index = 0

    observations = env.reset(seed=args.seed)
    while env_steps < args.steps:
        if env.done:  # degenerate episode straight from reset
            outcome = env.last_info.get("outcome") or {}
            returns = outcome.get("per_agent_return", [0.0] * n)
            episode_log.append((env_steps, float(np.mean(returns))))
            episode_index += 1
            observations = env.reset()
            continue

        active = env.active_agents(observations)
        step_records = {}
        actions = {}
        with torch.no_grad():
            for agent in active:
                obs_t = torch.tensor(observations[agent], dtype=torch.float32)
                logits, value = model(obs_t, masks[agent])
                dist = torch.distributions.Bernoulli(logits=logits)
                bits = dist.sample()
                log_prob = float((dist.log_prob(bits) * masks[agent]).sum())
                actions[agent] = bits.numpy()
                step_records[agent] = (observations[agent], bits.numpy(), log_prob, float(value))
        observations, rewards, dones, info = env.step(actions)
        env_steps += 1
        done = dones[0]
        team_reward = float(np.mean(list(rewards.values())))
        for agent in active:
            obs_a, bits_a, logp_a, value_a = step_records[agent]
            buffer.add(obs_a, masks[agent], bits_a, logp_a, value_a, team_reward, done)

        if done:
            outcome = info.get("outcome") or {}
            returns = outcome.get("per_agent_return", [0.0] * n)
            episode_log.append((env_steps, float(np.mean(returns))))
            episode_index += 1
            if len(buffer) >= args.rollout:
                ppo_update(model, optimizer, buffer, args)
                buffer = RolloutBuffer()
            if env_steps < args.steps:
                observations = env.reset()
            if args.log_every and episode_index % args.log_every == 0:
                recent = [r for _, r in episode_log[-50:]]
                print(
                    f"steps {env_steps:>7}  episodes {episode_index:>5}  "
                    f"mean return (last 50) {np.mean(recent):+.3f}",
                    flush=True,
                )
    env.close()

    summary = {
        "env_steps": env_steps,
        "episodes": episode_index,
        "protocol_errors": protocol_errors,
        "episode_log": episode_log,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "returns.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["env_step", "mean_return"])
            writer.writerows(episode_log)
        torch.save(model.state_dict(), out / "policy.pt")
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=20_000)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--agents", type=int, default=3)
    parser.add_argument("--env-mode", default="I", choices=["F", "R", "I"])
    parser.add_argument("--rollout", type=int, default=512)
    parser.add_argument("--lr", type=float, default=3e-4)
    parser.add_argument("--gamma", type=float, default=0.99)
    parser.add_argument("--gae-lambda", type=float, default=0.95)
    parser.add_argument("--clip", type=float, default=0.2)
    parser.add_argument("--epochs", type=int, default=4)
    parser.add_argument("--minibatch", type=int, default=256)
    parser.add_argument("--value-coef", type=float, default=0.5)
    parser.add_argument("--entropy-coef", type=float, default=0.01)
    parser.add_argument("--out", default=None)
    parser.add_argument("--log-every", type=int, default=100)
    return parser


def main(argv=None) -> dict:
    args = build_parser().parse_args(argv)
    summary = run(args)
    print(
        f"done: {summary['env_steps']} env steps, {summary['episodes']} episodes, "
        f"{summary['protocol_errors']} protocol errors"
    )
    return summary


if __name__ == "__main__":
    main()

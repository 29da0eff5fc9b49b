"""Newline-delimited JSON protocol serving the environment to external
trainers over stdio or TCP.

One environment per connection, requests answered strictly in order,
protocol version "guardsim/1".  An erroneous request never advances
environment state.  Message kinds:

  -> {"kind": "hello", "version": "guardsim/1", "config": {...}}
  <- {"kind": "spec", ...}
  -> {"kind": "reset", "seed": 123}
  <- {"kind": "obs", "obs": {...}}          (+ done/outcome if degenerate)
  -> {"kind": "step", "actions": {"0": {"offers": [...], "demands": [...]}}}
  <- {"kind": "transition", "obs": ..., "rewards": ..., "done": ..., ...}
  -> {"kind": "close"}                       (no response; session ends)

Error responses: {"kind": "error", "code": ..., "message": ...} with
codes BAD_REQUEST, BAD_ACTION and EPISODE_DONE.
"""

from __future__ import annotations

import json
import socketserver
import sys
from typing import Optional

from .env import EnvConfig, NegotiationEnv
from .errors import MalformedActionError
from .regulator import BlacklistConfig
from .types import AgentAction, EpisodeOutcome, Mode, Observation, RewardSchedule

PROTOCOL_VERSION = "guardsim/1"

BAD_REQUEST = "BAD_REQUEST"
BAD_ACTION = "BAD_ACTION"
EPISODE_DONE = "EPISODE_DONE"


def _error(code: str, message: str) -> dict:
    return {"kind": "error", "code": code, "message": message}


def _config_from_payload(payload: dict, base: EnvConfig) -> EnvConfig:
    """Apply hello-time overrides on top of the server's base config."""
    overrides = payload.get("config") or {}
    if not isinstance(overrides, dict):
        raise ValueError("config must be an object")
    n_agents = int(overrides.get("n_agents", base.n_agents))
    mode = Mode.parse(overrides.get("mode", base.mode))
    max_steps = int(overrides.get("max_steps", base.max_steps))
    rewards = base.rewards
    if "rewards" in overrides:
        rewards = RewardSchedule(**overrides["rewards"])
    if "blacklist" in overrides:
        bl = overrides["blacklist"]
        blacklist = BlacklistConfig(
            refusal_threshold=int(bl.get("refusal_threshold", 3)),
            duration=int(bl.get("duration", 5)),
            enabled=bool(bl.get("enabled", mode is Mode.IMPOSED)),
        )
    else:
        blacklist = BlacklistConfig(
            refusal_threshold=base.blacklist.refusal_threshold,
            duration=base.blacklist.duration,
            enabled=base.blacklist.enabled if mode is base.mode else mode is Mode.IMPOSED,
        )
    return EnvConfig(
        n_agents=n_agents,
        mode=mode,
        max_steps=max_steps,
        rewards=rewards,
        blacklist=blacklist,
        seed=int(overrides.get("seed", base.seed)),
        recommendation_basis=overrides.get("recommendation_basis", base.recommendation_basis),
    )


def _spec_payload(config: EnvConfig) -> dict:
    return {
        "kind": "spec",
        "version": PROTOCOL_VERSION,
        "n_agents": config.n_agents,
        "mode": config.mode.value,
        "max_steps": config.max_steps,
        "action_length": 2 * config.n_agents,
        "observation_length": Observation.vector_length(config.n_agents),
        "rewards": {
            "r_on_guard": config.rewards.r_on_guard,
            "r_found": config.rewards.r_found,
            "r_fail": config.rewards.r_fail,
            "r_step": config.rewards.r_step,
        },
    }


def _obs_payload(observations: dict[int, Observation]) -> dict:
    return {
        str(agent_id): {
            "offers_to_me": list(obs.offers_to_me),
            "demands_to_me": list(obs.demands_to_me),
            "recommended_onehot": list(obs.recommended_id_onehot),
            "i_am_recommended": obs.i_am_recommended,
            "i_am_blacklisted": obs.i_am_blacklisted,
        }
        for agent_id, obs in observations.items()
    }


def _outcome_payload(outcome: EpisodeOutcome) -> dict:
    return {
        "kind": outcome.kind.value,
        "on_guard": outcome.on_guard,
        "served": sorted(outcome.served),
        "steps_taken": outcome.steps_taken,
        "per_agent_return": list(outcome.per_agent_return_undiscounted),
        "degenerate": outcome.degenerate,
    }


class WireSession:
    """Protocol state machine for one connection."""

    def __init__(self, base_config: EnvConfig):
        self.base_config = base_config
        self.env: Optional[NegotiationEnv] = None
        self.closed = False

    def handle_line(self, line: str) -> Optional[dict]:
        """Process one request line; None means the session is over."""
        line = line.strip()
        if not line:
            return _error(BAD_REQUEST, "empty request")
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            return _error(BAD_REQUEST, f"malformed JSON: {exc}")
        if not isinstance(request, dict):
            return _error(BAD_REQUEST, "request must be a JSON object")
        kind = request.get("kind")
        if kind == "hello":
            return self._handle_hello(request)
        if kind == "close":
            self.closed = True
            return None
        if self.env is None:
            return _error(BAD_REQUEST, "hello required before any other request")
        if kind == "reset":
            return self._handle_reset(request)
        if kind == "step":
            return self._handle_step(request)
        return _error(BAD_REQUEST, f"unknown request kind: {kind!r}")

    def _handle_hello(self, request: dict) -> dict:
        version = request.get("version", PROTOCOL_VERSION)
        if version != PROTOCOL_VERSION:
            return _error(
                BAD_REQUEST,
                f"unsupported protocol version {version!r}; this server speaks {PROTOCOL_VERSION}",
            )
        try:
            config = _config_from_payload(request, self.base_config)
        except (ValueError, TypeError) as exc:
            return _error(BAD_REQUEST, f"bad config: {exc}")
        self.env = NegotiationEnv(config)
        return _spec_payload(config)

    def _handle_reset(self, request: dict) -> dict:
        seed = request.get("seed")
        if seed is not None:
            try:
                seed = int(seed)
            except (TypeError, ValueError):
                return _error(BAD_REQUEST, "seed must be an integer")
        observations = self.env.reset(seed=seed)
        response = {"kind": "obs", "obs": _obs_payload(observations)}
        if self.env.done:
            response["done"] = True
            response["outcome"] = _outcome_payload(self.env.last_outcome)
        return response

    def _handle_step(self, request: dict) -> dict:
        if self.env.done:
            return _error(EPISODE_DONE, "episode is done; send reset")
        raw = request.get("actions")
        if not isinstance(raw, dict):
            return _error(BAD_REQUEST, "step requires an actions object")
        n = self.env.config.n_agents
        actions: dict[int, AgentAction] = {}
        try:
            for key, value in raw.items():
                agent_id = int(key)
                if not isinstance(value, dict):
                    raise MalformedActionError(f"agent {key}: action must be an object")
                actions[agent_id] = AgentAction.from_bits(
                    n, value.get("offers", ()), value.get("demands", ())
                )
            result = self.env.step(actions)
        except MalformedActionError as exc:
            return _error(BAD_ACTION, str(exc))
        except (TypeError, ValueError) as exc:
            return _error(BAD_ACTION, f"unparseable action: {exc}")
        response = {
            "kind": "transition",
            "obs": _obs_payload(result.observations),
            "rewards": {str(i): r for i, r in result.rewards.items()},
            "done": result.done,
            "info": {
                "step": result.info["step"],
                "offers_filtered": list(result.info["offers_filtered"]),
            },
        }
        if result.outcome is not None:
            response["outcome"] = _outcome_payload(result.outcome)
        return response


def serve_stdio(base_config: EnvConfig, stdin=None, stdout=None) -> None:
    """Serve one session over stdin/stdout until close or EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    session = WireSession(base_config)
    for line in stdin:
        response = session.handle_line(line)
        if response is None:
            break
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()


def serve_tcp(base_config: EnvConfig, host: str = "127.0.0.1", port: int = 0):
    """Serve one session per TCP connection; returns the bound server.

    Call ``serve_forever()`` on the returned object (the CLI does), or
    drive it from tests with ``handle_request()``.
    """

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            session = WireSession(base_config)
            for raw in self.rfile:
                response = session.handle_line(raw.decode("utf-8"))
                if response is None:
                    break
                self.wfile.write((json.dumps(response) + "\n").encode("utf-8"))
                self.wfile.flush()

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    return Server((host, port), Handler)

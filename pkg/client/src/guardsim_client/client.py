"""Client adapter exposing the guardsim wire protocol as a standard
multi-agent environment API.

The client talks newline-delimited JSON to a server reached either over
TCP ("tcp:HOST:PORT") or a spawned subprocess speaking the protocol on
its stdio.  Observations come back as flat binary vectors of length
3N+2 per agent, in the fixed order

    offers_to_me ++ demands_to_me ++ recommended_onehot
    ++ [i_am_recommended] ++ [i_am_blacklisted]

and actions are flat length-2N vectors (offers then demands).
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
import sys
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

PROTOCOL_VERSION = "guardsim/1"


class ClientError(Exception):
    """Base class for client-side failures."""


class TransportError(ClientError):
    """Connection failed, closed early, or timed out."""


class VersionMismatchError(ClientError):
    """Server does not speak the protocol version we expect."""


class ProtocolError(ClientError):
    """Server answered with an error or an unexpected message kind."""


class ActionRejectedError(ProtocolError):
    """Server rejected the submitted actions; episode state unchanged."""


class EpisodeDoneError(ProtocolError):
    """step() was called on a finished episode."""


@dataclass
class EnvClientConfig:
    """How to reach the server and what to ask of it.

    ``endpoint`` is either "tcp:HOST:PORT" or a subprocess command
    (string or argv list).  ``env_config`` is forwarded verbatim in the
    hello message (n_agents, mode, max_steps, seed, ...).
    """

    endpoint: Union[str, Sequence[str]]
    connect_timeout: float = 10.0
    expected_version: str = PROTOCOL_VERSION
    env_config: Optional[dict] = field(default=None)


def default_server_command(extra_args: Sequence[str] = ()) -> list[str]:
    """Command that serves the environment from this interpreter's
    guardsim installation over stdio."""
    return [sys.executable, "-m", "guardsim", "serve", "--mode", "stdio", *extra_args]


class _SubprocessTransport:
    def __init__(self, command: Sequence[str]):
        try:
            self.proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise TransportError(f"cannot spawn server {command!r}: {exc}") from exc

    def send_line(self, line: str) -> None:
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"server pipe closed: {exc}") from exc

    def recv_line(self) -> str:
        line = self.proc.stdout.readline()
        if not line:
            raise TransportError("server closed the connection")
        return line

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class _TcpTransport:
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self.sock.settimeout(timeout)
        self.fh = self.sock.makefile("rw", encoding="utf-8", newline="\n")

    def send_line(self, line: str) -> None:
        try:
            self.fh.write(line + "\n")
            self.fh.flush()
        except OSError as exc:
            raise TransportError(f"socket write failed: {exc}") from exc

    def recv_line(self) -> str:
        try:
            line = self.fh.readline()
        except OSError as exc:
            raise TransportError(f"socket read failed: {exc}") from exc
        if not line:
            raise TransportError("server closed the connection")
        return line

    def close(self) -> None:
        try:
            self.fh.close()
        finally:
            self.sock.close()


def _open_transport(config: EnvClientConfig):
    endpoint = config.endpoint
    if isinstance(endpoint, str) and endpoint.startswith("tcp:"):
        _, host, port = endpoint.split(":")
        return _TcpTransport(host, int(port), config.connect_timeout)
    command = shlex.split(endpoint) if isinstance(endpoint, str) else list(endpoint)
    return _SubprocessTransport(command)


# -- encoding helpers --------------------------------------------------------


def flatten_observation(payload: Mapping, n_agents: int) -> np.ndarray:
    """Wire observation object -> flat vector of length 3N+2."""
    vec = np.concatenate(
        [
            np.asarray(payload["offers_to_me"], dtype=np.float64),
            np.asarray(payload["demands_to_me"], dtype=np.float64),
            np.asarray(payload["recommended_onehot"], dtype=np.float64),
            [float(payload["i_am_recommended"]), float(payload["i_am_blacklisted"])],
        ]
    )
    if vec.shape != (3 * n_agents + 2,):
        raise ProtocolError(f"observation has wrong length {vec.shape}")
    return vec


def unflatten_observation(vector: np.ndarray, n_agents: int) -> dict:
    """Inverse of flatten_observation (round-trip fidelity helper)."""
    n = n_agents
    vec = np.asarray(vector)
    return {
        "offers_to_me": [int(b) for b in vec[:n]],
        "demands_to_me": [int(b) for b in vec[n : 2 * n]],
        "recommended_onehot": [int(b) for b in vec[2 * n : 3 * n]],
        "i_am_recommended": int(vec[3 * n]),
        "i_am_blacklisted": int(vec[3 * n + 1]),
    }


def encode_action(vector: np.ndarray, n_agents: int) -> dict:
    """Flat length-2N vector -> wire action object (offers then demands)."""
    vec = np.asarray(vector).reshape(-1)
    if vec.shape != (2 * n_agents,):
        raise ValueError(f"action vector must have length {2 * n_agents}, got {vec.shape[0]}")
    bits = [int(round(float(b))) for b in vec]
    return {"offers": bits[:n_agents], "demands": bits[n_agents:]}


def decode_action(payload: Mapping) -> np.ndarray:
    """Inverse of encode_action."""
    return np.asarray(list(payload["offers"]) + list(payload["demands"]), dtype=np.float64)


# -- the environment client --------------------------------------------------


class GuardEnv:
    """Remote multi-agent environment following the usual reset/step
    lifecycle.  One instance owns one connection; spawn one per worker.
    """

    def __init__(
        self,
        config: Union[EnvClientConfig, str, Sequence[str]],
        env_config: Optional[dict] = None,
    ):
        if not isinstance(config, EnvClientConfig):
            config = EnvClientConfig(endpoint=config, env_config=env_config)
        elif env_config is not None:
            config.env_config = env_config
        self.config = config
        self.transport = _open_transport(config)
        self.spec = self._handshake()
        self.n_agents: int = self.spec["n_agents"]
        self.action_length: int = self.spec["action_length"]
        self.observation_length: int = self.spec["observation_length"]
        self.mode: str = self.spec["mode"]
        self.rewards: dict = self.spec["rewards"]
        self._done = True
        self._last_info: dict = {}

    # lifecycle ----------------------------------------------------------

    def _handshake(self) -> dict:
        hello = {"kind": "hello", "version": self.config.expected_version}
        if self.config.env_config:
            hello["config"] = self.config.env_config
        response = self._request(hello, allow_error=True)
        if response.get("kind") == "error":
            self.transport.close()
            raise VersionMismatchError(response.get("message", "handshake rejected"))
        if response.get("kind") != "spec":
            self.transport.close()
            raise ProtocolError(f"expected spec, got {response.get('kind')!r}")
        if response.get("version") != self.config.expected_version:
            self.transport.close()
            raise VersionMismatchError(
                f"server speaks {response.get('version')!r}, "
                f"expected {self.config.expected_version!r}"
            )
        return response

    def reset(self, seed: Optional[int] = None) -> dict[int, np.ndarray]:
        """Start a new episode; returns {agent_id: observation vector}.

        A degenerate episode (too few active agents) comes back already
        finished: ``done`` is True and ``last_info`` carries the outcome.
        """
        request = {"kind": "reset"}
        if seed is not None:
            request["seed"] = int(seed)
        response = self._request(request)
        if response.get("kind") != "obs":
            raise ProtocolError(f"expected obs, got {response.get('kind')!r}")
        self._done = bool(response.get("done", False))
        self._last_info = {"outcome": response.get("outcome")} if self._done else {}
        return self._decode_observations(response["obs"])

    def step(
        self, actions: Mapping[int, np.ndarray]
    ) -> tuple[dict[int, np.ndarray], dict[int, float], dict[int, bool], dict]:
        """Submit flat action vectors for the active agents.

        Returns (observations, rewards, dones, info); dones carries the
        shared episode-done flag per agent.  A rejected action raises
        and leaves the episode untouched on the server.
        """
        if self._done:
            raise EpisodeDoneError("episode is done; call reset()")
        payload = {
            str(agent_id): encode_action(vector, self.n_agents)
            for agent_id, vector in actions.items()
        }
        response = self._request({"kind": "step", "actions": payload}, allow_error=True)
        if response.get("kind") == "error":
            code = response.get("code")
            message = response.get("message", "")
            if code == "BAD_ACTION":
                raise ActionRejectedError(message)
            if code == "EPISODE_DONE":
                self._done = True
                raise EpisodeDoneError(message)
            raise ProtocolError(f"{code}: {message}")
        if response.get("kind") != "transition":
            raise ProtocolError(f"expected transition, got {response.get('kind')!r}")
        observations = self._decode_observations(response["obs"])
        rewards = {int(k): float(v) for k, v in response["rewards"].items()}
        self._done = bool(response["done"])
        dones = {agent_id: self._done for agent_id in observations}
        info = dict(response.get("info", {}))
        if "outcome" in response:
            info["outcome"] = response["outcome"]
        self._last_info = info
        return observations, rewards, dones, info

    def close(self) -> None:
        try:
            self.transport.send_line(json.dumps({"kind": "close"}))
        except TransportError:
            pass
        self.transport.close()

    def __enter__(self) -> "GuardEnv":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # queries ------------------------------------------------------------

    @property
    def done(self) -> bool:
        return self._done

    @property
    def last_info(self) -> dict:
        return self._last_info

    def active_agents(self, observations: Mapping[int, np.ndarray]) -> list[int]:
        """Agents allowed to act, read from the blacklist bit."""
        return [
            agent_id
            for agent_id, vec in sorted(observations.items())
            if vec[3 * self.n_agents + 1] == 0
        ]

    # internals -----------------------------------------------------------

    def _request(self, message: dict, allow_error: bool = False) -> dict:
        self.transport.send_line(json.dumps(message))
        line = self.transport.recv_line()
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"unparseable server response: {exc}") from exc
        if response.get("kind") == "error" and not allow_error:
            raise ProtocolError(f"{response.get('code')}: {response.get('message')}")
        return response

    def _decode_observations(self, payload: Mapping) -> dict[int, np.ndarray]:
        return {
            int(agent_id): flatten_observation(obs, self.n_agents)
            for agent_id, obs in payload.items()
        }

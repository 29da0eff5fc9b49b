"""Wire protocol: handshake, stepping, errors, and in-process parity."""

import io
import json
import socket
import threading

import pytest

from guardsim import AgentAction, EnvConfig, Mode, NegotiationEnv
from guardsim.wire import PROTOCOL_VERSION, WireSession, serve_stdio, serve_tcp


def session(n=3, mode=Mode.IMPOSED):
    return WireSession(EnvConfig(n_agents=n, mode=mode))


def send(sess, **payload):
    return sess.handle_line(json.dumps(payload))


def coop_wire_actions(n, designated):
    actions = {}
    for i in range(n):
        offers = [0] * n
        demands = [0] * n
        if i == designated:
            for j in range(n):
                if j != i:
                    offers[j] = 1
        else:
            demands[designated] = 1
        actions[str(i)] = {"offers": offers, "demands": demands}
    return actions


class TestHandshake:
    def test_hello_reports_spec_with_action_length(self):
        spec = send(session(), kind="hello", version=PROTOCOL_VERSION)
        assert spec["kind"] == "spec"
        assert spec["action_length"] == 6
        assert spec["observation_length"] == 11
        assert spec["rewards"]["r_on_guard"] == -1.0

    def test_hello_config_overrides(self):
        spec = send(
            session(), kind="hello", version=PROTOCOL_VERSION,
            config={"n_agents": 4, "mode": "F", "max_steps": 5},
        )
        assert spec["n_agents"] == 4 and spec["mode"] == "F" and spec["max_steps"] == 5
        assert spec["action_length"] == 8

    def test_version_mismatch_rejected(self):
        err = send(session(), kind="hello", version="guardsim/2")
        assert err["kind"] == "error" and err["code"] == "BAD_REQUEST"

    def test_requests_before_hello_rejected(self):
        err = send(session(), kind="reset")
        assert err["code"] == "BAD_REQUEST"


class TestStepping:
    def start(self, n=3, mode=Mode.IMPOSED, seed=42):
        sess = session(n, mode)
        send(sess, kind="hello", version=PROTOCOL_VERSION)
        obs = send(sess, kind="reset", seed=seed)
        return sess, obs

    def test_scripted_cooperation_over_the_wire(self):
        sess, obs = self.start()
        recommended = obs["obs"]["0"]["recommended_onehot"].index(1)
        res = send(sess, kind="step", actions=coop_wire_actions(3, recommended))
        assert res["kind"] == "transition"
        assert res["done"] is True
        assert res["rewards"] == {"0": -1.0, "1": -0.01, "2": -0.01}
        assert res["outcome"]["kind"] == "success"

    def test_step_after_done_is_episode_done(self):
        sess, obs = self.start()
        send(sess, kind="step", actions=coop_wire_actions(3, 0))
        err = send(sess, kind="step", actions=coop_wire_actions(3, 0))
        assert err["code"] == "EPISODE_DONE"

    def test_malformed_json_does_not_advance_state(self):
        sess, _ = self.start()
        err = sess.handle_line("{nope")
        assert err["code"] == "BAD_REQUEST"
        res = send(sess, kind="step", actions=coop_wire_actions(3, 0))
        assert res["outcome"]["steps_taken"] == 1

    def test_wrong_vector_length_is_bad_action(self):
        sess, _ = self.start()
        bad = coop_wire_actions(3, 0)
        bad["1"]["offers"] = [0, 0]
        err = send(sess, kind="step", actions=bad)
        assert err["code"] == "BAD_ACTION"
        res = send(sess, kind="step", actions=coop_wire_actions(3, 0))
        assert res["done"] is True

    def test_self_bit_is_bad_action(self):
        sess, _ = self.start()
        bad = coop_wire_actions(3, 0)
        bad["1"]["demands"] = [0, 1, 0]
        err = send(sess, kind="step", actions=bad)
        assert err["code"] == "BAD_ACTION"

    def test_missing_agent_is_bad_action(self):
        sess, _ = self.start()
        partial = coop_wire_actions(3, 0)
        del partial["2"]
        err = send(sess, kind="step", actions=partial)
        assert err["code"] == "BAD_ACTION"

    def test_close_ends_session(self):
        sess, _ = self.start()
        assert send(sess, kind="close") is None
        assert sess.closed


class TestParity:
    def test_wire_and_in_process_traces_match(self):
        """Same seed, same scripted actions: identical rewards, obs, done."""
        seed = 2024
        sess = session(3, Mode.IMPOSED)
        send(sess, kind="hello", version=PROTOCOL_VERSION)

        env = NegotiationEnv(EnvConfig(n_agents=3, mode=Mode.IMPOSED))

        for episode in range(20):
            wire_obs = send(sess, kind="reset", seed=seed if episode == 0 else None)
            local_obs = env.reset(seed=seed if episode == 0 else None)
            for agent in range(3):
                wo = wire_obs["obs"][str(agent)]
                lo = local_obs[agent]
                assert wo["offers_to_me"] == list(lo.offers_to_me)
                assert wo["demands_to_me"] == list(lo.demands_to_me)
                assert wo["recommended_onehot"] == list(lo.recommended_id_onehot)
                assert wo["i_am_recommended"] == lo.i_am_recommended
            designated = env.recommended
            done = False
            while not done:
                wire_res = send(sess, kind="step", actions=coop_wire_actions(3, designated))
                local_res = env.step(
                    {
                        i: AgentAction.from_bits(
                            3,
                            coop_wire_actions(3, designated)[str(i)]["offers"],
                            coop_wire_actions(3, designated)[str(i)]["demands"],
                        )
                        for i in range(3)
                    }
                )
                assert wire_res["done"] == local_res.done
                assert wire_res["rewards"] == {
                    str(i): r for i, r in local_res.rewards.items()
                }
                done = local_res.done
            assert wire_res["outcome"]["per_agent_return"] == list(
                env.last_outcome.per_agent_return_undiscounted
            )
        # Ledger noise consumed identically on both sides.
        wire_ledger = sess.env.ledger.consumed_on_guard
        assert wire_ledger == pytest.approx(env.ledger.consumed_on_guard)


class TestTransports:
    def test_stdio_roundtrip(self):
        requests = "\n".join(
            [
                json.dumps({"kind": "hello", "version": PROTOCOL_VERSION}),
                json.dumps({"kind": "reset", "seed": 1}),
                json.dumps({"kind": "close"}),
            ]
        )
        out = io.StringIO()
        serve_stdio(EnvConfig(n_agents=3, mode=Mode.FREE), stdin=io.StringIO(requests), stdout=out)
        lines = out.getvalue().strip().splitlines()
        assert json.loads(lines[0])["kind"] == "spec"
        assert json.loads(lines[1])["kind"] == "obs"
        assert len(lines) == 2  # close gets no response

    def test_tcp_roundtrip(self):
        server = serve_tcp(EnvConfig(n_agents=3, mode=Mode.IMPOSED), port=0)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address
            with socket.create_connection((host, port), timeout=5) as sock:
                fh = sock.makefile("rw", encoding="utf-8")
                fh.write(json.dumps({"kind": "hello", "version": PROTOCOL_VERSION}) + "\n")
                fh.flush()
                spec = json.loads(fh.readline())
                assert spec["kind"] == "spec"
                fh.write(json.dumps({"kind": "reset", "seed": 7}) + "\n")
                fh.flush()
                obs = json.loads(fh.readline())
                assert obs["kind"] == "obs"
                fh.write(json.dumps({"kind": "close"}) + "\n")
                fh.flush()
        finally:
            server.shutdown()
            server.server_close()

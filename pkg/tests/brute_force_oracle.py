"""Independent brute-force evaluator of the negotiation rules.

Deliberately re-derives everything from first principles with plain
loops and no imports from the package, so tests can cross-check the
environment against a second, unrelated implementation.  Only the
reward constants are shared.
"""

R_ON_GUARD = -1.00
R_FOUND = -0.01
R_FAIL = -0.90
R_STEP = -0.01


def bf_filter(mode, actions, recommended):
    """Imposed mode clears every non-recommended agent's offers."""
    if mode != "I":
        return dict(actions)
    out = {}
    for agent, (offers, demands) in actions.items():
        if agent == recommended:
            out[agent] = (offers, demands)
        else:
            out[agent] = (tuple(0 for _ in offers), demands)
    return out


def bf_agreement(actions, active):
    """Smallest agent id that offers to all other actives while all
    other actives demand it; None when nobody qualifies."""
    winners = []
    for i in sorted(active):
        offers, _ = actions[i]
        offers_everyone = True
        demanded_by_everyone = True
        for j in active:
            if j == i:
                continue
            if offers[j] != 1:
                offers_everyone = False
            if actions[j][1][i] != 1:
                demanded_by_everyone = False
        if offers_everyone and demanded_by_everyone:
            winners.append(i)
    if not winners:
        return None
    on_guard = min(winners)
    return on_guard, {j for j in active if j != on_guard}


def bf_episode(n, mode, max_steps, per_step_actions, recommended=None):
    """Play out one episode on raw action tuples.

    per_step_actions: one dict per step {agent: (offers, demands)};
    the last entry repeats if the episode outlives the list.
    Returns (kind, on_guard, steps_taken, reward_rows, returns).
    """
    active = list(range(n))
    returns = [0.0] * n
    reward_rows = []
    for t in range(1, max_steps + 1):
        raw = per_step_actions[min(t - 1, len(per_step_actions) - 1)]
        acts = bf_filter(mode, raw, recommended)
        agreement = bf_agreement(acts, active)
        if agreement is not None:
            on_guard, _ = agreement
            row = [R_ON_GUARD if i == on_guard else R_FOUND for i in range(n)]
            reward_rows.append(row)
            for i in range(n):
                returns[i] += row[i]
            return "success", on_guard, t, reward_rows, returns
        if t == max_steps:
            row = [R_FAIL] * n
            reward_rows.append(row)
            for i in range(n):
                returns[i] += row[i]
            return "failure", None, t, reward_rows, returns
        row = [R_STEP] * n
        reward_rows.append(row)
        for i in range(n):
            returns[i] += row[i]
    raise AssertionError("unreachable")


def bf_role_actions(n, roles, designated):
    """Actions of one step for cooperate/defect role letters.

    A cooperator that is the designated agent offers to everyone else;
    any other cooperator demands exactly the designated agent; a
    defector does nothing.
    """
    actions = {}
    for i in range(n):
        offers = [0] * n
        demands = [0] * n
        if roles[i] == "C":
            if i == designated:
                for j in range(n):
                    if j != i:
                        offers[j] = 1
            else:
                demands[designated] = 1
        actions[i] = (tuple(offers), tuple(demands))
    return actions


def bf_efficiency(n, mode, max_steps, returns, designated, recommended):
    """Efficiency recomputed through brute-force baseline episodes:
    the all-defect floor and the all-cooperate one-step optimum are
    themselves simulated, never taken from closed forms."""
    defect_steps = [bf_role_actions(n, "D" * n, designated)]
    _, _, _, _, floor = bf_episode(n, mode, max_steps, defect_steps, recommended)
    coop_designated = recommended if mode == "I" else designated
    coop_steps = [bf_role_actions(n, "C" * n, coop_designated)]
    kind, _, steps, _, ceiling = bf_episode(n, mode, max_steps, coop_steps, recommended)
    assert kind == "success" and steps == 1
    sw_floor = sum(floor)
    sw_ceiling = sum(ceiling)
    return (sum(returns) - sw_floor) / (sw_ceiling - sw_floor)

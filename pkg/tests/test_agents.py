"""SMDP / intra-option Q-learning updates, behavioral policy, option execution."""

import numpy as np
import pytest

from spectral_options.env import bundled_map_text, load_gridworld
from spectral_options.model import adjacency, exhaustive_model
from spectral_options.options import Option, assign_states, compose_options, expand_memberships
from spectral_options.spectral import cluster
from spectral_options.agents import (
    QTable,
    available_choices,
    epsilon_greedy,
    intra_option_update,
    option_key,
    q_update,
    run_option,
    smdp_q_update,
)

import oracles

THREE_ROOMS = bundled_map_text("three_rooms")


@pytest.fixture(scope="module")
def three_rooms_options():
    world = load_gridworld(THREE_ROOMS)
    model = exhaustive_model(world)
    result = cluster(adjacency(model), t_c=0.8)
    options = compose_options(model, result, tau_conn=0.1)
    chi = expand_memberships(result.membership, result.state_ids, world.n_states)
    return world, options, chi


def make_option(source=0, target=1, initiation=(0,), policy=None, termination=None):
    return Option(source=source, target=target,
                  initiation=frozenset(initiation),
                  policy=policy or {}, termination=termination or {})


# --- smdp_q_update ---------------------------------------------------------

def test_one_step_arithmetic():
    Q = QTable(alpha=0.5, gamma=0.9)
    smdp_q_update(Q, 0, 2, 1.0, 1, 1, available=[0, 1, 2, 3])
    assert Q.get(0, 2) == pytest.approx(0.5)


def test_zero_alpha_is_identity():
    Q = QTable(alpha=0.0, gamma=0.9)
    smdp_q_update(Q, 0, 2, 1.0, 1, 1, available=[0, 1, 2, 3])
    assert Q.get(0, 2) == 0.0


def test_duration_discounts_bootstrap():
    Q = QTable(alpha=1.0, gamma=0.5)
    Q.set(1, 0, 8.0)
    smdp_q_update(Q, 0, option_key(0), 0.0, 3, 1, available=[0])
    assert Q.get(0, option_key(0)) == pytest.approx(0.5 ** 3 * 8.0)


def test_nonpositive_duration_is_error():
    Q = QTable()
    with pytest.raises(ValueError, match="duration"):
        smdp_q_update(Q, 0, 0, 0.0, 0, 1, available=[0])


def test_q_update_is_one_step_case():
    Q1, Q2 = QTable(alpha=0.3, gamma=0.9), QTable(alpha=0.3, gamma=0.9)
    Q1.set(1, 0, 2.0)
    Q2.set(1, 0, 2.0)
    q_update(Q1, 0, 1, 0.5, 1, available=[0, 1])
    smdp_q_update(Q2, 0, 1, 0.5, 1, 1, available=[0, 1])
    assert Q1.values == Q2.values


def test_repeated_updates_reach_smdp_fixpoint(three_rooms_options):
    # Deterministic sweeps at α = 1 are exact Bellman backups, so the table
    # must land on the independently computed SMDP value-iteration solution.
    world, options, _ = three_rooms_options
    gamma = 0.99
    star = oracles.smdp_q_star(world, options, gamma)
    Q = QTable(alpha=1.0, gamma=gamma)
    for _ in range(200):
        delta = 0.0
        for s in range(world.n_states):
            if world.is_terminal(s):
                continue
            for c in available_choices(s, options, 4):
                if isinstance(c, tuple):
                    r, k, s_end = oracles.determinized_outcome(
                        world, options[c[1]], s, gamma)
                else:
                    s_end = world.move(s, c)
                    r = world.goal_reward if s_end in world.goals else world.step_reward
                    k = 1
                before = Q.get(s, c)
                smdp_q_update(Q, s, c, r, k, s_end,
                              available_choices(s_end, options, 4))
                delta = max(delta, abs(Q.get(s, c) - before))
        if delta < 1e-14:
            break
    assert delta < 1e-14
    for key, value in star.items():
        assert Q.values[key] == pytest.approx(value, abs=1e-6), key


def test_flat_updates_reach_value_iteration(three_rooms_options):
    world, _, _ = three_rooms_options
    gamma = 0.99
    star = oracles.flat_q_star(world, gamma)
    Q = QTable(alpha=1.0, gamma=gamma)
    for _ in range(200):
        delta = 0.0
        for s in range(world.n_states):
            if world.is_terminal(s):
                continue
            for a in range(4):
                s2 = world.move(s, a)
                r = world.goal_reward if s2 in world.goals else world.step_reward
                before = Q.get(s, a)
                q_update(Q, s, a, r, s2, available=range(4))
                delta = max(delta, abs(Q.get(s, a) - before))
        if delta < 1e-14:
            break
    for s in range(world.n_states):
        if world.is_terminal(s):
            continue
        for a in range(4):
            assert Q.get(s, a) == pytest.approx(star[s, a], abs=1e-4)


# --- intra_option_update ---------------------------------------------------

def test_inconsistent_action_updates_only_primitive():
    o = make_option(policy={0: {1: 1.0}})
    Q = QTable(alpha=1.0, gamma=0.9)
    n = intra_option_update(Q, (0, 2, 1.0, 1), [o])
    assert n == 1
    assert Q.get(0, 2) == pytest.approx(1.0)
    assert Q.get(0, option_key(0)) == 0.0


def test_certain_termination_bootstraps_from_best():
    o = make_option(policy={0: {1: 1.0}}, termination={})  # β(1) defaults to 1
    Q = QTable(alpha=1.0, gamma=0.9)
    Q.set(1, 3, 5.0)
    intra_option_update(Q, (0, 1, 0.0, 1), [o])
    assert Q.get(0, option_key(0)) == pytest.approx(0.9 * 5.0)


def test_continuation_bootstraps_from_own_value():
    o = make_option(policy={0: {1: 1.0}}, termination={1: 0.0})
    Q = QTable(alpha=1.0, gamma=0.9)
    Q.set(1, option_key(0), 2.0)
    intra_option_update(Q, (0, 1, 0.0, 1), [o])
    assert Q.get(0, option_key(0)) == pytest.approx(1.8)


def test_update_count_grows_with_consistent_options():
    o1 = make_option(policy={0: {1: 1.0}})
    o2 = make_option(source=1, target=0, policy={0: {1: 0.5, 2: 0.5}})
    Q = QTable(alpha=0.5, gamma=0.9)
    n = intra_option_update(Q, (0, 1, 0.0, 1), [o1, o2])
    assert n == 3   # two options consistent with action 1, plus the primitive


# --- epsilon_greedy --------------------------------------------------------

def test_greedy_picks_argmax():
    Q = QTable()
    Q.set(0, 1, 0.2)
    Q.set(0, 2, 0.9)
    rng = np.random.default_rng(0)
    assert epsilon_greedy(Q, 0, [0, 1, 2, 3], 0.0, rng) == 2


def test_full_exploration_is_uniform():
    Q = QTable()
    rng = np.random.default_rng(1)
    counts = np.zeros(4)
    for _ in range(10_000):
        counts[epsilon_greedy(Q, 0, [0, 1, 2, 3], 1.0, rng)] += 1
    # χ² test against uniform at p = 0.01 (df = 3, critical value 11.345).
    expected = 2500.0
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 11.345


def test_ties_break_to_earliest_position():
    Q = QTable()
    rng = np.random.default_rng(2)
    assert epsilon_greedy(Q, 0, [option_key(1), 0, 1], 0.0, rng) == option_key(1)


def test_empty_available_is_error():
    Q = QTable()
    with pytest.raises(ValueError, match="available"):
        epsilon_greedy(Q, 0, [], 0.0, np.random.default_rng(0))


def test_options_listed_before_primitives(three_rooms_options):
    world, options, chi = three_rooms_options
    idx = assign_states(chi)
    s = world.start
    avail = available_choices(s, options, 4)
    option_positions = [i for i, c in enumerate(avail) if isinstance(c, tuple)]
    primitive_positions = [i for i, c in enumerate(avail) if isinstance(c, int)]
    assert option_positions and primitive_positions
    assert max(option_positions) < min(primitive_positions)
    for c in avail:
        if isinstance(c, tuple):
            assert s in options[c[1]].initiation


# --- run_option ------------------------------------------------------------

def test_certain_termination_after_one_step():
    world = load_gridworld("S.G")
    o = make_option(initiation=(0,), policy={0: {1: 1.0}}, termination={0: 0.0})
    out = run_option(world, o, 0, np.random.default_rng(0), max_steps=10)
    assert out.duration == 1 and out.end_state == 1
    assert not out.truncated and not out.missing_policy


def test_max_steps_cap_truncates():
    world = load_gridworld("S.G")
    # Policy bounces west into the wall forever; β = 0 everywhere reached.
    o = make_option(initiation=(0,), policy={0: {3: 1.0}}, termination={0: 0.0})
    out = run_option(world, o, 0, np.random.default_rng(0), max_steps=5)
    assert out.truncated and out.duration == 5 and out.end_state == 0


def test_missing_policy_terminates_flagged():
    world = load_gridworld("S.G")
    o = make_option(initiation=(0,), policy={}, termination={})
    out = run_option(world, o, 0, np.random.default_rng(0), max_steps=5)
    assert out.missing_policy and out.duration == 0 and out.end_state == 0


def test_start_outside_initiation_is_error():
    world = load_gridworld("S.G")
    o = make_option(initiation=(0,), policy={0: {1: 1.0}})
    with pytest.raises(ValueError, match="initiation"):
        run_option(world, o, 1, np.random.default_rng(0), max_steps=5)


def test_discounted_reward_accumulation():
    world = load_gridworld("S.G")
    o = make_option(initiation=(0,), policy={0: {1: 1.0}, 1: {1: 1.0}},
                    termination={0: 0.0, 1: 0.0})
    out = run_option(world, o, 0, np.random.default_rng(0), max_steps=5, gamma=0.5)
    # Two steps: reward 0 then goal reward 1 discounted one step.
    assert out.duration == 2
    assert out.reward == pytest.approx(0.5)
    assert out.segment[-1].done


def test_determinized_traverse_reaches_target_everywhere(three_rooms_options):
    world, options, chi = three_rooms_options
    idx = assign_states(chi)
    for o in options:
        for s0 in o.policy:
            _, k, s_end = oracles.determinized_outcome(world, o, s0, 0.99)
            assert k <= world.n_states
            assert idx.assignment.get(s_end) == o.target, (o.label, s0)


def test_sampled_runs_end_in_source_or_target(three_rooms_options):
    world, options, chi = three_rooms_options
    idx = assign_states(chi)
    rng = np.random.default_rng(7)
    target_hits = 0
    runs = 0
    for o in options:
        for s0 in sorted(o.policy):
            for _ in range(5):
                out = run_option(world, o, s0, rng, max_steps=world.n_states)
                runs += 1
                end_cluster = idx.assignment.get(out.end_state)
                reached_goal = out.segment and out.segment[-1].done
                assert end_cluster in (o.source, o.target) or reached_goal
                if end_cluster == o.target:
                    target_hits += 1
    assert target_hits > 0.2 * runs


def test_episode_log_invariant(three_rooms_options):
    from spectral_options.pipeline import run_episode

    world, options, _ = three_rooms_options
    Q = QTable()
    rng = np.random.default_rng(11)
    for _ in range(10):
        log, traj = run_episode(world, Q, options, 0.5, rng, "smdp", 200)
        assert log.decision_epochs <= log.primitive_steps
        assert log.primitive_steps == len(traj)

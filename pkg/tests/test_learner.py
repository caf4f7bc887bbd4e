from __future__ import annotations

import random

import numpy as np
import pytest

from lemae.analysis import keystate_drop
from lemae.dsl import DiscriminatorSet, DiscriminatorSpec
from lemae.envs import DOWN, LEFT, MOVES, RIGHT, UP, default_spec, make_env
from lemae.ksmt import KeyStateRegistry, Ksmt
from lemae.learner import (
    ConfigError,
    IndependentQ,
    LearnerConfig,
    QTable,
    evaluate,
    rollout,
    train,
)
from lemae.shir import RewardConfig, Trajectory

PASS_KEYS = DiscriminatorSet((
    DiscriminatorSpec.from_source("k_switch", "s[4] == 1"),
    DiscriminatorSpec.from_source("k_one_right", "s[0] > 15 or s[2] > 15"),
))


class ScriptedPass:
    """Oracle policy for Pass built from the map.

    Agent 1 walks through the door while agent 0 keeps stepping on and off
    the near switch, then agent 1 does the same on the far switch while
    agent 0 follows.  An agent pushing against a closed door stays put.
    """

    def __init__(self, env):
        self.env = env

    @staticmethod
    def towards(cur, goal, other):
        (x, y), (gx, gy) = cur, goal
        if cur == goal:
            return UP  # step off; the next action steps back on
        options = []
        if gx != x:
            options.append(RIGHT if gx > x else LEFT)
        if gy != y:
            options.append(DOWN if gy > y else UP)
        for a in options:
            dx, dy = MOVES[a]
            if (x + dx, y + dy) != other:
                return a
        return options[0]

    def act(self, views, eps, rng):
        env = self.env
        p0, p1 = env.pos
        wall = env.wall_x
        approach = (wall - 1, env.door[1])
        near, far = min(env.switches), max(env.switches)
        if p1[0] < wall:
            a1 = RIGHT if p1 == approach else self.towards(p1, approach, p0)
        elif p1[0] == wall:
            a1 = RIGHT
        else:
            a1 = self.towards(p1, far, p0)
        if p1[0] <= wall:
            a0 = self.towards(p0, near, p1)
        elif p0[0] < wall:
            a0 = RIGHT if p0 == approach else self.towards(p0, approach, p1)
        else:
            a0 = RIGHT
        return [a0, a1]


# -- config -----------------------------------------------------------------


def test_config_defaults_and_validation():
    cfg = LearnerConfig()
    assert (cfg.learning_rate, cfg.gamma, cfg.eps_l, cfg.eval_interval, cfg.eval_episodes, cfg.train_frequency) == (
        0.1, 0.99, 0.05, 200, 32, 1)
    for bad in ({"gamma": 1.0}, {"learning_rate": 0}, {"eps_l": 0.5, "eps_h": 0.5}, {"eval_episodes": 0}):
        with pytest.raises(ConfigError):
            LearnerConfig(**bad)
    with pytest.raises(ConfigError):
        LearnerConfig.from_dict({"gama": 0.9})


# -- Q-learning -------------------------------------------------------------


def test_q_update_contracts_to_discounted_values():
    # states A -> B -> terminal, reward 1 on the last step, always action 0
    cfg = LearnerConfig(learning_rate=0.5, gamma=0.9)
    pol = IndependentQ(1, cfg)
    traj = Trajectory(np.array([[0], [1], [2]]), np.array([[0], [0]]), np.array([0.0, 1.0]), True,
                      views=[(("A",),), (("B",),), (("T",),)])
    for _ in range(200):
        pol.update(traj, traj.rewards)
    q = pol.tables[0]
    assert abs(q.get(("B",), 0) - 1.0) < 1e-6
    assert abs(q.get(("A",), 0) - 0.9) < 1e-6
    assert q.get(("A",), 1) == 0.0


def test_q_update_single_step_matches_formula():
    cfg = LearnerConfig(learning_rate=0.1, gamma=0.99)
    pol = IndependentQ(1, cfg)
    pol.tables[0].set(("B",), 2, 3.0)
    traj = Trajectory(np.array([[0], [1]]), np.array([[1]]), np.array([0.5]), False, views=[(("A",),), (("B",),)])
    pol.update(traj, traj.rewards)
    assert pol.tables[0].get(("A",), 1) == pytest.approx(0.1 * (0.5 + 0.99 * 3.0))


def test_qtable_greedy_ties_and_round_trip():
    t = QTable()
    assert t.greedy(("unseen",)) == 0
    t.set((1, 2), 3, 1.0)
    t.set((1, 2), 1, 1.0)
    assert t.greedy((1, 2)) == 1
    again = QTable.from_dict(t.to_dict())
    assert again.values((1, 2)).tolist() == t.values((1, 2)).tolist()


# -- evaluate ---------------------------------------------------------------


def test_untrained_table_never_wins_pass():
    env = make_env("pass")
    assert evaluate(env, IndependentQ(2, LearnerConfig()), 20) == 0.0


def test_scripted_policy_always_wins_pass():
    env = make_env("pass")
    assert evaluate(env, ScriptedPass(env), 50) == 1.0


def test_win_rate_is_k_over_n():
    env = make_env(default_spec("pass", horizon=300))

    class Alternate(ScriptedPass):
        # wins only on even-numbered episodes by refusing to move on odd ones
        def __init__(self, env):
            super().__init__(env)
            self.episode = -1

        def act(self, views, eps, rng):
            if env.t == 0:
                self.episode += 1
            if self.episode % 2:
                return [UP, UP]
            return super().act(views, eps, rng)

    assert evaluate(env, Alternate(env), 10) == 5 / 10


# -- rollout ----------------------------------------------------------------


class Recorder:
    """Random policy that records the epsilon it was asked to use."""

    def __init__(self):
        self.eps = []

    def act(self, views, eps, rng):
        self.eps.append(eps)
        return [rng.randrange(4) for _ in views]


def test_simultaneous_key_states_follow_set_order():
    env = make_env("pass")
    both = DiscriminatorSet((
        DiscriminatorSpec.from_source("a", "s[4] == 0"),
        DiscriminatorSpec.from_source("b", "s[0] < 15"),
    ))
    _, chain = rollout(env, Recorder(), Ksmt(), KeyStateRegistry(), both, LearnerConfig(), random.Random(0), seed=1)
    assert list(chain)[:2] == [(0, "a"), (0, "b")]
    rev = DiscriminatorSet(tuple(reversed(both.specs)))
    _, chain = rollout(env, Recorder(), Ksmt(), KeyStateRegistry(), rev, LearnerConfig(), random.Random(0), seed=1)
    assert list(chain)[:2] == [(0, "b"), (0, "a")]


def test_no_discriminator_fires_leaves_tree_empty():
    env = make_env("pass")
    never = DiscriminatorSet((DiscriminatorSpec.from_source("k", "s[0] > 100"),))
    tree = Ksmt()
    _, chain = rollout(env, Recorder(), tree, KeyStateRegistry(), never, LearnerConfig(), random.Random(0), seed=3)
    assert list(chain) == [] and len(tree) == 0


def test_leaf_key_state_switches_to_high_randomness():
    env = make_env("pass")
    start = DiscriminatorSet((DiscriminatorSpec.from_source("k", "s[4] == 0"),))
    tree = Ksmt()
    rec = Recorder()
    cfg = LearnerConfig(eps_l=0.05, eps_h=0.7)
    _, chain = rollout(env, rec, tree, KeyStateRegistry(), start, cfg, random.Random(0), seed=0)
    assert list(chain) == [(0, "k")]
    # k fired at t=0 and is a leaf, so every step runs with eps_h
    assert set(rec.eps) == {0.7}


def test_chains_are_tree_paths_and_registry_covers_tree():
    env = make_env("pass")
    keys = DiscriminatorSet((
        DiscriminatorSpec.from_source("left_top", "s[1] < 5 or s[3] < 5"),
        DiscriminatorSpec.from_source("left_bottom", "s[1] > 25 or s[3] > 25"),
        DiscriminatorSpec.from_source("left_wall", "s[0] == 14 or s[2] == 14"),
    ))
    tree, reg = Ksmt(), KeyStateRegistry()
    gen = random.Random(4)
    for ep in range(60):
        _, chain = rollout(env, Recorder(), tree, reg, keys, LearnerConfig(), gen, seed=ep)
        assert tree.contains_path(chain.symbols)
        chain.check()
        assert tree.symbols <= set(reg.exemplars)


def test_blacklisted_symbols_never_enter_chains():
    env = make_env("pass")
    keys = DiscriminatorSet((
        DiscriminatorSpec.from_source("a", "s[4] == 0"),
        DiscriminatorSpec.from_source("b", "s[0] < 15"),
    ))
    tree = Ksmt().insert(["a", "b"])
    tree.prune([["b"]])
    assert tree.blacklist == {"a"}
    gen = random.Random(0)
    for ep in range(20):
        _, chain = rollout(env, Recorder(), tree, KeyStateRegistry(), keys, LearnerConfig(), gen, seed=ep)
        assert "a" not in chain.symbols


# -- train ------------------------------------------------------------------


def small_cfg(**kw) -> LearnerConfig:
    base = dict(step_budget=15_000, eval_interval=20, eval_episodes=4, final_eval_episodes=5, seed=3)
    base.update(kw)
    return LearnerConfig(**base)


def test_budget_accounting():
    spec = default_spec("pass")
    m = train(spec, PASS_KEYS, RewardConfig(), small_cfg())
    assert m.total_steps >= 15_000
    assert m.total_steps < 15_000 + spec.horizon
    assert m.visitation.sum() == spec.n_agents * m.total_steps
    assert len(m.episode_returns) == m.episodes
    if m.steps_to_first_success is not None:
        assert m.steps_to_first_success <= m.total_steps
    assert all(0.0 <= r <= 1.0 for _, _, r in m.eval_points)


def test_train_is_deterministic():
    spec = default_spec("pass")
    a = train(spec, PASS_KEYS, RewardConfig(), small_cfg())
    b = train(spec, PASS_KEYS, RewardConfig(), small_cfg())
    assert a.summary() == b.summary()
    assert np.array_equal(a.visitation, b.visitation)
    assert a.policy.to_dict() == b.policy.to_dict()
    c = train(spec, PASS_KEYS, RewardConfig(), small_cfg(seed=4))
    assert c.summary() != a.summary()


def test_base_ablation_is_plain_q_learning():
    spec = default_spec("pass")
    cfg = small_cfg(ksmt_explore=False, ksmt_plan=False, prune=False)
    m = train(spec, None, RewardConfig(beta=0.0), cfg)
    assert len(m.tree) == 0 and m.keystate_counts[-1][1] == 0
    # without success, every blended reward is zero
    if m.successes == 0:
        assert set(m.episode_returns) == {0.0}


def test_pruning_blacklists_and_records_events():
    spec = default_spec("push_box", horizon=60)
    keys = DiscriminatorSet((
        DiscriminatorSpec.from_source("box_moved", "s[5] != 7 or s[4] != 7"),
        DiscriminatorSpec.from_source("corner", "s[0] < 3 and s[1] < 3"),
        DiscriminatorSpec.from_source("edge", "s[2] > 12"),
    ))
    m = train(spec, keys, RewardConfig(), small_cfg(step_budget=40_000, eval_interval=50, seed=0, eps_h=1.0))
    assert m.successes >= 1 and m.prune_events
    for ep, before, after in m.prune_events:
        assert after <= before
    assert "box_moved" not in m.blacklist
    assert set(m.blacklist) == {"corner", "edge"}
    assert m.tree.symbols.isdisjoint(m.blacklist)
    # the count curve only falls at prunes, and shows each one in full
    assert keystate_drop(m.keystate_counts) == sum(b - a for _, b, a in m.prune_events) == 2


def test_metrics_files(tmp_path):
    m = train(default_spec("pass"), PASS_KEYS, RewardConfig(), small_cfg(step_budget=3000))
    m.write(tmp_path, extra={"seed": 3})
    names = {p.name for p in tmp_path.iterdir()}
    assert {"metrics.csv", "summary.json", "visitation.npy", "ksmt.json", "registry.json", "qtable.json"} <= names
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert header == "episode,env_steps,win_rate,key_states"

"""Training loop: key-state guided rollouts plus independent tabular Q-learning.

Each agent owns a Q-table keyed on the view its environment hands out.
Rollouts localise key states with the discriminator set, grow the memory
tree and switch exploration randomness from node degrees.  Finished
episodes are relabelled with the hindsight intrinsic reward and replayed
once, in time order, through one-step Q-learning.
"""

from __future__ import annotations

import csv
import json
import logging
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import kernels
from .dsl import DiscriminatorSet
from .envs import N_ACTIONS, EnvSpec, GridEnv, make_env
from .ksmt import KeyStateChain, KeyStateRegistry, Ksmt, epsilon_after_key_state
from .shir import RewardConfig, Trajectory, relabel

log = logging.getLogger(__name__)

# eval episodes draw their start states from a seed range disjoint from training
EVAL_SEED_BASE = 1_000_000_007


class ConfigError(ValueError):
    pass


@dataclass
class LearnerConfig:
    gamma: float = 0.99
    learning_rate: float = 0.1
    eps_l: float = 0.05
    eps_h: float = 1.0
    train_frequency: int = 1
    max_episodes: int = 20_000
    eval_interval: int = 200
    eval_episodes: int = 32
    final_eval_episodes: int = 100
    step_budget: int = 2_000_000
    seed: int = 0
    # method switches; all on is the full method
    ksmt_explore: bool = True
    ksmt_plan: bool = True
    prune: bool = True
    # linear decay from eps_h to eps_l, used only when ksmt_explore is off
    eps_anneal_steps: int = 50_000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.eps_l < self.eps_h <= 1:
            raise ConfigError("need 0 <= eps_l < eps_h <= 1")
        for name in ("train_frequency", "max_episodes", "eval_interval", "eval_episodes",
                     "final_eval_episodes", "step_budget"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.eps_anneal_steps < 0:
            raise ConfigError("eps_anneal_steps must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "LearnerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown learner keys: {sorted(unknown)}")
        return cls(**data)


class QTable:
    """Sparse action values; unseen keys read as zero."""

    def __init__(self, n_actions: int = N_ACTIONS):
        self.n_actions = n_actions
        self.index: dict[tuple, int] = {}
        self.q = np.zeros((256, n_actions), dtype=np.float64)

    def __len__(self) -> int:
        return len(self.index)

    def row(self, key: tuple) -> int:
        r = self.index.get(key)
        if r is None:
            r = len(self.index)
            if r == len(self.q):
                self.q = np.concatenate([self.q, np.zeros_like(self.q)])
            self.index[key] = r
        return r

    def values(self, key: tuple) -> np.ndarray:
        r = self.index.get(key)
        if r is None:
            return np.zeros(self.n_actions)
        return self.q[r].copy()

    def get(self, key: tuple, action: int) -> float:
        r = self.index.get(key)
        return 0.0 if r is None else float(self.q[r, action])

    def set(self, key: tuple, action: int, value: float) -> None:
        self.q[self.row(key), action] = value

    def greedy(self, key: tuple) -> int:
        r = self.index.get(key)
        if r is None:
            return 0
        # argmax returns the first maximum, i.e. the lowest action id
        return int(np.argmax(self.q[r]))

    def to_dict(self) -> dict:
        return {
            "n_actions": self.n_actions,
            "entries": [[list(k), self.q[r].tolist()] for k, r in self.index.items()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QTable":
        table = cls(int(data["n_actions"]))
        for key, vals in data["entries"]:
            table.q[table.row(tuple(key))] = vals
        return table


class Policy(Protocol):
    def act(self, views: Sequence[tuple], eps: float, rng: random.Random) -> list[int]: ...

    def update(self, traj: Trajectory, r_blend: np.ndarray) -> None: ...


class IndependentQ:
    """One Q-table per agent, all trained on the shared team reward."""

    def __init__(self, n_agents: int, cfg: LearnerConfig):
        self.tables = [QTable() for _ in range(n_agents)]
        self.cfg = cfg

    def act(self, views, eps, rng):
        out = []
        for table, view in zip(self.tables, views):
            if eps > 0 and rng.random() < eps:
                out.append(rng.randrange(N_ACTIONS))
            else:
                out.append(table.greedy(view))
        return out

    def update(self, traj: Trajectory, r_blend: np.ndarray) -> None:
        T = len(traj)
        if T == 0:
            return
        terminal = np.zeros(T, dtype=np.uint8)
        terminal[-1] = 1 if traj.success else 0
        rewards = np.ascontiguousarray(r_blend, dtype=np.float64)
        for i, table in enumerate(self.tables):
            rows = np.fromiter((table.row(v[i]) for v in traj.views), dtype=np.int64, count=T + 1)
            kernels.td_sweep(
                table.q, rows[:-1], np.ascontiguousarray(traj.actions[:, i]), rewards, rows[1:],
                terminal, self.cfg.learning_rate, self.cfg.gamma,
            )

    def to_dict(self) -> dict:
        return {"tables": [t.to_dict() for t in self.tables]}


@dataclass
class RunMetrics:
    eval_points: list = field(default_factory=list)  # (episode, env_steps, win_rate)
    steps_to_first_success: int | None = None
    visitation: np.ndarray | None = None  # (n_agents, grid_h, grid_w)
    keystate_counts: list = field(default_factory=list)  # (episode, n tree symbols); pruning episodes add a pre-prune sample
    episode_returns: list = field(default_factory=list)
    total_steps: int = 0
    episodes: int = 0
    final_win_rate: float | None = None
    successes: int = 0
    blacklist: list = field(default_factory=list)
    prune_events: list = field(default_factory=list)  # (episode, symbols before, symbols after)
    tree: Ksmt | None = None
    registry: KeyStateRegistry | None = None
    policy: IndependentQ | None = None

    def summary(self) -> dict:
        return {
            "steps_to_first_success": self.steps_to_first_success,
            "total_steps": self.total_steps,
            "episodes": self.episodes,
            "successes": self.successes,
            "final_win_rate": self.final_win_rate,
            "blacklist": sorted(self.blacklist),
            "prune_events": [list(p) for p in self.prune_events],
            "eval_points": [list(p) for p in self.eval_points],
            "keystate_counts": [list(p) for p in self.keystate_counts],
        }

    def write(self, out_dir: Path, extra: dict | None = None) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        counts = dict(self.keystate_counts)
        with open(out_dir / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "env_steps", "win_rate", "key_states"])
            for ep, steps, rate in self.eval_points:
                w.writerow([ep, steps, f"{rate:.6f}", counts.get(ep, "")])
        summary = self.summary()
        if extra:
            summary.update(extra)
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        if self.visitation is not None:
            np.save(out_dir / "visitation.npy", self.visitation)
        if self.tree is not None:
            (out_dir / "ksmt.json").write_text(json.dumps(self.tree.to_dict(), indent=2))
        if self.registry is not None:
            (out_dir / "registry.json").write_text(json.dumps(self.registry.to_dict(), indent=2))
        if self.policy is not None:
            (out_dir / "qtable.json").write_text(json.dumps(self.policy.to_dict()))


class Localizer:
    """Tracks which key states an episode has achieved so far.

    ``mask`` has bit ``k`` set once the ``k``-th discriminator of the set
    has fired; it is appended to every agent's view so action values can
    differ between stages of the task.
    """

    def __init__(self, dset: DiscriminatorSet | None, blacklist=()):
        specs = dset.specs if dset is not None else ()
        self.entries = [
            (1 << k, d.symbol, d.check, d.subspace)
            for k, d in enumerate(specs) if d.symbol not in blacklist
        ]
        self.pending = list(self.entries)
        self.mask = 0

    def reset(self) -> None:
        self.pending = list(self.entries)
        self.mask = 0

    def update(self, s: tuple) -> list[tuple[str, tuple[int, ...]]]:
        """Symbols first satisfied by ``s``, in discriminator-set order."""
        if not self.pending:
            return []
        fired = [e for e in self.pending if e[2](s)]
        if fired:
            for bit, _, _, _ in fired:
                self.mask |= bit
            self.pending = [e for e in self.pending if not self.mask & e[0]]
        return [(sym, sub) for _, sym, _, sub in fired]

    def views(self, env: GridEnv) -> tuple:
        return tuple(v + (self.mask,) for v in env.views())


def rollout(
    env: GridEnv,
    policy: Policy,
    tree: Ksmt,
    registry: KeyStateRegistry,
    discriminators: DiscriminatorSet | None,
    cfg: LearnerConfig,
    rng: random.Random,
    seed: int | None = None,
    eps: float | None = None,
) -> tuple[Trajectory, KeyStateChain]:
    """Run one episode.

    With ``eps`` given the episode uses that fixed randomness (annealed
    baselines, greedy evaluation); otherwise it is derived from the tree
    at the start and after every newly achieved key state.
    """
    s = env.reset(seed)
    loc = Localizer(discriminators, tree.blacklist)
    chain = KeyStateChain()
    explore = eps is None
    if explore:
        eps = epsilon_after_key_state(tree, chain, cfg.eps_l, cfg.eps_h, rng)
    states = [s]
    actions: list[list[int]] = []
    rewards: list[float] = []
    views: list[tuple] = []
    t = 0
    done = success = False
    while True:
        fired = loc.update(s)
        if fired:
            for sym, sub in fired:
                chain.append((t, sym))
                registry.record(sym, sub, s)
            if not tree.one_branch and not tree.contains_path(chain.symbols):
                tree.insert(chain)
            if explore:
                eps = epsilon_after_key_state(tree, chain, cfg.eps_l, cfg.eps_h, rng)
        views.append(loc.views(env))
        if done:
            break
        a = policy.act(views[-1], eps, rng)
        s, r, done, success = env.step(a)
        actions.append(a)
        rewards.append(r)
        states.append(s)
        t += 1
    if tree.one_branch and chain:
        tree.insert(chain)
    traj = Trajectory(np.array(states, dtype=np.int64), np.array(actions, dtype=np.int64),
                      np.array(rewards), success, views)
    return traj, chain


def evaluate(
    env: GridEnv,
    policy: Policy,
    episodes: int,
    seed: int = EVAL_SEED_BASE,
    discriminators: DiscriminatorSet | None = None,
    blacklist=(),
) -> float:
    """Fraction of greedy episodes that end in success."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    rng = random.Random(seed)
    loc = Localizer(discriminators, blacklist)
    wins = 0
    for k in range(episodes):
        s = env.reset(seed + k)
        loc.reset()
        done = success = False
        while not done:
            loc.update(s)
            s, _, done, success = env.step(policy.act(loc.views(env), 0.0, rng))
        wins += int(success)
    return wins / episodes


def train(
    spec: EnvSpec,
    dset: DiscriminatorSet | None,
    reward: RewardConfig,
    cfg: LearnerConfig,
    one_branch: bool = False,
    progress=None,
) -> RunMetrics:
    cfg.validate()
    env = make_env(spec)
    eval_env = make_env(spec)
    rng = random.Random(cfg.seed)
    plan_rng = random.Random(cfg.seed + 1)
    tree = Ksmt(one_branch=one_branch)
    registry = KeyStateRegistry()
    policy = IndependentQ(env.n_agents, cfg)
    m = RunMetrics(visitation=np.zeros((env.n_agents, spec.grid_h, spec.grid_w), dtype=np.int64))
    m.tree, m.registry, m.policy = tree, registry, policy
    success_chains: list[KeyStateChain] = []
    kept: set[str] = set()
    buffer: list[tuple[Trajectory, KeyStateChain]] = []
    n_pos = 2 * env.n_agents

    for episode in range(1, cfg.max_episodes + 1):
        eps = None
        if not cfg.ksmt_explore:
            frac = min(1.0, m.total_steps / cfg.eps_anneal_steps) if cfg.eps_anneal_steps else 1.0
            eps = cfg.eps_h + (cfg.eps_l - cfg.eps_h) * frac
        traj, chain = rollout(env, policy, tree, registry, dset, cfg, rng,
                              seed=rng.getrandbits(32), eps=eps)
        T = len(traj)
        pos = traj.states[1:, :n_pos]
        for i in range(env.n_agents):
            np.add.at(m.visitation[i], (pos[:, 2 * i + 1], pos[:, 2 * i]), 1)
        if traj.success:
            m.successes += 1
            if m.steps_to_first_success is None:
                m.steps_to_first_success = m.total_steps + T
            success_chains.append(chain)
            kept |= set(chain.symbols)
            # re-prune whenever the tree holds symbols no success chain used
            if cfg.prune and (len(success_chains) == 1 or tree.symbols - kept):
                before = len(tree.symbols)
                # sample the curve before pruning so the drop shows up in it
                m.keystate_counts.append((episode, before))
                tree.prune(success_chains)
                m.prune_events.append((episode, before, len(tree.symbols)))
        m.total_steps += T
        m.episodes = episode
        buffer.append((traj, chain))
        if len(buffer) >= cfg.train_frequency:
            for tr, ch in buffer:
                rl = relabel(tr, ch, registry, tree, reward, plan_rng, plan=cfg.ksmt_plan)
                policy.update(tr, rl.r_blend)
                m.episode_returns.append(float(rl.r_blend.sum()))
            buffer.clear()
        m.keystate_counts.append((episode, len(tree.symbols)))
        if episode % cfg.eval_interval == 0:
            rate = evaluate(eval_env, policy, cfg.eval_episodes, EVAL_SEED_BASE, dset, tree.blacklist)
            m.eval_points.append((episode, m.total_steps, rate))
            if progress:
                progress(episode, m)
        if m.total_steps >= cfg.step_budget:
            break

    for tr, ch in buffer:
        rl = relabel(tr, ch, registry, tree, reward, plan_rng, plan=cfg.ksmt_plan)
        policy.update(tr, rl.r_blend)
        m.episode_returns.append(float(rl.r_blend.sum()))
    m.final_win_rate = evaluate(eval_env, policy, cfg.final_eval_episodes, EVAL_SEED_BASE + 7919,
                                 dset, tree.blacklist)
    m.blacklist = sorted(tree.blacklist)
    return m


def config_dict(cfg: LearnerConfig) -> dict:
    return asdict(cfg)

"""Tabular episodic gridworld for imitation learning with demonstration-prefix rollouts.

A rollout replays the first ``prefix_len`` actions of a demonstration and
then hands control to the learning agent. Replay can only precede agent
sampling: once the agent acts, the visited states no longer match the data.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ContractError, log_softmax_rows, sample_categorical
from .policy import Policy, init_policy

log = logging.getLogger(__name__)

ACTIONS = ("up", "down", "left", "right")
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))


@dataclass(frozen=True)
class GridMDP:
    width: int
    height: int
    start: tuple[int, int]
    goal: tuple[int, int]
    walls: frozenset = frozenset()
    step_reward: float = -0.01
    goal_reward: float = 1.0
    horizon: int = 20
    slip: float = 0.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ContractError("grid must be at least 1x1")
        for name, cell in (("start", self.start), ("goal", self.goal)):
            if not self.in_bounds(cell):
                raise ContractError(f"{name} cell {cell} is outside the grid")
            if cell in self.walls:
                raise ContractError(f"{name} cell {cell} is a wall")
        if not 0.0 <= self.slip <= 1.0:
            raise ContractError("slip must lie in [0, 1]")
        d = self.shortest_path()
        if d is not None and self.horizon < d:
            raise ContractError(f"horizon {self.horizon} is shorter than the shortest path {d}")

    @property
    def n_states(self) -> int:
        return self.width * self.height

    def in_bounds(self, cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def state_id(self, cell) -> int:
        return cell[1] * self.width + cell[0]

    def cell(self, state: int) -> tuple[int, int]:
        return (state % self.width, state // self.width)

    def move(self, cell, action: int) -> tuple[int, int]:
        dx, dy = MOVES[action]
        nxt = (cell[0] + dx, cell[1] + dy)
        if not self.in_bounds(nxt) or nxt in self.walls:
            return cell
        return nxt

    def transition(self, cell, action: int) -> list[tuple[float, tuple[int, int]]]:
        """Outcome distribution; a slip replaces the action by a uniform random one."""
        out: dict = {}
        for a in range(4):
            p = (1 - self.slip) * (a == action) + self.slip / 4
            if p:
                nxt = self.move(cell, a)
                out[nxt] = out.get(nxt, 0.0) + p
        return [(p, c) for c, p in out.items()]

    def step(self, cell, action: int, rng: np.random.Generator) -> tuple[tuple[int, int], float, bool]:
        a = action
        if self.slip and rng.random() < self.slip:
            a = int(rng.integers(4))
        nxt = self.move(cell, a)
        done = nxt == self.goal
        return nxt, self.step_reward + (self.goal_reward if done else 0.0), done

    def shortest_path(self) -> Optional[int]:
        dist = self.distances()
        return dist.get(self.start)

    def distances(self) -> dict:
        """Breadth-first step counts to the goal for every cell that can reach it."""
        dist = {self.goal: 0}
        frontier = [self.goal]
        while frontier:
            nxt_frontier = []
            for c in frontier:
                for dx, dy in MOVES:
                    prev = (c[0] - dx, c[1] - dy)
                    if self.in_bounds(prev) and prev not in self.walls and prev not in dist:
                        if self.move(prev, MOVES.index((dx, dy))) == c:
                            dist[prev] = dist[c] + 1
                            nxt_frontier.append(prev)
            frontier = nxt_frontier
        return dist


def parse_map(text: str, **kwargs) -> GridMDP:
    """Build a grid from a plain-text map: ``#`` wall, ``S`` start, ``G`` goal, ``.`` free."""
    rows = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ContractError("map rows must be non-empty and of equal width")
    walls, start, goal = set(), None, None
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch == "#":
                walls.add((x, y))
            elif ch == "S":
                start = (x, y)
            elif ch == "G":
                goal = (x, y)
            elif ch != ".":
                raise ContractError(f"unknown map character {ch!r} at row {y + 1}, column {x + 1}")
    if start is None or goal is None:
        raise ContractError("map needs exactly one S and one G")
    if "horizon" not in kwargs:
        kwargs["horizon"] = 3 * (len(rows[0]) + len(rows))
    return GridMDP(len(rows[0]), len(rows), start, goal, frozenset(walls), **kwargs)


def empty_grid(n: int, **kwargs) -> GridMDP:
    """``n x n`` grid with start top-left and goal bottom-right."""
    kwargs.setdefault("horizon", 3 * 2 * n)
    return GridMDP(n, n, (0, 0), (n - 1, n - 1), **kwargs)


@dataclass
class ValueIterationResult:
    policy: np.ndarray  # best action per state id
    values: np.ndarray
    unreachable: frozenset


def value_iteration(mdp: GridMDP, tol: float = 1e-10, max_iters: Optional[int] = None) -> ValueIterationResult:
    """Finite-horizon Bellman backups (at most ``horizon`` of them), stopping early at a fixed point.

    Ties between actions go to the lowest action index.
    """
    if not tol > 0:
        raise ContractError("tol must be positive")
    n = mdp.n_states
    cells = [mdp.cell(s) for s in range(n)]
    trans = {}
    for s, c in enumerate(cells):
        if c in mdp.walls or c == mdp.goal:
            continue
        for a in range(4):
            trans[s, a] = [(p, mdp.state_id(nc), nc == mdp.goal) for p, nc in mdp.transition(c, a)]
    values = np.zeros(n)

    def q_values(v):
        q = np.full((n, 4), -np.inf)
        for (s, a), outs in trans.items():
            q[s, a] = sum(p * (mdp.step_reward + (mdp.goal_reward if g else 0.0) + (0.0 if g else v[ns])) for p, ns, g in outs)
        return q

    iters = mdp.horizon if max_iters is None else max_iters
    for _ in range(iters):
        q = q_values(values)
        new = np.where(np.isfinite(q.max(axis=1)), q.max(axis=1), 0.0)
        if np.abs(new - values).max() < tol:
            values = new
            break
        values = new
    q = q_values(values)
    best = np.zeros(n, dtype=np.int64)
    for s in range(n):
        row = q[s]
        if np.isfinite(row).any():
            best[s] = int(np.flatnonzero(row >= row.max() - 1e-12)[0])
    reach = mdp.distances()
    unreachable = frozenset(
        mdp.state_id(c) for c in cells if c not in mdp.walls and c not in reach
    )
    return ValueIterationResult(best, values, unreachable)


@dataclass
class Trajectory:
    states: list  # cells, len = len(actions) + 1
    actions: list
    rewards: list
    replayed: int = 0  # leading actions copied from a demonstration
    diverged: bool = False

    @property
    def ret(self) -> float:
        return math.fsum(self.rewards)

    def __len__(self) -> int:
        return len(self.actions)


def agent_policy(mdp: GridMDP, init: str = "uniform", sigma: float = 0.0, seed=None) -> Policy:
    """A context-free policy over the 4 actions, keyed by state id."""
    return init_policy(4, 0, mdp.horizon, init, sigma, seed, n_cond=mdp.n_states)


def action_log_probs(agent: Policy, mdp: GridMDP, cell) -> np.ndarray:
    return agent.token_log_probs((), mdp.state_id(cell))


def expert_agent(mdp: GridMDP, expert: np.ndarray, sharpness: float = 50.0) -> Policy:
    """Near-deterministic agent table that follows a fixed action per state."""
    agent = agent_policy(mdp)
    agent.logits[np.arange(mdp.n_states), expert] = sharpness
    return agent


def rollout(mdp: GridMDP, act, rng: np.random.Generator, start_cell=None, steps_left=None) -> Trajectory:
    cell = mdp.start if start_cell is None else start_cell
    traj = Trajectory([cell], [], [])
    for _ in range(mdp.horizon if steps_left is None else steps_left):
        a = act(cell)
        cell, r, done = mdp.step(cell, a, rng)
        traj.actions.append(a)
        traj.rewards.append(r)
        traj.states.append(cell)
        if done:
            break
    return traj


def generate_demos(mdp: GridMDP, expert: np.ndarray, n: int, rng: np.random.Generator) -> list[Trajectory]:
    if n < 1:
        raise ContractError("need at least one demonstration")
    return [rollout(mdp, lambda c: int(expert[mdp.state_id(c)]), rng) for _ in range(n)]


def rollout_prefix_annealed(
    mdp: GridMDP, agent: Policy, demo: Trajectory, prefix_len: int, rng: np.random.Generator
) -> Trajectory:
    """Replay ``prefix_len`` demo actions, then sample the agent until goal or horizon."""
    if not 0 <= prefix_len <= len(demo):
        raise ContractError(f"prefix_len {prefix_len} outside 0..{len(demo)}")
    cell = mdp.start
    traj = Trajectory([cell], [], [])
    done = False
    for t in range(prefix_len):
        a = demo.actions[t]
        cell, r, done = mdp.step(cell, a, rng)
        traj.actions.append(a)
        traj.rewards.append(r)
        traj.states.append(cell)
        traj.replayed += 1
        if done:
            break
        if cell != demo.states[t + 1]:
            traj.diverged = True
            log.debug("replay diverged from the demonstration at step %d", t)
            break
    while not done and len(traj.actions) < mdp.horizon:
        a = sample_categorical(action_log_probs(agent, mdp, cell), rng)
        cell, r, done = mdp.step(cell, a, rng)
        traj.actions.append(a)
        traj.rewards.append(r)
        traj.states.append(cell)
    return traj


def policy_value(mdp: GridMDP, action_probs: np.ndarray, horizon: Optional[int] = None) -> float:
    """Expected undiscounted return from the start under a stationary stochastic policy (dynamic programming)."""
    H = mdp.horizon if horizon is None else horizon
    n = mdp.n_states
    v = np.zeros(n)
    goal = mdp.state_id(mdp.goal)
    outs = {}
    for s in range(n):
        c = mdp.cell(s)
        if c in mdp.walls or s == goal:
            continue
        outs[s] = [[(p, mdp.state_id(nc)) for p, nc in mdp.transition(c, a)] for a in range(4)]
    for _ in range(H):
        new = np.zeros(n)
        for s, per_action in outs.items():
            total = 0.0
            for a, pairs in enumerate(per_action):
                pa = action_probs[s, a]
                if not pa:
                    continue
                for p, ns in pairs:
                    r = mdp.step_reward + (mdp.goal_reward if ns == goal else 0.0)
                    total += pa * p * (r + (0.0 if ns == goal else v[ns]))
            new[s] = total
        v = new
    return float(v[mdp.state_id(mdp.start)])


def agent_action_probs(agent: Policy) -> np.ndarray:
    return np.exp(log_softmax_rows(agent.logits))


@dataclass(frozen=True)
class PrefixSchedule:
    """Prefix length annealed linearly from ``start_len`` to ``end_len`` over ``horizon`` steps."""

    start_len: int
    end_len: int = 0
    horizon: int = 1

    def __post_init__(self):
        if self.end_len > self.start_len or self.end_len < 0:
            raise ContractError("prefix schedule must be non-increasing and non-negative")
        if self.horizon < 0:
            raise ContractError("horizon must be >= 0")

    def length_at(self, step: int) -> int:
        if self.horizon == 0 or step >= self.horizon:
            return self.end_len
        f = step / self.horizon
        return int(math.ceil(self.start_len + f * (self.end_len - self.start_len)))


def default_prefix_schedule(demos: list, steps: int) -> PrefixSchedule:
    """Median demo length down to 0 over the first half of training."""
    med = int(np.median([len(d) for d in demos]))
    return PrefixSchedule(med, 0, max(steps // 2, 1))


@dataclass
class ImitationHistory:
    rows: list = field(default_factory=list)

    def to_csv(self, path=None, config_hash: Optional[str] = None) -> str:
        buf = io.StringIO()
        cols = ["step", "prefix_len", "mean_return"] + (["config_hash"] if config_hash else [])
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([r["step"], r["prefix_len"], repr(r["mean_return"])] + ([config_hash] if config_hash else []))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        return text


def train_imitation(
    mdp: GridMDP,
    demos: list,
    schedule: PrefixSchedule,
    steps: int,
    lr: float,
    rng: np.random.Generator,
    agent: Optional[Policy] = None,
    eval_every: int = 500,
    baseline_decay: float = 0.05,
) -> tuple[Policy, ImitationHistory]:
    """Anneal from demonstration replay to agent rollouts.

    Replayed actions get a plain log-likelihood step (weight 1). Agent
    actions get a return-weighted step, the weight being the return of the
    agent-sampled segment minus a running-mean baseline. The history
    records the exact expected return of the current policy every
    ``eval_every`` steps.
    """
    if not demos:
        raise ContractError("need at least one demonstration")
    agent = agent_policy(mdp) if agent is None else agent.copy()
    history = ImitationHistory()
    baseline = None
    for step in range(steps):
        demo = demos[int(rng.integers(len(demos)))]
        k = min(schedule.length_at(step), len(demo))
        traj = rollout_prefix_annealed(mdp, agent, demo, k, rng)
        probs = agent_action_probs(agent)
        grad = np.zeros_like(agent.logits)
        seg_return = math.fsum(traj.rewards[traj.replayed :])
        n_agent = len(traj) - traj.replayed
        adv = seg_return - (baseline if baseline is not None else 0.0)
        if n_agent:
            baseline = seg_return if baseline is None else baseline + baseline_decay * (seg_return - baseline)
        for t, (cell, a) in enumerate(zip(traj.states, traj.actions)):
            s = mdp.state_id(cell)
            w = 1.0 if t < traj.replayed else adv
            if not w:
                continue
            grad[s] -= w * probs[s]
            grad[s, a] += w
        agent.logits += lr * grad
        if eval_every and (step + 1) % eval_every == 0:
            history.rows.append(
                {"step": step + 1, "prefix_len": k, "mean_return": policy_value(mdp, agent_action_probs(agent))}
            )
    return agent, history


def run_imitation(
    mdp: GridMDP,
    n_demos: int,
    seed: int,
    episodes: int = 5000,
    lr: float = 0.1,
    anneal: bool = True,
    eval_every: int = 500,
) -> tuple[Policy, ImitationHistory]:
    """One seeded run: demos from the value-iteration expert, then annealed (or prefix-0) training.

    The demo stream and the training stream are spawned from ``seed``, so
    an annealed run and a prefix-0 run with the same seed see the same demos.
    """
    demo_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
    expert = value_iteration(mdp).policy
    demos = generate_demos(mdp, expert, n_demos, np.random.default_rng(demo_seq))
    schedule = default_prefix_schedule(demos, episodes) if anneal else PrefixSchedule(0, 0, 0)
    return train_imitation(mdp, demos, schedule, episodes, lr, np.random.default_rng(train_seq), eval_every=eval_every)

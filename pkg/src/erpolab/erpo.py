"""The entropy-regularized policy optimization engine.

The objective over a non-parametric ``q`` is

    L(q, theta) = E_q[R] - alpha * KL(q || p_theta) + beta * H(q)

and is maximized by alternating a closed-form E-step,
``q(y) ∝ exp((alpha * log p_theta(y) + R(y)) / (alpha + beta))``, with an
M-step that fits ``p_theta`` to ``q`` by maximum likelihood.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .core import NEG_INF, ContractError, Example, as_example, log_normalize, sample_categorical
from .policy import (
    Policy,
    apply_update,
    expected_grad,
    grad_log_prob,
    log_prob_batch,
    log_prob_seq,
)
from .rewards import RewardSpec, incremental_reward_vector, reward

DEFAULT_BUDGET = 10**6

HISTORY_COLUMNS = ("step", "objective", "expected_reward", "kl", "entropy", "probe_log_lik")


class EmptySupportError(ContractError):
    """Every sequence has weight -inf under the E-step."""


class DeadPrefixError(ContractError):
    """A prefix admits no next token with finite weight."""


class BudgetExceededError(ContractError):
    pass


@dataclass(frozen=True)
class ErpoConfig:
    """Hyperparameters ``(R, alpha, beta)`` plus optimizer settings.

    A softmax temperature ``tau`` is expressed by setting ``beta = tau``.
    ``e_step`` is ``exact`` (enumerate the sequence space) or
    ``sequential`` (draw from the token-level sampler); ``m_step`` is
    ``exact`` (full expectation under ``q``) or ``monte_carlo``.
    """

    reward: RewardSpec
    alpha: float = 0.0
    beta: float = 1.0
    e_step: str = "exact"
    m_step: str = "exact"
    n_samples: int = 1
    lr: float = 0.1
    steps: int = 100
    seed: int = 0
    batch_size: int = 1
    m_iters: int = 1
    max_norm: Optional[float] = None
    budget: int = DEFAULT_BUDGET
    track_objective: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ContractError("alpha and beta must be non-negative")
        if not self.alpha + self.beta > 0:
            raise ContractError("alpha + beta must be positive")
        if self.e_step not in ("exact", "sequential"):
            raise ContractError(f"unknown e_step {self.e_step!r}")
        if self.m_step not in ("exact", "monte_carlo"):
            raise ContractError(f"unknown m_step {self.m_step!r}")
        if self.e_step == "sequential" and self.m_step == "exact":
            raise ContractError("a sequential E-step only yields samples; use m_step='monte_carlo'")
        if self.n_samples < 1 or self.batch_size < 1 or self.m_iters < 1:
            raise ContractError("n_samples, batch_size and m_iters must be >= 1")
        if self.lr < 0 or self.steps < 0:
            raise ContractError("lr and steps must be non-negative")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["reward"] = self.reward.to_dict()
        return d


@dataclass
class VariationalDistribution:
    support: np.ndarray  # (N, L) int array, or a list of tuples in eos mode
    log_q: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_q)

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(t) for t in y): float(p) for y, p in zip(self.support, self.probs)}


def sequence_space(vocab_size: int, length: int, budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """All ``vocab_size**length`` sequences as rows, in lexicographic order."""
    n = vocab_size**length
    if n > budget:
        raise BudgetExceededError(f"sequence space of size {n} exceeds budget {budget}")
    if length == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grid = np.indices((vocab_size,) * length).reshape(length, -1).T
    return np.ascontiguousarray(grid, dtype=np.int64)


def _eos_space(policy: Policy, budget: int) -> list[tuple[int, ...]]:
    V, L, eos = policy.vocab_size, policy.length, policy.eos
    words = [v for v in range(V) if v != eos]
    out: list[tuple[int, ...]] = []
    for T in range(0, L):
        out.extend(p + (eos,) for p in itertools.product(words, repeat=T))
    out.extend(itertools.product(words, repeat=L))
    if len(out) > budget:
        raise BudgetExceededError(f"sequence space of size {len(out)} exceeds budget {budget}")
    return out


def _support(policy: Policy, budget: int):
    if policy.eos is None:
        return sequence_space(policy.vocab_size, policy.length, budget)
    return _eos_space(policy, budget)


def _log_probs(policy: Policy, support, cond) -> np.ndarray:
    if isinstance(support, np.ndarray):
        return log_prob_batch(policy, support, cond)
    return np.array([log_prob_seq(policy, y, cond) for y in support])


def exact_q(policy: Policy, config: ErpoConfig, y_star, cond=None) -> VariationalDistribution:
    """Closed-form E-step over the enumerated sequence space."""
    ex = as_example(y_star)
    cond = ex.cond if cond is None else cond
    support = _support(policy, config.budget)
    R = np.array([reward(tuple(y), ex.target, config.reward) for y in support])
    logits = R if config.alpha == 0 else config.alpha * _log_probs(policy, support, cond) + R
    logits = logits / (config.alpha + config.beta)
    if not np.isfinite(logits).any():
        raise EmptySupportError("E-step has empty support: every sequence has reward -inf")
    return VariationalDistribution(support, log_normalize(logits))


def objective_terms(
    policy: Policy, q: VariationalDistribution, config: ErpoConfig, y_star, cond=None
) -> dict[str, float]:
    """``E_q[R]``, ``KL(q || p)``, ``H(q)`` and the combined objective."""
    ex = as_example(y_star)
    cond = ex.cond if cond is None else cond
    probs = q.probs
    live = probs > 0
    support = q.support[live] if isinstance(q.support, np.ndarray) else [y for y, m in zip(q.support, live) if m]
    pq, lq = probs[live], q.log_q[live]
    R = np.array([reward(tuple(y), ex.target, config.reward) for y in support])
    lp = _log_probs(policy, support, cond) if len(pq) else np.zeros(0)
    if (R == NEG_INF).any():
        expected_reward = NEG_INF
    else:
        expected_reward = float(np.dot(pq, R))
    kl = float(np.dot(pq, lq - lp))
    entropy = float(-np.dot(pq, lq)) + 0.0  # no negative zero
    objective = expected_reward
    if config.alpha:
        objective -= config.alpha * kl
    if config.beta:
        objective += config.beta * entropy
    return {"objective": objective, "expected_reward": expected_reward, "kl": kl, "entropy": entropy}


def erpo_objective(policy: Policy, q: VariationalDistribution, config: ErpoConfig, y_star, cond=None) -> float:
    return objective_terms(policy, q, config, y_star, cond)["objective"]


def token_q_step(policy: Policy, prefix, config: ErpoConfig, y_star, cond_t: int = 0) -> np.ndarray:
    """Normalized next-token log-distribution of the token-level E-step."""
    dR = incremental_reward_vector(prefix, y_star, config.reward, policy.vocab_size)
    logits = dR if config.alpha == 0 else config.alpha * policy.token_log_probs(prefix, cond_t) + dR
    logits = logits / (config.alpha + config.beta)
    if not np.isfinite(logits).any():
        raise DeadPrefixError(f"dead prefix {tuple(prefix)}: no token has finite weight")
    return log_normalize(logits)


def sample_q_sequential(
    policy: Policy, config: ErpoConfig, y_star, rng: np.random.Generator, cond=None
) -> tuple[int, ...]:
    ex = as_example(y_star)
    cond = policy.cond_seq(ex.cond if cond is None else cond, policy.length)
    y: list[int] = []
    while len(y) < policy.length:
        if policy.eos is not None and y and y[-1] == policy.eos:
            break
        y.append(sample_categorical(token_q_step(policy, y, config, ex, cond[len(y)]), rng))
    return tuple(y)


def sequential_law(policy: Policy, config: ErpoConfig, y_star, cond=None) -> VariationalDistribution:
    """Exact law of ``sample_q_sequential`` by walking the prefix tree."""
    ex = as_example(y_star)
    cond = policy.cond_seq(ex.cond if cond is None else cond, policy.length)
    support = _support(policy, config.budget)
    cache: dict[tuple[int, ...], np.ndarray] = {}

    def step(prefix):
        if prefix not in cache:
            cache[prefix] = token_q_step(policy, prefix, config, ex, cond[len(prefix)])
        return cache[prefix]

    log_q = np.empty(len(support))
    for i, y in enumerate(support):
        y = tuple(int(t) for t in y)
        total = 0.0
        for t in range(len(y)):
            total += step(y[:t])[y[t]]
            if total == NEG_INF:
                break
        log_q[i] = total
    return VariationalDistribution(support, log_q)


def joint_vs_sequential_tv(policy: Policy, config: ErpoConfig, y_star, cond=None) -> float:
    """Total variation between the sequence-level q and the token-level sampler's law."""
    joint = exact_q(policy, config, y_star, cond)
    seq = sequential_law(policy, config, y_star, cond)
    return 0.5 * float(np.abs(joint.probs - seq.probs).sum())


def sample_from_q(q: VariationalDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` sequences from an enumerated ``q`` (vectorized)."""
    idx = rng.choice(len(q.log_q), size=n, p=q.probs / q.probs.sum())
    if isinstance(q.support, np.ndarray):
        return q.support[idx]
    return [q.support[i] for i in idx]


def m_step_grad(
    policy: Policy, q_or_samples: Union[VariationalDistribution, list, np.ndarray], config=None, cond=None
) -> np.ndarray:
    """Gradient of ``E_q[log p_theta(y)]``: exact for a distribution, Monte Carlo for samples."""
    if isinstance(q_or_samples, VariationalDistribution):
        q = q_or_samples
        if isinstance(q.support, np.ndarray):
            return expected_grad(policy, q.support, q.probs, cond)
        grad = np.zeros_like(policy.logits)
        for y, w in zip(q.support, q.probs):
            if w:
                grad += w * grad_log_prob(policy, y, cond)
        return grad
    samples = q_or_samples
    if len(samples) == 0:
        raise ContractError("Monte Carlo M-step needs at least one sample")
    if policy.eos is None:
        arr = np.asarray(samples, dtype=np.int64).reshape(len(samples), -1)
        return expected_grad(policy, arr, np.full(len(arr), 1.0 / len(arr)), cond)
    grad = np.zeros_like(policy.logits)
    for y in samples:
        grad += grad_log_prob(policy, y, cond)
    return grad / len(samples)


@dataclass
class TrainingHistory:
    columns: tuple[str, ...] = HISTORY_COLUMNS
    rows: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append(row)

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]

    def to_csv(self, path=None, config_hash: Optional[str] = None) -> str:
        buf = io.StringIO()
        cols = list(self.columns) + (["config_hash"] if config_hash else [])
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(cols)
        for r in self.rows:
            vals = [_fmt(r.get(c)) for c in self.columns]
            if config_hash:
                vals.append(config_hash)
            writer.writerow(vals)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        return text


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def seeded_streams(seed) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (data-selection, sampling) generators derived from one seed."""
    data_ss, sample_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(data_ss), np.random.default_rng(sample_ss)


def _enumerable(policy: Policy, budget: int) -> bool:
    if policy.eos is None:
        return policy.vocab_size**policy.length <= budget
    return sum(policy.vocab_size**t for t in range(policy.length + 1)) <= budget


def probe_record(policy, config, probe, q_probe=None) -> dict:
    row = {"probe_log_lik": log_prob_seq(policy, probe.target, probe.cond)}
    if q_probe is not None:
        row.update(objective_terms(policy, q_probe, config, probe))
    return row


def erpo_train(
    dataset: list,
    config: ErpoConfig,
    policy: Policy,
    schedule: Optional[Callable[[int, ErpoConfig], ErpoConfig]] = None,
    probe: Optional[Example] = None,
    history_budget: int = 4096,
) -> tuple[Policy, TrainingHistory]:
    """Stochastic EM: each step draws ``batch_size`` examples, runs the E-step, then ``m_iters`` ascent steps.

    ``schedule(step, config)`` may return a modified config per step (for
    annealing ``alpha``/``beta`` or the reward).
    """
    dataset = [as_example(ex) for ex in dataset]
    if not dataset:
        raise ContractError("dataset must be non-empty")
    probe = dataset[0] if probe is None else as_example(probe)
    data_rng, sample_rng = seeded_streams(config.seed)
    history = TrainingHistory()
    track = config.track_objective and _enumerable(policy, min(history_budget, config.budget))

    for step in range(config.steps):
        cfg = schedule(step, config) if schedule is not None else config
        picks = data_rng.integers(len(dataset), size=cfg.batch_size)
        targets = []
        for i in picks:
            ex = dataset[int(i)]
            if cfg.e_step == "exact":
                q = exact_q(policy, cfg, ex)
                target = q if cfg.m_step == "exact" else sample_from_q(q, cfg.n_samples, sample_rng)
            else:
                target = [sample_q_sequential(policy, cfg, ex, sample_rng) for _ in range(cfg.n_samples)]
            targets.append((target, ex.cond))
        q_probe = exact_q(policy, cfg, probe) if track else None
        for _ in range(cfg.m_iters):
            grad = np.zeros_like(policy.logits)
            for target, cond in targets:
                grad += m_step_grad(policy, target, cfg, cond)
            grad /= len(targets)
            policy = apply_update(policy, grad, cfg.lr, cfg.max_norm)
        history.append(step=step, **probe_record(policy, cfg, probe, q_probe))
    return policy, history

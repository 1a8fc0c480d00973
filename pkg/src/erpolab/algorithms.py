"""Named training algorithms as ``(R, alpha, beta)`` points, and the annealed interpolation between them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import NEG_INF, ContractError, Example, as_example, log_sum_exp, safe_log, sample_categorical
from .erpo import (
    DEFAULT_BUDGET,
    DeadPrefixError,
    ErpoConfig,
    TrainingHistory,
    VariationalDistribution,
    sequence_space,
    seeded_streams,
)
from .policy import Policy, apply_update, expected_grad, log_prob_batch, log_prob_seq
from .rewards import DELTA, RewardSpec, incremental_reward_vector, reward

PRESET_NAMES = ("mle", "raml", "spg", "unigram_noising", "single_token_noising", "interpolation")


@dataclass(frozen=True)
class Preset:
    name: str
    config: ErpoConfig
    notes: str = ""

    @property
    def triple(self) -> tuple[RewardSpec, float, float]:
        return self.config.reward, self.config.alpha, self.config.beta


def preset_config(
    name: str,
    task_reward: Optional[RewardSpec] = None,
    tau: float = 1.0,
    gamma: Optional[float] = None,
    unigram=None,
    **overrides,
) -> Preset:
    """Resolve a preset name to its ``(R, alpha, beta)`` configuration.

    ``overrides`` are forwarded to :class:`ErpoConfig` (learning rate,
    steps, E/M-step modes, ...).
    """
    task_reward = task_reward or RewardSpec("hamming")
    if name == "mle":
        reward, alpha, beta = DELTA, 0.0, 1.0
        notes = "delta reward: q is the point mass on the data"
    elif name == "raml":
        if tau <= 0:
            raise ContractError("raml temperature must be positive")
        reward, alpha, beta = task_reward, 0.0, float(tau)
        notes = "q ∝ exp(R / tau); the model is not used to propose samples"
    elif name == "spg":
        reward, alpha, beta = task_reward, 1.0, 0.0
        notes = "q ∝ p_theta * exp(R); gradient of log E_p[exp R]"
    elif name == "unigram_noising":
        if gamma is None or unigram is None:
            raise ContractError("unigram_noising needs gamma and unigram")
        reward = RewardSpec("unigram_noise", gamma=gamma, unigram=tuple(unigram))
        alpha, beta = 0.0, 1.0
        notes = "locally relaxed delta reward of unigram replacement"
    elif name == "single_token_noising":
        reward, alpha, beta = RewardSpec("single_token_relaxed_delta"), 0.0, 1.0
        notes = "finite only on sequences with exactly one replaced token"
    elif name == "interpolation":
        reward, alpha, beta = task_reward, 1.0, 0.0
        notes = "annealed mixture sampler (interp_train); the config is its reinforcement-learning endpoint"
    else:
        raise ContractError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    config = ErpoConfig(reward=reward, alpha=alpha, beta=beta, **overrides)
    return Preset(name, config, notes)


# RAML / SPG / data noising


def raml_distribution(y_star, tau: float, task_reward: RewardSpec, vocab_size: int, budget: int = DEFAULT_BUDGET):
    target = as_example(y_star).target
    support = sequence_space(vocab_size, len(target), budget)
    logits = np.array([reward(tuple(y), target, task_reward) for y in support]) / tau
    lse = log_sum_exp(logits)
    return VariationalDistribution(support, logits - lse)


def _hamming_edit_log_weights(T: int, vocab_size: int, tau: float) -> np.ndarray:
    m = np.arange(T + 1)
    log_comb = np.array([math.lgamma(T + 1) - math.lgamma(k + 1) - math.lgamma(T - k + 1) for k in m])
    with np.errstate(divide="ignore"):
        log_alt = m * np.log(vocab_size - 1) if vocab_size > 1 else np.where(m == 0, 0.0, NEG_INF)
    return log_comb + log_alt - m / (tau * T)


def raml_sample(
    y_star,
    tau: float,
    task_reward: RewardSpec,
    vocab_size: int,
    rng: np.random.Generator,
    method: str = "enumerate",
    size: Optional[int] = None,
    budget: int = DEFAULT_BUDGET,
):
    """Draw from the exponentiated-reward distribution ``exp(R / tau) / Z``.

    ``hamming_stratified`` draws an edit count first and is exact only for
    the hamming reward. Returns one tuple, or a list of ``size`` tuples.
    """
    if tau <= 0:
        raise ContractError("tau must be positive")
    target = as_example(y_star).target
    n = 1 if size is None else size
    if method == "enumerate":
        q = raml_distribution(target, tau, task_reward, vocab_size, budget)
        idx = rng.choice(len(q.log_q), size=n, p=q.probs / q.probs.sum())
        out = [tuple(int(t) for t in q.support[i]) for i in idx]
    elif method == "hamming_stratified":
        if task_reward.kind != "hamming":
            raise ContractError("hamming_stratified sampling is only exact for the hamming reward")
        T = len(target)
        w = _hamming_edit_log_weights(T, vocab_size, tau)
        probs = np.exp(w - log_sum_exp(w))
        out = []
        for m in rng.choice(T + 1, size=n, p=probs):
            y = list(target)
            for pos in rng.choice(T, size=int(m), replace=False):
                alt = int(rng.integers(vocab_size - 1))
                y[pos] = alt if alt < target[pos] else alt + 1
            out.append(tuple(y))
    else:
        raise ContractError(f"unknown raml sampling method {method!r}")
    return out[0] if size is None else out


def spg_objective(policy: Policy, task_reward: RewardSpec, y_star, cond=None, budget: int = DEFAULT_BUDGET) -> float:
    """``log E_{p_theta}[exp R(y | y*)]`` by enumeration."""
    ex = as_example(y_star)
    cond = ex.cond if cond is None else cond
    support = sequence_space(policy.vocab_size, policy.length, budget)
    R = np.array([reward(tuple(y), ex.target, task_reward) for y in support])
    return log_sum_exp(log_prob_batch(policy, support, cond) + R)


def noise_unigram(y_star, gamma: float, u, rng: np.random.Generator) -> tuple[int, ...]:
    """Replace each token independently with probability ``gamma`` by a draw from ``u``."""
    if not 0.0 <= gamma <= 1.0:
        raise ContractError("gamma must lie in [0, 1]")
    log_u = [safe_log(x) for x in u]
    out = []
    for tok in as_example(y_star).target:
        if rng.random() < gamma:
            out.append(sample_categorical(log_u, rng))
        else:
            out.append(tok)
    return tuple(out)


# Interpolation


@dataclass(frozen=True)
class MixtureWeights:
    """Branch probabilities (model, task reward, delta reward) and softmax scale ``c``."""

    l1: float
    l2: float
    l3: float
    c: float = 1.0

    def __post_init__(self):
        lam = (self.l1, self.l2, self.l3)
        if min(lam) < 0 or abs(sum(lam) - 1.0) > 1e-12:
            raise ContractError(f"mixture weights {lam} are not on the simplex")
        if not self.c > 0:
            raise ContractError("softmax scale c must be positive")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.l1, self.l2, self.l3)


def _simplex(w, what: str) -> tuple[float, float, float]:
    w = tuple(float(x) for x in w)
    if len(w) != 3 or min(w) < 0 or abs(sum(w) - 1.0) > 1e-12:
        raise ContractError(f"{what} {w} is not a point on the 3-simplex")
    return w


@dataclass(frozen=True)
class AnnealSchedule:
    """Monotone path from ``start`` to ``end`` on the weight simplex.

    ``linear`` and ``exponential`` move along the straight segment;
    ``piecewise`` follows ``points``, a list of ``(step, weights)``
    keypoints starting at step 0. The delta weight never drops below
    ``floor``: progress simply stops where it would.
    """

    kind: str = "linear"
    start: tuple = (0.0, 0.0, 1.0)
    end: tuple = (0.4, 0.4, 0.2)
    horizon: int = 100
    floor: float = 0.0
    rate: float = 5.0
    points: tuple = ()
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "exponential", "piecewise"):
            raise ContractError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "piecewise":
            if len(self.points) < 2:
                raise ContractError("piecewise schedule needs at least two keypoints")
            steps = [int(s) for s, _ in self.points]
            if steps[0] != 0 or any(b <= a for a, b in zip(steps, steps[1:])):
                raise ContractError("piecewise keypoints must start at 0 and strictly increase")
            path = [_simplex(w, "keypoint") for _, w in self.points]
        else:
            if self.horizon < 0:
                raise ContractError("horizon must be >= 0")
            path = [_simplex(self.start, "start weights"), _simplex(self.end, "end weights")]
        for a, b in zip(path, path[1:]):
            if b[0] < a[0] or b[1] < a[1] or b[2] > a[2]:
                raise ContractError("schedule must not decrease l1/l2 or increase l3")
        if not 0.0 <= self.floor <= path[0][2]:
            raise ContractError("floor must lie between 0 and the starting delta weight")
        if not self.c > 0:
            raise ContractError("c must be positive")

    def _path(self) -> list[tuple[float, tuple]]:
        """Keypoints as (step, weights)."""
        if self.kind == "piecewise":
            return [(float(s), _simplex(w, "keypoint")) for s, w in self.points]
        return [(0.0, _simplex(self.start, "")), (float(self.horizon), _simplex(self.end, ""))]

    def progress(self, step: int) -> float:
        """Position along the path in keypoint-step units."""
        if self.kind == "exponential" and self.horizon > 0:
            s = min(step, self.horizon) / self.horizon
            return self.horizon * (1 - math.exp(-self.rate * s)) / (1 - math.exp(-self.rate))
        return float(step)

    def weights_at(self, step: int) -> tuple[float, float, float]:
        path = self._path()
        pos = self.progress(max(step, 0))
        w = path[-1][1]
        for (s0, w0), (s1, w1) in zip(path, path[1:]):
            if pos < s1:
                f = (pos - s0) / (s1 - s0)
                w = tuple(a + f * (b - a) for a, b in zip(w0, w1))
                break
        if w[2] < self.floor:
            w = self._floor_point(path)
        w = tuple(max(x, 0.0) for x in w)
        total = sum(w)
        return tuple(x / total for x in w)

    def _floor_point(self, path) -> tuple:
        for (_, w0), (_, w1) in zip(path, path[1:]):
            if w1[2] <= self.floor <= w0[2]:
                f = (w0[2] - self.floor) / (w0[2] - w1[2]) if w0[2] != w1[2] else 0.0
                w = [a + f * (b - a) for a, b in zip(w0, w1)]
                w[2] = self.floor
                return tuple(w)
        return path[-1][1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "start": list(self.start),
            "end": list(self.end),
            "horizon": self.horizon,
            "floor": self.floor,
            "rate": self.rate,
            "points": [[s, list(w)] for s, w in self.points],
            "c": self.c,
        }


def default_schedule(total_steps: int, c: float = 1.0) -> AnnealSchedule:
    """Linear from pure data sampling to (0.4, 0.4, 0.2) over the first 60% of training."""
    return AnnealSchedule("linear", (0.0, 0.0, 1.0), (0.4, 0.4, 0.2), max(int(round(0.6 * total_steps)), 1), c=c)


def frozen_schedule(weights=(0.0, 0.0, 1.0), c: float = 1.0) -> AnnealSchedule:
    return AnnealSchedule("linear", tuple(weights), tuple(weights), 0, c=c)


def interp_weights(step: int, schedule: AnnealSchedule) -> MixtureWeights:
    if step < 0:
        raise ContractError("step must be >= 0")
    return MixtureWeights(*schedule.weights_at(step), c=schedule.c)


def sample_interpolated(
    policy: Policy,
    y_star,
    weights: MixtureWeights,
    comm: RewardSpec,
    rng: np.random.Generator,
    delta: RewardSpec = DELTA,
    cond=None,
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Token-level spike-and-slab sampler.

    Each position draws a branch ``z`` from the mixture weights, then a
    token from ``softmax(c * log p)`` (z=1), ``softmax(c * dR_comm)`` (z=2)
    or ``softmax(c * dR_delta)`` (z=3). Branches whose weights are all -inf
    at the current prefix (the delta branch once the prefix has left the
    data) are renormalized away for that position.
    """
    ex = as_example(y_star)
    cond = policy.cond_seq(ex.cond if cond is None else cond, policy.length)
    V, c = policy.vocab_size, weights.c
    y: list[int] = []
    z: list[int] = []
    for t in range(policy.length):
        branch = [None, None, None]
        lam = list(weights.as_tuple())
        if lam[1] > 0:
            branch[1] = incremental_reward_vector(y, ex, comm, V)
            if not np.isfinite(branch[1]).any():
                lam[1] = 0.0
        if lam[2] > 0:
            branch[2] = incremental_reward_vector(y, ex, delta, V)
            if not np.isfinite(branch[2]).any():
                lam[2] = 0.0
        if sum(lam) <= 0:
            raise DeadPrefixError(f"no live branch at prefix {tuple(y)}")
        zt = sample_categorical([safe_log(x) for x in lam], rng)
        if zt == 0:
            logits = c * policy.token_log_probs(y, cond[t])
        else:
            logits = c * branch[zt]
        y.append(sample_categorical(logits, rng))
        z.append(zt + 1)
    return tuple(y), tuple(z)


def expected_log_weights(
    policy: Policy,
    prefix,
    y_star,
    weights: MixtureWeights,
    comm: RewardSpec,
    delta: RewardSpec = DELTA,
    cond_t: int = 0,
) -> np.ndarray:
    """Branch-averaged next-token log-weights ``c * sum_k lambda_k * f_k``; zero-weight branches are dropped."""
    out = np.zeros(policy.vocab_size)
    if weights.l1:
        out += weights.l1 * policy.token_log_probs(prefix, cond_t)
    if weights.l2:
        out += weights.l2 * incremental_reward_vector(prefix, y_star, comm, policy.vocab_size)
    if weights.l3:
        out += weights.l3 * incremental_reward_vector(prefix, y_star, delta, policy.vocab_size)
    return weights.c * out


def interp_m_step(policy: Policy, batch, lr: float, max_norm: Optional[float] = None, conds=None) -> Policy:
    """One ascent step on the mean log-likelihood of the sampled sequences; z traces are not used."""
    if len(batch) == 0:
        raise ContractError("interpolation M-step needs a non-empty batch")
    conds = conds if conds is not None else [None] * len(batch)
    grad = np.zeros_like(policy.logits)
    for item, cond in zip(batch, conds):
        seq = item[0] if isinstance(item[0], (tuple, list)) else item
        grad += expected_grad(policy, np.asarray([seq], dtype=np.int64), np.ones(1), cond)
    grad /= len(batch)
    return apply_update(policy, grad, lr, max_norm)


@dataclass(frozen=True)
class InterpConfig:
    comm: RewardSpec = field(default_factory=lambda: RewardSpec("hamming"))
    delta: RewardSpec = DELTA
    lr: float = 0.1
    steps: int = 100
    batch_size: int = 1
    seed: int = 0
    max_norm: Optional[float] = None

    def __post_init__(self):
        if self.lr < 0 or self.steps < 0 or self.batch_size < 1:
            raise ContractError("invalid interpolation config: need lr >= 0, steps >= 0, batch_size >= 1")

    def to_dict(self) -> dict:
        return {
            "comm": self.comm.to_dict(),
            "delta": self.delta.to_dict(),
            "lr": self.lr,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "max_norm": self.max_norm,
        }


INTERP_COLUMNS = ("step", "l1", "l2", "l3", "c", "sample_reward", "z1", "z2", "z3", "probe_log_lik")


def interp_train(
    dataset: list,
    schedule: AnnealSchedule,
    config: InterpConfig,
    policy: Policy,
    probe: Optional[Example] = None,
) -> tuple[Policy, TrainingHistory]:
    """Anneal the mixture weights while fitting the policy to its own mixture samples.

    Example selection and sampling use the same seeded streams as
    ``erpo_train``, so a schedule frozen at pure data sampling reproduces
    maximum-likelihood training step for step.
    """
    dataset = [as_example(ex) for ex in dataset]
    if not dataset:
        raise ContractError("dataset must be non-empty")
    probe = dataset[0] if probe is None else as_example(probe)
    data_rng, sample_rng = seeded_streams(config.seed)
    history = TrainingHistory(columns=INTERP_COLUMNS)
    for step in range(config.steps):
        w = interp_weights(step, schedule)
        picks = data_rng.integers(len(dataset), size=config.batch_size)
        batch, conds = [], []
        for i in picks:
            ex = dataset[int(i)]
            batch.append(sample_interpolated(policy, ex, w, config.comm, sample_rng, config.delta))
            conds.append(ex.cond)
        policy = interp_m_step(policy, batch, config.lr, config.max_norm, conds)
        zs = np.concatenate([np.asarray(zt) for _, zt in batch])
        rewards = [reward(y, dataset[int(i)].target, config.comm) for (y, _), i in zip(batch, picks)]
        history.append(
            step=step,
            l1=w.l1,
            l2=w.l2,
            l3=w.l3,
            c=w.c,
            sample_reward=float(np.mean(rewards)),
            z1=float(np.mean(zs == 1)),
            z2=float(np.mean(zs == 2)),
            z3=float(np.mean(zs == 3)),
            probe_log_lik=log_prob_seq(policy, probe.target, probe.cond),
        )
    return policy, history

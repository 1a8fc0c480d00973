"""Brute-force ground truth over small sequence spaces.

Nothing here reuses the engine's vectorized paths: sequences come from
``itertools.product``, conditionals are recomputed from the raw logit
table, and sums are taken in probability space with ``math.fsum`` (log
space above ``DIRECT_LIMIT`` sequences). Oracles never sample.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Mapping, Optional, Union

import numpy as np

from .core import ContractError, as_example
from .policy import Policy
from .rewards import RewardSpec, reward

DIRECT_LIMIT = 10**4
NEG_INF = float("-inf")


class OracleBudgetError(ContractError):
    pass


@dataclass(frozen=True)
class EnumeratedSpace:
    vocab_size: int
    length: int
    sequences: tuple

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)


def enumerate_space(vocab_size: int, length: int, budget: int = 10**6) -> EnumeratedSpace:
    if vocab_size**length > budget:
        raise OracleBudgetError(f"{vocab_size}**{length} sequences exceed the oracle budget {budget}")
    seqs = tuple(itertools.product(range(vocab_size), repeat=length))
    return EnumeratedSpace(vocab_size, length, seqs)


def _conditional(policy: Policy, prefix: tuple, cond_t: int) -> list[float]:
    V, k = policy.vocab_size, policy.order
    ctx = prefix[len(prefix) - k :] if k and prefix else ()
    n_ctx = sum(V**j for j in range(k + 1))
    row = cond_t * n_ctx + sum(V**j for j in range(len(ctx)))
    for i, tok in enumerate(reversed(ctx)):
        row += tok * V**i
    logits = [float(x) for x in policy.logits[row]]
    m = max(logits)
    e = [math.exp(x - m) for x in logits]
    z = math.fsum(e)
    return [x / z for x in e]


def _cond(policy: Policy, cond, length: int) -> tuple:
    return (0,) * length if cond is None else tuple(cond)


def oracle_prob(policy: Policy, y, cond=None) -> float:
    y = tuple(y)
    cond = _cond(policy, cond, len(y))
    p = 1.0
    for t, tok in enumerate(y):
        p *= _conditional(policy, y[:t], cond[t])[tok]
    return p


def oracle_log_prob(policy: Policy, y, cond=None) -> float:
    y = tuple(y)
    cond = _cond(policy, cond, len(y))
    return math.fsum(math.log(_conditional(policy, y[:t], cond[t])[tok]) for t, tok in enumerate(y))


def _reward_fn(spec_or_fn, target):
    if isinstance(spec_or_fn, RewardSpec):
        return lambda y: reward(y, target, spec_or_fn)
    return lambda y: spec_or_fn(y, target)


@dataclass
class OracleDistribution:
    """A normalized table ``{sequence: probability}`` with its log-probabilities."""

    table: dict

    def prob(self, y) -> float:
        return self.table.get(tuple(y), 0.0)

    def log_prob(self, y) -> float:
        p = self.prob(y)
        return math.log(p) if p > 0 else NEG_INF


def oracle_q(
    policy: Policy,
    reward_spec: Union[RewardSpec, Callable],
    alpha: float,
    beta: float,
    y_star,
    space: EnumeratedSpace,
    cond=None,
) -> OracleDistribution:
    """Closed-form ``q ∝ p^(alpha/(alpha+beta)) * exp(R/(alpha+beta))`` by direct evaluation."""
    if not alpha + beta > 0:
        raise ContractError("alpha + beta must be positive")
    ex = as_example(y_star)
    cond = ex.cond if cond is None else cond
    R = _reward_fn(reward_spec, ex.target)
    temp = alpha + beta
    rewards = {y: R(y) for y in space}
    finite = [r for r in rewards.values() if r != NEG_INF]
    if not finite:
        raise ContractError("oracle q has empty support")
    if len(space) <= DIRECT_LIMIT:
        r_max = max(finite)
        expo = alpha / temp
        weights = {}
        for y, r in rewards.items():
            if r == NEG_INF:
                weights[y] = 0.0
                continue
            w = math.exp((r - r_max) / temp)
            if expo:
                w *= oracle_prob(policy, y, cond) ** expo
            weights[y] = w
        z = math.fsum(weights.values())
        return OracleDistribution({y: w / z for y, w in weights.items()})
    logw = {}
    for y, r in rewards.items():
        lw = NEG_INF if r == NEG_INF else r / temp
        if alpha and lw != NEG_INF:
            lw += alpha * oracle_log_prob(policy, y, cond) / temp
        logw[y] = lw
    m = max(logw.values())
    lz = m + math.log(math.fsum(math.exp(v - m) for v in logw.values() if v != NEG_INF))
    return OracleDistribution({y: (math.exp(v - lz) if v != NEG_INF else 0.0) for y, v in logw.items()})


def _dist_prob(dist, space: EnumeratedSpace, cond) -> Callable:
    if isinstance(dist, Policy):
        return lambda y: oracle_prob(dist, y, cond)
    if isinstance(dist, OracleDistribution):
        return dist.prob
    if isinstance(dist, Mapping):
        return lambda y: dist.get(tuple(y), 0.0)
    if hasattr(dist, "support") and hasattr(dist, "log_q"):
        table = {tuple(int(t) for t in y): math.exp(lq) for y, lq in zip(dist.support, dist.log_q)}
        return lambda y: table.get(tuple(y), 0.0)
    raise ContractError(f"cannot read probabilities from {type(dist).__name__}")


def oracle_expected(dist, f: Callable, space: EnumeratedSpace, cond=None) -> float:
    """Exact ``sum_y dist(y) f(y)``; zero-probability terms are skipped."""
    prob = _dist_prob(dist, space, cond)
    terms = []
    for y in space:
        p = prob(y)
        if p > 0:
            terms.append(p * f(y))
    return math.fsum(terms)


def oracle_entropy(dist, space: EnumeratedSpace, cond=None) -> float:
    prob = _dist_prob(dist, space, cond)
    return -math.fsum(p * math.log(p) for p in (prob(y) for y in space) if p > 0)


def oracle_kl(q, p, space: EnumeratedSpace, cond=None) -> float:
    qp, pp = _dist_prob(q, space, cond), _dist_prob(p, space, cond)
    terms = []
    for y in space:
        a = qp(y)
        if a > 0:
            b = pp(y)
            if b == 0:
                return math.inf
            terms.append(a * (math.log(a) - math.log(b)))
    return math.fsum(terms)


def oracle_spg_objective(policy: Policy, reward_spec, y_star, space: EnumeratedSpace, cond=None) -> float:
    """``log E_p[exp R]`` in probability space."""
    ex = as_example(y_star)
    cond = ex.cond if cond is None else cond
    R = _reward_fn(reward_spec, ex.target)
    vals = {y: R(y) for y in space}
    m = max(v for v in vals.values())
    s = math.fsum(oracle_prob(policy, y, cond) * math.exp(v - m) for y, v in vals.items() if v != NEG_INF)
    return m + math.log(s)


def finite_diff_grad(fn: Callable[[Policy], float], policy: Policy, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn`` w.r.t. every logit."""
    if not h > 0:
        raise ContractError("finite-difference step must be positive")
    base = policy.logits
    grad = np.zeros_like(base)
    for idx in np.ndindex(*base.shape):
        plus = base.copy()
        plus[idx] += h
        minus = base.copy()
        minus[idx] -= h
        f_plus = fn(Policy(policy.vocab_size, policy.order, policy.length, plus, policy.n_cond, policy.eos))
        f_minus = fn(Policy(policy.vocab_size, policy.order, policy.length, minus, policy.n_cond, policy.eos))
        grad[idx] = (f_plus - f_minus) / (2 * h)
    return grad


@dataclass
class OracleCheck:
    name: str
    seed: int
    tolerance: float
    max_deviation: float
    passed: bool
    instances: int = 1
    detail: str = ""


def check(name: str, deviations: Iterable[float], tolerance: float, seed: int, detail: str = "") -> OracleCheck:
    devs = list(deviations)
    worst = max(devs) if devs else 0.0
    ok = bool(np.isfinite(worst) and worst <= tolerance)
    return OracleCheck(name, seed, tolerance, float(worst), ok, len(devs), detail)


def write_report(checks: list, path=None, extra: Optional[dict] = None) -> str:
    payload = dict(extra or {})
    payload["checks"] = [asdict(c) for c in checks]
    payload["passed"] = all(c.passed for c in checks)
    text = json.dumps(payload, indent=2, ensure_ascii=False)
    if path is not None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    return text

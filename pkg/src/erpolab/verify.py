"""Oracle cross-checks of the algorithm equivalences, gradients and samplers.

Each check returns an :class:`~erpolab.oracle.OracleCheck` with the worst
deviation seen over a seeded suite of random instances.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from . import oracle
from .algorithms import (
    InterpConfig,
    MixtureWeights,
    frozen_schedule,
    interp_train,
    noise_unigram,
    preset_config,
    raml_sample,
    sample_interpolated,
    spg_objective,
)
from .core import Example, sample_categorical
from .erpo import BudgetExceededError, ErpoConfig, erpo_train, exact_q, m_step_grad, sample_q_sequential
from .oracle import OracleCheck, check
from .policy import grad_log_prob, init_policy, sample_seq
from .rewards import KINDS, RewardSpec, incremental_reward, noising_diagnostic, reward

SUITES = ("equivalences", "gradients", "samplers", "all")


def random_instance(rng: np.random.Generator, max_v: int = 4, max_l: int = 4, max_k: int = 2, budget: int = 10**6):
    """A random gaussian-initialized policy and target that fit the budget."""
    _require(budget, 2, "a random instance")
    while True:
        V = int(rng.integers(2, max_v + 1))
        L = int(rng.integers(1, max_l + 1))
        if V**L <= budget:
            break
    k = int(rng.integers(0, max_k + 1))
    policy = init_policy(V, k, L, "gaussian", 1.0, seed=int(rng.integers(2**31)))
    y_star = tuple(int(t) for t in rng.integers(V, size=L))
    return policy, y_star


def _require(budget: int, size: int, what: str) -> None:
    if size > budget:
        raise BudgetExceededError(f"{what} needs a sequence space of {size} > budget {budget}")


def check_mle_equivalence(n: int = 100, seed: int = 0, budget: int = 10**6) -> OracleCheck:
    rng = np.random.default_rng(seed)
    devs = []
    cfg = preset_config("mle").config
    for _ in range(n):
        policy, y_star = random_instance(rng, budget=budget)
        g = m_step_grad(policy, exact_q(policy, cfg, y_star), cfg)
        devs.append(float(np.abs(g - grad_log_prob(policy, y_star)).max()))
    return check("mle_equivalence", devs, 1e-12, seed)


def check_raml_equivalence(n: int = 100, seed: int = 1, taus=(0.5, 1.0, 2.0), budget: int = 10**6) -> OracleCheck:
    """exact_q under (R, alpha=0, beta=tau) against an independently enumerated exp(R/tau)/Z."""
    rng = np.random.default_rng(seed)
    devs = []
    for i in range(n):
        policy, y_star = random_instance(rng, budget=budget)
        task = RewardSpec("hamming") if i % 2 == 0 else RewardSpec("ngram_match", n=2)
        space = oracle.enumerate_space(policy.vocab_size, policy.length)
        for tau in taus:
            q = exact_q(policy, preset_config("raml", task, tau).config, y_star)
            w = [math.exp(reward(y, y_star, task) / tau) for y in space]
            z = math.fsum(w)
            ref = dict(zip(space.sequences, (x / z for x in w)))
            devs.append(max(abs(p - ref[tuple(int(t) for t in y)]) for y, p in zip(q.support, q.probs)))
    return check("raml_equivalence", devs, 1e-10, seed, f"taus={list(taus)}")


def check_spg_identity(n: int = 50, seed: int = 2, h: float = 1e-5, budget: int = 10**6) -> OracleCheck:
    """Finite-difference gradient of log E_p[exp R] against the exact M-step gradient at alpha=1, beta=0.

    Deviation is ``max |g - fd| / max |fd|`` (norm-relative).
    """
    rng = np.random.default_rng(seed)
    devs = []
    for i in range(n):
        policy, y_star = random_instance(rng, max_v=3, max_l=3, max_k=1, budget=budget)
        task = RewardSpec("hamming") if i % 2 == 0 else RewardSpec("ngram_match", n=2)
        space = oracle.enumerate_space(policy.vocab_size, policy.length)
        fd = oracle.finite_diff_grad(lambda p: oracle.oracle_spg_objective(p, task, y_star, space), policy, h)
        cfg = preset_config("spg", task).config
        g = m_step_grad(policy, exact_q(policy, cfg, y_star), cfg)
        devs.append(float(np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12)))
    return check("spg_identity", devs, 1e-4, seed, "norm-relative")


def check_limits(n: int = 20, seed: int = 3, budget: int = 10**6) -> list[OracleCheck]:
    rng = np.random.default_rng(seed)
    dev_alpha, dev_beta = [], []
    task = RewardSpec("hamming")
    for _ in range(n):
        policy, y_star = random_instance(rng, budget=budget)
        space = oracle.enumerate_space(policy.vocab_size, policy.length)
        q = exact_q(policy, ErpoConfig(task, alpha=1e6, beta=0.0), y_star)
        dev_alpha.append(max(abs(p - oracle.oracle_prob(policy, tuple(y))) for y, p in zip(q.support, q.probs)))
        q = exact_q(policy, ErpoConfig(task, alpha=0.0, beta=1e6), y_star)
        dev_beta.append(float(np.abs(q.probs - 1.0 / len(space)).max()))
    return [
        check("limit_alpha_large_q_equals_p", dev_alpha, 1e-4, seed),
        check("limit_beta_large_q_uniform", dev_beta, 1e-4, seed),
    ]


def check_noising(n: int = 20, seed: int = 4, print_laws: bool = False, budget: int = 10**6) -> OracleCheck:
    """TV between softmax of the unigram-noise reward and the noiser's law, against gamma*max u(y*_t)*T + 0.01.

    The deviation reported is the excess TV over that bound (<= 0 passes).
    """
    _require(budget, 9, "noising diagnostic")
    rng = np.random.default_rng(seed)
    excess, tables = [], []
    for _ in range(n):
        y_star = tuple(int(t) for t in rng.integers(3, size=2))
        gamma = float(rng.uniform(0.05, 0.95))
        u = rng.dirichlet(np.ones(3))
        u = u / u.sum()
        diag = noising_diagnostic(y_star, gamma, u, 3)
        bound = gamma * max(u[t] for t in y_star) * len(y_star) + 0.01
        excess.append(diag.tv - bound)
        if print_laws:
            tables.append(f"y*={list(y_star)} gamma={gamma:.3f} u={np.round(u, 3).tolist()}\n{diag.table()}")
    if print_laws:
        print("\n\n".join(tables))
    return check("noising_diagnostic_tv_bound", excess, 0.0, seed, "deviation = TV - bound")


def _reward_zoo(V: int) -> list[RewardSpec]:
    u = tuple(np.full(V, 1.0 / V))
    return [
        RewardSpec("delta"),
        RewardSpec("hamming"),
        RewardSpec("ngram_match", n=1),
        RewardSpec("ngram_match", n=2),
        RewardSpec("unigram_noise", gamma=0.3, unigram=u),
        RewardSpec("single_token_relaxed_delta"),
        RewardSpec("interpolated", lam=0.4, base=RewardSpec("hamming")),
    ]


def check_telescoping(seed: int = 5, budget: int = 10**6) -> OracleCheck:
    """Sum of token increments equals the whole-sequence reward wherever finite (V <= 3, L <= 4, every y)."""
    _require(budget, 81, "telescoping")
    rng = np.random.default_rng(seed)
    devs = []
    for V in (2, 3):
        for L in (1, 2, 3, 4):
            y_star = tuple(int(t) for t in rng.integers(V, size=L))
            for spec in _reward_zoo(V):
                assert spec.kind in KINDS
                for y in oracle.enumerate_space(V, L):
                    whole = reward(y, y_star, spec)
                    inc = [incremental_reward(y[:t], y[t], y_star, spec) for t in range(L)]
                    total = math.fsum(inc) if all(x != float("-inf") for x in inc) else float("-inf")
                    if whole == float("-inf") or total == float("-inf"):
                        devs.append(0.0 if whole == total else math.inf)
                    else:
                        devs.append(abs(total - whole))
    return check("telescoping", devs, 1e-10, seed)


def check_oracle_q_agreement(n: int = 100, seed: int = 6, budget: int = 10**6) -> OracleCheck:
    rng = np.random.default_rng(seed)
    devs = []
    for i in range(n):
        policy, y_star = random_instance(rng, budget=budget)
        alpha, beta = float(rng.uniform(0, 2)), float(rng.uniform(0.1, 2))
        spec = _reward_zoo(policy.vocab_size)[i % 7]
        space = oracle.enumerate_space(policy.vocab_size, policy.length)
        try:
            q = exact_q(policy, ErpoConfig(spec, alpha, beta), y_star)
        except Exception:
            continue
        oq = oracle.oracle_q(policy, spec, alpha, beta, y_star, space)
        devs.append(max(abs(p - oq.prob(tuple(int(t) for t in y))) for y, p in zip(q.support, q.probs)))
    return check("exact_q_vs_oracle_q", devs, 1e-10, seed)


def check_policy_gradients(n: int = 100, seed: int = 7, h: float = 1e-5, budget: int = 10**6) -> OracleCheck:
    rng = np.random.default_rng(seed)
    devs = []
    for _ in range(n):
        policy, y = random_instance(rng, max_v=3, max_l=3, budget=budget)
        fd = oracle.finite_diff_grad(lambda p: oracle.oracle_log_prob(p, y), policy, h)
        devs.append(float(np.abs(grad_log_prob(policy, y) - fd).max()))
    return check("policy_loglik_gradient", devs, 1e-6, seed)


def check_spg_gradient(n: int = 20, seed: int = 8, budget: int = 10**6) -> OracleCheck:
    """Finite differences of the engine's spg_objective against the exact M-step gradient."""
    rng = np.random.default_rng(seed)
    devs = []
    task = RewardSpec("hamming")
    for _ in range(n):
        policy, y_star = random_instance(rng, max_v=3, max_l=3, max_k=1, budget=budget)
        fd = oracle.finite_diff_grad(lambda p: spg_objective(p, task, y_star), policy)
        cfg = preset_config("spg", task).config
        g = m_step_grad(policy, exact_q(policy, cfg, y_star), cfg)
        devs.append(float(np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12)))
    return check("spg_objective_gradient", devs, 1e-4, seed, "norm-relative")


def _chi2_pvalue(observed: dict, expected: dict, n: int) -> float:
    keys = sorted(expected)
    obs = np.array([observed.get(k, 0) for k in keys], dtype=float)
    exp = np.array([expected[k] * n for k in keys])
    if sum(observed.get(k, 0) for k in observed if k not in expected):
        return 0.0
    return float(stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue)


def _counts(draws) -> dict:
    out: dict = {}
    for d in draws:
        out[d] = out.get(d, 0) + 1
    return out


def _pvalue_check(name: str, pvalues: list, seed: int) -> OracleCheck:
    # deviation is 1 - p; pass iff every p > 0.001
    return check(name, [1.0 - p for p in pvalues], 0.999, seed, f"min p-value={min(pvalues):.4g}")


def check_interp_endpoints(seed: int = 9, n_spike: int = 10**4, n_law: int = 10**5) -> list[OracleCheck]:
    rng = np.random.default_rng(seed)
    policy = init_policy(3, 1, 2, "gaussian", 1.0, seed=seed)
    y_star = (2, 0)
    comm = RewardSpec("hamming")
    spike = MixtureWeights(0.0, 0.0, 1.0)
    misses = 0
    for _ in range(n_spike):
        y, z = sample_interpolated(policy, y_star, spike, comm, rng)
        misses += (y != y_star) or any(v != 3 for v in z)
    space = oracle.enumerate_space(3, 2)
    expected = {y: oracle.oracle_prob(policy, y) for y in space}
    model = MixtureWeights(1.0, 0.0, 0.0)
    draws = [sample_interpolated(policy, y_star, model, comm, rng)[0] for _ in range(n_law)]
    p = _chi2_pvalue(_counts(draws), expected, n_law)
    return [
        check("interp_spike_endpoint_deviations", [float(misses)], 0.0, seed, f"{n_spike} draws"),
        _pvalue_check("interp_model_endpoint_chi2", [p], seed),
    ]


def check_interp_matches_mle(seed: int = 10, steps: int = 60) -> OracleCheck:
    """A schedule frozen at pure data sampling reproduces the MLE preset's training history."""
    rng = np.random.default_rng(seed)
    data = [Example(tuple(int(t) for t in rng.integers(3, size=3))) for _ in range(4)]
    policy = init_policy(3, 1, 3, "gaussian", 0.5, seed=seed)
    mle = preset_config("mle", lr=0.3, steps=steps, seed=seed).config
    _, h_mle = erpo_train(data, mle, policy)
    _, h_int = interp_train(data, frozen_schedule(), InterpConfig(lr=0.3, steps=steps, seed=seed), policy)
    a, b = h_mle.column("probe_log_lik"), h_int.column("probe_log_lik")
    return check("interp_frozen_matches_mle_history", [abs(x - y) for x, y in zip(a, b)], 1e-10, seed)


def check_samplers(seed: int = 11, n: int = 10**5) -> list[OracleCheck]:
    rng = np.random.default_rng(seed)
    out = []
    # categorical
    w = [0.0, 1.0, 2.0]
    draws = [sample_categorical(w, rng) for _ in range(n)]
    probs = np.exp(w) / np.exp(w).sum()
    out.append(_pvalue_check("categorical_chi2", [_chi2_pvalue(_counts(draws), dict(enumerate(probs)), n)], seed))
    # policy ancestral sampling
    policy = init_policy(3, 1, 2, "gaussian", 1.0, seed=seed)
    space = oracle.enumerate_space(3, 2)
    expected = {y: oracle.oracle_prob(policy, y) for y in space}
    draws = [sample_seq(policy, rng) for _ in range(n)]
    out.append(_pvalue_check("policy_sampler_chi2", [_chi2_pvalue(_counts(draws), expected, n)], seed))
    # sequential q sampler at alpha -> infinity follows the model
    cfg = ErpoConfig(RewardSpec("hamming"), alpha=1e6, beta=0.0)
    draws = [sample_q_sequential(policy, cfg, (1, 2), rng) for _ in range(n)]
    out.append(_pvalue_check("sequential_q_alpha_limit_chi2", [_chi2_pvalue(_counts(draws), expected, n)], seed))
    # RAML enumerate sampler
    task = RewardSpec("hamming")
    y_star = (0, 1, 1)
    s3 = oracle.enumerate_space(2, 3)
    w = {y: math.exp(reward(y, y_star, task)) for y in s3}
    z = math.fsum(w.values())
    raml_law = {y: v / z for y, v in w.items()}
    draws = raml_sample(y_star, 1.0, task, 2, rng, size=n)
    out.append(_pvalue_check("raml_enumerate_chi2", [_chi2_pvalue(_counts(draws), raml_law, n)], seed))
    strat = raml_sample(y_star, 1.0, task, 2, rng, method="hamming_stratified", size=n)
    emp = _counts(strat)
    tv = 0.5 * sum(abs(emp.get(y, 0) / n - raml_law[y]) for y in s3)
    out.append(check("raml_stratified_vs_law_tv", [tv], 0.01, seed))
    # unigram noiser against its procedural law
    gamma, u, y_noise = 0.5, (0.2, 0.3, 0.5), (0, 2)
    proc = {y: math.prod((1 - gamma) * (a == b) + gamma * u[a] for a, b in zip(y, y_noise)) for y in space}
    draws = [noise_unigram(y_noise, gamma, u, rng) for _ in range(n)]
    out.append(_pvalue_check("unigram_noiser_chi2", [_chi2_pvalue(_counts(draws), proc, n)], seed))
    return out


def run_suite(name: str, budget: int = 10**6) -> list[OracleCheck]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    _require(budget, 81, f"suite {name!r}")
    checks: list[OracleCheck] = []
    if name in ("equivalences", "all"):
        checks.append(check_mle_equivalence(budget=budget))
        checks.append(check_raml_equivalence(budget=budget))
        checks.append(check_spg_identity(budget=budget))
        checks.extend(check_limits(budget=budget))
        checks.append(check_noising(budget=budget))
        checks.append(check_telescoping(budget=budget))
        checks.append(check_oracle_q_agreement(budget=budget))
        checks.append(check_interp_matches_mle())
    if name in ("gradients", "all"):
        checks.append(check_policy_gradients(budget=budget))
        checks.append(check_spg_gradient(budget=budget))
    if name in ("samplers", "all"):
        checks.extend(check_samplers())
        checks.extend(check_interp_endpoints())
    return checks

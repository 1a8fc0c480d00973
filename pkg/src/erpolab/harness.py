"""Synthetic transduction tasks, evaluation, and seed-replicated method comparisons."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .algorithms import (
    AnnealSchedule,
    Preset,
    InterpConfig,
    default_schedule,
    interp_train,
    preset_config,
)
from .core import ContractError, Example
from .erpo import erpo_train
from .policy import Policy, beam_decode, init_policy, log_prob_seq, sample_seq
from .rewards import RewardSpec, hamming_reward, ngram_match_reward

TASKS = ("copy", "reverse", "templated")


@dataclass(frozen=True)
class TaskSpec:
    """A synthetic transduction task.

    ``corruption`` replaces each training-target token, with that
    probability, by a uniformly drawn different token (test targets stay
    clean). ``cond_window`` is how many aligned source tokens the policy
    sees per position: 1 gives the token aligned with ``y_t``, 2 adds the
    token aligned with ``y_{t-1}``.
    """

    name: str = "copy"
    vocab_size: int = 4
    length: int = 5
    n_train: int = 100
    n_dev: int = 20
    n_test: int = 50
    corruption: float = 0.0
    seed: int = 0
    cond_window: int = 2

    def __post_init__(self):
        if self.name not in TASKS:
            raise ContractError(f"unknown task {self.name!r}; expected one of {TASKS}")
        if self.vocab_size < 2 or self.length < 1:
            raise ContractError("task needs vocab_size >= 2 and length >= 1")
        if self.n_train + self.n_dev + self.n_test > self.vocab_size**self.length:
            raise ContractError("splits need more distinct sources than the sequence space holds")
        if not 0.0 <= self.corruption <= 1.0:
            raise ContractError("corruption must lie in [0, 1]")
        if self.cond_window not in (1, 2):
            raise ContractError("cond_window must be 1 or 2")

    @property
    def n_cond(self) -> int:
        V = self.vocab_size
        return V if self.cond_window == 1 else V * (V + 1)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class TaskData:
    spec: TaskSpec
    train: list
    dev: list
    test: list

    def new_policy(self, order: int = 1, init: str = "uniform", sigma: float = 0.0, seed=None) -> Policy:
        return init_policy(self.spec.vocab_size, order, self.spec.length, init, sigma, seed, self.spec.n_cond)


def _alignment(name: str, L: int) -> list[int]:
    return list(range(L))[::-1] if name == "reverse" else list(range(L))


def _cond_ids(spec: TaskSpec, source) -> tuple[int, ...]:
    V = spec.vocab_size
    align = _alignment(spec.name, len(source))
    if spec.cond_window == 1:
        return tuple(source[j] for j in align)
    out = []
    for t, j in enumerate(align):
        prev = source[align[t - 1]] if t else V
        out.append(source[j] * (V + 1) + prev)
    return tuple(out)


def _grammar(spec: TaskSpec, rng: np.random.Generator):
    """Seeded first-order Markov source grammar and target token map for the templated task."""
    V = spec.vocab_size
    trans = rng.dirichlet(np.full(V, 0.5), size=V + 1)
    perm = rng.permutation(V)
    return trans, perm


def make_task(spec: TaskSpec) -> TaskData:
    """Generate disjoint train/dev/test splits deterministically from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    V, L = spec.vocab_size, spec.length
    total = spec.n_train + spec.n_dev + spec.n_test
    grammar = _grammar(spec, rng) if spec.name == "templated" else None
    seen: set = set()
    sources: list = []
    attempts = 0
    while len(sources) < total:
        attempts += 1
        if attempts > 200 * total:
            raise ContractError("could not draw enough distinct sources")
        if grammar is None:
            src = tuple(int(x) for x in rng.integers(V, size=L))
        else:
            trans, _ = grammar
            prev, src_l = V, []
            for _ in range(L):
                prev = int(rng.choice(V, p=trans[prev]))
                src_l.append(prev)
            src = tuple(src_l)
        if src not in seen:
            seen.add(src)
            sources.append(src)

    def target_of(src):
        if spec.name == "copy":
            return src
        if spec.name == "reverse":
            return src[::-1]
        return tuple(int(grammar[1][x]) for x in src)

    def corrupt(y):
        out = list(y)
        for t in range(len(out)):
            if rng.random() < spec.corruption:
                alt = int(rng.integers(V - 1))
                out[t] = alt if alt < out[t] else alt + 1
        return tuple(out)

    examples = []
    for i, src in enumerate(sources):
        y = target_of(src)
        if i < spec.n_train and spec.corruption:
            y = corrupt(y)
        examples.append(Example(y, source=src, cond=_cond_ids(spec, src)))
    tr, dv = spec.n_train, spec.n_train + spec.n_dev
    return TaskData(spec, examples[:tr], examples[tr:dv], examples[dv:])


def stressed_first_token(example: Example, vocab_size: int) -> int:
    """A deterministic wrong first token, used to start decoding off the data manifold."""
    return (example.target[0] + 1) % vocab_size


def decode(policy: Policy, example: Example, method: str = "greedy", width: int = 1, rng=None, prefix=()):
    if method == "greedy":
        return beam_decode(policy, 1, example.cond, prefix)
    if method == "beam":
        return beam_decode(policy, width, example.cond, prefix)
    if method == "sample":
        if rng is None:
            raise ContractError("sample decoding needs an rng")
        return sample_seq(policy, rng, example.cond, prefix)
    raise ContractError(f"unknown decode method {method!r}")


METRICS = ("hamming", "ngram", "exact_match", "log_lik", "hamming_stressed")


def evaluate(
    policy: Policy,
    examples: list,
    method: str = "greedy",
    width: int = 1,
    rng=None,
    ngram_order: int = 2,
) -> dict:
    """Mean test metrics; ``hamming_stressed`` decodes after a forced wrong first token."""
    if not examples:
        raise ContractError("evaluate needs at least one example")
    V = policy.vocab_size
    acc = {m: [] for m in METRICS}
    for ex in examples:
        y = decode(policy, ex, method, width, rng)
        acc["hamming"].append(hamming_reward(y, ex.target))
        acc["ngram"].append(ngram_match_reward(y, ex.target, ngram_order))
        acc["exact_match"].append(float(tuple(y) == ex.target))
        acc["log_lik"].append(log_prob_seq(policy, ex.target, ex.cond))
        ys = decode(policy, ex, method, width, rng, prefix=(stressed_first_token(ex, V),))
        acc["hamming_stressed"].append(hamming_reward(ys, ex.target))
    return {m: float(np.mean(v)) for m, v in acc.items()}


@dataclass(frozen=True)
class MethodSpec:
    """One trainable method: an ERPO preset, or the annealed interpolation."""

    name: str
    preset: str = "mle"
    steps: int = 1000
    lr: float = 0.5
    batch_size: int = 8
    order: int = 1
    tau: float = 1.0
    task_reward: RewardSpec = field(default_factory=lambda: RewardSpec("hamming"))
    schedule: Optional[AnnealSchedule] = None
    c: float = 1.0
    n_samples: int = 1
    gamma: Optional[float] = None
    unigram: Optional[tuple] = None
    reward: Optional[RewardSpec] = None  # explicit (R, alpha, beta) overrides of the preset's triple
    alpha: Optional[float] = None
    beta: Optional[float] = None

    def preset_for(self, **overrides) -> Preset:
        preset = preset_config(self.preset, self.task_reward, self.tau, self.gamma, self.unigram, **overrides)
        triple = {k: v for k, v in (("reward", self.reward), ("alpha", self.alpha), ("beta", self.beta)) if v is not None}
        if triple:
            preset = replace(preset, config=replace(preset.config, **triple))
        return preset

    def resolved(self) -> dict:
        """Provenance: the ``(R, alpha, beta)`` triple and schedule this method trains with."""
        preset = self.preset_for()
        out = {
            "method": self.name,
            "preset": self.preset,
            "reward": preset.config.reward.to_dict(),
            "alpha": preset.config.alpha,
            "beta": preset.config.beta,
            "steps": self.steps,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "order": self.order,
        }
        if self.preset == "interpolation":
            out["schedule"] = self.schedule_for().to_dict()
        return out

    def schedule_for(self) -> AnnealSchedule:
        return self.schedule if self.schedule is not None else default_schedule(self.steps, self.c)


def train_method(method: MethodSpec, data: TaskData, seed: int) -> Policy:
    policy = data.new_policy(method.order)
    probe = data.train[0]
    if method.preset == "interpolation":
        cfg = InterpConfig(comm=method.task_reward, lr=method.lr, steps=method.steps, batch_size=method.batch_size, seed=seed)
        policy, _ = interp_train(data.train, method.schedule_for(), cfg, policy, probe)
        return policy
    preset = method.preset_for(
        e_step="sequential",
        m_step="monte_carlo",
        n_samples=method.n_samples,
        lr=method.lr,
        steps=method.steps,
        seed=seed,
        batch_size=method.batch_size,
        track_objective=False,
    )
    policy, _ = erpo_train(data.train, preset.config, policy, probe=probe)
    return policy


@dataclass
class EvalReport:
    raw: list = field(default_factory=list)  # one row per (method, seed)
    provenance: dict = field(default_factory=dict)
    task: dict = field(default_factory=dict)

    @property
    def aggregated(self) -> list:
        rows = []
        for name in dict.fromkeys(r["method"] for r in self.raw):
            cells = [r for r in self.raw if r["method"] == name]
            row = {"method": name, "n_seeds": len(cells), "std_defined": len(cells) > 1}
            for m in METRICS:
                vals = np.array([c[m] for c in cells])
                row[f"{m}_mean"] = float(vals.mean())
                row[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            row.update({k: v for k, v in self.provenance[name].items() if k in ("alpha", "beta", "preset")})
            rows.append(row)
        return rows

    def per_seed(self, method: str, metric: str) -> list:
        return [r[metric] for r in self.raw if r["method"] == method]

    def to_csv(self, path=None, config_hash: Optional[str] = None) -> str:
        return _write_csv(self.aggregated, path, config_hash)

    def raw_csv(self, path=None, config_hash: Optional[str] = None) -> str:
        return _write_csv(self.raw, path, config_hash)

    def long_csv(self, path=None, config_hash: Optional[str] = None) -> str:
        rows = [
            {"method": r["method"], "seed": r["seed"], "metric": m, "value": r[m]} for r in self.raw for m in METRICS
        ]
        return _write_csv(rows, path, config_hash)

    def to_json(self, path=None, config_hash: Optional[str] = None) -> str:
        payload = {"task": self.task, "methods": self.provenance, "aggregated": self.aggregated, "raw": self.raw}
        if config_hash:
            payload["config_hash"] = config_hash
        text = json.dumps(payload, indent=2, ensure_ascii=False)
        if path is not None:
            with open(path, "w", encoding="utf-8") as f:
                f.write(text + "\n")
        return text


def _write_csv(rows: list, path, config_hash) -> str:
    buf = io.StringIO()
    if rows:
        cols = list(rows[0].keys()) + (["config_hash"] if config_hash else [])
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\r\n")
        w.writeheader()
        for r in rows:
            out = {k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()}
            if config_hash:
                out["config_hash"] = config_hash
            w.writerow(out)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    return text


def _run_cell(args):
    method, data, seed = args
    policy = train_method(method, data, seed)
    row = {"method": method.name, "seed": seed}
    row.update(evaluate(policy, data.test))
    return row


def run_comparison(task: TaskSpec, methods: list, seeds: list, threads: int = 1) -> EvalReport:
    """Train every method under every seed on one task instance and evaluate on its test split."""
    if not seeds:
        raise ContractError("run_comparison needs at least one seed")
    if not methods:
        raise ContractError("run_comparison needs at least one method")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ContractError("method names must be unique")
    data = make_task(task)
    cells = [(m, data, s) for m in methods for s in seeds]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(_run_cell, cells))
    else:
        raw = [_run_cell(c) for c in cells]
    return EvalReport(raw, {m.name: m.resolved() for m in methods}, task.to_dict())

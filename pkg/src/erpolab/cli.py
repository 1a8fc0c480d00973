"""Config-driven command line: ``erpolab train | verify | compare``.

Configs are YAML mappings with a strict schema. Validation errors name the
file and line of the offending key. Exit codes: 0 success, 1 validation,
2 runtime, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np
import yaml

from . import verify
from .algorithms import PRESET_NAMES, AnnealSchedule, InterpConfig, interp_train
from .core import ContractError
from .erpo import erpo_train
from .gridworld import GridMDP, empty_grid, parse_map, run_imitation
from .harness import MethodSpec, TaskSpec, make_task, run_comparison
from .oracle import write_report
from .policy import save_checkpoint
from .rewards import RewardSpec

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


class ConfigError(Exception):
    def __init__(self, msg: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {msg}")


# Loading with line numbers


@dataclass
class Node:
    """A YAML value plus the line it starts on (1-based)."""

    value: Any
    line: int


def _wrap(node: yaml.Node) -> Node:
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            out[k.value] = (k.start_mark.line + 1, _wrap(v))
        return Node(out, line)
    if isinstance(node, yaml.SequenceNode):
        return Node([_wrap(v) for v in node.value], line)
    return Node(yaml.safe_load(yaml.serialize(node)), line)


def load_config_text(text: str, source: str = "<config>") -> Node:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(e, 'problem', e)}", mark.line + 1 if mark else None, source)
    if root is None or not isinstance(root, yaml.MappingNode):
        raise ConfigError("config must be a mapping", 1, source)
    return _wrap(root)


# Schema


class _Ctx:
    def __init__(self, source: str):
        self.source = source

    def fail(self, msg: str, line: Optional[int]):
        raise ConfigError(msg, line, self.source)


def _scalar(kind: type, name: str) -> Callable:
    def conv(node: Node, ctx: _Ctx):
        v = node.value
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if kind is int and isinstance(v, float) and v.is_integer():
            v = int(v)
        if not isinstance(v, kind) or (kind is not bool and isinstance(v, bool)):
            ctx.fail(f"expected {name}, got {v!r}", node.line)
        return v

    return conv


INT, FLOAT, STR, BOOL = _scalar(int, "an integer"), _scalar(float, "a number"), _scalar(str, "a string"), _scalar(bool, "a boolean")


def _list_of(conv: Callable) -> Callable:
    def f(node: Node, ctx: _Ctx):
        if not isinstance(node.value, list):
            ctx.fail("expected a list", node.line)
        return [conv(n, ctx) for n in node.value]

    return f


def _plain(node: Node):
    v = node.value
    if isinstance(v, dict):
        return {k: _plain(n) for k, (_, n) in v.items()}
    if isinstance(v, list):
        return [_plain(n) for n in v]
    return v


def _mapping(node: Node, ctx: _Ctx, schema: dict, what: str) -> dict:
    if not isinstance(node.value, dict):
        ctx.fail(f"{what} must be a mapping", node.line)
    out = {}
    for key, (kline, child) in node.value.items():
        if key not in schema:
            ctx.fail(f"unknown key {key!r} in {what}; allowed: {sorted(schema)}", kline)
        out[key] = schema[key](child, ctx)
    return out


def _reward(node: Node, ctx: _Ctx) -> RewardSpec:
    if not isinstance(node.value, dict):
        ctx.fail("reward must be a mapping with a 'kind'", node.line)
    try:
        return RewardSpec.from_dict(_plain(node))
    except (ContractError, TypeError) as e:
        ctx.fail(f"reward: {e}", node.line)


def _schedule(node: Node, ctx: _Ctx) -> dict:
    schema = {
        "kind": STR,
        "start": _list_of(FLOAT),
        "end": _list_of(FLOAT),
        "horizon": INT,
        "floor": FLOAT,
        "rate": FLOAT,
        "points": lambda n, c: _plain(n),
        "c": FLOAT,
    }
    d = _mapping(node, ctx, schema, "schedule")
    d["line"] = node.line
    return d


TASK_SCHEMA = {
    "name": STR,
    "vocab_size": INT,
    "length": INT,
    "n_train": INT,
    "n_dev": INT,
    "n_test": INT,
    "corruption": FLOAT,
    "seed": INT,
    "cond_window": INT,
}

METHOD_SCHEMA = {
    "name": STR,
    "preset": STR,
    "steps": INT,
    "lr": FLOAT,
    "batch_size": INT,
    "order": INT,
    "tau": FLOAT,
    "task_reward": _reward,
    "reward": _reward,
    "alpha": FLOAT,
    "beta": FLOAT,
    "c": FLOAT,
    "schedule": _schedule,
    "n_samples": INT,
    "gamma": FLOAT,
    "unigram": _list_of(FLOAT),
    "e_step": STR,
    "m_step": STR,
    "max_norm": FLOAT,
}

GRID_SCHEMA = {
    "map": STR,
    "size": INT,
    "slip": FLOAT,
    "horizon": INT,
    "step_reward": FLOAT,
    "goal_reward": FLOAT,
    "demos": lambda n, c: _list_of(INT)(n, c) if isinstance(n.value, list) else [INT(n, c)],
    "episodes": INT,
    "lr": FLOAT,
    "eval_every": INT,
    "anneal": BOOL,
}

TOP_SCHEMA = {
    "mode": STR,
    "task": lambda n, c: _mapping(n, c, TASK_SCHEMA, "task") | {"line": n.line},
    "method": lambda n, c: _mapping(n, c, METHOD_SCHEMA, "method") | {"line": n.line},
    "methods": lambda n, c: _methods(n, c),
    "gridworld": lambda n, c: _mapping(n, c, GRID_SCHEMA, "gridworld") | {"line": n.line},
    "seeds": _list_of(INT),
    "out": STR,
    "budget": INT,
    "threads": INT,
}


def _methods(node: Node, ctx: _Ctx) -> list:
    if not isinstance(node.value, list):
        ctx.fail("methods must be a list", node.line)
    return [_mapping(n, ctx, METHOD_SCHEMA, "method") | {"line": n.line} for n in node.value]


# Resolution into library objects


def _build_schedule(d: Optional[dict], ctx: _Ctx) -> Optional[AnnealSchedule]:
    if d is None:
        return None
    d = dict(d)
    line = d.pop("line")
    for key in ("start", "end"):
        if key in d:
            d[key] = tuple(d[key])
    if "points" in d:
        try:
            d["points"] = tuple((int(s), tuple(float(x) for x in w)) for s, w in d["points"])
        except (TypeError, ValueError):
            ctx.fail("schedule points must be [step, [l1, l2, l3]] pairs", line)
    try:
        return AnnealSchedule(**d)
    except ContractError as e:
        ctx.fail(f"schedule: {e}", line)


def build_method(d: dict, ctx: _Ctx, index: int = 0) -> tuple[MethodSpec, dict]:
    """A MethodSpec plus the ERPO-only extras (E/M-step modes, clipping)."""
    d = dict(d)
    line = d.pop("line")
    extras = {k: d.pop(k) for k in ("e_step", "m_step", "max_norm") if k in d}
    preset = d.get("preset", "mle")
    if preset not in PRESET_NAMES:
        ctx.fail(f"unknown preset {preset!r}; expected one of {PRESET_NAMES}", line)
    d.setdefault("name", preset if index == 0 else f"{preset}_{index}")
    if "schedule" in d and "c" in d:
        ctx.fail("give 'c' inside the schedule when a schedule is set", line)
    d["schedule"] = _build_schedule(d.get("schedule"), ctx)
    if "unigram" in d:
        d["unigram"] = tuple(d["unigram"])
    try:
        spec = MethodSpec(**d)
        spec.resolved()
        if spec.preset == "interpolation":
            spec.schedule_for()
    except ContractError as e:
        ctx.fail(f"method {d['name']!r}: {e}", line)
    return spec, extras


def build_task(d: dict, ctx: _Ctx) -> TaskSpec:
    d = dict(d)
    line = d.pop("line")
    try:
        return TaskSpec(**d)
    except ContractError as e:
        ctx.fail(f"task: {e}", line)


def build_grid(d: dict, ctx: _Ctx, config_dir: str) -> GridMDP:
    d = {k: v for k, v in d.items() if k in ("map", "size", "slip", "horizon", "step_reward", "goal_reward", "line")}
    line = d.pop("line")
    kw = {k: d[k] for k in ("slip", "horizon", "step_reward", "goal_reward") if k in d}
    if "map" in d and "size" in d:
        ctx.fail("gridworld takes either 'map' or 'size', not both", line)
    try:
        if "map" in d:
            path = d["map"] if os.path.isabs(d["map"]) else os.path.join(config_dir, d["map"])
            try:
                with open(path, encoding="utf-8") as f:
                    return parse_map(f.read(), **kw)
            except OSError as e:
                ctx.fail(f"cannot read map: {e}", line)
        return empty_grid(d.get("size", 4), **kw)
    except ContractError as e:
        ctx.fail(f"gridworld: {e}", line)


@dataclass
class Experiment:
    raw: dict  # validated plain config, before object construction
    task: Optional[TaskSpec]
    grid: Optional[GridMDP]
    methods: list  # (MethodSpec, extras) pairs
    seeds: list
    out: Optional[str]
    budget: int
    threads: int
    mode: str

    @property
    def resolved(self) -> dict:
        """Everything that determines results; hashed into every output."""
        out: dict = {"mode": self.mode, "seeds": self.seeds, "budget": self.budget}
        if self.task is not None:
            out["task"] = self.task.to_dict()
        if self.grid is not None:
            g = {k: v for k, v in self.raw["gridworld"].items() if k != "line"}
            g["mdp"] = {
                "width": self.grid.width,
                "height": self.grid.height,
                "start": list(self.grid.start),
                "goal": list(self.grid.goal),
                "walls": sorted(list(w) for w in self.grid.walls),
                "step_reward": self.grid.step_reward,
                "goal_reward": self.grid.goal_reward,
                "horizon": self.grid.horizon,
                "slip": self.grid.slip,
            }
            g.pop("map", None)
            out["gridworld"] = g
        if self.methods:
            out["methods"] = [dict(m.resolved(), **extras) for m, extras in self.methods]
        return out

    @property
    def config_hash(self) -> str:
        return config_hash(self.resolved)


def config_hash(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=list)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def parse_experiment(
    text: str,
    source: str = "<config>",
    command: str = "train",
    seeds: Optional[list] = None,
    out: Optional[str] = None,
    budget: Optional[int] = None,
    threads: Optional[int] = None,
    config_dir: str = ".",
) -> Experiment:
    """Validate a config, apply command-line overrides, and build every object before any run."""
    ctx = _Ctx(source)
    root = load_config_text(text, source)
    raw = _mapping(root, ctx, TOP_SCHEMA, "config")
    seeds = seeds if seeds is not None else raw.get("seeds", [0])
    out = out if out is not None else raw.get("out")
    budget = budget if budget is not None else raw.get("budget", 10**6)
    threads = threads if threads is not None else raw.get("threads", 1)
    if not seeds:
        ctx.fail("at least one seed is required", root.line)
    if budget < 1 or threads < 1:
        ctx.fail("budget and threads must be positive", root.line)
    if "task" in raw and "gridworld" in raw:
        ctx.fail("config takes either 'task' or 'gridworld', not both", raw["gridworld"]["line"])
    grid = build_grid(raw["gridworld"], ctx, config_dir) if "gridworld" in raw else None
    task = build_task(raw["task"], ctx) if "task" in raw else None
    if grid is None and task is None:
        task = TaskSpec()
    methods: list = []
    if command == "train":
        if "methods" in raw:
            ctx.fail("train takes a single 'method'; use compare for a method list", raw["methods"][0]["line"] if raw["methods"] else root.line)
        if len(seeds) != 1:
            ctx.fail(f"train runs one seed, got {len(seeds)}", root.line)
        default_mode = "gridworld" if grid is not None else "erpo"
        mode = raw.get("mode", default_mode)
        if mode not in ("erpo", "interp", "gridworld"):
            ctx.fail(f"unknown mode {mode!r}; expected erpo, interp or gridworld", root.line)
        if (mode == "gridworld") != (grid is not None):
            ctx.fail("mode 'gridworld' needs a 'gridworld' section and vice versa", root.line)
        if grid is None:
            m = dict(raw.get("method", {"line": root.line}))
            if mode == "interp":
                m.setdefault("preset", "interpolation")
            spec, extras = build_method(m, ctx)
            if (spec.preset == "interpolation") != (mode == "interp"):
                ctx.fail("mode 'interp' goes with preset 'interpolation' and vice versa", m["line"])
            if mode == "erpo":
                _check_erpo_extras(spec, extras, task, budget, ctx, m["line"])
            methods = [(spec, extras)]
        elif "method" in raw:
            ctx.fail("gridworld training is configured in the 'gridworld' section", raw["method"]["line"])
        if grid is not None and len(raw["gridworld"].get("demos", [4])) != 1:
            ctx.fail("train takes a single demo count", raw["gridworld"]["line"])
    else:
        mode = "gridworld" if grid is not None else "compare"
        if "mode" in raw:
            ctx.fail("'mode' only applies to train", root.line)
        if grid is None:
            if "methods" not in raw:
                ctx.fail("compare needs a 'methods' list", root.line)
            if not raw["methods"]:
                ctx.fail("methods list is empty", root.line)
            methods = [build_method(m, ctx, i) for i, m in enumerate(raw["methods"])]
            for (spec, extras), m in zip(methods, raw["methods"]):
                if extras:
                    ctx.fail("e_step/m_step/max_norm are train-only options", m["line"])
            names = [s.name for s, _ in methods]
            if len(set(names)) != len(names):
                ctx.fail(f"method names must be unique, got {names}", root.line)
        elif "methods" in raw or "method" in raw:
            ctx.fail("a gridworld compare takes no methods; it compares annealed vs prefix-0 training", root.line)
    return Experiment(raw, task, grid, methods, list(seeds), out, budget, threads, mode)


def _check_erpo_extras(spec: MethodSpec, extras: dict, task: TaskSpec, budget: int, ctx: _Ctx, line: int):
    enumerable = task.vocab_size**task.length <= budget
    extras.setdefault("e_step", "exact" if enumerable else "sequential")
    extras.setdefault("m_step", "exact" if extras["e_step"] == "exact" else "monte_carlo")
    if extras["e_step"] == "exact" and not enumerable:
        ctx.fail(f"exact E-step needs {task.vocab_size}**{task.length} <= budget {budget}", line)
    try:
        spec.preset_for(e_step=extras["e_step"], m_step=extras["m_step"], max_norm=extras.get("max_norm"))
    except ContractError as e:
        ctx.fail(f"method {spec.name!r}: {e}", line)


# Commands


def _write_json(payload: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, indent=2, ensure_ascii=False) + "\n")


def _write_rows(rows: list, path: str, config_hash: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\r\n")
        w.writerow(list(rows[0].keys()) + ["config_hash"])
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.values()] + [config_hash])


def cmd_train(exp: Experiment) -> list[str]:
    os.makedirs(exp.out, exist_ok=True)
    h = exp.config_hash
    seed = exp.seeds[0]
    paths = [os.path.join(exp.out, n) for n in ("checkpoint.txt", "history.csv", "resolved_config.json")]
    if exp.mode == "gridworld":
        g = exp.raw["gridworld"]
        policy, history = run_imitation(
            exp.grid,
            g.get("demos", [4])[0],
            seed,
            g.get("episodes", 5000),
            g.get("lr", 0.1),
            g.get("anneal", True),
            g.get("eval_every", 500),
        )
        history.to_csv(paths[1], config_hash=h)
    else:
        spec, extras = exp.methods[0]
        data = make_task(exp.task)
        policy = data.new_policy(spec.order)
        if exp.mode == "interp":
            cfg = InterpConfig(comm=spec.task_reward, lr=spec.lr, steps=spec.steps, batch_size=spec.batch_size, seed=seed)
            policy, history = interp_train(data.train, spec.schedule_for(), cfg, policy, data.train[0])
        else:
            preset = spec.preset_for(
                lr=spec.lr,
                steps=spec.steps,
                seed=seed,
                batch_size=spec.batch_size,
                n_samples=spec.n_samples,
                budget=exp.budget,
                **extras,
            )
            policy, history = erpo_train(data.train, preset.config, policy, probe=data.train[0])
        history.to_csv(paths[1], config_hash=h)
    save_checkpoint(policy, paths[0], header_extra=f"config_hash {h}")
    _write_json({"config_hash": h, "config": exp.resolved}, paths[2])
    return paths


def cmd_compare(exp: Experiment) -> list[str]:
    os.makedirs(exp.out, exist_ok=True)
    h = exp.config_hash
    if exp.mode == "gridworld":
        return _compare_gridworld(exp, h)
    report = run_comparison(exp.task, [m for m, _ in exp.methods], exp.seeds, exp.threads)
    names = ("report.csv", "report.json", "report_long.csv", "report_raw.csv")
    paths = [os.path.join(exp.out, n) for n in names]
    report.to_csv(paths[0], h)
    report.to_json(paths[1], h)
    report.long_csv(paths[2], h)
    report.raw_csv(paths[3], h)
    return paths


def _compare_gridworld(exp: Experiment, h: str) -> list[str]:
    g = exp.raw["gridworld"]
    raw = []
    for n_demos in g.get("demos", [1, 2, 4, 8]):
        for seed in exp.seeds:
            for method, anneal in (("annealed", True), ("prefix0", False)):
                _, hist = run_imitation(
                    exp.grid, n_demos, seed, g.get("episodes", 5000), g.get("lr", 0.1), anneal, g.get("eval_every", 500)
                )
                raw.append({"demos": n_demos, "method": method, "seed": seed, "final_return": hist.rows[-1]["mean_return"]})
    table = []
    for n_demos in dict.fromkeys(r["demos"] for r in raw):
        for method in ("annealed", "prefix0"):
            vals = np.array([r["final_return"] for r in raw if r["demos"] == n_demos and r["method"] == method])
            table.append(
                {
                    "demos": n_demos,
                    "method": method,
                    "n_seeds": len(vals),
                    "return_mean": float(vals.mean()),
                    "return_std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
                    "std_defined": len(vals) > 1,
                }
            )
    paths = [os.path.join(exp.out, n) for n in ("gridworld_table.csv", "gridworld_raw.csv", "gridworld.json")]
    _write_rows(table, paths[0], h)
    _write_rows(raw, paths[1], h)
    _write_json({"config_hash": h, "config": exp.resolved, "table": table, "raw": raw}, paths[2])
    return paths


def cmd_verify(suite: str, budget: int, out: Optional[str]) -> tuple[int, str]:
    checks = verify.run_suite(suite, budget)
    h = config_hash({"suite": suite, "budget": budget})
    text = write_report(checks, None, {"suite": suite, "budget": budget, "config_hash": h})
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "verification.json"), "w", encoding="utf-8") as f:
            f.write(text + "\n")
    return (EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY), text


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be a comma-separated list of integers, got {text!r}")


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        v = 0
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="erpolab", description="Entropy-regularized policy optimization experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("train", "train one method"), ("compare", "compare methods over seeds")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="YAML experiment config")
        s.add_argument("--out", help="output directory (overrides the config's 'out')")
        s.add_argument("--seeds", type=_seed_list, help="comma-separated seeds")
        s.add_argument("--budget", type=_positive, help="max enumerated sequence-space size")
        s.add_argument("--threads", type=_positive, help="parallel (method, seed) cells")
    s = sub.add_parser("verify", help="run oracle cross-checks")
    s.add_argument("suite", choices=verify.SUITES)
    s.add_argument("--out", help="directory for verification.json")
    s.add_argument("--budget", type=_positive, default=10**6)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            code, text = cmd_verify(args.suite, args.budget, args.out)
            print(text)
            return code
        try:
            with open(args.config, encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            print(f"erpolab: cannot read config: {e}", file=sys.stderr)
            return EXIT_VALIDATION
        exp = parse_experiment(
            text,
            args.config,
            args.command,
            args.seeds,
            args.out,
            args.budget,
            args.threads,
            os.path.dirname(os.path.abspath(args.config)),
        )
        if not exp.out:
            raise ConfigError("no output directory: set 'out' or pass --out", None, args.config)
        paths = cmd_train(exp) if args.command == "train" else cmd_compare(exp)
        for path in paths:
            print(path)
        return EXIT_OK
    except ConfigError as e:
        print(f"erpolab: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ContractError, OSError, ArithmeticError) as e:
        print(f"erpolab: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME

"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``python tests/test_acceptance.py`` for the lines alone; under pytest
they are repeated in the terminal summary.
"""

import math
import time

import numpy as np

from erpolab import verify
from erpolab.gridworld import empty_grid, run_imitation
from erpolab.harness import MethodSpec, TaskSpec, run_comparison

RESULTS: dict = {}


def _report(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title} | {detail}"
    RESULTS[n] = line
    print(line)


def _timed(fn, *args, **kwargs):
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t


def _fmt(c) -> str:
    return f"{c.name}: max dev {c.max_deviation:.3g} (tol {c.tolerance:g}, n={c.instances})"


def test_criterion_01_mle_equivalence():
    c, dt = _timed(verify.check_mle_equivalence, n=100)
    c
    ok = c.passed and c.tolerance == 1e-12 and c.instances == 100 and dt < 10
    _report(1, "MLE equivalence", ok, f"{_fmt(c)}, {dt:.2f}s")
    assert ok


def test_criterion_02_raml_equivalence():
    c, dt = _timed(verify.check_raml_equivalence, n=100, taus=(0.5, 1.0, 2.0))
    c
    ok = c.passed and c.tolerance == 1e-10 and c.instances == 300 and dt < 10
    _report(2, "RAML equivalence", ok, f"{_fmt(c)}, {dt:.2f}s")
    assert ok


def test_criterion_03_spg_identity():
    c, dt = _timed(verify.check_spg_identity, n=50)
    c
    ok = c.passed and c.tolerance == 1e-4 and c.instances == 50 and dt < 30
    _report(3, "SPG identity", ok, f"{_fmt(c)}, {dt:.2f}s")
    assert ok


def test_criterion_04_limits():
    checks = verify.check_limits(n=20)
    ok = all(c.passed and c.tolerance == 1e-4 and c.instances == 20 for c in checks)
    _report(4, "limit behaviours", ok, "; ".join(_fmt(c) for c in checks))
    assert ok


def test_criterion_05_noising_diagnostic():
    c = verify.check_noising(n=20, print_laws=True)
    _report(5, "data-noising diagnostic", c.passed, f"worst TV minus bound {c.max_deviation:.4f} (<= 0 passes), n={c.instances}")
    assert c.passed


def test_criterion_06_telescoping():
    c = verify.check_telescoping()
    ok = c.passed and c.tolerance == 1e-10
    _report(6, "telescoping", ok, _fmt(c))
    assert ok


def test_criterion_07_interpolation_endpoints():
    checks = verify.check_interp_endpoints(n_spike=10**4, n_law=10**5)
    checks.append(verify.check_interp_matches_mle())
    ok = all(c.passed for c in checks)
    _report(7, "interpolation endpoints", ok, "; ".join(f"{_fmt(c)} {c.detail}" for c in checks))
    assert ok


CRIT8_TASK = TaskSpec("copy", vocab_size=8, length=6, n_train=500, n_dev=50, n_test=200, corruption=0.1, seed=0)
CRIT8_METHODS = [
    MethodSpec("mle", "mle", steps=1000, lr=0.5, batch_size=8),
    MethodSpec("interpolation", "interpolation", steps=1000, lr=0.5, batch_size=8, c=18.0),
]


def test_criterion_08_directional_gain():
    rep, dt = _timed(run_comparison, CRIT8_TASK, CRIT8_METHODS, [0, 1, 2, 3, 4])
    mle = rep.per_seed("mle", "hamming_stressed")
    itp = rep.per_seed("interpolation", "hamming_stressed")
    wins = sum(b > a for a, b in zip(mle, itp))
    ok = np.mean(itp) >= np.mean(mle) - 0.01 and wins >= 3 and dt < 300
    detail = (
        f"stressed test hamming mle {np.mean(mle):.4f} vs interp {np.mean(itp):.4f}, "
        f"interp ahead on {wins}/5 seeds, {dt:.1f}s; per seed mle {np.round(mle, 4).tolist()} interp {np.round(itp, 4).tolist()}"
    )
    _report(8, "directional learning gain", ok, detail)
    assert ok


def _grid_runs():
    mdp = empty_grid(4, slip=0.1, horizon=24)
    out = []
    for seed in range(5):
        a = run_imitation(mdp, 4, seed, episodes=5000, lr=0.1, anneal=True)[1].rows[-1]["mean_return"]
        b = run_imitation(mdp, 4, seed, episodes=5000, lr=0.1, anneal=False)[1].rows[-1]["mean_return"]
        out.append((a, b))
    return out


def test_criterion_09_gridworld_anneal_gain():
    runs, dt = _timed(_grid_runs)
    wins = sum(a > b for a, b in runs)
    ok = wins >= 4 and dt < 180
    detail = (
        f"annealed beats prefix-0 on {wins}/5 seeds, {dt:.1f}s; "
        f"annealed {[round(a, 4) for a, _ in runs]} prefix-0 {[round(b, 4) for _, b in runs]}"
    )
    _report(9, "gridworld anneal gain", ok, detail)
    assert ok


def test_criterion_10_numerical_hygiene():
    grads = verify.run_suite("gradients")
    tol_ok = {c.name: c.tolerance for c in grads} == {"policy_loglik_gradient": 1e-6, "spg_objective_gradient": 1e-4}
    first = verify.run_suite("all")
    second = verify.run_suite("all")
    finite = all(math.isfinite(c.max_deviation) for c in first)
    same = [(c.name, c.max_deviation) for c in first] == [(c.name, c.max_deviation) for c in second]
    ok = tol_ok and all(c.passed for c in grads) and all(c.passed for c in first) and finite and same
    detail = (
        f"{'; '.join(_fmt(c) for c in grads)}; {len(first)} checks finite={finite}, "
        f"repeat run identical={same}"
    )
    _report(10, "numerical hygiene", ok, detail)
    assert ok


if __name__ == "__main__":
    import sys

    failed = 0
    for name, fn in sorted((k, v) for k, v in dict(globals()).items() if k.startswith("test_criterion")):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)

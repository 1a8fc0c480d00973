import json
import math

import numpy as np
import pytest

from erpolab import oracle, verify
from erpolab.core import ContractError
from erpolab.erpo import BudgetExceededError
from erpolab.policy import init_policy
from erpolab.rewards import HAMMING


def test_enumerate_space():
    s = oracle.enumerate_space(2, 3)
    assert len(s) == 8 and s.sequences[0] == (0, 0, 0) and s.sequences[-1] == (1, 1, 1)
    assert len(oracle.enumerate_space(1, 4)) == 1
    assert len(oracle.enumerate_space(3, 4)) == 81
    with pytest.raises(oracle.OracleBudgetError):
        oracle.enumerate_space(10, 7)


def test_oracle_q_hand_example():
    space = oracle.enumerate_space(2, 2)
    q = oracle.oracle_q(init_policy(2, 1, 2), HAMMING, 0.0, 1.0, (0, 0), space)
    z = math.e + 2 * math.exp(0.5) + 1
    assert q.prob((0, 0)) == pytest.approx(math.e / z, abs=1e-15)
    assert q.prob((1, 1)) == pytest.approx(1 / z, abs=1e-15)


def test_oracle_q_constant_reward():
    p = init_policy(3, 1, 2, "gaussian", 1.0, seed=0)
    space = oracle.enumerate_space(3, 2)
    q = oracle.oracle_q(p, lambda y, t: 0.3, 1.0, 0.0, (0, 0), space)
    for y in space:
        assert q.prob(y) == pytest.approx(oracle.oracle_prob(p, y), abs=1e-15)
    # tempered law with beta > 0
    q = oracle.oracle_q(p, lambda y, t: 0.3, 1.0, 1.0, (0, 0), space)
    w = {y: math.sqrt(oracle.oracle_prob(p, y)) for y in space}
    z = math.fsum(w.values())
    assert q.prob((1, 2)) == pytest.approx(w[(1, 2)] / z, abs=1e-15)
    with pytest.raises(ContractError):
        oracle.oracle_q(p, HAMMING, 0.0, 0.0, (0, 0), space)


def test_expectations():
    u = init_policy(2, 1, 2)
    space = oracle.enumerate_space(2, 2)
    assert oracle.oracle_expected(u, lambda y: 1.0, space) == pytest.approx(1.0)
    assert oracle.oracle_expected(u, lambda y: _hamming_to_01(y), space) == pytest.approx(0.5)
    u3 = init_policy(3, 1, 3)
    assert oracle.oracle_entropy(u3, oracle.enumerate_space(3, 3)) == pytest.approx(3 * math.log(3))
    assert oracle.oracle_kl(u3, u3, oracle.enumerate_space(3, 3)) == pytest.approx(0.0, abs=1e-15)


def _hamming_to_01(y):
    return sum(a == b for a, b in zip(y, (0, 1))) / 2


def test_finite_differences():
    p = init_policy(2, 1, 2, "gaussian", 1.0, seed=0)
    assert np.abs(oracle.finite_diff_grad(lambda q: 4.2, p)).max() < 1e-9
    with pytest.raises(ContractError):
        oracle.finite_diff_grad(lambda q: 0.0, p, h=0.0)


def test_log_space_path_agrees_with_direct():
    # 3**9 > DIRECT_LIMIT forces the log-space branch
    p = init_policy(3, 1, 9, "gaussian", 0.5, seed=1)
    space = oracle.enumerate_space(3, 9)
    q = oracle.oracle_q(p, HAMMING, 0.5, 0.5, (0,) * 9, space)
    assert math.fsum(q.table.values()) == pytest.approx(1.0, abs=1e-10)


def test_report(tmp_path):
    checks = [oracle.check("a", [1e-13, 2e-13], 1e-12, 0), oracle.check("b", [float("nan")], 1.0, 1)]
    assert checks[0].passed and checks[0].max_deviation == 2e-13 and checks[0].instances == 2
    assert not checks[1].passed
    text = oracle.write_report(checks, tmp_path / "r.json", {"suite": "x"})
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["passed"] is False and data["suite"] == "x" and len(data["checks"]) == 2
    assert json.loads(text) == data


def test_gradient_suite_passes_and_is_deterministic():
    a = verify.run_suite("gradients")
    b = verify.run_suite("gradients")
    assert all(c.passed for c in a)
    assert [c.max_deviation for c in a] == [c.max_deviation for c in b]


def test_suite_errors():
    with pytest.raises(ValueError):
        verify.run_suite("everything")
    with pytest.raises(BudgetExceededError):
        verify.run_suite("gradients", budget=10)

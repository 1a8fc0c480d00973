import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erpolab.core import ContractError
from erpolab.rewards import (
    DELTA,
    HAMMING,
    RewardResurrectionError,
    RewardSpec,
    _increment,
    delta_prefix_reward,
    delta_reward,
    hamming_reward,
    incremental_reward,
    incremental_reward_vector,
    ngram_match_reward,
    noising_diagnostic,
    prefix_reward,
    reward,
    single_token_relaxed_delta,
    token_diff,
    unigram_noise_reward,
)

NEG = float("-inf")
U4 = (0.25, 0.25, 0.25, 0.25)


def test_delta_reward():
    assert delta_reward([2, 5, 1], [2, 5, 1]) == 1.0
    assert delta_reward([2, 5], [2, 5, 1]) == NEG
    assert delta_reward([2, 5, 3], [2, 5, 1]) == NEG


def test_delta_prefix_reward():
    assert delta_prefix_reward([3, 1], [3, 1, 0, 2]) == 0.5
    assert delta_prefix_reward([], [3, 1, 0, 2]) == 0.0
    assert delta_prefix_reward([0], [3, 1, 0, 2]) == NEG
    assert delta_prefix_reward([3, 2], [3, 1, 0, 2]) == NEG


def test_hamming_reward():
    assert hamming_reward([1, 2, 3, 0], [1, 2, 3, 0]) == 1.0
    assert hamming_reward([1, 2, 3, 3], [1, 2, 3, 0]) == 0.75
    # empty hypothesis: overlap 0, length gap 4/4
    assert hamming_reward([], [1, 2, 3, 0]) == -1.0
    # length 2 vs 4, both overlap tokens match: 2/4 - 2/4
    assert hamming_reward([1, 2], [1, 2, 3, 0]) == 0.0


def test_ngram_match_reward():
    assert ngram_match_reward([0, 1, 2], [0, 1, 2], n=2) == 1.0
    assert ngram_match_reward([0, 0], [0, 1], n=1) == 0.5
    # precision 1, brevity 1/2
    assert ngram_match_reward([0], [0, 1], n=1) == 0.5
    assert ngram_match_reward([], [0, 1]) == 0.0


def test_ngram_smoothing():
    # no matching unigram: precision replaced by 1/(2T)
    assert ngram_match_reward([2, 2], [0, 1], n=1) == pytest.approx(0.25)


def test_unigram_noise_reward():
    assert unigram_noise_reward([0, 1], [0, 1, 2], 0.5, U4) == NEG
    assert unigram_noise_reward([0, 1], [0, 1], 0.5, U4) == pytest.approx(math.log(0.25))
    # (1 - gamma) * gamma * u
    assert unigram_noise_reward([0, 2], [0, 1], 0.5, U4) == pytest.approx(math.log(0.0625))
    assert math.log(0.0625) == pytest.approx(-2.772589, abs=1e-6)


def test_single_token_relaxed_delta():
    assert single_token_relaxed_delta([0, 2], [0, 1]) == 1.0
    assert single_token_relaxed_delta([0, 1], [0, 1]) == NEG
    assert single_token_relaxed_delta([2, 2], [0, 1]) == NEG
    assert single_token_relaxed_delta([0], [0, 1]) == NEG


def test_token_diff():
    assert token_diff([0, 1, 2], [0, 2, 2]) == {1}
    with pytest.raises(ContractError):
        token_diff([0], [0, 1])


def test_incremental_examples():
    y_star = (1, 0, 2)
    assert incremental_reward((1,), 0, y_star, DELTA) == pytest.approx(1 / 3)
    assert incremental_reward((1,), 1, y_star, DELTA) == NEG
    # hamming: a match always adds 1/T*, regardless of earlier mistakes
    for prefix in itertools.product(range(3), repeat=2):
        assert incremental_reward(prefix, 2, y_star, HAMMING) == pytest.approx(1 / 3)


def test_increment_resurrection_is_an_error():
    with pytest.raises(RewardResurrectionError):
        _increment(NEG, 0.3)


def test_prefix_reward_at_full_length_equals_reward():
    y_star = (0, 1, 1)
    u = (0.2, 0.3, 0.5)
    specs = [
        DELTA,
        HAMMING,
        RewardSpec("ngram_match", n=2),
        RewardSpec("unigram_noise", gamma=0.4, unigram=u),
        RewardSpec("single_token_relaxed_delta"),
        RewardSpec("interpolated", lam=0.3, base=HAMMING),
    ]
    for spec in specs:
        for y in itertools.product(range(3), repeat=3):
            assert prefix_reward(y, y_star, spec) == reward(y, y_star, spec)


def _specs(V):
    u = tuple(np.full(V, 1.0 / V))
    return [
        DELTA,
        HAMMING,
        RewardSpec("ngram_match", n=1),
        RewardSpec("ngram_match", n=3),
        RewardSpec("unigram_noise", gamma=0.25, unigram=u),
        RewardSpec("single_token_relaxed_delta"),
        RewardSpec("interpolated", lam=0.5, base=RewardSpec("ngram_match", n=2)),
    ]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 3), st.integers(1, 4), st.data())
def test_telescoping(V, L, data):
    y_star = tuple(data.draw(st.lists(st.integers(0, V - 1), min_size=L, max_size=L)))
    y = tuple(data.draw(st.lists(st.integers(0, V - 1), min_size=L, max_size=L)))
    for spec in _specs(V):
        incs = [incremental_reward(y[:t], y[t], y_star, spec) for t in range(L)]
        whole = reward(y, y_star, spec)
        if whole == NEG:
            assert NEG in incs
        else:
            assert math.fsum(incs) == pytest.approx(whole, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(1, 4), st.data())
def test_vector_matches_scalar_increments(V, L, data):
    y_star = tuple(data.draw(st.lists(st.integers(0, V - 1), min_size=L, max_size=L)))
    t = data.draw(st.integers(0, L - 1))
    prefix = tuple(data.draw(st.lists(st.integers(0, V - 1), min_size=t, max_size=t)))
    for spec in _specs(V):
        try:
            vec = incremental_reward_vector(prefix, y_star, spec, V)
        except RewardResurrectionError:
            continue
        ref = [incremental_reward(prefix, v, y_star, spec) for v in range(V)]
        np.testing.assert_allclose(vec, ref, atol=1e-12)


def test_ngram_full_order_is_uniquely_maximized_at_target():
    # with n = T the full-sequence gram only matches y* itself
    y_star = (0, 1, 1, 2)
    spec = RewardSpec("ngram_match", n=4)
    scores = {y: reward(y, y_star, spec) for y in itertools.product(range(3), repeat=4)}
    best = max(scores.values())
    assert best == 1.0
    assert [y for y, s in scores.items() if s == best] == [y_star]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=6), st.lists(st.integers(0, 3), min_size=0, max_size=6))
def test_hamming_bounded(y_star, y):
    r = hamming_reward(y, y_star)
    assert -1.0 <= r <= 1.0


def test_reward_spec_roundtrip_and_validation():
    spec = RewardSpec("interpolated", lam=0.2, base=RewardSpec("unigram_noise", gamma=0.1, unigram=U4))
    assert RewardSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ContractError):
        RewardSpec("bleu")
    with pytest.raises(ContractError):
        RewardSpec("unigram_noise", gamma=0.5)
    with pytest.raises(ContractError):
        RewardSpec("unigram_noise", gamma=0.5, unigram=(0.5, 0.4))
    with pytest.raises(ContractError):
        RewardSpec.from_dict({"kind": "delta", "temperature": 1})


def test_noising_diagnostic_laws():
    u = (0.2, 0.3, 0.5)
    diag = noising_diagnostic((0, 2), 0.5, u, 3)
    assert diag.reward_law.sum() == pytest.approx(1.0)
    assert diag.procedural_law.sum() == pytest.approx(1.0)
    # procedural law of y*: keep-or-redraw at both positions
    i = diag.support.index((0, 2))
    assert diag.procedural_law[i] == pytest.approx((0.5 + 0.5 * 0.2) * (0.5 + 0.5 * 0.5))
    assert diag.tv <= 0.5 * 0.5 * 2 + 0.01
    assert "total variation" in diag.table()


def test_noising_diagnostic_gamma_zero_agrees():
    diag = noising_diagnostic((1, 0), 0.0, (0.2, 0.3, 0.5), 3)
    assert diag.tv == pytest.approx(0.0, abs=1e-15)

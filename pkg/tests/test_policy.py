import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erpolab import oracle
from erpolab.core import ContractError, Vocab
from erpolab.erpo import sequence_space
from erpolab.policy import (
    Policy,
    apply_update,
    argmax_exhaustive,
    beam_decode,
    clip_gradient,
    expected_grad,
    grad_log_prob,
    greedy_decode,
    init_policy,
    load_checkpoint,
    log_prob_batch,
    log_prob_seq,
    n_contexts,
    sample_seq,
    save_checkpoint,
)


def test_uniform_init():
    p = init_policy(3, 2, 4)
    assert p.logits.shape == (1 + 3 + 9, 3)
    np.testing.assert_allclose(np.exp(p.token_log_probs((1, 2))), [1 / 3] * 3)


def test_gaussian_zero_sigma_is_uniform_and_seeded():
    assert np.array_equal(init_policy(3, 1, 2, "gaussian", 0.0, seed=1).logits, init_policy(3, 1, 2).logits)
    a = init_policy(3, 1, 2, "gaussian", 1.0, seed=4)
    b = init_policy(3, 1, 2, "gaussian", 1.0, seed=4)
    assert np.array_equal(a.logits, b.logits)


def test_init_rejects_bad_args():
    with pytest.raises(ContractError):
        init_policy(3, -1, 2)
    with pytest.raises(ContractError):
        init_policy(3, 1, 2, "xavier")
    with pytest.raises(ContractError):
        Policy(3, 1, 2, np.zeros((3, 3)))


def test_row_index_matches_oracle_layout():
    # rows are ordered by context length, then context as base-V number, per conditioning id
    p = init_policy(3, 2, 4, n_cond=2)
    assert n_contexts(3, 2) == 13
    assert p.row_index(()) == 0
    assert p.row_index((2,)) == 1 + 2
    assert p.row_index((0, 1, 2)) == 1 + 3 + 1 * 3 + 2
    assert p.row_index((1, 0), cond_t=1) == 13 + 4 + 3


def test_row_indices_agree_with_row_index():
    p = init_policy(3, 2, 4, n_cond=2)
    seqs = sequence_space(3, 4)
    cond = (1, 0, 1, 1)
    rows = p.row_indices(seqs, cond)
    for y, r in zip(seqs[:40], rows[:40]):
        assert list(r) == [p.row_index(tuple(y[:t]), cond[t]) for t in range(4)]


def test_log_prob_uniform():
    assert log_prob_seq(init_policy(2, 1, 3), (0, 1, 1)) == pytest.approx(3 * math.log(0.5))
    assert 3 * math.log(0.5) == pytest.approx(-2.079442, abs=1e-6)


@pytest.mark.parametrize("order", [0, 1, 2])
def test_log_probs_normalize(order):
    p = init_policy(3, order, 3, "gaussian", 1.5, seed=order)
    total = math.fsum(math.exp(log_prob_seq(p, y)) for y in itertools.product(range(3), repeat=3))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_order_zero_is_permutation_invariant():
    p = init_policy(4, 0, 4, "gaussian", 1.0, seed=2)
    y = (0, 3, 3, 1)
    vals = {round(log_prob_seq(p, perm), 12) for perm in itertools.permutations(y)}
    assert len(vals) == 1


def test_log_prob_batch_matches_oracle():
    p = init_policy(3, 1, 3, "gaussian", 1.0, seed=5, n_cond=2)
    seqs = sequence_space(3, 3)
    cond = (1, 0, 1)
    batch = log_prob_batch(p, seqs, cond)
    ref = [oracle.oracle_log_prob(p, tuple(y), cond) for y in seqs]
    np.testing.assert_allclose(batch, ref, atol=1e-12)


def test_log_prob_wrong_length():
    with pytest.raises(ContractError):
        log_prob_seq(init_policy(2, 1, 3), (0, 1))


def test_eos_mode_lengths():
    p = init_policy(Vocab(3, eos=2), 1, 3)
    assert log_prob_seq(p, (0, 2)) == pytest.approx(2 * math.log(1 / 3))
    with pytest.raises(ContractError):
        log_prob_seq(p, (0, 1))
    with pytest.raises(ContractError):
        log_prob_seq(p, (2, 0, 1))


def test_sampler_near_one_hot():
    p = init_policy(3, 1, 3)
    p.logits[:, 1] += 30.0
    rng = np.random.default_rng(0)
    hits = sum(sample_seq(p, rng) == (1, 1, 1) for _ in range(10**4))
    assert hits / 10**4 > 0.999


def test_sampler_uniform_frequencies():
    p = init_policy(2, 1, 2)
    rng = np.random.default_rng(3)
    n = 10**5
    counts = {}
    for _ in range(n):
        y = sample_seq(p, rng)
        counts[y] = counts.get(y, 0) + 1
    assert len(counts) == 4
    assert all(abs(c / n - 0.25) < 0.01 for c in counts.values())


def test_sampler_forced_prefix_and_determinism():
    p = init_policy(3, 1, 4, "gaussian", 1.0, seed=0)
    a = [sample_seq(p, np.random.default_rng(9), prefix=(2,)) for _ in range(3)]
    assert all(y[0] == 2 for y in a)
    assert len(set(a)) == 1


def test_grad_uniform_binary():
    g = grad_log_prob(init_policy(2, 0, 1), (1,))
    np.testing.assert_allclose(g, [[-0.5, 0.5]])


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 3), st.integers(1, 3), st.integers(0, 2), st.integers(0, 10**6))
def test_grad_matches_finite_differences(V, L, k, seed):
    rng = np.random.default_rng(seed)
    p = init_policy(V, k, L, "gaussian", 1.0, seed=seed)
    y = tuple(int(t) for t in rng.integers(V, size=L))
    g = grad_log_prob(p, y)
    fd = oracle.finite_diff_grad(lambda q: oracle.oracle_log_prob(q, y), p)
    assert np.abs(g - fd).max() < 1e-6
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-12)


def test_expected_grad_under_model_is_zero():
    p = init_policy(3, 1, 2, "gaussian", 1.0, seed=1)
    seqs = sequence_space(3, 2)
    w = np.exp(log_prob_batch(p, seqs))
    assert np.abs(expected_grad(p, seqs, w)).max() < 1e-10


def test_apply_update():
    p = init_policy(3, 1, 3, "gaussian", 1.0, seed=0)
    y = (0, 2, 1)
    g = grad_log_prob(p, y)
    assert np.array_equal(apply_update(p, g, 0.0).logits, p.logits)
    assert log_prob_seq(apply_update(p, g, 0.01), y) > log_prob_seq(p, y)
    with pytest.raises(ContractError):
        apply_update(p, g, -1.0)


def test_clip_gradient():
    g = np.array([[3.0, 4.0]])
    assert clip_gradient(g, 5.0) is g
    assert np.sqrt((clip_gradient(g, 1.0) ** 2).sum()) == pytest.approx(1.0)


def test_beam_exhaustive_and_greedy():
    for seed in range(10):
        p = init_policy(3, 1, 3, "gaussian", 1.0, seed=seed)
        seqs = sequence_space(3, 3)
        assert beam_decode(p, 27, None) == argmax_exhaustive(p, seqs)
        assert beam_decode(p, 1) == greedy_decode(p)


def test_beam_near_one_hot():
    p = init_policy(3, 1, 3)
    p.logits[:, 2] += 20.0
    for w in (1, 2, 5):
        assert beam_decode(p, w) == (2, 2, 2)


def test_beam_tie_break_is_lexicographic():
    assert beam_decode(init_policy(3, 1, 2), 3) == (0, 0)


def test_checkpoint_roundtrip(tmp_path):
    p = init_policy(Vocab(3, eos=2), 2, 3, "gaussian", 1.0, seed=3, n_cond=2)
    path = tmp_path / "ckpt.txt"
    save_checkpoint(p, path, header_extra="hello")
    q = load_checkpoint(path)
    assert (q.vocab_size, q.order, q.length, q.n_cond, q.eos) == (3, 2, 3, 2, 2)
    assert np.array_equal(q.logits, p.logits)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not a checkpoint\n")
    with pytest.raises(ContractError):
        load_checkpoint(path)

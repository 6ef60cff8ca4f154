import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varlen_mdm.noise import (
    AugmentConfig,
    LinearSchedule,
    MergeScheduler,
    PseudoMask,
    augment,
    corrupt,
    insert_deletes,
    merge_probability,
    merge_spans,
    sample_pseudo_mask,
)
from varlen_mdm.vocab import AugmentedSequence, build_vocabulary

VOCAB = build_vocabulary(list("abcdefghij"))
SCHED = LinearSchedule()
E, D, M = VOCAB.expand_id, VOCAB.delete_id, VOCAB.mask_id


def pm(idx, t=0.5):
    return PseudoMask(np.array(idx, dtype=np.int64), t)


def test_schedule_endpoints_and_weight():
    assert SCHED.survival(0.0) == 1.0
    assert SCHED.survival(1.0) == 0.0
    assert SCHED.weight(1.0) == 1.0
    assert SCHED.weight(0.0) == pytest.approx(1e3)
    ts = np.linspace(0, 1, 101)
    assert (np.diff(SCHED.survival(ts)) <= 0).all()
    assert (SCHED.weight(ts[1:]) > 0).all()


def test_pseudo_mask_endpoints():
    rng = np.random.default_rng(0)
    assert len(sample_pseudo_mask(50, 0.0, SCHED, rng).indices) == 0
    assert sample_pseudo_mask(50, 1.0, SCHED, rng).indices.tolist() == list(range(50))


def test_pseudo_mask_density():
    m = sample_pseudo_mask(10_000, 0.5, SCHED, np.random.default_rng(3))
    assert abs(len(m.indices) / 10_000 - 0.5) <= 0.02
    assert m.indices.min() >= 0 and m.indices.max() < 10_000


def test_pseudo_mask_rejects_bad_time():
    with pytest.raises(ValueError):
        sample_pseudo_mask(3, 1.5, SCHED, np.random.default_rng(0))


def test_merge_zero_probability_is_identity():
    clean = np.arange(6)
    z = merge_spans(clean, pm(range(6)), 0.0, VOCAB, np.random.default_rng(0))
    assert z.tokens.tolist() == clean.tolist()
    assert (z.coverage == 1).all()


def test_merge_pair_one_pass():
    clean = np.array([0, 1, 2, 3])
    z = merge_spans(clean, pm([1, 2]), 1.0, VOCAB, np.random.default_rng(0), pass_cap=1)
    assert z.tokens.tolist() == [0, E, 3]
    assert list(zip(z.span_starts, z.span_ends)) == [(0, 1), (1, 3), (3, 4)]


def test_merge_run_of_four_unlimited():
    clean = np.array([5, 0, 1, 2, 3, 6])
    z = merge_spans(clean, pm([1, 2, 3, 4]), 1.0, VOCAB, np.random.default_rng(0), pass_cap=None)
    assert z.tokens.tolist() == [5, E, 6]
    assert (z.span_starts[1], z.span_ends[1]) == (1, 5)


def test_merge_run_of_four_one_pass_gives_two_pairs():
    clean = np.arange(4)
    z = merge_spans(clean, pm([0, 1, 2, 3]), 1.0, VOCAB, np.random.default_rng(0), pass_cap=1)
    assert z.tokens.tolist() == [E, E]
    assert z.coverage.tolist() == [2, 2]


def test_merge_does_not_cross_runs():
    clean = np.arange(5)
    z = merge_spans(clean, pm([0, 1, 3, 4]), 1.0, VOCAB, np.random.default_rng(0), pass_cap=None)
    assert z.tokens.tolist() == [E, 2, E]


def test_merge_probability_rules():
    static = MergeScheduler(kind="static", p_merge=0.5)
    assert merge_probability(static, 0) == 0.5
    assert merge_probability(static, 100) == 0.5
    dyn = MergeScheduler(kind="dynamic-inverse", inverse_scale=4)
    assert merge_probability(dyn, 16) == 0.25
    assert merge_probability(dyn, 0) == 1.0
    assert merge_probability(MergeScheduler(kind="dynamic-inverse", inverse_scale=0.5), 0) == 0.5
    with pytest.raises(ValueError):
        merge_probability(static, -1)


def test_merge_probability_mixture_ratio():
    mix = MergeScheduler(kind="mixture", p_merge=0.5, inverse_scale=4, mix_ratio=(1.0, 3.0))
    rng = np.random.default_rng(0)
    # n=100: static gives 0.5, dynamic gives 0.04
    draws = np.array([merge_probability(mix, 100, rng) for _ in range(20_000)])
    assert set(np.round(draws, 6)) == {0.5, 0.04}
    assert abs((draws == 0.5).mean() - 0.25) < 0.01


def test_merge_probability_clamped():
    assert merge_probability(MergeScheduler(kind="static", p_merge=1.7), 3) == 1.0


def test_insert_deletes_zero_max_unchanged():
    z = merge_spans(np.arange(3), pm([]), 0.5, VOCAB, np.random.default_rng(0))
    out = insert_deletes(z, AugmentConfig(delete_max=0), VOCAB, np.random.default_rng(0))
    assert out.tokens.tolist() == [0, 1, 2]


def test_insert_deletes_appends():
    z = merge_spans(VOCAB.encode(["h", "i", "j"]), pm([]), 0.5, VOCAB, np.random.default_rng(0))
    out = insert_deletes(z, AugmentConfig(), VOCAB, np.random.default_rng(0), count=2)
    assert VOCAB.decode(out.tokens) == ["h", "i", "j", "[delete]", "[delete]"]
    assert out.coverage.tolist() == [1, 1, 1, 0, 0]


def test_insert_deletes_uniform_mean():
    rng = np.random.default_rng(11)
    cfg = AugmentConfig(delete_max=64)
    z = AugmentedSequence(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    ks = [len(insert_deletes(z, cfg, VOCAB, rng)) for _ in range(100_000)]
    assert abs(np.mean(ks) - 32.0) <= 0.5
    assert min(ks) == 0 and max(ks) == 64


def test_interleaved_deletes_keep_partition():
    cfg = AugmentConfig(interleave_deletes=True)
    rng = np.random.default_rng(5)
    for _ in range(200):
        z = merge_spans(np.arange(7), pm([1, 2, 3, 5, 6]), 0.7, VOCAB, rng, pass_cap=None)
        out = insert_deletes(z, cfg, VOCAB, rng, count=int(rng.integers(0, 6)))
        _check_partition(out, 7)


def test_corrupt_expand_always_masked_at_t0():
    augmented = np.array([0, E, 1])
    noisy = corrupt(augmented, 0.0, SCHED, VOCAB, np.random.default_rng(0))
    assert noisy.tokens.tolist() == [0, M, 1]
    assert noisy.masked.tolist() == [1]


def test_corrupt_t1_masks_region_only():
    augmented = np.array([0, 1, 2, 3, 4])
    noisy = corrupt(augmented, 1.0, SCHED, VOCAB, np.random.default_rng(0), region=(1, 4))
    assert noisy.tokens.tolist() == [0, M, M, M, 4]


def test_corrupt_expected_masked_count():
    augmented = np.array([D, D, D, 0, 1, 2, 3, 4])
    rng = np.random.default_rng(2)
    counts = [len(corrupt(augmented, 0.4, SCHED, VOCAB, rng).masked) for _ in range(100_000)]
    assert abs(np.mean(counts) - 5.0) <= 0.05


def _check_partition(z: AugmentedSequence, n: int):
    keep = z.tokens != D
    s, e = z.span_starts[keep], z.span_ends[keep]
    assert s.tolist() == ([0] + e[:-1].tolist() if len(e) else [])
    assert (e[-1] if len(e) else 0) == n
    assert (z.coverage[z.tokens == E] >= 2).all()
    assert (z.coverage[z.tokens == D] == 0).all()
    assert (z.coverage[keep & (z.tokens != E)] == 1).all()


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(0, 40),
    t=st.floats(0, 1),
    p=st.floats(0, 1),
    cap=st.one_of(st.none(), st.integers(1, 6)),
    k=st.integers(0, 10),
    seed=st.integers(0, 2**31),
)
def test_coverage_partition_and_length_accounting(n, t, p, cap, k, seed):
    if cap is None and 0 < p < 1e-3:
        p = 0.0
    rng = np.random.default_rng(seed)
    clean = rng.integers(0, VOCAB.regular_size, size=n)
    m = sample_pseudo_mask(n, t, SCHED, rng)
    z = merge_spans(clean, m, p, VOCAB, rng, pass_cap=cap)
    _check_partition(z, n)
    absorbed = int((z.coverage[z.tokens == E] - 1).sum())
    assert len(z) == n - absorbed
    # every merged span lies inside the pseudo-mask
    flags = np.zeros(n, bool)
    flags[m.indices] = True
    for s, e in zip(z.span_starts[z.tokens == E], z.span_ends[z.tokens == E]):
        assert flags[s:e].all()
    out = insert_deletes(z, AugmentConfig(), VOCAB, rng, count=k)
    assert len(out) == n - absorbed + k
    _check_partition(out, n)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), t1=st.floats(0, 1), t2=st.floats(0, 1), lo=st.integers(0, 5))
def test_corrupt_monotone_and_context_safe(seed, t1, t2, lo):
    t1, t2 = sorted((t1, t2))
    base = np.random.default_rng(seed)
    augmented = base.integers(0, VOCAB.regular_size, size=20)
    augmented[base.random(20) < 0.2] = D
    hi = 15
    a = corrupt(augmented, t1, SCHED, VOCAB, np.random.default_rng(seed), region=(lo, hi))
    b = corrupt(augmented, t2, SCHED, VOCAB, np.random.default_rng(seed), region=(lo, hi))
    assert set(a.masked) <= set(b.masked)
    for noisy in (a, b):
        assert (noisy.tokens[:lo] == augmented[:lo]).all() and (noisy.tokens[hi:] == augmented[hi:]).all()
        region = augmented[lo:hi]
        assert (noisy.tokens[lo:hi][region == D] == M).all()
        assert set(noisy.masked) == set(np.flatnonzero(noisy.tokens == M))


def test_augment_composes():
    rng = np.random.default_rng(0)
    for _ in range(100):
        z = augment(np.arange(8), float(rng.random()), AugmentConfig(delete_max=4), SCHED, VOCAB, rng)
        _check_partition(z, 8)


def test_unlimited_passes_refuse_vanishing_probability():
    with pytest.raises(ValueError, match="p_merge"):
        merge_spans(np.arange(4), pm(range(4)), 1e-9, VOCAB, np.random.default_rng(0), pass_cap=None)

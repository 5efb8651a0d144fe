import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lattice import curriculum as cur

score_lists = st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=200)


def check_invariants(s, c):
    s = np.asarray(s)
    allidx = np.concatenate(c.buckets)
    # partition coverage
    assert sorted(allidx.tolist()) == list(range(len(s)))
    # monotone buckets: every score in bucket b <= every score in bucket b+1
    for a, b in zip(c.buckets, c.buckets[1:]):
        if len(a) and len(b):
            assert s[a].max() <= s[b].min()
    # sizes differ by at most one, larger first
    sizes = [len(b) for b in c.buckets]
    assert max(sizes) - min(sizes) <= 1 and sizes == sorted(sizes, reverse=True)


@given(score_lists, st.integers(1, 20))
def test_build_curriculum_invariants(s, k):
    if k > len(s):
        with pytest.raises(ValueError):
            cur.build_curriculum(s, k)
        return
    check_invariants(s, cur.build_curriculum(s, k))


def test_ties_resolve_by_index():
    c = cur.build_curriculum([0.5, 0.5, 0.1, 0.5], 2)
    assert c.buckets[0].tolist() == [2, 0] and c.buckets[1].tolist() == [1, 3]


def test_bucket_examples():
    c = cur.build_curriculum([0.9, 0.1, 0.5, 0.3], 2)
    assert [b.tolist() for b in c.buckets] == [[1, 3], [2, 0]]
    assert [len(b) for b in cur.build_curriculum(np.arange(10.0), 3).buckets] == [4, 3, 3]


def test_batch_numbers_follow_order():
    c = cur.build_curriculum([0.9, 0.1, 0.5, 0.3, 0.0], 2)
    assert cur.assign_batch_numbers(c, 2).tolist() == [3, 1, 2, 2, 1]


def run_prefix_check(s, k, seed, losses):
    c = cur.build_curriculum(s, k)
    st_ = cur.new_scheduler(c, p=2, delta=1e-4, seed=seed, max_epochs_per_stage=3)
    for loss in losses:
        if cur.is_done(st_):
            break
        expect = np.concatenate(c.buckets[: st_.next_bucket])
        assert sorted(st_.merged.tolist()) == sorted(expect.tolist())
        batches = cur.epoch_batches(st_, c, 7)
        seen = np.concatenate(batches)
        assert sorted(seen.tolist()) == sorted(st_.merged.tolist())
        cur.report_loss(st_, loss)


@given(score_lists.filter(lambda l: len(l) >= 5), st.integers(1, 5), st.integers(0, 1000),
       st.lists(st.floats(0, 2), min_size=1, max_size=30))
@settings(deadline=None)
def test_merged_set_is_always_a_bucket_prefix(s, k, seed, losses):
    run_prefix_check(s, k, seed, losses)


def test_merge_at_third_flat_report():
    c = cur.build_curriculum(np.arange(10.0), 3)
    st_ = cur.new_scheduler(c, p=2, delta=1e-4)
    assert [cur.report_loss(st_, 1.0) for _ in range(3)] == [False, False, True]
    assert st_.next_bucket == 2 and st_.events[-1]["reason"] == "converged"


def test_convergence_window_resets_after_merge():
    c = cur.build_curriculum(np.arange(9.0), 3)
    st_ = cur.new_scheduler(c, p=1, delta=1e-4)
    assert [cur.report_loss(st_, 1.0) for _ in range(2)] == [False, True]
    # the first loss of a new stage never counts as converged
    assert cur.report_loss(st_, 1.0) is False


def test_forced_merge_at_cap():
    c = cur.build_curriculum(np.arange(6.0), 2)
    st_ = cur.new_scheduler(c, p=3, max_epochs_per_stage=2)
    assert cur.report_loss(st_, 1.0) is False
    assert cur.report_loss(st_, 0.5) is True
    assert st_.events[-1]["reason"] == "max_epochs"


def test_capped_final_stage_stops_without_finishing():
    c = cur.build_curriculum(np.arange(4.0), 2)
    st_ = cur.new_scheduler(c, p=3, max_epochs_per_stage=1)
    assert cur.report_loss(st_, 1.0) is True
    cur.report_loss(st_, 0.5)
    assert cur.is_done(st_) and not cur.is_finished(st_)
    assert st_.events[-1] == {"event": "stopped", "reason": "max_epochs"}
    with pytest.raises(cur.SchedulerError):
        cur.next_batch(st_, c, 2)


def test_fresh_state_is_not_finished():
    c = cur.build_curriculum(np.arange(4.0), 2)
    assert not cur.is_finished(cur.new_scheduler(c))


def test_single_bucket_finishes_on_first_convergence():
    c = cur.build_curriculum(np.arange(4.0), 1)
    st_ = cur.new_scheduler(c, p=1)
    assert len(st_.merged) == 4
    cur.report_loss(st_, 1.0)
    assert not cur.is_finished(st_)
    cur.report_loss(st_, 1.0)
    assert cur.is_finished(st_)


def test_decreasing_losses_never_merge():
    c = cur.build_curriculum(np.arange(6.0), 3)
    st_ = cur.new_scheduler(c, p=2, max_epochs_per_stage=1000)
    assert not any(cur.report_loss(st_, 10.0 - 0.01 * i) for i in range(200))


def test_finishes_after_last_bucket():
    c = cur.build_curriculum(np.arange(4.0), 2)
    st_ = cur.new_scheduler(c, p=1)
    cur.report_loss(st_, 1.0)
    cur.report_loss(st_, 1.0)
    cur.report_loss(st_, 1.0)
    assert cur.report_loss(st_, 1.0) is False and cur.is_finished(st_)
    with pytest.raises(cur.SchedulerError):
        cur.report_loss(st_, 1.0)
    with pytest.raises(cur.SchedulerError):
        cur.next_batch(st_, c, 2)


def test_nan_loss_raises():
    c = cur.build_curriculum(np.arange(4.0), 2)
    st_ = cur.new_scheduler(c)
    with pytest.raises(cur.SchedulerError, match="NaN"):
        cur.report_loss(st_, float("nan"))


def test_batches_are_seeded():
    c = cur.build_curriculum(np.arange(50.0), 1)
    a = cur.epoch_batches(cur.new_scheduler(c, seed=3), c, 8)
    b = cur.epoch_batches(cur.new_scheduler(c, seed=3), c, 8)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_invalid_parameters():
    c = cur.build_curriculum(np.arange(4.0), 2)
    with pytest.raises(ValueError):
        cur.new_scheduler(c, p=0)
    with pytest.raises(ValueError):
        cur.new_scheduler(c, delta=0.0)
    with pytest.raises(ValueError):
        cur.build_curriculum([], 1)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msgcn.metrics import (
    DataError,
    Segment,
    extract_segments,
    f1_at_tau,
    f1_from_segments,
    f1_report,
    iou,
    match_segments,
    sample_accuracy,
)
from oracles import f1_from_counts, greedy_counts, optimal_tp, random_labels

THRESHOLDS = (0.10, 0.25, 0.50)


def label_pairs(seed, count=1000):
    rng = np.random.default_rng(seed)
    for i in range(count):
        T, L = int(rng.integers(1, 51)), int(rng.integers(1, 5))
        run_max = None if i % 2 else int(rng.integers(2, 15))
        yield random_labels(rng, T, L, run_max), random_labels(rng, T, L, run_max)


labels_strategy = st.integers(1, 40).flatmap(
    lambda T: st.tuples(st.lists(st.integers(0, 3), min_size=T, max_size=T),
                        st.lists(st.integers(0, 3), min_size=T, max_size=T)))


# --- segments ----------------------------------------------------------------------

def test_extract_segments_examples():
    assert extract_segments([0, 0, 0]) == [Segment(0, 0, 3)]
    assert extract_segments([0, 1, 0]) == [Segment(0, 0, 1), Segment(1, 1, 2), Segment(0, 2, 3)]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=60))
def test_segments_tile_and_reconstruct(labels):
    segs = extract_segments(labels)
    rebuilt = [s.label for s in segs for _ in range(s.length)]
    assert rebuilt == labels
    assert segs[0].start == 0 and segs[-1].end == len(labels)
    for a, b in zip(segs, segs[1:]):
        assert a.end == b.start and a.label != b.label


def test_iou_cases():
    assert iou(Segment(0, 0, 10), Segment(0, 5, 15)) == 5 / 15
    assert iou(Segment(0, 0, 5), Segment(0, 5, 9)) == 0


# --- F1 --------------------------------------------------------------------------

def test_identical_sequences_score_one():
    labels = [0, 0, 1, 1, 1, 2, 0]
    for entry in f1_report(labels, labels):
        assert (entry.precision, entry.recall, entry.f1) == (1, 1, 1)


def test_split_prediction_worked_example():
    entry = f1_from_segments([Segment(0, 0, 50), Segment(0, 50, 100)], [Segment(0, 0, 100)], 0.5)
    assert (entry.tp, entry.fp, entry.fn) == (1, 1, 0)
    assert entry.f1 == 2 / 3


def test_boundary_iou_counts_as_match():
    assert match_segments([Segment(0, 0, 50)], [Segment(0, 0, 100)], 0.5) == (1, 0, 0)
    assert match_segments([Segment(0, 0, 49)], [Segment(0, 0, 100)], 0.5) == (0, 1, 1)


def test_f1_empty_cases():
    assert f1_from_segments([], [], 0.5).f1 == 1
    assert f1_from_segments([Segment(0, 0, 3)], [], 0.5).f1 == 0


def test_length_mismatch_is_a_data_error():
    with pytest.raises(DataError):
        f1_at_tau([0, 1], [0], 0.5)
    with pytest.raises(DataError):
        sample_accuracy([0, 1], [0])


def test_greedy_matches_independent_oracle_on_1000_pairs():
    for pred, gt in label_pairs(7):
        for tau in THRESHOLDS:
            entry = f1_at_tau(pred, gt, tau)
            counts = greedy_counts(pred, gt, tau)
            assert (entry.tp, entry.fp, entry.fn) == counts
            assert entry.f1 == f1_from_counts(*counts)


def test_greedy_against_optimal_assignment():
    """Greedy equals the optimum at 0.5; below that, order sensitivity is possible."""
    flagged = {tau: 0 for tau in THRESHOLDS}
    for pred, gt in label_pairs(11, 2000):
        for tau in THRESHOLDS:
            tp = f1_at_tau(pred, gt, tau).tp
            best = optimal_tp(pred, gt, tau)
            assert tp <= best
            flagged[tau] += tp < best
    assert flagged[0.5] == 0
    print(f"\nmatching-order discrepancies per threshold: {flagged}")


def test_known_order_sensitive_case():
    gt = [0] * 4 + [1] + [0] * 15
    pred = [0] * 14 + [2] + [0] * 5
    # the first predicted A segment grabs the long GT A segment; the optimum pairs it with the short one
    assert f1_at_tau(pred, gt, 0.25).tp == 1
    assert optimal_tp(pred, gt, 0.25) == 2


@settings(max_examples=300, deadline=None)
@given(labels_strategy)
def test_f1_non_increasing_in_threshold(pair):
    pred, gt = pair
    scores = [f1_at_tau(pred, gt, t).f1 for t in (0.0, 0.1, 0.25, 0.5, 0.75, 1.0)]
    assert all(a >= b for a, b in zip(scores, scores[1:]))


@settings(max_examples=300, deadline=None)
@given(labels_strategy)
def test_time_reversal_at_half_overlap(pair):
    # at IoU >= 0.5 every GT segment can match at most one prediction, so order is irrelevant
    pred, gt = pair
    fwd, bwd = f1_at_tau(pred, gt, 0.5), f1_at_tau(pred[::-1], gt[::-1], 0.5)
    assert (fwd.tp, fwd.fp, fwd.fn) == (bwd.tp, bwd.fp, bwd.fn)


def test_time_reversal_can_break_below_half():
    gt = [0] * 4 + [1] + [0] * 15
    pred = [0] * 14 + [2] + [0] * 5
    fwd = f1_at_tau(pred, gt, 0.25).tp
    bwd = f1_at_tau(pred[::-1], gt[::-1], 0.25).tp
    assert fwd != bwd


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5), st.integers(2, 30), st.integers(0, 3), st.integers(1, 6))
def test_splitting_a_correct_segment(n_pieces, length, label, other):
    gt = [other % 4 if other % 4 != label else (label + 1) % 4] * 5 + [label] * length
    gt_segments = extract_segments(gt)
    target = gt_segments[-1]
    cuts = np.linspace(target.start, target.end, min(n_pieces, length) + 1).astype(int)
    split = gt_segments[:-1] + [Segment(label, int(a), int(b)) for a, b in zip(cuts, cuts[1:])]
    whole = f1_from_segments(gt_segments, gt_segments, 0.5).f1
    broken = f1_from_segments(split, gt_segments, 0.5).f1
    assert broken <= whole
    if len(split) > len(gt_segments):
        assert broken < whole


def test_many_pieces_fall_below_threshold():
    gt = [Segment(0, 0, 100)]
    pieces = [Segment(0, 10 * i, 10 * i + 10) for i in range(10)]
    assert f1_from_segments(pieces, gt, 0.5).tp == 0


# --- accuracy --------------------------------------------------------------------

def test_accuracy_examples():
    assert sample_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert sample_accuracy([0, 0], [1, 1]) == 0.0
    assert sample_accuracy([0] * 10, [0] * 5 + [1] * 5) == 0.5


def test_accuracy_matches_counting_oracle():
    for pred, gt in label_pairs(3):
        count = sum(int(a == b) for a, b in zip(pred, gt))
        assert sample_accuracy(pred, gt) == count / len(gt)

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from firecontract.contracts import OCCUPANCY_RULES
from firecontract.errors import DataError, GridMismatch
from firecontract.grid import FireSet, GridSpec, LabelField, OutputRecord, ScoreField, global_scope
from firecontract.matching import (EXACT, MatchCounts, Tolerated, Union, brute_force_counts,
                                   decision_f1, dilate, dilated_counts, f1_from_counts,
                                   match_predicate, parse_rule, rule_from_dict)


def loop_counts(pred, obs, rule):
    """Plain-Python pairwise oracle, independent of both vectorised paths."""
    P, O = list(pred), list(obs)
    tp = sum(any(match_predicate(p, o, rule) for o in O) for p in P)
    fn = sum(not any(match_predicate(p, o, rule) for p in P) for o in O)
    return tp, len(P) - tp, fn


def random_sets(rng, spec, density=0.1):
    p = FireSet.from_mask(spec, rng.random(spec.shape) < density)
    o = FireSet.from_mask(spec, rng.random(spec.shape) < density)
    return p, o


def as_tuple(c):
    return (c.tp, c.fp, c.fn_)


def test_f1_formula():
    assert f1_from_counts(MatchCounts(2, 1, 1, 3, 3)) == pytest.approx(2 / 3)
    assert f1_from_counts(MatchCounts(0, 0, 0, 0, 0)) == 0.0
    assert f1_from_counts(MatchCounts(5, 0, 0, 5, 5)) == 1.0


def test_counts_invariants():
    with pytest.raises(DataError):
        MatchCounts(1, 1, 0, 3, 1)
    with pytest.raises(DataError):
        MatchCounts(0, 0, 2, 0, 1)
    with pytest.raises(DataError):
        MatchCounts(-1, 1, 0, 0, 0)


def test_predicate_hand_cases():
    t = Tolerated(2, 1)
    assert match_predicate((0, 0, 0), (1, 2, 2), t)
    assert not match_predicate((0, 0, 0), (2, 0, 0), t)
    assert not match_predicate((0, 0, 0), (0, 3, 0), t)
    assert match_predicate((0, 0, 0), (0, 0, 0), EXACT)
    assert not match_predicate((0, 0, 0), (0, 0, 1), EXACT)
    assert match_predicate((3, 3, 3), (3, 3, 3), Union((Tolerated(0, 0),)))


def test_hand_worked_one_sided_counts():
    spec = GridSpec(1, 1, 10)
    pred = FireSet(spec, [(0, 0, 0), (0, 0, 1), (0, 0, 9)])
    obs = FireSet(spec, [(0, 0, 2), (0, 0, 5)])
    # k=1: predictions at 1 matches obs at 2; 0 and 9 do not; obs 5 unmatched
    c = dilated_counts(pred, obs, Tolerated(1, 0))
    assert as_tuple(c) == (1, 2, 1)
    # k=2: both 0 and 1 match obs 2, so TP=2 exceeds the one matched observation
    c = dilated_counts(pred, obs, Tolerated(2, 0))
    assert as_tuple(c) == (2, 1, 1)


def test_empty_sets():
    spec = GridSpec(2, 4, 4)
    obs = FireSet(spec, [(0, 1, 1), (1, 2, 2)])
    c = dilated_counts(FireSet.empty(spec), obs, Tolerated(8, 3))
    assert as_tuple(c) == (0, 0, 2)
    c = dilated_counts(obs, FireSet.empty(spec), EXACT)
    assert as_tuple(c) == (0, 2, 0)


@pytest.mark.parametrize("rule", [EXACT, Tolerated(0, 0), Tolerated(3, 2),
                                  OCCUPANCY_RULES["union"]])
def test_self_match(rule):
    rng = np.random.default_rng(1)
    spec = GridSpec(3, 8, 8)
    s = FireSet.from_mask(spec, rng.random(spec.shape) < 0.2)
    assert as_tuple(dilated_counts(s, s, rule)) == (len(s), 0, 0)


def test_grid_mismatch():
    a = FireSet.empty(GridSpec(1, 2, 2))
    b = FireSet.empty(GridSpec(1, 2, 3))
    with pytest.raises(GridMismatch):
        dilated_counts(a, b, EXACT)
    with pytest.raises(GridMismatch):
        brute_force_counts(a, b, EXACT)


def test_three_routes_agree_small():
    rng = np.random.default_rng(11)
    for trial in range(40):
        spec = GridSpec(*rng.integers(1, 5, size=3))
        pred, obs = random_sets(rng, spec, 0.3)
        for k, dt in itertools.product((0, 1, 2), (0, 1)):
            rule = Union((EXACT, Tolerated(k, dt))) if trial % 2 else Tolerated(k, dt)
            fast = as_tuple(dilated_counts(pred, obs, rule))
            assert fast == as_tuple(brute_force_counts(pred, obs, rule))
            assert fast == loop_counts(pred, obs, rule)


def test_dilate_matches_direct_neighbourhood():
    mask = np.zeros((5, 9, 9), bool)
    mask[2, 4, 4] = True
    grown = dilate(mask, Tolerated(2, 1))
    expected = np.zeros_like(mask)
    expected[1:4, 2:7, 2:7] = True
    assert np.array_equal(grown, expected)
    # edges are clipped, not wrapped
    mask = np.zeros((1, 4, 4), bool)
    mask[0, 0, 0] = True
    grown = dilate(mask, Tolerated(1, 0))
    assert grown.sum() == 4 and not grown[0, 3, 3]


def test_union_of_occupancy_defaults_equals_tolerated_8_3():
    rng = np.random.default_rng(5)
    spec = GridSpec(4, 20, 20)
    for _ in range(10):
        pred, obs = random_sets(rng, spec, 0.05)
        assert as_tuple(dilated_counts(pred, obs, OCCUPANCY_RULES["union"])) == \
            as_tuple(dilated_counts(pred, obs, Tolerated(8, 3)))


def test_decision_f1_identity_record():
    spec = GridSpec(2, 6, 6)
    y = np.zeros(spec.shape, bool)
    y[0, 2:4, 2:4] = True
    rec = OutputRecord(ScoreField(spec, y.astype(float)), LabelField(spec, y))
    for rule in OCCUPANCY_RULES.values():
        assert decision_f1(rec, 0.5, rule, global_scope(spec)) == 1.0


def test_rule_parsing_and_serialisation():
    assert parse_rule("strict") == EXACT
    assert parse_rule("tolerated") == Tolerated(8, 0)
    assert parse_rule("union") == Union((EXACT, Tolerated(8, 3)))
    assert parse_rule("tolerated:4:1") == Tolerated(4, 1)
    for rule in OCCUPANCY_RULES.values():
        assert rule_from_dict(rule.to_dict()) == rule
    with pytest.raises(DataError):
        parse_rule("fuzzy")
    with pytest.raises(DataError):
        Tolerated(-1, 0)


coords = st.tuples(st.integers(0, 6), st.integers(0, 12), st.integers(0, 12))
rules = st.builds(Tolerated, st.integers(0, 5), st.integers(0, 3))


@given(coords, coords, rules)
def test_predicate_symmetry(p, o, rule):
    assert match_predicate(p, o, rule) == match_predicate(o, p, rule)
    u = Union((EXACT, rule))
    assert match_predicate(p, o, u) == match_predicate(o, p, u)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.integers(0, 2))
def test_tolerance_monotone(seed, k, dt):
    rng = np.random.default_rng(seed)
    spec = GridSpec(3, 7, 7)
    pred, obs = random_sets(rng, spec, 0.15)
    small = dilated_counts(pred, obs, Tolerated(k, dt))
    big = dilated_counts(pred, obs, Tolerated(k + 1, dt + 1))
    assert big.tp >= small.tp and big.fn_ <= small.fn_
    assert f1_from_counts(big) >= f1_from_counts(small)

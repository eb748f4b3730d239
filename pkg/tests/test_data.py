import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvb_detector.data import (
    DataError,
    Dataset,
    Observation,
    allowed_from_counts,
    compute_allowed_set,
    dataset_to_csv,
    parse_dataset,
)

from conftest import events_at, make_dataset


def parse(text, m=1, t_max="auto"):
    return parse_dataset(io.StringIO(text), m, t_max)


class TestParse:
    def test_auto_horizon(self):
        d = parse("time,status\n3,1\n5,0\n")
        assert (d.n, d.t_max, d.p) == (2, 5, 0)

    def test_time_zero_rejected(self):
        with pytest.raises(DataError, match="time out of range"):
            parse("time,status\n0,1\n")

    def test_error_reports_file_line(self):
        with pytest.raises(DataError, match="line 3"):
            parse("time,status\n1,1\n2,5\n", m=2)

    def test_status_above_m(self):
        with pytest.raises(DataError, match="status"):
            parse("time,status\n1,3\n", m=2)

    def test_censored_beyond_horizon(self):
        with pytest.raises(DataError, match="time out of range"):
            parse("time,status\n5,0\n", t_max=4)

    def test_event_at_horizon_plus_one(self):
        d = parse("time,status\n5,1\n2,1\n", t_max=4)
        assert d.t_max == 4 and d.times.tolist() == [5, 2]

    def test_malformed_cell(self):
        with pytest.raises(DataError, match="line 2: malformed"):
            parse("time,status,x1\n1,1,abc\n")

    def test_unknown_column(self):
        with pytest.raises(DataError, match="unexpected covariate"):
            parse("time,status,age\n1,1,2.0\n")

    def test_empty(self):
        with pytest.raises(DataError, match="empty"):
            parse("")
        with pytest.raises(DataError, match="empty"):
            parse("time,status\n")

    def test_crlf_and_covariates(self):
        d = parse("time,status,x1,x2\r\n2,1,0.5,-1\r\n3,0,1.5,2\r\n")
        assert d.p == 2
        np.testing.assert_array_equal(d.covariates, [[0.5, -1], [1.5, 2]])

    def test_round_trip(self):
        d = make_dataset([1, 4, 3], [1, 0, 2], 2, 4, x=[[0.1], [0.2], [1 / 3]])
        back = parse(dataset_to_csv(d), m=2, t_max=4)
        np.testing.assert_array_equal(back.covariates, d.covariates)
        np.testing.assert_array_equal(back.times, d.times)

    def test_immutable(self):
        d = events_at([1, 2], 3)
        with pytest.raises(ValueError):
            d.times[0] = 3

    def test_from_observations(self):
        d = Dataset.from_observations([Observation(2, 1, (1.0,)), Observation(3, 0, (2.0,))], m=1)
        assert d.t_max == 3 and d.observations[1] == Observation(3, 0, (2.0,))


class TestAllowedSet:
    def test_events_everywhere(self):
        assert compute_allowed_set(events_at([1, 2, 3, 4, 5], 5)).allowed == (2, 3, 4)

    def test_sandwiched_gap(self):
        assert compute_allowed_set(events_at([1, 2, 3, 5], 6)).allowed == (2, 3, 5)

    def test_double_gap(self):
        assert compute_allowed_set(events_at([1, 4], 4)).allowed == (2,)

    def test_single_missing_time(self):
        a = compute_allowed_set(events_at([t for t in range(1, 15) if t != 7], 14))
        assert 7 not in a
        assert 8 in a
        assert 1 not in a and 14 not in a

    def test_short_horizon_is_empty(self):
        assert len(compute_allowed_set(events_at([1, 2], 2))) == 0

    def test_censored_and_beyond_horizon_ignored(self):
        base = events_at([1, 2, 3, 5], 6)
        more = make_dataset([1, 2, 3, 5, 4, 7], [1, 1, 1, 1, 0, 1], 1, 6)
        assert compute_allowed_set(more).allowed == compute_allowed_set(base).allowed

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=30))
    def test_rules_hold(self, counts):
        a = allowed_from_counts(counts)
        e = [0] + list(counts) + [0]  # 1-based with padding
        t_max = len(counts)
        for t in a:
            assert 2 <= t <= t_max - 1
            assert not (e[t] == 0 and e[t - 1] == 0)
            assert not (e[t] == 0 and e[t - 1] > 0 and e[t + 1] > 0)
        for t in range(2, t_max):
            if t not in a:
                assert (e[t] == 0 and e[t - 1] == 0) or (e[t] == 0 and e[t - 1] > 0 and e[t + 1] > 0)

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(1, 10), st.integers(0, 2)), min_size=1, max_size=40), st.randoms())
    def test_order_and_censoring_invariance(self, rows, rnd):
        rows = [(t, s) for t, s in rows if not (s == 0 and t > 9)]
        if not rows:
            return
        d = make_dataset([r[0] for r in rows], [r[1] for r in rows], 2, 9)
        rnd.shuffle(rows)
        shuffled = make_dataset([r[0] for r in rows], [r[1] for r in rows], 2, 9)
        assert compute_allowed_set(d) == compute_allowed_set(shuffled)
        events = [r for r in rows if r[1] > 0]
        if events:
            only = make_dataset([r[0] for r in events], [r[1] for r in events], 2, 9)
            assert compute_allowed_set(only).allowed == compute_allowed_set(d).allowed

    def test_mask(self):
        a = compute_allowed_set(events_at([1, 2, 3, 5], 6))
        assert a.mask.tolist() == [False, True, True, False, True, False]


def test_patterns_and_cells_agree():
    d = make_dataset([2, 3, 5], [1, 0, 2], 2, 4, x=[[0.0], [1.0], [0.0]])
    pat = d.patterns
    assert pat.events.sum() == 1  # the time-5 record is beyond the horizon
    cells = d.cells
    assert cells.size == 2 + 3 + 4
    assert cells.event_cause.tolist() == [-1, 0, -1, -1, -1, -1, -1, -1, -1]

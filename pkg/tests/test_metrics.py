import pytest
from hypothesis import given, strategies as st

from jtm.errors import DataError
from jtm.metrics import UserMetrics, aggregate, metrics_for_user


class TestPerUser:
    def test_fixture(self):
        m = metrics_for_user([1, 2], [1, 3, 4, 5])
        assert (m.precision, m.recall) == (0.5, 0.25)
        assert m.f_measure == pytest.approx(1 / 3, abs=1e-15)

    def test_perfect(self):
        assert metrics_for_user([1, 2, 3], [3, 2, 1]) == UserMetrics(1.0, 1.0, 1.0)

    def test_disjoint(self):
        assert metrics_for_user([1, 2], [3]) == UserMetrics(0.0, 0.0, 0.0)

    def test_empty_truth(self):
        with pytest.raises(DataError):
            metrics_for_user([1], [])

    @given(st.lists(st.integers(0, 30), min_size=1, max_size=20, unique=True),
           st.sets(st.integers(0, 30), min_size=1, max_size=20))
    def test_harmonic_mean_bounds(self, retrieved, truth):
        m = metrics_for_user(retrieved, truth)
        if m.precision + m.recall > 0:
            assert min(m.precision, m.recall) - 1e-12 <= m.f_measure <= max(m.precision, m.recall) + 1e-12
        else:
            assert m.f_measure == 0.0
        assert metrics_for_user(list(reversed(retrieved)), truth) == m

    @given(st.lists(st.integers(0, 30), min_size=1, max_size=20, unique=True),
           st.sets(st.integers(0, 30), min_size=1, max_size=20))
    def test_recall_monotone_in_m(self, ranking, truth):
        recalls = [metrics_for_user(ranking[:m], truth).recall for m in range(1, len(ranking) + 1)]
        assert recalls == sorted(recalls)


class TestAggregate:
    def test_mean_f(self):
        rep = aggregate([UserMetrics(0.5, 0.25, 1 / 3), UserMetrics(1, 1, 1)])
        assert rep.f_measure == pytest.approx(2 / 3, abs=1e-12)
        assert rep.users_evaluated == 2

    def test_single_user(self):
        m = UserMetrics(0.2, 0.4, 0.8 / 3)
        rep = aggregate([m])
        assert (rep.precision, rep.recall, rep.f_measure) == (m.precision, m.recall, m.f_measure)

    def test_skipped_not_in_denominator(self):
        rep = aggregate([UserMetrics(1, 1, 1)], skipped=3)
        assert rep.recall == 1.0 and rep.users_skipped == 3

    def test_no_users(self):
        with pytest.raises(DataError):
            aggregate([])

    def test_csv(self):
        rep = aggregate([UserMetrics(0.5, 0.25, 1 / 3)])
        assert rep.to_csv().splitlines() == [
            "metric,value,users", "precision,0.500000,1", "recall,0.250000,1", "f_measure,0.333333,1",
        ]
        assert "recall" in rep.to_table()

import pytest
from hypothesis import given, settings, strategies as st

from jtm.corpus import (
    Interaction,
    SplitSpec,
    TrainingSample,
    UserSequence,
    build_user_sequences,
    load_interactions,
    make_eval_cases,
    make_training_samples,
    split_users,
)
from jtm.errors import ConfigError, DataError, EmptyCorpusError, ParseError


def _seqs(n):
    return [UserSequence(u, (1, 2, 3)) for u in range(n)]


class TestLoadInteractions:
    def test_single_line(self, tmp_path):
        path = tmp_path / "x.tsv"
        path.write_text("7\t42\t3\t1000\n")
        assert load_interactions(path) == [Interaction(7, 42, 3, 1000)]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "x.tsv"
        path.write_text("")
        with pytest.raises(EmptyCorpusError):
            load_interactions(path)

    def test_missing_field_reports_line(self, tmp_path):
        path = tmp_path / "x.tsv"
        path.write_text("1\t2\t3\t4\n7\t42\t3\n")
        with pytest.raises(ParseError) as info:
            load_interactions(path)
        assert info.value.lineno == 2

    def test_non_integer(self, tmp_path):
        path = tmp_path / "x.tsv"
        path.write_text("1\tx\t3\t4\n")
        with pytest.raises(ParseError):
            load_interactions(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_interactions(tmp_path / "nope.tsv")


class TestBuildUserSequences:
    def test_threshold_drops_short_users(self):
        recs = [Interaction(1, i, 0, i) for i in range(9)] + [Interaction(2, i, 0, i) for i in range(10)]
        seqs = build_user_sequences(recs, 10)
        assert [s.user_id for s in seqs] == [2]

    def test_sorted_by_time(self):
        recs = [Interaction(1, 50, 0, 5), Interaction(1, 30, 0, 3), Interaction(1, 90, 0, 9)]
        assert build_user_sequences(recs, 1)[0].behaviors == (30, 50, 90)

    def test_ties_broken_by_item(self):
        recs = [Interaction(1, 9, 0, 1), Interaction(1, 4, 0, 1)]
        assert build_user_sequences(recs, 1)[0].behaviors == (4, 9)

    def test_min_one_keeps_everyone(self):
        recs = [Interaction(1, 1, 0, 0), Interaction(2, 1, 0, 0)]
        assert len(build_user_sequences(recs, 1)) == 2

    def test_bad_threshold(self):
        with pytest.raises(ConfigError):
            build_user_sequences([], 0)


class TestSplitUsers:
    def test_sizes_and_repeatability(self):
        spec = SplitSpec(0.8, 0.1, 0.1, seed=5)
        tr, va, te = split_users(_seqs(10), spec)
        assert (len(tr), len(va), len(te)) == (8, 1, 1)
        assert split_users(_seqs(10), spec) == (tr, va, te)

    @given(st.integers(3, 200), st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_partition(self, n, seed):
        tr, va, te = split_users(_seqs(n), SplitSpec(0.8, 0.1, 0.1, seed=seed))
        assert tr | va | te == set(range(n))
        assert not (tr & va or tr & te or va & te)
        assert tr and va and te

    def test_too_few_users(self):
        with pytest.raises(DataError):
            split_users(_seqs(2), SplitSpec())

    @pytest.mark.parametrize("fracs", [(0.5, 0.5, 0.0), (0.7, 0.2, 0.2), (1.2, -0.1, -0.1)])
    def test_invalid_fractions(self, fracs):
        with pytest.raises(ConfigError):
            SplitSpec(*fracs)


class TestTrainingSamples:
    def test_prefixes(self):
        out = make_training_samples([UserSequence(1, ("a", "b", "c"))])
        assert [(s.behavior_prefix, s.target_item) for s in out] == [((), "a"), (("a",), "b"), (("a", "b"), "c")]

    def test_window_truncation(self):
        out = make_training_samples([UserSequence(1, ("a", "b", "c"))], window_len=1)
        assert [s.behavior_prefix for s in out] == [(), ("a",), ("b",)]

    def test_single_behavior(self):
        assert make_training_samples([UserSequence(1, ("a",))]) == [TrainingSample(1, (), "a")]

    @given(st.lists(st.integers(0, 50), min_size=1, max_size=30), st.integers(1, 10))
    def test_prefix_is_strict_past(self, behaviors, window):
        out = make_training_samples([UserSequence(0, tuple(behaviors))], window_len=window)
        for i, s in enumerate(out):
            assert s.target_item == behaviors[i]
            assert s.behavior_prefix == tuple(behaviors[max(0, i - window):i])


class TestEvalCases:
    def test_even(self):
        (case,), _ = make_eval_cases([UserSequence(1, ("a", "b", "c", "d"))])
        assert case.known_behaviors == ("a", "b") and case.ground_truth == {"c", "d"}

    def test_odd_uses_ceiling(self):
        (case,), _ = make_eval_cases([UserSequence(1, ("a", "b", "c"))])
        assert case.known_behaviors == ("a", "b") and case.ground_truth == {"c"}

    def test_short_skipped(self):
        cases, skipped = make_eval_cases([UserSequence(1, ("a",))])
        assert cases == [] and skipped == 1

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctbodycomp.flagging import (
    flag_cases,
    flags_to_csv,
    quadrant_summary,
    quantile_threshold,
)


class TestFlagCases:
    def test_strict_exceedance(self):
        decisions = flag_cases([("a", 0.1), ("b", 0.5), ("c", 0.9)], threshold=0.5)
        assert [d.flagged for d in decisions] == [False, False, True]
        assert [d.case_id for d in decisions] == ["a", "b", "c"]

    def test_minus_infinity_flags_everything(self):
        decisions = flag_cases([("a", -5.0), ("b", 0.0)], threshold=float("-inf"))
        assert all(d.flagged for d in decisions)

    def test_matches_brute_force_comparison(self):
        rng = np.random.default_rng(3)
        values = [(f"c{i}", float(v)) for i, v in enumerate(rng.normal(size=200))]
        threshold = 0.3
        decisions = flag_cases(values, threshold)
        for (case_id, value), decision in zip(values, decisions):
            assert decision.flagged == (value > threshold)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(4)
        values = [(f"c{i}", float(v)) for i, v in enumerate(rng.random(100))]
        counts = [
            sum(d.flagged for d in flag_cases(values, t))
            for t in np.linspace(0, 1, 11)
        ]
        assert all(b <= a for a, b in zip(counts, counts[1:]))

    def test_nan_threshold_rejected(self):
        with pytest.raises(ValueError):
            flag_cases([("a", 1.0)], float("nan"))

    def test_csv_report(self):
        text = flags_to_csv(flag_cases([("a", 0.7)], 0.5, metric_name="avg_variance"))
        lines = text.strip().split("\n")
        assert lines[0] == "case_id,metric_name,metric_value,threshold,flagged"
        assert lines[1] == "a,avg_variance,0.7,0.5,true"


class TestQuadrantSummary:
    def test_published_high_error_case(self):
        # A 5.17% difference with high uncertainty against the 2.5% margin.
        summary = quadrant_summary(
            [(5.17, 0.9)], diff_threshold_pct=2.5, uncertainty_threshold=0.5
        )
        assert summary.high_diff_high_unc == 1
        assert summary.total == 1

    def test_origin_is_low_low(self):
        summary = quadrant_summary([(0.0, 0.0)], 2.5, 0.5)
        assert summary.low_diff_low_unc == 1

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.floats(0, 50, allow_nan=False), st.floats(0, 1, allow_nan=False)
            ),
            max_size=40,
        ),
        st.floats(0.1, 10, allow_nan=False),
        st.floats(0.01, 0.99, allow_nan=False),
    )
    def test_partition_property(self, cases, diff_thr, unc_thr):
        summary = quadrant_summary(cases, diff_thr, unc_thr)
        assert summary.total == len(cases)


class TestQuantileThreshold:
    def test_top_fraction_flagged(self):
        values = [float(v) for v in range(100)]
        threshold = quantile_threshold(values, top_fraction=0.1)
        flagged = sum(1 for v in values if v > threshold)
        assert flagged == 10

    def test_validation(self):
        with pytest.raises(ValueError):
            quantile_threshold([], 0.5)
        with pytest.raises(ValueError):
            quantile_threshold([1.0], 1.5)

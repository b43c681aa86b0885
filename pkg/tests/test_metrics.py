import numpy as np
import pytest

from ssqoe import ValidationError, lcc, mean_scores, rmse_n, score_pair, srocc
from ssqoe.metrics import DegenerateInputWarning


def rank_oracle(values):
    """Average fractional ranks, built from sorting alone."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


class TestLcc:
    def test_identity(self):
        assert lcc([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_negation(self):
        assert lcc([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0)

    def test_unit_example(self):
        # oracle: np.corrcoef([1,2,3,4],[2,4,5,9]) -> 0.9647638212377322
        value = lcc([1, 2, 3, 4], [2, 4, 5, 9])
        assert value == pytest.approx(np.corrcoef([1, 2, 3, 4], [2, 4, 5, 9])[0, 1],
                                      abs=1e-12)
        assert value == pytest.approx(0.964764, abs=1e-4)

    def test_zero_variance_is_zero_with_warning(self):
        with pytest.warns(DegenerateInputWarning):
            assert lcc([1, 1, 1], [1, 2, 3]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            lcc([1, 2], [1, 2, 3])

    def test_symmetry_and_affine_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = rng.standard_normal(20)
            t = rng.standard_normal(20)
            base = lcc(p, t)
            assert lcc(t, p) == pytest.approx(base, abs=1e-12)
            a, b = rng.uniform(0.1, 5), rng.uniform(-10, 10)
            assert lcc(a * p + b, t) == pytest.approx(base, abs=1e-9)


class TestSrocc:
    def test_monotone_pairs(self):
        assert srocc([1, 5, 9], [2, 3, 10]) == pytest.approx(1.0)
        assert srocc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_tie_example(self):
        # ranks pred=(1.5,1.5,3) vs truth=(1,2,3): Pearson = sqrt(3)/2
        value = srocc([1, 1, 2], [1, 2, 3])
        assert value == pytest.approx(np.sqrt(3) / 2, abs=1e-12)
        assert value == pytest.approx(0.866, abs=1e-3)

    def test_matches_rank_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = rng.integers(0, 6, 15).astype(float)   # plenty of ties
            t = rng.standard_normal(15)
            expected = np.corrcoef(rank_oracle(p), rank_oracle(t))[0, 1]
            if np.isnan(expected):
                continue
            assert srocc(p, t) == pytest.approx(expected, abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            p = rng.standard_normal(25)
            t = rng.standard_normal(25)
            base = srocc(p, t)
            assert srocc(np.exp(p), t) == pytest.approx(base, abs=1e-12)
            assert srocc(p ** 3, t) == pytest.approx(base, abs=1e-12)
            assert srocc(t, p) == pytest.approx(base, abs=1e-12)


class TestRmseN:
    def test_perfect(self):
        assert rmse_n([1, 2, 3], [1, 2, 3], 0, 100) == 0.0

    def test_constant_offset_percent_of_range(self):
        pred = np.array([10.0, 20.0, 30.0])
        assert rmse_n(pred, pred - 5, 0, 100) == pytest.approx(5.0)

    def test_narrow_scale_exceeds_100(self):
        pred = np.array([1.0, 2.0, 3.0])
        assert rmse_n(pred, pred - 5, 1, 5) == pytest.approx(125.0)

    def test_scales_inversely_with_range(self):
        rng = np.random.default_rng(3)
        p, t = rng.random(30), rng.random(30)
        assert rmse_n(p, t, 0, 10) == pytest.approx(10 * rmse_n(p, t, 0, 100), rel=1e-12)

    def test_invalid_scale(self):
        with pytest.raises(ValidationError):
            rmse_n([1.0], [1.0], 5, 5)


class TestAggregation:
    def test_score_pair_fields(self):
        s = score_pair([1, 2, 3, 4], [2, 4, 5, 9], 0, 10)
        assert s.n == 4
        assert abs(s.lcc) <= 1 and abs(s.srocc) <= 1 and s.rmse_n >= 0

    def test_mean_scores_unweighted(self):
        a = score_pair([1, 2, 3], [1, 2, 3], 0, 10)
        b = score_pair([1, 2, 3], [3, 2, 1], 0, 10)
        m = mean_scores([a, b])
        assert m.lcc == pytest.approx((a.lcc + b.lcc) / 2)
        assert m.rmse_n == pytest.approx((a.rmse_n + b.rmse_n) / 2)
        assert m.n == 3.0

import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from permrank.errors import MetricError, ResourceGuardError
from permrank.evaluation import (alpha_sweep, auc, exhaustive_oracle,
                                 list_metric_pearson, pearson,
                                 relative_improvement)
from permrank.pmatch import ScoredCandidate
from permrank.prank import DpwnModel
from permrank.simulator import SimSpec, gen_catalog, gen_logs


class TestAuc:
    def test_perfect(self):
        assert auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0

    def test_all_tied(self):
        assert auc([0, 1, 0, 1], [0.3] * 4) == 0.5

    def test_pair_count(self):
        assert auc([1, 0, 1, 0], [0.9, 0.8, 0.4, 0.1]) == 0.75

    @pytest.mark.parametrize("labels", [[1, 1, 1], [0, 0], [0, 2, 1]])
    def test_bad_labels(self, labels):
        with pytest.raises(MetricError):
            auc(labels, np.linspace(0, 1, len(labels)))

    @given(st.lists(st.integers(-50, 50), min_size=4, max_size=30), st.integers(0, 2 ** 31))
    def test_monotone_invariance(self, scores, seed):
        labels = np.random.default_rng(seed).integers(0, 2, len(scores))
        assume(0 < labels.sum() < len(labels))
        s = np.asarray(scores, dtype=float) / 10
        assert auc(labels, s) == pytest.approx(auc(labels, np.exp(s) * 3 + 1))

    def test_matches_pair_enumeration(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, 60)
        s = np.round(rng.normal(size=60), 1)
        pos, neg = s[y == 1], s[y == 0]
        want = np.mean([(p > q) + 0.5 * (p == q) for p in pos for q in neg])
        assert auc(y, s) == pytest.approx(want)


class TestPearson:
    def test_affine(self):
        x = np.arange(6.0)
        assert pearson(x, 2 * x + 1) == pytest.approx(1.0)
        assert pearson(x, -x) == pytest.approx(-1.0)

    def test_closed_form(self):
        assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)

    def test_constant(self):
        with pytest.raises(MetricError):
            pearson([1, 1, 1], [1, 2, 3])

    @given(st.lists(st.floats(-100, 100), min_size=3, max_size=20),
           st.floats(0.1, 10), st.floats(-10, 10))
    def test_affine_invariance(self, xs, a, b):
        x = np.asarray(xs)
        assume(np.ptp(x) > 1e-3)
        y = np.sin(x) + x
        assume(np.ptp(y) > 1e-3)
        assert pearson(a * x + b, y) == pytest.approx(pearson(x, y), abs=1e-9)


@pytest.fixture(scope="module")
def logs():
    cat = gen_catalog(SimSpec(n_users=20, n_items=30))
    return cat, gen_logs(cat, 200, m=10, n=4, seed=0)


def test_list_pearson_cheating_oracle(logs):
    _, recs = logs
    assert list_metric_pearson(lambda r: sum(r.y_ctr), recs) == pytest.approx(1.0)


def test_list_pearson_constant(logs):
    _, recs = logs
    with pytest.raises(MetricError):
        list_metric_pearson(lambda r: 1.0, recs)
    with pytest.raises(MetricError):
        list_metric_pearson(lambda r: 1.0, recs[:1])


class TestRelativeImprovement:
    def test_example(self):
        assert relative_improvement(0.285, 0.278) == pytest.approx(0.0251798, abs=1e-6)

    def test_equal(self):
        assert relative_improvement(0.3, 0.3) == 0.0

    @pytest.mark.parametrize("ref", [0.0, -1.0])
    def test_bad_reference(self, ref):
        with pytest.raises(MetricError):
            relative_improvement(1.0, ref)


class TestOracle:
    def test_count(self):
        assert exhaustive_oracle(5, 2, lambda s: 0.0).evaluations == 20

    def test_guard(self):
        with pytest.raises(ResourceGuardError):
            exhaustive_oracle(20, 10, lambda s: 0.0)

    def test_lexicographic_tie(self):
        assert exhaustive_oracle(4, 2, lambda s: 1.0).best == (0, 1)

    def test_argmax(self):
        r = exhaustive_oracle(4, 3, lambda s: -abs(sum(i * w for i, w in zip(s, (3, 2, 1))) - 11),
                              full_table=True)
        assert len(r.table) == math.perm(4, 3)
        assert r.best_value == max(r.table.values())
        assert r.best == min(k for k, v in r.table.items() if v == r.best_value)


def test_alpha_sweep(logs):
    cat, recs = logs
    rng = np.random.default_rng(0)
    sessions = []
    for r in recs[:5]:
        sc = [ScoredCandidate(it, float(a), float(b))
              for it, a, b in zip(r.C, rng.uniform(0.05, 0.95, 10), rng.uniform(0.05, 0.95, 10))]
        sessions.append((r.user, r.C, sc))
    model = DpwnModel.init(cat.schema())
    rows = alpha_sweep(sessions, [0.0, 1.0, 7.0], 1.0, 4, 10, model)
    assert [a for a, _ in rows] == [0.0, 1.0, 7.0]
    assert all(0 < lr < 4 for _, lr in rows)
    with pytest.raises(MetricError):
        alpha_sweep(sessions, [], 1.0, 4, 10, model)

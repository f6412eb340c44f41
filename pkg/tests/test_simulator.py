import hashlib

import numpy as np
import pytest

from permrank.datamodel import save_dataset
from permrank.errors import ConfigError, DomainError
from permrank.simulator import (Catalog, SimSpec, click_prob, continue_prob,
                                gen_anchor_only_logs, gen_catalog, gen_logs,
                                list_probs, simulate_session,
                                true_expected_reward)


def _logit(p):
    return np.log(p / (1 - p))


def fixed_catalog(clicks, conts, prices, gamma_price=0.0, gamma_pos=0.0):
    """Single-user catalog with hand-set probabilities."""
    spec = SimSpec(n_users=1, n_items=len(clicks), n_categories=1, n_brands=1,
                   gamma_price=gamma_price, gamma_pos=gamma_pos)
    base = gen_catalog(spec)
    items = [type(it)(it.item_id, 0, 0, float(p)) for it, p in zip(base.items, prices)]
    return Catalog(spec, base.users, items,
                   _logit(np.asarray(clicks, float))[None, :],
                   _logit(np.asarray(conts, float))[None, :])


@pytest.fixture(scope="module")
def catalog():
    return gen_catalog(SimSpec(seed=0))


class TestCatalog:
    def test_deterministic(self):
        a, b = gen_catalog(SimSpec(seed=4)), gen_catalog(SimSpec(seed=4))
        assert a.items == b.items and a.users == b.users
        assert np.array_equal(a.click_logit, b.click_logit)

    def test_prices_positive(self):
        assert (gen_catalog(SimSpec(n_items=100)).prices > 0).all()

    def test_seeds_differ(self):
        assert not np.array_equal(gen_catalog(SimSpec(seed=0)).click_logit,
                                  gen_catalog(SimSpec(seed=1)).click_logit)

    def test_dense_ids(self, catalog):
        assert [it.item_id for it in catalog.items] == list(range(catalog.spec.n_items))
        assert [u.user_id for u in catalog.users] == list(range(catalog.spec.n_users))

    @pytest.mark.parametrize("kw", [{"n_users": 0}, {"n_items": 0}, {"gamma_pos": 0.1}])
    def test_bad_spec(self, kw):
        with pytest.raises(ConfigError):
            SimSpec(**kw)

    def test_spec_round_trip(self):
        s = SimSpec(gamma_price=0.5, seed=9)
        assert SimSpec.from_dict(s.to_dict()) == s


class TestProbabilities:
    def test_modifiers_off(self, catalog):
        spec = SimSpec(gamma_price=0.0, gamma_pos=0.0)
        cat = gen_catalog(spec)
        items = [3, 7, 1, 9]
        for perm in (items, items[::-1]):
            c, n = list_probs(cat, 0, perm)
            base_c = 1 / (1 + np.exp(-cat.click_logit[0, perm]))
            base_n = 1 / (1 + np.exp(-cat.next_logit[0, perm]))
            np.testing.assert_allclose(c, base_c)
            np.testing.assert_allclose(n, base_n)

    def test_anchor_lifts_cheap_item(self):
        cat = fixed_catalog([0.3, 0.3], [0.5, 0.5], [10.0, 50.0], gamma_price=1.0)
        a, b = 0, 1  # A cheap, B expensive
        assert click_prob(cat, 0, [b, a], 1) > click_prob(cat, 0, [a, b], 0)
        assert click_prob(cat, 0, [a, b], 1) == pytest.approx(0.3)

    def test_continue_decreasing(self, catalog):
        vals = [continue_prob(catalog, 0, [4, 4, 4, 4, 4], t) for t in range(5)]
        assert all(x > y for x, y in zip(vals, vals[1:]))

    def test_scalar_matches_vector(self, catalog):
        items = [11, 3, 42, 8, 19]
        c, n = list_probs(catalog, 2, items)
        for t in range(len(items)):
            assert c[t] == pytest.approx(click_prob(catalog, 2, items, t), abs=1e-15)
            assert n[t] == pytest.approx(continue_prob(catalog, 2, items, t), abs=1e-15)

    def test_out_of_range(self, catalog):
        with pytest.raises(DomainError):
            click_prob(catalog, 0, [1, 2], 2)
        with pytest.raises(DomainError):
            continue_prob(catalog, 0, [1, 2], -1)


class TestSession:
    def test_always_continue(self):
        cat = fixed_catalog([0.3] * 4, [1 - 1e-12] * 4, [1, 2, 3, 4])
        out = simulate_session(cat, 0, [0, 1, 2, 3], np.random.default_rng(0))
        assert out.exposure_mask == (1, 1, 1, 1)

    def test_never_continue(self):
        cat = fixed_catalog([0.3] * 4, [1e-12] * 4, [1, 2, 3, 4])
        out = simulate_session(cat, 0, [0, 1, 2, 3], np.random.default_rng(0))
        assert out.exposure_mask == (1, 0, 0, 0)
        assert out.y_ctr[1:] == (0, 0, 0)

    def test_empty_list(self, catalog):
        with pytest.raises(DomainError):
            simulate_session(catalog, 0, [], np.random.default_rng(0))

    def test_monte_carlo_first_click(self, catalog):
        items = [2, 5, 9, 14]
        rng = np.random.default_rng(123)
        n = 10_000
        hits = sum(simulate_session(catalog, 1, items, rng).y_ctr[0] for _ in range(n))
        p = click_prob(catalog, 1, items, 0)
        se = np.sqrt(p * (1 - p) / n)
        assert abs(hits / n - p) < 3 * se

    def test_monte_carlo_pv_ipv(self, catalog):
        items = [30, 1, 47, 12]
        rng = np.random.default_rng(7)
        pv, ipv = [], []
        for _ in range(10_000):
            o = simulate_session(catalog, 3, items, rng)
            pv.append(sum(o.exposure_mask))
            ipv.append(sum(o.y_ctr))
        e_pv, e_ipv = true_expected_reward(catalog, 3, items)
        for sample, mean in ((pv, e_pv), (ipv, e_ipv)):
            se = np.std(sample) / np.sqrt(len(sample))
            assert abs(np.mean(sample) - mean) < 3 * se


class TestExpectedReward:
    def test_full_continue(self):
        cat = fixed_catalog([0.3] * 4, [1 - 1e-15] * 4, [1, 2, 3, 4])
        assert true_expected_reward(cat, 0, [0, 1, 2, 3])[0] == pytest.approx(4.0)

    def test_single(self):
        cat = fixed_catalog([0.3], [0.5], [1.0])
        assert true_expected_reward(cat, 0, [0])[1] == pytest.approx(0.3)

    def test_two_items(self):
        cat = fixed_catalog([0.2, 0.4], [0.5, 0.9], [1.0, 2.0])
        assert true_expected_reward(cat, 0, [0, 1])[1] == pytest.approx(0.4)

    def test_permutation_sensitive(self):
        cat = fixed_catalog([0.3, 0.3], [0.8, 0.8], [10.0, 50.0], gamma_price=1.0)
        assert true_expected_reward(cat, 0, [1, 0])[1] > true_expected_reward(cat, 0, [0, 1])[1]

    def test_empty(self, catalog):
        with pytest.raises(DomainError):
            true_expected_reward(catalog, 0, [])


class TestLogs:
    def test_zero_sessions(self, catalog):
        assert gen_logs(catalog, 0, m=20, n=4) == []

    def test_deterministic_hash(self, catalog, tmp_path):
        digests = []
        for name in ("a", "b"):
            save_dataset(gen_logs(catalog, 1000, m=20, n=4, seed=0), tmp_path / name)
            digests.append(hashlib.sha256((tmp_path / name).read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    @pytest.mark.parametrize("m,n", [(10, 11), (500, 4), (5, 0)])
    def test_bad_sizes(self, catalog, m, n):
        with pytest.raises(ConfigError):
            gen_logs(catalog, 3, m=m, n=n)

    def test_unknown_policy(self, catalog):
        with pytest.raises(ConfigError):
            gen_logs(catalog, 3, m=10, n=4, policy="oracle")

    def test_shapes_and_order(self, catalog):
        recs = gen_logs(catalog, 50, m=20, n=4, seed=1)
        for r in recs:
            assert r.m == 20 and r.n == 4
            ids = [it.item_id for it in r.C]
            logits = catalog.click_logit[r.user.user_id, ids]
            assert (np.diff(logits) <= 0).all()

    def test_random_policy(self, catalog):
        recs = gen_logs(catalog, 20, m=10, n=3, policy="random", seed=2)
        assert all(set(r.v_indices()) <= set(range(10)) for r in recs)

    def test_anchor_lift_positive(self, catalog):
        recs = gen_logs(catalog, 4000, m=20, n=4, seed=0)
        lifted, plain = [], []
        for r in recs:
            for t in range(1, r.n):
                if r.exposure_mask[t]:
                    (lifted if r.V[t - 1].price > r.V[t].price else plain).append(r.y_ctr[t])
        assert np.mean(lifted) > np.mean(plain)

    def test_anchor_only_labels(self, catalog):
        for r in gen_anchor_only_logs(catalog, 30, m=10, n=4):
            want = [0] + [int(r.V[t - 1].price > r.V[t].price) for t in range(1, 4)]
            assert list(r.y_ctr) == want
            assert r.exposure_mask == (1, 1, 1, 1)

import inspect
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deltaxai.baselines import make_attributor
from deltaxai.core import AttributionMap, ChangeTarget, TimeSeries, WindowSpec, select_target_class
from deltaxai.metrics import (
    DEFAULT_K,
    METRIC_NAMES,
    MacroAggregate,
    MetricReport,
    aupd,
    aupp,
    corr_from_sequences,
    corr_metric,
    cpd,
    cpp,
    evaluate_suite,
    forward_fill_remove,
    mpd,
    pearson,
    saliency_order,
    substitute,
)
from deltaxai.models import RecurrentClassifier

from conftest import random_series


# ---------------------------------------------------------------------------
# independent loop oracles


def ff_oracle(x, removed):
    out = x.copy()
    M, D = x.shape
    for t in range(M):
        for d in range(D):
            if removed[t, d]:
                j = t - 1
                while j >= 0 and removed[j, d]:
                    j -= 1
                out[t, d] = x[j, d] if j >= 0 else x[t, d]
    return out


def brute_cumulative(f, series, spec, target, phi, K, descending):
    W = spec.window_size
    lo, hi = min(target.t1, target.t2), max(target.t1, target.t2)
    start = lo - W + 1
    x = series.values[start:hi + 1].copy()
    M, D = x.shape
    cells = [(t, d) for t in range(M) for d in range(D)]
    sign = -1.0 if descending else 1.0
    cells.sort(key=lambda td: (sign * abs(phi[td]), td[0], td[1]))

    def g(z):
        a = z[target.t1 - start - W + 1:target.t1 - start + 1]
        b = z[target.t2 - start - W + 1:target.t2 - start + 1]
        return f.predict(b) - f.predict(a)

    removed = np.zeros((M, D), dtype=bool)
    prev = g(x)
    steps = []
    for k in range(K):
        removed[cells[k]] = True
        cur = g(ff_oracle(x, removed))
        step = float(np.sum(np.abs(cur - prev)))
        steps.append(step)
        prev = cur
    return math.fsum(steps), steps


@pytest.fixture(scope="module")
def tiny():
    """W=3, D=2 model and series; a gap-1 target has 8 cells."""
    f = RecurrentClassifier.init(3, 2, 4, 2, seed=3)
    s = random_series(12, 2, 9, scale=2.0)
    spec = WindowSpec(3)
    return f, s, spec


# ---------------------------------------------------------------------------


class TestForwardFill:
    def test_middle_cell(self):
        x = np.array([[1.0], [2.0], [3.0]])
        np.testing.assert_array_equal(forward_fill_remove(x, [(1, 0)]), [[1.0], [1.0], [3.0]])

    def test_run_of_removals(self):
        x = np.array([[1.0], [2.0], [3.0]])
        np.testing.assert_array_equal(forward_fill_remove(x, [(1, 0), (2, 0)]), [[1.0], [1.0], [1.0]])

    def test_first_row_keeps_value(self):
        x = np.array([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(forward_fill_remove(x, [(0, 1)]), x)

    def test_bad_coordinate(self):
        with pytest.raises(IndexError):
            forward_fill_remove(np.zeros((3, 2)), [(3, 0)])

    @settings(max_examples=100, deadline=None)
    @given(data=st.data(), M=st.integers(1, 8), D=st.integers(1, 3))
    def test_matches_loop_oracle(self, data, M, D):
        x = data.draw(arrays(np.float64, (M, D), elements=st.floats(-10, 10)))
        mask = data.draw(arrays(np.bool_, (M, D)))
        got = forward_fill_remove(x, mask)
        np.testing.assert_array_equal(got, ff_oracle(x, mask))
        np.testing.assert_array_equal(got[~mask], x[~mask])

    def test_mask_stack(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(6, 2))
        masks = rng.random((5, 6, 2)) < 0.4
        stacked = forward_fill_remove(x, masks)
        for i in range(5):
            np.testing.assert_array_equal(stacked[i], ff_oracle(x, masks[i]))

    def test_other_substitutions(self):
        x = np.array([[1.0], [2.0], [6.0]])
        m = np.array([[False], [True], [False]])
        np.testing.assert_array_equal(substitute(x, m, "zero"), [[1.0], [0.0], [6.0]])
        np.testing.assert_array_equal(substitute(x, m, "average"), [[1.0], [3.0], [6.0]])
        with pytest.raises(ValueError):
            substitute(x, m, "blur")


class TestOrdering:
    def test_ties_go_to_earlier_time_then_feature(self):
        phi = np.array([[1.0, -2.0], [2.0, 0.5]])
        assert saliency_order(phi).tolist() == [1, 2, 0, 3]
        assert saliency_order(phi, descending=False).tolist() == [3, 0, 1, 2]


class TestCumulative:
    @pytest.mark.parametrize("t1,t2", [(5, 6), (6, 5)])
    def test_brute_force_cpd_cpp(self, tiny, t1, t2):
        f, s, spec = tiny
        tgt = ChangeTarget(t1, t2, 1, 0.0)
        rng = np.random.default_rng(t1)
        for _ in range(5):
            phi = rng.normal(size=(4, 2))
            phi[rng.integers(4), rng.integers(2)] = phi[0, 0]  # force a tie
            for K in range(0, 9):
                v, steps = cpd(f, s, spec, tgt, phi, K)
                bv, bsteps = brute_cumulative(f, s, spec, tgt, phi, K, True)
                assert v == bv
                np.testing.assert_array_equal(steps, bsteps)
                v, steps = cpp(f, s, spec, tgt, phi, K)
                bv, _ = brute_cumulative(f, s, spec, tgt, phi, K, False)
                assert v == bv

    def test_k_zero_is_zero(self, tiny):
        f, s, spec = tiny
        assert cpd(f, s, spec, ChangeTarget(5, 6, 0, 0.0), np.ones((4, 2)), 0)[0] == 0.0

    def test_monotone_in_k(self, trained_rnn, switch_data, spec12):
        s = switch_data[7]
        tgt = select_target_class(trained_rnn, s, spec12, 40, 41)
        phi = make_attributor("swing")(trained_rnn, s, spec12, tgt)
        vals = [cpd(trained_rnn, s, spec12, tgt, phi, K)[0] for K in range(0, 39, 3)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_k_too_large(self, tiny):
        f, s, spec = tiny
        with pytest.raises(ValueError):
            cpd(f, s, spec, ChangeTarget(5, 6, 0, 0.0), np.ones((4, 2)), 9)

    def test_shape_mismatch(self, tiny):
        f, s, spec = tiny
        with pytest.raises(ValueError):
            cpd(f, s, spec, ChangeTarget(5, 6, 0, 0.0), np.ones((3, 2)), 2)


class TestArea:
    def test_k_one_is_half_cpd(self, tiny):
        f, s, spec = tiny
        tgt = ChangeTarget(5, 6, 1, 0.0)
        phi = np.random.default_rng(1).normal(size=(4, 2))
        assert aupd(f, s, spec, tgt, phi, 1) == pytest.approx(cpd(f, s, spec, tgt, phi, 1)[0] / 2, abs=1e-15)

    def test_direct_formula_and_bound(self, tiny):
        f, s, spec = tiny
        tgt = ChangeTarget(5, 6, 1, 0.0)
        phi = np.random.default_rng(2).normal(size=(4, 2))
        for K in range(1, 9):
            C = [cpd(f, s, spec, tgt, phi, k)[0] for k in range(K + 1)]
            direct = sum((C[k] + C[k - 1]) / 2 for k in range(1, K + 1)) / K
            assert aupd(f, s, spec, tgt, phi, K) == pytest.approx(direct, rel=1e-12, abs=1e-15)
            assert aupd(f, s, spec, tgt, phi, K) <= C[K] + 1e-15
            assert aupp(f, s, spec, tgt, phi, K) <= cpp(f, s, spec, tgt, phi, K)[0] + 1e-15

    def test_needs_k(self, tiny):
        f, s, spec = tiny
        with pytest.raises(ValueError):
            aupd(f, s, spec, ChangeTarget(5, 6, 1, 0.0), np.ones((4, 2)), 0)


def _maps_by_value(times, spec, D=1):
    W = spec.window_size
    return [AttributionMap(T - W, np.full((W + 1, D), float(T)), ChangeTarget(T - 1, T, 0, 0.0), "x")
            for T in times]


class TestMacro:
    def test_hand_averages(self):
        # W=3, maps at T'=4..7 each constant T'; cell t averages T' in [t, t+2]
        spec = WindowSpec(3)
        agg = MacroAggregate(_maps_by_value(range(4, 8), spec), spec, 8)
        np.testing.assert_array_equal(agg.count, [0, 0, 1, 2, 3, 3, 2, 1])
        np.testing.assert_allclose(agg.values[:, 0], [0, 0, 4, 4.5, 5, 6, 6.5, 7], rtol=0, atol=1e-15)

    def test_identical_maps_unchanged_where_covered(self):
        spec = WindowSpec(4)
        maps = [AttributionMap(T - 4, np.full((5, 2), 0.3), ChangeTarget(T - 1, T, 0, 0.0), "x") for T in range(5, 12)]
        agg = MacroAggregate(maps, spec, 12)
        covered = agg.count > 0
        np.testing.assert_allclose(agg.values[covered], 0.3, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(agg.values[~covered], 0.0)

    def test_slice_for(self):
        spec = WindowSpec(3)
        agg = MacroAggregate(_maps_by_value(range(4, 8), spec), spec, 8)
        np.testing.assert_allclose(agg.slice_for(ChangeTarget(5, 6, 0, 0.0), spec)[:, 0], [4.5, 5, 6, 6.5])

    def test_mpd_equals_cpd_for_constant_maps(self, tiny):
        f, s, spec = tiny
        maps = [AttributionMap(T - 3, np.full((4, 2), 0.5), ChangeTarget(T - 1, T, 0, 0.0), "x") for T in range(4, 12)]
        agg = MacroAggregate(maps, spec, 12)
        tgt = ChangeTarget(7, 8, 1, 0.0)
        np.testing.assert_array_equal(agg.slice_for(tgt, spec), 0.5)
        assert mpd(f, s, spec, tgt, agg, 6)[0] == cpd(f, s, spec, tgt, np.full((4, 2), 0.5), 6)[0]

    def test_empty(self):
        with pytest.raises(ValueError):
            MacroAggregate([], WindowSpec(3))


class TestRankInvariance:
    @pytest.mark.parametrize("transform", [lambda a: a ** 3, lambda a: np.exp(2 * a) - 1, lambda a: 7 * a + 0.1])
    def test_cpd_family_invariant(self, trained_rnn, switch_data, spec12, transform):
        s = switch_data[8]
        tgt = select_target_class(trained_rnn, s, spec12, 30, 31)
        phi = make_attributor("swing")(trained_rnn, s, spec12, tgt).values
        psi = np.sign(phi) * transform(np.abs(phi))
        for fn in (cpd, cpp):
            assert fn(trained_rnn, s, spec12, tgt, phi, 20)[0] == fn(trained_rnn, s, spec12, tgt, psi, 20)[0]
        assert aupd(trained_rnn, s, spec12, tgt, phi, 20) == aupd(trained_rnn, s, spec12, tgt, psi, 20)

    def test_corr_is_not_rank_invariant(self, trained_rnn, switch_data, spec12):
        s = switch_data[8]
        tgt = select_target_class(trained_rnn, s, spec12, 30, 31)
        phi = make_attributor("swing")(trained_rnn, s, spec12, tgt).values
        a = corr_metric(trained_rnn, s, spec12, tgt, phi, 10)
        b = corr_metric(trained_rnn, s, spec12, tgt, phi ** 3, 10)
        assert a != b


class TestCorr:
    def test_pearson_basics(self):
        x = np.array([1.0, 2.0, 3.0, 5.0])
        assert pearson(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-15)
        assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-15)
        assert math.isnan(pearson(x, np.ones(4)))

    def test_proportional_sequences(self):
        top, bottom = np.array([3.0, 2.0]), np.array([0.1, 0.2])
        assert corr_from_sequences(top, bottom, 0.5 * top, 0.5 * bottom) == pytest.approx(1.0)

    def test_anti_ordered_sequences(self):
        top, bottom = np.array([3.0, 2.0]), np.array([0.1, 0.2])
        assert corr_from_sequences(top, bottom, [0.0, 0.1], [0.9, 1.0]) < 0

    def test_random_control_near_zero(self, trained_rnn, switch_data, spec12):
        rnd = make_attributor("random", seed=0)
        vals = []
        for i in range(10):
            s = switch_data[i]
            for t1 in range(12, 98, 6):
                tgt = select_target_class(trained_rnn, s, spec12, t1, t1 + 1)
                vals.append(corr_metric(trained_rnn, s, spec12, tgt, rnd(trained_rnn, s, spec12, tgt), 10))
        vals = np.array(vals)
        assert abs(np.nanmean(vals)) < 0.1

    def test_needs_2k_cells(self, tiny):
        f, s, spec = tiny
        with pytest.raises(ValueError):
            corr_metric(f, s, spec, ChangeTarget(5, 6, 0, 0.0), np.ones((4, 2)), 5)


class TestReport:
    def test_default_k(self):
        assert DEFAULT_K == 50
        assert inspect.signature(evaluate_suite).parameters["K"].default == 50

    def test_single_sample_suite(self, mlp12):
        s = TimeSeries(np.random.default_rng(0).normal(size=(14, 3)), np.zeros(14, dtype=int), series_id="one")
        rep = evaluate_suite(mlp12, [s], WindowSpec(12), make_attributor("swing", n_samples=10), K=5)
        assert rep.sample_ids == ["one:12-13"]
        assert set(rep.values) == set(METRIC_NAMES)
        assert rep.stderr("CPD") == 0.0 and rep.count("CPD") == 1

    def test_means_recomputable_from_csv(self, trained_rnn, switch_data, spec12):
        rep = evaluate_suite(trained_rnn, switch_data[:2], spec12, make_attributor("ig-zero", n_samples=10),
                             K=10, max_targets=30)
        back = MetricReport.from_csv(rep.to_csv(), rep.method, rep.K)
        assert len(back.sample_ids) == 30
        for m in METRIC_NAMES:
            v = back.values[m]
            v = v[~np.isnan(v)]
            assert back.mean(m) == pytest.approx(float(np.mean(v)), rel=1e-12)
            assert rep.mean(m) == back.mean(m)
        summary = rep.summary()
        assert summary["CPD"]["scale"] == 1e3 and summary["Corr"]["scale"] == 1.0

    def test_nan_excluded_from_mean(self):
        rep = MetricReport("m", ["a", "b", "c"], {m: np.array([1.0, np.nan, 3.0]) for m in METRIC_NAMES}, 5)
        assert rep.mean("Corr") == 2.0 and rep.count("Corr") == 2

    def test_bad_csv_header(self):
        with pytest.raises(ValueError):
            MetricReport.from_csv("id,CPD\nx,1\n", "m", 5)

    def test_rejects_empty_and_bad_substitution(self, mlp12):
        with pytest.raises(ValueError):
            evaluate_suite(mlp12, [], WindowSpec(12), make_attributor("swing"))
        s = random_series(20, 3, 0)
        with pytest.raises(ValueError):
            evaluate_suite(mlp12, [s], WindowSpec(12), make_attributor("swing"), substitution="blur")

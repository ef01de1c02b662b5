"""
Tests for window scoring and the space-time scan
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exceptions import DomainError, ParameterDomainError
from models import StatisticKind
from services.grids import BaselineGrid, CountGrid
from services.scan_engine import (ScanEngine, WindowLayout, poisson_window_score, scan, score_windows,
                                  zip_em_qhat, zip_window_lambda)
from services.zip_model import zero_log_prob, zip_log_pmf_array, zip_sample_array
from services.zone_builder import DistanceMatrix, ZoneSet, knn_zones, max_k_for_half
from utils.helpers import derive_rng

TIGHT = dict(tol=1e-12, max_iter=100_000)


def window_cells(counts, baselines, members, duration):
    rows = list(members)
    return (counts.y[rows, :duration].ravel().astype(float),
            baselines.p[rows, :duration].ravel(),
            baselines.mu[rows, :duration].ravel())


def random_window(rng):
    size = int(rng.integers(1, 31))
    p = rng.uniform(0.0, 0.6, size)
    mu = rng.uniform(0.2, 8.0, size)
    y = zip_sample_array(p, mu * rng.uniform(1.0, 3.0), rng).astype(float)
    return y, p, mu


def many_zeros_window(rng):
    size = int(rng.integers(1, 31))
    p = rng.uniform(0.4, 0.8, size)
    mu = rng.uniform(0.2, 2.0, size)
    y = zip_sample_array(p, mu * rng.uniform(1.0, 3.0), rng).astype(float)
    return y, p, mu


def grid_search(y, p, mu):
    """Best q on the 1e-4 grid over [1, 10] and its log-likelihood ratio"""
    q = np.arange(90_001) * 1e-4 + 1.0
    base = zip_log_pmf_array(y, p, mu).sum()
    values = zip_log_pmf_array(y[None, :], p[None, :], q[:, None] * mu[None, :]).sum(axis=1)
    i = int(np.argmax(values))
    return q[i], values[i] - base


class TestZipEm:
    def test_all_positive_reduces_to_ratio(self):
        estimate = zip_em_qhat([(4, 0.3, 2.0), (6, 0.3, 2.0)])
        assert estimate.q_hat == pytest.approx(2.5)
        assert estimate.converged
        assert np.all(estimate.deltas == 0)

    def test_clamped_at_one(self):
        cells = [(1, 0.2, 2.0), (1, 0.2, 2.0)]
        estimate = zip_em_qhat(cells)
        assert estimate.q_hat == 1.0
        assert zip_window_lambda(cells, estimate.q_hat) == 0.0

    def test_first_e_step_posterior(self):
        estimate = zip_em_qhat([(0, 0.15, 5.0), (9, 0.15, 1.0)], max_iter=1)
        assert estimate.deltas[0] == pytest.approx(0.96323, abs=1e-5)
        assert estimate.deltas[1] == 0.0

    def test_posterior_at_doubled_mean(self):
        delta = math.exp(math.log(0.15) - float(zero_log_prob(0.15, 2 * 5.0)))
        assert delta == pytest.approx(0.999743, abs=1e-6)

    def test_all_zero_window(self):
        estimate = zip_em_qhat([(0, 0.15, 5.0)])
        assert estimate.q_hat == 1.0
        assert estimate.iterations == 0

    def test_rejects_bad_cells(self):
        with pytest.raises(DomainError):
            zip_em_qhat([])
        with pytest.raises(ParameterDomainError):
            zip_em_qhat([(1, 1.0, 2.0)])

    def test_oracle_equivalence(self):
        rng = derive_rng(101)
        for _ in range(200):
            y, p, mu = random_window(rng)
            estimate = zip_em_qhat((y, p, mu), **TIGHT)
            llr = zip_window_lambda((y, p, mu), estimate.q_hat)
            q_grid, llr_grid = grid_search(y, p, mu)
            assert llr >= llr_grid - 1e-6
            if q_grid < 9.9:
                assert abs(estimate.q_hat - q_grid) <= 5e-4

    @pytest.mark.parametrize("generator, seed", [(random_window, 106), (many_zeros_window, 107)])
    def test_oracle_at_default_tolerance(self, generator, seed):
        rng = derive_rng(seed)
        for _ in range(200):
            y, p, mu = generator(rng)
            estimate = zip_em_qhat((y, p, mu))
            llr = zip_window_lambda((y, p, mu), estimate.q_hat)
            q_grid, llr_grid = grid_search(y, p, mu)
            assert llr >= llr_grid - 1e-6
            if q_grid < 9.9:
                assert abs(estimate.q_hat - q_grid) <= 5e-4

    def test_batch_polish_matches_single_window(self, make_grids):
        rng = derive_rng(108)
        counts, baselines = make_grids(rng, 12, 6, p_max=0.8, mu_range=(0.2, 2.0))
        zones = knn_zones(DistanceMatrix.from_coordinates(rng.random((12, 2))), 4)
        arrays = score_windows(counts, baselines, WindowLayout(zones.zones, 6))
        for z, zone in enumerate(zones):
            for d in range(1, 7):
                exact = zip_em_qhat(window_cells(counts, baselines, zone.members, d), **TIGHT)
                assert arrays.q_hat[z * 6 + d - 1] == pytest.approx(exact.q_hat, abs=5e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.floats(0.0, 0.9), st.floats(1.0, 3.0)),
                    min_size=1, max_size=15))
    def test_posterior_bounds(self, cells):
        y, p, _ = np.array(cells, dtype=float).T
        estimate = zip_em_qhat(cells)
        zeros = y == 0
        assert np.all(estimate.deltas[~zeros] == 0.0)
        assert np.all(estimate.deltas[zeros] >= p[zeros] - 1e-12)
        assert np.all(estimate.deltas[zeros] < 1.0)

    def test_loglik_never_decreases(self):
        rng = derive_rng(102)
        for _ in range(500):
            trace = zip_em_qhat(random_window(rng)).loglik_trace
            assert np.all(np.diff(trace) >= -1e-10)

    @pytest.mark.slow
    def test_loglik_never_decreases_many_windows(self):
        rng = derive_rng(103)
        for _ in range(10_000):
            trace = zip_em_qhat(random_window(rng)).loglik_trace
            assert np.all(np.diff(trace) >= -1e-10)


class TestWindowLambda:
    def test_poisson_reduction_value(self):
        cells = [(4, 0.0, 2.0), (6, 0.0, 2.0)]
        assert zip_window_lambda(cells, 2.5) == pytest.approx(10 * math.log(2.5) - 6, abs=1e-9)
        assert zip_window_lambda(cells, 2.5) == pytest.approx(3.16291, abs=1e-5)

    def test_unit_risk_is_zero(self):
        assert zip_window_lambda([(3, 0.4, 1.0), (0, 0.1, 7.0)], 1.0) == 0.0

    def test_arbitrary_risk_can_be_negative(self):
        value = zip_window_lambda([(0, 0.15, 5.0)], 2.0)
        expected = math.log((0.15 + 0.85 * math.exp(-10.0)) / (0.15 + 0.85 * math.exp(-5.0)))
        assert value == pytest.approx(expected, abs=1e-12)
        assert value == pytest.approx(-0.03721, abs=5e-5)
        assert zip_em_qhat([(0, 0.15, 5.0)]).q_hat == 1.0

    def test_window_only_sum_equals_full_grid_ratio(self, make_grids):
        rng = derive_rng(109)
        for _ in range(25):
            counts, baselines = make_grids(rng, 3, 3)
            rows = sorted(rng.choice(3, size=int(rng.integers(1, 4)), replace=False).tolist())
            duration = int(rng.integers(1, 4))
            q = float(rng.uniform(1.0, 4.0))
            risk = np.ones((3, 3))
            risk[np.ix_(rows, list(range(duration)))] = q
            y, p, mu = counts.y, baselines.p, baselines.mu
            full = (zip_log_pmf_array(y, p, risk * mu).sum() - zip_log_pmf_array(y, p, mu).sum())
            cells = window_cells(counts, baselines, rows, duration)
            assert zip_window_lambda(cells, q) == pytest.approx(full, abs=1e-9)

    def test_risk_below_one_rejected(self):
        with pytest.raises(ParameterDomainError):
            zip_window_lambda([(1, 0.1, 1.0)], 0.5)


class TestPoissonScore:
    def test_closed_form(self):
        score = poisson_window_score([(4, 0.7, 2.0), (6, 0.1, 2.0)])
        assert score.q_hat == pytest.approx(2.5)
        assert score.llr == pytest.approx(3.16291, abs=1e-5)

    def test_clamped(self):
        score = poisson_window_score([(1, 0.0, 2.0), (2, 0.0, 2.0)])
        assert (score.q_hat, score.llr) == (1.0, 0.0)

    def test_matches_zip_without_zero_inflation(self):
        rng = derive_rng(104)
        for _ in range(50):
            size = int(rng.integers(1, 20))
            mu = rng.uniform(0.5, 6.0, size)
            y = rng.poisson(mu * 1.5).astype(float)
            p = np.zeros(size)
            poisson = poisson_window_score((y, p, mu))
            estimate = zip_em_qhat((y, p, mu))
            assert estimate.q_hat == pytest.approx(poisson.q_hat, abs=1e-9)
            assert zip_window_lambda((y, p, mu), estimate.q_hat) == pytest.approx(poisson.llr, abs=1e-9)


class TestScan:
    def test_single_cell_toy(self):
        result = scan(CountGrid([[3]]), BaselineGrid([[0.0]], [[1.0]]), ZoneSet.from_members([[0]]), 1)
        assert result.statistic == pytest.approx(3 * math.log(3) - 2, abs=1e-9)
        assert result.statistic == pytest.approx(1.29584, abs=1e-5)
        assert result.mlc.q_hat == pytest.approx(3.0)
        assert result.mlc.window.members == (0,)
        assert result.mlc.window.duration == 1

    def test_counts_at_or_below_baseline(self, collinear):
        mu = np.full((3, 4), 2.5)
        counts = CountGrid(np.full((3, 4), 2))
        for kind in StatisticKind:
            result = scan(counts, BaselineGrid(np.full((3, 4), 0.1), mu), knn_zones(collinear, 2), 4, kind)
            assert result.statistic == 0.0
            assert result.mlc.q_hat == 1.0

    def test_batch_matches_single_window(self, rng, make_grids):
        counts, baselines = make_grids(rng, 12, 6)
        zones = knn_zones(DistanceMatrix.from_coordinates(rng.random((12, 2))), 4)
        layout = WindowLayout(zones.zones, 5)
        arrays = score_windows(counts, baselines, layout, StatisticKind.EB_ZIP, **TIGHT)
        for z, zone in enumerate(zones):
            for d in range(1, 6):
                cells = window_cells(counts, baselines, zone.members, d)
                estimate = zip_em_qhat(cells, **TIGHT)
                index = z * 5 + d - 1
                assert arrays.q_hat[index] == pytest.approx(estimate.q_hat, rel=1e-7, abs=1e-7)
                expected = max(0.0, zip_window_lambda(cells, estimate.q_hat))
                assert arrays.llr[index] == pytest.approx(expected, abs=1e-7)

    def test_lambda_zero_iff_unit_risk(self, rng, make_grids):
        counts, baselines = make_grids(rng, 20, 8)
        zones = knn_zones(DistanceMatrix.from_coordinates(rng.random((20, 2))), 6)
        arrays = ScanEngine(zones, 8).score(counts, baselines)
        assert np.all(arrays.llr >= 0)
        assert np.array_equal(arrays.llr == 0, arrays.q_hat == 1.0)

    def test_poisson_reduction_on_grids(self, make_grids):
        rng = derive_rng(105)
        dist = DistanceMatrix.from_coordinates(rng.random((50, 2)))
        zones = knn_zones(dist, max_k_for_half(50))
        zip_engine = ScanEngine(zones, 10, StatisticKind.EB_ZIP, top_k=5)
        poisson_engine = ScanEngine(zones, 10, StatisticKind.EB_POISSON, top_k=5)
        for _ in range(50):
            counts, baselines = make_grids(rng, 50, 10, zero_p=True)
            a = zip_engine.score(counts, baselines)
            b = poisson_engine.score(counts, baselines)
            np.testing.assert_allclose(a.q_hat, b.q_hat, rtol=0, atol=1e-9)
            np.testing.assert_allclose(a.llr, b.llr, rtol=0, atol=1e-9)
            zip_result = zip_engine.scan(counts, baselines)
            poisson_result = poisson_engine.scan(counts, baselines)
            assert [s.window for s in zip_result.ranked] == [s.window for s in poisson_result.ranked]
            assert zip_result.statistic == pytest.approx(poisson_result.statistic, abs=1e-9)

    def test_ranking_order(self, rng, make_grids):
        counts, baselines = make_grids(rng, 15, 5)
        zones = knn_zones(DistanceMatrix.from_coordinates(rng.random((15, 2))), 5)
        result = ScanEngine(zones, 5, top_k=25).scan(counts, baselines)
        keys = [(-s.llr, s.window.duration, s.window.zone_index) for s in result.ranked]
        assert keys == sorted(keys)
        assert result.statistic == result.ranked[0].llr
        assert result.n_windows == len(zones) * 5

    def test_threads_do_not_change_scores(self, rng, make_grids):
        counts, baselines = make_grids(rng, 30, 6)
        zones = knn_zones(DistanceMatrix.from_coordinates(rng.random((30, 2))), 10)
        single = ScanEngine(zones, 6, threads=1).score(counts, baselines)
        many = ScanEngine(zones, 6, threads=4).score(counts, baselines)
        for name in ("q_hat", "llr", "iterations", "converged"):
            assert np.array_equal(getattr(single, name), getattr(many, name))

    def test_nonconverged_windows_are_scored_and_counted(self, rng, make_grids):
        counts, baselines = make_grids(rng, 10, 4)
        zones = knn_zones(DistanceMatrix.from_coordinates(rng.random((10, 2))), 3)
        result = ScanEngine(zones, 4, max_iter=1).scan(counts, baselines)
        assert result.nonconverged_windows > 0
        assert result.statistic >= 0

    def test_misaligned_grids(self, collinear):
        zones = knn_zones(collinear, 1)
        with pytest.raises(DomainError):
            scan(CountGrid(np.ones((3, 4))), BaselineGrid.constant(3, 3, 0.1, 1.0), zones, 3)
        with pytest.raises(DomainError):
            scan(CountGrid(np.ones((3, 4))), BaselineGrid.constant(3, 4, 0.1, 1.0), zones, 5)

    def test_zones_outside_grid(self):
        with pytest.raises(DomainError):
            scan(CountGrid(np.ones((2, 2))), BaselineGrid.constant(2, 2, 0.1, 1.0),
                 ZoneSet.from_members([[0, 2]]), 2)


class TestLayout:
    def test_window_sums_follow_prefix_order(self):
        zones = ZoneSet.from_members([[0], [0, 1]])
        layout = WindowLayout(zones.zones, 3)
        values = np.array([[1.0, 2.0, 3.0], [10.0, 20.0, 30.0]])
        np.testing.assert_array_equal(layout.window_sums(values), [1, 3, 6, 11, 33, 66])

    def test_zero_entries_cover_each_window(self):
        zones = ZoneSet.from_members([[0], [0, 1]])
        layout = WindowLayout(zones.zones, 2)
        window, loc, t = layout.zero_entries(np.array([[0, 5], [3, 0]]))
        entries = sorted(zip(window.tolist(), loc.tolist(), t.tolist()))
        assert entries == [(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0), (3, 1, 1)]

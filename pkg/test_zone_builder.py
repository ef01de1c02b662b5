"""
Tests for candidate zone enumeration
"""
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exceptions import DomainError
from services.zone_builder import (AdjacencyRelation, DistanceMatrix, Zone, ZoneSet, adjacency_from_knn,
                                   build_zones, flex_zones, knn_zones, max_k_for_half)
from utils.helpers import derive_rng

A, B, C = 0, 1, 2


def random_distances(seed: int, n: int) -> DistanceMatrix:
    return DistanceMatrix.from_coordinates(derive_rng(seed).random((n, 2)))


class TestDistanceMatrix:
    def test_from_coordinates(self, collinear):
        np.testing.assert_allclose(collinear.d, [[0, 1, 3], [1, 0, 2], [3, 2, 0]])

    @pytest.mark.parametrize("matrix", [
        [[0, 1], [2, 0]],
        [[1, 1], [1, 0]],
        [[0, 0], [0, 0]],
        [[0, 1, 2], [1, 0, 1]],
    ])
    def test_invalid_matrices(self, matrix):
        with pytest.raises(DomainError):
            DistanceMatrix(matrix)

    def test_ties_broken_by_smaller_index(self):
        # B and C are both at distance 1 from A
        dist = DistanceMatrix([[0, 1, 1], [1, 0, 2], [1, 2, 0]])
        assert dist.neighbor_order()[0].tolist() == [0, 1, 2]


class TestKnnZones:
    def test_collinear_fixture(self, collinear):
        zones = knn_zones(collinear, 1)
        assert zones.as_tuples() == [(A,), (B,), (C,), (A, B), (B, C)]

    def test_zero_k_gives_singletons(self):
        zones = knn_zones(random_distances(1, 7), 0)
        assert zones.as_tuples() == [(i,) for i in range(7)]

    def test_k_too_large(self, collinear):
        with pytest.raises(DomainError):
            knn_zones(collinear, 3)

    def test_size_limit_and_centers(self):
        dist = random_distances(2, 100)
        zones = knn_zones(dist, 24)
        assert max(len(z) for z in zones) == 25
        assert len(zones) <= 100 * 25
        order = dist.neighbor_order()
        present = set(zones)
        for i in range(100):
            for k in range(25):
                assert Zone(order[i, :k + 1]) in present

    def test_zones_are_balls(self):
        dist = random_distances(3, 30)
        order = dist.neighbor_order()
        for zone in knn_zones(dist, 6):
            # some center generates the zone
            assert any(set(order[c, :len(zone)].tolist()) == set(zone.members) for c in zone)

    def test_deterministic(self):
        assert knn_zones(random_distances(4, 40), 9).as_tuples() == knn_zones(random_distances(4, 40), 9).as_tuples()

    def test_hundred_locations_is_fast(self):
        dist = random_distances(5, 100)
        started = time.perf_counter()
        knn_zones(dist, 24)
        assert time.perf_counter() - started < 1.0


class TestMaxKForHalf:
    @pytest.mark.parametrize("n, expected", [(100, 49), (4, 1), (2, 0)])
    def test_values(self, n, expected):
        assert max_k_for_half(n) == expected

    def test_too_few_locations(self):
        with pytest.raises(DomainError):
            max_k_for_half(1)


class TestAdjacency:
    def test_collinear_k1(self, collinear):
        assert adjacency_from_knn(collinear, 1).edges() == [(A, B), (B, C)]

    def test_full_k_is_complete(self):
        adj = adjacency_from_knn(random_distances(6, 6), 5)
        assert len(adj.edges()) == 15

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(2, 25), k=st.integers(1, 24))
    def test_symmetric_irreflexive(self, seed, n, k):
        k = min(k, n - 1)
        adj = adjacency_from_knn(random_distances(seed, n), k)
        for i, row in enumerate(adj.neighbors):
            assert i not in row
            assert all(i in adj.neighbors[j] for j in row)

    def test_asymmetric_lists_rejected(self):
        with pytest.raises(DomainError):
            AdjacencyRelation(2, [[1], []])

    def test_self_loop_rejected(self):
        with pytest.raises(DomainError):
            AdjacencyRelation.from_edges(2, [(1, 1)])


class TestFlexZones:
    def test_path_graph_fixture(self, collinear, path_graph):
        zones = flex_zones(collinear, path_graph, 3)
        assert zones.as_tuples() == [(A,), (B,), (C,), (A, B), (B, C), (A, B, C)]
        assert Zone([A, C]) not in set(zones)

    def test_size_one_gives_singletons(self, collinear, path_graph):
        assert flex_zones(collinear, path_graph, 1).as_tuples() == [(A,), (B,), (C,)]

    def test_inconsistent_adjacency(self, collinear):
        with pytest.raises(DomainError):
            flex_zones(collinear, AdjacencyRelation.from_edges(4, [(0, 1)]), 2)

    def test_every_zone_connected(self):
        dist = random_distances(7, 40)
        adj = adjacency_from_knn(dist, 3)
        zones = flex_zones(dist, adj, 6)
        for zone in zones:
            assert independent_connected(adj, zone.members)

    def test_contains_connected_knn_balls(self):
        dist = random_distances(8, 30)
        adj = adjacency_from_knn(dist, 4)
        flex = set(flex_zones(dist, adj, 5))
        for zone in knn_zones(dist, 4):
            if adj.is_connected(zone.members):
                assert zone in flex

    def test_matches_brute_force(self):
        dist = random_distances(9, 12)
        adj = adjacency_from_knn(dist, 2)
        order = dist.neighbor_order()
        expected = set()
        for i in range(12):
            pool = order[i, :4].tolist()
            for mask in range(1, 1 << 4):
                members = [pool[b] for b in range(4) if mask >> b & 1]
                if i in members and independent_connected(adj, members):
                    expected.add(tuple(sorted(members)))
        assert set(flex_zones(dist, adj, 4).as_tuples()) == expected

    def test_bound_on_count(self):
        dist = random_distances(10, 20)
        zones = flex_zones(dist, adjacency_from_knn(dist, 3), 5)
        assert len(zones) <= 20 * 2 ** 4


class TestZoneSet:
    def test_canonical_order_and_dedup(self):
        zones = ZoneSet.from_members([[2, 1], [0], [1, 2], [0, 2], [1]])
        assert zones.as_tuples() == [(0,), (1,), (0, 2), (1, 2)]

    def test_empty_zone_rejected(self):
        with pytest.raises(DomainError):
            Zone([])

    def test_build_zones_dispatch(self, collinear, path_graph):
        assert build_zones(collinear, "knn", k_max=1).as_tuples() == knn_zones(collinear, 1).as_tuples()
        assert len(build_zones(collinear, "flex", max_size=3, adj=path_graph)) == 6
        with pytest.raises(DomainError):
            build_zones(collinear, "flex", max_size=3)

    def test_build_zones_default_half(self):
        zones = build_zones(random_distances(11, 10), "knn")
        assert max(len(z) for z in zones) == 5


def independent_connected(adj: AdjacencyRelation, members) -> bool:
    """Union-find over the induced edges"""
    parent = {m: m for m in members}

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for i, j in adj.edges():
        if i in parent and j in parent:
            parent[find(i)] = find(j)
    return len({find(m) for m in members}) == 1

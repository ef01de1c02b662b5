"""
Candidate zone enumeration

k-nearest-neighbor zones and flexibly shaped (connected) zones. Distance
ties are broken by the smaller location index, and every ZoneSet is kept in
canonical order: by size, then lexicographically by members.
"""

from typing import Iterable, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from exceptions import DomainError


class DistanceMatrix:
    def __init__(self, d):
        matrix = np.asarray(d, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 1:
            raise DomainError("distance matrix must be square and non-empty")
        if not np.all(np.isfinite(matrix)):
            raise DomainError("distances must be finite")
        if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12):
            raise DomainError("distance matrix must be symmetric")
        if np.any(np.diag(matrix) != 0):
            raise DomainError("distance matrix must have a zero diagonal")
        off_diagonal = matrix[~np.eye(matrix.shape[0], dtype=bool)]
        if np.any(off_diagonal <= 0):
            raise DomainError("distinct locations must be at positive distance")
        self.d = matrix
        self._order = None

    @classmethod
    def from_coordinates(cls, coords) -> "DistanceMatrix":
        points = np.asarray(coords, dtype=float)
        if points.ndim != 2:
            raise DomainError("coordinates must be an n x dim array")
        return cls(cdist(points, points))

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def neighbor_order(self) -> np.ndarray:
        """Row i lists all locations by distance from i (ties: smaller index), i first"""
        if self._order is None:
            index = np.arange(self.n)
            self._order = np.array([np.lexsort((index, self.d[i])) for i in range(self.n)])
        return self._order


class Zone:
    __slots__ = ("members",)

    def __init__(self, members: Iterable[int]):
        values = tuple(sorted(int(m) for m in members))
        if not values:
            raise DomainError("a zone must be non-empty")
        if len(set(values)) != len(values) or values[0] < 0:
            raise DomainError("zone members must be distinct non-negative indices")
        self.members = values

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[int]:
        return iter(self.members)

    def __contains__(self, item) -> bool:
        return item in self.members

    def __eq__(self, other) -> bool:
        return isinstance(other, Zone) and self.members == other.members

    def __hash__(self) -> int:
        return hash(self.members)

    def __repr__(self) -> str:
        return f"Zone{self.members}"

    def sort_key(self) -> Tuple[int, Tuple[int, ...]]:
        return len(self.members), self.members


class ZoneSet:
    def __init__(self, zones: Iterable[Zone]):
        unique = {zone.members: zone for zone in zones}
        self.zones: List[Zone] = sorted(unique.values(), key=Zone.sort_key)

    @classmethod
    def from_members(cls, member_lists: Iterable[Iterable[int]]) -> "ZoneSet":
        return cls(Zone(m) for m in member_lists)

    def __len__(self) -> int:
        return len(self.zones)

    def __iter__(self) -> Iterator[Zone]:
        return iter(self.zones)

    def __getitem__(self, index: int) -> Zone:
        return self.zones[index]

    def as_tuples(self) -> List[Tuple[int, ...]]:
        return [zone.members for zone in self.zones]

    def max_location(self) -> int:
        return max(zone.members[-1] for zone in self.zones)

    def check_locations(self, n: int):
        if self.zones and self.max_location() >= n:
            raise DomainError(f"zones reference location {self.max_location()} but only {n} exist")


class AdjacencyRelation:
    def __init__(self, n: int, neighbors: Sequence[Iterable[int]]):
        if len(neighbors) != n:
            raise DomainError("adjacency must list neighbors for every location")
        self.n = n
        self.neighbors: List[frozenset] = [frozenset(int(j) for j in row) for row in neighbors]
        for i, row in enumerate(self.neighbors):
            if i in row:
                raise DomainError(f"location {i} is adjacent to itself")
            for j in row:
                if not 0 <= j < n:
                    raise DomainError(f"neighbor {j} of {i} is out of range")
                if i not in self.neighbors[j]:
                    raise DomainError(f"adjacency is not symmetric between {i} and {j}")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int]]) -> "AdjacencyRelation":
        rows: List[Set[int]] = [set() for _ in range(n)]
        for i, j in edges:
            if i == j:
                raise DomainError(f"self-loop at location {i}")
            rows[i].add(j)
            rows[j].add(i)
        return cls(n, rows)

    def edges(self) -> List[Tuple[int, int]]:
        return sorted((i, j) for i, row in enumerate(self.neighbors) for j in row if i < j)

    def is_connected(self, members: Iterable[int]) -> bool:
        """Breadth-first connectivity of the induced subgraph"""
        nodes = set(members)
        if not nodes:
            return False
        start = min(nodes)
        seen = {start}
        queue = [start]
        while queue:
            u = queue.pop()
            for v in self.neighbors[u] & nodes:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return seen == nodes


def max_k_for_half(n: int) -> int:
    """Largest k_max with k_max + 1 <= floor(n / 2)"""
    if n < 2:
        raise DomainError("need at least 2 locations")
    return n // 2 - 1


def knn_zones(dist: DistanceMatrix, k_max: int) -> ZoneSet:
    if k_max < 0 or k_max + 1 > dist.n:
        raise DomainError(f"k_max + 1 = {k_max + 1} exceeds the {dist.n} locations")
    order = dist.neighbor_order()
    members = set()
    for i in range(dist.n):
        for k in range(k_max + 1):
            members.add(tuple(sorted(order[i, :k + 1].tolist())))
    return ZoneSet.from_members(members)


def adjacency_from_knn(dist: DistanceMatrix, k: int) -> AdjacencyRelation:
    """i ~ j when either is among the other's k nearest neighbors"""
    if k < 1 or k >= dist.n:
        raise DomainError(f"k must lie in [1, {dist.n - 1}]")
    order = dist.neighbor_order()
    edges = [(i, int(j)) for i in range(dist.n) for j in order[i, 1:k + 1]]
    return AdjacencyRelation.from_edges(dist.n, edges)


def _connected_subsets(pool: Sequence[int], adj: AdjacencyRelation, max_size: int) -> Iterator[Tuple[int, ...]]:
    """
    Every connected subset of `pool` containing pool[0], each exactly once.

    Sets are bitmasks over pool positions. Each frontier vertex is either
    taken (its new neighbors join the frontier) or excluded for the rest of
    that branch.
    """
    position = {loc: b for b, loc in enumerate(pool)}
    local = [0] * len(pool)
    for b, loc in enumerate(pool):
        for nb in adj.neighbors[loc]:
            if nb in position:
                local[b] |= 1 << position[nb]

    def grow(members: int, size: int, frontier: int, excluded: int):
        yield members
        if size == max_size:
            return
        while frontier:
            low = frontier & -frontier
            frontier ^= low
            w = low.bit_length() - 1
            taken = members | low
            new_frontier = frontier | (local[w] & ~taken & ~excluded)
            yield from grow(taken, size + 1, new_frontier, excluded)
            excluded |= low

    for mask in grow(1, 1, local[0], 1):
        yield tuple(sorted(pool[b] for b in range(len(pool)) if mask >> b & 1))


def flex_zones(dist: DistanceMatrix, adj: AdjacencyRelation, max_size: int) -> ZoneSet:
    if adj.n != dist.n:
        raise DomainError(f"adjacency covers {adj.n} locations but distances cover {dist.n}")
    if not 1 <= max_size <= dist.n:
        raise DomainError(f"max_size must lie in [1, {dist.n}]")
    order = dist.neighbor_order()
    members = set()
    for i in range(dist.n):
        pool = order[i, :max_size].tolist()
        members.update(_connected_subsets(pool, adj, max_size))
    return ZoneSet.from_members(members)


def build_zones(dist: DistanceMatrix, method: str, k_max: Optional[int] = None,
                max_size: Optional[int] = None, adj: Optional[AdjacencyRelation] = None) -> ZoneSet:
    """Dispatch on the zone method name used by the CLI and the harness"""
    if method == "knn":
        if k_max is None:
            k_max = max_k_for_half(dist.n) if dist.n >= 2 else 0
        return knn_zones(dist, k_max)
    if method == "flex":
        if adj is None or max_size is None:
            raise DomainError("flexible zones need an adjacency and max_size")
        return flex_zones(dist, adj, max_size)
    raise DomainError(f"unknown zone method: {method}")

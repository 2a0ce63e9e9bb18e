"""Dynamic nearest-neighbor indexes over configurations.

Two interchangeable backends share one interface: an exact linear-scan index
(the default at desk scale, trivially correct) and a layered navigable
small-world proximity graph for large point counts. Reported distances are
always recomputed from the stored points, so even approximate results carry
true distances.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from .errors import EmptyIndexError, InvalidInputError


class ExactIndex:
    """Linear-scan index; query results are exactly the k nearest stored points."""

    def __init__(self, dim: int, capacity: int = 1024):
        self.dim = dim
        self._data = np.empty((capacity, dim))
        self._count = 0

    def __len__(self) -> int:
        return self._count

    @property
    def points(self) -> np.ndarray:
        return self._data[: self._count]

    def insert(self, q: np.ndarray) -> int:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.dim:
            raise InvalidInputError(f"expected dimension {self.dim}, got {q.shape[0]}")
        if self._count == self._data.shape[0]:
            grown = np.empty((2 * self._data.shape[0], self.dim))
            grown[: self._count] = self._data[: self._count]
            self._data = grown
        self._data[self._count] = q
        self._count += 1
        return self._count - 1

    def nearest(self, q: np.ndarray, k: int = 1) -> list[tuple[int, float]]:
        if self._count == 0:
            raise EmptyIndexError("nearest() on an empty index")
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        q = np.asarray(q, dtype=float).reshape(-1)
        d = np.linalg.norm(self.points - q, axis=1)
        k = min(k, self._count)
        idx = np.argpartition(d, k - 1)[:k]
        idx = idx[np.argsort(d[idx], kind="stable")]
        return [(int(i), float(d[i])) for i in idx]


class HnswIndex:
    """Hierarchical navigable small-world graph with incremental insertion.

    Default structural parameters: graph degree M=16, construction beam 200,
    query beam 64, level multiplier 1/ln(M).
    """

    def __init__(
        self,
        dim: int,
        m: int = 16,
        ef_construction: int = 200,
        ef_search: int = 64,
        seed: int = 0,
    ):
        self.dim = dim
        self.m = m
        self.m_max0 = 2 * m
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self._mult = 1.0 / math.log(m)
        self._rng = np.random.default_rng(seed)
        self._points: list[np.ndarray] = []
        self._links: list[list[list[int]]] = []  # node -> level -> neighbor ids
        self._entry = -1
        self._max_level = -1

    def __len__(self) -> int:
        return len(self._points)

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self._points)

    def _dist(self, q: np.ndarray, idx) -> np.ndarray:
        pts = np.asarray([self._points[i] for i in idx])
        return np.linalg.norm(pts - q, axis=1)

    def _search_layer(self, q: np.ndarray, entry: int, ef: int, level: int) -> list[tuple[float, int]]:
        """Beam search on one layer; returns (distance, id) sorted ascending."""
        d0 = float(np.linalg.norm(self._points[entry] - q))
        visited = {entry}
        candidates = [(d0, entry)]
        best = [(-d0, entry)]  # max-heap of current ef nearest
        while candidates:
            d, node = heapq.heappop(candidates)
            if d > -best[0][0] and len(best) >= ef:
                break
            neigh = [i for i in self._links[node][level] if i not in visited]
            if not neigh:
                continue
            visited.update(neigh)
            for i, di in zip(neigh, self._dist(q, neigh)):
                di = float(di)
                if len(best) < ef or di < -best[0][0]:
                    heapq.heappush(candidates, (di, i))
                    heapq.heappush(best, (-di, i))
                    if len(best) > ef:
                        heapq.heappop(best)
        return sorted((-d, i) for d, i in best)

    def insert(self, q: np.ndarray) -> int:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.dim:
            raise InvalidInputError(f"expected dimension {self.dim}, got {q.shape[0]}")
        node = len(self._points)
        level = int(-math.log(max(self._rng.random(), 1e-12)) * self._mult)
        self._points.append(q)
        self._links.append([[] for _ in range(level + 1)])
        if self._entry < 0:
            self._entry = node
            self._max_level = level
            return node
        curr = self._entry
        for lvl in range(self._max_level, level, -1):
            curr = self._search_layer(q, curr, 1, lvl)[0][1]
        for lvl in range(min(level, self._max_level), -1, -1):
            cand = self._search_layer(q, curr, self.ef_construction, lvl)
            m_max = self.m_max0 if lvl == 0 else self.m
            chosen = [i for _, i in cand[: self.m]]
            self._links[node][lvl] = list(chosen)
            for i in chosen:
                links = self._links[i][lvl]
                links.append(node)
                if len(links) > m_max:
                    d = self._dist(self._points[i], links)
                    order = np.argsort(d, kind="stable")[:m_max]
                    self._links[i][lvl] = [links[j] for j in order]
            curr = cand[0][1]
        if level > self._max_level:
            self._max_level = level
            self._entry = node
        return node

    def nearest(self, q: np.ndarray, k: int = 1) -> list[tuple[int, float]]:
        if not self._points:
            raise EmptyIndexError("nearest() on an empty index")
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        q = np.asarray(q, dtype=float).reshape(-1)
        curr = self._entry
        for lvl in range(self._max_level, 0, -1):
            curr = self._search_layer(q, curr, 1, lvl)[0][1]
        found = self._search_layer(q, curr, max(self.ef_search, k), 0)
        return [(i, d) for d, i in found[:k]]


def make_index(dim: int, backend: str = "exact", **params):
    """Factory for the two backends; `backend` is "exact" or "hnsw"."""
    if backend == "exact":
        return ExactIndex(dim)
    if backend == "hnsw":
        return HnswIndex(dim, **params)
    raise InvalidInputError(f"unknown index backend {backend!r}")

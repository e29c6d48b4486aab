"""Neighborhood graphs and graph-level primitives: k-NN construction,
Gaussian affinities, the unnormalized Laplacian, and all-pairs geodesics."""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ConnectivityError, ParameterError


def thread_count():
    """Internal parallelism cap: MG_THREADS, defaulting to all cores for the
    compiled backend and 1 for the pure-Python fallback."""
    raw = os.environ.get("MG_THREADS", "").strip()
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1 if kernels.BACKEND == "compiled" else 1


@dataclass
class NeighborGraph:
    """k nearest neighbors per node with ascending Euclidean distances."""

    neighbors: np.ndarray  # [n, k] int64
    distances: np.ndarray  # [n, k] float64

    def __post_init__(self):
        self.neighbors = np.ascontiguousarray(self.neighbors, dtype=np.int64)
        self.distances = np.ascontiguousarray(self.distances, dtype=np.float64)
        n, k = self.neighbors.shape
        if self.distances.shape != (n, k):
            raise ParameterError("neighbors and distances shapes disagree")
        if np.any(self.neighbors == np.arange(n)[:, None]):
            raise ParameterError("self-loop in neighbor graph")
        if np.any((self.neighbors < 0) | (self.neighbors >= n)):
            raise ParameterError("neighbor index out of range")
        if np.any(np.diff(self.distances, axis=1) < 0):
            raise ParameterError("distances not ascending per row")

    @property
    def n(self):
        return self.neighbors.shape[0]

    @property
    def k(self):
        return self.neighbors.shape[1]


@dataclass
class SparseSymMatrix:
    """Symmetric sparse matrix stored as upper-triangle COO entries
    (row <= col); the transpose half is implied."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        self.cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        self.vals = np.ascontiguousarray(self.vals, dtype=np.float64)
        if np.any(self.rows > self.cols):
            raise ParameterError("entries must satisfy row <= col")
        if not np.all(np.isfinite(self.vals)):
            raise ParameterError("non-finite entry value")
        key = self.rows * self.n + self.cols
        if len(np.unique(key)) != len(key):
            raise ParameterError("duplicate (row, col) entry")

    def to_dense(self):
        A = np.zeros((self.n, self.n))
        A[self.rows, self.cols] = self.vals
        A[self.cols, self.rows] = self.vals
        return A

    def row_sums(self):
        s = np.zeros(self.n)
        np.add.at(s, self.rows, self.vals)
        off = self.rows != self.cols
        np.add.at(s, self.cols[off], self.vals[off])
        return s


@dataclass
class DistanceMatrix:
    """Dense symmetric distance matrix with zero diagonal."""

    d: np.ndarray

    def __post_init__(self):
        self.d = np.ascontiguousarray(self.d, dtype=np.float64)
        n = self.d.shape[0]
        if self.d.shape != (n, n):
            raise ParameterError("distance matrix must be square")
        if not np.all(np.isfinite(self.d)):
            raise ParameterError("non-finite distance")
        if np.any(np.diag(self.d) != 0):
            raise ParameterError("nonzero diagonal")
        if not np.array_equal(self.d, self.d.T):
            raise ParameterError("distance matrix not symmetric")

    @property
    def n(self):
        return self.d.shape[0]


def pairwise_sq_dists(X, Y=None):
    """Squared Euclidean distances in float64, clipped at zero."""
    X = np.asarray(X, dtype=np.float64)
    Y = X if Y is None else np.asarray(Y, dtype=np.float64)
    xn = (X * X).sum(axis=1)
    yn = (Y * Y).sum(axis=1)
    d2 = xn[:, None] + yn[None, :] - 2.0 * (X @ Y.T)
    np.clip(d2, 0.0, None, out=d2)
    return d2


def knn_graph(X, k):
    """Exact brute-force k-NN by Euclidean distance, ties broken by lower
    index. Row i lists the k nearest points other than i, ascending."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ParameterError(f"need 1 <= k < n, got k={k}, n={n}")
    d2 = pairwise_sq_dists(X)
    np.fill_diagonal(d2, np.inf)
    idx = np.arange(n)
    # lexsort: primary key distance, secondary key column index
    order = np.lexsort((np.broadcast_to(idx, (n, n)), d2), axis=1)[:, :k]
    dist = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return NeighborGraph(order, dist)


def symmetrized_edges(g):
    """Undirected edge set (i < j) with Euclidean weights, an edge being
    present if either direction appears in the k-NN graph."""
    n, k = g.n, g.k
    src = np.repeat(np.arange(n), k)
    dst = g.neighbors.ravel()
    w = g.distances.ravel()
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    key = lo * n + hi
    uniq, first = np.unique(key, return_index=True)
    return uniq // n, uniq % n, w[first]


def gaussian_affinity(g, sigma):
    """W[i,j] = exp(-d(i,j)^2 / (2 sigma^2)) over the symmetrized edge set."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    rows, cols, w = symmetrized_edges(g)
    vals = np.exp(-(w * w) / (2.0 * sigma * sigma))
    return SparseSymMatrix(g.n, rows, cols, vals)


class LaplacianResult(NamedTuple):
    L: SparseSymMatrix
    degree: np.ndarray
    isolated: np.ndarray  # indices with zero degree (metadata, not an error)


def graph_laplacian(W):
    """Unnormalized Laplacian L = D - W with degree[i] = sum_j W[i,j]."""
    if np.any(W.vals < 0):
        raise ParameterError("affinity values must be nonnegative")
    degree = W.row_sums()
    off = W.rows != W.cols
    rows = np.concatenate([np.arange(W.n), W.rows[off]])
    cols = np.concatenate([np.arange(W.n), W.cols[off]])
    diag_w = np.zeros(W.n)
    on_diag = ~off
    diag_w[W.rows[on_diag]] = W.vals[on_diag]
    vals = np.concatenate([degree - diag_w, -W.vals[off]])
    keep = vals != 0.0
    keep[: W.n] = True  # always carry the diagonal
    L = SparseSymMatrix(W.n, rows[keep], cols[keep], vals[keep])
    return LaplacianResult(L, degree, np.flatnonzero(degree == 0))


def _csr_from_edges(n, rows, cols, w):
    src = np.concatenate([rows, cols])
    dst = np.concatenate([cols, rows])
    ww = np.concatenate([w, w])
    order = np.lexsort((dst, src))
    src, dst, ww = src[order], dst[order], ww[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return (
        indptr.astype(np.int32),
        dst.astype(np.int32),
        np.ascontiguousarray(ww, dtype=np.float64),
    )


def connected_components(n, indptr, indices):
    """Component label per node by BFS; labels are discovery order."""
    labels = np.full(n, -1, dtype=np.int64)
    comp = 0
    for start in range(n):
        if labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = comp
        while stack:
            u = stack.pop()
            for e in range(indptr[u], indptr[u + 1]):
                v = indices[e]
                if labels[v] < 0:
                    labels[v] = comp
                    stack.append(v)
        comp += 1
    return labels


def all_pairs_geodesic(g):
    """Shortest-path distance between every node pair over the symmetrized
    graph, Dijkstra from every source. Raises ConnectivityError naming the
    component sizes when the graph is disconnected."""
    n = g.n
    rows, cols, w = symmetrized_edges(g)
    indptr, indices, weights = _csr_from_edges(n, rows, cols, w)
    labels = connected_components(n, indptr, indices)
    n_comp = int(labels.max()) + 1
    if n_comp > 1:
        sizes = np.bincount(labels).tolist()
        raise ConnectivityError(
            f"graph has {n_comp} connected components with sizes {sizes}"
        )

    out = np.empty((n, n), dtype=np.float64)

    def run_range(lo, hi):
        for s in range(lo, hi):
            kernels.dijkstra_csr(indptr, indices, weights, s, out[s])

    workers = min(thread_count(), n)
    if workers <= 1 or kernels.BACKEND != "compiled":
        run_range(0, n)
    else:
        bounds = np.linspace(0, n, workers + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(run_range, int(bounds[i]), int(bounds[i + 1]))
                for i in range(workers)
            ]
            for f in futures:
                f.result()

    # enforce exact symmetry against float addition-order noise
    out = np.minimum(out, out.T)
    np.fill_diagonal(out, 0.0)
    return DistanceMatrix(out)

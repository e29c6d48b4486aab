"""Pure-Python reference implementations of the hot kernels.

Semantics match the compiled extension exactly; only speed differs. These
are the import-time fallback and the baseline side of the kernel benchmark.
"""

import heapq

import numpy as np


def dijkstra_csr(indptr, indices, weights, source, out):
    """Single-source shortest paths over a CSR adjacency, writing distances
    into ``out``. Unreachable nodes keep +inf. Ties pop by node index, so
    results are deterministic."""
    n = len(indptr) - 1
    out[:] = np.inf
    out[source] = 0.0
    done = np.zeros(n, dtype=bool)
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            nd = d + weights[e]
            if nd < out[v]:
                out[v] = nd
                heapq.heappush(heap, (nd, v))


class _Cell:
    """Node of the Barnes-Hut space-partitioning tree (quad/octree)."""

    __slots__ = ("center", "half", "count", "com_sum", "children", "leaf_point")

    def __init__(self, center, half):
        self.center = center
        self.half = half
        self.count = 0
        self.com_sum = None
        self.children = None
        self.leaf_point = None


def _build_cell(Y, idx, center, half):
    cell = _Cell(center, half)
    cell.count = len(idx)
    pts = Y[idx]
    cell.com_sum = pts.sum(axis=0)
    first = pts[0]
    if np.all(pts == first):
        # single location (possibly duplicated points): exact leaf
        cell.leaf_point = first
        return cell
    d = Y.shape[1]
    cell.children = []
    quadrant = np.zeros(len(idx), dtype=np.int64)
    for axis in range(d):
        quadrant |= (pts[:, axis] > center[axis]).astype(np.int64) << axis
    for q in range(1 << d):
        sub = idx[quadrant == q]
        if len(sub) == 0:
            continue
        offset = np.array(
            [(half / 2.0) if (q >> axis) & 1 else -(half / 2.0) for axis in range(d)]
        )
        cell.children.append(_build_cell(Y, sub, center + offset, half / 2.0))
    return cell


def _traverse(cell, y, theta2, rep):
    """Accumulate the repulsive numerator for point ``y``; returns this
    point's contribution to the global normalizer Z (self term included)."""
    z = 0.0
    stack = [cell]
    d = len(y)
    while stack:
        node = stack.pop()
        com = node.com_sum / node.count
        dist2 = 0.0
        for axis in range(d):
            dv = y[axis] - com[axis]
            dist2 += dv * dv
        size = 2.0 * node.half
        if node.children is None or size * size < theta2 * dist2:
            w = 1.0 / (1.0 + dist2)
            cw = node.count * w
            z += cw
            cww = cw * w
            for axis in range(d):
                rep[axis] += cww * (y[axis] - com[axis])
        else:
            stack.extend(node.children)
    return z


def bh_forces(Y, indptr, indices, pvals, theta, attr_out, rep_out):
    """Barnes-Hut approximation of the t-SNE force terms.

    Attractive term is exact over the sparse P support; the repulsive term
    uses the tree with opening criterion cell_size/distance < theta. Returns
    the normalizer Z = sum of all pairwise Student-t weights (i != j).
    theta = 0 opens every cell down to the leaves, reproducing the exact sums.
    """
    Y = np.asarray(Y, dtype=np.float64)
    n, d = Y.shape
    attr_out[:] = 0.0
    rep_out[:] = 0.0
    if n <= 1:
        return 0.0

    # exact attraction over the sparse support
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        if lo == hi:
            continue
        js = indices[lo:hi]
        diff = Y[i] - Y[js]
        w = 1.0 / (1.0 + (diff * diff).sum(axis=1))
        attr_out[i] = (pvals[lo:hi] * w) @ diff

    lo_corner = Y.min(axis=0)
    hi_corner = Y.max(axis=0)
    center = (lo_corner + hi_corner) / 2.0
    half = float((hi_corner - lo_corner).max()) / 2.0 + 1e-9
    root = _build_cell(Y, np.arange(n), center, half)

    theta2 = theta * theta
    z_total = 0.0
    for i in range(n):
        z_total += _traverse(root, Y[i], theta2, rep_out[i])
    return z_total - n

"""The four embedding algorithms: locally linear embedding, Isomap,
Laplacian eigenmaps, and t-SNE (exact and Barnes-Hut), plus perplexity
calibration and embedding standardization/persistence."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    CalibrationError,
    ConnectivityError,
    DegenerateDimensionError,
    OptimizationError,
    ParameterError,
    SolverError,
)
from .graph import (
    NeighborGraph,
    all_pairs_geodesic,
    connected_components,
    gaussian_affinity,
    graph_laplacian,
    knn_graph,
    pairwise_sq_dists,
    symmetrized_edges,
)
from .spectral import double_center, generalized_sym_eigen, sym_eigen
from .tensor import as_tensor, load_tensor, save_tensor
from .util import read_json, write_json

METHODS = ("lle", "isomap", "le", "tsne")


@dataclass
class Embedding:
    """Per-sample low-dimensional coordinates plus run metadata."""

    method: str
    coords: np.ndarray  # [n, d] float32
    hyper: dict
    standardization: tuple | None = None  # (mean [d], sd [d]) of the source coords
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}")
        self.coords = as_tensor(self.coords)
        if self.coords.ndim != 2 or self.coords.shape[1] < 1:
            raise ParameterError(f"coords must be [n, d>=1], got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ParameterError("coords must be finite")
        if self.standardization is not None:
            mean, sd = self.standardization
            mean = np.asarray(mean, dtype=np.float64)
            sd = np.asarray(sd, dtype=np.float64)
            if np.any(sd <= 0):
                raise ParameterError("standardization sd must be positive per dimension")
            self.standardization = (mean, sd)

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def d(self):
        return self.coords.shape[1]


@dataclass
class LleWeights:
    """Per-point reconstruction weights over the k-NN neighborhood."""

    graph: NeighborGraph
    w: np.ndarray  # [n, k], rows sum to 1

    def __post_init__(self):
        self.w = np.ascontiguousarray(self.w, dtype=np.float64)
        if self.w.shape != self.graph.neighbors.shape:
            raise ParameterError("weights shape must match the neighbor graph")


def lle_weights(X, g, reg):
    """Least-squares reconstruction weights of each point from its neighbors,
    constrained to sum to 1.

    The local Gram G = (x_i - X_N)(x_i - X_N)^T is ridge-regularized as
    G + reg * trace(G)/k * I; then w solves G w = 1 and is normalized. A
    neighborhood collapsed onto x_i (zero trace) gets uniform weights.
    """
    if reg < 0:
        raise ParameterError(f"reg must be >= 0, got {reg}")
    X = np.asarray(X, dtype=np.float64)
    n, k = g.neighbors.shape
    Z = X[g.neighbors] - X[:, None, :]           # [n, k, d]
    G = Z @ Z.transpose(0, 2, 1)                 # [n, k, k]
    tr = np.trace(G, axis1=1, axis2=2)
    ridge = reg * tr / k
    G[:, np.arange(k), np.arange(k)] += ridge[:, None]
    w = np.empty((n, k))
    degenerate = tr == 0.0
    solvable = ~degenerate
    if np.any(solvable):
        rhs = np.ones((int(solvable.sum()), k, 1))
        try:
            w[solvable] = np.linalg.solve(G[solvable], rhs)[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular regularized Gram matrix: {exc}") from exc
    w[degenerate] = 1.0 / k
    sums = w.sum(axis=1)
    if np.any(sums == 0) or not np.all(np.isfinite(w)):
        raise SolverError("weight normalization failed (singular local system)")
    return LleWeights(g, w / sums[:, None])


def lle_embed(X, k, d, reg=1e-3):
    """Locally linear embedding: weights -> M = (I-W)^T (I-W) -> the d
    eigenvectors above the constant null vector, scaled by sqrt(n)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if d >= n - 1:
        raise ParameterError(f"need d < n - 1, got d={d}, n={n}")
    g = knn_graph(X, k)
    lw = lle_weights(X, g, reg)
    A = np.eye(n)
    np.subtract.at(A, (np.repeat(np.arange(n), k), g.neighbors.ravel()), lw.w.ravel())
    M = A.T @ A
    res = sym_eigen(M, "smallest", d + 1)
    coords = res.vectors[:, 1 : d + 1] * math.sqrt(n)
    return Embedding(
        "lle",
        coords,
        {"k": k, "d": d, "reg": reg},
        diagnostics={"eigenvalues": res.values[1 : d + 1].tolist()},
    )


def isomap_embed(X, k, d):
    """Isomap: geodesic distances over the k-NN graph, classical MDS on the
    squared geodesics, coordinates from the top-d eigenpairs."""
    X = np.asarray(X, dtype=np.float64)
    g = knn_graph(X, k)
    geo = all_pairs_geodesic(g)
    B = double_center(geo.d**2)
    res = sym_eigen(B, "largest", d)
    vals = res.values[::-1].copy()          # descending, dominant first
    vecs = res.vectors[:, ::-1]
    clipped = np.clip(vals, 0.0, None)
    total = np.abs(vals).sum()
    clipped_mass = float(np.clip(-vals, 0.0, None).sum() / total) if total > 0 else 0.0
    coords = vecs * np.sqrt(clipped)[None, :]
    emb_d = np.sqrt(pairwise_sq_dists(coords))
    iu = np.triu_indices(geo.n, k=1)
    r = np.corrcoef(geo.d[iu], emb_d[iu])[0, 1]
    return Embedding(
        "isomap",
        coords,
        {"k": k, "d": d},
        diagnostics={
            "residual_variance": float(1.0 - r * r),
            "clipped_eigen_mass": clipped_mass,
        },
    )


def le_embed(X, k, sigma, d):
    """Laplacian eigenmaps: Gaussian affinities on the symmetrized k-NN
    graph, generalized eigenproblem L v = lambda D v, eigenvectors 1..d."""
    X = np.asarray(X, dtype=np.float64)
    g = knn_graph(X, k)
    rows, cols, w = symmetrized_edges(g)
    from .graph import _csr_from_edges  # local import to keep the public surface tidy

    indptr, indices, _ = _csr_from_edges(g.n, rows, cols, w)
    labels = connected_components(g.n, indptr, indices)
    n_comp = int(labels.max()) + 1
    if n_comp > 1:
        sizes = np.bincount(labels).tolist()
        raise ConnectivityError(
            f"affinity graph has {n_comp} components with sizes {sizes}"
        )
    W = gaussian_affinity(g, sigma)
    lap = graph_laplacian(W)
    res = generalized_sym_eigen(lap.L.to_dense(), lap.degree, "smallest", d + 1)
    coords = res.vectors[:, 1 : d + 1]
    return Embedding(
        "le",
        coords,
        {"k": k, "sigma": sigma, "d": d},
        diagnostics={"eigenvalues": res.values[1 : d + 1].tolist()},
    )


# ---------------------------------------------------------------------------
# t-SNE


def _entropy_and_probs(d2, beta):
    shifted = d2 - d2.min()
    e = np.exp(-beta * shifted)
    s = e.sum()
    p = e / s
    h = float(beta * (p @ shifted) + np.log(s))
    return h, p


def perplexity_calibrate(d2_row, perplexity, tol=1e-5, max_doublings=64):
    """Binary search on the Gaussian precision beta so the row's Shannon
    entropy (natural log) hits ln(perplexity) within ``tol``.

    Returns (beta, p_row) with p_row summing to 1 over the other points.
    """
    d2 = np.asarray(d2_row, dtype=np.float64)
    m = d2.shape[0]
    if not perplexity < m:
        raise ParameterError(f"perplexity must be < {m}, got {perplexity}")
    if perplexity <= 0:
        raise ParameterError(f"perplexity must be positive, got {perplexity}")
    target = math.log(perplexity)
    beta = 1.0
    h, p = _entropy_and_probs(d2, beta)
    lo, hi = None, None
    # entropy decreases in beta; expand until the target is bracketed
    for _ in range(max_doublings):
        if abs(h - target) <= tol:
            return beta, p
        if h > target:
            lo = beta
            beta = beta * 2.0 if hi is None else (beta + hi) / 2.0
        else:
            hi = beta
            beta = beta / 2.0 if lo is None else (beta + lo) / 2.0
        h, p = _entropy_and_probs(d2, beta)
        if lo is not None and hi is not None:
            break
    else:
        raise CalibrationError(
            f"failed to bracket entropy target ln({perplexity}) in {max_doublings} doublings"
        )
    for _ in range(200):
        if abs(h - target) <= tol:
            return beta, p
        if h > target:
            lo = beta
        else:
            hi = beta
        beta = (lo + hi) / 2.0
        h, p = _entropy_and_probs(d2, beta)
    if abs(h - target) <= tol:
        return beta, p
    raise CalibrationError(
        f"bisection stalled at |H - ln(perplexity)| = {abs(h - target):.2e}"
    )


def _conditional_rows_dense(d2, perplexity):
    n = d2.shape[0]
    P = np.zeros((n, n))
    betas = np.empty(n)
    mask = ~np.eye(n, dtype=bool)
    for i in range(n):
        beta, p = perplexity_calibrate(d2[i][mask[i]], perplexity)
        P[i][mask[i]] = p
        betas[i] = beta
    return P, betas


def tsne_p_dense(X, perplexity):
    """Symmetrized joint probabilities p_ij = (p_j|i + p_i|j) / (2n)."""
    d2 = pairwise_sq_dists(X)
    P, _ = _conditional_rows_dense(d2, perplexity)
    n = X.shape[0]
    return (P + P.T) / (2.0 * n)


def tsne_p_sparse(X, perplexity, neighbors_factor=3.0):
    """Sparse symmetrized P over the 3*perplexity nearest neighbors,
    returned as CSR (indptr, indices, vals)."""
    n = X.shape[0]
    k = min(n - 1, max(2, int(math.floor(neighbors_factor * perplexity))))
    if not perplexity < k:
        raise ParameterError(
            f"perplexity {perplexity} too large for {k} sparse neighbors"
        )
    g = knn_graph(X, k)
    cond_rows = np.empty((n, k))
    for i in range(n):
        _, cond_rows[i] = perplexity_calibrate(g.distances[i] ** 2, perplexity)
    # symmetrize the sparse conditional matrix: P = (C + C^T) / (2n)
    src = np.repeat(np.arange(n), k)
    dst = g.neighbors.ravel()
    vals = cond_rows.ravel()
    src2 = np.concatenate([src, dst])
    dst2 = np.concatenate([dst, src])
    vals2 = np.concatenate([vals, vals]) / (2.0 * n)
    key = src2 * n + dst2
    order = np.argsort(key, kind="stable")
    key, vals2 = key[order], vals2[order]
    uniq, start = np.unique(key, return_index=True)
    sums = np.add.reduceat(vals2, start)
    rows_u = uniq // n
    cols_u = uniq % n
    indptr = np.zeros(n + 1, dtype=np.int32)
    np.add.at(indptr, rows_u + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, cols_u.astype(np.int32), sums


def _student_t_q(Y):
    num = 1.0 / (1.0 + pairwise_sq_dists(Y))
    np.fill_diagonal(num, 0.0)
    z = num.sum()
    return num, z


def _gradient_dense(P, Y, exaggeration=1.0):
    num, z = _student_t_q(Y)
    PQ = (exaggeration * P - num / z) * num
    s = PQ.sum(axis=1)
    grad = 4.0 * (s[:, None] * Y - PQ @ Y)
    return grad, num, z


def tsne_gradient_exact(P, Y):
    """Exact KL(P||Q) gradient with the Student-t kernel:
    grad_i = 4 sum_j (p_ij - q_ij)(y_i - y_j)(1 + ||y_i - y_j||^2)^-1."""
    P = np.asarray(P, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    grad, _, _ = _gradient_dense(P, Y)
    return grad


def tsne_gradient_bh(P_csr, Y, theta):
    """Barnes-Hut gradient: exact attraction over the sparse P support,
    tree-approximated repulsion with opening criterion size/dist < theta."""
    if theta < 0:
        raise ParameterError(f"theta must be >= 0, got {theta}")
    Y = np.asarray(Y, dtype=np.float64)
    n, d = Y.shape
    if d not in (2, 3):
        raise ParameterError(f"Barnes-Hut supports d in (2, 3), got {d}")
    indptr, indices, vals = P_csr
    attr = np.zeros((n, d))
    rep = np.zeros((n, d))
    if n <= 1:
        return np.zeros((n, d))
    z = kernels.bh_forces(
        Y,
        np.ascontiguousarray(indptr, dtype=np.int32),
        np.ascontiguousarray(indices, dtype=np.int32),
        np.ascontiguousarray(vals, dtype=np.float64),
        float(theta),
        attr,
        rep,
    )
    return 4.0 * (attr - rep / z)


def _kl_dense(P, num, z):
    mask = P > 0
    q = np.maximum(num / z, 1e-300)
    return float(np.sum(P[mask] * (np.log(P[mask]) - np.log(q[mask]))))


def _kl_sparse(P_csr, Y, z):
    indptr, indices, vals = P_csr
    n = Y.shape[0]
    src = np.repeat(np.arange(n), np.diff(indptr))
    diff = Y[src] - Y[indices]
    w = 1.0 / (1.0 + (diff * diff).sum(axis=1))
    q = np.maximum(w / z, 1e-300)
    mask = vals > 0
    return float(np.sum(vals[mask] * (np.log(vals[mask]) - np.log(q[mask]))))


def tsne_embed(
    X,
    d,
    perplexity,
    lr,
    iters,
    seed,
    mode="auto",
    theta=0.5,
    exaggeration=12.0,
    exag_iters=250,
):
    """t-SNE by gradient descent with momentum 0.5 before iteration 250 and
    0.8 after, early exaggeration on P for the first 250 iterations, and
    Gaussian(0, 1e-4) initialization.

    mode "exact" uses the dense O(n^2) gradient (any d); "bh" uses the
    Barnes-Hut approximation (d = 2 or 3); "auto" picks bh for n >= 1500
    when d allows, exact otherwise. Returns an Embedding whose diagnostics
    carry the per-iteration KL(P||Q) history (approximate under bh).
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 5:
        raise ParameterError(f"need n >= 5, got {n}")
    if mode == "auto":
        mode = "bh" if (d in (2, 3) and n >= 1500) else "exact"
    if mode not in ("exact", "bh"):
        raise ParameterError(f"mode must be exact|bh|auto, got {mode!r}")
    if mode == "bh" and d not in (2, 3):
        raise ParameterError("Barnes-Hut path requires d in (2, 3)")

    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-2, size=(n, d))  # variance 1e-4
    vel = np.zeros_like(Y)

    dense = mode == "exact"
    if dense:
        P = tsne_p_dense(X, perplexity)
    else:
        P_csr = tsne_p_sparse(X, perplexity)
        indptr32 = np.ascontiguousarray(P_csr[0], dtype=np.int32)
        indices32 = np.ascontiguousarray(P_csr[1], dtype=np.int32)
        vals64 = np.ascontiguousarray(P_csr[2], dtype=np.float64)

    kl_history = np.empty(iters)
    for it in range(iters):
        exag = exaggeration if it < exag_iters else 1.0
        momentum = 0.5 if it < exag_iters else 0.8
        if dense:
            grad, num, z = _gradient_dense(P, Y, exaggeration=exag)
            kl_history[it] = _kl_dense(P, num, z)
        else:
            # attraction scales linearly in P, so one traversal serves both
            # the exaggerated gradient and the true-P KL estimate
            attr = np.zeros_like(Y)
            rep = np.zeros_like(Y)
            z = kernels.bh_forces(Y, indptr32, indices32, vals64, float(theta), attr, rep)
            grad = 4.0 * (exag * attr - rep / z)
            kl_history[it] = _kl_sparse(P_csr, Y, z)
        if not np.all(np.isfinite(grad)):
            raise OptimizationError(f"non-finite gradient at iteration {it}")
        vel = momentum * vel - lr * grad
        Y = Y + vel
        Y = Y - Y.mean(axis=0)
        if not np.all(np.isfinite(Y)):
            raise OptimizationError(f"non-finite embedding at iteration {it}")

    return Embedding(
        "tsne",
        Y,
        {
            "d": d,
            "perplexity": perplexity,
            "lr": lr,
            "iters": iters,
            "seed": seed,
            "mode": mode,
            "theta": theta if mode == "bh" else None,
            "exaggeration": exaggeration,
            "exag_iters": exag_iters,
        },
        diagnostics={
            "kl_history": kl_history.tolist(),
            "final_kl": float(kl_history[-1]) if iters else None,
        },
    )


# ---------------------------------------------------------------------------
# standardization and persistence


def standardize_embedding(e):
    """Zero-mean unit-variance per dimension; the (mean, sd) pair is stored
    for exact inversion before decoding."""
    if e.n < 2:
        raise ParameterError("standardization needs at least 2 samples")
    c = e.coords.astype(np.float64)
    mean = c.mean(axis=0)
    sd = c.std(axis=0)
    if np.any(sd <= 0):
        bad = int(np.argmin(sd))
        raise DegenerateDimensionError(f"dimension {bad} has zero variance")
    return Embedding(
        e.method,
        (c - mean) / sd,
        dict(e.hyper),
        standardization=(mean, sd),
        diagnostics=dict(e.diagnostics),
    )


def destandardize_embedding(e):
    """Inverse of standardize_embedding using the stored stats."""
    if e.standardization is None:
        raise ParameterError("embedding carries no standardization stats")
    mean, sd = e.standardization
    return Embedding(
        e.method,
        e.coords.astype(np.float64) * sd + mean,
        dict(e.hyper),
        standardization=None,
        diagnostics=dict(e.diagnostics),
    )


def save_embedding(e, path):
    """Persist coords as MGT1 at ``path`` plus a JSON sidecar at
    ``path + ".json"`` carrying method, hyperparameters, and stats."""
    save_tensor(e.coords, path)
    side = {
        "schema": "manigen.embedding/1",
        "method": e.method,
        "hyper": e.hyper,
        "standardization": None
        if e.standardization is None
        else {
            "mean": e.standardization[0].tolist(),
            "sd": e.standardization[1].tolist(),
        },
        "diagnostics": e.diagnostics,
    }
    write_json(str(path) + ".json", side)


def load_embedding(path):
    coords = load_tensor(path)
    side = read_json(str(path) + ".json")
    std = side.get("standardization")
    return Embedding(
        side["method"],
        coords,
        side.get("hyper", {}),
        standardization=None
        if std is None
        else (np.asarray(std["mean"]), np.asarray(std["sd"])),
        diagnostics=side.get("diagnostics", {}),
    )

"""Persistent homology of patch point clouds and diagram distances.

A patch is read as a point cloud (its q column vectors in R^p), filtered by a
Vietoris-Rips complex: connected components (H0) are tracked with union-find
over edges sorted by appearance scale, loops (H1) by Z/2 boundary-matrix
reduction over edges and triangles.  Edge appearance defaults to half the
endpoint distance (ball-intersection convention); pass scale_convention="full"
for the raw-distance convention.

Diagram distances follow the optimal partial matching with diagonal
projections under the max-norm ground metric, solved exactly as an assignment
problem; the distance from a point (b, d) to the diagonal is (d - b) / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial.distance import pdist, squareform

from .embedding import PatchGrid

MAX_RIPS_POINTS = 256
SCALE_CONVENTIONS = ("half", "full")


@dataclass
class PointCloud:
    """Points in R^dim; for a patch these are its columns (dim = patch rows)."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ValueError(f"points must be (n, dim) with n >= 1, got {self.points.shape}")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def cloud_from_patch(patch: np.ndarray, points_from: str = "columns") -> PointCloud:
    patch = np.asarray(patch, dtype=np.float64)
    if points_from == "columns":
        return PointCloud(points=patch.T.copy())
    if points_from == "rows":
        return PointCloud(points=patch.copy())
    raise ValueError(f"points_from must be 'columns' or 'rows', got {points_from!r}")


@dataclass
class PersistenceDiagram:
    """Multiset of (homology_dim, birth, death) features; death may be +inf."""

    features: list[tuple[int, float, float]] = field(default_factory=list)

    def of_dim(self, k: int, finite_only: bool = False) -> np.ndarray:
        pts = [(b, d) for dim, b, d in self.features if dim == k]
        if finite_only:
            pts = [(b, d) for b, d in pts if math.isfinite(d)]
        return np.asarray(pts, dtype=np.float64).reshape(-1, 2)

    def counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for dim, _, _ in self.features:
            out[dim] = out.get(dim, 0) + 1
        return out


def rips_persistence(
    cloud: PointCloud,
    max_scale: float | None = None,
    max_dim: int = 1,
    scale_convention: str = "half",
    max_points: int = MAX_RIPS_POINTS,
) -> PersistenceDiagram:
    """H0/H1 persistence of the Vietoris-Rips filtration of a point cloud.

    max_scale=None uses the largest edge appearance scale, so the filtration
    ends connected (one essential H0 feature) and every loop closes.  Clouds
    larger than max_points are rejected: simplex count grows cubically, so
    subsample first.
    """
    if scale_convention not in SCALE_CONVENTIONS:
        raise ValueError(f"scale_convention must be one of {SCALE_CONVENTIONS}")
    if max_dim not in (0, 1):
        raise ValueError("only H0 and H1 are supported (max_dim 0 or 1)")
    n = cloud.n_points
    if n > max_points:
        raise ValueError(
            f"point cloud has {n} points, above the Rips cap of {max_points}; "
            "subsample the cloud before calling"
        )
    features: list[tuple[int, float, float]] = []
    if n == 1:
        features.append((0, 0.0, math.inf))
        return PersistenceDiagram(features=features)

    dists = pdist(cloud.points)
    factor = 0.5 if scale_convention == "half" else 1.0
    scales = dists * factor
    if max_scale is None:
        max_scale = float(scales.max())
    elif max_scale <= 0:
        raise ValueError(f"max_scale must be positive, got {max_scale}")

    # condensed index -> vertex pair, kept only up to max_scale
    iu, ju = np.triu_indices(n, k=1)
    keep = scales <= max_scale
    edges = sorted(
        zip(scales[keep], iu[keep], ju[keep]), key=lambda e: (e[0], e[1], e[2])
    )

    # H0: union-find; edges that do not merge create cycles (H1 candidates)
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    cycle_edges: list[int] = []  # indices into `edges`
    for idx, (s, a, b) in enumerate(edges):
        ra, rb = find(a), find(b)
        if ra == rb:
            cycle_edges.append(idx)
        else:
            parent[ra] = rb
            features.append((0, 0.0, float(s)))
    n_components = sum(1 for v in range(n) if find(v) == v)
    features.extend((0, 0.0, math.inf) for _ in range(n_components))

    if max_dim >= 1 and len(edges) > 0:
        features.extend(_h1_pairs(n, edges, cycle_edges, max_scale))
    return PersistenceDiagram(features=features)


def _h1_pairs(n, edges, cycle_edges, max_scale):
    """Z/2 reduction of the triangle boundary matrix; columns are bitsets."""
    edge_index = {}
    for idx, (_, a, b) in enumerate(edges):
        edge_index[(a, b)] = idx
    edge_scale = [e[0] for e in edges]

    triangles = []
    adj = [[] for _ in range(n)]
    for (a, b), idx in edge_index.items():
        adj[a].append((b, idx))
    for a in range(n):
        for b, iab in adj[a]:
            for c, ibc in adj[b]:
                iac = edge_index.get((a, c))
                if iac is None:
                    continue
                s = max(edge_scale[iab], edge_scale[ibc], edge_scale[iac])
                if s <= max_scale:
                    triangles.append((s, a, b, c, iab, ibc, iac))
    triangles.sort(key=lambda t: (t[0], t[1], t[2], t[3]))

    pivot: dict[int, int] = {}  # edge index -> reduced column bitset
    pairs = []
    paired_edges = set()
    for s, a, b, c, iab, ibc, iac in triangles:
        col = (1 << iab) | (1 << ibc) | (1 << iac)
        while col:
            low = col.bit_length() - 1
            other = pivot.get(low)
            if other is None:
                pivot[low] = col
                birth = edge_scale[low]
                paired_edges.add(low)
                if s > birth:
                    pairs.append((1, float(birth), float(s)))
                break
            col ^= other
    for idx in cycle_edges:
        if idx not in paired_edges:
            pairs.append((1, float(edge_scale[idx]), math.inf))
    return pairs


# ---------------------------------------------------------------------------
# diagram distances


def _prepare_points(diagram, clamp_infinite: float | None) -> np.ndarray:
    """Accept a PersistenceDiagram slice or raw (n, 2) array of (birth, death)."""
    if isinstance(diagram, PersistenceDiagram):
        raise TypeError(
            "pass one homology dimension, e.g. diagram.of_dim(1); "
            "wasserstein compares same-dimension diagrams"
        )
    pts = np.asarray(diagram, dtype=np.float64).reshape(-1, 2)
    if pts.size == 0:
        return pts
    infinite = ~np.isfinite(pts[:, 1])
    if infinite.any():
        if clamp_infinite is None:
            pts = pts[~infinite]
        else:
            pts = pts.copy()
            pts[infinite, 1] = clamp_infinite
    if np.any(pts[:, 1] < pts[:, 0]):
        raise ValueError("diagram has death < birth")
    return pts


def wasserstein(d1, d2, p: float = 2.0, clamp_infinite: float | None = None) -> float:
    """Order-p Wasserstein distance between two same-dimension diagrams.

    Exact optimal partial matching with diagonal projections: each point may
    match a point of the other diagram (max-norm cost) or its diagonal
    projection (cost (death - birth) / 2).  Infinite-death features are
    dropped unless clamp_infinite gives a finite replacement death.
    """
    if p < 1:
        raise ValueError(f"order p must be >= 1, got {p}")
    P1 = _prepare_points(d1, clamp_infinite)
    P2 = _prepare_points(d2, clamp_infinite)
    n1, n2 = len(P1), len(P2)
    if n1 == 0 and n2 == 0:
        return 0.0
    if n1 == 0:
        return float(np.sum(((P2[:, 1] - P2[:, 0]) / 2.0) ** p) ** (1.0 / p))
    if n2 == 0:
        return float(np.sum(((P1[:, 1] - P1[:, 0]) / 2.0) ** p) ** (1.0 / p))

    cross = np.max(np.abs(P1[:, None, :] - P2[None, :, :]), axis=2)
    diag1 = (P1[:, 1] - P1[:, 0]) / 2.0
    diag2 = (P2[:, 1] - P2[:, 0]) / 2.0
    size = n1 + n2
    cost = np.zeros((size, size))
    cost[:n1, :n2] = cross**p
    big = (max(cost[:n1, :n2].max(initial=0.0), (diag1**p).max(), (diag2**p).max()) + 1.0) * size
    cost[:n1, n2:] = big
    cost[:n1, n2:][np.arange(n1), np.arange(n1)] = diag1**p
    cost[n1:, :n2] = big
    cost[n1:, :n2][np.arange(n2), np.arange(n2)] = diag2**p
    rows, cols = linear_sum_assignment(cost)
    total = cost[rows, cols].sum()
    return float(total ** (1.0 / p))


def bottleneck(d1, d2, clamp_infinite: float | None = None) -> float:
    """W-infinity distance: smallest t admitting a full matching with all
    pair costs <= t (binary search over candidate costs + bipartite matching)."""
    P1 = _prepare_points(d1, clamp_infinite)
    P2 = _prepare_points(d2, clamp_infinite)
    n1, n2 = len(P1), len(P2)
    if n1 == 0 and n2 == 0:
        return 0.0
    diag1 = (P1[:, 1] - P1[:, 0]) / 2.0 if n1 else np.zeros(0)
    diag2 = (P2[:, 1] - P2[:, 0]) / 2.0 if n2 else np.zeros(0)
    if n1 == 0:
        return float(diag2.max(initial=0.0))
    if n2 == 0:
        return float(diag1.max(initial=0.0))
    cross = np.max(np.abs(P1[:, None, :] - P2[None, :, :]), axis=2)
    candidates = np.unique(np.concatenate([cross.ravel(), diag1, diag2, [0.0]]))

    size = n1 + n2

    def feasible(t: float) -> bool:
        rows, cols = [], []
        for i in range(n1):
            for j in range(n2):
                if cross[i, j] <= t:
                    rows.append(i)
                    cols.append(j)
            if diag1[i] <= t:
                rows.append(i)
                cols.append(n2 + i)
        for j in range(n2):
            if diag2[j] <= t:
                rows.append(n1 + j)
                cols.append(j)
        for i in range(n1):
            for j in range(n2):
                rows.append(n1 + j)
                cols.append(n2 + i)
        graph = csr_matrix(
            (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(size, size)
        )
        match = maximum_bipartite_matching(graph, perm_type="column")
        return int((match >= 0).sum()) == size

    lo, hi = 0, len(candidates) - 1
    if not feasible(candidates[hi]):
        raise RuntimeError("bottleneck feasibility failed at maximal threshold")
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(candidates[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(candidates[lo])


def twwd(
    d1: PersistenceDiagram,
    d2: PersistenceDiagram,
    p: float = 2.0,
    k_max: int = 1,
    clamp_infinite: float | None = None,
) -> float:
    """Persistence-weighted combination of per-dimension Wasserstein distances.

    Weight w_k is proportional to the mean finite persistence of dimension-k
    features pooled over both diagrams (uniform if every persistence is zero),
    normalized to sum to 1; the result is (sum_k w_k W_p^p)^(1/p).
    """
    mean_pers = []
    dists = []
    for k in range(k_max + 1):
        pts = np.vstack([d1.of_dim(k, finite_only=True), d2.of_dim(k, finite_only=True)])
        mean_pers.append(float(np.mean(pts[:, 1] - pts[:, 0])) if len(pts) else 0.0)
        dists.append(
            wasserstein(d1.of_dim(k), d2.of_dim(k), p=p, clamp_infinite=clamp_infinite)
        )
    weights = np.asarray(mean_pers)
    if weights.sum() == 0.0:
        weights = np.ones(k_max + 1)
    weights = weights / weights.sum()
    return float(np.sum(weights * np.asarray(dists) ** p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# token-level analysis


@dataclass
class DistanceMatrix:
    """Symmetric nonnegative token-to-token distances with zero diagonal."""

    values: np.ndarray
    labels: list[str]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"distance matrix must be square, got {v.shape}")
        if not np.allclose(v, v.T, atol=1e-9):
            raise ValueError("distance matrix is not symmetric within 1e-9")
        if np.any(np.abs(np.diag(v)) > 0):
            raise ValueError("distance matrix diagonal must be zero")
        if np.any(v < 0):
            raise ValueError("distance matrix has negative entries")
        self.values = v
        if len(self.labels) != v.shape[0]:
            raise ValueError("label count does not match matrix size")


def patch_diagrams(
    grid: PatchGrid,
    max_scale: float | None = None,
    scale_convention: str = "half",
    points_from: str = "columns",
    max_points: int = MAX_RIPS_POINTS,
) -> list[PersistenceDiagram]:
    return [
        rips_persistence(
            cloud_from_patch(patch, points_from),
            max_scale=max_scale,
            scale_convention=scale_convention,
            max_points=max_points,
        )
        for patch in grid.patches
    ]


def token_distance_matrix(
    grid: PatchGrid,
    metric: str = "wasserstein",
    homology_dim: int = 1,
    p: float = 2.0,
    max_scale: float | None = None,
    scale_convention: str = "half",
    points_from: str = "columns",
    max_points: int = MAX_RIPS_POINTS,
) -> DistanceMatrix:
    """Pairwise diagram distances between all patch tokens of a grid.

    metric="wasserstein" compares a single homology dimension (loops by
    default); metric="twwd" pools dimensions 0..1 with persistence weights.
    """
    if grid.patch_count < 2:
        raise ValueError("need at least 2 patches for a distance matrix")
    if metric not in ("wasserstein", "twwd"):
        raise ValueError(f"metric must be 'wasserstein' or 'twwd', got {metric!r}")
    diagrams = patch_diagrams(grid, max_scale, scale_convention, points_from, max_points)
    n = len(diagrams)
    values = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if metric == "wasserstein":
                d = wasserstein(
                    diagrams[i].of_dim(homology_dim), diagrams[j].of_dim(homology_dim), p=p
                )
            else:
                d = twwd(diagrams[i], diagrams[j], p=p)
            values[i, j] = values[j, i] = d
    labels = [f"token_{j + 1}" for j in range(n)]
    return DistanceMatrix(values=values, labels=labels)


def cluster_tokens(dm: DistanceMatrix, n_clusters: int) -> np.ndarray:
    """Deterministic average-linkage clustering on precomputed distances.

    Returns 0-based labels; label numbering follows scipy's fcluster and is
    only meaningful up to relabeling.
    """
    n = dm.values.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must be in [1, {n}], got {n_clusters}")
    if n_clusters == n:
        return np.arange(n)
    Z = linkage(squareform(dm.values, checks=False), method="average")
    return fcluster(Z, t=n_clusters, criterion="maxclust") - 1


def largest_cluster(labels: np.ndarray) -> int:
    """Label of the biggest cluster (lowest label wins ties)."""
    counts = np.bincount(labels)
    return int(np.argmax(counts))


# ---------------------------------------------------------------------------
# CSV export


def export_diagram_csv(diagram: PersistenceDiagram, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("dim,birth,death\n")
        for dim, b, d in diagram.features:
            death = "inf" if math.isinf(d) else format(d, ".17g")
            fh.write(f"{dim},{format(b, '.17g')},{death}\n")


def export_distance_matrix_csv(dm: DistanceMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("," + ",".join(dm.labels) + "\n")
        for label, row in zip(dm.labels, dm.values):
            fh.write(label + "," + ",".join(format(v, ".17g") for v in row) + "\n")

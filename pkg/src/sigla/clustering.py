"""Agglomerative clustering of the vehicle similarity matrix.

Distances are 1 - similarity. Merging follows the Lance-Williams update
for four linkages (ward, average, complete, single); the flat cut K and
the linkage are chosen by silhouette score with Calinski-Harabasz as the
tie-breaker. The Calinski-Harabasz index needs coordinates, so it is
computed after a classical multidimensional-scaling embedding of the
distance matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .similarity import SimilarityMatrix

# preference order used for tie-breaking
LINKAGES = ("ward", "average", "complete", "single")


def _distances(sim: SimilarityMatrix) -> np.ndarray:
    d = 1.0 - sim.values
    d = np.clip(d, 0.0, None)
    np.fill_diagonal(d, 0.0)
    return d


@dataclass(frozen=True, eq=False)
class ClusterHierarchy:
    """Full merge tree of an agglomerative run.

    ``merges`` has one row per merge: (id_a, id_b, height, new_size),
    original vehicles being ids 0..n-1 and merge t creating id n+t.
    """

    merges: np.ndarray  # (n-1, 4)
    linkage: str
    n: int

    def __post_init__(self):
        m = np.ascontiguousarray(self.merges, dtype=np.float64)
        if m.shape != (self.n - 1, 4):
            raise ValueError("merge tree must have exactly n-1 merges")
        m.setflags(write=False)
        object.__setattr__(self, "merges", m)

    @property
    def heights(self) -> np.ndarray:
        return self.merges[:, 2]

    def assignments_at(self, k: int) -> np.ndarray:
        """Flat labels at k clusters, canonicalised by first occurrence."""
        if not 1 <= k <= self.n:
            raise ValueError(f"k must be in [1, {self.n}]")
        parent = np.arange(self.n + len(self.merges))
        for t in range(self.n - k):
            a, b = int(self.merges[t, 0]), int(self.merges[t, 1])
            parent[a] = parent[b] = self.n + t

        def find(v):
            while parent[v] != v:
                v = parent[v]
            return v

        roots = [find(v) for v in range(self.n)]
        remap = {}
        labels = np.empty(self.n, dtype=np.int64)
        for v, r in enumerate(roots):
            if r not in remap:
                remap[r] = len(remap)
            labels[v] = remap[r]
        return labels


def agglomerate(sim: SimilarityMatrix, linkage: str) -> ClusterHierarchy:
    """Build the full merge tree under the chosen linkage.

    Ward is applied directly to the dissimilarities via the
    Lance-Williams recurrence (no Euclidean embedding). Ties on merge
    distance break deterministically towards the smallest cluster ids.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    n = sim.n
    if n < 2:
        raise ValueError("need at least 2 vehicles to cluster")
    dist = _distances(sim)
    ids = list(range(n))
    sizes = [1] * n
    merges = np.empty((n - 1, 4))
    for t in range(n - 1):
        m = len(ids)
        best = None
        for i in range(m):
            for j in range(i + 1, m):
                key = (dist[i, j], ids[i], ids[j])
                if best is None or key < best:
                    best = key
                    bi, bj = i, j
        height = dist[bi, bj]
        si, sj = sizes[bi], sizes[bj]
        merges[t] = (ids[bi], ids[bj], height, si + sj)

        new_row = np.empty(m)
        for k in range(m):
            if k in (bi, bj):
                continue
            dik, djk = dist[bi, k], dist[bj, k]
            if linkage == "single":
                v = min(dik, djk)
            elif linkage == "complete":
                v = max(dik, djk)
            elif linkage == "average":
                v = (si * dik + sj * djk) / (si + sj)
            else:  # ward, Lance-Williams on squared dissimilarities
                sk = sizes[k]
                v = np.sqrt(
                    max(
                        (
                            (si + sk) * dik**2
                            + (sj + sk) * djk**2
                            - sk * height**2
                        )
                        / (si + sj + sk),
                        0.0,
                    )
                )
            new_row[k] = v

        keep = [k for k in range(m) if k not in (bi, bj)]
        dist = dist[np.ix_(keep, keep)]
        appended = new_row[keep]
        dist = np.pad(dist, ((0, 1), (0, 1)))
        dist[-1, :-1] = appended
        dist[:-1, -1] = appended
        ids = [ids[k] for k in keep] + [n + t]
        sizes = [sizes[k] for k in keep] + [si + sj]
    return ClusterHierarchy(merges, linkage, n)


def _mds_embedding(dist: np.ndarray) -> np.ndarray:
    """Classical MDS coordinates of a distance matrix.

    Double-centers the squared distances and keeps the positive
    eigendirections; the centering matrix is rank n-1, so at most n-1
    coordinates come out.
    """
    n = dist.shape[0]
    j = np.eye(n) - np.full((n, n), 1.0 / n)
    b = -0.5 * j @ (dist**2) @ j
    w, v = np.linalg.eigh(b)
    keep = w > max(w.max(), 0.0) * 1e-12
    if not keep.any():
        return np.zeros((n, 0))
    return v[:, keep] * np.sqrt(w[keep])


def score_partition(sim: SimilarityMatrix, labels) -> tuple[float, float]:
    """(silhouette, calinski_harabasz) of a flat partition.

    Silhouette uses distances 1 - similarity, with singleton clusters
    contributing 0 by convention. Calinski-Harabasz is computed on the
    MDS embedding; the degenerate all-singletons partition scores 0 and a
    zero within-cluster dispersion scores inf.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = sim.n
    if len(labels) != n:
        raise ValueError("labels length must match matrix size")
    clusters = np.unique(labels)
    k = len(clusters)
    if k < 2:
        raise ValueError("need at least 2 clusters to score")
    dist = _distances(sim)

    sil = np.zeros(n)
    for i in range(n):
        own = np.flatnonzero(labels == labels[i])
        own = own[own != i]
        if len(own) == 0:
            sil[i] = 0.0
            continue
        a = dist[i, own].mean()
        b = min(
            dist[i, np.flatnonzero(labels == c)].mean()
            for c in clusters
            if c != labels[i]
        )
        denom = max(a, b)
        sil[i] = 0.0 if denom == 0 else (b - a) / denom
    silhouette = float(sil.mean())

    if k == n:
        return silhouette, 0.0
    coords = _mds_embedding(dist)
    centroid = coords.mean(axis=0)
    within = 0.0
    between = 0.0
    for c in clusters:
        members = coords[labels == c]
        center = members.mean(axis=0)
        within += float(((members - center) ** 2).sum())
        between += len(members) * float(((center - centroid) ** 2).sum())
    if within <= 1e-300:
        ch = float("inf") if between > 1e-300 else 0.0
    else:
        ch = (between / (k - 1)) / (within / (n - k))
    return silhouette, float(ch)


@dataclass(frozen=True, eq=False)
class ClusteringSelection:
    """Chosen flat clustering plus the immediately coarser level."""

    hierarchy: ClusterHierarchy
    linkage: str
    n_clusters: int
    labels: np.ndarray
    coarser_n_clusters: int
    coarser_labels: np.ndarray
    silhouette: float
    calinski_harabasz: float
    scores: tuple  # (linkage, k, silhouette, ch) for every candidate


def select_clustering(sim: SimilarityMatrix, k_range) -> ClusteringSelection:
    """Scan all four linkages over k_range and pick the best partition.

    Maximises silhouette, tie-broken by higher Calinski-Harabasz, then by
    smaller K, then by linkage preference order. The coarser level sits
    one merge above the chosen cut (K-1 clusters, floor 2), so every
    chosen cluster is contained in exactly one coarser cluster.
    """
    k_list = sorted({int(k) for k in k_range})
    if not k_list:
        raise ValueError("k_range is empty")
    n = sim.n
    for k in k_list:
        if not 2 <= k <= n:
            raise ValueError(f"cluster count {k} outside [2, {n}]")
    candidates = []
    scores = []
    for order, linkage in enumerate(LINKAGES):
        hierarchy = agglomerate(sim, linkage)
        for k in k_list:
            labels = hierarchy.assignments_at(k)
            silhouette, ch = score_partition(sim, labels)
            scores.append((linkage, k, silhouette, ch))
            candidates.append(
                ((silhouette, ch, -k, -order), hierarchy, linkage, k, labels)
            )
    key, hierarchy, linkage, k, labels = max(candidates, key=lambda c: c[0])
    coarser_k = max(k - 1, 2)
    return ClusteringSelection(
        hierarchy=hierarchy,
        linkage=linkage,
        n_clusters=k,
        labels=labels,
        coarser_n_clusters=coarser_k,
        coarser_labels=hierarchy.assignments_at(coarser_k),
        silhouette=key[0],
        calinski_harabasz=key[1],
        scores=tuple(scores),
    )


def save_hierarchy_json(hierarchy: ClusterHierarchy, path) -> None:
    doc = {
        "linkage": hierarchy.linkage,
        "n": hierarchy.n,
        "merges": [
            {"a": int(a), "b": int(b), "height": h, "size": int(s)}
            for a, b, h, s in hierarchy.merges
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)

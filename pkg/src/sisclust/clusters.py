"""Node profiles and cluster structure for the reduced epidemic model.

Each node i carries the profile Z_i = (sqrt(n) W_i; sqrt(n) H_i; delta_i):
its infectiousness and susceptibility factor columns plus its healing
rate. Nodes grouped into a cluster are treated as statistically
indistinguishable; the cluster center is the mean profile, and the center
blocks (Yw, Yh, Ydelta) drive every downstream prediction.
"""

import json
from dataclasses import dataclass

import numpy as np

from ._rng import generator
from .errors import ValidationError


@dataclass
class NodeProfiles:
    """Profile matrix Z, one column per node; rows are the w-block (k),
    the h-block (k), then the curing rate."""

    k: int
    Z: np.ndarray

    def __post_init__(self):
        self.Z = np.ascontiguousarray(np.asarray(self.Z, dtype=np.float64))
        if self.Z.ndim != 2 or self.Z.shape[0] != 2 * self.k + 1:
            raise ValidationError(
                f"profiles must be (2k+1) x n with k={self.k}, got {self.Z.shape}")
        if np.any(self.Z[:2 * self.k] < 0):
            raise ValidationError("w/h profile blocks must be non-negative")
        if np.any(self.Z[2 * self.k] <= 0):
            raise ValidationError("curing profiles must be strictly positive")

    @property
    def n(self):
        return self.Z.shape[1]

    def w_block(self):
        return self.Z[: self.k]

    def h_block(self):
        return self.Z[self.k: 2 * self.k]

    def curing(self):
        return self.Z[2 * self.k]


def node_profiles(pair, net):
    """Assemble Z from a factor pair and the network's curing rates."""
    if pair.n != net.n:
        raise ValidationError(
            f"factor pair describes {pair.n} nodes but network has {net.n}")
    root = np.sqrt(net.n)
    Z = np.vstack([root * pair.W, root * pair.H, net.curing[None, :]])
    return NodeProfiles(k=pair.k, Z=Z)


@dataclass
class Clustering:
    """Partition of the nodes plus exact cluster-center blocks."""

    k: int
    n: int
    r: int
    assignment: np.ndarray
    sizes: np.ndarray
    Yw: np.ndarray
    Yh: np.ndarray
    Ydelta: np.ndarray

    def __post_init__(self):
        self.assignment = np.ascontiguousarray(np.asarray(self.assignment, dtype=np.int64))
        self.sizes = np.ascontiguousarray(np.asarray(self.sizes, dtype=np.int64))
        self.Yw = np.ascontiguousarray(np.asarray(self.Yw, dtype=np.float64))
        self.Yh = np.ascontiguousarray(np.asarray(self.Yh, dtype=np.float64))
        self.Ydelta = np.ascontiguousarray(np.asarray(self.Ydelta, dtype=np.float64))
        if self.assignment.shape != (self.n,):
            raise ValidationError("assignment must map every node")
        if self.sizes.shape != (self.r,) or self.Ydelta.shape != (self.r,):
            raise ValidationError("sizes/Ydelta must have one entry per cluster")
        if self.Yw.shape != (self.k, self.r) or self.Yh.shape != (self.k, self.r):
            raise ValidationError(f"center blocks must be k x r = {self.k} x {self.r}")
        if self.assignment.min(initial=0) < 0 or (self.n and self.assignment.max() >= self.r):
            raise ValidationError("assignment references an unknown cluster")
        counts = np.bincount(self.assignment, minlength=self.r)
        if not np.array_equal(counts, self.sizes):
            raise ValidationError("sizes disagree with the assignment")
        if np.any(self.sizes < 1):
            raise ValidationError("every cluster must contain at least one node")

    def centers(self):
        """Full (2k+1) x r center matrix (w-block; h-block; curing row)."""
        return np.vstack([self.Yw, self.Yh, self.Ydelta[None, :]])

    def cross_rates(self):
        """r x r matrix C with C[j, l] = Y_h,j . Y_w,l: the clustered
        infection pressure of cluster l on cluster j (before the 1/n)."""
        return self.Yh.T @ self.Yw

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("node,cluster\n")
            for i, c in enumerate(self.assignment):
                fh.write(f"{i},{int(c)}\n")

    def to_json(self, path=None):
        doc = {
            "k": int(self.k),
            "n": int(self.n),
            "r": int(self.r),
            "sizes": [int(s) for s in self.sizes],
            "Yw": [[float(x) for x in row] for row in self.Yw],
            "Yh": [[float(x) for x in row] for row in self.Yh],
            "Ydelta": [float(x) for x in self.Ydelta],
        }
        if path is not None:
            with open(path, "w") as fh:
                json.dump(doc, fh, indent=1)
                fh.write("\n")
        return doc

    @classmethod
    def from_files(cls, csv_path, json_path):
        with open(json_path) as fh:
            doc = json.load(fh)
        assignment = np.full(doc["n"], -1, dtype=np.int64)
        with open(csv_path) as fh:
            header = fh.readline()
            if header.strip() != "node,cluster":
                raise ValidationError(f"unexpected clustering header in {csv_path}")
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                node_s, cl_s = line.split(",")
                assignment[int(node_s)] = int(cl_s)
        if np.any(assignment < 0):
            raise ValidationError("clustering CSV does not cover every node")
        return cls(
            k=doc["k"], n=doc["n"], r=doc["r"], assignment=assignment,
            sizes=np.asarray(doc["sizes"], dtype=np.int64),
            Yw=np.asarray(doc["Yw"], dtype=np.float64),
            Yh=np.asarray(doc["Yh"], dtype=np.float64),
            Ydelta=np.asarray(doc["Ydelta"], dtype=np.float64),
        )


def clustering_from_assignment(zp, assignment):
    """Exact centers for a given partition; cluster ids must be 0..r-1
    with no gaps."""
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.shape != (zp.n,):
        raise ValidationError("assignment must map every node")
    if assignment.size == 0:
        raise ValidationError("empty assignment")
    r = int(assignment.max()) + 1
    if assignment.min() < 0:
        raise ValidationError("cluster ids must be non-negative")
    sizes = np.bincount(assignment, minlength=r)
    if np.any(sizes == 0):
        raise ValidationError("cluster ids must be contiguous (empty id found)")
    # per-cluster column means of Z via index accumulation
    k = zp.k
    sums = np.zeros((2 * k + 1, r))
    np.add.at(sums.T, assignment, zp.Z.T)
    centers = sums / sizes[None, :]
    return Clustering(
        k=k, n=zp.n, r=r, assignment=assignment, sizes=sizes,
        Yw=centers[:k], Yh=centers[k:2 * k], Ydelta=centers[2 * k],
    )


def singleton_clustering(zp):
    """Every node its own cluster: r = n and centers equal profiles."""
    return clustering_from_assignment(zp, np.arange(zp.n))


def _kmeans_once(points, r_cells, rng, max_iter=300):
    # deterministic Lloyd iteration; ties break to the lowest center index
    m = points.shape[0]
    centers = np.empty((r_cells, points.shape[1]))
    # k-means++ seeding
    first = int(rng.integers(m))
    centers[0] = points[first]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, r_cells):
        total = d2.sum()
        if total <= 0:
            centers[c:] = points[int(rng.integers(m))]
            break
        probs = d2 / total
        pick = int(rng.choice(m, p=probs))
        centers[c] = points[pick]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))

    labels = np.zeros(m, dtype=np.int64)
    for _ in range(max_iter):
        dist = (
            np.sum(points ** 2, axis=1)[:, None]
            - 2.0 * points @ centers.T
            + np.sum(centers ** 2, axis=1)[None, :]
        )
        new_labels = np.argmin(dist, axis=1)
        counts = np.bincount(new_labels, minlength=r_cells)
        while np.any(counts == 0):
            empty = int(np.argmin(counts))
            largest = int(np.argmax(counts))
            members = np.flatnonzero(new_labels == largest)
            far = members[int(np.argmax(dist[members, largest]))]
            new_labels[far] = empty
            counts = np.bincount(new_labels, minlength=r_cells)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        for c in range(r_cells):
            centers[c] = points[labels == c].mean(axis=0)
    dist = (
        np.sum(points ** 2, axis=1)[:, None]
        - 2.0 * points @ centers.T
        + np.sum(centers ** 2, axis=1)[None, :]
    )
    sse = float(np.sum(dist[np.arange(m), labels]))
    return labels, sse


def cluster_nodes(zp, r, seed=0, restarts=4, outlier_singletons=None):
    """Partition nodes into r clusters on their profiles.

    The `outlier_singletons` nodes with the largest w-block norm are
    isolated into their own clusters first (hub isolation); the rest are
    k-means clustered into the remaining cells, best of `restarts` seeded
    runs. Deterministic for fixed (seed, restarts).
    """
    n = zp.n
    if not 1 <= r <= n:
        raise ValidationError(f"r must lie in [1, {n}], got {r}")
    if outlier_singletons is None:
        outlier_singletons = min(10, r // 10)
    outlier_singletons = int(outlier_singletons)
    if outlier_singletons < 0:
        raise ValidationError("outlier_singletons must be non-negative")
    if outlier_singletons >= r:
        raise ValidationError(
            f"outlier_singletons={outlier_singletons} must be smaller than r={r}")
    if restarts < 1:
        raise ValidationError("restarts must be at least 1")

    norms = np.linalg.norm(zp.w_block(), axis=0)
    order = np.argsort(-norms, kind="stable")
    outliers = order[:outlier_singletons]
    rest = np.setdiff1d(np.arange(n), outliers)
    r_cells = r - outlier_singletons
    if rest.size < r_cells:
        raise ValidationError(
            f"cannot form {r_cells} k-means cells from {rest.size} non-outlier nodes")

    assignment = np.empty(n, dtype=np.int64)
    if r_cells > 0:
        points = zp.Z.T[rest]
        best = None
        for t in range(restarts):
            rng = generator(seed, f"kmeans/restart{t}")
            labels, sse = _kmeans_once(points, r_cells, rng)
            if best is None or sse < best[1]:
                best = (labels, sse)
        assignment[rest] = best[0]
    for pos, node in enumerate(outliers):
        assignment[node] = r_cells + pos
    return clustering_from_assignment(zp, assignment)

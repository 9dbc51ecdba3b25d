"""Per-user contextual-factor importance profiles and their clustering.

Each user is summarized by the normalized importance of every contextual
factor in the schema (a point on the probability simplex), computed
context-free from the user and factor embeddings. Profiles are clustered
with seeded k-means and projected to 2D with a deterministic power-iteration
PCA for external plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import EmbeddingSpace, normalize_scores


@dataclass
class ImportanceMatrix:
    user_ids: list[str]
    factors: list[str]
    values: np.ndarray  # (n_users, n_factors), rows on the simplex


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int


def importance_matrix(space: EmbeddingSpace, factor_schema) -> ImportanceMatrix:
    """One simplex row per user: softmax of the user/factor inner products.

    Normalization runs over every factor in the schema, independent of any
    particular situation.
    """
    factors = sorted(factor_schema)
    if not factors:
        raise ValueError("empty factor schema")
    user_ids = sorted(space.user_table)
    values = np.empty((len(user_ids), len(factors)))
    for row, user in enumerate(user_ids):
        u = space.user_table[user]
        scores = [(cf, float(np.dot(u, space.vector("factor", cf)))) for cf in factors]
        weights = normalize_scores(scores, space.leaky_slope)
        values[row] = [weights[cf] for cf in factors]
    return ImportanceMatrix(user_ids=user_ids, factors=factors, values=values)


def _plus_plus_init(matrix: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = matrix.shape[0]
    centroids = np.empty((k, matrix.shape[1]))
    centroids[0] = matrix[int(rng.integers(n))]
    closest = np.sum((matrix - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:
            centroids[j] = matrix[int(rng.integers(n))]
            continue
        probs = closest / total
        pick = int(rng.choice(n, p=probs))
        centroids[j] = matrix[pick]
        closest = np.minimum(closest, np.sum((matrix - centroids[j]) ** 2, axis=1))
    return centroids


def kmeans_cluster(
    matrix: np.ndarray, k: int, seed: int = 0, max_iters: int = 100
) -> KMeansResult:
    """Lloyd iterations from a seeded k-means++ start.

    Converges when assignments stop changing; inertia is checked to be
    non-increasing across iterations. Empty clusters are re-seeded at the
    point currently farthest from its centroid.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ValueError("matrix must be a non-empty 2D array")
    n = matrix.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds number of rows {n}")

    rng = np.random.default_rng(seed)
    centroids = _plus_plus_init(matrix, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    prev_inertia = np.inf
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        dists = np.sum((matrix[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(dists, axis=1)
        inertia = float(np.sum(dists[np.arange(n), new_assign]))
        if inertia > prev_inertia + 1e-9:
            raise AssertionError(
                f"k-means inertia increased: {prev_inertia} -> {inertia}"
            )
        prev_inertia = inertia
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        point_err = dists[np.arange(n), assignments]
        for j in range(k):
            members = assignments == j
            if np.any(members):
                centroids[j] = matrix[members].mean(axis=0)
            else:
                far = int(np.argmax(point_err))
                centroids[j] = matrix[far]
                point_err[far] = 0.0

    dists = np.sum((matrix[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    inertia = float(np.sum(dists[np.arange(n), assignments]))
    return KMeansResult(
        assignments=assignments, centroids=centroids, inertia=inertia, n_iter=n_iter
    )


def inertia_curve(matrix: np.ndarray, k_max: int, seed: int = 0) -> list[tuple[int, float]]:
    """Inertia for k = 1..k_max, for elbow inspection."""
    rows = np.asarray(matrix).shape[0]
    return [
        (k, kmeans_cluster(matrix, k, seed=seed).inertia)
        for k in range(1, min(k_max, rows) + 1)
    ]


def _power_iteration(cov: np.ndarray, max_iters: int = 1000, tol: float = 1e-13):
    dim = cov.shape[0]
    # fixed start vectors, tried in order; a start lying in the null space
    # (e.g. the all-ones direction for simplex rows) collapses and the next
    # candidate is used, keeping the method deterministic
    ramp = np.arange(1, dim + 1, dtype=np.float64)
    starts = [ramp / np.linalg.norm(ramp)] + [np.eye(dim)[j] for j in range(dim)]
    for start in starts:
        vec = start
        collapsed = False
        for _ in range(max_iters):
            nxt = cov @ vec
            norm = float(np.linalg.norm(nxt))
            if norm <= 1e-300:
                collapsed = True
                break
            nxt /= norm
            # eigenvectors are sign-ambiguous; compare up to sign
            if min(np.linalg.norm(nxt - vec), np.linalg.norm(nxt + vec)) < tol:
                vec = nxt
                break
            vec = nxt
        if not collapsed:
            return vec, float(vec @ cov @ vec)
    return None, 0.0


def _fix_sign(vec: np.ndarray) -> np.ndarray:
    lead = int(np.argmax(np.abs(vec)))
    return -vec if vec[lead] < 0 else vec


def project_2d(matrix: np.ndarray) -> np.ndarray:
    """Mean-centered projection onto the top two principal directions.

    Uses deflated power iteration with a fixed starting vector; the loading
    with the largest magnitude in each direction is made positive, so the
    output is deterministic.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2 or matrix.shape[1] < 2:
        raise ValueError("need at least 2 rows and 2 columns")
    centered = matrix - matrix.mean(axis=0)
    spread = float(np.abs(centered).max(initial=0.0))
    if spread <= 1e-12 * max(1.0, float(np.abs(matrix).max(initial=0.0))):
        raise ValueError("degenerate rank-0 matrix (all rows identical)")
    cov = centered.T @ centered / (matrix.shape[0] - 1)

    v1, l1 = _power_iteration(cov)
    if v1 is None:
        raise ValueError("degenerate rank-0 matrix")
    v1 = _fix_sign(v1)
    deflated = cov - l1 * np.outer(v1, v1)
    v2, _ = _power_iteration(deflated)
    if v2 is None:
        # rank-1 data: any unit direction orthogonal to v1 carries 0 variance
        basis = np.eye(matrix.shape[1])[int(np.argmin(np.abs(v1)))]
        v2 = basis - (basis @ v1) * v1
        v2 /= np.linalg.norm(v2)
    else:
        v2 = v2 - (v2 @ v1) * v1
        norm = float(np.linalg.norm(v2))
        if norm <= 1e-12:
            basis = np.eye(matrix.shape[1])[int(np.argmin(np.abs(v1)))]
            v2 = basis - (basis @ v1) * v1
            norm = float(np.linalg.norm(v2))
        v2 /= norm
    v2 = _fix_sign(v2)
    return centered @ np.stack([v1, v2], axis=1)


def cluster_profiles(matrix: ImportanceMatrix, result: KMeansResult) -> np.ndarray:
    """Mean importance row per cluster (rows remain on the simplex)."""
    k = result.centroids.shape[0]
    profiles = np.empty((k, matrix.values.shape[1]))
    for j in range(k):
        members = result.assignments == j
        if np.any(members):
            profiles[j] = matrix.values[members].mean(axis=0)
        else:
            profiles[j] = result.centroids[j]
    return profiles


def write_assignments_csv(path, matrix: ImportanceMatrix, result: KMeansResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "cluster"])
        for user, cluster in zip(matrix.user_ids, result.assignments):
            writer.writerow([user, int(cluster)])


def write_centroids_csv(path, matrix: ImportanceMatrix, profiles: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", *matrix.factors])
        for j, row in enumerate(profiles):
            writer.writerow([j, *[repr(float(x)) for x in row]])


def write_coords_csv(path, matrix: ImportanceMatrix, coords: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "x", "y"])
        for user, (x, y) in zip(matrix.user_ids, coords):
            writer.writerow([user, repr(float(x)), repr(float(y))])

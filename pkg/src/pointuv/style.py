"""Style labels for point-colour sets: standardise, PCA, then k-means."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, StateError


def fit_pca(data: np.ndarray, n: int):
    """Top-``n`` principal axes of already-normalised ``data`` (N, D).

    Returns ``(axes, explained_variance)`` with axes as rows, ordered by
    decreasing variance.  Each axis is signed so its largest-magnitude entry
    is positive.
    """
    data = np.asarray(data, dtype=np.float64)
    N, D = data.shape
    if not 1 <= n <= min(N, D):
        raise ContractError(f"need n <= min(samples, features); got n={n}, data {data.shape}")
    centred = data - data.mean(axis=0)
    # SVD of the data matrix gives the covariance eigenvectors without forming D x D
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    axes = vt[:n].copy()
    var = s[:n] ** 2 / max(N - 1, 1)
    for row in axes:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return axes, var


def kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centres = [X[rng.integers(n)]]
    d2 = np.sum((X - centres[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centres.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centres)


def sq_dists(X, C):
    return np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)


def assign(X, C):
    """Nearest centroid; ``argmin`` resolves ties to the lowest index."""
    return np.argmin(sq_dists(X, C), axis=1)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: list = field(default_factory=list)   # after each assignment step
    iterations: int = 0


def fit_kmeans(X: np.ndarray, k: int, seed=0, max_iters: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    An emptied cluster is re-seeded at the point farthest from its assigned
    centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    if not 1 <= k <= len(X):
        raise ContractError(f"need 1 <= k <= number of points; got k={k}, N={len(X)}")
    rng = np.random.default_rng(seed)
    C = kmeans_pp_init(X, k, rng)
    labels = assign(X, C)
    history = [float(np.sum((X - C[labels]) ** 2))]
    it = 0
    for it in range(1, max_iters + 1):
        newC = C.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                newC[j] = X[members].mean(axis=0)
        empty = [j for j in range(k) if not (labels == j).any()]
        for j in empty:
            far = int(np.argmax(np.sum((X - newC[labels]) ** 2, axis=1)))
            newC[j] = X[far]
            labels = labels.copy()
            labels[far] = j
        new_labels = assign(X, newC)
        history.append(float(np.sum((X - newC[new_labels]) ** 2)))
        converged = np.array_equal(new_labels, labels) and np.allclose(newC, C, rtol=0, atol=0)
        C, labels = newC, new_labels
        if converged:
            break
    return KMeansResult(C, labels, history, it)


@dataclass
class StyleModel:
    n_components: int = 5
    k_clusters: int = 40
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    axes: np.ndarray | None = None
    explained_var: np.ndarray | None = None
    centroids: np.ndarray | None = None
    train_labels: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.centroids is not None

    def normalise(self, flat: np.ndarray) -> np.ndarray:
        return (np.asarray(flat, dtype=np.float64) - self.mean) / self.scale

    def project(self, flat: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise StateError("style model is not fitted")
        return self.normalise(flat) @ self.axes.T

    def fit(self, colors: np.ndarray, seed=0, max_iters: int = 100) -> "StyleModel":
        """Fit on a stack of colour sets, shape (N, K, 3) or already flattened (N, D)."""
        flat = np.asarray(colors, dtype=np.float64).reshape(len(colors), -1)
        self.mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        self.scale = np.where(std > 0, std, 1.0)
        n = min(self.n_components, len(flat), flat.shape[1])
        self.axes, self.explained_var = fit_pca(self.normalise(flat), n)
        proj = self.normalise(flat) @ self.axes.T
        km = fit_kmeans(proj, min(self.k_clusters, len(flat)), seed, max_iters)
        self.centroids = km.centroids
        self.train_labels = km.labels
        self.k_clusters = len(km.centroids)
        return self

    def assign(self, colors: np.ndarray) -> int | np.ndarray:
        """Style label of one colour set, or labels of a batch (leading axis)."""
        if not self.fitted:
            raise StateError("style model is not fitted")
        arr = np.asarray(colors, dtype=np.float64)
        single = arr.size == self.mean.size
        flat = arr.reshape(1 if single else len(arr), -1)
        labels = assign(self.project(flat), self.centroids)
        return int(labels[0]) if single else labels

    def save(self, path, meta: dict | None = None) -> None:
        from .io import write_puvd
        if not self.fitted:
            raise StateError("cannot save an unfitted style model")
        write_puvd(path, {"mean": self.mean, "scale": self.scale, "axes": self.axes,
                          "explained_var": self.explained_var, "centroids": self.centroids,
                          "train_labels": self.train_labels},
                   {"kind": "style", "n_components": int(len(self.axes)),
                    "k_clusters": int(self.k_clusters), **(meta or {})})

    @classmethod
    def load(cls, path) -> "StyleModel":
        from .io import read_puvd
        planes, meta, _ = read_puvd(path)
        f64 = lambda a: np.asarray(a, dtype=np.float64)  # noqa: E731
        return cls(int(meta["n_components"]), int(meta["k_clusters"]), f64(planes["mean"]),
                   f64(planes["scale"]), f64(planes["axes"]), f64(planes["explained_var"]),
                   f64(planes["centroids"]), planes["train_labels"].astype(np.int64))


def desk_scale_k(n_items: int, full_k: int = 40) -> int:
    """``min(40, N // 10)``, at least one cluster."""
    return max(1, min(full_k, n_items // 10))

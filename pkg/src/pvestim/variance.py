"""Process-noise model for the EKF: k-means clusters of irradiance variation.

Historical differentiated irradiance is described on a moving window by
its mean and its variability (RMS of successive differences). Windows are
clustered with k-means; each cluster's variance of the one-step-ahead
variation becomes the process-noise variance used whenever the current
window falls closest to that cluster's centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClusteringError, InsufficientHistoryError, ParseError


@dataclass(frozen=True)
class FeatureVector:
    m: float
    v: float

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("variability must be non-negative")

    def as_array(self):
        return np.array([self.m, self.v])


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, 2): columns m, v
    variances: np.ndarray  # (k,)
    window_length: int

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=float).reshape(self.k, 2)
        var = np.asarray(self.variances, dtype=float).reshape(self.k)
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "variances", var)
        if np.any(var < 0) or not np.any(var > 0):
            raise ClusteringError("cluster variances must be >= 0 with one > 0")

    def feature(self, index):
        return FeatureVector(*self.centroids[index])

    def to_text(self):
        lines = ["# pvestim cluster model", f"k = {self.k}",
                 f"window_length = {self.window_length}"]
        for j in range(self.k):
            m, v = self.centroids[j]
            lines.append(f"centroid_{j} = {float(m)!r} {float(v)!r}")
        for j in range(self.k):
            lines.append(f"variance_{j} = {float(self.variances[j])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ParseError(f"expected 'key = value', got {raw!r}", lineno)
            values[key.strip()] = (val.strip(), lineno)
        try:
            k = int(values["k"][0])
            n = int(values["window_length"][0])
            cents = [[float(x) for x in values[f"centroid_{j}"][0].split()]
                     for j in range(k)]
            var = [float(values[f"variance_{j}"][0]) for j in range(k)]
        except KeyError as exc:
            raise ParseError(f"missing key {exc}") from None
        except ValueError as exc:
            raise ParseError(str(exc)) from None
        return cls(k, np.array(cents), np.array(var), n)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def compute_features(delta_s, n=10):
    """Moving-window (mean, variability) features of a ΔS sequence.

    Feature ``i`` uses the window ``delta_s[i-n+1 : i+1]``; its
    variability also reaches one step further back for the first
    difference. The first feature is at index ``n``, so the output has
    ``len(delta_s) - n`` entries.
    """
    ds = np.asarray(delta_s, dtype=float)
    if n < 2:
        raise ValueError("window length must be >= 2")
    if ds.size <= n:
        raise InsufficientHistoryError(
            f"need more than {n} differences, got {ds.size}")
    kernel = np.ones(n) / n
    means = np.convolve(ds, kernel, mode="valid")[1:]
    sq = np.diff(ds) ** 2
    var = np.sqrt(np.convolve(sq, kernel, mode="valid"))
    return [FeatureVector(float(m), float(v)) for m, v in zip(means, var)]


def feature_array(features):
    return np.array([[f.m, f.v] for f in features], dtype=float).reshape(-1, 2)


def training_pairs(irradiance, n=10):
    """Features and the ΔS value that follows each feature window."""
    ds = np.diff(np.asarray(irradiance, dtype=float))
    feats = compute_features(ds[:-1], n)
    return feats, ds[n + 1:]


def _kmeans_pp(x, k, rng):
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(x.shape[0])]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(x.shape[0], p=d2 / total)
        else:
            idx = rng.integers(x.shape[0])
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _assign(x, centers):
    d = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d, axis=1), d


def kmeans(x, k, seed=0, max_iter=300, tol=1e-6, restarts=10):
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the inertia improves by less than ``tol`` relative. A run
    that ends with an empty cluster or coincident centroids is restarted
    from a fresh seeding, at most ``restarts`` times.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] < k:
        raise ClusteringError(f"{x.shape[0]} points cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    for _ in range(restarts + 1):
        centers = _kmeans_pp(x, k, rng)
        inertia = np.inf
        for _ in range(max_iter):
            labels, d = _assign(x, centers)
            new_inertia = d[np.arange(x.shape[0]), labels].sum()
            counts = np.bincount(labels, minlength=k)
            if np.any(counts == 0):
                break
            centers = np.array([x[labels == j].mean(axis=0) for j in range(k)])
            if inertia - new_inertia <= tol * max(new_inertia, 1e-300):
                break
            inertia = new_inertia
        labels, _ = _assign(x, centers)
        counts = np.bincount(labels, minlength=k)
        distinct = len({tuple(c) for c in centers}) == k
        if np.all(counts > 0) and distinct:
            return centers, labels
    raise ClusteringError(f"k-means left an empty cluster after {restarts} restarts")


def fit_clusters(features, delta_s, k=4, seed=0, window_length=10, **kw):
    """Cluster feature vectors and attach each cluster's ΔS variance.

    ``delta_s[j]`` is the variation paired with ``features[j]`` (normally
    the one-step-ahead change following that window).
    """
    x = feature_array(features)
    ds = np.asarray(delta_s, dtype=float)
    if ds.shape[0] != x.shape[0]:
        raise ValueError("features and delta_s must pair one-to-one")
    centers, labels = kmeans(x, k, seed=seed, **kw)
    var = np.array([np.var(ds[labels == j]) for j in range(k)])
    return ClusterModel(k, centers, var, window_length)


def select_q(model, current):
    """Variance of the nearest cluster (squared Euclidean; lowest index wins ties)."""
    p = current.as_array() if isinstance(current, FeatureVector) else np.asarray(current)
    d = np.sum((model.centroids - p) ** 2, axis=1)
    return float(model.variances[int(np.argmin(d))])


def fit_from_irradiance(irradiance, k=4, n=10, seed=0):
    feats, ds = training_pairs(irradiance, n)
    return fit_clusters(feats, ds, k, seed, window_length=n)


def k_sweep(features, delta_s, ks=range(2, 11), seed=0):
    """Mean within-cluster ΔS variance for each candidate k."""
    out = {}
    for k in ks:
        model = fit_clusters(features, delta_s, k, seed)
        out[k] = float(np.mean(model.variances))
    return out

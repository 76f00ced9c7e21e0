"""Instance-aware clustering from location vectors.

Every foreground pixel carries a 4-vector of normalized box corners; pixels
of one person share the vector. Given a semantic map, a location map and an
instance count, pixels are grouped into persons by normalized spectral
clustering (symmetric affinity normalization, top eigenvectors, row
normalization, k-means).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ValidationError
from .scene import (
    ImageSize,
    InstanceMask,
    SceneAnnotation,
    ScoredScene,
    SemanticMap,
    bounding_box,
    owner_map,
)

logger = logging.getLogger(__name__)

ENCODINGS = ("instance", "image")
SIGMA_SAMPLE = 1024
DEFAULT_MAX_INSTANCES = 26


@dataclass(frozen=True, eq=False)
class LocationMap:
    """Per-pixel (x_l/w, y_t/h, x_r/w, y_b/h) vectors, float32, shape (H, W, 4)."""

    vectors: np.ndarray

    def __post_init__(self):
        arr = np.array(self.vectors, dtype=np.float32, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 4:
            raise ValidationError(f"location map must be H x W x 4, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("location map holds non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "vectors", arr)

    @property
    def size(self) -> ImageSize:
        return ImageSize.from_shape(self.vectors.shape)

    def __eq__(self, other):
        if not isinstance(other, LocationMap):
            return NotImplemented
        return self.vectors.shape == other.vectors.shape and self.vectors.tobytes() == other.vectors.tobytes()


@dataclass(frozen=True, eq=False)
class InstanceLabeling:
    """Per-pixel instance ids: 0 for no instance, 1..K for clusters."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.labels, dtype=np.int32, copy=True)
        if arr.ndim != 2:
            raise ValidationError("labeling must be 2-D")
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def size(self) -> ImageSize:
        return ImageSize.from_shape(self.labels.shape)

    @property
    def n_instances(self) -> int:
        return int(self.labels.max(initial=0))

    def __eq__(self, other):
        if not isinstance(other, InstanceLabeling):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class ClusterConfig:
    encoding_mode: str = "instance"
    sample_cap: int = 2048
    sigma: str | float = "median"
    kmeans_seed: int = 0
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6

    def __post_init__(self):
        if self.encoding_mode not in ENCODINGS:
            raise ValidationError(f"encoding_mode must be one of {ENCODINGS}")
        if self.sample_cap < 1:
            raise ValidationError("sample_cap must be >= 1")
        if self.kmeans_max_iter < 1:
            raise ValidationError("kmeans_max_iter must be >= 1")
        if not self.kmeans_tol > 0:
            raise ValidationError("kmeans_tol must be > 0")
        if self.sigma != "median" and not (isinstance(self.sigma, (int, float)) and self.sigma > 0):
            raise ValidationError("sigma must be 'median' or a positive number")


# -- encoding ----------------------------------------------------------------

def location_vector(box, mode: str = "instance", size: ImageSize | None = None) -> np.ndarray:
    if mode == "instance":
        w, h = box.width, box.height
    elif mode == "image":
        w, h = size.width, size.height
    else:
        raise ValidationError(f"unknown encoding mode {mode!r}")
    return np.array([box.x_left / w, box.y_top / h, box.x_right / w, box.y_bottom / h])


def encode_locations(scene: SceneAnnotation, mode: str = "instance") -> LocationMap:
    """Ground-truth location map of a scene; background pixels get zeros.

    Where instances overlap the later one owns the pixel.
    """
    owner = owner_map(scene)
    out = np.zeros(scene.size.shape + (4,), dtype=np.float32)
    for k, inst in enumerate(scene.instances):
        owned = owner == k
        if not owned.any():
            continue
        out[owned] = location_vector(bounding_box(inst), mode, scene.size)
    return LocationMap(out)


def round_instance_count(raw: float, max_n: int = DEFAULT_MAX_INSTANCES) -> int:
    """Round half away from zero, then clamp to [1, max_n]."""
    raw = float(raw)
    if not math.isfinite(raw):
        raise ValidationError(f"instance count must be finite, got {raw}")
    n = int(math.copysign(math.floor(abs(raw) + 0.5), raw))
    return min(max(n, 1), max_n)


# -- spectral clustering -----------------------------------------------------

def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)  # first index on ties
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def median_sigma(vectors: np.ndarray, rng: np.random.Generator) -> float:
    """Median pairwise distance among distinct vectors (0.0 if all coincide)."""
    distinct = np.unique(vectors, axis=0)
    if len(distinct) < 2:
        return 0.0
    if len(distinct) > SIGMA_SAMPLE:
        pick = np.sort(rng.choice(len(distinct), SIGMA_SAMPLE, replace=False))
        distinct = distinct[pick]
    return float(np.median(pdist(distinct)))


def spectral_embedding(vectors: np.ndarray, n_components: int, sigma: float) -> np.ndarray:
    """Row-normalized top eigenvectors of D^-1/2 A D^-1/2 with Gaussian affinity."""
    sq = cdist(vectors, vectors, "sqeuclidean")
    affinity = np.exp(-sq / (2.0 * sigma * sigma))
    np.fill_diagonal(affinity, 0.0)
    degree = affinity.sum(axis=1)
    inv_sqrt = np.zeros_like(degree)
    nz = degree > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(degree[nz])
    lap = affinity * inv_sqrt[:, None] * inv_sqrt[None, :]
    m = len(vectors)
    _, vecs = eigh(lap, subset_by_index=[m - n_components, m - 1])
    vecs = _fix_signs(vecs[:, ::-1])
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    return np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)


def kmeans(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100, tol: float = 1e-6):
    """Lloyd's k-means with k-means++ seeding; returns (labels, centers)."""
    m = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(m)]
    closest = np.sum((X - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            pick = rng.choice(m, p=closest / total)
        else:
            pick = rng.integers(m)
        centers[c] = X[pick]
        closest = np.minimum(closest, np.sum((X - centers[c]) ** 2, axis=1))

    labels = np.zeros(m, dtype=np.int64)
    for _ in range(max_iter):
        d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
        labels = np.argmin(d2, axis=1)
        new = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(axis=0)
            else:
                # reseed from the point farthest from its own center
                far = int(np.argmax(d2[np.arange(m), labels]))
                new[c] = X[far]
                labels[far] = c
        shift = float(np.max(np.linalg.norm(new - centers, axis=1)))
        centers = new
        if shift <= tol:
            break
    d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
    return np.argmin(d2, axis=1), centers


def _nearest_labels(queries: np.ndarray, ref: np.ndarray, ref_labels: np.ndarray, k: int,
                    chunk: int = 4096) -> np.ndarray:
    """Cluster of the nearest reference vector; ties go to the lowest cluster."""
    order = np.argsort(ref_labels, kind="stable")
    ref, ref_labels = ref[order], ref_labels[order]
    starts = np.searchsorted(ref_labels, np.arange(k))
    present = np.unique(ref_labels)
    out = np.empty(len(queries), dtype=np.int64)
    for lo in range(0, len(queries), chunk):
        q = queries[lo:lo + chunk]
        d2 = cdist(q, ref, "sqeuclidean")
        per_cluster = np.minimum.reduceat(d2, starts[present], axis=1)
        out[lo:lo + chunk] = present[np.argmin(per_cluster, axis=1)]
    return out


def _renumber(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel 0..K-1 by descending size, ties by lowest first index."""
    ids, first, counts = np.unique(labels, return_index=True, return_counts=True)
    order = sorted(range(len(ids)), key=lambda i: (-counts[i], first[i]))
    mapping = np.empty(int(ids.max()) + 1, dtype=np.int64)
    mapping[ids[order]] = np.arange(len(ids))
    return mapping[labels], len(ids)


class SpectralInstanceClusterer(ClusterMixin, BaseEstimator):
    """Normalized spectral clustering of location vectors.

    Rows of ``X`` are clustered into at most ``n_clusters`` groups. At most
    ``sample_cap`` rows (seeded uniform draw) enter the eigenproblem; the
    rest join the cluster of their nearest sampled row. ``labels_`` are
    numbered 0..K-1 by descending cluster size.

    Parameters
    ----------
    n_clusters : int
    sample_cap : int
    sigma : "median" or float
        Affinity bandwidth. "median" uses the median distance between
        distinct sampled vectors.
    random_state : int
    max_iter, tol : k-means stopping rule.
    """

    def __init__(self, n_clusters=2, sample_cap=2048, sigma="median", random_state=0,
                 max_iter=100, tol=1e-6):
        self.n_clusters = n_clusters
        self.sample_cap = sample_cap
        self.sigma = sigma
        self.random_state = random_state
        self.max_iter = max_iter
        self.tol = tol

    def _check_params(self):
        if int(self.n_clusters) < 1:
            raise ValidationError("n_clusters must be >= 1")
        ClusterConfig(sample_cap=self.sample_cap, sigma=self.sigma,
                      kmeans_max_iter=self.max_iter, kmeans_tol=self.tol)

    def fit(self, X, y=None):
        self._check_params()
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        m = len(X)
        rng = np.random.default_rng(self.random_state)
        if m > self.sample_cap:
            sample = np.sort(rng.choice(m, self.sample_cap, replace=False))
        else:
            sample = np.arange(m)
        self.sample_indices_ = sample
        sampled = X[sample]
        distinct, inverse = np.unique(sampled, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        k = min(int(self.n_clusters), len(distinct))

        if self.sigma == "median":
            sigma = median_sigma(sampled, rng)
        else:
            sigma = float(self.sigma)
        self.sigma_ = sigma

        if k == 1 or sigma == 0.0:
            if sigma == 0.0 and int(self.n_clusters) > 1:
                warnings.warn("all location vectors coincide; returning a single cluster",
                              RuntimeWarning, stacklevel=2)
            self.labels_ = np.zeros(m, dtype=np.int64)
            self.n_clusters_ = 1
            return self

        embedding = spectral_embedding(sampled, k, sigma)
        self.embedding_ = embedding
        sample_labels, _ = kmeans(embedding, k, rng, self.max_iter, self.tol)

        labels = np.empty(m, dtype=np.int64)
        labels[sample] = sample_labels
        rest = np.setdiff1d(np.arange(m), sample, assume_unique=True)
        if rest.size:
            # identical vectors always share an embedding row and thus a label
            ref_labels = np.empty(len(distinct), dtype=np.int64)
            ref_labels[inverse] = sample_labels
            q_distinct, q_inverse = np.unique(X[rest], axis=0, return_inverse=True)
            nearest = _nearest_labels(q_distinct, distinct, ref_labels, k)
            labels[rest] = nearest[q_inverse.ravel()]
        self.labels_, self.n_clusters_ = _renumber(labels)
        logger.debug("clustered %d rows into %d groups (sigma=%.4g)", m, self.n_clusters_, sigma)
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


def cluster_instances(semantic: SemanticMap, locations: LocationMap, n: int,
                      cfg: ClusterConfig | None = None) -> InstanceLabeling:
    """Partition the semantic map's foreground into at most ``n`` persons."""
    cfg = cfg or ClusterConfig()
    if semantic.size != locations.size:
        raise ValidationError("semantic map and location map sizes differ")
    if n < 1:
        raise ValidationError("instance count must be >= 1")
    fg = np.flatnonzero(semantic.pixels.ravel() != 0)
    labels = np.zeros(semantic.pixels.size, dtype=np.int32)
    if fg.size:
        vectors = locations.vectors.reshape(-1, 4)[fg].astype(np.float64)
        est = SpectralInstanceClusterer(
            n_clusters=n, sample_cap=cfg.sample_cap, sigma=cfg.sigma,
            random_state=cfg.kmeans_seed, max_iter=cfg.kmeans_max_iter, tol=cfg.kmeans_tol,
        )
        labels[fg] = est.fit_predict(vectors) + 1
    return InstanceLabeling(labels.reshape(semantic.pixels.shape))


def labeling_to_scene(labeling: InstanceLabeling, semantic: SemanticMap, default_score: float = 1.0,
                      image_id: str = "") -> ScoredScene:
    if labeling.size != semantic.size:
        raise ValidationError("labeling and semantic map sizes differ")
    masks = []
    for cid in range(1, labeling.n_instances + 1):
        region = (labeling.labels == cid) & (semantic.pixels != 0)
        if not region.any():
            continue
        masks.append(InstanceMask(np.where(region, semantic.pixels, 0)))
    scene = SceneAnnotation(image_id, tuple(masks), semantic.size)
    return ScoredScene(scene, (float(default_score),) * len(masks))


class LocationEncoder(TransformerMixin, BaseEstimator):
    """Turns ground-truth scenes into location maps; stateless."""

    def __init__(self, encoding="instance"):
        self.encoding = encoding

    def fit(self, X=None, y=None):
        if self.encoding not in ENCODINGS:
            raise ValidationError(f"encoding must be one of {ENCODINGS}")
        self.n_features_out_ = 4
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        return [encode_locations(scene, self.encoding) for scene in X]

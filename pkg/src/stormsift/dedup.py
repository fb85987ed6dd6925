"""Content-level near-duplicate detection.

Each image is embedded as a fixed-length feature vector; an incoming vector
joins an existing duplicate cluster iff its exact nearest stored vector lies
strictly within the Euclidean distance threshold, otherwise it founds a new
cluster. Matching is an exact linear scan; duplicates are recorded as cluster
members but (by default) are not added to the searchable vector set, so the
index size stays equal to the unique count.

Snapshot layout (little-endian):
  magic   4 bytes  b"SSDX"
  version u16      currently 1
  dim     u32
  thresh  f64
  count   u64      number of clusters
  then per cluster:
    cluster_id u64
    canonical  u16 length + utf-8 bytes
    vector     dim * f64   (the cluster's searchable vector)
    members    u32 count, then u16 length + utf-8 bytes each
Snapshots cover the default uniques-only configuration.
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .fetch import ImageRecord

SNAPSHOT_MAGIC = b"SSDX"
SNAPSHOT_VERSION = 1


class DimensionMismatch(ValueError):
    """Vector dimension disagrees with the index configuration."""


class ExtractionError(Exception):
    """Feature extraction failed for one image (routed to dead-letter)."""


@dataclass(frozen=True)
class DedupConfig:
    distance_threshold: float = 20.0
    dimension: int = 4096
    # The alternative reading of "compare against everything collected so
    # far": also index duplicate vectors as search targets.
    index_duplicates: bool = False

    def __post_init__(self):
        if self.distance_threshold <= 0:
            raise ValueError("distance_threshold must be positive")
        if self.dimension <= 0:
            raise ValueError("dimension must be positive")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    image_id: str

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("feature vector must be one-dimensional")
        object.__setattr__(self, "values", arr)


@dataclass
class Cluster:
    cluster_id: int
    canonical_image_id: str
    members: list[str]


@dataclass(frozen=True)
class DedupDecision:
    cluster_id: int
    duplicate: bool
    distance: float | None = None

    @property
    def unique(self) -> bool:
        return not self.duplicate


def euclidean_distance(a: FeatureVector | np.ndarray, b: FeatureVector | np.ndarray) -> float:
    va = a.values if isinstance(a, FeatureVector) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, FeatureVector) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"dimension mismatch: {va.shape} vs {vb.shape}")
    diff = va - vb
    return float(np.sqrt(np.dot(diff, diff)))


class DedupIndex:
    """Exact nearest-neighbour index over searchable vectors.

    insert_or_match is linearizable (single writer lock); nearest snapshots
    the current prefix of the vector matrix and may run concurrently with
    insertions.
    """

    def __init__(self, config: DedupConfig | None = None):
        self.config = config or DedupConfig()
        self._lock = threading.Lock()
        dim = self.config.dimension
        self._matrix = np.empty((64, dim), dtype=np.float64)
        self._count = 0
        self._row_cluster: list[int] = []
        self._clusters: list[Cluster] = []

    def __len__(self) -> int:
        """Number of searchable vectors."""
        return self._count

    @property
    def clusters(self) -> list[Cluster]:
        return self._clusters

    def _check(self, v: FeatureVector) -> np.ndarray:
        arr = v.values
        if arr.shape[0] != self.config.dimension:
            raise DimensionMismatch(
                f"expected dimension {self.config.dimension}, got {arr.shape[0]}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite feature values for {v.image_id}")
        return arr

    def _snapshot(self) -> tuple[np.ndarray, int]:
        # Rows below _count are never mutated; growth swaps in a fresh array,
        # so readers holding the old reference stay consistent.
        with self._lock:
            return self._matrix, self._count

    def _scan(self, matrix: np.ndarray, count: int, arr: np.ndarray) -> tuple[int, float]:
        """Exact scan of the first ``count`` rows; ties resolve to the lowest
        cluster id. Returns (row_index_winner_cluster, distance)."""
        diffs = matrix[:count] - arr
        d2 = np.einsum("ij,ij->i", diffs, diffs)
        best = float(d2.min())
        rows = np.flatnonzero(d2 == best)
        cluster = min(self._row_cluster[r] for r in rows)
        return cluster, math.sqrt(best)

    def nearest(self, v: FeatureVector) -> tuple[int, float] | None:
        """Exact nearest stored vector's (cluster_id, distance), or None for
        an empty index."""
        arr = self._check(v)
        matrix, count = self._snapshot()
        if count == 0:
            return None
        return self._scan(matrix, count, arr)

    def insert_or_match(self, v: FeatureVector) -> DedupDecision:
        arr = self._check(v)
        threshold = self.config.distance_threshold
        with self._lock:
            if self._count:
                cluster_id, dist = self._scan(self._matrix, self._count, arr)
                if dist < threshold:  # strictly less-than at the boundary
                    cluster = self._clusters[cluster_id]
                    cluster.members.append(v.image_id)
                    if self.config.index_duplicates:
                        self._append_row(arr, cluster_id)
                    return DedupDecision(cluster_id, duplicate=True, distance=dist)
            cluster_id = len(self._clusters)
            self._clusters.append(
                Cluster(cluster_id, canonical_image_id=v.image_id, members=[v.image_id])
            )
            self._append_row(arr, cluster_id)
            return DedupDecision(cluster_id, duplicate=False)

    def _append_row(self, arr: np.ndarray, cluster_id: int) -> None:
        if self._count == self._matrix.shape[0]:
            grown = np.empty(
                (self._matrix.shape[0] * 2, self.config.dimension), dtype=np.float64
            )
            grown[: self._count] = self._matrix[: self._count]
            self._matrix = grown
        self._matrix[self._count] = arr
        self._row_cluster.append(cluster_id)
        self._count += 1

    # -- persistence ----------------------------------------------------

    def save(self, path: str | Path) -> None:
        if self.config.index_duplicates:
            raise ValueError("snapshot v1 supports the uniques-only configuration")
        with open(path, "wb") as fh:
            fh.write(SNAPSHOT_MAGIC)
            fh.write(
                struct.pack(
                    "<HId Q",
                    SNAPSHOT_VERSION,
                    self.config.dimension,
                    self.config.distance_threshold,
                    len(self._clusters),
                )
            )
            for cluster in self._clusters:
                fh.write(struct.pack("<Q", cluster.cluster_id))
                _write_str(fh, cluster.canonical_image_id)
                fh.write(self._matrix[cluster.cluster_id].tobytes())
                fh.write(struct.pack("<I", len(cluster.members)))
                for member in cluster.members:
                    _write_str(fh, member)

    @classmethod
    def load(cls, path: str | Path) -> "DedupIndex":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != SNAPSHOT_MAGIC:
                raise ValueError(f"not an index snapshot (magic {magic!r})")
            version, dim, threshold, count = struct.unpack("<HId Q", fh.read(22))
            if version != SNAPSHOT_VERSION:
                raise ValueError(f"unsupported snapshot version {version}")
            index = cls(DedupConfig(distance_threshold=threshold, dimension=dim))
            for _ in range(count):
                (cluster_id,) = struct.unpack("<Q", fh.read(8))
                canonical = _read_str(fh)
                vector = np.frombuffer(fh.read(8 * dim), dtype="<f8").copy()
                (n_members,) = struct.unpack("<I", fh.read(4))
                members = [_read_str(fh) for _ in range(n_members)]
                if cluster_id != len(index._clusters):
                    raise ValueError("snapshot cluster ids out of order")
                index._clusters.append(Cluster(cluster_id, canonical, members))
                index._append_row(vector, cluster_id)
        return index


def _write_str(fh, s: str) -> None:
    raw = s.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<H", fh.read(2))
    return fh.read(n).decode("utf-8")


def insert_or_match(v: FeatureVector, index: DedupIndex) -> DedupDecision:
    return index.insert_or_match(v)


def nearest(v: FeatureVector, index: DedupIndex) -> tuple[int, float] | None:
    return index.nearest(v)


# -- feature extraction ----------------------------------------------------


class FeatureExtractor(Protocol):
    dimension: int

    def extract(self, image: ImageRecord) -> np.ndarray:
        """Deterministic feature vector for the image, or ExtractionError."""
        ...


class ReplayExtractor:
    """Returns the manifest-provided feature row for the image's URL."""

    def __init__(self, features_by_url: dict[str, Sequence[float] | None], dimension: int):
        self.dimension = dimension
        self._features = features_by_url

    def extract(self, image: ImageRecord) -> np.ndarray:
        feature = self._features.get(image.source_url)
        if feature is None:
            raise ExtractionError(f"no feature row for {image.source_url}")
        arr = np.asarray(feature, dtype=np.float64)
        if arr.shape != (self.dimension,):
            raise ExtractionError(
                f"feature for {image.source_url} has dimension {arr.shape[0]},"
                f" expected {self.dimension}"
            )
        return arr


class CallableExtractor:
    """Adapts any bytes->vector function (e.g. a remote embedding client)."""

    def __init__(self, fn: Callable[[ImageRecord], Sequence[float]], dimension: int):
        self.dimension = dimension
        self._fn = fn

    def extract(self, image: ImageRecord) -> np.ndarray:
        try:
            arr = np.asarray(self._fn(image), dtype=np.float64)
        except ExtractionError:
            raise
        except Exception as exc:
            raise ExtractionError(f"extractor failed for {image.image_id}: {exc}") from exc
        if arr.shape != (self.dimension,):
            raise ExtractionError(
                f"extractor returned dimension {arr.shape[0]} for {image.image_id},"
                f" expected {self.dimension}"
            )
        return arr


def extract_features(image: ImageRecord, extractor: FeatureExtractor) -> FeatureVector:
    return FeatureVector(values=extractor.extract(image), image_id=image.image_id)

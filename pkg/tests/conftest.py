import numpy as np
import pytest

from stormsift.fixtures import deployment_judgments


@pytest.fixture(scope="session")
def campaign_judgments():
    """The recorded verification campaign, materialized once per session."""
    return list(deployment_judgments())


class ScanOracle:
    """Greedy sequential clustering by an independent brute-force scan.

    Keeps every searchable vector and re-derives each decision with
    np.linalg.norm over the stored prefix: nearest distance strictly below
    the threshold joins that cluster, ties go to the lowest cluster id,
    duplicates are not added to the searchable set.
    """

    def __init__(self, threshold: float, dim: int):
        self.threshold = threshold
        self.dim = dim
        self._matrix = np.zeros((256, dim))
        self._count = 0
        self._cluster_of_row: list[int] = []
        self.assignments: list[int] = []
        self.decisions: list[bool] = []  # True = duplicate

    def insert(self, vec: np.ndarray) -> tuple[int, bool]:
        if self._count:
            dists = np.linalg.norm(self._matrix[: self._count] - vec, axis=1)
            best = dists.min()
            if best < self.threshold:
                rows = np.flatnonzero(dists == best)
                cluster = min(self._cluster_of_row[r] for r in rows)
                self.assignments.append(cluster)
                self.decisions.append(True)
                return cluster, True
        cluster = max(self._cluster_of_row, default=-1) + 1
        if self._count == self._matrix.shape[0]:
            grown = np.zeros((2 * self._matrix.shape[0], self.dim))
            grown[: self._count] = self._matrix[: self._count]
            self._matrix = grown
        self._matrix[self._count] = vec
        self._cluster_of_row.append(cluster)
        self._count += 1
        self.assignments.append(cluster)
        self.decisions.append(False)
        return cluster, False

    def nearest(self, vec: np.ndarray):
        if not self._count:
            return None
        dists = np.linalg.norm(self._matrix[: self._count] - vec, axis=1)
        best = dists.min()
        rows = np.flatnonzero(dists == best)
        return min(self._cluster_of_row[r] for r in rows), float(best)


def mixed_vectors(n: int, dim: int, threshold: float, seed: int, dup_rate: float = 0.5):
    """Random insertion stream with planted near-duplicates.

    Fresh vectors are spread far apart relative to the threshold; duplicate
    candidates perturb a random earlier vector within 0.9 * threshold, so
    both decision branches occur often.
    """
    rng = np.random.default_rng(seed)
    out = []
    history = []
    for i in range(n):
        if history and rng.random() < dup_rate:
            base = history[rng.integers(0, len(history))]
            direction = rng.normal(size=dim)
            direction /= np.linalg.norm(direction)
            radius = rng.uniform(0.05, 0.9) * threshold
            vec = base + radius * direction
        else:
            vec = rng.uniform(0.0, 50.0 * threshold, size=dim)
            history.append(vec)
        out.append(vec)
    return out

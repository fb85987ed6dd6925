import math
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ScanOracle, mixed_vectors
from stormsift.dedup import (
    CallableExtractor,
    DedupConfig,
    DedupIndex,
    DimensionMismatch,
    ExtractionError,
    FeatureVector,
    ReplayExtractor,
    euclidean_distance,
    extract_features,
    insert_or_match,
    nearest,
)
from stormsift.fetch import ImageRecord


def fv(values, image_id="img"):
    return FeatureVector(values=np.asarray(values, dtype=float), image_id=image_id)


def record(url="https://t/x", data=b"png-ish bytes"):
    import hashlib

    digest = hashlib.sha256(data).hexdigest()
    return ImageRecord(
        image_id=digest[:16],
        source_url=url,
        bytes_len=len(data),
        content_hash=digest,
        fetched_at=datetime(2019, 9, 1, tzinfo=timezone.utc),
        tweet_ids=("t1",),
        data=data,
    )


class TestEuclideanDistance:
    def test_identity(self):
        v = fv(np.arange(8))
        assert euclidean_distance(v, v) == 0.0

    def test_pythagorean(self):
        a = np.zeros(4096)
        a[0], a[1] = 3.0, 4.0
        assert euclidean_distance(fv(a), fv(np.zeros(4096))) == 5.0

    def test_random_high_dim_matches_naive_loop(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=4096)
        b = rng.normal(size=4096)
        naive = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
        got = euclidean_distance(fv(a), fv(b))
        assert abs(got - naive) <= 1e-6 * naive

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            euclidean_distance(fv([1.0, 2.0]), fv([1.0, 2.0, 3.0]))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_symmetry_nonnegativity_triangle(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (fv(rng.normal(size=16) * 10) for _ in range(3))
        dab = euclidean_distance(a, b)
        assert dab >= 0.0
        assert dab == euclidean_distance(b, a)
        assert dab <= euclidean_distance(a, c) + euclidean_distance(c, b) + 1e-9


class TestInsertOrMatch:
    def test_empty_index_first_vector_unique(self):
        index = DedupIndex(DedupConfig(dimension=4))
        decision = insert_or_match(fv([1, 2, 3, 4], "a"), index)
        assert decision.unique
        assert decision.cluster_id == 0

    def test_reinsert_same_vector_duplicate_at_zero(self):
        index = DedupIndex(DedupConfig(dimension=4))
        insert_or_match(fv([1, 2, 3, 4], "a"), index)
        decision = insert_or_match(fv([1, 2, 3, 4], "b"), index)
        assert decision.duplicate
        assert decision.cluster_id == 0
        assert decision.distance == 0.0

    def test_distance_exactly_threshold_is_unique(self):
        # strict less-than: a vector exactly at the threshold founds a cluster
        cfg = DedupConfig(distance_threshold=20.0, dimension=64)
        index = DedupIndex(cfg)
        rng = np.random.default_rng(9)
        # integer-valued coordinates keep the +20 offset exactly representable
        base = rng.integers(0, 100, size=64).astype(float)
        insert_or_match(FeatureVector(base, "base"), index)
        at_boundary = base.copy()
        at_boundary[7] += 20.0
        decision = insert_or_match(FeatureVector(at_boundary, "edge"), index)
        assert decision.unique
        just_inside = base.copy()
        just_inside[7] += 19.999999
        assert insert_or_match(FeatureVector(just_inside, "near"), index).duplicate

    def test_duplicates_not_added_to_searchable_set(self):
        cfg = DedupConfig(distance_threshold=20.0, dimension=2)
        index = DedupIndex(cfg)
        insert_or_match(fv([0.0, 0.0], "a"), index)
        insert_or_match(fv([0.0, 15.0], "b"), index)  # duplicate of a
        # c is within threshold of b but not of a: with duplicates excluded
        # from the searchable set it must found its own cluster
        decision = insert_or_match(fv([0.0, 30.0], "c"), index)
        assert decision.unique
        assert len(index) == 2

    def test_index_duplicates_flag_changes_that(self):
        cfg = DedupConfig(distance_threshold=20.0, dimension=2, index_duplicates=True)
        index = DedupIndex(cfg)
        insert_or_match(fv([0.0, 0.0], "a"), index)
        insert_or_match(fv([0.0, 15.0], "b"), index)
        decision = insert_or_match(fv([0.0, 30.0], "c"), index)
        assert decision.duplicate
        assert decision.cluster_id == 0

    def test_cluster_membership_recorded(self):
        index = DedupIndex(DedupConfig(dimension=2))
        insert_or_match(fv([0.0, 0.0], "a"), index)
        insert_or_match(fv([1.0, 0.0], "b"), index)
        insert_or_match(fv([500.0, 0.0], "c"), index)
        assert index.clusters[0].canonical_image_id == "a"
        assert index.clusters[0].members == ["a", "b"]
        assert index.clusters[1].members == ["c"]

    def test_dimension_mismatch_rejected(self):
        index = DedupIndex(DedupConfig(dimension=4))
        with pytest.raises(DimensionMismatch):
            insert_or_match(fv([1.0, 2.0], "a"), index)

    def test_non_finite_rejected(self):
        index = DedupIndex(DedupConfig(dimension=2))
        with pytest.raises(ValueError):
            insert_or_match(fv([np.nan, 0.0], "a"), index)

    def test_oracle_equivalence_small(self):
        cfg = DedupConfig(distance_threshold=20.0, dimension=16)
        index = DedupIndex(cfg)
        oracle = ScanOracle(20.0, 16)
        for i, vec in enumerate(mixed_vectors(1000, 16, 20.0, seed=5)):
            decision = insert_or_match(FeatureVector(vec, f"img{i}"), index)
            cluster, duplicate = oracle.insert(vec)
            assert decision.duplicate == duplicate, f"insert {i}"
            assert decision.cluster_id == cluster, f"insert {i}"
        assert len(index.clusters) == len(index)

    def test_unique_plus_duplicate_equals_processed(self):
        cfg = DedupConfig(distance_threshold=20.0, dimension=8)
        index = DedupIndex(cfg)
        vectors = mixed_vectors(300, 8, 20.0, seed=11)
        decisions = [insert_or_match(FeatureVector(v, str(i)), index) for i, v in enumerate(vectors)]
        uniques = sum(1 for d in decisions if d.unique)
        dups = sum(1 for d in decisions if d.duplicate)
        assert uniques + dups == len(vectors)
        assert uniques == len(index) == len(index.clusters)


class TestNearest:
    def test_empty_index(self):
        index = DedupIndex(DedupConfig(dimension=2))
        assert nearest(fv([0.0, 0.0]), index) is None

    def test_tie_breaks_to_lowest_cluster_id(self):
        index = DedupIndex(DedupConfig(distance_threshold=1.0, dimension=2))
        insert_or_match(fv([0.0, 10.0], "a"), index)   # cluster 0
        insert_or_match(fv([0.0, -10.0], "b"), index)  # cluster 1, equidistant from origin
        cluster, distance = nearest(fv([0.0, 0.0]), index)
        assert cluster == 0
        assert distance == 10.0

    def test_agrees_with_oracle_on_random_queries(self):
        cfg = DedupConfig(distance_threshold=20.0, dimension=8)
        index = DedupIndex(cfg)
        oracle = ScanOracle(20.0, 8)
        for i, vec in enumerate(mixed_vectors(1000, 8, 20.0, seed=23)):
            insert_or_match(FeatureVector(vec, str(i)), index)
            oracle.insert(vec)
        rng = np.random.default_rng(99)
        for _ in range(100):
            q = rng.uniform(0, 1000, size=8)
            got = nearest(fv(q), index)
            want = oracle.nearest(q)
            assert got[0] == want[0]
            assert abs(got[1] - want[1]) < 1e-9


class TestSnapshot:
    def test_round_trip_preserves_decisions(self, tmp_path):
        cfg = DedupConfig(distance_threshold=20.0, dimension=8)
        index = DedupIndex(cfg)
        vectors = mixed_vectors(200, 8, 20.0, seed=41)
        for i, vec in enumerate(vectors):
            insert_or_match(FeatureVector(vec, f"img{i}"), index)
        path = tmp_path / "index.bin"
        index.save(path)
        loaded = DedupIndex.load(path)
        assert loaded.config == cfg
        assert len(loaded) == len(index)
        assert [c.members for c in loaded.clusters] == [c.members for c in index.clusters]
        probe = mixed_vectors(50, 8, 20.0, seed=42)
        for i, vec in enumerate(probe):
            a = index.insert_or_match(FeatureVector(vec, f"p{i}"))
            b = loaded.insert_or_match(FeatureVector(vec, f"p{i}"))
            assert (a.cluster_id, a.duplicate) == (b.cluster_id, b.duplicate)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(ValueError, match="magic"):
            DedupIndex.load(path)


class TestExtractFeatures:
    def test_manifest_passthrough(self):
        rec = record(url="https://t/a")
        extractor = ReplayExtractor({"https://t/a": (1.0, 2.0, 3.0)}, dimension=3)
        out = extract_features(rec, extractor)
        assert out.image_id == rec.image_id
        assert np.array_equal(out.values, [1.0, 2.0, 3.0])

    def test_identical_bytes_identical_vectors(self):
        extractor = ReplayExtractor({"https://t/a": (4.0, 5.0)}, dimension=2)
        a = extract_features(record(url="https://t/a"), extractor)
        b = extract_features(record(url="https://t/a"), extractor)
        assert np.array_equal(a.values, b.values)

    def test_missing_feature_row_is_stage_error(self):
        extractor = ReplayExtractor({}, dimension=2)
        with pytest.raises(ExtractionError):
            extract_features(record(), extractor)

    def test_wrong_dimension_is_stage_error(self):
        rec = record()
        extractor = CallableExtractor(lambda image: [1.0] * 63, dimension=64)
        with pytest.raises(ExtractionError, match="dimension"):
            extract_features(rec, extractor)

    def test_callable_failure_wrapped(self):
        def boom(image):
            raise RuntimeError("remote extractor unavailable")

        extractor = CallableExtractor(boom, dimension=4)
        with pytest.raises(ExtractionError, match="unavailable"):
            extract_features(record(), extractor)

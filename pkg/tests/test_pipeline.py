import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from conftest import ScanOracle
from reference import reference_run
from stormsift.dedup import ReplayExtractor
from stormsift.fetch import replay_fetcher
from stormsift.fixtures import CorpusSpec, generate_corpus
from stormsift.inference import (
    DamageLabel,
    InferenceError,
    RelevanceLabel,
    StubAdapter,
    StubPolicy,
)
from stormsift.pipeline import (
    AccountingError,
    DeadLetter,
    ImageState,
    PipelineConfig,
    StageAccounting,
    TimeBucket,
    bucketize,
    propagate_cluster_labels,
    read_states,
    run,
    tally,
    write_states,
)
from stormsift.reporting import timeseries_rows

T0 = datetime(2019, 8, 30, tzinfo=timezone.utc)
GOLDEN_PATH = Path(__file__).parent / "data" / "golden_accounting.json"


def small_corpus(tmp_path, **kwargs):
    spec = CorpusSpec(
        n_tweets=kwargs.pop("n_tweets", 300),
        n_unique_images=kwargs.pop("n_unique_images", 60),
        n_duplicate_images=kwargs.pop("n_duplicate_images", 40),
        n_failures=kwargs.pop("n_failures", 8),
        dimension=kwargs.pop("dimension", 8),
        **kwargs,
    )
    return generate_corpus(tmp_path / "corpus", spec), spec


def build_stack(paths, config=None):
    from stormsift.cli import load_config

    config = config or load_config(paths.config)
    fetcher = replay_fetcher(paths.manifest)
    extractor = ReplayExtractor(
        {u: e.feature for u, e in fetcher.entries.items()}, config.dedup.dimension
    )
    adapter = StubAdapter(config.stub, fetcher.entries)
    return config, fetcher, extractor, adapter


def run_corpus(paths, config=None):
    config, fetcher, extractor, adapter = build_stack(paths, config)
    with open(paths.tweets, encoding="utf-8") as source:
        return run(config, source, fetcher, extractor, adapter)


class TestStageAccounting:
    def test_verify_accepts_consistent_counts(self):
        StageAccounting(
            total_tweets=10, unique_urls=5, downloaded=4, failed=1,
            unique_images=3, duplicate_images=1, relevant=2, not_relevant=2,
            with_damage=1, severe=1, mild=0, no_damage=3,
        ).verify()

    def test_verify_rejects_violations(self):
        acc = StageAccounting(downloaded=4, unique_images=1, duplicate_images=1)
        with pytest.raises(AccountingError, match="unique_images"):
            acc.verify()


class TestRunBasics:
    def test_empty_stream(self, tmp_path):
        paths, _ = small_corpus(tmp_path)
        config, fetcher, extractor, adapter = build_stack(paths)
        result = run(config, [], fetcher, extractor, adapter)
        assert result.accounting == StageAccounting()
        assert result.buckets == []
        assert result.states == {}

    def test_identities_and_exactly_once(self, tmp_path):
        paths, spec = small_corpus(tmp_path)
        result = run_corpus(paths)
        acc = result.accounting.verify()
        assert acc.downloaded == len(result.states)
        terminal = sum(1 for s in result.states.values() if s.terminal)
        assert terminal + len(result.dead_letters) == acc.downloaded
        assert acc.failed == spec.n_failures
        assert acc.unique_urls == acc.downloaded + acc.failed

    def test_duplicates_inherit_canonical_labels(self, tmp_path):
        paths, _ = small_corpus(tmp_path)
        result = run_corpus(paths)
        by_cluster = {}
        for state in result.states.values():
            if state.cluster_id is not None:
                by_cluster.setdefault(state.cluster_id, []).append(state)
        multi = [group for group in by_cluster.values() if len(group) > 1]
        assert multi, "corpus should produce duplicate clusters"
        for group in multi:
            canonical = [s for s in group if s.is_cluster_canonical]
            assert len(canonical) == 1
            c = canonical[0]
            for dup in group:
                if dup is c or dup.dead_letter is not None:
                    continue
                assert dup.inherited
                assert dup.relevance == c.relevance
                assert dup.damage == c.damage

    def test_byte_identical_downloads_get_distinct_states(self, tmp_path):
        paths, _ = small_corpus(tmp_path, shared_file_pairs=2)
        result = run_corpus(paths)
        suffixed = [k for k in result.states if "~" in k]
        assert suffixed, "byte-identical pair should force a suffixed state key"
        for key in suffixed:
            state = result.states[key]
            assert state.image_id != state.content_id
            assert state.cluster_id is not None

    def test_url_dedup_feeds_single_fetch(self, tmp_path):
        paths, _ = small_corpus(tmp_path)
        result = run_corpus(paths)
        urls = [s.source_url for s in result.states.values()]
        assert len(urls) == len(set(urls))

    def test_first_seen_is_earliest_reference(self, tmp_path):
        from stormsift.ingest import KeywordFilter, matches_keywords

        paths, _ = small_corpus(tmp_path)
        tweets = []
        for line in Path(paths.tweets).read_text().splitlines():
            try:
                tweets.append(json.loads(line))
            except json.JSONDecodeError:
                continue
        earliest = {}
        for t in tweets:
            if not matches_keywords(t["text"], KeywordFilter()):
                continue
            for u in t["image_urls"]:
                ts = datetime.fromisoformat(t["created_at"])
                if u not in earliest or ts < earliest[u]:
                    earliest[u] = ts
        result = run_corpus(paths)
        checked = 0
        for state in result.states.values():
            if state.source_url in earliest:
                assert state.first_seen_at == earliest[state.source_url]
                checked += 1
        assert checked == len(result.states)


class TestDeadLetterPath:
    class ExplodingAdapter:
        """Wraps a real adapter; fails relevance for chosen content ids."""

        def __init__(self, inner, poison):
            self.inner = inner
            self.poison = poison

        def classify_relevance(self, image):
            if image.image_id in self.poison:
                raise InferenceError(image.image_id, "relevance", "injected outage")
            return self.inner.classify_relevance(image)

        def classify_damage(self, image):
            return self.inner.classify_damage(image)

    def test_stage_errors_dead_letter_and_identities_hold(self, tmp_path):
        paths, _ = small_corpus(tmp_path)
        config, fetcher, extractor, adapter = build_stack(paths)
        clean = run_corpus(paths)
        canonical_ids = [
            s.content_id for s in clean.states.values() if s.is_cluster_canonical
        ][:5]
        poisoned = self.ExplodingAdapter(adapter, set(canonical_ids))
        with open(paths.tweets, encoding="utf-8") as source:
            result = run(config, source, fetcher, extractor, poisoned)
        acc = result.accounting.verify()
        assert len(result.dead_letters) >= 5  # canonicals plus inheriting duplicates
        terminal = sum(1 for s in result.states.values() if s.terminal)
        assert terminal + len(result.dead_letters) == acc.downloaded
        stages = {dl.stage for dl in result.dead_letters}
        assert "relevance" in stages
        assert any(stage.startswith("inherited:") for stage in stages) or len(stages) == 1


class TestPropagation:
    def make_state(self, image_id, cluster, canonical, relevance=None, damage=None):
        return ImageState(
            image_id=image_id,
            content_id=image_id,
            source_url=f"https://t/{image_id}.jpg",
            first_seen_at=T0,
            fetched_at=T0,
            cluster_id=cluster,
            is_cluster_canonical=canonical,
            relevance=relevance,
            damage=damage,
        )

    def test_duplicates_report_canonical_labels(self):
        states = {
            "a": self.make_state("a", 0, True, RelevanceLabel.RELEVANT, DamageLabel.MILD),
            "b": self.make_state("b", 0, False),
            "c": self.make_state("c", 0, False),
        }
        assert propagate_cluster_labels(states) == []
        for key in ("b", "c"):
            assert states[key].damage is DamageLabel.MILD
            assert states[key].relevance is RelevanceLabel.RELEVANT
            assert states[key].inherited

    def test_singleton_noop(self):
        states = {"a": self.make_state("a", 0, True, RelevanceLabel.JUNK)}
        propagate_cluster_labels(states)
        assert not states["a"].inherited

    def test_dead_canonical_spreads_dead_letter(self):
        canonical = self.make_state("a", 0, True)
        canonical.dead_letter = DeadLetter("a", canonical.source_url, "relevance", "boom", T0)
        states = {"a": canonical, "b": self.make_state("b", 0, False)}
        new_dead = propagate_cluster_labels(states)
        assert len(new_dead) == 1
        assert states["b"].dead_letter.stage == "inherited:relevance"

    def test_randomized_store_has_no_disagreements(self):
        import random

        rng = random.Random(5)
        states = {}
        for c in range(100):
            relevance = rng.choice([RelevanceLabel.RELEVANT, RelevanceLabel.JUNK])
            damage = (
                rng.choice([DamageLabel.SEVERE, DamageLabel.MILD, DamageLabel.NONE])
                if relevance is RelevanceLabel.RELEVANT
                else None
            )
            states[f"c{c}"] = self.make_state(f"c{c}", c, True, relevance, damage)
            for d in range(rng.randrange(0, 4)):
                states[f"c{c}d{d}"] = self.make_state(f"c{c}d{d}", c, False)
        propagate_cluster_labels(states)
        by_cluster = {}
        for s in states.values():
            by_cluster.setdefault(s.cluster_id, set()).add((s.relevance, s.damage))
        assert all(len(labels) == 1 for labels in by_cluster.values())


class TestBucketize:
    def make_state(self, image_id, ts, damage=None):
        return ImageState(
            image_id=image_id,
            content_id=image_id,
            source_url=f"https://t/{image_id}.jpg",
            first_seen_at=ts,
            fetched_at=ts,
            cluster_id=0,
            is_cluster_canonical=True,
            relevance=RelevanceLabel.RELEVANT,
            damage=damage,
        )

    def test_single_day_single_bucket(self):
        states = [self.make_state(f"i{k}", T0 + timedelta(hours=k)) for k in range(5)]
        buckets = bucketize(states, timedelta(days=1))
        assert len(buckets) == 1
        assert buckets[0].counts.downloaded == 5

    def test_boundary_goes_to_later_bucket(self):
        width = timedelta(days=1)
        boundary = T0 + width
        buckets = bucketize([self.make_state("x", boundary)], width)
        assert buckets[0].bucket_start == boundary

    def test_conservation_over_random_fixture(self):
        import random

        rng = random.Random(7)
        states = [
            self.make_state(
                f"i{k}",
                T0 + timedelta(minutes=rng.randrange(0, 60 * 24 * 6)),
                damage=rng.choice([DamageLabel.SEVERE, DamageLabel.MILD, DamageLabel.NONE]),
            )
            for k in range(200)
        ]
        buckets = bucketize(states, timedelta(days=1))
        total = sum((b.counts for b in buckets), StageAccounting())
        assert total == tally(states)
        assert len(buckets) >= 5
        starts = [b.bucket_start for b in buckets]
        assert starts == sorted(starts)
        assert all(
            (b.bucket_start - T0.replace(hour=0)) % timedelta(days=1) == timedelta(0)
            for b in buckets
        )

    def test_empty(self):
        assert bucketize([], timedelta(days=1)) == []


class TestDeterminism:
    def test_worker_counts_do_not_change_results(self, tmp_path):
        paths, _ = small_corpus(tmp_path)
        from stormsift.cli import load_config

        base = load_config(paths.config)
        results = []
        for fw, cw in ((1, 1), (8, 4)):
            cfg = PipelineConfig(
                dedup=base.dedup,
                stub=base.stub,
                keywords=base.keywords,
                queue_capacity=16,
                bucket_width=base.bucket_width,
                fetch_workers=fw,
                classify_workers=cw,
            )
            results.append(run_corpus(paths, cfg))
        a, b = results
        assert a.accounting == b.accounting
        assert timeseries_rows(a.buckets) == timeseries_rows(b.buckets)
        labels_a = {
            k: (s.cluster_id, s.is_cluster_canonical, s.relevance, s.damage)
            for k, s in a.states.items()
        }
        labels_b = {
            k: (s.cluster_id, s.is_cluster_canonical, s.relevance, s.damage)
            for k, s in b.states.items()
        }
        assert labels_a == labels_b


class TestAgainstReference:
    def test_matches_single_threaded_reference(self, tmp_path):
        paths, _ = small_corpus(tmp_path)
        result = run_corpus(paths)
        expected = reference_run(paths.tweets, paths.manifest, paths.config)
        assert result.accounting.as_dict() == expected["accounting"]
        assert timeseries_rows(result.buckets) == expected["timeseries"]

    def test_dedup_decisions_match_scan_oracle(self, tmp_path):
        paths, spec = small_corpus(tmp_path)
        result = run_corpus(paths)
        # replay the per-state decisions through the oracle in stream order
        fetcher = replay_fetcher(paths.manifest)
        ordered = sorted(
            (s for s in result.states.values() if s.cluster_id is not None),
            key=lambda s: s.timeline["fetched"],
        )
        # fetched timestamps are not a stable order; use the dedup log instead
        events = [e for e in result.events if e["event"] == "dedup"]
        oracle = ScanOracle(spec.distance_threshold, spec.dimension)
        import numpy as np

        states = result.states
        for event in events:
            state = states[event["image_id"]]
            entry = fetcher.entry(state.source_url)
            cluster, duplicate = oracle.insert(np.asarray(entry.feature))
            assert cluster == event["payload"]["cluster"]
            assert duplicate == event["payload"]["duplicate"]


class TestGolden:
    def test_bundled_corpus_matches_checked_in_golden(self, tmp_path):
        paths, _ = small_corpus(
            tmp_path,
            n_tweets=2000,
            n_unique_images=700,
            n_duplicate_images=460,
            n_failures=40,
            dimension=64,
        )
        result = run_corpus(paths)
        got = {
            "accounting": result.accounting.as_dict(),
            "timeseries": timeseries_rows(result.buckets),
        }
        expected = reference_run(paths.tweets, paths.manifest, paths.config)
        assert got == expected, "pipeline diverged from the single-threaded reference"
        golden = json.loads(GOLDEN_PATH.read_text(encoding="utf-8"))
        assert got == golden, "pipeline diverged from the checked-in golden run"


class TestStatePersistence:
    def test_states_round_trip(self, tmp_path):
        paths, _ = small_corpus(tmp_path)
        result = run_corpus(paths)
        path = tmp_path / "states.jsonl"
        write_states(path, result.states)
        loaded = read_states(path)
        assert set(loaded) == set(result.states)
        for key, state in result.states.items():
            other = loaded[key]
            assert (other.cluster_id, other.is_cluster_canonical) == (
                state.cluster_id,
                state.is_cluster_canonical,
            )
            assert other.relevance == state.relevance
            assert other.damage == state.damage
            assert other.first_seen_at == state.first_seen_at
            assert (other.dead_letter is None) == (state.dead_letter is None)

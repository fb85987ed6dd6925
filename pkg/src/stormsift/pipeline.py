"""Stage orchestration: ingest -> fetch -> dedup -> relevance -> damage.

Stages run as a concurrent dataflow over bounded queues (blocking puts give
backpressure). Fetch and classification are internally parallel; dedup
insertions are serialized in stream order through a reorder buffer so replay
runs cluster identically regardless of worker count. Classification runs on
cluster canonicals only; labels propagate to duplicates afterwards.

Per-image errors land in a dead-letter list, never silently dropped. For the
whole-corpus accounting, dead-lettered images fold into the conservative
negative columns (unclustered images count as unique, unclassified as not
relevant / no damage) so the stage identities stay exact while the per-image
records keep the true status.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field, asdict
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping

from .dedup import DedupConfig, DedupIndex, ExtractionError, FeatureExtractor, FeatureVector
from .fetch import FailureReason, Fetcher, FetchOutcome, fetch
from .inference import (
    DamageLabel,
    InferenceAdapter,
    InferenceError,
    RelevanceLabel,
    StubPolicy,
)
from .ingest import (
    IngestStats,
    KeywordFilter,
    UrlDecision,
    UrlIndex,
    extract_image_urls,
    matches_keywords,
    parse_stream,
    register_url,
)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_SENTINEL = object()
_WORKER_DONE = object()


class AccountingError(AssertionError):
    """A stage accounting identity was violated."""


@dataclass(frozen=True)
class PipelineConfig:
    dedup: DedupConfig = DedupConfig()
    stub: StubPolicy | None = StubPolicy()
    keywords: KeywordFilter = KeywordFilter()
    queue_capacity: int = 1024
    bucket_width: timedelta = timedelta(days=1)
    fetch_workers: int = 4
    classify_workers: int = 4

    def __post_init__(self):
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if self.bucket_width <= timedelta(0):
            raise ValueError("bucket_width must be positive")
        if self.fetch_workers < 1 or self.classify_workers < 1:
            raise ValueError("worker counts must be >= 1")


@dataclass(frozen=True)
class DeadLetter:
    image_id: str
    source_url: str
    stage: str
    reason: str
    ts: datetime


@dataclass
class ImageState:
    """Terminal record for one successfully fetched image."""

    image_id: str          # unique per download (content id, suffixed on collision)
    content_id: str        # shared by byte-identical downloads
    source_url: str
    first_seen_at: datetime
    fetched_at: datetime
    tweet_ids: tuple[str, ...] = ()
    cluster_id: int | None = None
    is_cluster_canonical: bool = False
    relevance: RelevanceLabel | None = None
    damage: DamageLabel | None = None
    inherited: bool = False
    dead_letter: DeadLetter | None = None
    timeline: dict[str, datetime] = field(default_factory=dict)

    @property
    def terminal(self) -> bool:
        return self.dead_letter is None


@dataclass(frozen=True)
class FailedFetch:
    url: str
    reason: FailureReason
    first_seen_at: datetime


@dataclass
class StageAccounting:
    total_tweets: int = 0
    unique_urls: int = 0
    downloaded: int = 0
    failed: int = 0
    unique_images: int = 0
    duplicate_images: int = 0
    relevant: int = 0
    not_relevant: int = 0
    with_damage: int = 0
    severe: int = 0
    mild: int = 0
    no_damage: int = 0

    def verify(self) -> "StageAccounting":
        checks = [
            ("downloaded == unique_images + duplicate_images",
             self.downloaded == self.unique_images + self.duplicate_images),
            ("downloaded == relevant + not_relevant",
             self.downloaded == self.relevant + self.not_relevant),
            ("downloaded == with_damage + no_damage",
             self.downloaded == self.with_damage + self.no_damage),
            ("with_damage == severe + mild",
             self.with_damage == self.severe + self.mild),
            ("unique_urls == downloaded + failed",
             self.unique_urls == self.downloaded + self.failed),
        ]
        broken = [name for name, ok in checks if not ok]
        if broken:
            raise AccountingError(f"violated identities: {broken} in {self}")
        return self

    def __add__(self, other: "StageAccounting") -> "StageAccounting":
        return StageAccounting(
            **{k: getattr(self, k) + getattr(other, k) for k in self.__dataclass_fields__}
        )

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class TimeBucket:
    bucket_start: datetime
    counts: StageAccounting


@dataclass
class RunResult:
    accounting: StageAccounting
    buckets: list[TimeBucket]
    states: dict[str, ImageState]
    dead_letters: list[DeadLetter]
    failures: list[FailedFetch]
    ingest_stats: IngestStats
    events: list[dict]
    index: DedupIndex


class EventLog:
    """Thread-safe append-only event list, exported as line-delimited JSON."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._events: list[dict] = []

    def append(self, image_id: str, event: str, payload: dict) -> None:
        with self._lock:
            self._events.append(
                {
                    "image_id": image_id,
                    "event": event,
                    "payload": payload,
                    "ts": datetime.now(timezone.utc).isoformat(),
                }
            )

    def events(self) -> list[dict]:
        return list(self._events)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for event in self._events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")


@dataclass
class _UrlMeta:
    seq: int
    first_tweet_id: str
    first_seen_at: datetime
    tweet_ids: list[str]


def tally(
    states: Iterable[ImageState],
    failures: Iterable[FailedFetch] = (),
    total_tweets: int = 0,
) -> StageAccounting:
    """Fold image states and fetch failures into stage accounting.

    Dead-lettered images count in the negative columns (unique when they
    never reached a cluster, not relevant, no damage).
    """
    acc = StageAccounting(total_tweets=total_tweets)
    acc.failed = sum(1 for _ in failures)
    for st in states:
        acc.downloaded += 1
        if st.cluster_id is not None and not st.is_cluster_canonical:
            acc.duplicate_images += 1
        else:
            acc.unique_images += 1
        if st.relevance is RelevanceLabel.RELEVANT:
            acc.relevant += 1
        else:
            acc.not_relevant += 1
        if st.damage is DamageLabel.SEVERE:
            acc.severe += 1
        elif st.damage is DamageLabel.MILD:
            acc.mild += 1
    acc.with_damage = acc.severe + acc.mild
    acc.no_damage = acc.downloaded - acc.with_damage
    acc.unique_urls = acc.downloaded + acc.failed
    return acc


def propagate_cluster_labels(
    states: Mapping[str, ImageState], now: datetime | None = None
) -> list[DeadLetter]:
    """Copy each cluster canonical's labels onto its duplicates (flagged
    inherited). Duplicates of a dead-lettered canonical inherit dead-letter
    status; the new dead letters are returned."""
    now = now or datetime.now(timezone.utc)
    canonicals: dict[int, ImageState] = {}
    for st in states.values():
        if st.cluster_id is not None and st.is_cluster_canonical:
            canonicals[st.cluster_id] = st
    inherited_dead: list[DeadLetter] = []
    for st in states.values():
        if st.cluster_id is None or st.is_cluster_canonical:
            continue
        canonical = canonicals.get(st.cluster_id)
        if canonical is None:
            continue
        if canonical.dead_letter is not None:
            if st.dead_letter is None:
                dl = DeadLetter(
                    image_id=st.image_id,
                    source_url=st.source_url,
                    stage=f"inherited:{canonical.dead_letter.stage}",
                    reason=canonical.dead_letter.reason,
                    ts=now,
                )
                st.dead_letter = dl
                inherited_dead.append(dl)
            continue
        st.relevance = canonical.relevance
        st.damage = canonical.damage
        st.inherited = True
    return inherited_dead


def bucket_start_for(ts: datetime, width: timedelta) -> datetime:
    return _EPOCH + ((ts - _EPOCH) // width) * width


def bucketize(
    states: Iterable[ImageState],
    bucket_width: timedelta,
    failures: Iterable[FailedFetch] = (),
    tweet_times: Iterable[datetime] = (),
) -> list[TimeBucket]:
    """Half-open buckets [start, start + width) keyed by first-seen time; a
    timestamp exactly on a boundary belongs to the later bucket. Buckets
    partition the run interval, so totals are conserved."""
    by_bucket_states: dict[datetime, list[ImageState]] = {}
    by_bucket_failures: dict[datetime, list[FailedFetch]] = {}
    by_bucket_tweets: dict[datetime, int] = {}
    keys: set[datetime] = set()
    for st in states:
        k = bucket_start_for(st.first_seen_at, bucket_width)
        by_bucket_states.setdefault(k, []).append(st)
        keys.add(k)
    for fl in failures:
        k = bucket_start_for(fl.first_seen_at, bucket_width)
        by_bucket_failures.setdefault(k, []).append(fl)
        keys.add(k)
    for ts in tweet_times:
        k = bucket_start_for(ts, bucket_width)
        by_bucket_tweets[k] = by_bucket_tweets.get(k, 0) + 1
        keys.add(k)
    if not keys:
        return []
    start = min(keys)
    end = max(keys)
    buckets = []
    k = start
    while k <= end:
        counts = tally(
            by_bucket_states.get(k, ()),
            by_bucket_failures.get(k, ()),
            by_bucket_tweets.get(k, 0),
        )
        buckets.append(TimeBucket(bucket_start=k, counts=counts))
        k = k + bucket_width
    return buckets


def run(
    config: PipelineConfig,
    source: Iterable[str | bytes],
    fetcher: Fetcher,
    extractor: FeatureExtractor,
    adapter: InferenceAdapter,
) -> RunResult:
    """Drive the full cascade over a replay stream.

    Every fetched image ends in a terminal ImageState or a dead-letter
    record; all accounting identities hold at completion.
    """
    q_fetch: queue.Queue = queue.Queue(maxsize=config.queue_capacity)
    q_dedup: queue.Queue = queue.Queue(maxsize=config.queue_capacity)
    q_classify: queue.Queue = queue.Queue(maxsize=config.queue_capacity)

    url_index = UrlIndex()
    registry: dict[str, _UrlMeta] = {}
    index = DedupIndex(config.dedup)
    states: dict[str, ImageState] = {}
    key_counts: dict[str, int] = {}
    dead_letters: list[DeadLetter] = []
    failures: list[dict] = []  # url + reason; first_seen resolved at finalize
    events = EventLog()
    dl_lock = threading.Lock()
    stats = IngestStats()

    def dead_letter(state: ImageState, stage: str, reason: str) -> None:
        dl = DeadLetter(
            image_id=state.image_id,
            source_url=state.source_url,
            stage=stage,
            reason=reason,
            ts=datetime.now(timezone.utc),
        )
        with dl_lock:
            dead_letters.append(dl)
        state.dead_letter = dl
        events.append(state.image_id, "dead_letter", {"stage": stage, "reason": reason})

    def fetch_worker() -> None:
        while True:
            item = q_fetch.get()
            if item is _SENTINEL:
                q_dedup.put(_WORKER_DONE)
                return
            seq, ref = item
            outcome = fetch(ref, fetcher)
            q_dedup.put((seq, outcome))

    def process_outcome(outcome: FetchOutcome) -> None:
        if not outcome.ok:
            failures.append({"url": outcome.url, "reason": outcome.reason})
            events.append("", "fetch_failed", {"url": outcome.url, "reason": outcome.reason.value})
            return
        record = outcome.record
        n = key_counts.get(record.image_id, 0)
        key_counts[record.image_id] = n + 1
        state_key = record.image_id if n == 0 else f"{record.image_id}~{n + 1}"
        state = ImageState(
            image_id=state_key,
            content_id=record.image_id,
            source_url=record.source_url,
            first_seen_at=record.fetched_at,  # refined from the URL registry at finalize
            fetched_at=record.fetched_at,
            timeline={"fetched": record.fetched_at},
        )
        states[state_key] = state
        events.append(state_key, "fetched", {"url": record.source_url, "bytes": record.bytes_len})
        try:
            arr = extractor.extract(record)
        except ExtractionError as exc:
            dead_letter(state, "extract", str(exc))
            return
        decision = index.insert_or_match(FeatureVector(values=arr, image_id=state_key))
        state.cluster_id = decision.cluster_id
        state.is_cluster_canonical = decision.unique
        state.timeline["deduped"] = datetime.now(timezone.utc)
        events.append(
            state_key,
            "dedup",
            {
                "cluster": decision.cluster_id,
                "duplicate": decision.duplicate,
                "distance": decision.distance,
            },
        )
        if decision.unique:
            q_classify.put((state, record))

    def dedup_worker() -> None:
        next_seq = 0
        pending: dict[int, FetchOutcome] = {}
        done = 0
        while done < config.fetch_workers:
            item = q_dedup.get()
            if item is _WORKER_DONE:
                done += 1
                continue
            seq, outcome = item
            pending[seq] = outcome
            while next_seq in pending:
                process_outcome(pending.pop(next_seq))
                next_seq += 1
        while next_seq in pending:
            process_outcome(pending.pop(next_seq))
            next_seq += 1
        for _ in range(config.classify_workers):
            q_classify.put(_SENTINEL)

    def classify_worker() -> None:
        while True:
            item = q_classify.get()
            if item is _SENTINEL:
                return
            state, record = item
            try:
                rel = adapter.classify_relevance(record)
                state.relevance = rel.label
                state.timeline["relevance"] = rel.produced_at
                events.append(
                    state.image_id,
                    "relevance",
                    {"label": rel.label.value, "confidence": rel.confidence},
                )
                if rel.label is RelevanceLabel.RELEVANT:
                    dmg = adapter.classify_damage(record)
                    state.damage = dmg.label
                    state.timeline["damage"] = dmg.produced_at
                    events.append(
                        state.image_id,
                        "damage",
                        {"label": dmg.label.value, "confidence": dmg.confidence},
                    )
            except InferenceError as exc:
                dead_letter(state, exc.stage, exc.reason)
            except Exception as exc:  # adapter bug: dead-letter, keep draining
                dead_letter(state, "classify", str(exc))

    threads = [threading.Thread(target=dedup_worker, name="dedup")]
    threads += [
        threading.Thread(target=fetch_worker, name=f"fetch-{i}")
        for i in range(config.fetch_workers)
    ]
    threads += [
        threading.Thread(target=classify_worker, name=f"classify-{i}")
        for i in range(config.classify_workers)
    ]
    for t in threads:
        t.start()

    matched_tweets = 0
    tweet_times: list[datetime] = []
    seq = 0
    try:
        for record in parse_stream(source, stats):
            if not matches_keywords(record.text, config.keywords):
                continue
            matched_tweets += 1
            tweet_times.append(record.created_at)
            for ref in extract_image_urls(record, stats):
                decision = register_url(ref, url_index)
                if decision is UrlDecision.UNIQUE:
                    registry[ref.url] = _UrlMeta(
                        seq=seq,
                        first_tweet_id=record.tweet_id,
                        first_seen_at=record.created_at,
                        tweet_ids=[record.tweet_id],
                    )
                    q_fetch.put((seq, ref))
                    seq += 1
                else:
                    meta = registry[ref.url]
                    meta.tweet_ids.append(record.tweet_id)
                    if record.created_at < meta.first_seen_at:
                        meta.first_seen_at = record.created_at
                        meta.first_tweet_id = record.tweet_id
    finally:
        for _ in range(config.fetch_workers):
            q_fetch.put(_SENTINEL)
        for t in threads:
            t.join()

    # Finalize: tweet references and first-seen times come from the URL
    # registry (duplicate URL sightings may extend them after the fetch).
    for state in states.values():
        meta = registry[state.source_url]
        state.first_seen_at = meta.first_seen_at
        state.tweet_ids = tuple(meta.tweet_ids)
    failed = [
        FailedFetch(
            url=f["url"],
            reason=f["reason"],
            first_seen_at=registry[f["url"]].first_seen_at,
        )
        for f in failures
    ]

    dead_letters.extend(propagate_cluster_labels(states))
    accounting = tally(states.values(), failed, matched_tweets).verify()
    buckets = bucketize(states.values(), config.bucket_width, failed, tweet_times)
    return RunResult(
        accounting=accounting,
        buckets=buckets,
        states=states,
        dead_letters=dead_letters,
        failures=failed,
        ingest_stats=stats,
        events=events.events(),
        index=index,
    )


# -- persisted state ---------------------------------------------------------


def state_to_dict(state: ImageState) -> dict:
    return {
        "image_id": state.image_id,
        "content_id": state.content_id,
        "source_url": state.source_url,
        "first_seen_at": state.first_seen_at.isoformat(),
        "fetched_at": state.fetched_at.isoformat(),
        "tweet_ids": list(state.tweet_ids),
        "cluster_id": state.cluster_id,
        "is_cluster_canonical": state.is_cluster_canonical,
        "relevance": state.relevance.value if state.relevance else None,
        "damage": state.damage.value if state.damage else None,
        "inherited": state.inherited,
        "dead_letter": (
            {
                "stage": state.dead_letter.stage,
                "reason": state.dead_letter.reason,
                "ts": state.dead_letter.ts.isoformat(),
            }
            if state.dead_letter
            else None
        ),
    }


def state_from_dict(obj: dict) -> ImageState:
    from .ingest import parse_timestamp

    dl = obj.get("dead_letter")
    return ImageState(
        image_id=obj["image_id"],
        content_id=obj["content_id"],
        source_url=obj["source_url"],
        first_seen_at=parse_timestamp(obj["first_seen_at"]),
        fetched_at=parse_timestamp(obj["fetched_at"]),
        tweet_ids=tuple(obj["tweet_ids"]),
        cluster_id=obj["cluster_id"],
        is_cluster_canonical=obj["is_cluster_canonical"],
        relevance=RelevanceLabel(obj["relevance"]) if obj["relevance"] else None,
        damage=DamageLabel(obj["damage"]) if obj["damage"] else None,
        inherited=obj["inherited"],
        dead_letter=(
            DeadLetter(
                image_id=obj["image_id"],
                source_url=obj["source_url"],
                stage=dl["stage"],
                reason=dl["reason"],
                ts=parse_timestamp(dl["ts"]),
            )
            if dl
            else None
        ),
    )


def write_states(path: str | Path, states: Mapping[str, ImageState]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(states):
            fh.write(json.dumps(state_to_dict(states[key]), sort_keys=True) + "\n")


def read_states(path: str | Path) -> dict[str, ImageState]:
    out: dict[str, ImageState] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                state = state_from_dict(json.loads(line))
                out[state.image_id] = state
    return out

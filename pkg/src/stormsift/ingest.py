"""Tweet stream ingestion: parsing, keyword filtering, image-URL extraction
and O(1) URL-level deduplication.

Replay input is line-delimited JSON, one object per line with fields
{tweet_id, created_at, text, author_id, image_urls, is_retweet}.
Malformed lines are skipped and counted, never fatal: a multi-day stream
has to survive garbage.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Iterator

# Collection terms used for the 2019 Hurricane Dorian activation; override
# via config for other events.
DEFAULT_KEYWORDS: tuple[str, ...] = (
    "HurricaneDorian",
    "Dorian",
    "DorianAlert",
    "Alerts_Dorian",
    "PuertoRico",
    "DorianMissing",
    "DorianDeaths",
    "HurricaneDorianMissing",
    "HurricaneDorianDeaths",
    "Dorian Missing",
    "Hurricane Dorian Missing",
    "Dorian Found",
    "DorianFound",
)

_MEDIA_SIZE_SUFFIX = re.compile(r":[A-Za-z0-9_]+$")
_DEFAULT_PORTS = {"http": 80, "https": 443}


@dataclass(frozen=True)
class TweetRecord:
    tweet_id: str
    created_at: datetime
    text: str
    author_id: str
    image_urls: tuple[str, ...]
    is_retweet: bool


@dataclass(frozen=True)
class KeywordFilter:
    keywords: tuple[str, ...] = DEFAULT_KEYWORDS

    def __post_init__(self):
        if not self.keywords:
            raise ValueError("keyword filter must contain at least one term")


@dataclass
class ImageUrlRef:
    """A canonicalized media URL and the tweet that first referenced it."""

    url: str
    first_tweet_id: str
    first_seen_at: datetime


@dataclass
class IngestStats:
    lines_in: int = 0
    records_out: int = 0
    skipped: int = 0
    urls_dropped: int = 0


class StreamInputError(Exception):
    """The replay source itself is unreadable (fatal, unlike bad lines)."""


def parse_timestamp(raw: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def _record_from_obj(obj: dict) -> TweetRecord:
    tweet_id = obj["tweet_id"]
    if not isinstance(tweet_id, str) or not tweet_id:
        raise ValueError("tweet_id must be a non-empty string")
    urls = obj["image_urls"]
    if not isinstance(urls, list) or any(not isinstance(u, str) for u in urls):
        raise ValueError("image_urls must be a list of strings")
    return TweetRecord(
        tweet_id=tweet_id,
        created_at=parse_timestamp(obj["created_at"]),
        text=str(obj["text"]),
        author_id=str(obj["author_id"]),
        image_urls=tuple(urls),
        is_retweet=bool(obj["is_retweet"]),
    )


def parse_stream(
    source: Iterable[str | bytes], stats: IngestStats | None = None
) -> Iterator[TweetRecord]:
    """Yield well-formed TweetRecords from a line-delimited replay source.

    Bad lines (broken JSON, missing fields, unparseable timestamps, repeated
    tweet_id) increment ``stats.skipped`` and are dropped. Always
    ``records_out + skipped == lines_in``.
    """
    if stats is None:
        stats = IngestStats()
    seen_ids: set[str] = set()
    try:
        iterator = iter(source)
    except TypeError as exc:
        raise StreamInputError(f"unreadable stream source: {exc}") from exc
    for line in iterator:
        if isinstance(line, bytes):
            line = line.decode("utf-8", errors="replace")
        if not line.strip():
            continue
        stats.lines_in += 1
        try:
            record = _record_from_obj(json.loads(line))
            if record.tweet_id in seen_ids:
                raise ValueError("duplicate tweet_id")
            seen_ids.add(record.tweet_id)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            stats.skipped += 1
            continue
        stats.records_out += 1
        yield record


def matches_keywords(text: str, keyword_filter: KeywordFilter) -> bool:
    """Case-insensitive substring match against any filter term.

    Substring semantics (not tokenization) so hashtag forms like
    ``#HurricaneDorian`` match their bare keyword and multi-word terms
    match as phrases.
    """
    folded = text.casefold()
    return any(k.casefold() in folded for k in keyword_filter.keywords)


def canonicalize_url(raw: str) -> str | None:
    """Normalize a media URL, or return None when it is not an absolute
    http(s) URL.

    Lowercases scheme and host, drops default ports and fragments, strips a
    trailing ``:<label>`` media-size suffix, and leaves path and query
    untouched otherwise.
    """
    if not raw or any(c.isspace() for c in raw):
        return None
    scheme, sep, rest = raw.partition("://")
    if not sep:
        return None
    scheme = scheme.lower()
    if scheme not in _DEFAULT_PORTS:
        return None
    netloc, slash, tail = rest.partition("/")
    if not netloc:
        return None
    userinfo, at, hostport = netloc.rpartition("@")
    host, colon, port = hostport.partition(":")
    if not host:
        return None
    host = host.lower()
    if colon:
        if not port.isdigit():
            return None
        if int(port) == _DEFAULT_PORTS[scheme]:
            colon, port = "", ""
    netloc = (userinfo + at if at else "") + host + (":" + port if colon else "")
    path_query = slash + tail if slash else ""
    path_query = path_query.partition("#")[0]
    path, qmark, query = path_query.partition("?")
    # Hosted media often appends a size label after the filename
    # (".../pic.jpg:large"); the label does not change the resource.
    path = _MEDIA_SIZE_SUFFIX.sub("", path)
    return f"{scheme}://{netloc}{path}" + (qmark + query if qmark else "")


def extract_image_urls(
    record: TweetRecord, stats: IngestStats | None = None
) -> list[ImageUrlRef]:
    """One canonicalized ref per valid media URL; invalid URLs are counted
    in ``stats.urls_dropped`` and dropped."""
    refs = []
    for raw in record.image_urls:
        url = canonicalize_url(raw)
        if url is None:
            if stats is not None:
                stats.urls_dropped += 1
            continue
        refs.append(
            ImageUrlRef(
                url=url,
                first_tweet_id=record.tweet_id,
                first_seen_at=record.created_at,
            )
        )
    return refs


class UrlDecision(Enum):
    UNIQUE = "unique"
    DUPLICATE_URL = "duplicate_url"


class UrlIndex:
    """Set of canonical URLs with linearizable insert-if-absent.

    Membership checks are amortized O(1); for N concurrent registrations of
    the same URL exactly one caller observes UNIQUE.
    """

    def __init__(self) -> None:
        self._seen: set[str] = set()
        self._lock = threading.Lock()
        self._total_refs = 0

    @property
    def count_total_refs(self) -> int:
        return self._total_refs

    @property
    def count_unique(self) -> int:
        return len(self._seen)

    def register(self, ref: ImageUrlRef) -> UrlDecision:
        with self._lock:
            self._total_refs += 1
            if ref.url in self._seen:
                return UrlDecision.DUPLICATE_URL
            self._seen.add(ref.url)
            return UrlDecision.UNIQUE

    def __contains__(self, url: str) -> bool:
        return url in self._seen

    def __len__(self) -> int:
        return len(self._seen)


def register_url(ref: ImageUrlRef, index: UrlIndex) -> UrlDecision:
    return index.register(ref)

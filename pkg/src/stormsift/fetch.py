"""Resolve image URLs to bytes with failure accounting.

Two fetchers share one contract: ``HttpFetcher`` talks to the network,
``ReplayFetcher`` resolves against a local manifest so whole runs can be
replayed deterministically. Every attempted URL yields exactly one
``FetchOutcome``; fetch failures are data, never exceptions that kill the
pipeline.

Manifest format (line-delimited JSON):
  {url, file|null, feature|null, fail_as|null, stub_relevance|null,
   stub_damage|null}
``file`` is resolved relative to the manifest; when absent, deterministic
placeholder bytes derived from the URL stand in for the image so feature-only
replays still produce content hashes. ``fail_as`` injects a fetch failure.
The stub_* fields seed the inference stub.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Protocol

import requests

from .ingest import ImageUrlRef


class FailureReason(Enum):
    NOT_FOUND = "NotFound"
    TIMEOUT = "Timeout"
    CONNECTION_ERROR = "ConnectionError"
    HOST_ERROR = "HostError"
    OTHER = "Other"


# A retry only helps when the failure may be transient.
RETRYABLE = frozenset({FailureReason.TIMEOUT, FailureReason.CONNECTION_ERROR})


class FetchError(Exception):
    def __init__(self, reason: FailureReason, message: str = ""):
        super().__init__(message or reason.value)
        self.reason = reason


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    source_url: str
    bytes_len: int
    content_hash: str
    fetched_at: datetime
    tweet_ids: tuple[str, ...]
    data: bytes = field(repr=False)


@dataclass(frozen=True)
class FetchOutcome:
    url: str
    record: ImageRecord | None = None
    reason: FailureReason | None = None

    def __post_init__(self):
        if (self.record is None) == (self.reason is None):
            raise ValueError("outcome must be exactly one of success or failure")

    @property
    def ok(self) -> bool:
        return self.record is not None

    @classmethod
    def success(cls, record: ImageRecord) -> "FetchOutcome":
        return cls(url=record.source_url, record=record)

    @classmethod
    def failure(cls, url: str, reason: FailureReason) -> "FetchOutcome":
        return cls(url=url, reason=reason)


class Fetcher(Protocol):
    def fetch_bytes(self, url: str) -> bytes:
        """Return image bytes or raise FetchError. Safe for concurrent use."""
        ...


def content_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def image_id_for(data: bytes) -> str:
    # Short content-derived id: byte-identical downloads from different URLs
    # share an id candidate before feature-level dedup.
    return content_digest(data)[:16]


def fetch(
    ref: ImageUrlRef,
    fetcher: Fetcher,
    tweet_ids: tuple[str, ...] = (),
    now: datetime | None = None,
) -> FetchOutcome:
    """Fetch one URL: single retry on Timeout/ConnectionError, then fail.

    Never more than 2 attempts per URL.
    """
    attempts = 0
    while True:
        attempts += 1
        try:
            data = fetcher.fetch_bytes(ref.url)
        except FetchError as exc:
            if exc.reason in RETRYABLE and attempts < 2:
                continue
            return FetchOutcome.failure(ref.url, exc.reason)
        if not data:
            return FetchOutcome.failure(ref.url, FailureReason.OTHER)
        digest = content_digest(data)
        record = ImageRecord(
            image_id=digest[:16],
            source_url=ref.url,
            bytes_len=len(data),
            content_hash=digest,
            fetched_at=now or datetime.now(timezone.utc),
            tweet_ids=tweet_ids or (ref.first_tweet_id,),
            data=data,
        )
        return FetchOutcome.success(record)


@dataclass(frozen=True)
class ManifestEntry:
    url: str
    file: str | None = None
    feature: tuple[float, ...] | None = None
    fail_as: FailureReason | None = None
    stub_relevance: str | None = None
    stub_damage: str | None = None


class ManifestError(Exception):
    """The replay manifest is unreadable or violates its schema (fatal)."""


_FAIL_AS = {r.value: r for r in FailureReason}
_RELEVANCE_VALUES = {"relevant", "junk"}
_DAMAGE_VALUES = {"severe", "mild", "none"}


def _entry_from_obj(obj: dict, lineno: int) -> ManifestEntry:
    url = obj.get("url")
    if not isinstance(url, str) or not url:
        raise ManifestError(f"manifest line {lineno}: missing url")
    fail_as = obj.get("fail_as")
    if fail_as is not None and fail_as not in _FAIL_AS:
        raise ManifestError(f"manifest line {lineno}: unknown fail_as {fail_as!r}")
    feature = obj.get("feature")
    if feature is not None:
        if not isinstance(feature, list) or not all(
            isinstance(x, (int, float)) for x in feature
        ):
            raise ManifestError(f"manifest line {lineno}: feature must be numbers")
        feature = tuple(float(x) for x in feature)
    relevance = obj.get("stub_relevance")
    if relevance is not None and relevance not in _RELEVANCE_VALUES:
        raise ManifestError(
            f"manifest line {lineno}: bad stub_relevance {relevance!r}"
        )
    damage = obj.get("stub_damage")
    if damage is not None and damage not in _DAMAGE_VALUES:
        raise ManifestError(f"manifest line {lineno}: bad stub_damage {damage!r}")
    return ManifestEntry(
        url=url,
        file=obj.get("file"),
        feature=feature,
        fail_as=_FAIL_AS[fail_as] if fail_as else None,
        stub_relevance=relevance,
        stub_damage=damage,
    )


class ReplayFetcher:
    """Resolves URLs against a manifest; used for deterministic replays."""

    def __init__(self, entries: dict[str, ManifestEntry], base_dir: Path):
        self.entries = entries
        self.base_dir = base_dir

    def entry(self, url: str) -> ManifestEntry | None:
        return self.entries.get(url)

    def fetch_bytes(self, url: str) -> bytes:
        entry = self.entries.get(url)
        if entry is None:
            raise FetchError(FailureReason.NOT_FOUND, f"not in manifest: {url}")
        if entry.fail_as is not None:
            raise FetchError(entry.fail_as, f"injected {entry.fail_as.value}")
        if entry.file:
            path = self.base_dir / entry.file
            try:
                return path.read_bytes()
            except OSError as exc:
                raise FetchError(FailureReason.OTHER, str(exc)) from exc
        return f"replay-image:{url}".encode("utf-8")


def replay_fetcher(manifest: str | Path) -> ReplayFetcher:
    """Load a manifest file into a ReplayFetcher.

    Unreadable files, schema violations, and duplicate URL rows are fatal
    configuration errors (ManifestError).
    """
    path = Path(manifest)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    entries: dict[str, ManifestEntry] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest line {lineno}: invalid JSON") from exc
        entry = _entry_from_obj(obj, lineno)
        if entry.url in entries:
            raise ManifestError(f"manifest line {lineno}: duplicate url {entry.url}")
        entries[entry.url] = entry
    return ReplayFetcher(entries, path.parent)


class HttpFetcher:
    """Network fetcher with a request deadline and bounded in-flight count."""

    def __init__(
        self,
        timeout: float = 10.0,
        max_in_flight: int = 32,
        session: requests.Session | None = None,
    ):
        self.timeout = timeout
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def fetch_bytes(self, url: str) -> bytes:
        with self._slots:
            try:
                resp = self._session.get(url, timeout=self.timeout)
            except requests.Timeout as exc:
                raise FetchError(FailureReason.TIMEOUT, str(exc)) from exc
            except requests.ConnectionError as exc:
                raise FetchError(FailureReason.CONNECTION_ERROR, str(exc)) from exc
            except requests.RequestException as exc:
                raise FetchError(FailureReason.OTHER, str(exc)) from exc
        if resp.status_code in (404, 410):
            raise FetchError(FailureReason.NOT_FOUND, f"HTTP {resp.status_code}")
        if resp.status_code >= 500:
            raise FetchError(FailureReason.HOST_ERROR, f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise FetchError(FailureReason.OTHER, f"HTTP {resp.status_code}")
        return resp.content

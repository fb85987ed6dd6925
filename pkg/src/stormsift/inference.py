"""Classification adapters for the two cascaded models: relevance (junk)
filtering and damage-severity assessment.

The stub adapter replays manifest-seeded ground truth through a controllable
error model so downstream verification and evaluation paths can be exercised
without the trained networks. Its randomness is keyed per image id, never by
draw sequence, so outputs are identical regardless of processing order or
thread interleaving:

    u = blake2b(f"{seed}:{purpose}:{image_id}", digest_size=8) / 2**64

The remote adapter speaks the HTTP wire format:
  request  {model: "relevance"|"damage", items: [{image_id, bytes_b64|feature}]}
  response {items: [{image_id, label, confidence}]}
with labels exactly "relevant"|"junk" or "severe"|"mild"|"none".
"""

from __future__ import annotations

import base64
import hashlib
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Mapping, Protocol, Sequence

import requests

from .fetch import ImageRecord, ManifestEntry


class RelevanceLabel(Enum):
    RELEVANT = "relevant"
    JUNK = "junk"


class DamageLabel(Enum):
    SEVERE = "severe"
    MILD = "mild"
    NONE = "none"


DAMAGE_ORDER = (DamageLabel.SEVERE, DamageLabel.MILD, DamageLabel.NONE)

# Row-normalized error rates observed when the deployed severity model was
# verified by domain experts (rows = true label, columns = emitted label,
# ordered severe/mild/none). Default so synthetic runs statistically resemble
# a live deployment.
DEPLOYMENT_DAMAGE_CONFUSION: tuple[tuple[float, float, float], ...] = (
    (710 / 1451, 384 / 1451, 357 / 1451),
    (113 / 1349, 881 / 1349, 355 / 1349),
    (721 / 25250, 5233 / 25250, 19296 / 25250),
)

_IDENTITY_3 = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


@dataclass(frozen=True)
class Prediction:
    image_id: str
    label: RelevanceLabel | DamageLabel
    confidence: float
    model_id: str
    produced_at: datetime

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if not self.model_id:
            raise ValueError("model_id must be non-empty")


class InferenceError(Exception):
    """Stage error for one image: counted and dead-lettered, never dropped."""

    def __init__(self, image_id: str, stage: str, message: str):
        super().__init__(f"{stage}: {message} (image {image_id})")
        self.image_id = image_id
        self.stage = stage
        self.reason = message


class InferenceAdapter(Protocol):
    def classify_relevance(self, image: ImageRecord) -> Prediction: ...

    def classify_damage(self, image: ImageRecord) -> Prediction: ...


@dataclass(frozen=True)
class StubPolicy:
    seed: int = 0
    relevance_flip_rate: float = 0.0
    damage_confusion: tuple[tuple[float, float, float], ...] = _IDENTITY_3

    def __post_init__(self):
        if not 0.0 <= self.relevance_flip_rate <= 1.0:
            raise ValueError("relevance_flip_rate must be in [0, 1]")
        if len(self.damage_confusion) != 3:
            raise ValueError("damage_confusion must be 3x3")
        for row in self.damage_confusion:
            if len(row) != 3 or any(not 0.0 <= p <= 1.0 for p in row):
                raise ValueError("damage_confusion rows must be probabilities")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ValueError("damage_confusion rows must sum to 1")


def unit_draw(seed: int, purpose: str, image_id: str) -> float:
    """Uniform [0, 1) draw keyed by (seed, purpose, image_id)."""
    digest = hashlib.blake2b(
        f"{seed}:{purpose}:{image_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") / 2**64


def _now() -> datetime:
    return datetime.now(timezone.utc)


class StubAdapter:
    """Deterministic replay stub seeded from manifest ground truth.

    Pure given its policy; safe for concurrent calls.
    """

    def __init__(self, policy: StubPolicy, entries_by_url: Mapping[str, ManifestEntry]):
        self.policy = policy
        self._entries = entries_by_url

    def _entry(self, image: ImageRecord, stage: str) -> ManifestEntry:
        entry = self._entries.get(image.source_url)
        if entry is None:
            raise InferenceError(image.image_id, stage, f"no manifest truth for {image.source_url}")
        return entry

    def classify_relevance(self, image: ImageRecord) -> Prediction:
        entry = self._entry(image, "relevance")
        if entry.stub_relevance is None:
            raise InferenceError(image.image_id, "relevance", "manifest row lacks stub_relevance")
        base = RelevanceLabel(entry.stub_relevance)
        flip = unit_draw(self.policy.seed, "relevance", image.image_id) < self.policy.relevance_flip_rate
        label = base
        if flip:
            label = RelevanceLabel.JUNK if base is RelevanceLabel.RELEVANT else RelevanceLabel.RELEVANT
        confidence = self.policy.relevance_flip_rate if flip else 1.0 - self.policy.relevance_flip_rate
        return Prediction(
            image_id=image.image_id,
            label=label,
            confidence=confidence,
            model_id="stub-relevance",
            produced_at=_now(),
        )

    def classify_damage(self, image: ImageRecord) -> Prediction:
        entry = self._entry(image, "damage")
        if entry.stub_damage is None:
            raise InferenceError(image.image_id, "damage", "manifest row lacks stub_damage")
        true_idx = DAMAGE_ORDER.index(DamageLabel(entry.stub_damage))
        row = self.policy.damage_confusion[true_idx]
        u = unit_draw(self.policy.seed, "damage", image.image_id)
        acc = 0.0
        emit_idx = len(row) - 1
        for j, p in enumerate(row):
            acc += p
            if u < acc:
                emit_idx = j
                break
        return Prediction(
            image_id=image.image_id,
            label=DAMAGE_ORDER[emit_idx],
            confidence=row[emit_idx],
            model_id="stub-damage",
            produced_at=_now(),
        )


# -- remote inference --------------------------------------------------------


@dataclass(frozen=True)
class RemoteModelConfig:
    url: str
    model: str  # "relevance" | "damage"
    max_batch: int = 16
    timeout: float = 10.0
    max_in_flight: int = 4

    def __post_init__(self):
        if self.model not in ("relevance", "damage"):
            raise ValueError(f"unknown model {self.model!r}")


@dataclass(frozen=True)
class RemoteItem:
    image_id: str
    data: bytes | None = None
    feature: tuple[float, ...] | None = None

    def payload(self) -> dict:
        body = {"image_id": self.image_id}
        if self.feature is not None:
            body["feature"] = list(self.feature)
        elif self.data is not None:
            body["bytes_b64"] = base64.b64encode(self.data).decode("ascii")
        return body


_LABELS_BY_MODEL = {
    "relevance": {l.value: l for l in RelevanceLabel},
    "damage": {l.value: l for l in DamageLabel},
}


def remote_classify(
    batch: Sequence[RemoteItem],
    endpoint: RemoteModelConfig,
    session: requests.Session | None = None,
) -> list[Prediction | InferenceError]:
    """Classify a batch over HTTP; one outcome per input, order-aligned.

    Transport failure is retried once, then becomes a stage error for the
    whole batch. Per-item response problems (missing item, out-of-range
    confidence, unknown label) become per-item stage errors.
    """
    if len(batch) > endpoint.max_batch:
        raise ValueError(f"batch of {len(batch)} exceeds max {endpoint.max_batch}")
    session = session or requests.Session()
    body = {"model": endpoint.model, "items": [item.payload() for item in batch]}
    stage = f"remote-{endpoint.model}"
    last_error = None
    for _ in range(2):
        try:
            resp = session.post(endpoint.url, json=body, timeout=endpoint.timeout)
            resp.raise_for_status()
            payload = resp.json()
            break
        except (requests.RequestException, ValueError) as exc:
            last_error = exc
    else:
        return [
            InferenceError(item.image_id, stage, f"transport failure: {last_error}")
            for item in batch
        ]

    by_id = {}
    for item in payload.get("items", []):
        if isinstance(item, dict) and "image_id" in item:
            by_id[item["image_id"]] = item
    labels = _LABELS_BY_MODEL[endpoint.model]
    produced_at = _now()
    results: list[Prediction | InferenceError] = []
    for item in batch:
        got = by_id.get(item.image_id)
        if got is None:
            results.append(InferenceError(item.image_id, stage, "missing from response"))
            continue
        label = labels.get(got.get("label"))
        if label is None:
            results.append(
                InferenceError(item.image_id, stage, f"unknown label {got.get('label')!r}")
            )
            continue
        confidence = got.get("confidence")
        if not isinstance(confidence, (int, float)) or not 0.0 <= confidence <= 1.0:
            results.append(
                InferenceError(
                    item.image_id, stage, f"confidence {confidence!r} outside [0, 1]"
                )
            )
            continue
        results.append(
            Prediction(
                image_id=item.image_id,
                label=label,
                confidence=float(confidence),
                model_id=f"remote-{endpoint.model}",
                produced_at=produced_at,
            )
        )
    return results


class RemoteAdapter:
    """InferenceAdapter backed by remote model endpoints.

    Single-image calls go out as batches of one; in-flight batches are
    bounded per endpoint.
    """

    def __init__(
        self,
        relevance: RemoteModelConfig,
        damage: RemoteModelConfig,
        session: requests.Session | None = None,
    ):
        self._relevance = relevance
        self._damage = damage
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(
            max(relevance.max_in_flight, damage.max_in_flight)
        )

    def _classify(self, image: ImageRecord, endpoint: RemoteModelConfig) -> Prediction:
        item = RemoteItem(image_id=image.image_id, data=image.data)
        with self._slots:
            (result,) = remote_classify([item], endpoint, session=self._session)
        if isinstance(result, InferenceError):
            raise result
        return result

    def classify_relevance(self, image: ImageRecord) -> Prediction:
        return self._classify(image, self._relevance)

    def classify_damage(self, image: ImageRecord) -> Prediction:
        return self._classify(image, self._damage)


def classify_relevance(image: ImageRecord, adapter: InferenceAdapter) -> Prediction:
    return adapter.classify_relevance(image)


def classify_damage(image: ImageRecord, adapter: InferenceAdapter) -> Prediction:
    return adapter.classify_damage(image)

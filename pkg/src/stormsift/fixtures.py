"""Deterministic fixture generators.

Two kinds of bundled data drive demos and regression tests:

* a synthetic replay corpus (tweet stream + fetch manifest) whose scale,
  duplicate structure and stub error rates are configurable, and
* the 29,136-task human verification campaign recorded during the 2019
  Hurricane Dorian activation, reduced to its judgment-by-judgment export so
  the evaluation mathematics can be checked against the published outcome.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterator

import numpy as np

from .hitl import JudgmentExport, Verdict
from .inference import DamageLabel, DEPLOYMENT_DAMAGE_CONFUSION

# Whole-corpus accounting observed during the deployment (13-day collection).
DEPLOYMENT_STATS = {
    "total_tweets": 6_890_106,
    "unique_urls": 280_063,
    "downloaded": 279_819,
    "failed": 244,
    "unique_images": 119_767,
    "duplicate_images": 160_052,
    "relevant": 77_580,
    "not_relevant": 202_239,
    "with_damage": 26_386,
    "severe": 11_044,
    "mild": 15_342,
    "no_damage": 253_433,
}

# Severity-task cross-tabulation of expert verdicts vs machine labels,
# (human, machine) -> count over the 28,050 judged-and-usable tasks.
DEPLOYMENT_TERNARY_CELLS: dict[tuple[str, str], int] = {
    ("severe", "severe"): 710,
    ("severe", "mild"): 384,
    ("severe", "none"): 357,
    ("mild", "severe"): 113,
    ("mild", "mild"): 881,
    ("mild", "none"): 355,
    ("none", "severe"): 721,
    ("none", "mild"): 5_233,
    ("none", "none"): 19_296,
}

DEPLOYMENT_DONT_KNOW = 1_086
DEPLOYMENT_ANALYZED = 29_136
DEPLOYMENT_ASSESSORS = 28

_CAMPAIGN_START = datetime(2019, 9, 6, 20, 0, tzinfo=timezone.utc)


def deployment_judgments() -> Iterator[JudgmentExport]:
    """The deployment campaign as judgment export records.

    Counts per (human, machine) pair match the recorded cross-tabulation
    exactly; ids, assessors and timestamps are synthesized deterministically.
    """
    idx = 0

    def build(machine: str, verdict: Verdict, severity: str | None) -> JudgmentExport:
        nonlocal idx
        image_id = f"img{idx:06d}"
        record = JudgmentExport(
            task_id=f"task-{image_id}",
            image_id=image_id,
            machine_damage=DamageLabel(machine),
            verdict=verdict,
            severity=DamageLabel(severity) if severity else None,
            assessor_id=f"assessor-{idx % DEPLOYMENT_ASSESSORS:02d}",
            dontknow=verdict is Verdict.DONT_KNOW,
            comment=None,
            submitted_at=_CAMPAIGN_START + timedelta(seconds=5 * idx),
        )
        idx += 1
        return record

    for (human, machine), count in DEPLOYMENT_TERNARY_CELLS.items():
        if human == "none":
            verdict, severity = Verdict.NO_DAMAGE, None
        else:
            verdict, severity = Verdict.DAMAGE, human
        for _ in range(count):
            yield build(machine, verdict, severity)
    machines = ("severe", "mild", "none")
    for i in range(DEPLOYMENT_DONT_KNOW):
        yield build(machines[i % 3], Verdict.DONT_KNOW, None)


def write_deployment_judgments(path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for judgment in deployment_judgments():
            fh.write(judgment.to_json() + "\n")
            n += 1
    return n


# -- synthetic replay corpus ---------------------------------------------------


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 7
    n_tweets: int = 2_000
    n_unique_images: int = 700
    n_duplicate_images: int = 460
    n_failures: int = 40
    dimension: int = 64
    distance_threshold: float = 20.0
    junk_fraction: float = 0.15
    damage_split: tuple[float, float, float] = (0.25, 0.25, 0.50)
    relevance_flip_rate: float = 0.02
    stub_seed: int = 11
    start: datetime = datetime(2019, 8, 30, tzinfo=timezone.utc)
    days: int = 5
    keyword_miss_rate: float = 0.05
    malformed_lines: int = 4
    shared_file_pairs: int = 2
    bucket_hours: float = 24.0

    @property
    def n_images(self) -> int:
        return self.n_unique_images + self.n_duplicate_images + self.n_failures


@dataclass(frozen=True)
class CorpusPaths:
    tweets: Path
    manifest: Path
    config: Path
    root: Path


_TEXT_TEMPLATES = (
    "Latest update on Hurricane Dorian, stay safe everyone",
    "#HurricaneDorian making landfall, praying for the Bahamas",
    "Dorian damage reports coming in from the coast",
    "Sharing photos after Dorian passed through",
    "PuertoRico bracing for the storm surge tonight",
)
_OFFTOPIC_TEXTS = (
    "Sunny day at the beach, perfect weather",
    "New coffee shop opened downtown, great espresso",
    "Match day! Who else is watching tonight?",
)
_FAIL_REASONS = ("NotFound", "Timeout", "ConnectionError", "HostError", "Other")


def generate_corpus(out_dir: str | Path, spec: CorpusSpec = CorpusSpec()) -> CorpusPaths:
    """Write tweets.jsonl, manifest.jsonl, shared image files and config.toml.

    Feature geometry guarantees the intended clustering: cluster seeds are
    spread far apart relative to the threshold while variants stay within
    0.45 * threshold of their seed, so any in-group pair is a duplicate and
    any cross-group pair is not, regardless of arrival order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(spec.seed)
    np_rng = np.random.default_rng(spec.seed)

    dim = spec.dimension
    bases = np_rng.uniform(0.0, 300.0, size=(spec.n_unique_images, dim))

    def truth_for(group: int) -> tuple[str, str | None]:
        r = random.Random((spec.seed, "truth", group).__repr__())
        if r.random() < spec.junk_fraction:
            return "junk", None
        u = r.random()
        s, m, _ = spec.damage_split
        if u < s:
            return "relevant", "severe"
        if u < s + m:
            return "relevant", "mild"
        return "relevant", "none"

    rows: list[dict] = []

    def url_for(tag: str, i: int) -> str:
        return f"https://img.example/{tag}{i:06d}.jpg"

    for g in range(spec.n_unique_images):
        relevance, damage = truth_for(g)
        rows.append(
            {
                "url": url_for("u", g),
                "file": None,
                "feature": [round(x, 6) for x in bases[g]],
                "fail_as": None,
                "stub_relevance": relevance,
                "stub_damage": damage,
            }
        )
    for d in range(spec.n_duplicate_images):
        g = rng.randrange(spec.n_unique_images)
        direction = np_rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        radius = rng.uniform(1.0, 0.45 * spec.distance_threshold)
        vec = bases[g] + radius * direction
        relevance, damage = truth_for(g)
        rows.append(
            {
                "url": url_for("d", d),
                "file": None,
                "feature": [round(x, 6) for x in vec],
                "fail_as": None,
                "stub_relevance": relevance,
                "stub_damage": damage,
            }
        )
    for f in range(spec.n_failures):
        rows.append(
            {
                "url": url_for("f", f),
                "file": None,
                "feature": None,
                "fail_as": _FAIL_REASONS[f % len(_FAIL_REASONS)],
                "stub_relevance": None,
                "stub_damage": None,
            }
        )

    # Byte-identical content reached through different URLs: pairs of rows
    # sharing one file (and therefore one feature row).
    images_dir = out / "images"
    if spec.shared_file_pairs:
        images_dir.mkdir(exist_ok=True)
    for p in range(spec.shared_file_pairs if spec.n_unique_images else 0):
        payload = f"shared-image-payload-{spec.seed}-{p}".encode() * 8
        fname = f"images/shared{p}.bin"
        (out / fname).write_bytes(payload)
        g = p % spec.n_unique_images
        feature = [round(x, 6) for x in bases[g]]
        relevance, damage = truth_for(g)
        for side in ("a", "b"):
            rows.append(
                {
                    "url": f"https://img.example/shared{p}{side}.jpg",
                    "file": fname,
                    "feature": feature,
                    "fail_as": None,
                    "stub_relevance": relevance,
                    "stub_damage": damage,
                }
            )

    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    # Tweet stream: every manifest URL is referenced at least once by a
    # keyword-matching tweet; popular URLs get retweet-style repeats, some
    # with earlier timestamps than their first stream appearance.
    span = timedelta(days=spec.days)
    tweets: list[dict] = []
    tid = 0

    def ts() -> datetime:
        return spec.start + timedelta(seconds=rng.uniform(0, span.total_seconds()))

    def add_tweet(urls: list[str], matching: bool, when: datetime | None = None) -> None:
        nonlocal tid
        text = rng.choice(_TEXT_TEMPLATES if matching else _OFFTOPIC_TEXTS)
        tweets.append(
            {
                "tweet_id": f"t{tid:08d}",
                "created_at": (when or ts()).isoformat(),
                "text": text,
                "author_id": f"author{rng.randrange(500):04d}",
                "image_urls": urls,
                "is_retweet": rng.random() < 0.4,
            }
        )
        tid += 1

    urls = [row["url"] for row in rows]
    for url in urls:
        add_tweet([url], matching=True)
    extra = max(0, spec.n_tweets - len(tweets))
    for _ in range(extra):
        roll = rng.random()
        if roll < spec.keyword_miss_rate:
            add_tweet([rng.choice(urls)] if rng.random() < 0.5 else [], matching=False)
        elif roll < 0.25:
            add_tweet([], matching=True)
        elif roll < 0.35:
            # invalid media URL exercises the canonicalization drop counter
            add_tweet([rng.choice(urls), "not a url"], matching=True)
        else:
            k = 1 if rng.random() < 0.8 else 2
            add_tweet([rng.choice(urls) for _ in range(k)], matching=True)
    rng.shuffle(tweets)

    tweets_path = out / "tweets.jsonl"
    with open(tweets_path, "w", encoding="utf-8") as fh:
        positions = (
            set(rng.sample(range(len(tweets)), min(spec.malformed_lines, len(tweets))))
            if spec.malformed_lines
            else set()
        )
        for i, tweet in enumerate(tweets):
            if i in positions:
                fh.write('{"tweet_id": "truncated", "created_at": \n')
            fh.write(json.dumps(tweet, sort_keys=True) + "\n")

    config_path = out / "config.toml"
    confusion_rows = ",\n    ".join(
        "[" + ", ".join(f"{p:.12f}" for p in row) + "]"
        for row in DEPLOYMENT_DAMAGE_CONFUSION
    )
    config_path.write_text(
        "[dedup]\n"
        f"dimension = {dim}\n"
        f"distance_threshold = {spec.distance_threshold}\n"
        "\n[stub]\n"
        f"seed = {spec.stub_seed}\n"
        f"relevance_flip_rate = {spec.relevance_flip_rate}\n"
        "damage_confusion = [\n"
        f"    {confusion_rows}\n"
        "]\n"
        "\n[pipeline]\n"
        f"bucket_hours = {spec.bucket_hours}\n"
        "queue_capacity = 1024\n",
        encoding="utf-8",
    )
    return CorpusPaths(tweets=tweets_path, manifest=manifest_path, config=config_path, root=out)

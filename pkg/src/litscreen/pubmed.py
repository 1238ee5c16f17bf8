"""Fetching article metadata (title, abstract, publication types) by PMID.

Two transports share one interface: ``EutilsTransport`` talks to the NCBI
efetch endpoint with polite rate limiting, ``FixtureTransport`` serves
pre-downloaded XML files from a directory so everything downstream runs
offline and deterministically.  ``fetch_articles`` drives either one and
never raises for a bad id or a failed batch; problems come back as
``FetchFailure`` values next to the successful records.
"""

from __future__ import annotations

import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence
from xml.etree import ElementTree

import requests

from .corpus import Article, CorpusError, CriterionRatings, StopRule, parse_rating

__all__ = [
    "FetchRecord",
    "FetchFailure",
    "EutilsTransport",
    "FixtureTransport",
    "parse_efetch_xml",
    "fetch_articles",
    "records_to_articles",
]

_PMID_RE = re.compile(r"^\d{1,9}$")

EUTILS_EFETCH_URL = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/efetch.fcgi"


@dataclass(frozen=True)
class FetchRecord:
    """One successfully retrieved article's raw metadata."""

    id: str
    title: str
    abstract: str
    pt_tags: tuple[str, ...]
    fetched_at: datetime

    def to_article_fields(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "abstract": self.abstract,
            "pt_tags": self.pt_tags,
        }


@dataclass(frozen=True)
class FetchFailure:
    """Why one requested id produced no record."""

    id: str
    reason: str


class EutilsTransport:
    """POSTs id batches to the NCBI efetch endpoint.

    Requests are serialized and spaced at least ``min_interval`` seconds
    apart (the unauthenticated service limit is three per second)."""

    def __init__(
        self,
        base_url: str = EUTILS_EFETCH_URL,
        tool: str = "litscreen",
        email: str | None = None,
        min_interval: float = 1.0 / 3.0,
        timeout: float = 30.0,
        batch_size: int = 200,
    ) -> None:
        self.base_url = base_url
        self.tool = tool
        self.email = email
        self.min_interval = float(min_interval)
        self.timeout = float(timeout)
        self.batch_size = int(batch_size)
        self._lock = threading.Lock()
        self._last_request: float | None = None

    def _throttle(self) -> None:
        with self._lock:
            now = time.monotonic()
            if self._last_request is not None:
                wait = self.min_interval - (now - self._last_request)
                if wait > 0:
                    time.sleep(wait)
            self._last_request = time.monotonic()

    def fetch_batch(self, ids: Sequence[str]) -> bytes:
        self._throttle()
        params = {
            "db": "pubmed",
            "retmode": "xml",
            "id": ",".join(ids),
            "tool": self.tool,
        }
        if self.email:
            params["email"] = self.email
        response = requests.post(self.base_url, data=params, timeout=self.timeout)
        response.raise_for_status()
        return response.content


class FixtureTransport:
    """Serves ``<PMID>.xml`` files from a directory, one id per call."""

    batch_size = 1

    def __init__(self, directory) -> None:
        self.directory = Path(directory)

    def fetch_batch(self, ids: Sequence[str]) -> bytes:
        if len(ids) != 1:
            raise ValueError(f"fixture transport serves one id at a time, got {len(ids)}")
        return (self.directory / f"{ids[0]}.xml").read_bytes()


def _element_text(element) -> str:
    # itertext flattens inline markup like <i> or <sup> inside titles
    return "".join(element.itertext()).strip()


def parse_efetch_xml(data: bytes) -> list[dict]:
    """Extract id/title/abstract/pt_tags dicts from an efetch XML document.

    Multi-segment abstracts (Background/Methods/... sections) are joined
    with single spaces; publication type strings are kept verbatim.
    """
    root = ElementTree.fromstring(data)
    out = []
    for citation in root.iter("MedlineCitation"):
        pmid = citation.findtext("PMID", default="").strip()
        article = citation.find("Article")
        if not pmid or article is None:
            continue
        title_el = article.find("ArticleTitle")
        title = _element_text(title_el) if title_el is not None else ""
        segments = [
            _element_text(seg) for seg in article.findall(".//Abstract/AbstractText")
        ]
        abstract = " ".join(s for s in segments if s)
        pt_tags = tuple(
            _element_text(pt)
            for pt in article.findall(".//PublicationTypeList/PublicationType")
            if _element_text(pt)
        )
        out.append(
            {"id": pmid, "title": title, "abstract": abstract, "pt_tags": pt_tags}
        )
    return out


def _batched(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def fetch_articles(
    ids: Sequence[str],
    transport,
    now: datetime | None = None,
) -> tuple[list[FetchRecord], list[FetchFailure]]:
    """Retrieve metadata for ``ids``, splitting outcomes per id.

    Ids that are not plain PMIDs fail up front without touching the
    transport; a failed or incomplete batch fails only its own ids.  Pass
    ``now`` to pin the ``fetched_at`` stamps.
    """
    records: list[FetchRecord] = []
    failures: list[FetchFailure] = []
    stamp = now or datetime.now(timezone.utc)
    valid: list[str] = []
    seen: set[str] = set()
    for raw in ids:
        pmid = str(raw).strip()
        if not _PMID_RE.match(pmid):
            failures.append(FetchFailure(id=pmid, reason="invalid id: not a PMID"))
        elif pmid in seen:
            failures.append(FetchFailure(id=pmid, reason="duplicate id in request"))
        else:
            seen.add(pmid)
            valid.append(pmid)
    for batch in _batched(valid, int(transport.batch_size)):
        try:
            payload = transport.fetch_batch(batch)
            parsed = {entry["id"]: entry for entry in parse_efetch_xml(payload)}
        except Exception as exc:
            reason = f"{type(exc).__name__}: {exc}"
            failures.extend(FetchFailure(id=pmid, reason=reason) for pmid in batch)
            continue
        for pmid in batch:
            entry = parsed.get(pmid)
            if entry is None:
                failures.append(FetchFailure(id=pmid, reason="no record in response"))
            else:
                records.append(
                    FetchRecord(
                        id=entry["id"],
                        title=entry["title"],
                        abstract=entry["abstract"],
                        pt_tags=entry["pt_tags"],
                        fetched_at=stamp,
                    )
                )
    return records, failures


def records_to_articles(
    records: Sequence[FetchRecord],
    ratings: Mapping[str, Mapping[str, str]] | None = None,
    stop_rule: StopRule | None = None,
) -> list[Article]:
    """Turn fetched records into corpus articles, attaching sidecar ratings.

    ``ratings`` maps id -> {criterion: wire value}; records without an
    entry stay fully unrated.  A sidecar id that matches no record is an
    error (a silent typo there would quietly drop gold labels).
    """
    ratings = dict(ratings or {})
    rule = stop_rule or StopRule()
    known = {r.id for r in records}
    unknown = sorted(set(ratings) - known)
    if unknown:
        raise ValueError(f"ratings refer to unfetched ids: {', '.join(unknown)}")
    articles = []
    for record in records:
        sidecar = ratings.get(record.id)
        if sidecar is None:
            parsed = CriterionRatings()
        else:
            try:
                parsed = CriterionRatings(
                    **{c: parse_rating(c, v) for c, v in sidecar.items()}
                )
            except (CorpusError, TypeError) as exc:
                raise CorpusError(f"article {record.id}: {exc}") from None
        try:
            rule.validate(parsed)
        except CorpusError as exc:
            raise CorpusError(f"article {record.id}: {exc}") from None
        articles.append(Article(ratings=parsed, **record.to_article_fields()))
    return articles

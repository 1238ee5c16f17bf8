"""Data model for articles rated against a sequence of screening criteria.

An article carries a title, an abstract, optional publication-type tags, and
one rating per criterion.  Criteria are rated in a fixed order (format,
health/human condition, purpose, rigor); an annotator may stop early, in
which case every downstream criterion is left unrated.  A positive-class
definition is a conjunction of per-criterion accept sets, and a corpus can
be filtered to the sub-population matching any such conjunction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Iterator, Mapping, Sequence

__all__ = [
    "CRITERIA",
    "Format",
    "TriState",
    "Purpose",
    "CriterionRatings",
    "Article",
    "Corpus",
    "CorpusError",
    "StopRule",
    "CriteriaSpec",
    "default_positive_spec",
    "del_fiol_subset_spec",
    "derive_label",
    "derive_labels",
    "filter_subset",
    "load_corpus",
    "write_corpus",
    "article_from_record",
    "article_to_record",
]

#: Criterion names in annotation order.  Rating always proceeds left to
#: right; an early stop leaves the remaining criteria unrated.
CRITERIA: tuple[str, ...] = ("format", "hhc", "purpose", "rigor")


class CorpusError(ValueError):
    """Raised for malformed records, duplicate ids, or infeasible requests."""


class Format(str, Enum):
    """Publication format of an article."""

    ORIGINAL = "Original"
    REVIEW = "Review"
    CASE_REPORT = "CaseReport"
    GENERAL_MISC = "GeneralMisc"
    BLANK = "Blank"
    UNRATED = "unrated"


class TriState(str, Enum):
    """A yes/no criterion that may also be left unrated."""

    TRUE = "True"
    FALSE = "False"
    UNRATED = "unrated"


class Purpose(str, Enum):
    """Study purpose of an article."""

    TREATMENT = "Treatment"
    DIAGNOSIS = "Diagnosis"
    PROGNOSIS = "Prognosis"
    ETIOLOGY = "Etiology"
    COSTS_ECONOMICS = "CostsEconomics"
    PREDICTION = "Prediction"
    QUALITATIVE = "Qualitative"
    OTHER = "Other"
    UNRATED = "unrated"


#: Criterion name -> enum type holding its values.
CRITERION_TYPES: dict[str, type[Enum]] = {
    "format": Format,
    "hhc": TriState,
    "purpose": Purpose,
    "rigor": TriState,
}


def _unrated(enum_cls: type[Enum]) -> Enum:
    return enum_cls["UNRATED"]


def parse_rating(criterion: str, raw: str) -> Enum:
    """Parse a rating value case-insensitively; raise ``CorpusError`` otherwise."""
    enum_cls = CRITERION_TYPES[criterion]
    if isinstance(raw, str):
        folded = raw.strip().lower()
        for member in enum_cls:
            if member.value.lower() == folded:
                return member
    valid = ", ".join(m.value for m in enum_cls)
    raise CorpusError(f"invalid {criterion} rating {raw!r} (expected one of: {valid})")


@dataclass(frozen=True)
class CriterionRatings:
    """One rating per criterion, ``unrated`` where annotation stopped short."""

    format: Format = Format.UNRATED
    hhc: TriState = TriState.UNRATED
    purpose: Purpose = Purpose.UNRATED
    rigor: TriState = TriState.UNRATED

    def get(self, criterion: str) -> Enum:
        if criterion not in CRITERIA:
            raise KeyError(f"unknown criterion {criterion!r}")
        return getattr(self, criterion)

    def is_rated(self, criterion: str) -> bool:
        value = self.get(criterion)
        return value is not _unrated(type(value))


@dataclass(frozen=True)
class StopRule:
    """Which rating values end annotation early.

    By default only a ``GeneralMisc`` format stops rating.  Independently of
    the configured stop sets, an unrated criterion always implies every
    downstream criterion is unrated; :meth:`validate` enforces both.
    """

    format_stops: frozenset[Format] = frozenset({Format.GENERAL_MISC})
    hhc_stops: frozenset[TriState] = frozenset()
    purpose_stops: frozenset[Purpose] = frozenset()

    def stop_set(self, criterion: str) -> frozenset:
        return {
            "format": self.format_stops,
            "hhc": self.hhc_stops,
            "purpose": self.purpose_stops,
            "rigor": frozenset(),
        }[criterion]

    def validate(self, ratings: CriterionRatings) -> None:
        """Raise ``CorpusError`` if ``ratings`` violate the stop protocol."""
        stopped_by: str | None = None
        for criterion in CRITERIA:
            value = ratings.get(criterion)
            rated = ratings.is_rated(criterion)
            if stopped_by is not None and rated:
                raise CorpusError(
                    f"{criterion} is rated {value.value!r} although rating "
                    f"stopped at {stopped_by}"
                )
            if not rated:
                stopped_by = stopped_by or f"unrated {criterion}"
            elif value in self.stop_set(criterion):
                stopped_by = f"{criterion}={value.value}"


@dataclass(frozen=True)
class Article:
    """A single document with its criterion ratings."""

    id: str
    title: str
    abstract: str = ""
    pt_tags: tuple[str, ...] = ()
    ratings: CriterionRatings = field(default_factory=CriterionRatings)

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise CorpusError("article id must be a non-empty string")
        if not isinstance(self.title, str) or not self.title.strip():
            raise CorpusError(f"article {self.id!r}: title must be non-empty")
        object.__setattr__(self, "pt_tags", tuple(self.pt_tags))


@dataclass(frozen=True)
class Corpus:
    """An ordered, duplicate-free collection of articles."""

    articles: tuple[Article, ...]
    provenance: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "articles", tuple(self.articles))
        seen: set[str] = set()
        for article in self.articles:
            if article.id in seen:
                raise CorpusError(f"duplicate article id {article.id!r}")
            seen.add(article.id)

    def __len__(self) -> int:
        return len(self.articles)

    def __iter__(self) -> Iterator[Article]:
        return iter(self.articles)

    def __getitem__(self, index: int) -> Article:
        return self.articles[index]

    def ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.articles)


def _as_accept_set(criterion: str, values: Iterable) -> frozenset:
    enum_cls = CRITERION_TYPES[criterion]
    out = set()
    for v in values:
        out.add(v if isinstance(v, enum_cls) else parse_rating(criterion, v))
    if not out:
        raise CorpusError(f"empty accept set for {criterion}")
    return frozenset(out)


@dataclass(frozen=True)
class CriteriaSpec:
    """A conjunction of per-criterion accept sets.

    An article matches iff its rating for *every* criterion lies in that
    criterion's accept set.  Unrated matches only where ``unrated`` is
    explicitly accepted.  The same type expresses both positive-class
    definitions and corpus subset constraints.
    """

    format_accept: frozenset[Format]
    hhc_accept: frozenset[TriState]
    purpose_accept: frozenset[Purpose]
    rigor_accept: frozenset[TriState]

    def __post_init__(self) -> None:
        for criterion in CRITERIA:
            object.__setattr__(
                self,
                f"{criterion}_accept",
                _as_accept_set(criterion, getattr(self, f"{criterion}_accept")),
            )

    def accept_set(self, criterion: str) -> frozenset:
        if criterion not in CRITERIA:
            raise KeyError(f"unknown criterion {criterion!r}")
        return getattr(self, f"{criterion}_accept")

    def accepts(self, ratings: CriterionRatings) -> bool:
        return all(ratings.get(c) in self.accept_set(c) for c in CRITERIA)

    def to_dict(self) -> dict[str, list[str]]:
        return {
            c: sorted(m.value for m in self.accept_set(c)) for c in CRITERIA
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Iterable]) -> "CriteriaSpec":
        unknown = set(data) - set(CRITERIA)
        if unknown:
            raise CorpusError(f"unknown criteria in spec: {sorted(unknown)}")
        kwargs = {}
        for criterion in CRITERIA:
            if criterion not in data:
                raise CorpusError(f"criteria spec missing {criterion!r}")
            kwargs[f"{criterion}_accept"] = _as_accept_set(criterion, data[criterion])
        return cls(**kwargs)


def default_positive_spec() -> CriteriaSpec:
    """Scientifically sound treatment studies: the default screening target."""
    return CriteriaSpec(
        format_accept=frozenset({Format.ORIGINAL}),
        hhc_accept=frozenset({TriState.TRUE}),
        purpose_accept=frozenset({Purpose.TREATMENT}),
        rigor_accept=frozenset({TriState.TRUE}),
    )


def del_fiol_subset_spec() -> CriteriaSpec:
    """Subset constraint matching the evaluation population of Del Fiol et
    al. (2018): format Original/Review/Blank, rated HHC and rigor, any
    purpose."""
    rated_purposes = frozenset(p for p in Purpose if p is not Purpose.UNRATED)
    return CriteriaSpec(
        format_accept=frozenset({Format.ORIGINAL, Format.REVIEW, Format.BLANK}),
        hhc_accept=frozenset({TriState.TRUE, TriState.FALSE}),
        purpose_accept=rated_purposes,
        rigor_accept=frozenset({TriState.TRUE, TriState.FALSE}),
    )


def derive_label(article: Article, spec: CriteriaSpec) -> bool:
    """True iff the article's gold ratings satisfy the conjunction."""
    return spec.accepts(article.ratings)


def derive_labels(articles: Iterable[Article], spec: CriteriaSpec):
    """Vector of conjunction labels, aligned with ``articles`` order."""
    import numpy as np

    return np.array([derive_label(a, spec) for a in articles], dtype=bool)


def filter_subset(corpus: Corpus, constraint: CriteriaSpec) -> Corpus:
    """Keep the articles whose ratings satisfy ``constraint``; order preserved."""
    kept = tuple(a for a in corpus if constraint.accepts(a.ratings))
    return Corpus(articles=kept, provenance=corpus.provenance)


# ---------------------------------------------------------------------------
# Line-delimited JSON interchange.
#
# One object per line: {"id", "title", "abstract", "pt_tags", "format",
# "hhc", "purpose", "rigor"}, with the string "unrated" for criteria the
# annotator never reached.


def article_from_record(
    record: Mapping, stop_rule: StopRule | None = None, where: str = "record"
) -> Article:
    if not isinstance(record, Mapping):
        raise CorpusError(f"{where}: expected a JSON object, got {type(record).__name__}")
    raw_id = record.get("id")
    if isinstance(raw_id, int):
        raw_id = str(raw_id)
    if not isinstance(raw_id, str) or not raw_id:
        raise CorpusError(f"{where}: missing or empty id")
    title = record.get("title")
    if not isinstance(title, str) or not title.strip():
        raise CorpusError(f"{where}: article {raw_id!r} has no title")
    abstract = record.get("abstract", "")
    if abstract is None:
        abstract = ""
    if not isinstance(abstract, str):
        raise CorpusError(f"{where}: abstract must be a string")
    tags = record.get("pt_tags", [])
    if tags is None:
        tags = []
    if not isinstance(tags, (list, tuple)) or not all(isinstance(t, str) for t in tags):
        raise CorpusError(f"{where}: pt_tags must be a list of strings")
    ratings_kwargs = {}
    for criterion in CRITERIA:
        raw = record.get(criterion, "unrated")
        try:
            ratings_kwargs[criterion] = parse_rating(criterion, raw)
        except CorpusError as exc:
            raise CorpusError(f"{where}: {exc}") from None
    ratings = CriterionRatings(**ratings_kwargs)
    if stop_rule is not None:
        try:
            stop_rule.validate(ratings)
        except CorpusError as exc:
            raise CorpusError(f"{where}: article {raw_id!r}: {exc}") from None
    return Article(
        id=raw_id,
        title=title,
        abstract=abstract,
        pt_tags=tuple(tags),
        ratings=ratings,
    )


def article_to_record(article: Article) -> dict:
    return {
        "id": article.id,
        "title": article.title,
        "abstract": article.abstract,
        "pt_tags": list(article.pt_tags),
        "format": article.ratings.format.value,
        "hhc": article.ratings.hhc.value,
        "purpose": article.ratings.purpose.value,
        "rigor": article.ratings.rigor.value,
    }


def load_corpus(
    path,
    stop_rule: StopRule | None = None,
    on_error: str = "raise",
    diagnostics: list[str] | None = None,
) -> Corpus:
    """Read a line-delimited JSON corpus.

    ``stop_rule`` defaults to the standard protocol (GeneralMisc stops).
    With ``on_error="raise"`` the first malformed line aborts with its line
    number; with ``on_error="skip"`` bad lines are dropped and a message per
    line is appended to ``diagnostics`` when given.
    """
    if on_error not in ("raise", "skip"):
        raise ValueError(f"on_error must be 'raise' or 'skip', got {on_error!r}")
    if stop_rule is None:
        stop_rule = StopRule()
    articles: list[Article] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            where = f"line {lineno}"
            try:
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{where}: malformed JSON: {exc}") from None
                article = article_from_record(record, stop_rule, where)
                if article.id in seen:
                    raise CorpusError(
                        f"{where}: duplicate article id {article.id!r} "
                        f"(first seen on line {seen[article.id]})"
                    )
            except CorpusError as exc:
                if on_error == "raise":
                    raise
                if diagnostics is not None:
                    diagnostics.append(str(exc))
                continue
            seen[article.id] = lineno
            articles.append(article)
    return Corpus(articles=tuple(articles), provenance=str(path))


def write_corpus(corpus_or_articles, path) -> None:
    """Write articles as line-delimited JSON, one canonical record per line."""
    with open(path, "w", encoding="utf-8") as handle:
        for article in corpus_or_articles:
            handle.write(json.dumps(article_to_record(article), ensure_ascii=False))
            handle.write("\n")

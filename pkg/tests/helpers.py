"""Shared test-building helpers."""

from litscreen.corpus import Article, CriterionRatings, parse_rating


def make_article(
    id="a1",
    title="A study of outcomes",
    abstract="",
    pt_tags=(),
    format="unrated",
    hhc="unrated",
    purpose="unrated",
    rigor="unrated",
):
    """Build an article from wire-format rating strings, no stop-rule check."""
    ratings = CriterionRatings(
        format=parse_rating("format", format),
        hhc=parse_rating("hhc", hhc),
        purpose=parse_rating("purpose", purpose),
        rigor=parse_rating("rigor", rigor),
    )
    return Article(
        id=id, title=title, abstract=abstract, pt_tags=tuple(pt_tags), ratings=ratings
    )

"""Tests for metadata fetching: parsing, transports, failure accounting."""

from datetime import datetime, timezone
from pathlib import Path

import pytest

import litscreen.pubmed as pubmed_mod
from litscreen.corpus import CorpusError, Format, Purpose, TriState
from litscreen.pubmed import (
    EutilsTransport,
    FetchFailure,
    FixtureTransport,
    fetch_articles,
    parse_efetch_xml,
    records_to_articles,
)

FIXTURES = Path(__file__).parent / "fixtures" / "pubmed"
NOW = datetime(2024, 5, 1, 12, 0, tzinfo=timezone.utc)


class _FailTransport:
    """Proves a code path never touches the network."""

    batch_size = 50

    def fetch_batch(self, ids):
        raise AssertionError(f"unexpected transport use for {ids}")


class TestParseEfetchXml:
    """Pulling fields out of efetch XML documents."""

    def test_multi_record_document(self):
        entries = parse_efetch_xml((FIXTURES / "31000001.xml").read_bytes())
        assert [e["id"] for e in entries] == ["31000001", "31000002"]

    def test_inline_markup_flattened_in_title(self):
        entry = parse_efetch_xml((FIXTURES / "31000001.xml").read_bytes())[0]
        assert (
            entry["title"]
            == "Mesh repair versus suture for inguinal hernia: a randomized trial of tension-free technique."
        )

    def test_abstract_segments_joined_with_single_spaces(self):
        entry = parse_efetch_xml((FIXTURES / "31000001.xml").read_bytes())[0]
        assert entry["abstract"] == (
            "Recurrence after primary repair remains common. "
            "We randomized 440 adults to mesh or suture repair. "
            "Recurrence at two years was 2.1% versus 7.9%."
        )

    def test_publication_types_kept_verbatim(self):
        entry = parse_efetch_xml((FIXTURES / "31000001.xml").read_bytes())[0]
        assert entry["pt_tags"] == ("Randomized Controlled Trial", "Journal Article")

    def test_missing_abstract_becomes_empty_string(self):
        entry = parse_efetch_xml((FIXTURES / "31000003.xml").read_bytes())[0]
        assert entry["abstract"] == ""
        assert entry["pt_tags"] == ("Comment", "Editorial")

    def test_parse_is_idempotent(self):
        data = (FIXTURES / "31000001.xml").read_bytes()
        assert parse_efetch_xml(data) == parse_efetch_xml(data)


class TestFetchArticles:
    """Driving a transport and splitting per-id outcomes."""

    def test_fixture_round_trip_with_pinned_time(self):
        transport = FixtureTransport(FIXTURES)
        records, failures = fetch_articles(
            ["31000002", "31000003"], transport, now=NOW
        )
        assert failures == []
        assert [r.id for r in records] == ["31000002", "31000003"]
        assert all(r.fetched_at == NOW for r in records)
        assert records[0].abstract.startswith("Single paragraph")

    def test_deterministic_given_pinned_time(self):
        transport = FixtureTransport(FIXTURES)
        a = fetch_articles(["31000002"], transport, now=NOW)
        b = fetch_articles(["31000002"], transport, now=NOW)
        assert a == b

    def test_missing_fixture_fails_only_that_id(self):
        records, failures = fetch_articles(
            ["31000002", "40404040"], FixtureTransport(FIXTURES), now=NOW
        )
        assert [r.id for r in records] == ["31000002"]
        assert [f.id for f in failures] == ["40404040"]
        assert "FileNotFoundError" in failures[0].reason

    def test_malformed_payload_fails_only_its_batch(self):
        records, failures = fetch_articles(
            ["31000666", "31000003"], FixtureTransport(FIXTURES), now=NOW
        )
        assert [r.id for r in records] == ["31000003"]
        assert [f.id for f in failures] == ["31000666"]
        assert "ParseError" in failures[0].reason

    def test_invalid_ids_never_reach_the_transport(self):
        records, failures = fetch_articles(
            ["12ab", "", "PMC12345", "12345678901"], _FailTransport(), now=NOW
        )
        assert records == []
        assert len(failures) == 4
        assert all("invalid id" in f.reason for f in failures)

    def test_duplicate_ids_fetched_once(self):
        records, failures = fetch_articles(
            ["31000002", "31000002"], FixtureTransport(FIXTURES), now=NOW
        )
        assert [r.id for r in records] == ["31000002"]
        assert failures == [FetchFailure(id="31000002", reason="duplicate id in request")]

    def test_empty_request(self):
        assert fetch_articles([], _FailTransport(), now=NOW) == ([], [])

    def test_id_present_but_absent_from_response(self):
        class _WrongDoc:
            batch_size = 10

            def fetch_batch(self, ids):
                return (FIXTURES / "31000003.xml").read_bytes()

        records, failures = fetch_articles(["31000002"], _WrongDoc(), now=NOW)
        assert records == []
        assert failures == [FetchFailure(id="31000002", reason="no record in response")]


class TestEutilsTransport:
    """Request formation and rate limiting, with the network stubbed out."""

    class _Response:
        def __init__(self, content):
            self.content = content

        def raise_for_status(self):
            pass

    def test_batches_and_request_params(self, monkeypatch):
        calls = []

        def fake_post(url, data=None, timeout=None):
            calls.append((url, dict(data), timeout))
            return self._Response((FIXTURES / "31000001.xml").read_bytes())

        monkeypatch.setattr(pubmed_mod.requests, "post", fake_post)
        transport = EutilsTransport(min_interval=0.0, batch_size=2, email="x@example.org")
        records, failures = fetch_articles(
            ["31000001", "31000002", "31000003"], transport, now=NOW
        )
        assert len(calls) == 2
        assert calls[0][1]["id"] == "31000001,31000002"
        assert calls[1][1]["id"] == "31000003"
        assert calls[0][1]["db"] == "pubmed"
        assert calls[0][1]["email"] == "x@example.org"
        assert calls[0][0] == pubmed_mod.EUTILS_EFETCH_URL
        assert [r.id for r in records] == ["31000001", "31000002"]
        # third id is not in the canned two-record response
        assert [f.id for f in failures] == ["31000003"]

    def test_rate_limit_sleeps_between_requests(self, monkeypatch):
        sleeps = []
        clock = iter([100.0, 100.0, 100.01, 100.35, 100.35, 100.7])
        monkeypatch.setattr(pubmed_mod.time, "monotonic", lambda: next(clock))
        monkeypatch.setattr(pubmed_mod.time, "sleep", sleeps.append)
        monkeypatch.setattr(
            pubmed_mod.requests,
            "post",
            lambda url, data=None, timeout=None: self._Response(b"<PubmedArticleSet/>"),
        )
        transport = EutilsTransport(min_interval=1 / 3, batch_size=1)
        fetch_articles(["31000001", "31000002"], transport, now=NOW)
        assert len(sleeps) == 1
        assert sleeps[0] == pytest.approx(1 / 3 - 0.01)


class TestRecordsToArticles:
    """Joining fetched metadata with sidecar gold ratings."""

    def fetch(self, ids=("31000002", "31000003")):
        records, failures = fetch_articles(list(ids), FixtureTransport(FIXTURES), now=NOW)
        assert failures == []
        return records

    def test_without_ratings_everything_unrated(self):
        articles = records_to_articles(self.fetch())
        assert [a.id for a in articles] == ["31000002", "31000003"]
        assert all(not a.ratings.is_rated("format") for a in articles)
        assert articles[1].pt_tags == ("Comment", "Editorial")

    def test_sidecar_ratings_attached(self):
        sidecar = {
            "31000002": {
                "format": "Original",
                "hhc": "True",
                "purpose": "CostsEconomics",
                "rigor": "False",
            }
        }
        articles = records_to_articles(self.fetch(), ratings=sidecar)
        rated = {a.id: a for a in articles}
        assert rated["31000002"].ratings.format is Format.ORIGINAL
        assert rated["31000002"].ratings.purpose is Purpose.COSTS_ECONOMICS
        assert rated["31000002"].ratings.rigor is TriState.FALSE
        assert rated["31000003"].ratings.format is Format.UNRATED

    def test_unknown_sidecar_id_rejected(self):
        with pytest.raises(ValueError, match="unfetched ids: 999"):
            records_to_articles(self.fetch(), ratings={"999": {"format": "Original"}})

    def test_invalid_rating_value_names_the_article(self):
        with pytest.raises(CorpusError, match="31000002"):
            records_to_articles(self.fetch(), ratings={"31000002": {"format": "Novel"}})

    def test_stop_rule_enforced(self):
        sidecar = {"31000002": {"format": "GeneralMisc", "hhc": "True"}}
        with pytest.raises(CorpusError, match="31000002"):
            records_to_articles(self.fetch(), ratings=sidecar)

"""
SPARQL validation, term extraction, results parsing, endpoint clients and
description fetching.
"""

import json

import pytest
import requests

from pipelines.descriptions import HttpDescriptionSource, TermCatalog, fetch_descriptions
from pipelines.sparql import (MockSparqlEndpoint, SparqlEndpoint, SparqlQuery, build_term_corpus,
                              canonical_number, extract_terms_from_sparql, get_dialect,
                              parse_results, query_form, validate_sparql)
from server.mock_endpoint import MockSparqlServer
from shared.errors import BackendError, ConfigurationError, SparqlExecutionError, SparqlParseError

XSD = "http://www.w3.org/2001/XMLSchema#"


class FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text if text else json.dumps(payload)

    def json(self):
        if self._payload is None:
            raise ValueError("not json")
        return self._payload


class FakeSession:
    """Replays responses in order; records every request"""

    def __init__(self, *responses):
        self.responses = list(responses)
        self.headers = {}
        self.requests = []

    def _next(self):
        response = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if isinstance(response, Exception):
            raise response
        return response

    def get(self, url, params=None, timeout=None):
        self.requests.append(("GET", url, params))
        return self._next()

    def post(self, url, data=None, timeout=None):
        self.requests.append(("POST", url, data))
        return self._next()


# ----- validation ---------------------------------------------------------------

@pytest.mark.parametrize("query", [
    "SELECT ?answer WHERE { wd:Q42 wdt:P19 ?answer }",
    "ASK {}",
    "PREFIX ex: <http://ex.org/> SELECT ?x WHERE { ex:a ex:b ?x }",
    "SELECT ?x WHERE { { SELECT ?x WHERE { ?x ?p ?o } } } LIMIT 3",
    "SELECT (COUNT(?x) AS ?n) WHERE { ?x wdt:P31 wd:Q5 . FILTER(?x != wd:Q42) }",
])
def test_valid_queries(query):
    assert validate_sparql(query, "wikidata") == []


@pytest.mark.parametrize("query,problem", [
    ("", "empty query"),
    ("SELECT ?x WHERE { wd:Q42 wdt:P19 ?x", "unclosed '{'"),
    ("SELECT ?x WHERE { wd:Q42 wdt:P19 ?x ) }", "unbalanced ')'"),
    ("wd:Q42 wdt:P19 ?x", "expected exactly one query form keyword, found 0"),
    ("SELECT ?x", "missing group pattern"),
    ("SELECT ?x WHERE { foo:bar wdt:P19 ?x }", "undeclared prefix 'foo:'"),
    ('SELECT ?x WHERE { ?x rdfs:label "open }', "unterminated string"),
])
def test_invalid_queries(query, problem):
    problems = validate_sparql(query, "wikidata")
    assert problems
    assert any(p.startswith(problem) for p in problems), problems


def test_unknown_dialect():
    with pytest.raises(ConfigurationError):
        get_dialect("freebase-2013")


@pytest.mark.parametrize("query,form", [
    ("SELECT ?x WHERE { ?x ?p ?o }", "select"),
    ("ASK WHERE { wd:Q42 wdt:P31 wd:Q5 }", "ask"),
    ("SELECT (COUNT(?x) AS ?c) WHERE { ?x ?p ?o }", "count"),
    ("CONSTRUCT { ?s ?p ?o } WHERE { ?s ?p ?o }", "other"),
])
def test_query_form(query, form):
    assert query_form(query) == form


# ----- term extraction -------------------------------------------------------------

def test_wikidata_terms():
    entities, predicates = extract_terms_from_sparql(
        "SELECT ?x WHERE { wd:Q42 p:P69 ?s . ?s ps:P69 ?x ; pq:P582 ?end . ?x wdt:P31 wd:Q3918 }")
    assert entities == ["Q42", "Q3918"]
    assert predicates == ["P69", "P582", "P31"]


def test_dbpedia_terms_keep_full_iris():
    entities, predicates = extract_terms_from_sparql(
        "SELECT DISTINCT ?uri WHERE { <http://dbpedia.org/resource/Barack_Obama> "
        "<http://dbpedia.org/ontology/spouse> ?uri . ?uri a dbo:Person }", "dbpedia-2016")
    assert entities == ["http://dbpedia.org/resource/Barack_Obama"]
    assert predicates == ["http://dbpedia.org/ontology/spouse"]


def test_literal_entities_and_structural_predicates_skipped():
    query = ('SELECT DISTINCT ?v WHERE { ?e <pred:name> "Georgia national football team" . '
             '?e <ranking> ?pv . ?pv <pred:value> ?v . }')
    assert extract_terms_from_sparql(query, "kqapro-literal") == \
        (["Georgia national football team"], ["ranking"])


def test_typed_literals_are_not_entities():
    query = 'SELECT ?e WHERE { ?e <pred:name> "Kismet" . ?e <publication_date> "1944"^^xsd:gYear }'
    entities, predicates = extract_terms_from_sparql(query, "kqapro-literal")
    assert entities == ["Kismet"]
    assert predicates == ["publication_date"]


def test_values_block_terms():
    entities, _ = extract_terms_from_sparql(
        "SELECT ?x WHERE { VALUES ?s { wd:Q42 wd:Q5 } ?s wdt:P19 ?x }")
    assert entities == ["Q42", "Q5"]


def test_extraction_rejects_invalid_queries():
    with pytest.raises(SparqlParseError) as excinfo:
        extract_terms_from_sparql("SELECT ?x WHERE { wd:Q42")
    assert excinfo.value.problems


def test_term_corpus_skips_invalid(fixtures_dir):
    records = json.loads((fixtures_dir / "kqapro_val.json").read_text())
    queries = [r["sparql"] for r in records] + ["SELECT broken {"]
    entities, predicates = build_term_corpus(queries, "kqapro-literal")
    assert entities == ["Georgia national football team"]
    assert predicates == ["inception", "ranking"]


def test_sparql_query_parse():
    query = SparqlQuery.parse("  ASK WHERE { wd:Q42 wdt:P31 wd:Q5 }\n")
    assert query.form == "ask"
    assert query.text == "ASK WHERE { wd:Q42 wdt:P31 wd:Q5 }"
    assert query.entities == ["Q42", "Q5"]
    assert query.predicates == ["P31"]


# ----- results -------------------------------------------------------------------

def test_parse_select_results():
    payload = {
        "head": {"vars": ["answer"]},
        "results": {"bindings": [
            {"answer": {"type": "uri", "value": "http://www.wikidata.org/entity/Q350"}},
            {"answer": {"type": "literal", "datatype": XSD + "decimal", "value": "1999.0"}},
            {"answer": {"type": "literal", "xml:lang": "en", "value": "Cambridge"}},
            {"answer": {"type": "uri", "value": "http://www.wikidata.org/entity/Q350"}},
            {},
        ]},
    }
    bindings = parse_results(payload)
    assert len(bindings) == 5
    assert not bindings.is_boolean
    assert bindings.values("wikidata") == ["Q350", "1999", "Cambridge"]
    assert bindings.values("dbpedia-2016")[0] == "http://www.wikidata.org/entity/Q350"


def test_parse_boolean_results():
    bindings = parse_results({"head": {}, "boolean": False})
    assert bindings.is_boolean
    assert bindings.values() == ["false"]


def test_parse_results_rejects_undeclared_variables():
    with pytest.raises(ValueError):
        parse_results({"head": {"vars": ["a"]}, "results": {"bindings": [{"b": {"type": "uri", "value": "x"}}]}})
    with pytest.raises(ValueError):
        parse_results([])


@pytest.mark.parametrize("raw,expected", [
    ("1999.0", "1999"), ("42", "42"), ("+7", "7"), ("3.25", "3.25"), ("1e3", "1000"), ("abc", "abc"),
])
def test_canonical_number(raw, expected):
    assert canonical_number(raw) == expected


# ----- endpoints -----------------------------------------------------------------

def test_mock_endpoint_fixture(sparql_fixture):
    bindings = sparql_fixture.query("SELECT ?answer\n  WHERE { wd:Q42 wdt:P19 ?answer }")
    assert bindings.values() == ["Q350"]
    assert sparql_fixture.query("ASK WHERE { wd:Q42 wdt:P31 wd:Q5 }").values() == ["true"]

    with pytest.raises(SparqlExecutionError) as excinfo:
        sparql_fixture.query("SELECT ?answer WHERE { wd:Q42 wdt:P999 ?answer }")
    assert excinfo.value.status == 400
    assert excinfo.value.endpoint_message == "Unknown property wdt:P999"

    with pytest.raises(SparqlExecutionError):
        sparql_fixture.query("SELECT ?x WHERE { ?x ?p ?o }")

    assert sparql_fixture.executions == 4
    assert len(sparql_fixture.executed) == 4


def test_mock_endpoint_timeout_entry():
    endpoint = MockSparqlEndpoint({"ASK {}": {"timeout": True}})
    with pytest.raises(BackendError) as excinfo:
        endpoint.query("ASK {}")
    assert excinfo.value.retryable


def test_http_endpoint_retries_transient_errors(monkeypatch):
    monkeypatch.setenv("HOPLINK_USER_AGENT", "hoplink-tests/1.0")
    ok = FakeResponse(200, {"head": {"vars": ["x"]},
                            "results": {"bindings": [{"x": {"type": "literal", "value": "Honolulu"}}]}})
    session = FakeSession(FakeResponse(503, text="busy"), requests.ConnectionError("reset"), ok)
    endpoint = SparqlEndpoint("http://sparql.local/sparql", backoff_base=0.0, session=session)

    assert endpoint.query("SELECT ?x WHERE { ?x ?p ?o }").values() == ["Honolulu"]
    assert endpoint.executions == 3
    assert session.headers["Accept"] == "application/sparql-results+json"
    assert session.headers["User-Agent"] == "hoplink-tests/1.0"
    assert session.requests[0][0] == "GET"


def test_http_endpoint_passes_errors_verbatim():
    session = FakeSession(FakeResponse(400, text="Parse error: unexpected '}'"))
    endpoint = SparqlEndpoint("http://sparql.local/sparql", backoff_base=0.0, session=session)

    with pytest.raises(SparqlExecutionError) as excinfo:
        endpoint.query("SELECT ?x WHERE { ?x ?p ?o }")
    assert excinfo.value.endpoint_message == "Parse error: unexpected '}'"
    assert endpoint.executions == 1


def test_http_endpoint_posts_long_queries():
    session = FakeSession(FakeResponse(200, {"head": {}, "boolean": True}))
    endpoint = SparqlEndpoint("http://sparql.local/sparql", session=session)
    long_query = "ASK { " + " ".join(f"wd:Q{i} wdt:P31 wd:Q5 ." for i in range(200)) + " }"

    assert endpoint.query(long_query).values() == ["true"]
    method, _, data = session.requests[0]
    assert method == "POST"
    assert data == {"query": long_query}


def test_mock_http_server_round_trip(sparql_fixture):
    server = MockSparqlServer(sparql_fixture)
    url = server.start_background()
    try:
        endpoint = SparqlEndpoint(url, retries=0, timeout=5.0)
        assert endpoint.query("SELECT ?answer WHERE { wd:Q42 wdt:P27 ?answer }").values() == ["Q145"]
        with pytest.raises(SparqlExecutionError) as excinfo:
            endpoint.query("SELECT ?answer WHERE { wd:Q42 wdt:P999 ?answer }")
        assert excinfo.value.status == 400
        assert excinfo.value.endpoint_message == "Unknown property wdt:P999"
    finally:
        server.stop()
    assert not server.running


# ----- descriptions ---------------------------------------------------------------

class DictSource:
    def __init__(self, descriptions):
        self.descriptions = descriptions
        self.fetched = []

    def fetch(self, term_id):
        self.fetched.append(term_id)
        if term_id not in self.descriptions:
            raise BackendError(f"no description for {term_id}", retryable=False)
        return self.descriptions[term_id]


def test_fetch_descriptions_uses_the_cache(tmp_path):
    cache = tmp_path / "entities.tsv"
    source = DictSource({"Q42": "Douglas Adams: English writer", "Q5": "human: common name of Homo sapiens"})

    catalog = fetch_descriptions(["Q42", "Q5", "Q0", "Q42"], source, cache_path=cache, workers=2)
    assert sorted(catalog.ids()) == ["Q42", "Q5"]
    assert catalog.unfetched == {"Q0"}
    assert "Q0" not in cache.read_text()

    again = DictSource({})
    reloaded = fetch_descriptions(["Q42", "Q5"], again, cache_path=cache)
    assert again.fetched == []
    assert reloaded.get("Q42") == "Douglas Adams: English writer"

    with pytest.raises(ConfigurationError):
        fetch_descriptions([], source)


def test_http_description_source_reads_entity_json():
    payload = {"entities": {"Q42": {"labels": {"en": {"value": "Douglas Adams"}},
                                    "descriptions": {"en": {"value": "English\twriter"}}}}}
    source = HttpDescriptionSource(session=FakeSession(FakeResponse(200, payload)))
    assert source.fetch("Q42") == "Douglas Adams: English writer"

    missing = HttpDescriptionSource(session=FakeSession(FakeResponse(404, text="gone")))
    with pytest.raises(BackendError) as excinfo:
        missing.fetch("Q0")
    assert not excinfo.value.retryable

    with pytest.raises(ConfigurationError):
        HttpDescriptionSource("https://example.org/entity")


def test_term_catalog_cache_format(tmp_path, wikidata_catalogs):
    entities, predicates = wikidata_catalogs
    assert entities.ids() == ["Q42", "Q350", "Q145", "Q5"]
    assert predicates.get("P19").startswith("place of birth")

    cache = tmp_path / "cache.tsv"
    entities.append_cache(cache, ["Q42"])
    assert cache.read_text() == "Q42\tentity\tDouglas Adams: English writer and humorist\n"
    assert len(TermCatalog.load_cache(cache, "predicate")) == 0
    with pytest.raises(ConfigurationError):
        TermCatalog("relation")

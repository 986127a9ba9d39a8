"""
Semantic-parsing pipeline tests over the Wikidata-style fixtures.
"""

import pytest

from conftest import make_gateway
from evaluation.datasets import load_dataset
from llm.backends import ScriptedBackend
from llm.skills import FewShotExample, SkillKind
from pipelines.descriptions import TermCatalog
from pipelines.sp_pipeline import STAGE_EXECUTE, STAGE_GENERATE, SPConfig, SPPipeline
from pipelines.sparql import MockSparqlEndpoint, SparqlQuery
from retrieval.embedder import HashEmbedder
from retrieval.few_shot import FewShotSelector
from shared.errors import SkillFailure, SparqlParseError


def make_pipeline(backend, endpoint, catalogs, **config):
    entities, predicates = catalogs
    return SPPipeline(make_gateway(backend), endpoint, entities, predicates,
                      HashEmbedder(64), SPConfig(**config))


@pytest.fixture
def lcquad2(fixtures_dir):
    return load_dataset("lcquad2", fixtures_dir / "lcquad2_test.json")


def test_fixture_questions(lcquad2):
    assert [i.id for i in lcquad2] == ["101", "102", "103"]


@pytest.mark.parametrize("position,answers,executions,llm_calls", [
    (0, ["Q350"], 1, 3),
    (1, ["Q145"], 2, 4),
    (2, ["true"], 1, 3),
])
def test_lcquad2_fixture(lcquad2, lcquad2_backend, sparql_fixture, wikidata_catalogs,
                         position, answers, executions, llm_calls):
    pipeline = make_pipeline(lcquad2_backend, sparql_fixture, wikidata_catalogs)

    result = pipeline.run_sp(lcquad2[position].question)

    assert result.accepted
    assert result.answers == answers
    assert result.executions == executions
    assert result.llm_calls == llm_calls
    assert sparql_fixture.executions == executions


def test_endpoint_error_is_fed_back(lcquad2, lcquad2_backend, sparql_fixture, wikidata_catalogs):
    """The rejected query and the endpoint's own message reach the next prompt"""
    prompts = []
    # the responder only records; replies still come from the fixture table
    recording = ScriptedBackend(lcquad2_backend.table, responder=lambda request, prompt: prompts.append(prompt))
    pipeline = make_pipeline(recording, sparql_fixture, wikidata_catalogs)

    result = pipeline.run_sp(lcquad2[1].question)

    errors = [r for r in result.trace if r["skill"] == "execute" and r["detail"]["kind"] == "error"]
    assert len(errors) == 1
    assert errors[0]["detail"]["message"] == "Unknown property wdt:P999"
    assert errors[0]["step"] == STAGE_EXECUTE
    assert "Unknown property wdt:P999" not in prompts[2]
    assert "with: Unknown property wdt:P999" in prompts[3]
    assert sparql_fixture.executed[0].endswith("wdt:P999 ?answer }")


def test_known_entities_skip_identification(lcquad2, lcquad2_backend, sparql_fixture, wikidata_catalogs):
    pipeline = make_pipeline(lcquad2_backend, sparql_fixture, wikidata_catalogs)

    result = pipeline.run_sp(lcquad2[0].question, known_entities=["Q42", "Q42"])

    assert result.answers == ["Q350"]
    assert result.llm_calls == 2
    assert not any(r["skill"] == SkillKind.ENTITY_IDENTIFY.value for r in result.trace)


def test_identify_drops_ids_outside_the_offer(wikidata_catalogs, sparql_fixture):
    replies = iter(["Q42\nQ999", "Q42"])
    backend = ScriptedBackend(responder=lambda request, prompt: next(replies))
    pipeline = make_pipeline(backend, sparql_fixture, wikidata_catalogs, retries=1)

    assert pipeline.identify_entities("Where was Douglas Adams born?") == ["Q42"]


def test_identify_keeps_valid_ids_on_the_last_round(wikidata_catalogs, sparql_fixture):
    backend = ScriptedBackend(default="wd:Q42, Q999")
    pipeline = make_pipeline(backend, sparql_fixture, wikidata_catalogs, retries=1)

    assert pipeline.identify_entities("Where was Douglas Adams born?") == ["Q42"]
    assert backend.invocations == 2


def test_identify_offers_top_k(wikidata_catalogs, sparql_fixture):
    offered = []

    def respond(request, prompt):
        offered.append([item_id for item_id, _ in request.context_items])
        return request.context_items[0][0]

    pipeline = make_pipeline(ScriptedBackend(responder=respond), sparql_fixture, wikidata_catalogs)
    picked = pipeline.identify_predicates("place of birth", k=2)

    assert len(offered[0]) == 2
    assert len(set(offered[0])) == 2
    assert picked == [offered[0][0]]


def test_invalid_generation_gets_feedback(wikidata_catalogs, sparql_fixture):
    replies = iter(["SELECT ?answer WHERE { wd:Q42 wdt:P19 ?answer",
                    "SELECT ?answer WHERE { wd:Q42 wdt:P19 ?answer }"])
    prompts = []

    def respond(request, prompt):
        prompts.append(prompt)
        return next(replies)

    pipeline = make_pipeline(ScriptedBackend(responder=respond), sparql_fixture, wikidata_catalogs)
    query = pipeline.generate_sparql("Where was Douglas Adams born?", ["Q42"], ["P19"])

    assert query.predicates == ["P19"]
    assert "The query is not valid SPARQL: unclosed '{'" in prompts[1]


def test_generation_gives_up(wikidata_catalogs, sparql_fixture):
    pipeline = make_pipeline(ScriptedBackend(default="I do not know."), sparql_fixture,
                             wikidata_catalogs, retries=1)
    with pytest.raises(SkillFailure) as excinfo:
        pipeline.generate_sparql("Where was Douglas Adams born?", ["Q42"], ["P19"])
    assert excinfo.value.last_raw == "I do not know."

    with pytest.raises(SkillFailure):
        pipeline.generate_sparql("Where was Douglas Adams born?", [], [])


def test_execute_refuses_invalid_queries(wikidata_catalogs, sparql_fixture):
    pipeline = make_pipeline(ScriptedBackend(), sparql_fixture, wikidata_catalogs)
    with pytest.raises(SparqlParseError):
        pipeline.execute_sparql(SparqlQuery("SELECT ?x WHERE {", "select"))
    assert sparql_fixture.executions == 0


def test_empty_results_are_retried_then_rejected(wikidata_catalogs):
    endpoint = MockSparqlEndpoint({"SELECT ?answer WHERE { wd:Q42 wdt:P19 ?answer }":
                                   {"head": {"vars": ["answer"]}, "results": {"bindings": []}}})
    def respond(request, prompt):
        if request.skill == SkillKind.PREDICATE_IDENTIFY:
            return "P19"
        return "SELECT ?answer WHERE { wd:Q42 wdt:P19 ?answer }"

    pipeline = make_pipeline(ScriptedBackend(responder=respond), endpoint, wikidata_catalogs, retries=2)

    result = pipeline.run_sp("Where was Douglas Adams born?", known_entities=["Q42"])

    assert not result.accepted
    assert result.executions == 3
    assert result.failure == "no answer after 3 executions"


def test_identification_failure_is_reported(wikidata_catalogs, sparql_fixture):
    pipeline = make_pipeline(ScriptedBackend(default="nothing useful"), sparql_fixture,
                             wikidata_catalogs, retries=0)
    result = pipeline.run_sp("Where was Douglas Adams born?")

    assert not result.accepted
    assert result.executions == 0
    assert result.failure.startswith("entity-identify")


def test_few_shot_examples_reach_generation(wikidata_catalogs, sparql_fixture):
    prompts = []

    def respond(request, prompt):
        if request.skill == SkillKind.SPARQL_GENERATE:
            prompts.append(prompt)
            return "SELECT ?answer WHERE { wd:Q42 wdt:P19 ?answer }"
        return request.context_items[0][0]

    selector = FewShotSelector.build(HashEmbedder(64), [
        FewShotExample("Where was Alan Turing born?", "SELECT ?x WHERE { wd:Q7251 wdt:P19 ?x }", "t1"),
    ])
    entities, predicates = wikidata_catalogs
    pipeline = SPPipeline(make_gateway(ScriptedBackend(responder=respond)), sparql_fixture, entities,
                          predicates, HashEmbedder(64), few_shot=selector)

    result = pipeline.run_sp("Where was Douglas Adams born?", known_entities=["Q42"])

    assert result.accepted
    assert "SPARQL: SELECT ?x WHERE { wd:Q7251 wdt:P19 ?x }" in prompts[0]
    assert [r["step"] for r in result.trace if r["skill"] == "sparql-generate"] == [STAGE_GENERATE]


def test_literal_dialect_generates_without_terms(sparql_fixture):
    entities = TermCatalog.from_terms(["Georgia national football team"], "entity")
    predicates = TermCatalog.from_terms(["ranking", "inception"], "predicate")
    query = ('SELECT DISTINCT ?v WHERE { ?e <pred:name> "Georgia national football team" . '
             '?e <ranking> ?pv . ?pv <pred:value> ?v . }')
    pipeline = SPPipeline(make_gateway(ScriptedBackend(default=query)), sparql_fixture, entities,
                          predicates, HashEmbedder(32), SPConfig(dialect="kqapro-literal"))

    generated = pipeline.generate_sparql("What is the ranking of Georgia national football team?", [], [])
    assert generated.entities == ["Georgia national football team"]
    assert generated.dialect == "kqapro-literal"

"""
Iterative-retrieval pipeline tests over the WebQSP-style fixture graph.
"""

import random

import pytest

from conftest import make_gateway, random_graph
from evaluation.datasets import load_dataset
from llm.backends import ScriptedBackend
from llm.skills import FewShotExample, SkillKind, SkillRequest
from pipelines.ir_pipeline import IRConfig, IRPipeline, match_key
from retrieval.embedder import HashEmbedder
from retrieval.few_shot import FewShotSelector
from shared.errors import EntityLookupError
from store.loaders import GraphBuilder

BAHAMA_Q = "what country is the grand bahama island in"
CONTAINEDBY = "location.location.containedby"


def topic_ids(graph, instance):
    return [graph.entities.local_id(mid) for mid in instance.topic_entities]


def relation_responder(relation_replies, multi_reply="none", entity_reply="answer: The Bahamas",
                       prompts=None):
    """Relation-filter replies consumed in order; the last one repeats"""
    replies = list(relation_replies)

    def respond(request, prompt):
        if prompts is not None:
            prompts.append((request.skill, prompt))
        if request.skill == SkillKind.RELATION_FILTER:
            return replies.pop(0) if len(replies) > 1 else replies[0]
        if request.skill == SkillKind.RELATION_MULTI:
            return multi_reply
        return entity_reply
    return respond


@pytest.mark.parametrize("position,expected", [
    (0, ["The Bahamas"]),
    (1, ["United States of America"]),
    (2, ["Honolulu"]),
])
def test_webqsp_fixture_answers(fixtures_dir, freebase_graph, webqsp_backend, position, expected):
    instance = load_dataset("webqsp", fixtures_dir / "webqsp_test.jsonl")[position]
    pipeline = IRPipeline(freebase_graph, make_gateway(webqsp_backend))

    result = pipeline.run_ir(instance.question, topic_ids(freebase_graph, instance))

    assert result.accepted
    assert result.answers == expected
    assert result.answers == instance.gold_answers
    assert result.hops_used == 1
    assert result.llm_calls == 2
    assert [r["skill"] for r in result.trace] == ["relation-filter", "entity-filter"]


def test_cvt_expansion_reaches_through_the_mediator(freebase_graph, webqsp_backend):
    """Without expansion the CVT node is the only candidate and the scripted run dead-ends"""
    obama = freebase_graph.entities.local_id("m.02mjmr")
    question = "what country did barack obama govern"

    flat = IRPipeline(freebase_graph, make_gateway(webqsp_backend), IRConfig(expand_cvt=False))
    result = flat.run_ir(question, [obama])

    assert not result.accepted
    # hop 1: filter + entity; hop 2: three filter rounds + one fallback
    assert result.llm_calls == 6
    assert "no valid relation" in result.failure
    assert result.trace[-1]["detail"]["kind"] == "failure"


def test_one_feedback_round(freebase_graph):
    prompts = []
    backend = ScriptedBackend(responder=relation_responder(
        ["location.location.borders", CONTAINEDBY], prompts=prompts))
    pipeline = IRPipeline(freebase_graph, make_gateway(backend))
    bahama = freebase_graph.entities.local_id("m.02bbk")

    result = pipeline.run_ir(BAHAMA_Q, [bahama])

    assert result.answers == ["The Bahamas"]
    assert result.llm_calls == 3
    kinds = [r["detail"]["kind"] for r in result.trace if r["skill"] == "relation-filter"]
    assert kinds == ["initial", "feedback"]
    _, second = prompts[1]
    assert "Feedback:\n- Relation 'location.location.borders' is not one of the listed relations" in second


def test_few_shot_attached_after_validation_failure(freebase_graph):
    prompts = []
    backend = ScriptedBackend(responder=relation_responder(["bogus", CONTAINEDBY], prompts=prompts))
    selector = FewShotSelector.build(HashEmbedder(64), [
        FewShotExample("what island group is nassau in", CONTAINEDBY, "t1"),
    ])
    pipeline = IRPipeline(freebase_graph, make_gateway(backend), few_shot=selector)

    pipeline.run_ir(BAHAMA_Q, [freebase_graph.entities.local_id("m.02bbk")])

    assert "Examples:" not in prompts[0][1]
    assert "Examples:\nQuestion: what island group is nassau in" in prompts[1][1]


def test_always_few_shot(freebase_graph):
    prompts = []
    backend = ScriptedBackend(responder=relation_responder([CONTAINEDBY], prompts=prompts))
    selector = FewShotSelector.build(HashEmbedder(64), [FewShotExample("where is nassau", CONTAINEDBY, "t1")])
    pipeline = IRPipeline(freebase_graph, make_gateway(backend), IRConfig(always_few_shot=True),
                          few_shot=selector)

    pipeline.run_ir(BAHAMA_Q, [freebase_graph.entities.local_id("m.02bbk")])
    assert all("Examples:" in prompt for _, prompt in prompts)


def test_invalid_replies_fall_back_to_multi_relation(freebase_graph):
    backend = ScriptedBackend(responder=relation_responder(["bogus"], multi_reply=f"1. {CONTAINEDBY}"))
    pipeline = IRPipeline(freebase_graph, make_gateway(backend), IRConfig(retries=2))

    result = pipeline.run_ir(BAHAMA_Q, [freebase_graph.entities.local_id("m.02bbk")])

    assert result.accepted
    assert result.answers == ["The Bahamas"]
    assert result.llm_calls == 5
    fallback = [r for r in result.trace if r["detail"].get("kind") == "fallback"]
    assert [r["skill"] for r in fallback] == ["relation-multi"]


def test_fallback_failure_rejects_the_run(freebase_graph):
    backend = ScriptedBackend(responder=relation_responder(["bogus"], multi_reply="bogus too"))
    pipeline = IRPipeline(freebase_graph, make_gateway(backend), IRConfig(retries=1))

    result = pipeline.run_ir(BAHAMA_Q, [freebase_graph.entities.local_id("m.02bbk")])

    assert not result.accepted
    assert result.answers == []
    assert result.llm_calls == 3
    assert result.trace[-1]["detail"]["last_raw"] == "bogus too"


def test_call_cap_stops_the_run(movie_graph):
    def respond(request, prompt):
        if request.skill == SkillKind.RELATION_FILTER:
            return "bogus"
        if request.skill == SkillKind.RELATION_MULTI:
            return request.context_items[0][1]
        return "none"

    config = IRConfig(max_hops=2, retries=0)
    assert config.max_llm_calls == 4
    pipeline = IRPipeline(movie_graph, make_gateway(ScriptedBackend(responder=respond)), config)

    result = pipeline.run_ir("who directed kismet", [movie_graph.entities.resolve("Kismet")])

    assert not result.accepted
    assert result.llm_calls == 4
    assert "call cap of 4" in result.failure


def test_hop_budget_exhausted(movie_graph):
    def respond(request, prompt):
        if request.skill == SkillKind.RELATION_FILTER:
            return request.context_items[0][1]
        return "none"

    pipeline = IRPipeline(movie_graph, make_gateway(ScriptedBackend(responder=respond)), IRConfig(max_hops=2))
    result = pipeline.run_ir("who directed kismet", [movie_graph.entities.resolve("Kismet")])

    assert not result.accepted
    assert result.hops_used == 2
    assert result.failure == "hop budget of 2 exhausted"


def test_entity_filter_drops_non_candidates(freebase_graph):
    backend = ScriptedBackend(default="answer: Atlantis; the bahamas")
    pipeline = IRPipeline(freebase_graph, make_gateway(backend))
    bahama = freebase_graph.entities.local_id("m.02bbk")
    candidates = freebase_graph.one_hop_entities([bahama], [freebase_graph.contains(CONTAINEDBY)[1]])

    assert pipeline.entity_filter_skill(BAHAMA_Q, candidates) == ["The Bahamas"]


def test_dropped_entities_attach_few_shot_for_the_next_hop(freebase_graph):
    prompts = []
    entity_replies = ["answer: Atlantis", "none"]

    def respond(request, prompt):
        prompts.append((request.skill, prompt))
        if request.skill == SkillKind.RELATION_FILTER:
            return CONTAINEDBY
        return entity_replies.pop(0) if len(entity_replies) > 1 else entity_replies[0]

    selector = FewShotSelector.build(HashEmbedder(64), [
        FewShotExample("what island group is nassau in", CONTAINEDBY, "t1"),
    ])
    pipeline = IRPipeline(freebase_graph, make_gateway(ScriptedBackend(responder=respond)),
                          IRConfig(max_hops=2), few_shot=selector)

    pipeline.run_ir(BAHAMA_Q, [freebase_graph.entities.local_id("m.02bbk")])

    assert [skill for skill, _ in prompts[:3]] == [SkillKind.RELATION_FILTER, SkillKind.ENTITY_FILTER,
                                                  SkillKind.RELATION_FILTER]
    assert "Examples:" not in prompts[0][1]
    assert "Examples:" not in prompts[1][1]
    assert "Examples:\nQuestion: what island group is nassau in" in prompts[2][1]


def test_entity_filter_none_means_continue(freebase_graph):
    pipeline = IRPipeline(freebase_graph, make_gateway(ScriptedBackend(default="Atlantis")))
    bahama = freebase_graph.entities.local_id("m.02bbk")
    candidates = freebase_graph.one_hop_entities([bahama], [freebase_graph.contains(CONTAINEDBY)[1]])
    assert pipeline.entity_filter_skill(BAHAMA_Q, candidates) is None


def test_oversized_relation_list_is_narrowed():
    builder = GraphBuilder()
    for i in range(40):
        builder.add("hub", f"hub.relation_{i:02d}", f"target_{i:02d}")
    graph, _ = builder.build()
    hub = graph.entities.local_id("hub")
    relations = graph.one_hop_relations([hub])

    offered = []

    def respond(request, prompt):
        offered.append(len(request.context_items))
        return request.context_items[0][1]

    sizer = make_gateway(ScriptedBackend(default="x"))
    all_items = [(graph.relations.external_id(r), graph.relation_label(r)) for r in relations]
    window = sizer.prompt_tokens(SkillRequest(SkillKind.RELATION_FILTER, "which relation", all_items[:10]))
    pipeline = IRPipeline(graph, make_gateway(ScriptedBackend(responder=respond), window=window))

    chosen = pipeline.relation_filter_skill("which relation", [hub], relations)

    assert offered == [8]
    assert len(chosen) == 1 and chosen[0] in relations


def test_topic_checks(freebase_graph, webqsp_backend):
    pipeline = IRPipeline(freebase_graph, make_gateway(webqsp_backend))
    assert pipeline.run_ir(BAHAMA_Q, []).failure == "no topic entities"
    with pytest.raises(EntityLookupError):
        pipeline.run_ir(BAHAMA_Q, [99])


def test_match_key():
    assert match_key("  The  Bahamas. ") == "the bahamas"
    assert match_key("m.0160w") == match_key("M0160W")


def test_gold_oracle_finds_every_answer():
    """Gold relation chains at depths 1-4 on a synthetic graph with CVT nodes"""
    graph = random_graph(seed=7, entities=500, triples=2000, relations=10, cvt_ratio=0.1)
    rng = random.Random(7)
    questions = {}
    while len(questions) < 200:
        start = rng.randrange(500)
        frontier = [start]
        chain = []
        for hop in range(1, rng.randint(1, 4) + 1):
            relations = graph.one_hop_relations(frontier)
            if not relations:
                break
            relation = rng.choice(relations)
            candidates = graph.one_hop_entities(frontier, [relation], hop=hop)
            if not len(candidates):
                break
            chain.append(relation)
            frontier = candidates.entities
        if chain:
            gold = sorted({graph.label(e) for e in frontier})
            questions[f"question {len(questions)}"] = (start, chain, gold)

    # relation-filter calls made so far, per question
    progress = {}

    def respond(request, prompt):
        _, chain, gold = questions[request.question]
        step = progress.get(request.question, 0)
        if request.skill == SkillKind.RELATION_FILTER:
            progress[request.question] = step + 1
            return graph.relations.external_id(chain[step])
        if step == len(chain):
            return "answer: " + "; ".join(gold)
        return "none"

    config = IRConfig()
    pipeline = IRPipeline(graph, make_gateway(ScriptedBackend(responder=respond), window=1_000_000), config)
    for question, (start, chain, gold) in questions.items():
        result = pipeline.run_ir(question, [start])

        assert result.accepted, question
        assert sorted(result.answers) == gold
        assert result.hops_used == len(chain)
        assert result.llm_calls == 2 * len(chain) <= config.max_llm_calls

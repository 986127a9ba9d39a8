"""
Dataset loader tests, one per native layout.
"""

import json
import logging

import pytest

from evaluation.datasets import (QuestionInstance, load_dataset, resolve_gold_answers, split_of,
                                 to_few_shot)
from pipelines.sparql import MockSparqlEndpoint
from shared.errors import DatasetError
from shared.protocol import Protocol, RecordType


def test_webqsp_jsonl(fixtures_dir):
    instances = load_dataset("webqsp", fixtures_dir / "webqsp_test.jsonl")

    assert len(instances) == 3
    first = instances[0]
    assert first.id == "WebQTest-1"
    assert first.topic_entities == ["m.02bbk"]
    assert first.gold_answers == ["The Bahamas"]
    assert first.extras["answer_ids"] == "m.0160w"
    assert instances[1].topic_entities == ["m.02mjmr"]
    assert all(i.dataset == "webqsp" for i in instances)


def test_webqsp_original_layout(tmp_path):
    path = tmp_path / "WebQSP.test.json"
    path.write_text(json.dumps({"Questions": [{
        "QuestionId": "WebQTest-9",
        "RawQuestion": "Where was Barack Obama born?",
        "ProcessedQuestion": "where was barack obama born",
        "Parses": [{"TopicEntityMid": "m.02mjmr", "TopicEntityName": "Barack Obama",
                    "Sparql": "PREFIX ns: <http://rdf.freebase.com/ns/> SELECT ?x WHERE { ns:m.02mjmr ns:people.person.place_of_birth ?x }",
                    "Answers": [{"AnswerArgument": "m.03gh4", "EntityName": "Honolulu"}]}],
    }]}))

    instance = load_dataset("webqsp", path)[0]
    assert instance.question == "where was barack obama born"
    assert instance.topic_entities == ["m.02mjmr"]
    assert instance.gold_answers == ["Honolulu"]
    assert instance.extras["topic_label"] == "Barack Obama"


def test_cwq_original_layout(fixtures_dir):
    instance = load_dataset("cwq", fixtures_dir / "cwq_dev.json")[0]

    assert instance.id == "WebQTrn-1_cwq"
    assert instance.gold_answers == ["Germany"]
    assert instance.topic_entities == ["m.0f8l9c", "m.01mp", "m.05g2b"]
    assert instance.extras["compositionality_type"] == "conjunction"


def test_metaqa_with_qtype_sidecar(fixtures_dir):
    instances = load_dataset("metaqa3", fixtures_dir / "metaqa" / "qa_test.txt")

    assert [i.id for i in instances] == ["qa_test-1", "qa_test-2"]
    first = instances[0]
    assert first.question == "the films that share actors with the film Kismet were released in which years"
    assert first.topic_entities == ["Kismet"]
    assert first.gold_answers == ["1939", "1942"]
    assert first.extras["qtype"] == "movie_to_actor_to_movie_to_year"


def test_metaqa_without_tab_names_the_field(tmp_path):
    path = tmp_path / "qa_dev.txt"
    path.write_text("who directed [Kismet]\n")
    with pytest.raises(DatasetError) as excinfo:
        load_dataset("metaqa3", path)
    assert excinfo.value.field == "answers"
    assert excinfo.value.exit_code == 2


def test_lcquad1(fixtures_dir):
    instances = load_dataset("lcquad1", fixtures_dir / "lcquad1_test.json")

    assert [i.id for i in instances] == ["1501", "1502"]
    assert instances[0].gold_sparql.startswith("SELECT DISTINCT ?uri")
    assert instances[0].gold_answers == []
    assert not instances[0].evaluable
    assert instances[1].extras["template_id"] == "151"


def test_lcquad2_skips_null_questions(fixtures_dir, caplog):
    instances = load_dataset("lcquad2", fixtures_dir / "lcquad2_test.json")

    assert [i.id for i in instances] == ["101", "102", "103"]
    assert instances[0].extras["paraphrased_question"] == "Douglas Adams was born in which city?"
    assert "skipped 1 records" in caplog.text


def test_kqapro(fixtures_dir):
    instances = load_dataset("kqapro", fixtures_dir / "kqapro_val.json")

    assert [i.id for i in instances] == ["0", "1"]
    assert instances[0].gold_answers == ["93"]
    assert instances[0].extras["choices"] == "93|12|40"
    assert "<pred:name>" in instances[1].gold_sparql


def test_missing_field_is_named(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps([{"question": "What is the ranking?"}]))
    with pytest.raises(DatasetError) as excinfo:
        load_dataset("kqapro", path)
    assert excinfo.value.field == "sparql"


@pytest.mark.parametrize("name,content", [
    ("lcquad1", "{not json"),
    ("kqapro", '{"question": "not an array"}'),
])
def test_malformed_files(tmp_path, name, content):
    path = tmp_path / "test.json"
    path.write_text(content)
    with pytest.raises(DatasetError):
        load_dataset(name, path)


def test_unknown_dataset_and_missing_file(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset("freebaseqa", tmp_path / "x.json")
    with pytest.raises(DatasetError):
        load_dataset("webqsp", tmp_path / "missing.jsonl")


def test_empty_question_rejected():
    with pytest.raises(DatasetError) as excinfo:
        QuestionInstance(id="x", question="   ")
    assert excinfo.value.field == "question"


def test_limit(fixtures_dir):
    assert len(load_dataset("webqsp", fixtures_dir / "webqsp_test.jsonl", limit=2)) == 2


def test_split_size_mismatch_is_a_warning(fixtures_dir, caplog):
    with caplog.at_level(logging.INFO, logger="evaluation.datasets"):
        load_dataset("webqsp", fixtures_dir / "webqsp_test.jsonl")

    mismatches = [r for r in caplog.records if "published size is 1639" in r.getMessage()]
    assert len(mismatches) == 1
    assert mismatches[0].levelno == logging.WARNING


@pytest.mark.parametrize("name,split", [
    ("qa_train.txt", "train"), ("webqsp_valid.jsonl", "dev"), ("cwq_dev.json", "dev"),
    ("kqapro_val.json", "val"), ("lcquad2_test.json", "test"), ("corpus.json", None),
])
def test_split_of(name, split):
    assert split_of(name) == split


def test_few_shot_corpora(fixtures_dir):
    metaqa = load_dataset("metaqa3", fixtures_dir / "metaqa" / "qa_train.txt")
    by_answers = to_few_shot(metaqa)
    assert by_answers[0].solution == "1944"
    assert by_answers[0].source_id == "qa_train-1"
    assert [e.solution for e in to_few_shot(metaqa, solution="qtype")] == [
        "movie_to_actor_to_movie_to_year", "movie_to_actor_to_movie_to_year",
        "movie_to_director_to_movie_to_year"]

    lcquad2 = load_dataset("lcquad2", fixtures_dir / "lcquad2_test.json")
    assert to_few_shot(lcquad2, solution="sparql")[2].solution == "ASK WHERE { wd:Q42 wdt:P31 wd:Q5 }"
    # no gold answers yet, so nothing to show
    assert to_few_shot(lcquad2) == []


def test_gold_answers_resolved_once(tmp_path, fixtures_dir, sparql_fixture):
    cache = tmp_path / "gold.jsonl"
    instances = load_dataset("lcquad2", fixtures_dir / "lcquad2_test.json")

    resolve_gold_answers(instances, sparql_fixture, "wikidata", cache)
    assert [i.gold_answers for i in instances] == [["Q350"], ["Q145"], ["true"]]
    assert sparql_fixture.executions == 3
    assert [r["id"] for r in Protocol.read_records(cache, RecordType.GOLD)] == ["101", "102", "103"]

    again = load_dataset("lcquad2", fixtures_dir / "lcquad2_test.json")
    offline = MockSparqlEndpoint()
    resolve_gold_answers(again, offline, "wikidata", cache)
    assert offline.executions == 0
    assert again[1].gold_answers == ["Q145"]


def test_failed_gold_query_leaves_instance_unresolved(fixtures_dir):
    instances = load_dataset("lcquad2", fixtures_dir / "lcquad2_test.json")
    resolve_gold_answers(instances, MockSparqlEndpoint(), "wikidata")
    assert not any(i.evaluable for i in instances)

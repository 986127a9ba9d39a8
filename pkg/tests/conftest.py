"""
Shared fixtures: small graphs, scripted backends and mock endpoints built
from the files under tests/fixtures/.
"""

import random
from pathlib import Path
from typing import List, Tuple

import pytest

from llm.backends import ScriptedBackend
from llm.gateway import LLMGateway
from pipelines.descriptions import TermCatalog
from pipelines.sparql import MockSparqlEndpoint
from store.loaders import GraphBuilder, load_graph
from store.triple_store import KnowledgeGraph

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def movie_graph() -> KnowledgeGraph:
    graph, _ = load_graph(FIXTURES / "metaqa_kb.txt", fmt="pipe")
    return graph


@pytest.fixture
def freebase_graph() -> KnowledgeGraph:
    graph, _ = load_graph(FIXTURES / "freebase_triples.tsv", fmt="id-coded",
                          entity_catalog=FIXTURES / "freebase_entities.tsv",
                          relation_catalog=FIXTURES / "freebase_relations.tsv")
    return graph


@pytest.fixture
def webqsp_backend() -> ScriptedBackend:
    return ScriptedBackend.from_file(FIXTURES / "webqsp_scripted.json")


@pytest.fixture
def lcquad2_backend() -> ScriptedBackend:
    return ScriptedBackend.from_file(FIXTURES / "lcquad2_scripted.json")


@pytest.fixture
def sparql_fixture() -> MockSparqlEndpoint:
    return MockSparqlEndpoint.from_file(FIXTURES / "sparql_fixture.json")


@pytest.fixture
def wikidata_catalogs() -> Tuple[TermCatalog, TermCatalog]:
    return (TermCatalog.load_cache(FIXTURES / "wikidata_entities.tsv", "entity"),
            TermCatalog.load_cache(FIXTURES / "wikidata_predicates.tsv", "predicate"))


def make_gateway(backend, **kwargs) -> LLMGateway:
    """Gateway with retries that never sleep"""
    kwargs.setdefault("backoff_base", 0.0)
    return LLMGateway(backend, **kwargs)


def random_graph(seed: int, entities: int, triples: int, relations: int = 8,
                 cvt_ratio: float = 0.0) -> KnowledgeGraph:
    """Seeded random graph; a share of entities is flagged CVT"""
    rng = random.Random(seed)
    builder = GraphBuilder()
    for e in range(entities):
        builder.entities.intern(f"e{e}", f"entity {e}", is_cvt=rng.random() < cvt_ratio)
    for r in range(relations):
        builder.relations.intern(f"r{r}", f"relation {r}")
    for _ in range(triples):
        builder.add_ids(rng.randrange(entities), rng.randrange(relations), rng.randrange(entities))
    graph, _ = builder.build()
    return graph


def oracle_triples(graph: KnowledgeGraph) -> List[Tuple[int, int, int]]:
    return [tuple(t) for t in graph.triples()]

"""
Builds graphs, backends, indexes and pipelines from a RunConfig.
"""

import logging
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from client.config import RunConfig
from evaluation.datasets import SPARQL_DIALECTS, QuestionInstance, load_dataset, to_few_shot
from llm.backends import LLMBackend, RemoteChatBackend, ScriptedBackend
from llm.gateway import LLMGateway
from pipelines.descriptions import TermCatalog
from pipelines.ir_pipeline import IRConfig, IRPipeline
from pipelines.query_paths import MetaQAPathPipeline, PathCatalog
from pipelines.sp_pipeline import SPConfig, SPPipeline
from pipelines.sparql import (BaseSparqlEndpoint, MockSparqlEndpoint, SparqlEndpoint,
                              build_term_corpus)
from pipelines.trace import AnswerSet
from retrieval.embedder import Embedder, HashEmbedder, RemoteEmbedder
from retrieval.few_shot import FewShotSelector
from retrieval.index import EmbeddingIndex
from shared.errors import ConfigurationError, EntityLookupError
from store.loaders import load_graph, read_id_list
from store.snapshot import read_snapshot
from store.triple_store import KnowledgeGraph

logger = logging.getLogger(__name__)

# what a few-shot example's solution is, per strategy
FEW_SHOT_SOLUTIONS = {"ir": "answers", "sp": "sparql", "metaqa-path": "qtype"}


def build_graph(config: RunConfig) -> KnowledgeGraph:
    if config.snapshot and Path(config.snapshot).exists():
        logger.info(f"Loading graph snapshot {config.snapshot}")
        return read_snapshot(config.snapshot)
    if not config.graph:
        raise ConfigurationError("no graph or snapshot configured")
    cvt_ids = read_id_list(config.cvt_list) if config.cvt_list else None
    graph, _ = load_graph(config.graph, fmt=config.graph_format,
                          entity_catalog=config.entity_catalog or None,
                          relation_catalog=config.relation_catalog or None,
                          cvt_ids=cvt_ids, unlabeled_is_cvt=config.unlabeled_is_cvt)
    return graph


def build_backend(config: RunConfig) -> LLMBackend:
    if config.backend == "remote":
        return RemoteChatBackend(config.llm_endpoint, model=config.llm_model,
                                 api_key_env=config.llm_api_key_env)
    if not config.scripted_fixture:
        raise ConfigurationError("scripted backend needs scripted_fixture")
    return ScriptedBackend.from_file(config.scripted_fixture)


def build_gateway(config: RunConfig, backend: Optional[LLMBackend] = None) -> LLMGateway:
    return LLMGateway(backend or build_backend(config), window=config.window,
                      max_concurrency=config.max_concurrency, timeout=config.timeout,
                      transport_retries=config.transport_retries, backoff_base=config.backoff_base)


def build_embedder(config: RunConfig) -> Embedder:
    if config.embedder == "remote":
        return RemoteEmbedder(config.embed_endpoint, config.embed_dimension, model=config.embed_model,
                              api_key_env=config.embed_api_key_env, timeout=config.timeout,
                              retries=config.transport_retries, backoff_base=config.backoff_base)
    return HashEmbedder(config.embed_dimension, seed=config.seed)


def dialect_for(config: RunConfig) -> str:
    return config.dialect or SPARQL_DIALECTS.get(config.dataset, "wikidata")


def training_instances(config: RunConfig) -> List[QuestionInstance]:
    if not config.few_shot_data:
        return []
    if not config.dataset:
        raise ConfigurationError("few_shot_data needs a dataset name to pick its loader")
    return load_dataset(config.dataset, config.few_shot_data)


def build_few_shot(config: RunConfig, embedder: Embedder,
                   training: Optional[Sequence[QuestionInstance]] = None) -> Optional[FewShotSelector]:
    """A persisted index is re-attached to the training examples; otherwise one is built"""
    training = list(training) if training is not None else training_instances(config)
    if not training or config.few_shot_n < 1:
        return None
    examples = to_few_shot(training, FEW_SHOT_SOLUTIONS[config.strategy])
    if not examples:
        logger.warning("Training split has no usable few-shot solutions")
        return None
    if config.few_shot_index and Path(config.few_shot_index).exists():
        index = EmbeddingIndex.load(config.few_shot_index, embedder)
        return FewShotSelector(index, {e.source_id: e for e in examples})
    return FewShotSelector.build(embedder, examples)


def build_endpoint(config: RunConfig) -> BaseSparqlEndpoint:
    if config.sparql_fixture:
        return MockSparqlEndpoint.from_file(config.sparql_fixture)
    if not config.sparql_endpoint:
        raise ConfigurationError("no sparql_endpoint or sparql_fixture configured")
    return SparqlEndpoint(config.sparql_endpoint, timeout=config.timeout,
                          retries=config.transport_retries, backoff_base=config.backoff_base)


def build_term_catalogs(config: RunConfig, training: Sequence[QuestionInstance]):
    """Description caches when given; otherwise term surface forms from the training queries"""
    entities = TermCatalog.load_cache(config.entity_descriptions, "entity") \
        if config.entity_descriptions else TermCatalog("entity")
    predicates = TermCatalog.load_cache(config.predicate_descriptions, "predicate") \
        if config.predicate_descriptions else TermCatalog("predicate")
    if (not len(entities) or not len(predicates)) and training:
        corpus_entities, corpus_predicates = build_term_corpus(
            [i.gold_sparql for i in training if i.gold_sparql], dialect_for(config))
        if not len(entities):
            entities = TermCatalog.from_terms(corpus_entities, "entity")
        if not len(predicates):
            predicates = TermCatalog.from_terms(corpus_predicates, "predicate")
    if not len(entities) and not len(predicates):
        raise ConfigurationError("sp strategy needs description caches or a training split")
    return entities, predicates


def resolve_topic(graph: KnowledgeGraph, topic: Sequence[str]) -> List[int]:
    """External ids or labels to local ids"""
    resolved = []
    for item in topic:
        local_id = graph.entities.resolve(item)
        if local_id is None:
            raise EntityLookupError(f"unknown topic entity '{item}'")
        resolved.append(local_id)
    return resolved


class PipelineHandle:
    """One strategy behind a uniform (question, topic) call"""

    def __init__(self, strategy: str, run: Callable[[str, Sequence[str]], AnswerSet]):
        self.strategy = strategy
        self._run = run

    def answer(self, question: str, topic: Sequence[str] = ()) -> AnswerSet:
        return self._run(question, list(topic))

    def __call__(self, instance: QuestionInstance) -> AnswerSet:
        return self.answer(instance.question, instance.topic_entities or [])


def build_pipeline(config: RunConfig, backend: Optional[LLMBackend] = None) -> PipelineHandle:
    # majority voting over example paths never calls the LLM
    needs_llm = not (config.strategy == "metaqa-path" and config.metaqa_mode == "majority")
    config.require(needs_llm=needs_llm and backend is None)
    embedder = build_embedder(config)
    training = training_instances(config)
    few_shot = build_few_shot(config, embedder, training)
    gateway = build_gateway(config, backend or (None if needs_llm else ScriptedBackend()))

    if config.strategy == "ir":
        graph = build_graph(config)
        ir_config = IRConfig(k=config.k, max_hops=config.max_hops, retries=config.retries,
                             few_shot_n=config.few_shot_n, always_few_shot=config.always_few_shot,
                             expand_cvt=config.expand_cvt, rag_top_k=config.rag_top_k)
        pipeline = IRPipeline(graph, gateway, ir_config, few_shot, embedder)
        return PipelineHandle("ir", lambda q, topic: pipeline.run_ir(q, resolve_topic(graph, topic)))

    if config.strategy == "metaqa-path":
        graph = build_graph(config)
        if config.path_catalog and Path(config.path_catalog).exists():
            catalog = PathCatalog.from_file(config.path_catalog)
        else:
            catalog = PathCatalog.default()
        metaqa = MetaQAPathPipeline(graph, gateway, catalog, few_shot,
                                    retries=config.retries, few_shot_n=config.few_shot_n)

        def run_metaqa(question: str, topic: Sequence[str]) -> AnswerSet:
            if not topic:
                return AnswerSet(failure="no topic movie")
            return metaqa.run_metaqa(question, resolve_topic(graph, topic[:1])[0], config.metaqa_mode)

        return PipelineHandle("metaqa-path", run_metaqa)

    entities, predicates = build_term_catalogs(config, training)
    sp = SPPipeline(gateway, build_endpoint(config), entities, predicates, embedder,
                    SPConfig(k_entities=config.k_entities, k_predicates=config.k_predicates,
                             few_shot_n=config.few_shot_n, retries=config.retries,
                             dialect=dialect_for(config)),
                    few_shot=few_shot)
    return PipelineHandle("sp", lambda q, topic: sp.run_sp(q, known_entities=topic or None))

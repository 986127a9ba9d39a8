"""
HopLink SP Pipeline
Semantic parsing: identify entities and predicates from description corpora,
generate a SPARQL query, execute it and feed endpoint errors back into
generation.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from llm.gateway import LLMGateway
from llm.skills import FewShotExample, SkillKind, SkillRequest
from pipelines.descriptions import TermCatalog
from pipelines.sparql import (BaseSparqlEndpoint, BindingSet, SparqlQuery, get_dialect,
                              validate_sparql)
from pipelines.trace import AnswerSet, RunTrace
from retrieval.embedder import Embedder
from retrieval.few_shot import FewShotSelector
from retrieval.index import EmbeddingIndex
from shared.errors import BackendError, SkillFailure, SparqlExecutionError, SparqlParseError

# trace step numbers are stage numbers, so stages compare across runs
STAGE_ENTITIES = 1
STAGE_PREDICATES = 2
STAGE_GENERATE = 3
STAGE_EXECUTE = 4

_LLM_SKILLS = {SkillKind.ENTITY_IDENTIFY.value, SkillKind.PREDICATE_IDENTIFY.value,
               SkillKind.SPARQL_GENERATE.value}


@dataclass
class SPConfig:
    k_entities: int = 10
    k_predicates: int = 10
    few_shot_n: int = 5
    retries: int = 2
    dialect: str = "wikidata"


def build_term_index(catalog: TermCatalog, embedder: Embedder) -> EmbeddingIndex:
    """One index over a catalog's descriptions; chunk source ids are term ids"""
    index = EmbeddingIndex(embedder)
    for term_id, description in catalog.documents():
        index.add(term_id, description)
    return index


class SPPipeline:
    def __init__(self, gateway: LLMGateway, endpoint: BaseSparqlEndpoint,
                 entity_catalog: TermCatalog, predicate_catalog: TermCatalog,
                 embedder: Embedder, config: Optional[SPConfig] = None,
                 entity_index: Optional[EmbeddingIndex] = None,
                 predicate_index: Optional[EmbeddingIndex] = None,
                 few_shot: Optional[FewShotSelector] = None):
        self.gateway = gateway
        self.endpoint = endpoint
        self.entity_catalog = entity_catalog
        self.predicate_catalog = predicate_catalog
        self.config = config or SPConfig()
        self.dialect = get_dialect(self.config.dialect)
        self.entity_index = entity_index or build_term_index(entity_catalog, embedder)
        self.predicate_index = predicate_index or build_term_index(predicate_catalog, embedder)
        self.few_shot = few_shot
        self.logger = logging.getLogger(__name__)

    # ----- identification --------------------------------------------------

    @staticmethod
    def _retrieve(index: EmbeddingIndex, catalog: TermCatalog, question: str,
                  k: int) -> List[Tuple[str, str]]:
        """Up to k distinct terms, most similar description first"""
        if k >= len(catalog):
            return [(t, catalog.get(t)) for t in catalog.ids()]
        offered: List[str] = []
        for chunk, _ in index.search(question, len(index)):
            if chunk.source_id in catalog and chunk.source_id not in offered:
                offered.append(chunk.source_id)
                if len(offered) == k:
                    break
        return [(t, catalog.get(t)) for t in offered]

    @staticmethod
    def _resolve(item: str, offered: Sequence[str]) -> Optional[str]:
        if item in offered:
            return item
        lowered = {o.lower(): o for o in offered}
        for candidate in (item, item.split(":")[-1], item.strip("<>").rsplit("/", 1)[-1]):
            match = lowered.get(candidate.lower())
            if match:
                return match
        return None

    def _identify(self, skill: SkillKind, stage: int, question: str, index: EmbeddingIndex,
                  catalog: TermCatalog, k: int, trace: RunTrace) -> List[str]:
        items = self._retrieve(index, catalog, question, k)
        if not items:
            raise SkillFailure(skill.value, "no candidate terms to offer")
        offered = [term_id for term_id, _ in items]
        feedback: List[str] = []
        last_raw = ""
        for attempt in range(self.config.retries + 1):
            request = SkillRequest(skill, question, items, feedback=list(feedback), k=k)
            try:
                response = self.gateway.complete(request)
            except BackendError as e:
                raise SkillFailure(skill.value, f"backend failure: {e}") from e
            last_raw = response.raw_text
            selected, outside = [], []
            for item in response.parsed_items:
                term = self._resolve(item, offered)
                if term is None:
                    outside.append(item)
                elif term not in selected:
                    selected.append(term)
            trace.add(skill.value, {"question": question, "offered": offered, "feedback": feedback},
                      selected, {"kind": "feedback" if attempt else "initial", "dropped": outside},
                      step=stage)
            if selected and (not outside or attempt == self.config.retries):
                return selected[:k]
            if outside:
                feedback.extend(f"'{item}' is not one of the listed ids. Choose only from the list."
                                for item in outside)
            else:
                feedback.append("The reply selected nothing. Reply with ids from the list.")
        raise SkillFailure(skill.value, "no valid selection after retries", last_raw)

    def identify_entities(self, question: str, k: Optional[int] = None,
                          known_entities: Optional[Sequence[str]] = None,
                          trace: Optional[RunTrace] = None) -> List[str]:
        if known_entities:
            return list(dict.fromkeys(known_entities))
        return self._identify(SkillKind.ENTITY_IDENTIFY, STAGE_ENTITIES, question, self.entity_index,
                              self.entity_catalog, k or self.config.k_entities,
                              trace if trace is not None else RunTrace())

    def identify_predicates(self, question: str, k: Optional[int] = None,
                            trace: Optional[RunTrace] = None) -> List[str]:
        return self._identify(SkillKind.PREDICATE_IDENTIFY, STAGE_PREDICATES, question,
                              self.predicate_index, self.predicate_catalog,
                              k or self.config.k_predicates,
                              trace if trace is not None else RunTrace())

    # ----- generation and execution ----------------------------------------

    def _term_items(self, entities: Sequence[str], predicates: Sequence[str]) -> List[Tuple[str, str]]:
        items = [(e, self.entity_catalog.get(e) or e) for e in entities]
        items += [(p, self.predicate_catalog.get(p) or p) for p in predicates]
        return items

    def generate_sparql(self, question: str, entities: Sequence[str], predicates: Sequence[str],
                        few_shot: Sequence[FewShotExample] = (), feedback: Sequence[str] = (),
                        trace: Optional[RunTrace] = None) -> SparqlQuery:
        if not (entities or predicates) and not self.dialect.literal_entities:
            raise SkillFailure(SkillKind.SPARQL_GENERATE.value, "no entities or predicates to build on")
        trace = trace if trace is not None else RunTrace()
        items = self._term_items(entities, predicates)
        notes = list(feedback)
        last_raw = ""
        for attempt in range(self.config.retries + 1):
            request = SkillRequest(SkillKind.SPARQL_GENERATE, question, items,
                                   few_shot=list(few_shot), feedback=list(notes))
            try:
                response = self.gateway.complete(request)
            except BackendError as e:
                raise SkillFailure(SkillKind.SPARQL_GENERATE.value, f"backend failure: {e}") from e
            last_raw = response.raw_text
            text = response.parsed_items[0] if response.parsed_items else ""
            problems = validate_sparql(text, self.dialect) if text else ["no SPARQL query found in the reply"]
            trace.add(SkillKind.SPARQL_GENERATE.value,
                      {"question": question, "items": [i for i, _ in items], "feedback": notes},
                      [text] if text else [],
                      {"kind": "feedback" if attempt else "initial", "problems": problems},
                      step=STAGE_GENERATE)
            if not problems:
                return SparqlQuery.parse(text, self.dialect)
            notes.append(f"The query is not valid SPARQL: {problems[0]}.")
        raise SkillFailure(SkillKind.SPARQL_GENERATE.value, "no valid query after retries", last_raw)

    def execute_sparql(self, query: SparqlQuery) -> BindingSet:
        problems = validate_sparql(query.text, self.dialect)
        if problems:
            raise SparqlParseError(f"refusing to execute invalid SPARQL: {problems[0]}", problems)
        return self.endpoint.execute(query)

    # ----- composition -----------------------------------------------------

    def run_sp(self, question: str, known_entities: Optional[Sequence[str]] = None) -> AnswerSet:
        trace = RunTrace()
        executions = 0
        failure = None
        try:
            if known_entities:
                entities = self.identify_entities(question, known_entities=known_entities)
            else:
                entities = self.identify_entities(question, trace=trace)
            predicates = self.identify_predicates(question, trace=trace)
            few_shot = []
            if self.few_shot is not None and self.config.few_shot_n > 0:
                few_shot = self.few_shot.examples_for(question, self.config.few_shot_n)

            feedback: List[str] = []
            for attempt in range(self.config.retries + 1):
                query = self.generate_sparql(question, entities, predicates, few_shot, feedback, trace)
                executions += 1
                try:
                    bindings = self.execute_sparql(query)
                except SparqlExecutionError as e:
                    trace.add("execute", {"query": query.text}, [],
                              {"kind": "error", "status": e.status, "message": e.endpoint_message},
                              step=STAGE_EXECUTE)
                    self.logger.info(f"Execution error fed back to generation: {e.endpoint_message}")
                    feedback.append(f"The endpoint rejected the previous query {query.text!r} "
                                    f"with: {e.endpoint_message}")
                    continue
                answers = bindings.values(self.dialect)
                trace.add("execute", {"query": query.text}, answers, {"kind": "result"}, step=STAGE_EXECUTE)
                if answers:
                    return AnswerSet(answers=answers, accepted=True, llm_calls=self._llm_calls(trace),
                                     trace=trace.records, executions=executions)
                feedback.append(f"The previous query {query.text!r} returned no results.")
            failure = f"no answer after {executions} executions"
        except (SkillFailure, BackendError, SparqlParseError) as e:
            self.logger.warning(f"SP run failed: {e}")
            failure = str(e)
            trace.add("failure", {"question": question}, [], {"kind": "failure", "message": str(e)},
                      step=STAGE_EXECUTE)
        return AnswerSet(accepted=False, llm_calls=self._llm_calls(trace), trace=trace.records,
                         failure=failure, executions=executions)

    @staticmethod
    def _llm_calls(trace: RunTrace) -> int:
        return sum(1 for r in trace.records if r["skill"] in _LLM_SKILLS)

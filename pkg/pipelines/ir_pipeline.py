"""
HopLink IR Pipeline
Iterative retrieval: one-hop relations -> LLM relation filter -> one-hop
entities -> LLM entity filter, repeated from the new frontier until an answer
is accepted or the hop budget runs out.
"""

import logging
import re
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Set, Tuple

from llm.gateway import LLMGateway
from llm.skills import FewShotExample, SkillKind, SkillRequest, SkillResponse
from pipelines.trace import AnswerSet, RunTrace
from retrieval.embedder import Embedder, HashEmbedder
from retrieval.few_shot import FewShotSelector, composite_query
from retrieval.index import EmbeddingIndex
from shared.errors import BackendError, BudgetExceededError, SkillFailure
from store.triple_store import CandidateSet, KnowledgeGraph

ContextItems = List[Tuple[str, str]]

_PUNCT = re.compile(r"[^\w\s]")
_SPACES = re.compile(r"\s+")
# one chunk per candidate item
_WHOLE = 1_000_000


def match_key(text: str) -> str:
    """Case-, punctuation- and spacing-insensitive comparison key"""
    return _SPACES.sub(" ", _PUNCT.sub("", text.lower())).strip()


@dataclass
class IRConfig:
    k: int = 1
    max_hops: int = 4
    retries: int = 2
    few_shot_n: int = 5
    always_few_shot: bool = False
    expand_cvt: bool = True
    rag_top_k: int = 32

    @property
    def max_llm_calls(self) -> int:
        return 2 * self.max_hops * (1 + self.retries)


class CallBudgetExhausted(SkillFailure):
    """Per-run LLM call cap reached"""


class RunState:
    """Mutable state of one run; pipelines themselves stay shareable"""

    def __init__(self, question: str, topic_labels: Sequence[str], max_calls: int,
                 few_shot_active: bool = False):
        self.question = question
        self.topic_labels = list(topic_labels)
        self.max_calls = max_calls
        self.calls = 0
        self.hop = 0
        self.trace = RunTrace()
        self.few_shot_active = few_shot_active
        self._few_shot: Optional[List[FewShotExample]] = None

    @property
    def rag_query(self) -> str:
        return composite_query(self.question, self.topic_labels)


class IRPipeline:
    def __init__(self, graph: KnowledgeGraph, gateway: LLMGateway,
                 config: Optional[IRConfig] = None,
                 few_shot: Optional[FewShotSelector] = None,
                 embedder: Optional[Embedder] = None):
        self.graph = graph
        self.gateway = gateway
        self.config = config or IRConfig()
        self.few_shot = few_shot
        self.embedder = embedder or HashEmbedder()
        self.logger = logging.getLogger(__name__)

    # ----- shared plumbing -------------------------------------------------

    def _new_run(self, question: str, topic: Iterable[int] = ()) -> RunState:
        labels = [self.graph.label(e) for e in sorted(set(topic))]
        return RunState(question, labels, self.config.max_llm_calls,
                        few_shot_active=self.config.always_few_shot)

    def _examples(self, run: RunState) -> List[FewShotExample]:
        if not run.few_shot_active or self.few_shot is None or self.config.few_shot_n < 1:
            return []
        if run._few_shot is None:
            run._few_shot = self.few_shot.examples_for(run.question, self.config.few_shot_n)
        return run._few_shot

    def _activate_few_shot(self, run: RunState) -> None:
        if not run.few_shot_active and self.few_shot is not None:
            self.logger.info("Validation failed; attaching few-shot examples from now on")
            run.few_shot_active = True

    def _narrow(self, run: RunState, request: SkillRequest, items: ContextItems) -> ContextItems:
        """RAG fallback: keep the candidates closest to the composite query until the prompt fits"""
        index = EmbeddingIndex(self.embedder)
        for position, (_, text) in enumerate(items):
            index.add(str(position), text, chunk_size=_WHOLE, overlap=0)
        keep = min(self.config.rag_top_k, len(items))
        ranked = [int(index.get(chunk_id).source_id)
                  for chunk_id, _ in index.top_k(run.rag_query, len(items))]
        while keep >= 1:
            chosen = sorted(ranked[:keep])
            narrowed = [items[i] for i in chosen]
            request.context_items = narrowed
            if self.gateway.fits(request):
                self.logger.warning(f"{request.skill.value}: {len(items)} candidates overflow the window; "
                                    f"RAG kept {len(narrowed)}")
                return narrowed
            keep //= 2
        raise SkillFailure(request.skill.value, "prompt does not fit the window even with one candidate")

    def _ask(self, run: RunState, request: SkillRequest, kind: str,
             detail: Optional[dict] = None) -> Tuple[SkillResponse, ContextItems]:
        """One budgeted LLM call; returns the response and the items actually offered"""
        if run.calls >= run.max_calls:
            raise CallBudgetExhausted(request.skill.value, f"LLM call cap of {run.max_calls} reached")
        items = request.context_items
        if not self.gateway.fits(request) and items:
            items = self._narrow(run, request, items)
        try:
            response = self.gateway.complete(request)
        except BudgetExceededError as e:
            raise SkillFailure(request.skill.value, str(e)) from e
        except BackendError as e:
            run.calls += 1
            raise SkillFailure(request.skill.value, f"backend failure: {e}") from e
        run.calls += 1
        record_detail = {"kind": kind, "hop": run.hop}
        if detail:
            record_detail.update(detail)
        run.trace.add(request.skill.value,
                      {"question": request.question, "items": [i for i, _ in items],
                       "feedback": request.feedback, "few_shot": len(request.few_shot)},
                      response.parsed_items, record_detail)
        return response, items

    def _relation_items(self, candidate_relations: Iterable[int]) -> ContextItems:
        return [(self.graph.relations.external_id(r), self.graph.relation_label(r))
                for r in sorted(set(candidate_relations))]

    def _validate_relations(self, parsed: List[str], offered: Set[int]) -> Tuple[List[int], List[str]]:
        valid: List[int] = []
        invalid: List[str] = []
        for item in parsed:
            found, relation = self.graph.contains(item, "relation")
            if found and relation in offered:
                if relation not in valid:
                    valid.append(relation)
            else:
                invalid.append(item)
        return valid, invalid

    @staticmethod
    def _relation_feedback(invalid: List[str]) -> List[str]:
        if not invalid:
            return ["The reply named no relation. Choose relations from the list, written exactly as shown."]
        return [f"Relation '{item}' is not one of the listed relations of the graph. "
                f"Choose only from the list." for item in invalid]

    def _offered_ids(self, items: ContextItems) -> Set[int]:
        ids = set()
        for external_id, _ in items:
            relation = self.graph.relations.local_id(external_id)
            if relation is not None:
                ids.add(relation)
        return ids

    # ----- skills ----------------------------------------------------------

    def relation_filter_skill(self, question: str, topic: Iterable[int],
                              candidate_relations: Iterable[int], k: Optional[int] = None,
                              run: Optional[RunState] = None) -> List[int]:
        """
        Up to k validated relation ids. Invalid replies get feedback and a retry;
        after `retries` feedback rounds the multi-relation skill takes over.
        """
        run = run or self._new_run(question, topic)
        k = k or self.config.k
        items = self._relation_items(candidate_relations)
        if not items:
            raise SkillFailure(SkillKind.RELATION_FILTER.value, "no candidate relations")

        feedback: List[str] = []
        last_raw = ""
        for attempt in range(self.config.retries + 1):
            request = SkillRequest(SkillKind.RELATION_FILTER, question, items,
                                   few_shot=self._examples(run), feedback=list(feedback), k=k)
            response, items = self._ask(run, request, "feedback" if attempt else "initial")
            last_raw = response.raw_text
            valid, invalid = self._validate_relations(response.parsed_items, self._offered_ids(items))
            if valid and not invalid:
                return valid[:k]
            if attempt == self.config.retries and valid:
                return valid[:k]
            self._activate_few_shot(run)
            feedback.extend(self._relation_feedback(invalid))
            self.logger.info(f"relation-filter feedback round {attempt + 1}: {invalid}")

        self.logger.info("relation-filter exhausted retries; falling back to relation-multi")
        try:
            return self.relation_multi_skill(question, topic, [self.graph.relations.local_id(i)
                                                                for i, _ in items],
                                             run=run, retries=0, fallback=True)
        except CallBudgetExhausted:
            raise
        except SkillFailure as e:
            raise SkillFailure(SkillKind.RELATION_FILTER.value,
                               "no valid relation after retries and fallback",
                               e.last_raw or last_raw) from e

    def relation_multi_skill(self, question: str, topic: Iterable[int],
                             candidate_relations: Iterable[int], run: Optional[RunState] = None,
                             retries: Optional[int] = None, fallback: bool = False) -> List[int]:
        """Itemized relation list; every validated item is kept"""
        run = run or self._new_run(question, topic)
        retries = self.config.retries if retries is None else retries
        items = self._relation_items(candidate_relations)
        if not items:
            raise SkillFailure(SkillKind.RELATION_MULTI.value, "no candidate relations")

        feedback: List[str] = []
        last_raw = ""
        for attempt in range(retries + 1):
            request = SkillRequest(SkillKind.RELATION_MULTI, question, items,
                                   few_shot=self._examples(run), feedback=list(feedback))
            kind = "fallback" if fallback and attempt == 0 else ("feedback" if attempt else "initial")
            response, items = self._ask(run, request, kind)
            last_raw = response.raw_text
            valid, invalid = self._validate_relations(response.parsed_items, self._offered_ids(items))
            if valid:
                return valid
            self._activate_few_shot(run)
            feedback.extend(self._relation_feedback(invalid))
        raise SkillFailure(SkillKind.RELATION_MULTI.value, "no valid relation in the reply", last_raw)

    def entity_filter_skill(self, question: str, candidates: CandidateSet,
                            run: Optional[RunState] = None) -> Optional[List[str]]:
        """
        Answer labels, or None to keep exploring. Items that name no candidate
        are dropped; when nothing survives the decision is to continue.
        """
        if not len(candidates):
            return None
        run = run or self._new_run(question)
        items = [(self.graph.entities.external_id(e), self.graph.describe_candidate(candidates, e))
                 for e in candidates.entities]
        request = SkillRequest(SkillKind.ENTITY_FILTER, question, items, few_shot=self._examples(run))
        response, offered = self._ask(run, request, "initial")

        offered_ids = {external_id for external_id, _ in offered}
        by_key = {}
        for entity in candidates.entities:
            if self.graph.entities.external_id(entity) not in offered_ids:
                continue
            label = self.graph.label(entity)
            by_key.setdefault(match_key(label), label)
            by_key.setdefault(match_key(self.graph.entities.external_id(entity)), label)

        answers: List[str] = []
        dropped: List[str] = []
        for item in response.parsed_items:
            label = by_key.get(match_key(item))
            if label is None:
                dropped.append(item)
            elif label not in answers:
                answers.append(label)
        if dropped:
            self.logger.info(f"entity-filter dropped non-candidate items: {dropped}")
            self._activate_few_shot(run)
        return answers or None

    # ----- outer loop ------------------------------------------------------

    def run_ir(self, question: str, topic: Iterable[int]) -> AnswerSet:
        topic = sorted(set(topic))
        if not topic:
            return AnswerSet(failure="no topic entities")
        for entity in topic:
            self.graph._check(entity)
        run = self._new_run(question, topic)

        frontier = topic
        failure = None
        try:
            while run.hop < self.config.max_hops:
                run.hop += 1
                relations = self.graph.one_hop_relations(frontier)
                if not relations:
                    failure = f"no relations around the frontier at hop {run.hop}"
                    break
                chosen = self.relation_filter_skill(question, topic, relations, run=run)
                candidates = self.graph.one_hop_entities(frontier, chosen,
                                                         expand_cvt=self.config.expand_cvt, hop=run.hop)
                if not len(candidates):
                    failure = f"no candidate entities at hop {run.hop}"
                    break
                answers = self.entity_filter_skill(question, candidates, run=run)
                if answers:
                    return AnswerSet(answers=answers, accepted=True, hops_used=run.hop,
                                     llm_calls=run.calls, trace=run.trace.records)
                frontier = candidates.entities
            else:
                failure = f"hop budget of {self.config.max_hops} exhausted"
        except SkillFailure as e:
            self.logger.warning(f"IR run failed: {e}")
            failure = str(e)
            run.trace.add(e.skill, {"question": question}, [], {"kind": "failure", "hop": run.hop,
                                                                 "message": str(e), "last_raw": e.last_raw})

        return AnswerSet(accepted=False, hops_used=run.hop, llm_calls=run.calls,
                         trace=run.trace.records, failure=failure)

"""
MetaQA query-path strategy: predict one of the catalogued path types (or
take the majority path of the nearest training examples), then walk the
graph along it from the topic movie.
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from llm.gateway import LLMGateway
from llm.skills import FewShotExample, SkillKind, SkillRequest
from pipelines.trace import AnswerSet, RunTrace
from retrieval.few_shot import FewShotSelector
from shared.errors import BackendError, ConfigurationError, SkillFailure
from store.movies import MovieDictionary
from store.triple_store import KnowledgeGraph

logger = logging.getLogger(__name__)

ANCHOR = "movie"

CATEGORY_RELATIONS: Dict[str, str] = {
    "actor": "starred_actors",
    "director": "directed_by",
    "writer": "written_by",
    "genre": "has_genre",
    "language": "in_language",
    "year": "release_year",
    "tags": "has_tags",
    "rating": "has_imdb_rating",
    "votes": "has_imdb_votes",
}

MODES = ("zero-shot", "few-shot", "majority")

_SEPARATORS = re.compile(r"\s*(?:->|→|=>|\bto\b|_to_)\s*", re.IGNORECASE)


def canonical_path_name(text: str) -> str:
    """'Movie -> Actor -> movie→year' and 'movie_to_actor_to_movie_to_year' agree"""
    parts = [p.strip().strip("`'\".").lower().replace(" ", "_")
             for p in _SEPARATORS.split(text.strip()) if p.strip()]
    return "_to_".join(parts)


@dataclass(frozen=True)
class QueryPath:
    """Category waypoints plus the relation (and direction) of every step"""
    name: str
    categories: Tuple[str, ...]
    relations: Tuple[str, ...]
    forward: Tuple[bool, ...]

    @property
    def hops(self) -> int:
        return len(self.relations)

    @classmethod
    def parse(cls, name: str, relation_map: Optional[Dict[str, str]] = None) -> "QueryPath":
        relation_map = relation_map or CATEGORY_RELATIONS
        canonical = canonical_path_name(name)
        categories = tuple(canonical.split("_to_"))
        if len(categories) < 2:
            raise ConfigurationError(f"query path '{name}' needs at least one step")
        relations, forward = [], []
        for here, there in zip(categories, categories[1:]):
            if here == ANCHOR and there in relation_map:
                relations.append(relation_map[there])
                forward.append(True)
            elif there == ANCHOR and here in relation_map:
                relations.append(relation_map[here])
                forward.append(False)
            else:
                raise ConfigurationError(f"query path '{name}': no relation links '{here}' and '{there}'")
        return cls(canonical, categories, tuple(relations), tuple(forward))


def default_path_names() -> List[str]:
    """The 15 three-hop types: movie -> person -> movie -> another attribute"""
    people = ("actor", "director", "writer")
    attributes = ("actor", "director", "writer", "genre", "language", "year")
    return [f"movie_to_{p}_to_movie_to_{a}" for p in people for a in attributes if a != p]


class PathCatalog:
    def __init__(self, paths: Sequence[QueryPath]):
        self.paths = list(paths)
        self._by_name = {p.name: p for p in self.paths}

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    @classmethod
    def default(cls) -> "PathCatalog":
        return cls([QueryPath.parse(name) for name in default_path_names()])

    @classmethod
    def from_lines(cls, lines: Iterable[str],
                   relation_map: Optional[Dict[str, str]] = None) -> "PathCatalog":
        paths = []
        for line in lines:
            line = line.strip()
            if line and not line.startswith("#"):
                paths.append(QueryPath.parse(line, relation_map))
        if not paths:
            raise ConfigurationError("query-path catalog is empty")
        return cls(paths)

    @classmethod
    def from_file(cls, path: Union[str, Path],
                  relation_map: Optional[Dict[str, str]] = None) -> "PathCatalog":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigurationError(f"cannot read query-path catalog {path}: {e}") from e
        return cls.from_lines(text.splitlines(), relation_map)

    def match(self, text: str) -> Optional[QueryPath]:
        return self._by_name.get(canonical_path_name(text))

    def get(self, name: str) -> QueryPath:
        path = self.match(name)
        if path is None:
            raise ConfigurationError(f"unknown query path '{name}'")
        return path


def traverse_path(graph: KnowledgeGraph, movie: int, path: QueryPath,
                  movies: Optional[MovieDictionary] = None) -> AnswerSet:
    """
    Breadth-first walk over deduplicated layers. Forward steps read the movie
    dictionary; from step 2 on, anything in the layer two steps back is
    excluded, so movie -> actor -> movie never returns the start movie.
    """
    graph._check(movie)
    movies = movies if movies is not None else MovieDictionary(graph)
    layers: List[Set[int]] = [{movie}]
    for step, (name, forward) in enumerate(zip(path.relations, path.forward), start=1):
        found, relation = graph.contains(name, "relation")
        reached: Set[int] = set()
        if found:
            for node in layers[-1]:
                reached.update(movies.targets(node, relation) if forward else graph.heads(node, relation))
        if step > 1:
            reached -= layers[-2]
        if not reached:
            return AnswerSet(accepted=False, hops_used=step,
                             failure=f"dead end at step {step} ({name})")
        layers.append(reached)
    labels = sorted({graph.label(node) for node in layers[-1]})
    return AnswerSet(answers=labels, accepted=True, hops_used=path.hops)


def majority_path(examples: Sequence[Tuple[QueryPath, float]]) -> QueryPath:
    """
    Most frequent path among (path, similarity) pairs; ties go to the path
    with the most similar example, then to the earliest listed.
    """
    if not examples:
        raise ValueError("majority_path needs at least one example")
    counts = Counter(path for path, _ in examples)
    best_score: Dict[QueryPath, float] = {}
    first_seen: Dict[QueryPath, int] = {}
    for position, (path, score) in enumerate(examples):
        best_score[path] = max(score, best_score.get(path, score))
        first_seen.setdefault(path, position)
    return min(counts, key=lambda p: (-counts[p], -best_score[p], first_seen[p]))


class MetaQAPathPipeline:
    def __init__(self, graph: KnowledgeGraph, gateway: LLMGateway,
                 catalog: Optional[PathCatalog] = None,
                 few_shot: Optional[FewShotSelector] = None,
                 retries: int = 2, few_shot_n: int = 5):
        self.graph = graph
        self.gateway = gateway
        self.catalog = catalog or PathCatalog.default()
        self.movies = MovieDictionary(graph)
        self.few_shot = few_shot
        self.retries = retries
        self.few_shot_n = few_shot_n
        self.logger = logging.getLogger(__name__)

    def nearest_examples(self, question: str) -> List[Tuple[FewShotExample, float]]:
        if self.few_shot is None:
            return []
        return self.few_shot.select(question, self.few_shot_n)

    def predict_query_path(self, question: str, few_shot: Sequence[FewShotExample] = (),
                           mode: str = "zero-shot", trace: Optional[RunTrace] = None) -> QueryPath:
        if mode not in ("zero-shot", "few-shot"):
            raise ConfigurationError(f"unknown prediction mode '{mode}'")
        trace = trace if trace is not None else RunTrace()
        examples = list(few_shot) if mode == "few-shot" else []
        items = [(p.name, p.name) for p in self.catalog]
        feedback: List[str] = []
        last_raw = ""
        for attempt in range(self.retries + 1):
            request = SkillRequest(SkillKind.PATH_PREDICT, question, items,
                                   few_shot=examples, feedback=list(feedback))
            try:
                response = self.gateway.complete(request)
            except BackendError as e:
                raise SkillFailure(SkillKind.PATH_PREDICT.value, f"backend failure: {e}") from e
            last_raw = response.raw_text
            path = next((p for p in map(self.catalog.match, response.parsed_items) if p), None)
            trace.add(SkillKind.PATH_PREDICT.value, {"question": question, "few_shot": len(examples),
                                                     "feedback": feedback},
                      response.parsed_items, {"kind": "feedback" if attempt else "initial"})
            if path is not None:
                return path
            shown = response.parsed_items[0] if response.parsed_items else response.raw_text.strip()
            feedback.append(f"'{shown}' is not one of the listed query paths. Reply with one path name.")
        raise SkillFailure(SkillKind.PATH_PREDICT.value, "no valid query path after retries", last_raw)

    def run_metaqa(self, question: str, movie: int, mode: str = "few-shot") -> AnswerSet:
        if mode not in MODES:
            raise ConfigurationError(f"unknown MetaQA mode '{mode}'")
        trace = RunTrace()
        try:
            if mode == "majority":
                scored = []
                for example, score in self.nearest_examples(question):
                    path = self.catalog.match(example.solution)
                    if path is not None:
                        scored.append((path, score))
                if not scored:
                    return AnswerSet(failure="no training example with a catalogued path")
                path = majority_path(scored)
                trace.add("majority-path", {"question": question}, [path.name])
            else:
                examples = [e for e, _ in self.nearest_examples(question)] if mode == "few-shot" else []
                path = self.predict_query_path(question, examples, mode, trace)
        except SkillFailure as e:
            self.logger.warning(f"Path prediction failed: {e}")
            return AnswerSet(failure=str(e), llm_calls=trace.count(SkillKind.PATH_PREDICT.value),
                             trace=trace.records)

        result = traverse_path(self.graph, movie, path, self.movies)
        trace.add("traverse", {"movie": movie, "path": path.name}, result.answers,
                  {"kind": "traversal", "accepted": result.accepted})
        result.llm_calls = trace.count(SkillKind.PATH_PREDICT.value)
        result.trace = trace.records
        return result

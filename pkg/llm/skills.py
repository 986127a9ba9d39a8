"""
Skill request/response types shared by the gateway and the pipelines.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Tuple


class SkillKind(str, Enum):
    """Available LLM skills"""
    RELATION_FILTER = "relation-filter"
    RELATION_MULTI = "relation-multi"
    ENTITY_FILTER = "entity-filter"
    PATH_PREDICT = "path-predict"
    ENTITY_IDENTIFY = "entity-identify"
    PREDICATE_IDENTIFY = "predicate-identify"
    SPARQL_GENERATE = "sparql-generate"


@dataclass(frozen=True)
class FewShotExample:
    question: str
    solution: str
    source_id: str = ""

    def __post_init__(self):
        if not self.solution:
            raise ValueError(f"few-shot example {self.source_id!r} has an empty solution")


@dataclass
class SkillRequest:
    skill: SkillKind
    question: str
    context_items: List[Tuple[str, str]] = field(default_factory=list)
    few_shot: List[FewShotExample] = field(default_factory=list)
    feedback: List[str] = field(default_factory=list)
    k: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")

    def key(self) -> str:
        """Scripted-backend lookup key: skill, question, sorted context ids"""
        ids = ",".join(sorted(str(item_id) for item_id, _ in self.context_items))
        return f"{self.skill.value}|{self.question}|{ids}"


@dataclass
class SkillResponse:
    raw_text: str
    parsed_items: List[str]
    usage: Tuple[int, int] = (0, 0)

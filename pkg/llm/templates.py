"""
Prompt templates, one per skill.

The wording is this project's own; each template names the parser its
output goes through and how context items are listed.
"""

from dataclasses import dataclass
from typing import Dict

from llm.skills import SkillKind

SYSTEM_PROMPT = (
    "You answer questions over a knowledge graph. Use only the items listed in the prompt "
    "and reply in the requested format without explanations."
)


@dataclass(frozen=True)
class SkillTemplate:
    instruction: str
    parser: str
    context_title: str = "Candidates"
    show_ids: bool = False
    solution_label: str = "Answer"


RELATION_FILTER_PROMPT = (
    "Select the {k} relation(s) from the list below that lead from the topic entities "
    "towards the answer of the question. Reply with the relation names exactly as written, "
    "one per line."
)

RELATION_MULTI_PROMPT = (
    "Several relations from the list below may lead from the topic entities towards the "
    "answer of the question. Reply with a numbered list of every plausible relation, "
    "most likely first, using the names exactly as written."
)

ENTITY_FILTER_PROMPT = (
    "Decide whether any of the candidate entities below answers the question. If so, reply "
    "'answer: ' followed by the answer names separated by ';', written exactly as listed. "
    "If none of them answers the question, reply 'none'."
)

PATH_PREDICT_PROMPT = (
    "Each question is answered by following one of the query paths listed below, starting "
    "from the movie mentioned in the question. Reply with the single matching path name only."
)

ENTITY_IDENTIFY_PROMPT = (
    "Select up to {k} entities from the list below that the question refers to. Reply with "
    "their ids only, one per line."
)

PREDICATE_IDENTIFY_PROMPT = (
    "Select up to {k} predicates from the list below that are needed to answer the question. "
    "Reply with their ids only, one per line."
)

SPARQL_GENERATE_PROMPT = (
    "Write one SPARQL query that answers the question using the entities and predicates "
    "listed below. Reply with the query inside a ```sparql fenced block."
)


SKILL_TEMPLATES: Dict[SkillKind, SkillTemplate] = {
    SkillKind.RELATION_FILTER: SkillTemplate(RELATION_FILTER_PROMPT, "list", "Relations",
                                             solution_label="Relation"),
    SkillKind.RELATION_MULTI: SkillTemplate(RELATION_MULTI_PROMPT, "lines", "Relations",
                                            solution_label="Relations"),
    SkillKind.ENTITY_FILTER: SkillTemplate(ENTITY_FILTER_PROMPT, "answer", "Candidate entities"),
    SkillKind.PATH_PREDICT: SkillTemplate(PATH_PREDICT_PROMPT, "lines", "Query paths",
                                          solution_label="Path"),
    SkillKind.ENTITY_IDENTIFY: SkillTemplate(ENTITY_IDENTIFY_PROMPT, "list", "Entities",
                                             show_ids=True, solution_label="Entities"),
    SkillKind.PREDICATE_IDENTIFY: SkillTemplate(PREDICATE_IDENTIFY_PROMPT, "list", "Predicates",
                                                show_ids=True, solution_label="Predicates"),
    SkillKind.SPARQL_GENERATE: SkillTemplate(SPARQL_GENERATE_PROMPT, "sparql", "Terms",
                                             show_ids=True, solution_label="SPARQL"),
}

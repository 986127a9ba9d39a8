"""
Run traces and the AnswerSet returned by every pipeline.
"""

import hashlib
import json
from dataclasses import dataclass, field
from typing import IO, Any, Dict, List, Optional

from shared.protocol import Protocol


def inputs_digest(*parts: Any) -> str:
    """Short stable digest of a skill's inputs"""
    text = json.dumps(parts, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class RunTrace:
    """Ordered trace records for one pipeline run"""

    def __init__(self):
        self.records: List[Dict[str, Any]] = []

    def __len__(self) -> int:
        return len(self.records)

    def add(self, skill: str, inputs: Any, outputs: List[str],
            detail: Optional[Dict[str, Any]] = None, step: Optional[int] = None) -> Dict[str, Any]:
        """Step defaults to the record position; stage-numbered pipelines pass their own"""
        step = len(self.records) + 1 if step is None else step
        record = Protocol.create_trace(step, skill, inputs_digest(inputs),
                                       [str(o) for o in outputs], detail)
        self.records.append(record)
        return record

    def count(self, skill: str, kind: Optional[str] = None) -> int:
        """Records for a skill, optionally only those whose detail kind matches"""
        return sum(1 for r in self.records
                   if r["skill"] == skill and (kind is None or r.get("detail", {}).get("kind") == kind))

    def write(self, stream: IO[str]) -> None:
        for record in self.records:
            stream.write(Protocol.encode_record(record).decode("utf-8"))


@dataclass
class AnswerSet:
    answers: List[str] = field(default_factory=list)
    accepted: bool = False
    hops_used: int = 0
    llm_calls: int = 0
    trace: List[Dict[str, Any]] = field(default_factory=list)
    failure: Optional[str] = None
    executions: int = 0

    def __post_init__(self):
        if self.accepted and not self.answers:
            raise ValueError("an accepted AnswerSet needs at least one answer")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "answers": list(self.answers),
            "accepted": self.accepted,
            "hops_used": self.hops_used,
            "llm_calls": self.llm_calls,
            "executions": self.executions,
            "failure": self.failure,
        }

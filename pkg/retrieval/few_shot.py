"""
Dynamic few-shot selection: training questions are indexed once, and each
new question gets the most similar (question, solution) pairs.
"""

import logging
from typing import Dict, Iterable, List, Sequence, Tuple

from llm.skills import FewShotExample
from retrieval.embedder import Embedder
from retrieval.index import EmbeddingIndex

logger = logging.getLogger(__name__)

# one chunk per training question
_WHOLE = 1_000_000


def composite_query(question: str, topic_labels: Iterable[str]) -> str:
    """RAG query text: the question followed by the topic entity labels"""
    labels = [label for label in topic_labels if label]
    if not labels:
        return question
    return f"{question} || {', '.join(labels)}"


class FewShotSelector:
    """Examples are keyed by source id so a persisted index can be re-attached"""

    def __init__(self, index: EmbeddingIndex, examples: Dict[str, FewShotExample]):
        self.index = index
        self.examples = examples
        self.logger = logging.getLogger(__name__)

    @classmethod
    def build(cls, embedder: Embedder, examples: Sequence[FewShotExample]) -> "FewShotSelector":
        index = EmbeddingIndex(embedder)
        keyed: Dict[str, FewShotExample] = {}
        for position, example in enumerate(examples):
            key = example.source_id or str(position)
            if key in keyed:
                continue
            keyed[key] = example
            index.add(key, example.question, chunk_size=_WHOLE, overlap=0)
        logger.info(f"Few-shot index built over {len(keyed)} examples")
        return cls(index, keyed)

    def __len__(self) -> int:
        return len(self.examples)

    def select(self, question: str, n: int) -> List[Tuple[FewShotExample, float]]:
        """Up to n examples, most similar first; an example appears at most once"""
        if n < 1 or not self.examples:
            return []
        picked: List[Tuple[FewShotExample, float]] = []
        seen = set()
        # several chunks may share a source; over-fetch then dedupe
        for chunk, score in self.index.search(question, min(len(self.index), n * 2)):
            if chunk.source_id in seen or chunk.source_id not in self.examples:
                continue
            seen.add(chunk.source_id)
            picked.append((self.examples[chunk.source_id], score))
            if len(picked) == n:
                break
        return picked

    def examples_for(self, question: str, n: int) -> List[FewShotExample]:
        return [example for example, _ in self.select(question, n)]

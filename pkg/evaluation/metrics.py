"""
Answer metrics: Hits@1, exact match and macro-F1 over answer sets.

Comparison is on strings. Integer-valued numbers are canonicalised
("1999.0" -> "1999") always; the normalize flag adds lowercase + trim.
"""

from typing import Iterable, List, Sequence, Set, Tuple

from pipelines.sparql import canonical_number


def normalize_answer(answer: str, normalize: bool = True) -> str:
    answer = canonical_number(str(answer).strip() if normalize else str(answer))
    return answer.lower() if normalize else answer


def _answer_set(answers: Iterable[str], normalize: bool) -> Set[str]:
    return {normalize_answer(a, normalize) for a in answers}


def hits_at_1(predicted: Sequence[str], gold: Sequence[str], normalize: bool = True) -> bool:
    """True iff any predicted answer is a gold answer"""
    if not gold:
        raise ValueError("gold answers must be non-empty")
    return bool(_answer_set(predicted, normalize) & _answer_set(gold, normalize))


def exact_match(predicted: Sequence[str], gold: Sequence[str], normalize: bool = True) -> bool:
    """Set equality after normalisation and deduplication"""
    return _answer_set(predicted, normalize) == _answer_set(gold, normalize)


def f1(predicted: Sequence[str], gold: Sequence[str], normalize: bool = True) -> float:
    p = _answer_set(predicted, normalize)
    g = _answer_set(gold, normalize)
    common = len(p & g)
    if not p or not g or common == 0:
        return 0.0
    precision = common / len(p)
    recall = common / len(g)
    return 2 * precision * recall / (precision + recall)


def macro_f1(pairs: Iterable[Tuple[Sequence[str], Sequence[str]]], normalize: bool = True) -> float:
    scores: List[float] = [f1(p, g, normalize) for p, g in pairs]
    return sum(scores) / len(scores) if scores else 0.0

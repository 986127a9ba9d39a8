"""
HopLink Dataset Loaders
Native layouts of the six benchmark datasets mapped onto QuestionInstance.

  webqsp / cwq   preprocessed JSONL: id, question, entities, answers[{kb_id, text}]
                 (also the original WebQSP {"Questions": [...]} and CWQ JSON arrays)
  metaqa3        "question with [topic]\tanswer1|answer2" lines, optional
                 <stem>_qtype.txt sidecar holding the gold path type per line
  lcquad1        JSON array: _id, corrected_question, sparql_query
  lcquad2        JSON array: uid, question, sparql_wikidata (+ question variants)
  kqapro         JSON array: question, sparql, answer
"""

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from llm.skills import FewShotExample
from shared.errors import BackendError, DatasetError
from shared.protocol import Protocol, RecordType

logger = logging.getLogger(__name__)

DATASETS = ("webqsp", "metaqa3", "cwq", "lcquad1", "lcquad2", "kqapro")

# published split sizes
SPLIT_SIZES: Dict[str, Dict[str, int]] = {
    "webqsp": {"train": 2848, "dev": 250, "test": 1639},
    "metaqa3": {"train": 114196, "dev": 14274, "test": 14274},
    "cwq": {"train": 27639, "dev": 3519, "test": 3531},
    "lcquad1": {"train": 4000, "test": 1000},
    "lcquad2": {"train": 24180, "test": 6046},
    "kqapro": {"train": 94376, "val": 11797},
}

SPARQL_DIALECTS = {"lcquad1": "dbpedia-2016", "lcquad2": "wikidata", "kqapro": "kqapro-literal"}

_TOPIC = re.compile(r"\[([^\]]+)\]")
_MID = re.compile(r"ns:(m\.[0-9a-z_]+)")
_SPLITS = (("train", "train"), ("valid", "dev"), ("dev", "dev"), ("val", "val"), ("test", "test"))


@dataclass
class QuestionInstance:
    id: str
    question: str
    gold_answers: List[str] = field(default_factory=list)
    topic_entities: Optional[List[str]] = None
    gold_sparql: Optional[str] = None
    dataset: str = ""
    extras: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise DatasetError(f"instance {self.id} has an empty question", "question")

    @property
    def evaluable(self) -> bool:
        return bool(self.gold_answers)


def split_of(path: Union[str, Path]) -> Optional[str]:
    name = Path(path).name.lower()
    for marker, split in _SPLITS:
        if marker in name:
            return split
    return None


def _read_json(path: Path) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path} is not valid JSON: {e}") from e


def _require(record: Dict[str, Any], key: str, where: str) -> Any:
    if not isinstance(record, dict) or key not in record:
        raise DatasetError(f"{where}: missing field", key)
    return record[key]


def _first(value: Any) -> str:
    """An id from either a bare value or an [id, label] pair"""
    if isinstance(value, (list, tuple)):
        return str(value[0]) if value else ""
    if isinstance(value, dict):
        return str(value.get("kb_id") or value.get("id") or "")
    return str(value)


def _answer_text(answer: Any) -> str:
    if isinstance(answer, dict):
        return str(answer.get("text") or answer.get("answer") or answer.get("kb_id")
                   or answer.get("answer_id") or "")
    if isinstance(answer, (list, tuple)):
        return str(answer[-1]) if answer else ""
    return str(answer)


def _answer_id(answer: Any) -> str:
    if isinstance(answer, dict):
        return str(answer.get("kb_id") or answer.get("answer_id") or "")
    if isinstance(answer, (list, tuple)):
        return str(answer[0]) if answer else ""
    return ""


def _load_freebase_jsonl(path: Path, name: str) -> List[QuestionInstance]:
    instances = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{number}: invalid JSON line ({e})") from e
            where = f"{path}:{number}"
            answers = _require(record, "answers", where)
            instances.append(QuestionInstance(
                id=str(record.get("id", number)),
                question=_require(record, "question", where),
                gold_answers=[a for a in map(_answer_text, answers) if a],
                topic_entities=[e for e in map(_first, record.get("entities", [])) if e],
                gold_sparql=record.get("sparql") or record.get("query"),
                dataset=name,
                extras={"answer_ids": "|".join(a for a in map(_answer_id, answers) if a)},
            ))
    return instances


def _load_webqsp_original(data: Dict[str, Any], path: Path) -> List[QuestionInstance]:
    instances = []
    for position, record in enumerate(data["Questions"]):
        where = f"{path}[{position}]"
        parses = _require(record, "Parses", where) or [{}]
        parse = parses[0]
        answers = parse.get("Answers", [])
        instances.append(QuestionInstance(
            id=str(record.get("QuestionId", position)),
            question=record.get("ProcessedQuestion") or _require(record, "RawQuestion", where),
            gold_answers=[a.get("EntityName") or a.get("AnswerArgument", "") for a in answers],
            topic_entities=[parse["TopicEntityMid"]] if parse.get("TopicEntityMid") else [],
            gold_sparql=parse.get("Sparql"),
            dataset="webqsp",
            extras={"answer_ids": "|".join(a.get("AnswerArgument", "") for a in answers),
                    "topic_label": parse.get("TopicEntityName") or ""},
        ))
    return instances


def _load_cwq_original(data: List[Dict[str, Any]], path: Path) -> List[QuestionInstance]:
    instances = []
    for position, record in enumerate(data):
        where = f"{path}[{position}]"
        answers = record.get("answers", [])
        sparql = record.get("sparql")
        instances.append(QuestionInstance(
            id=str(record.get("ID", position)),
            question=_require(record, "question", where),
            gold_answers=[a.get("answer", "") for a in answers if a.get("answer")],
            topic_entities=list(dict.fromkeys(_MID.findall(sparql or ""))),
            gold_sparql=sparql,
            dataset="cwq",
            extras={"answer_ids": "|".join(a.get("answer_id", "") for a in answers),
                    "compositionality_type": record.get("compositionality_type", "")},
        ))
    return instances


def _load_freebase(path: Path, name: str) -> List[QuestionInstance]:
    with open(path, "r", encoding="utf-8") as f:
        head = f.read(1).lstrip()
    if head in ("[", "{"):
        try:
            data = _read_json(path)
        except DatasetError:
            data = None
        if isinstance(data, dict) and "Questions" in data:
            return _load_webqsp_original(data, path)
        if isinstance(data, list):
            return _load_cwq_original(data, path)
    return _load_freebase_jsonl(path, name)


def _load_metaqa(path: Path) -> List[QuestionInstance]:
    sidecar = path.with_name(f"{path.stem}_qtype.txt")
    qtypes: List[str] = []
    if sidecar.exists():
        qtypes = sidecar.read_text(encoding="utf-8").splitlines()
    instances = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DatasetError(f"{path}:{number}: expected 'question<TAB>answers'", "answers")
            text, answers = line.split("\t", 1)
            topics = _TOPIC.findall(text)
            extras = {}
            if number - 1 < len(qtypes) and qtypes[number - 1].strip():
                extras["qtype"] = qtypes[number - 1].strip()
            instances.append(QuestionInstance(
                id=f"{path.stem}-{number}",
                question=_TOPIC.sub(r"\1", text).strip(),
                gold_answers=[a for a in answers.split("|") if a],
                topic_entities=topics,
                dataset="metaqa3",
                extras=extras,
            ))
    return instances


def _load_lcquad1(path: Path) -> List[QuestionInstance]:
    data = _read_json(path)
    if not isinstance(data, list):
        raise DatasetError(f"{path}: expected a JSON array of questions")
    instances = []
    for position, record in enumerate(data):
        where = f"{path}[{position}]"
        instances.append(QuestionInstance(
            id=str(record.get("_id", position)),
            question=_require(record, "corrected_question", where),
            gold_sparql=_require(record, "sparql_query", where),
            dataset="lcquad1",
            extras={"template_id": str(record.get("sparql_template_id", "")),
                    "intermediary_question": record.get("intermediary_question") or ""},
        ))
    return instances


def _load_lcquad2(path: Path) -> List[QuestionInstance]:
    data = _read_json(path)
    if not isinstance(data, list):
        raise DatasetError(f"{path}: expected a JSON array of questions")
    instances = []
    skipped = 0
    for position, record in enumerate(data):
        where = f"{path}[{position}]"
        question = _require(record, "question", where)
        # only the "question" key is used; the variants ride along in extras
        if not question or not str(question).strip() or str(question).strip() in ("[]", "n/a"):
            skipped += 1
            continue
        instances.append(QuestionInstance(
            id=str(record.get("uid", position)),
            question=str(question),
            gold_sparql=_require(record, "sparql_wikidata", where),
            dataset="lcquad2",
            extras={"NNQT_question": record.get("NNQT_question") or "",
                    "paraphrased_question": record.get("paraphrased_question") or "",
                    "sparql_dbpedia18": record.get("sparql_dbpedia18") or "",
                    "template_id": str(record.get("template_id", ""))},
        ))
    if skipped:
        logger.warning(f"{path}: skipped {skipped} records whose 'question' is empty")
    return instances


def _load_kqapro(path: Path) -> List[QuestionInstance]:
    data = _read_json(path)
    if not isinstance(data, list):
        raise DatasetError(f"{path}: expected a JSON array of questions")
    instances = []
    for position, record in enumerate(data):
        where = f"{path}[{position}]"
        answer = record.get("answer")
        instances.append(QuestionInstance(
            id=str(position),
            question=_require(record, "question", where),
            gold_answers=[str(answer)] if answer not in (None, "") else [],
            gold_sparql=_require(record, "sparql", where),
            dataset="kqapro",
            extras={"choices": "|".join(record.get("choices", []) or [])},
        ))
    return instances


def load_dataset(name: str, path: Union[str, Path], limit: Optional[int] = None) -> List[QuestionInstance]:
    if name not in DATASETS:
        raise DatasetError(f"unknown dataset '{name}' (known: {', '.join(DATASETS)})")
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")

    if name in ("webqsp", "cwq"):
        instances = _load_freebase(path, name)
    elif name == "metaqa3":
        instances = _load_metaqa(path)
    elif name == "lcquad1":
        instances = _load_lcquad1(path)
    elif name == "lcquad2":
        instances = _load_lcquad2(path)
    else:
        instances = _load_kqapro(path)

    split = split_of(path)
    expected = SPLIT_SIZES.get(name, {}).get(split)
    if expected is not None:
        if len(instances) == expected:
            logger.info(f"{name}/{split}: loaded {len(instances)} instances")
        else:
            logger.warning(f"{name}/{split}: loaded {len(instances)} instances, published size is {expected}")
    else:
        logger.info(f"{name}: loaded {len(instances)} instances from {path}")
    return instances[:limit] if limit is not None else instances


def to_few_shot(instances: List[QuestionInstance], solution: str = "answers") -> List[FewShotExample]:
    """
    Few-shot corpus from a training split. solution: "answers" (joined with
    '; '), "sparql" or "qtype". Instances without that solution are skipped.
    """
    examples = []
    for instance in instances:
        if solution == "sparql":
            text = instance.gold_sparql or ""
        elif solution == "qtype":
            text = instance.extras.get("qtype", "")
        else:
            text = "; ".join(instance.gold_answers)
        if text:
            examples.append(FewShotExample(instance.question, text, instance.id))
    return examples


def resolve_gold_answers(instances: List[QuestionInstance], endpoint, dialect: str,
                         cache_path: Optional[Union[str, Path]] = None) -> List[QuestionInstance]:
    """
    Fill missing gold answers by executing the gold SPARQL once; results are
    cached as line-delimited gold records keyed by instance id.
    """
    cached: Dict[str, List[str]] = {}
    if cache_path:
        for record in Protocol.read_records(cache_path, RecordType.GOLD):
            cached[record["id"]] = record["answers"]

    resolved = 0
    for instance in instances:
        if instance.gold_answers or not instance.gold_sparql:
            continue
        if instance.id in cached:
            instance.gold_answers = list(cached[instance.id])
            continue
        try:
            answers = endpoint.query(instance.gold_sparql).values(dialect)
        except BackendError as e:
            logger.warning(f"Gold query for {instance.id} failed: {e}")
            continue
        instance.gold_answers = answers
        resolved += 1
        if cache_path:
            Protocol.append_record(cache_path, Protocol.create_gold(instance.id, answers))
    if resolved:
        logger.info(f"Resolved gold answers for {resolved} instances")
    return instances

"""
HopLink Evaluation Harness
Runs a pipeline over a dataset split and scores it.

Report directory layout:
  checkpoint.jsonl   one instance record per finished instance, append-only
  report.jsonl       final instance records in dataset order
  timings.tsv        id<TAB>latency seconds (kept apart so reports stay byte-identical)
  metrics.tsv        metric<TAB>value
  summary.txt        human-readable table
"""

import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from tqdm import tqdm

from evaluation.datasets import QuestionInstance
from evaluation.metrics import exact_match, f1, hits_at_1
from pipelines.trace import AnswerSet
from shared.errors import ConfigurationError
from shared.protocol import Protocol, RecordType

logger = logging.getLogger(__name__)

SAMPLE_MODES = ("first", "random")
CHECKPOINT_FILE = "checkpoint.jsonl"
REPORT_FILE = "report.jsonl"
TIMINGS_FILE = "timings.tsv"
METRICS_FILE = "metrics.tsv"
SUMMARY_FILE = "summary.txt"

Pipeline = Callable[[QuestionInstance], AnswerSet]


@dataclass
class EvalConfig:
    workers: int = 1
    sample: Optional[int] = None
    sample_mode: str = "first"
    seed: int = 0
    resume: bool = False
    normalize: bool = True
    report_dir: Optional[str] = None
    progress: bool = True

    def validate(self) -> None:
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        if self.sample is not None and self.sample < 1:
            raise ConfigurationError(f"sample must be >= 1, got {self.sample}")
        if self.sample_mode not in SAMPLE_MODES:
            raise ConfigurationError(f"sample mode must be one of {SAMPLE_MODES}")
        if self.resume and not self.report_dir:
            raise ConfigurationError("resume needs a report directory")


def sample_instances(instances: List[QuestionInstance], n: Optional[int], mode: str = "first",
                     seed: int = 0) -> List[QuestionInstance]:
    """First-n or a seeded random subset; the subset keeps dataset order"""
    if n is None or n >= len(instances):
        return list(instances)
    if mode == "first":
        return list(instances[:n])
    picked = sorted(random.Random(seed).sample(range(len(instances)), n))
    return [instances[i] for i in picked]


def score_record(instance: QuestionInstance, answer: Optional[AnswerSet], error: Optional[str],
                 normalize: bool) -> Dict[str, Any]:
    predicted = list(answer.answers) if answer else []
    evaluable = instance.evaluable
    record = {
        "type": RecordType.INSTANCE,
        "id": instance.id,
        "dataset": instance.dataset,
        "predicted": predicted,
        "gold": list(instance.gold_answers),
        "evaluable": evaluable,
        "accepted": bool(answer and answer.accepted),
        "hit": hits_at_1(predicted, instance.gold_answers, normalize) if evaluable else False,
        "em": exact_match(predicted, instance.gold_answers, normalize) if evaluable else False,
        "f1": round(f1(predicted, instance.gold_answers, normalize), 6) if evaluable else 0.0,
        "llm_calls": answer.llm_calls if answer else 0,
        "hops_used": answer.hops_used if answer else 0,
        "executions": answer.executions if answer else 0,
        "failure": answer.failure if answer else None,
        "error": error,
    }
    return record


@dataclass
class EvalReport:
    records: List[Dict[str, Any]]
    normalize: bool = True
    aggregates: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregates:
            self.aggregates = self.compute_aggregates(self.records)

    @staticmethod
    def compute_aggregates(records: List[Dict[str, Any]]) -> Dict[str, Any]:
        scored = [r for r in records if r["evaluable"]]
        n = len(scored)
        calls = sum(r["llm_calls"] for r in records)
        return {
            "instances": len(records),
            "evaluated": n,
            "skipped": len(records) - n,
            "accepted": sum(1 for r in records if r["accepted"]),
            "errors": sum(1 for r in records if r["error"]),
            "hits_at_1": sum(1 for r in scored if r["hit"]) / n if n else 0.0,
            "exact_match": sum(1 for r in scored if r["em"]) / n if n else 0.0,
            "macro_f1": round(sum(r["f1"] for r in scored) / n, 6) if n else 0.0,
            "llm_calls": calls,
            "mean_llm_calls": round(calls / len(records), 4) if records else 0.0,
        }

    def check(self) -> None:
        """Recompute every flag and aggregate from predicted/gold and compare"""
        for record in self.records:
            if not record["evaluable"]:
                continue
            hit = hits_at_1(record["predicted"], record["gold"], self.normalize)
            em = exact_match(record["predicted"], record["gold"], self.normalize)
            score = round(f1(record["predicted"], record["gold"], self.normalize), 6)
            if (hit, em, score) != (record["hit"], record["em"], record["f1"]):
                raise ValueError(f"instance {record['id']}: stored scores disagree with recomputation")
        if self.compute_aggregates(self.records) != self.aggregates:
            raise ValueError("report aggregates disagree with the instance records")

    def summary(self) -> str:
        a = self.aggregates
        rows = [
            ("instances", str(a["instances"])),
            ("evaluated", str(a["evaluated"])),
            ("skipped (no gold)", str(a["skipped"])),
            ("accepted", str(a["accepted"])),
            ("errors", str(a["errors"])),
            ("hits@1", f"{a['hits_at_1']:.4f}"),
            ("exact match", f"{a['exact_match']:.4f}"),
            ("macro F1", f"{a['macro_f1']:.4f}"),
            ("LLM calls", str(a["llm_calls"])),
            ("mean LLM calls", f"{a['mean_llm_calls']:.2f}"),
        ]
        width = max(len(name) for name, _ in rows)
        lines = [f"{'metric'.ljust(width)}  value", f"{'-' * width}  -----"]
        lines += [f"{name.ljust(width)}  {value}" for name, value in rows]
        return "\n".join(lines) + "\n"

    def metrics_tsv(self) -> str:
        return "".join(f"{key}\t{value}\n" for key, value in self.aggregates.items())

    def write(self, report_dir: Path) -> None:
        report_dir.mkdir(parents=True, exist_ok=True)
        with open(report_dir / REPORT_FILE, "wb") as f:
            for record in self.records:
                f.write(Protocol.encode_record(record))
        (report_dir / METRICS_FILE).write_text(self.metrics_tsv(), encoding="utf-8")
        (report_dir / SUMMARY_FILE).write_text(self.summary(), encoding="utf-8")

    @classmethod
    def read(cls, report_dir: Path, normalize: bool = True) -> "EvalReport":
        """Aggregates are recomputed at read time"""
        records = list(Protocol.read_records(Path(report_dir) / REPORT_FILE, RecordType.INSTANCE))
        return cls(records, normalize)


def _run_one(pipeline: Pipeline, instance: QuestionInstance,
             normalize: bool) -> Tuple[Dict[str, Any], float]:
    started = time.perf_counter()
    answer, error = None, None
    try:
        answer = pipeline(instance)
    except Exception as e:
        # one bad instance never aborts the run
        logger.warning(f"Instance {instance.id} failed: {type(e).__name__}: {e}")
        error = f"{type(e).__name__}: {e}"
    latency = time.perf_counter() - started
    return score_record(instance, answer, error, normalize), latency


def evaluate(pipeline: Pipeline, instances: List[QuestionInstance],
             config: Optional[EvalConfig] = None) -> EvalReport:
    config = config or EvalConfig()
    config.validate()
    chosen = sample_instances(instances, config.sample, config.sample_mode, config.seed)

    report_dir = Path(config.report_dir) if config.report_dir else None
    done: Dict[str, Dict[str, Any]] = {}
    if report_dir:
        report_dir.mkdir(parents=True, exist_ok=True)
        checkpoint = report_dir / CHECKPOINT_FILE
        if config.resume:
            wanted = {i.id for i in chosen}
            for record in Protocol.read_records(checkpoint, RecordType.INSTANCE):
                if record["id"] in wanted:
                    done[record["id"]] = record
            logger.info(f"Resuming: {len(done)} of {len(chosen)} instances already checkpointed")
        else:
            checkpoint.write_bytes(b"")
            (report_dir / TIMINGS_FILE).write_text("", encoding="utf-8")

    pending = [i for i in chosen if i.id not in done]
    with tqdm(total=len(pending), desc="eval", disable=not config.progress) as bar:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            futures = {executor.submit(_run_one, pipeline, instance, config.normalize): instance
                       for instance in pending}
            # completions are handled on this thread only, so it is the single writer
            for future in as_completed(futures):
                instance = futures[future]
                record, latency = future.result()
                done[instance.id] = record
                if report_dir:
                    Protocol.append_record(report_dir / CHECKPOINT_FILE, record)
                    with open(report_dir / TIMINGS_FILE, "a", encoding="utf-8") as f:
                        f.write(f"{instance.id}\t{latency:.6f}\n")
                bar.update(1)

    report = EvalReport([done[i.id] for i in chosen], config.normalize)
    report.check()
    if report_dir:
        report.write(report_dir)
        logger.info(f"Report written to {report_dir}")
    return report


def read_timings(report_dir: Path) -> Dict[str, float]:
    timings = {}
    path = Path(report_dir) / TIMINGS_FILE
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            instance_id, _, seconds = line.partition("\t")
            if seconds:
                timings[instance_id] = float(seconds)
    return timings

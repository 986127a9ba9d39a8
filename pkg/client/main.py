#!/usr/bin/env python3
"""
HopLink - Main Entry Point
Ingest graphs, build indexes, fetch descriptions, answer one question or
evaluate a dataset split.

Exit codes: 0 success (a rejected answer is still a success), 1 usage or
configuration error, 2 data error, 3 backend error.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

# Repository root on the path when run as a script
root_path = os.path.join(os.path.dirname(__file__), '..')
if root_path not in sys.path:
    sys.path.append(root_path)

from dotenv import load_dotenv

from client.config import BACKENDS, STRATEGIES, ConfigManager, RunConfig
from client.wiring import FEW_SHOT_SOLUTIONS, build_embedder, build_endpoint, build_pipeline, dialect_for
from evaluation.datasets import DATASETS, load_dataset, resolve_gold_answers, to_few_shot
from evaluation.harness import SAMPLE_MODES, EvalConfig, evaluate
from pipelines.descriptions import KINDS, HttpDescriptionSource, TermCatalog, fetch_descriptions
from retrieval.few_shot import FewShotSelector
from retrieval.index import EmbeddingIndex
from shared.errors import ConfigurationError, HopLinkError
from shared.protocol import Protocol
from store.loaders import FORMAT_ALIASES, load_graph, read_id_list
from store.snapshot import file_digest, write_snapshot


class _Parser(argparse.ArgumentParser):
    """Usage errors become ConfigurationError so they exit with status 1"""

    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


def _status(text: str) -> None:
    print(text, file=sys.stderr)


class HopLinkApp:
    """Command implementations; each returns the process exit code"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = self._resolve_config(args)

        level = logging.DEBUG if self.config.debug else logging.INFO
        logging.basicConfig(
            level=level,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )
        self.logger = logging.getLogger(__name__)

    @staticmethod
    def _resolve_config(args: argparse.Namespace) -> RunConfig:
        overrides: Dict[str, Any] = {}
        field_names = set(RunConfig().to_dict())
        for key, value in vars(args).items():
            if key in field_names:
                overrides[key] = value
        if getattr(args, "debug", False):
            overrides["debug"] = True
        config = ConfigManager(args.config).resolve(overrides)
        if not config.validate():
            raise ConfigurationError("invalid configuration (see log)")
        return config

    # ----- ingest ----------------------------------------------------------

    def cmd_ingest(self) -> int:
        source = self.args.source or self.config.graph
        if not source:
            raise ConfigurationError("ingest needs a graph source")
        cvt_ids = read_id_list(self.config.cvt_list) if self.config.cvt_list else None
        graph, report = load_graph(source, fmt=self.config.graph_format, strict=self.args.strict,
                                   entity_catalog=self.config.entity_catalog or None,
                                   relation_catalog=self.config.relation_catalog or None,
                                   cvt_ids=cvt_ids, unlabeled_is_cvt=self.config.unlabeled_is_cvt)
        out = self.args.out or self.config.snapshot or f"{source}.snapshot"
        digest = write_snapshot(graph, out)
        sys.stdout.write(report.to_text())
        print(f"snapshot={out}")
        print(f"digest={digest}")
        _status(f"✅ Ingested {report.triples} triples into {out}")
        return 0

    # ----- index -----------------------------------------------------------

    def cmd_index(self) -> int:
        if not self.args.out:
            raise ConfigurationError("index needs --out")
        embedder = build_embedder(self.config)
        if self.args.descriptions:
            catalog = TermCatalog.load_cache(self.args.descriptions, self.args.kind)
            documents = catalog.documents()
            if not documents:
                raise ConfigurationError(f"no {self.args.kind} descriptions in {self.args.descriptions}")
            index = EmbeddingIndex(embedder)
            for term_id, description in documents:
                index.add(term_id, description)
        elif self.args.corpus:
            name, _, path = self.args.corpus.partition(":")
            if not path:
                raise ConfigurationError("--corpus expects dataset:path")
            solution = FEW_SHOT_SOLUTIONS[self.config.strategy]
            examples = to_few_shot(load_dataset(name, path), solution)
            if not examples:
                raise ConfigurationError(f"corpus {path} has no usable examples")
            index = FewShotSelector.build(embedder, examples).index
        else:
            raise ConfigurationError("index needs --corpus or --descriptions")
        index.save(self.args.out)
        print(f"chunks={len(index)}")
        print(f"dimension={index.dimension}")
        print(f"digest={file_digest(self.args.out)}")
        _status(f"✅ Indexed {len(index)} chunks into {self.args.out}")
        return 0

    # ----- fetch-descriptions ----------------------------------------------

    def cmd_fetch_descriptions(self) -> int:
        ids = read_id_list(self.args.ids)
        source = HttpDescriptionSource(self.args.url_template or self.config.description_url,
                                       timeout=self.config.timeout,
                                       per_host=self.config.max_concurrency)
        cache = self.args.cache or (self.config.entity_descriptions if self.args.kind == "entity"
                                    else self.config.predicate_descriptions)
        catalog = fetch_descriptions(ids, source, kind=self.args.kind, cache_path=cache or None,
                                     workers=self.config.workers)
        print(f"described={len(catalog)}")
        print(f"unfetched={len(catalog.unfetched)}")
        icon = "✅" if not catalog.unfetched else "⚠️ "
        _status(f"{icon} {len(catalog)} {self.args.kind} descriptions available")
        return 0

    # ----- ask -------------------------------------------------------------

    def cmd_ask(self) -> int:
        handle = build_pipeline(self.config)
        result = handle.answer(self.args.question, self.args.topic or [])
        if self.args.trace:
            for record in result.trace:
                sys.stderr.write(Protocol.encode_record(record).decode("utf-8"))
        if result.accepted:
            for answer in result.answers:
                print(answer)
            _status(f"✅ {len(result.answers)} answer(s), {result.llm_calls} LLM call(s)")
        else:
            print("no answer")
            _status(f"❌ accepted=false ({result.failure or 'no answer'})")
        return 0

    # ----- eval ------------------------------------------------------------

    def cmd_eval(self) -> int:
        dataset = self.config.dataset
        if dataset not in DATASETS:
            raise ConfigurationError(f"eval needs --dataset (one of {', '.join(DATASETS)})")
        instances = load_dataset(dataset, self.args.data)
        if self.config.strategy == "sp" and any(not i.gold_answers for i in instances):
            resolve_gold_answers(instances, build_endpoint(self.config), dialect_for(self.config),
                                 self.config.gold_cache or None)
        handle = build_pipeline(self.config)
        report_dir = self.args.report_dir or os.path.join("reports", f"{dataset}-{self.config.strategy}")
        eval_config = EvalConfig(workers=self.config.workers, sample=self.args.sample,
                                 sample_mode=self.args.sample_mode, seed=self.config.seed,
                                 resume=self.args.resume, normalize=not self.args.no_normalize,
                                 report_dir=report_dir)
        report = evaluate(handle, instances, eval_config)
        sys.stdout.write(report.summary())
        _status(f"✅ Report written to {report_dir}")
        return 0

    def run(self) -> int:
        commands = {
            "ingest": self.cmd_ingest,
            "index": self.cmd_index,
            "fetch-descriptions": self.cmd_fetch_descriptions,
            "ask": self.cmd_ask,
            "eval": self.cmd_eval,
        }
        return commands[self.args.command]()


def _pipeline_flags() -> argparse.ArgumentParser:
    flags = _Parser(add_help=False)
    flags.add_argument("--strategy", choices=STRATEGIES)
    flags.add_argument("--graph")
    flags.add_argument("--snapshot")
    flags.add_argument("--scripted-fixture", dest="scripted_fixture")
    flags.add_argument("--sparql-fixture", dest="sparql_fixture")
    flags.add_argument("--sparql-endpoint", dest="sparql_endpoint")
    flags.add_argument("--few-shot-data", dest="few_shot_data")
    flags.add_argument("--few-shot-index", dest="few_shot_index")
    flags.add_argument("--metaqa-mode", dest="metaqa_mode", choices=("zero-shot", "few-shot", "majority"))
    flags.add_argument("--k", type=int)
    flags.add_argument("--max-hops", dest="max_hops", type=int)
    flags.add_argument("--retries", type=int)
    flags.add_argument("--few-shot-n", dest="few_shot_n", type=int)
    flags.add_argument("--k-entities", dest="k_entities", type=int)
    flags.add_argument("--k-predicates", dest="k_predicates", type=int)
    return flags


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hoplink", description="Knowledge graph question answering with LLM skills")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--backend", choices=BACKENDS)
    parser.add_argument("--trace", action="store_true", help="write trace records to standard error")
    parser.add_argument("--debug", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", help="load a graph and write a snapshot")
    ingest.add_argument("source", nargs="?")
    ingest.add_argument("--format", dest="graph_format", choices=sorted(FORMAT_ALIASES))
    ingest.add_argument("--strict", action="store_true")
    ingest.add_argument("--cvt-list", dest="cvt_list")
    ingest.add_argument("--entity-catalog", dest="entity_catalog")
    ingest.add_argument("--relation-catalog", dest="relation_catalog")
    ingest.add_argument("--out")

    index = commands.add_parser("index", help="build an embedding index")
    index.add_argument("--corpus", help="dataset:path of a training split")
    index.add_argument("--descriptions", help="description cache TSV")
    index.add_argument("--kind", choices=KINDS, default="entity")
    index.add_argument("--strategy", choices=STRATEGIES)
    index.add_argument("--out")

    fetch = commands.add_parser("fetch-descriptions", help="fetch and cache term descriptions")
    fetch.add_argument("--ids", required=True)
    fetch.add_argument("--kind", choices=KINDS, default="entity")
    fetch.add_argument("--cache")
    fetch.add_argument("--url-template", dest="url_template")

    ask = commands.add_parser("ask", parents=[_pipeline_flags()], help="answer one question")
    ask.add_argument("question")
    ask.add_argument("--topic", action="append", help="topic entity id or label (repeatable)")
    ask.add_argument("--dataset", choices=DATASETS)

    run_eval = commands.add_parser("eval", parents=[_pipeline_flags()], help="evaluate a dataset split")
    run_eval.add_argument("--dataset", choices=DATASETS, required=True)
    run_eval.add_argument("--data", required=True)
    run_eval.add_argument("--sample", type=int)
    run_eval.add_argument("--sample-mode", dest="sample_mode", choices=SAMPLE_MODES, default="first")
    run_eval.add_argument("--resume", action="store_true")
    run_eval.add_argument("--report-dir", dest="report_dir")
    run_eval.add_argument("--no-normalize", dest="no_normalize", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for HopLink"""
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
        app = HopLinkApp(args)
        return app.run()
    except HopLinkError as e:
        _status(f"❌ {e}")
        return e.exit_code
    except KeyboardInterrupt:
        _status("🛑 Interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())

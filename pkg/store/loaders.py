"""
Graph ingestion

Parses triple files into a KnowledgeGraph. Supported layouts:

  tsv       head<TAB>relation<TAB>tail (canonical)
  pipe      head|relation|tail (MetaQA kb.txt)
  ntriples  <s> <p> <o> .  (literal objects become entities)
  id-coded  h<TAB>r<TAB>t over ids declared in sidecar catalogs
            "id<TAB>external-id<TAB>label<TAB>is_cvt"
"""

import contextlib
import logging
import re
from array import array
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Tuple, Union

import numpy as np

from shared.errors import IngestionError
from store.triple_store import EntityCatalog, KnowledgeGraph, RelationCatalog

logger = logging.getLogger(__name__)

Source = Union[str, Path, IO[str]]

FORMAT_ALIASES = {
    "tsv": "tsv",
    "tsv-triples": "tsv",
    "pipe": "pipe",
    "metaqa": "pipe",
    "ntriples": "ntriples",
    "n-triples": "ntriples",
    "nt": "ntriples",
    "id-coded": "id-coded",
}

_TERM = r'(<[^>]*>|_:\S+|"(?:[^"\\]|\\.)*"(?:@[A-Za-z0-9-]+|\^\^<[^>]*>)?)'
_NT_LINE = re.compile(r'^\s*' + _TERM + r'\s+(<[^>]*>)\s+' + _TERM + r'\s*\.\s*$')
_TRUE = {"1", "true", "yes", "y", "t"}
_ESCAPE = re.compile(r"\\(.)")
_ESCAPES = {"n": "\n", "t": "\t", "r": "\r"}


@dataclass
class LoadReport:
    source: str
    triples: int = 0
    entities: int = 0
    relations: int = 0
    malformed: int = 0
    duplicates: int = 0

    def to_text(self) -> str:
        """Line-oriented key=value rendering"""
        return "\n".join([
            f"source={self.source}",
            f"triples={self.triples}",
            f"entities={self.entities}",
            f"relations={self.relations}",
            f"malformed={self.malformed}",
            f"duplicates={self.duplicates}",
        ]) + "\n"


class GraphBuilder:
    """Single-writer accumulator; build() deduplicates and indexes"""

    def __init__(self, entities: Optional[EntityCatalog] = None,
                 relations: Optional[RelationCatalog] = None):
        self.entities = entities if entities is not None else EntityCatalog()
        self.relations = relations if relations is not None else RelationCatalog()
        self._heads = array('q')
        self._rels = array('q')
        self._tails = array('q')

    def add(self, head: str, relation: str, tail: str,
            head_label: Optional[str] = None, tail_label: Optional[str] = None,
            relation_label: Optional[str] = None) -> None:
        self.add_ids(self.entities.intern(head, head_label),
                     self.relations.intern(relation, relation_label),
                     self.entities.intern(tail, tail_label))

    def add_ids(self, head: int, relation: int, tail: int) -> None:
        self._heads.append(head)
        self._rels.append(relation)
        self._tails.append(tail)

    def build(self) -> Tuple[KnowledgeGraph, int]:
        """Return the graph and the number of duplicate triples dropped"""
        heads = np.frombuffer(self._heads, dtype=np.int64) if len(self._heads) else np.zeros(0, dtype=np.int64)
        rels = np.frombuffer(self._rels, dtype=np.int64) if len(self._rels) else np.zeros(0, dtype=np.int64)
        tails = np.frombuffer(self._tails, dtype=np.int64) if len(self._tails) else np.zeros(0, dtype=np.int64)
        duplicates = 0
        if heads.size:
            stacked = np.stack([heads, rels, tails], axis=1)
            _, first = np.unique(stacked, axis=0, return_index=True)
            keep = np.sort(first)
            duplicates = int(heads.size - keep.size)
            heads, rels, tails = heads[keep], rels[keep], tails[keep]
        graph = KnowledgeGraph(self.entities, self.relations, heads.copy(), rels.copy(), tails.copy())
        return graph, duplicates


@contextlib.contextmanager
def _open_source(source: Source) -> Iterator[IO[str]]:
    if hasattr(source, "read"):
        yield source
        return
    try:
        handle = open(source, "r", encoding="utf-8")
    except OSError as e:
        raise IngestionError(f"cannot read source: {e}", path=str(source)) from e
    with handle:
        yield handle


def _source_name(source: Source) -> str:
    if hasattr(source, "read"):
        return getattr(source, "name", "<stream>")
    return str(source)


def _local_name(iri: str) -> str:
    body = iri[1:-1] if iri.startswith("<") else iri
    for sep in ("#", "/"):
        if sep in body:
            body = body.rsplit(sep, 1)[1] or body
    return body


def _literal_label(token: str) -> str:
    end = token.rfind('"')
    return _ESCAPE.sub(lambda m: _ESCAPES.get(m.group(1), m.group(1)), token[1:end])


def _nt_label(token: str) -> str:
    if token.startswith('"'):
        return _literal_label(token)
    if token.startswith("_:"):
        return ""
    return _local_name(token)


def load_catalog(source: Source, catalog, with_cvt: bool = False) -> dict:
    """
    Read an "id<TAB>external-id<TAB>label[<TAB>is_cvt]" sidecar.

    Returns the file-id -> local-id map; ids are interned in file order.
    """
    mapping = {}
    name = _source_name(source)
    with _open_source(source) as handle:
        for number, line in enumerate(handle, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise IngestionError("catalog line needs id and external id", path=name, line=number)
            file_id, external = parts[0], parts[1]
            label = parts[2] if len(parts) > 2 else ""
            if with_cvt:
                is_cvt = len(parts) > 3 and parts[3].strip().lower() in _TRUE
                mapping[file_id] = catalog.intern(external, label, is_cvt=is_cvt)
            else:
                mapping[file_id] = catalog.intern(external, label)
    return mapping


def load_graph(source: Source, fmt: str = "tsv", strict: bool = False,
               entity_catalog: Optional[Source] = None,
               relation_catalog: Optional[Source] = None,
               cvt_ids: Optional[Iterable[str]] = None,
               unlabeled_is_cvt: bool = False) -> Tuple[KnowledgeGraph, LoadReport]:
    """
    Parse a triple source into an indexed graph plus its load report.

    Malformed lines are counted and skipped; strict mode fails on the first.
    """
    layout = FORMAT_ALIASES.get(fmt)
    if layout is None:
        raise IngestionError(f"unknown graph format '{fmt}'")
    name = _source_name(source)
    builder = GraphBuilder()
    report = LoadReport(source=name)

    entity_map = relation_map = None
    if layout == "id-coded":
        if entity_catalog is None or relation_catalog is None:
            raise IngestionError("id-coded graphs need entity and relation catalogs", path=name)
        entity_map = load_catalog(entity_catalog, builder.entities, with_cvt=True)
        relation_map = load_catalog(relation_catalog, builder.relations)

    def malformed(number: int, line: str) -> None:
        if strict:
            raise IngestionError(f"malformed line: {line[:80]!r}", path=name, line=number)
        report.malformed += 1
        logger.debug(f"{name}:{number}: skipped malformed line")

    with _open_source(source) as handle:
        for number, line in enumerate(handle, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue

            if layout == "ntriples":
                match = _NT_LINE.match(line)
                if not match:
                    malformed(number, line)
                    continue
                s, p, o = match.groups()
                builder.add(s, p, o, head_label=_nt_label(s), tail_label=_nt_label(o),
                            relation_label=_local_name(p))
                continue

            parts = line.split("|" if layout == "pipe" else "\t")
            if len(parts) != 3 or not all(part.strip() for part in parts):
                malformed(number, line)
                continue
            head, relation, tail = (part.strip() for part in parts)

            if layout == "id-coded":
                try:
                    builder.add_ids(entity_map[head], relation_map[relation], entity_map[tail])
                except KeyError:
                    malformed(number, line)
                continue
            builder.add(head, relation, tail)

    entities = builder.entities
    for external in cvt_ids or ():
        local_id = entities.local_id(external)
        if local_id is not None:
            entities.set_cvt(local_id)
    if unlabeled_is_cvt:
        for local_id in range(len(entities)):
            if not entities.raw_label(local_id):
                entities.set_cvt(local_id)

    graph, report.duplicates = builder.build()
    report.triples = graph.triple_count
    report.entities = len(graph.entities)
    report.relations = len(graph.relations)
    logger.info(f"Loaded {name}: {report.triples} triples, {report.entities} entities, "
                f"{report.relations} relations, {report.malformed} malformed")
    return graph, report


def read_id_list(source: Source) -> list:
    """One id per line (CVT lists, description id lists)"""
    with _open_source(source) as handle:
        return [line.strip() for line in handle if line.strip() and not line.startswith("#")]

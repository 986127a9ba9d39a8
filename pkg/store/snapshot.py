"""
Binary graph snapshots for fast reload.

Layout: magic line, one JSON header line, entity catalog block, relation
catalog block (TSV, one row per local id), then the triple array as
little-endian int32 (head, relation, tail) rows. Writing the same graph twice
yields identical bytes.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Union

import numpy as np

from shared.errors import IngestionError
from store.triple_store import EntityCatalog, KnowledgeGraph, RelationCatalog

logger = logging.getLogger(__name__)

MAGIC = b"HOPLINK-KG 1\n"


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"t": "\t", "n": "\n"}.get(nxt, nxt))
            i += 2
            continue
        out.append(ch)
        i += 1
    return "".join(out)


def write_snapshot(graph: KnowledgeGraph, path: Union[str, Path]) -> str:
    """Write the snapshot and return its SHA-256 hex digest"""
    entities, relations = graph.entities, graph.relations
    entity_rows = "".join(
        f"{_escape(entities.external_id(i))}\t{_escape(entities.raw_label(i))}\t{int(entities.is_cvt(i))}\n"
        for i in range(len(entities))
    ).encode("utf-8")
    relation_rows = "".join(
        f"{_escape(relations.external_id(i))}\t{_escape(relations.raw_label(i))}\n"
        for i in range(len(relations))
    ).encode("utf-8")
    heads, rels, tails = graph.triple_arrays()
    triples = np.stack([heads, rels, tails], axis=1).astype("<i4") if heads.size else np.zeros((0, 3), dtype="<i4")
    triple_bytes = triples.tobytes()

    header = json.dumps({
        "entities": len(entities),
        "relations": len(relations),
        "triples": int(triples.shape[0]),
        "entity_bytes": len(entity_rows),
        "relation_bytes": len(relation_rows),
    }, sort_keys=True).encode("utf-8") + b"\n"

    payload = MAGIC + header + entity_rows + relation_rows + triple_bytes
    Path(path).write_bytes(payload)
    digest = hashlib.sha256(payload).hexdigest()
    logger.info(f"Snapshot written to {path} ({len(payload)} bytes, sha256={digest[:12]})")
    return digest


def read_snapshot(path: Union[str, Path]) -> KnowledgeGraph:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IngestionError(f"cannot read snapshot: {e}", path=str(path)) from e
    if not data.startswith(MAGIC):
        raise IngestionError("not a graph snapshot", path=str(path))

    offset = len(MAGIC)
    newline = data.index(b"\n", offset)
    header = json.loads(data[offset:newline])
    offset = newline + 1

    entities = EntityCatalog()
    block = data[offset:offset + header["entity_bytes"]].decode("utf-8")
    offset += header["entity_bytes"]
    for row in block.split("\n")[:-1]:
        external, label, cvt = row.split("\t")
        entities.intern(_unescape(external), _unescape(label), is_cvt=cvt == "1")

    relations = RelationCatalog()
    block = data[offset:offset + header["relation_bytes"]].decode("utf-8")
    offset += header["relation_bytes"]
    for row in block.split("\n")[:-1]:
        external, label = row.split("\t")
        relations.intern(_unescape(external), _unescape(label))

    triples = np.frombuffer(data, dtype="<i4", count=header["triples"] * 3, offset=offset)
    triples = triples.reshape(-1, 3).astype(np.int64)
    return KnowledgeGraph(entities, relations, triples[:, 0], triples[:, 1], triples[:, 2])


def file_digest(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

"""
HopLink Triple Store

In-memory knowledge graph: interned entity/relation catalogs plus forward and
reverse adjacency indexes stored as CSR arrays. Every edge is traversable in
both directions. The graph is immutable once built and safe to share between
threads.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, Set, Tuple

import numpy as np

from shared.errors import EntityLookupError

logger = logging.getLogger(__name__)

UNLABELED = "<unlabeled>"


def normalize_label(text: str) -> str:
    """Lowercase + trim, the fallback match used by contains()"""
    return text.strip().lower()


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Provenance(NamedTuple):
    """How a candidate was reached: source entity, relation chain, CVT hop"""
    source: int
    relations: Tuple[int, ...]
    via_cvt: Optional[int] = None


@dataclass
class CandidateSet:
    """Frontier of entity ids reached during one IR iteration"""
    entities: List[int] = field(default_factory=list)
    hop: int = 0
    provenance: Dict[int, List[Provenance]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities)

    def __contains__(self, entity: int) -> bool:
        return entity in self.provenance


class Catalog:
    """Bidirectional local-id <-> external-id map with display labels"""

    def __init__(self):
        self._external_to_local: Dict[str, int] = {}
        self.external_ids: List[str] = []
        self._labels: List[str] = []
        self._by_label: Dict[str, int] = {}
        self._by_normalized: Dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.external_ids)

    def __contains__(self, local_id: int) -> bool:
        return isinstance(local_id, (int, np.integer)) and 0 <= local_id < len(self.external_ids)

    def intern(self, external_id: str, label: Optional[str] = None) -> int:
        """Return the local id for external_id, adding it if new"""
        local_id = self._external_to_local.get(external_id)
        if local_id is not None:
            return local_id
        local_id = len(self.external_ids)
        self._external_to_local[external_id] = local_id
        self.external_ids.append(external_id)
        label = label if label is not None else external_id
        self._labels.append(label)
        if label:
            self._by_label.setdefault(label, local_id)
            self._by_normalized.setdefault(normalize_label(label), local_id)
        return local_id

    def local_id(self, external_id: str) -> Optional[int]:
        return self._external_to_local.get(external_id)

    def external_id(self, local_id: int) -> str:
        return self.external_ids[local_id]

    def label(self, local_id: int) -> str:
        """Display label; unlabeled entries (CVT nodes) get the UNLABELED marker"""
        return self._labels[local_id] or UNLABELED

    def raw_label(self, local_id: int) -> str:
        return self._labels[local_id]

    def resolve(self, text: str) -> Optional[int]:
        """Exact label, then exact external id, then normalized label"""
        local_id = self._by_label.get(text)
        if local_id is None:
            local_id = self._external_to_local.get(text)
        if local_id is None:
            local_id = self._by_normalized.get(normalize_label(text))
        return local_id


class EntityCatalog(Catalog):
    """Entity catalog with the per-entity CVT flag"""

    def __init__(self):
        super().__init__()
        self._cvt: List[bool] = []

    def intern(self, external_id: str, label: Optional[str] = None, is_cvt: bool = False) -> int:
        before = len(self.external_ids)
        local_id = super().intern(external_id, label)
        if local_id == before:
            self._cvt.append(bool(is_cvt))
        elif is_cvt:
            self._cvt[local_id] = True
        return local_id

    def is_cvt(self, local_id: int) -> bool:
        return self._cvt[local_id]

    def set_cvt(self, local_id: int, flag: bool = True) -> None:
        self._cvt[local_id] = flag

    def cvt_flags(self) -> List[bool]:
        return list(self._cvt)


class RelationCatalog(Catalog):
    """Relation catalog"""


def _csr(keys: np.ndarray, rels: np.ndarray, others: np.ndarray,
         size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # stable sort keeps source-file order inside each adjacency list
    order = np.argsort(keys, kind="stable")
    offsets = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=size), out=offsets[1:])
    return offsets, rels[order], others[order]


class KnowledgeGraph:
    """
    G = set of (head, relation, tail) edges over interned catalogs.

    Forward index: entity -> (relation, tail) pairs; reverse index:
    entity -> (relation, head) pairs. Both are CSR slices over numpy arrays.
    """

    def __init__(self, entities: EntityCatalog, relations: RelationCatalog,
                 heads: np.ndarray, rels: np.ndarray, tails: np.ndarray):
        self.entities = entities
        self.relations = relations
        self._heads = np.asarray(heads, dtype=np.int64)
        self._rels = np.asarray(rels, dtype=np.int64)
        self._tails = np.asarray(tails, dtype=np.int64)
        self._build_indexes()

    def _build_indexes(self):
        size = len(self.entities)
        self._fwd_offsets, self._fwd_rel, self._fwd_nbr = _csr(self._heads, self._rels, self._tails, size)
        self._rev_offsets, self._rev_rel, self._rev_nbr = _csr(self._tails, self._rels, self._heads, size)
        self._cvt = np.array(self.entities.cvt_flags(), dtype=bool) if size else np.zeros(0, dtype=bool)

    # ----- basic accessors -------------------------------------------------

    @property
    def triple_count(self) -> int:
        return int(self._heads.shape[0])

    def triples(self) -> Iterator[Triple]:
        """Triples in source order (first occurrence)"""
        for h, r, t in zip(self._heads.tolist(), self._rels.tolist(), self._tails.tolist()):
            yield Triple(h, r, t)

    def triple_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self._heads, self._rels, self._tails

    def label(self, entity: int) -> str:
        return self.entities.label(entity)

    def relation_label(self, relation: int) -> str:
        return self.relations.label(relation)

    def is_cvt(self, entity: int) -> bool:
        return bool(self._cvt[entity])

    def _check(self, entity: int) -> None:
        if entity not in self.entities:
            raise EntityLookupError(f"unknown entity id {entity}")

    def outgoing(self, entity: int) -> List[Tuple[int, int]]:
        """(relation, tail) pairs in source order"""
        self._check(entity)
        lo, hi = self._fwd_offsets[entity], self._fwd_offsets[entity + 1]
        return list(zip(self._fwd_rel[lo:hi].tolist(), self._fwd_nbr[lo:hi].tolist()))

    def incoming(self, entity: int) -> List[Tuple[int, int]]:
        """(relation, head) pairs in source order"""
        self._check(entity)
        lo, hi = self._rev_offsets[entity], self._rev_offsets[entity + 1]
        return list(zip(self._rev_rel[lo:hi].tolist(), self._rev_nbr[lo:hi].tolist()))

    def neighbors(self, entity: int) -> List[Tuple[int, int, bool]]:
        """(relation, neighbor, outgoing) over both directions"""
        out = [(r, n, True) for r, n in self.outgoing(entity)]
        return out + [(r, n, False) for r, n in self.incoming(entity)]

    def tails(self, entity: int, relation: int) -> List[int]:
        self._check(entity)
        lo, hi = self._fwd_offsets[entity], self._fwd_offsets[entity + 1]
        mask = self._fwd_rel[lo:hi] == relation
        return self._fwd_nbr[lo:hi][mask].tolist()

    def heads(self, entity: int, relation: int) -> List[int]:
        self._check(entity)
        lo, hi = self._rev_offsets[entity], self._rev_offsets[entity + 1]
        mask = self._rev_rel[lo:hi] == relation
        return self._rev_nbr[lo:hi][mask].tolist()

    # ----- IR primitives ---------------------------------------------------

    def one_hop_relations(self, frontier: Iterable[int]) -> List[int]:
        """Relations on any edge incident to the frontier, ascending ids"""
        parts = []
        for entity in set(frontier):
            self._check(entity)
            parts.append(self._fwd_rel[self._fwd_offsets[entity]:self._fwd_offsets[entity + 1]])
            parts.append(self._rev_rel[self._rev_offsets[entity]:self._rev_offsets[entity + 1]])
        if not parts:
            return []
        return np.unique(np.concatenate(parts)).tolist()

    def one_hop_entities(self, frontier: Iterable[int], relations: Iterable[int],
                         expand_cvt: bool = True, hop: int = 0) -> CandidateSet:
        """
        Entities one edge away from the frontier over the given relations.

        With expand_cvt, a reached CVT node is replaced by its own neighbors
        (any relation, the originating entity excluded) and never returned.
        """
        wanted = np.fromiter(sorted(set(relations)), dtype=np.int64)
        found: Dict[int, Set[Provenance]] = {}
        if wanted.size == 0:
            return CandidateSet(hop=hop)

        for source in sorted(set(frontier)):
            self._check(source)
            for offsets, rel_arr, nbr_arr in ((self._fwd_offsets, self._fwd_rel, self._fwd_nbr),
                                              (self._rev_offsets, self._rev_rel, self._rev_nbr)):
                lo, hi = offsets[source], offsets[source + 1]
                if lo == hi:
                    continue
                rel_slice = rel_arr[lo:hi]
                mask = np.isin(rel_slice, wanted)
                if not mask.any():
                    continue
                for rel, nbr in zip(rel_slice[mask].tolist(), nbr_arr[lo:hi][mask].tolist()):
                    if expand_cvt and self._cvt[nbr]:
                        self._expand_cvt(source, rel, nbr, found)
                    else:
                        found.setdefault(nbr, set()).add(Provenance(source, (rel,)))

        return CandidateSet(
            entities=sorted(found),
            hop=hop,
            provenance={e: sorted(p) for e, p in sorted(found.items())},
        )

    def _expand_cvt(self, source: int, rel: int, cvt: int, found: Dict[int, Set[Provenance]]) -> None:
        for rel2, nbr2, _ in self.neighbors(cvt):
            if nbr2 == source or self._cvt[nbr2]:
                continue
            found.setdefault(nbr2, set()).add(Provenance(source, (rel, rel2), cvt))

    def contains(self, item: str, kind: str = "relation") -> Tuple[bool, Optional[int]]:
        """Resolve a relation or entity label; (False, None) when absent"""
        catalog = self.relations if kind == "relation" else self.entities
        local_id = catalog.resolve(item)
        return local_id is not None, local_id

    def describe_candidate(self, candidates: CandidateSet, entity: int) -> str:
        """Label plus a one-line provenance, as shown to the entity-filter skill"""
        chains = candidates.provenance.get(entity, [])
        if not chains:
            return self.label(entity)
        first = chains[0]
        path = " -> ".join(self.relation_label(r) for r in first.relations)
        source = self.label(first.source)
        return f"{self.label(entity)} (from {source} via {path})"

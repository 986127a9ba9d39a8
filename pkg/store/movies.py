"""
Movie dictionaries for MetaQA-style graphs: all outgoing relations of one
movie aggregated into relation label -> neighbor labels, in source order.
"""

import threading
from typing import Dict, List

from shared.errors import EntityLookupError
from store.triple_store import KnowledgeGraph

MovieEntry = Dict[str, List[str]]
MovieLinks = Dict[int, List[int]]

_WIDTH = 79


def build_movie_dictionary(graph: KnowledgeGraph, movie: int) -> MovieEntry:
    return _labelled(graph, _build_links(graph, movie))


def _build_links(graph: KnowledgeGraph, movie: int) -> MovieLinks:
    if movie not in graph.entities:
        raise EntityLookupError(f"unknown movie id {movie}")
    links: MovieLinks = {}
    for relation, tail in graph.outgoing(movie):
        links.setdefault(relation, []).append(tail)
    return links


def _labelled(graph: KnowledgeGraph, links: MovieLinks) -> MovieEntry:
    return {graph.relation_label(relation): [graph.label(tail) for tail in tails]
            for relation, tails in links.items()}


class MovieDictionary:
    """Lazily built, thread-safe cache of movie entries"""

    def __init__(self, graph: KnowledgeGraph):
        self.graph = graph
        self._links: Dict[int, MovieLinks] = {}
        self._entries: Dict[int, MovieEntry] = {}
        self._lock = threading.Lock()

    def links(self, movie: int) -> MovieLinks:
        """relation id -> tail ids, source order"""
        with self._lock:
            cached = self._links.get(movie)
        if cached is not None:
            return cached
        built = _build_links(self.graph, movie)
        with self._lock:
            return self._links.setdefault(movie, built)

    def targets(self, movie: int, relation: int) -> List[int]:
        return self.links(movie).get(relation, [])

    def entry(self, movie: int) -> MovieEntry:
        with self._lock:
            cached = self._entries.get(movie)
        if cached is not None:
            return cached
        built = _labelled(self.graph, self.links(movie))
        with self._lock:
            return self._entries.setdefault(movie, built)

    def __getitem__(self, movie: int) -> MovieEntry:
        return self.entry(movie)

    def listing(self, movie: int) -> str:
        return format_movie_dictionary(self.entry(movie))


def format_movie_dictionary(entry: MovieEntry) -> str:
    """
    Wrapped dictionary layout: one key per line; a list that would overflow
    the width is broken one item per line with a two-space indent.
    """
    flat = repr(entry)
    if len(flat) <= _WIDTH or not entry:
        return flat
    lines = []
    items = list(entry.items())
    for index, (key, values) in enumerate(items):
        opener = "{" if index == 0 else " "
        closer = "}" if index == len(items) - 1 else ","
        line = f"{opener}{key!r}: {values!r}{closer}"
        if len(line) <= _WIDTH or len(values) < 2:
            lines.append(line)
            continue
        lines.append(f"{opener}{key!r}: [{values[0]!r},")
        for value in values[1:-1]:
            lines.append(f"  {value!r},")
        lines.append(f"  {values[-1]!r}]{closer}")
    return "\n".join(lines)

"""
Embedding index, chunking and few-shot selection tests.
"""

import numpy as np
import pytest

from llm.skills import FewShotExample
from retrieval.embedder import EmbeddingVector, HashEmbedder, RemoteEmbedder, cosine
from retrieval.few_shot import FewShotSelector, composite_query
from retrieval.index import EmbeddingIndex, chunk_text, sidecar_path
from shared.errors import BackendError, ConfigurationError, IngestionError

DOCUMENTS = {
    "Q42": "Douglas Adams English writer and humorist",
    "Q350": "Cambridge city in Cambridgeshire England",
    "Q145": "United Kingdom country in north western Europe",
    "P19": "place of birth most specific known birth location of a person",
    "P27": "country of citizenship the object is a country that recognizes the subject as its citizen",
    "P31": "instance of that class of which this subject is a particular example",
}


@pytest.fixture
def index():
    built = EmbeddingIndex(HashEmbedder(128, seed=3))
    for source_id, text in DOCUMENTS.items():
        built.add(source_id, text)
    return built


def exhaustive_scan(index, query, k):
    query_vector = index.embedder.embed(query)
    scored = [(chunk.chunk_id, cosine(query_vector, chunk.vector)) for chunk in index.chunks]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def test_hash_embedder_is_seeded_and_normalised():
    a = HashEmbedder(64, seed=1).embed("place of birth")
    b = HashEmbedder(64, seed=1).embed("place of birth")
    c = HashEmbedder(64, seed=2).embed("place of birth")

    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert np.linalg.norm(a.values) == pytest.approx(1.0)
    assert HashEmbedder(64).embed("   ").degenerate
    with pytest.raises(ConfigurationError):
        HashEmbedder(0)


def test_embedding_vector_checks():
    assert EmbeddingVector.of([0, 0, 0]).degenerate
    with pytest.raises(ValueError):
        EmbeddingVector.of([1.0, 2.0], dimension=3)
    with pytest.raises(ValueError):
        EmbeddingVector.of([1.0, float("nan")])


@pytest.mark.parametrize("size,overlap,expected", [
    (3, 1, ["a b c d e f", "e f g"]),
    (2, 0, ["a b c d", "e f g"]),
    (10, 2, ["a b c d e f g"]),
])
def test_chunk_text_sizes_by_estimated_tokens(size, overlap, expected):
    assert chunk_text("a b c d e f g", size, overlap) == expected


def test_chunk_text_overlaps_whole_words():
    text = " ".join(f"w{i:02d}" for i in range(10))
    assert chunk_text(text, 4, 1) == ["w00 w01 w02 w03", "w03 w04 w05 w06", "w06 w07 w08 w09"]


def test_chunk_text_rejects_bad_windows():
    with pytest.raises(ConfigurationError):
        chunk_text("a b", 2, 2)
    with pytest.raises(ConfigurationError):
        EmbeddingIndex(HashEmbedder(8), chunk_size=4, overlap=-1)
    assert chunk_text("   ", 4, 1) == []


def test_long_documents_are_chunked():
    index = EmbeddingIndex(HashEmbedder(32), chunk_size=4, overlap=1)
    ids = index.add("doc", "one two three four five six seven")
    assert ids == [0, 1, 2]
    assert [index.get(i).text for i in ids] == ["one two three", "four five six", "six seven"]
    assert index.add("empty", "  ") == []


def test_self_similarity_is_one(index):
    for chunk in index.chunks:
        top_id, score = index.top_k(chunk.text, 1)[0]
        assert top_id == chunk.chunk_id
        assert score == pytest.approx(1.0)


@pytest.mark.parametrize("query", ["where was douglas adams born", "country of the city", "zebra"])
def test_top_k_matches_exhaustive_scan(index, query):
    got = index.top_k(query, 4)
    expected = exhaustive_scan(index, query, 4)
    assert [chunk_id for chunk_id, _ in got] == [chunk_id for chunk_id, _ in expected]
    assert [score for _, score in got] == pytest.approx([score for _, score in expected])


def test_top_k_edge_cases(index):
    assert len(index.top_k("birth", 100)) == len(DOCUMENTS)
    with pytest.raises(ConfigurationError):
        index.top_k("birth", 0)
    assert EmbeddingIndex(HashEmbedder(8)).top_k("anything", 3) == []

    # a query with no tokens scores everything 0; ties go to ascending ids
    assert index.top_k("?!", 3) == [(0, 0.0), (1, 0.0), (2, 0.0)]


class ShortEmbedder(HashEmbedder):
    """Claims 8 dimensions, returns 4"""

    def embed(self, text):
        return EmbeddingVector.of(np.ones(4))


def test_dimension_mismatch_rejected():
    index = EmbeddingIndex(ShortEmbedder(8))
    with pytest.raises(ConfigurationError):
        index.add("x", "text")
    assert len(index) == 0


def test_save_and_load(tmp_path, index):
    path = tmp_path / "terms.index"
    index.save(path)
    assert sidecar_path(path).exists()

    restored = EmbeddingIndex.load(path, HashEmbedder(128, seed=3))
    assert len(restored) == len(index)
    assert [c.source_id for c in restored.chunks] == list(DOCUMENTS)
    assert restored.top_k("place of birth", 3) == index.top_k("place of birth", 3)

    with pytest.raises(ConfigurationError):
        EmbeddingIndex.load(path, HashEmbedder(64))
    with pytest.raises(IngestionError):
        EmbeddingIndex.load(tmp_path / "missing.index", HashEmbedder(128))


def test_sidecar_escapes_tabs_and_newlines(tmp_path):
    index = EmbeddingIndex(HashEmbedder(16))
    index.add("id\twith tab", "line one\nline two\\end")
    index.save(tmp_path / "odd.index")

    chunk = EmbeddingIndex.load(tmp_path / "odd.index", HashEmbedder(16)).chunks[0]
    assert chunk.source_id == "id\twith tab"
    assert chunk.text == "line one line two\\end"


def test_few_shot_selection():
    examples = [
        FewShotExample("where was douglas adams born", "SELECT ?x WHERE { wd:Q42 wdt:P19 ?x }", "t1"),
        FewShotExample("where was douglas adams born", "duplicate source id", "t1"),
        FewShotExample("what is the capital of france", "SELECT ?x WHERE { wd:Q142 wdt:P36 ?x }", "t2"),
        FewShotExample("who directed kismet", "SELECT ?x WHERE { wd:Q1 wdt:P57 ?x }", "t3"),
    ]
    selector = FewShotSelector.build(HashEmbedder(128), examples)

    assert len(selector) == 3
    picked = selector.select("where was douglas adams born", 2)
    assert picked[0][0].source_id == "t1"
    assert picked[0][1] == pytest.approx(1.0)
    assert len(picked) == 2
    assert len({example.source_id for example, _ in selector.select("born", 10)}) == 3
    assert selector.examples_for("born", 0) == []

    with pytest.raises(ValueError):
        FewShotExample("question", "")


def test_composite_query():
    assert composite_query("where was he born", ["Douglas Adams", ""]) == "where was he born || Douglas Adams"
    assert composite_query("where was he born", []) == "where was he born"


class _JsonResponse:
    text = "error"

    def __init__(self, status_code, payload):
        self.status_code = status_code
        self._payload = payload

    def json(self):
        return self._payload


class _JsonSession:
    def __init__(self, status, payload):
        self.status, self.payload = status, payload

    def post(self, url, json=None, headers=None, timeout=None):
        return _JsonResponse(self.status, self.payload)


def test_remote_embedder_payload_shapes():
    for payload in ([1.0, 0.0], {"embedding": [1.0, 0.0]}, {"data": [{"embedding": [1.0, 0.0]}]}):
        embedder = RemoteEmbedder("http://embed.local", 2, session=_JsonSession(200, payload))
        assert embedder.embed("text").values.tolist() == [1.0, 0.0]

    wrong_size = RemoteEmbedder("http://embed.local", 3, session=_JsonSession(200, [1.0, 0.0]))
    with pytest.raises(BackendError):
        wrong_size.embed("text")

    rejected = RemoteEmbedder("http://embed.local", 2, session=_JsonSession(400, {}))
    with pytest.raises(BackendError):
        rejected.embed("text")

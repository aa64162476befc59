import json

import numpy as np
import pytest

from dykpipe import ragstore as rs
from dykpipe.backends import EchoCompletion, HashEmbedder, MappedEmbedder
from dykpipe.errors import InputError


def make_articles(n):
    return [
        (f"doc{i:03d}", f"Title {i}", f"article body {i} about topic {i % 7}")
        for i in range(n)
    ]


def test_build_index_unit_rows_and_meta():
    articles = make_articles(8)
    index = rs.build_index(articles, HashEmbedder(dim=16))
    assert index.n == 8
    np.testing.assert_allclose(np.linalg.norm(index.vectors, axis=1), 1.0, atol=1e-6)
    assert index.meta["doc003"] == ("Title 3", "article body 3 about topic 3")


def test_build_index_rejects_bad_articles():
    with pytest.raises(InputError):
        rs.build_index([("a", "t", "x"), ("a", "t", "y")], HashEmbedder(8))
    with pytest.raises(InputError):
        rs.build_index([("a", "t", "   ")], HashEmbedder(8))


def test_char_budget_truncates_before_embedding():
    long_text = "shared prefix " + "x" * 5000
    short_text = long_text[:1500]
    emb = HashEmbedder(dim=32)
    a = rs.build_index([("a", "t", long_text)], emb, char_budget=1500)
    b = rs.build_index([("b", "t", short_text)], emb, char_budget=1500)
    np.testing.assert_array_equal(a.vectors, b.vectors)
    # full text stays in meta for prompt assembly
    assert a.meta["a"][1] == long_text


def test_retrieve_matches_bruteforce_oracle():
    articles = make_articles(40)
    emb = HashEmbedder(dim=24)
    index = rs.build_index(articles, emb)
    rng = np.random.default_rng(0)
    for _ in range(50):
        query = " ".join(f"word{rng.integers(0, 30)}" for _ in range(5))
        got = rs.retrieve_topk(index, query, 3, emb)

        qvec = np.asarray(emb.embed([query])[0], dtype=np.float32)
        qvec = qvec / np.linalg.norm(qvec)
        scores = index.vectors @ qvec
        oracle = sorted(
            zip(index.doc_ids, scores.tolist()), key=lambda p: (-p[1], p[0])
        )[:3]
        assert [d for d, _ in got] == [d for d, _ in oracle]
        assert got == [(d, pytest.approx(s)) for d, s in oracle]


def test_retrieve_edge_cases():
    emb = HashEmbedder(dim=8)
    index = rs.build_index(make_articles(2), emb)
    assert len(rs.retrieve_topk(index, "q", 10, emb)) == 2  # clamped with a warning
    with pytest.raises(InputError):
        rs.retrieve_topk(index, "q", 0, emb)
    empty = rs.RagIndex(doc_ids=[], vectors=np.zeros((0, 0)), meta={})
    with pytest.raises(InputError):
        rs.retrieve_topk(empty, "q", 1, emb)


def test_pinned_query_ranks_gold_first():
    vec = [1.0] + [0.0] * 7
    emb = MappedEmbedder(dim=8, mapping={"gold body": vec, "the question?": vec})
    articles = [("gold", "Gold", "gold body")] + [
        (f"noise{i}", "Noise", f"noise body {i}") for i in range(5)
    ]
    index = rs.build_index(articles, emb)
    hits = rs.retrieve_topk(index, "the question?", 3, emb)
    assert hits[0][0] == "gold"
    assert hits[0][1] == pytest.approx(1.0)


def test_assemble_rag_prompt_layout():
    prompt = rs.assemble_rag_prompt(
        "Who did it?", [("Title A", "text a"), ("Title B", "text b")]
    )
    assert prompt == (
        "Context:\n[1] Title A: text a\n[2] Title B: text b\n\nWho did it?\nAnswer:"
    )
    with pytest.raises(InputError):
        rs.assemble_rag_prompt("q", [])


def test_assemble_prompt_respects_char_budget():
    prompt = rs.assemble_rag_prompt("q", [("T", "x" * 4000)], char_budget=10)
    assert "x" * 10 in prompt
    assert "x" * 11 not in prompt


def test_rag_answerer_end_to_end():
    emb = HashEmbedder(dim=16)
    index = rs.build_index(make_articles(4), emb)
    answerer = rs.RagAnswerer(
        index, emb, EchoCompletion(prompt_template="{question}"), k=2
    )
    out = answerer.answer("about topic 1")
    assert out.startswith("Context:\n[1] ")
    assert out.endswith("about topic 1\nAnswer:")
    assert out.count("\n[2] ") == 1


def test_save_load_round_trip_bit_exact(tmp_path):
    articles = make_articles(9)
    index = rs.build_index(articles, HashEmbedder(dim=12))
    p = tmp_path / "rag.index"
    rs.save_index(index, p)

    with open(p, "rb") as fh:
        header = json.loads(fh.readline())
    assert header == {"n": 9, "d": 12}

    loaded = rs.load_index(p, meta=index.meta)
    assert loaded.doc_ids == index.doc_ids
    assert loaded.vectors.dtype == np.float32
    np.testing.assert_array_equal(loaded.vectors, index.vectors)  # bit-exact f32
    assert loaded.meta == index.meta


def test_saved_offsets_address_the_blob(tmp_path):
    index = rs.build_index(make_articles(5), HashEmbedder(dim=6))
    p = tmp_path / "rag.index"
    rs.save_index(index, p)
    with open(p, "rb") as fh:
        json.loads(fh.readline())
        entries = [json.loads(fh.readline()) for _ in range(5)]
        blob = fh.read()
    for i, entry in enumerate(entries):
        assert entry["vector_offset"] == i * 6 * 4
        row = np.frombuffer(blob[entry["vector_offset"] : entry["vector_offset"] + 24], dtype="<f4")
        np.testing.assert_array_equal(row, index.vectors[i])

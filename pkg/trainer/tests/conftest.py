import pytest

from serverutil import make_span_corpus


@pytest.fixture
def span_corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    rows = make_span_corpus(path)
    return path, rows

import pytest

from factories import make_fact


@pytest.fixture
def facts20():
    return [make_fact(i) for i in range(20)]


@pytest.fixture
def facts100():
    return [make_fact(i) for i in range(100)]

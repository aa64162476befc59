import json

import pytest

from dykpipe import qagen
from dykpipe.errors import InputError, SkipFact
from dykpipe.qagen import (
    EntityDescription,
    GenerationRejected,
    QAItem,
    StubGenerator,
    extract_json,
    generate_entity_description,
    generate_for_facts,
    generate_portability_and_locality,
    generate_questions,
    load_items,
    save_items,
    validate_qa,
    validate_questions,
)
from factories import make_fact


class ScriptedGenerator:
    """Returns canned responses in order; records prompts."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.prompts = []

    def complete(self, prompt, max_new_tokens=1024):
        self.prompts.append(prompt)
        return self.responses.pop(0)


def test_extract_json_plain_and_fenced():
    assert extract_json('{"a": 1}') == {"a": 1}
    assert extract_json('Sure!\n```json\n{"a": {"b": 2}}\n```\ndone') == {"a": {"b": 2}}
    assert extract_json('prefix {"a": "}"}')["a"] == "}"
    with pytest.raises(ValueError):
        extract_json("no object here")


def test_reliability_generation_and_answer_leak_retry():
    fact = make_fact(1)
    leak = json.dumps(
        {"question": {"text": f"What did {fact.bold_entity} open?", "answer": fact.bold_entity}}
    )
    good = json.dumps(
        {"question": {"text": "Who opened the river number 1?", "answer": fact.bold_entity}}
    )
    gen = ScriptedGenerator([leak, good])
    items = generate_questions(fact, qagen.RELIABILITY, gen)
    assert len(items) == 1
    assert items[0].answer == fact.bold_entity
    assert fact.bold_entity not in items[0].question
    assert len(gen.prompts) == 2


def test_reliability_rejected_after_retries():
    fact = make_fact(2)
    bad = json.dumps({"question": {"text": "q", "answer": "wrong"}})
    gen = ScriptedGenerator([bad] * 4)
    with pytest.raises(GenerationRejected):
        generate_questions(fact, qagen.RELIABILITY, gen, max_retries=3)


def test_paraphrase_picks_first_and_needs_seed():
    fact = make_fact(3)
    seed = QAItem(fact.id, qagen.RELIABILITY, "Who opened it?", fact.bold_entity)
    resp = json.dumps(
        {
            "paraphrases": [
                {"question": "Who was the opener?", "answer": fact.bold_entity},
                {"question": "second", "answer": fact.bold_entity},
            ]
        }
    )
    items = generate_questions(fact, qagen.PARAPHRASE, ScriptedGenerator([resp]), seed_items=[seed])
    assert items[0].question == "Who was the opener?"
    with pytest.raises(InputError):
        generate_questions(fact, qagen.PARAPHRASE, ScriptedGenerator([resp]))


def test_generality_first_valid_alternative():
    fact = make_fact(4)
    seed = QAItem(fact.id, qagen.RELIABILITY, "Who?", fact.bold_entity)
    resp = json.dumps(
        {
            "alternatives": [
                {"question": "bad", "answer": "not in the fact"},
                {"question": "Which noun was opened?", "answer": "orchestra"},
            ]
        }
    )
    items = generate_questions(fact, qagen.GENERALITY, ScriptedGenerator([resp]), seed_items=[seed])
    assert items[0].answer == "orchestra"
    assert items[0].answer in fact.text


def test_training_yields_all_items():
    fact = make_fact(5)
    resp = json.dumps(
        {
            "questions": [
                {"question": f"q{i}", "answer": f"a{i}"} for i in range(4)
            ]
        }
    )
    items = generate_questions(fact, qagen.TRAINING, ScriptedGenerator([resp]))
    assert len(items) == 4
    assert all(i.dimension == qagen.TRAINING for i in items)


def test_entity_description_skip_and_leak():
    with pytest.raises(SkipFact):
        generate_entity_description("Paris", "", ScriptedGenerator([]))
    leaking = json.dumps({"description": "the city of Paris"})
    with pytest.raises(SkipFact):
        generate_entity_description(
            "Paris", "page text", ScriptedGenerator([leaking] * 4), max_retries=3
        )
    ok = json.dumps({"description": "a historic European city with cobblestone streets"})
    desc = generate_entity_description("Paris", "page text", ScriptedGenerator([ok]))
    assert "Paris" not in desc.description


def test_entity_description_invariant():
    with pytest.raises(InputError):
        EntityDescription(entity="Paris", description="It is Paris, France")


def test_portability_and_locality_pair():
    fact = make_fact(6)
    desc = EntityDescription(entity="Kanye West", description="an American artist born in 1977")
    reliability = QAItem(fact.id, qagen.RELIABILITY, "Which song was written that way?", fact.bold_entity)
    port_resp = json.dumps({"question": "I heard about an American artist born in 1977; which song was that?"})
    loc_resp = json.dumps({"question": "Which American artist was born in 1977?", "answer": "Kanye West"})
    port, loc = generate_portability_and_locality(
        fact, desc, reliability, ScriptedGenerator([port_resp, loc_resp])
    )
    assert port.dimension == qagen.PORTABILITY
    assert port.answer == reliability.answer
    assert loc.dimension == qagen.LOCALITY
    assert loc.answer == "Kanye West"


def test_stub_generator_end_to_end():
    fact = make_fact(7)
    stub = StubGenerator()
    rel = generate_questions(fact, qagen.RELIABILITY, stub)
    assert validate_qa(rel[0], fact) is None
    para = generate_questions(fact, qagen.PARAPHRASE, stub, seed_items=rel)
    assert para[0].answer == rel[0].answer
    gen = generate_questions(fact, qagen.GENERALITY, stub, seed_items=rel)
    assert gen[0].answer in fact.text
    training = generate_questions(fact, qagen.TRAINING, stub)
    assert len(training) >= 3


def test_pipeline_resumable(facts20):
    stub = StubGenerator()
    generators = {"default": stub}
    items, report = generate_for_facts(
        facts20, generators, dimensions=(qagen.RELIABILITY, qagen.TRAINING)
    )
    assert report.generated == len(items)
    items2, report2 = generate_for_facts(
        facts20, generators, existing=items, dimensions=(qagen.RELIABILITY, qagen.TRAINING)
    )
    assert report2.generated == 0
    assert len(items2) == len(items)


def test_per_fact_dimension_counts(facts20):
    stub = StubGenerator()
    items, _ = generate_for_facts(
        facts20, {"default": stub}, dimensions=(qagen.RELIABILITY, qagen.PARAPHRASE, qagen.GENERALITY)
    )
    problems = validate_questions(items, facts20)
    assert problems == []
    per = {}
    for i in items:
        per[(i.fact_id, i.dimension)] = per.get((i.fact_id, i.dimension), 0) + 1
    assert all(v == 1 for v in per.values())


def test_save_load_round_trip(tmp_path, facts20):
    items, _ = generate_for_facts(
        facts20[:5], {"default": StubGenerator()}, dimensions=(qagen.RELIABILITY,)
    )
    p = tmp_path / "questions.jsonl"
    save_items(items, p)
    assert load_items(p) == sorted(items, key=lambda i: (i.fact_id, i.dimension, i.question))

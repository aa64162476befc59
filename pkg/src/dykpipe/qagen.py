"""Question generation across six dimensions, driven by a generator backend.

Five evaluation dimensions (reliability, generality, paraphrase, portability,
locality) plus an unbounded training dimension.  Each dimension has a fixed
prompt workflow whose response must be a single JSON object; a lenient
extractor strips code fences before parsing.  Structural invariants are
enforced with a retry-then-reject ladder.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import FactRecord
from .errors import InputError, PipelineError, SkipFact

log = logging.getLogger(__name__)

RELIABILITY = "reliability"
GENERALITY = "generality"
PARAPHRASE = "paraphrase"
PORTABILITY = "portability"
LOCALITY = "locality"
TRAINING = "training"

DIMENSIONS = (RELIABILITY, GENERALITY, PARAPHRASE, PORTABILITY, LOCALITY, TRAINING)
EVAL_DIMENSIONS = DIMENSIONS[:5]

RELIABILITY_PROMPT = """\
Given a DYK fact in JSON format containing 'text' and 'bold_entity' fields, generate a question. Your output should be a JSON object containing the question with its corresponding answer. Your response should follow these criteria:

1. The question should be answerable using only the information provided in the fact
2. The answer should be the bold_entity
3. The question should be clear, natural, and specific so that the answer can be easily identified (i.e., use as many details as possible from the fact)
4. The bold entity should not be mentioned in the question since it is the answer. But make sure that the question's answer is the bold entity.

Example:
Input:
{{
   'text': 'that Margrit Waltz has ferried planes to points on five continents?',
   'bold_entity': 'Margrit Waltz',
}}

Expected output:
{{
    "question": {{
        "text": "Who has ferried planes to points on five continents?",
        "answer": "Margrit Waltz"
    }}
}}

Now please generate a question with answer for this fact:
{test_example}
"""

PARAPHRASE_PROMPT = """\
Given a pair of question and answer, generate three different paraphrases of the question. Make sure the answer is the same as before. Your output should be a JSON object with a list of dictionaries under the key "paraphrases". Each dictionary should have a "question" key and an "answer" key. Here is the pair of question and answer:

Question: {question}
Answer: {answer}
"""

GENERALITY_PROMPT = """\
Given a pair of question and answer, generate three different alternative questions. Make sure the question asks about a different aspect of the same fact. Remember to follow the rules below:

1. The answer is one aspect of the fact (such as an entity / year / number etc.) apart from the original answer.
2. The answer should be concise and direct without any redundant words. And it shoud be a part of the fact.
3. The question should utilize all the information in the fact and be specific.
4. Do not use any information that is beyond the fact.
5. Your output should be a JSON object with a list of dictionaries under the key "alternatives". Each sub-dictionary should have a "question" key and an "answer" key.

Here is the pair of question and answer:

Fact: {fact}
Question: {question}
Answer: {answer}
"""

DESCRIPTION_PROMPT = """\
Replace the entity name with a description of it without mentioning the entity name. The description should be unique and specific. Make sure that you can infer the entity name using the description. You might also be provided with the wikipedia page of the entity. The output should be a JSON object with the following format:

{{
    "description": "The description of the entity",
}}

Wikipedia page: {page}
Entity name: {entity}
"""

PORTABILITY_PROMPT = """\
Below are a few examples of natural, scenario-based questions where a user describes a scenario and then asks a question:

Example 1:
Alternative description: "a historic European city known for its iconic architecture and cobblestone streets."
User's natural question: "I recently visited a charming European city famous for its unique architecture and quaint streets. Can you tell me about a famous monument there?"
Entity name: Paris

Example 2:
Alternative description: "a groundbreaking technology company that revolutionized communication with its innovative products."
User's natural question: "I've been reading about a tech company that changed how we communicate through its innovative gadgets. What product are they best known for?"
Entity name: Apple

Now, given the alternative description and the original question below, generate a new, natural, scenario-based question. The new question should describe a scenario without mentioning the original entity name and then ask the question in a natural, conversational manner.

Alternative description: {description}
Entity name: {entity}
Original question: {question}

The output should be a JSON object with the following format:

{{
    "question": "The modified question"
}}
"""

LOCALITY_PROMPT = """\
You'll generate a question-answer pair based on the description of an entity.

For each statement, you'll return a JSON object containing:
1. "question": The question that corresponds to the statement
2. "answer": The answer to the question

Example outputs:

1. Input: Jupiter is the largest planet in our solar system.
Output:
{{
  "question": "What is the largest planet in our solar system?",
  "answer": "Jupiter"
}}
2. Input: The capital of France is Paris.
Output:
{{
  "question": "What is the capital of France?",
  "answer": "Paris"
}}

Entity: {entity}
Description: {description}
"""

TRAINING_PROMPT = """\
Given a context, please generate related questions as comprehensively as possible with corresponding answers. The question has to be based on the context and the answer should be a short phrase.
This is an example:
Context: A small coastal town has a beach known for its colorful sea glass. The town hosts an annual festival celebrating this unique feature with art and conservation efforts.
Question: What attracts tourists to the small coastal town
annually? Answer: The unique sea glass beach.
Question: What is celebrated at the town's annual festival?
Answer: The natural phenomenon of sea glass.
Question: What type of activities are featured at the festival?

Format your output in a JSON object like the one below:
{{
    "questions": [
        {{
            "question": "What attracts tourists to the small coastal town annually?",
            "answer": "The unique sea glass beach."
        }},
        {{
            "question": "What is celebrated at the town's annual festival?",
            "answer": "The natural phenomenon of sea glass."
        }},
        {{
            "question": "What type of activities are featured at the festival?",
            "answer": "Art and conservation efforts."
        }}
    ]
}}
Context: {fact}
"""


@dataclass(frozen=True)
class QAItem:
    """A question/answer pair tagged with its dimension."""

    fact_id: str
    dimension: str
    question: str
    answer: str
    meta: dict = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "fact_id": self.fact_id,
            "dimension": self.dimension,
            "question": self.question,
            "answer": self.answer,
            "meta": self.meta,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "QAItem":
        return cls(
            fact_id=obj["fact_id"],
            dimension=obj["dimension"],
            question=obj["question"],
            answer=obj["answer"],
            meta=obj.get("meta", {}),
        )


@dataclass(frozen=True)
class EntityDescription:
    """Indirect description of an entity, used for portability and locality."""

    entity: str
    description: str
    source_page: str = ""

    def __post_init__(self) -> None:
        if self.entity.lower() in self.description.lower():
            raise InputError("description must not contain the entity name")


class GenerationRejected(PipelineError):
    """Generation failed structural validation after all retries."""

    def __init__(self, reason: str, raw: str = ""):
        super().__init__(reason)
        self.reason = reason
        self.raw = raw


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json(text: str) -> dict:
    """Parse the first JSON object in a generator response.

    Strips markdown code fences, then scans for the first balanced object.
    """
    m = _FENCE_RE.search(text)
    if m:
        text = m.group(1)
    start = text.find("{")
    if start < 0:
        raise ValueError("no JSON object in response")
    depth = 0
    in_str = False
    escape = False
    for i, ch in enumerate(text[start:], start):
        if in_str:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return json.loads(text[start : i + 1])
    raise ValueError("unbalanced JSON object in response")


def validate_qa(item: QAItem, fact: FactRecord, seed: QAItem | None = None) -> str | None:
    """Return a reason string when the item violates its dimension's rules."""
    if not item.question.strip() or not item.answer.strip():
        return "empty question or answer"
    if item.dimension == RELIABILITY:
        if item.answer != fact.bold_entity:
            return "reliability answer must equal the bold entity"
        if fact.bold_entity in item.question:
            return "bold entity leaked into the question"
    elif item.dimension == PARAPHRASE:
        if seed is None or item.answer != seed.answer:
            return "paraphrase answer must equal the reliability answer"
    elif item.dimension == GENERALITY:
        if item.answer not in fact.text:
            return "generality answer must be part of the fact"
        if seed is not None and item.answer == seed.answer:
            return "generality answer must differ from the reliability answer"
    elif item.dimension not in DIMENSIONS:
        return f"unknown dimension {item.dimension!r}"
    return None


def _ask(generator, prompt: str, max_retries: int, parse):
    """Call the generator, parse and validate; retry on any failure."""
    last = ""
    for _ in range(max_retries + 1):
        raw = generator.complete(prompt, max_new_tokens=1024)
        last = raw
        try:
            obj = extract_json(raw)
        except ValueError:
            continue
        result = parse(obj)
        if result is not None:
            return result
    raise GenerationRejected("no valid response after retries", raw=last)


def generate_questions(
    fact: FactRecord,
    dimension: str,
    generator,
    seed_items: list[QAItem] | None = None,
    max_retries: int = 3,
) -> list[QAItem]:
    """Produce the QA items of one dimension for one fact.

    Reliability yields exactly one item; paraphrase and generality need the
    reliability item in `seed_items` and yield one item each (first of the
    generated list / first valid alternative); training yields every generated
    item.  Portability and locality go through the description workflow
    instead (see generate_portability_and_locality).
    """
    seed = None
    if seed_items:
        seed = next((i for i in seed_items if i.dimension == RELIABILITY), None)

    if dimension == RELIABILITY:
        example = json.dumps(
            {"text": f"that {fact.text}?", "bold_entity": fact.bold_entity},
            ensure_ascii=False,
        )
        prompt = RELIABILITY_PROMPT.format(test_example=example)

        def parse(obj):
            q = obj.get("question")
            if not isinstance(q, dict):
                return None
            item = QAItem(fact.id, RELIABILITY, str(q.get("text", "")), str(q.get("answer", "")))
            return [item] if validate_qa(item, fact) is None else None

        return _ask(generator, prompt, max_retries, parse)

    if dimension == PARAPHRASE:
        if seed is None:
            raise InputError("paraphrase generation requires the reliability item")
        prompt = PARAPHRASE_PROMPT.format(question=seed.question, answer=seed.answer)

        def parse(obj):
            rows = obj.get("paraphrases")
            if not isinstance(rows, list) or not rows:
                return None
            first = rows[0]
            item = QAItem(fact.id, PARAPHRASE, str(first.get("question", "")), str(first.get("answer", "")))
            return [item] if validate_qa(item, fact, seed) is None else None

        return _ask(generator, prompt, max_retries, parse)

    if dimension == GENERALITY:
        if seed is None:
            raise InputError("generality generation requires the reliability item")
        prompt = GENERALITY_PROMPT.format(fact=fact.text, question=seed.question, answer=seed.answer)

        def parse(obj):
            rows = obj.get("alternatives")
            if not isinstance(rows, list):
                return None
            for row in rows:
                item = QAItem(fact.id, GENERALITY, str(row.get("question", "")), str(row.get("answer", "")))
                if validate_qa(item, fact, seed) is None:
                    return [item]
            return None

        return _ask(generator, prompt, max_retries, parse)

    if dimension == TRAINING:
        prompt = TRAINING_PROMPT.format(fact=fact.text)

        def parse(obj):
            rows = obj.get("questions")
            if not isinstance(rows, list) or not rows:
                return None
            items = []
            for row in rows:
                item = QAItem(fact.id, TRAINING, str(row.get("question", "")), str(row.get("answer", "")))
                if validate_qa(item, fact) is not None:
                    return None
                items.append(item)
            return items

        return _ask(generator, prompt, max_retries, parse)

    raise InputError(f"dimension {dimension!r} is not generated by this operation")


def generate_entity_description(
    entity: str, page: str, generator, max_retries: int = 3
) -> EntityDescription:
    """Describe an entity without naming it, for portability/locality QAs.

    Raises SkipFact when no usable page text is available or the generator
    keeps leaking the entity name.
    """
    if not page.strip():
        raise SkipFact(f"no page text for entity {entity!r}")
    prompt = DESCRIPTION_PROMPT.format(page=page, entity=entity)

    def parse(obj):
        desc = obj.get("description")
        if not isinstance(desc, str) or not desc.strip():
            return None
        if entity.lower() in desc.lower():
            return None
        return EntityDescription(entity=entity, description=desc, source_page=page)

    try:
        return _ask(generator, prompt, max_retries, parse)
    except GenerationRejected as exc:
        raise SkipFact(f"description for {entity!r} kept leaking the name") from exc


def generate_portability_and_locality(
    fact: FactRecord,
    desc: EntityDescription,
    reliability: QAItem,
    generator,
    max_retries: int = 3,
) -> tuple[QAItem, QAItem]:
    """Scenario question embedding the description, plus a QA over the
    description alone whose answer is the described entity."""
    if reliability.dimension != RELIABILITY:
        raise InputError("third argument must be the reliability item")

    prompt = PORTABILITY_PROMPT.format(
        description=desc.description, entity=desc.entity, question=reliability.question
    )

    def parse_port(obj):
        q = obj.get("question")
        if not isinstance(q, str) or not q.strip():
            return None
        if desc.entity.lower() in q.lower():
            return None
        return QAItem(
            fact.id,
            PORTABILITY,
            q,
            reliability.answer,
            meta={"entity": desc.entity, "description": desc.description},
        )

    portability = _ask(generator, prompt, max_retries, parse_port)

    prompt = LOCALITY_PROMPT.format(entity=desc.entity, description=desc.description)

    def parse_loc(obj):
        q = obj.get("question")
        a = obj.get("answer")
        if not isinstance(q, str) or not q.strip():
            return None
        if not isinstance(a, str) or a != desc.entity:
            return None
        return QAItem(
            fact.id,
            LOCALITY,
            q,
            a,
            meta={"entity": desc.entity, "description": desc.description},
        )

    locality = _ask(generator, prompt, max_retries, parse_loc)
    return portability, locality


class StubGenerator:
    """Deterministic in-process generator for desk-scale runs and tests.

    Recognizes each prompt workflow by a distinctive substring, extracts the
    embedded fields, and emits structurally valid JSON without any model.
    """

    def complete(self, prompt: str, max_new_tokens: int = 1024) -> str:
        if prompt.startswith("Given a DYK fact in JSON format"):
            return self._reliability(prompt)
        if "generate three different paraphrases" in prompt:
            return self._paraphrase(prompt)
        if "generate three different alternative questions" in prompt:
            return self._generality(prompt)
        if prompt.startswith("Replace the entity name with a description"):
            return self._description(prompt)
        if "natural, scenario-based question" in prompt:
            return self._portability(prompt)
        if prompt.startswith("You'll generate a question-answer pair"):
            return self._locality(prompt)
        if "generate related questions as comprehensively as possible" in prompt:
            return self._training(prompt)
        raise InputError("unrecognized prompt workflow")

    @staticmethod
    def _tail_field(prompt: str, label: str) -> str:
        idx = prompt.rfind(label)
        if idx < 0:
            raise InputError(f"prompt missing {label!r}")
        return prompt[idx + len(label):].split("\n")[0].strip()

    def _reliability(self, prompt: str) -> str:
        tail = prompt[prompt.rfind("for this fact:"):]
        obj = extract_json(tail)
        text = obj["text"]
        if text.startswith("that "):
            text = text[len("that "):]
        text = text.rstrip("?")
        entity = obj["bold_entity"]
        question = "In the fact stating that " + text.replace(entity, "a certain entity") + ", which entity is being described?"
        return json.dumps({"question": {"text": question, "answer": entity}})

    def _paraphrase(self, prompt: str) -> str:
        question = self._tail_field(prompt, "Question:")
        answer = self._tail_field(prompt, "Answer:")
        rows = [
            {"question": "To put it differently: " + question, "answer": answer},
            {"question": "Rephrased: " + question, "answer": answer},
            {"question": "Put another way: " + question, "answer": answer},
        ]
        return json.dumps({"paraphrases": rows})

    def _generality(self, prompt: str) -> str:
        fact = self._tail_field(prompt, "Fact:")
        answer = self._tail_field(prompt, "Answer:")
        tokens = fact.split()
        alt = next((t for t in reversed(tokens) if t != answer and t not in answer), tokens[-1])
        rows = [
            {
                "question": f"Which word concludes the relevant detail of the fact about {answer}?",
                "answer": alt,
            }
        ]
        return json.dumps({"alternatives": rows})

    def _description(self, prompt: str) -> str:
        entity = self._tail_field(prompt, "Entity name:")
        desc = (
            "a subject covered by its own encyclopedia article, identified here "
            f"only by a {len(entity)}-character name that is deliberately withheld"
        )
        return json.dumps({"description": desc})

    def _portability(self, prompt: str) -> str:
        desc = self._tail_field(prompt, "Alternative description:")
        question = self._tail_field(prompt, "Original question:")
        entity = self._tail_field(prompt, "Entity name:")
        scenario = (
            f"I recently read about {desc.strip(chr(34))}. "
            + question.replace(entity, "that subject")
        )
        return json.dumps({"question": scenario})

    def _locality(self, prompt: str) -> str:
        entity = self._tail_field(prompt, "Entity:")
        desc = self._tail_field(prompt, "Description:")
        return json.dumps(
            {"question": f"Which entity is {desc}?", "answer": entity}
        )

    def _training(self, prompt: str) -> str:
        fact = self._tail_field(prompt, "Context:")
        tokens = fact.split()
        head = " ".join(tokens[:3]) if len(tokens) >= 3 else fact
        tail = " ".join(tokens[-3:]) if len(tokens) >= 3 else fact
        rows = [
            {"question": f"What does the fact beginning with '{head}' state?", "answer": fact},
            {"question": f"Which phrase opens the fact ending with '{tail}'?", "answer": head},
            {"question": f"Which phrase concludes the fact beginning with '{head}'?", "answer": tail},
        ]
        return json.dumps({"questions": rows})


@dataclass
class GenerationReport:
    """What happened to each (fact, dimension) pair during a pipeline run."""

    generated: int = 0
    skipped_existing: int = 0
    dropped: list[tuple[str, str, str]] = field(default_factory=list)  # (fact_id, dimension, reason)


def select_secondary_entity(
    fact: FactRecord, links: list[str] | None
) -> str | None:
    """First wiki-linked entity in the fact other than the bold one."""
    for target in links or []:
        if target != fact.article_title and target != fact.bold_entity:
            return target
    return None


def generate_for_facts(
    facts: list[FactRecord],
    generators: dict[str, object],
    existing: list[QAItem] | None = None,
    links: dict[str, list[str]] | None = None,
    pages: dict[str, str] | None = None,
    dimensions: tuple[str, ...] = DIMENSIONS,
    max_retries: int = 3,
    max_workers: int = 8,
) -> tuple[list[QAItem], GenerationReport]:
    """Generate all requested dimensions for all facts, resumably.

    (fact_id, dimension) pairs already present in `existing` are not
    regenerated.  Requests fan out across a bounded worker pool; appends to
    the shared item list are serialized.
    """
    items: list[QAItem] = list(existing or [])
    have = {(i.fact_id, i.dimension) for i in items}
    report = GenerationReport()
    lock = threading.Lock()

    def backend(dim: str):
        return generators.get(dim, generators.get("default"))

    def work(fact: FactRecord) -> None:
        nonlocal items
        local: list[QAItem] = [i for i in items if i.fact_id == fact.id]

        def done(dim: str) -> bool:
            return (fact.id, dim) in have

        def record(new_items: list[QAItem]) -> None:
            with lock:
                items.extend(new_items)
                for it in new_items:
                    have.add((it.fact_id, it.dimension))
                report.generated += len(new_items)
            local.extend(new_items)

        for dim in (RELIABILITY, PARAPHRASE, GENERALITY, TRAINING):
            if dim not in dimensions:
                continue
            if done(dim):
                with lock:
                    report.skipped_existing += 1
                continue
            if dim in (PARAPHRASE, GENERALITY) and not any(
                i.dimension == RELIABILITY for i in local
            ):
                with lock:
                    report.dropped.append((fact.id, dim, "no reliability item"))
                continue
            try:
                record(generate_questions(fact, dim, backend(dim), seed_items=local, max_retries=max_retries))
            except GenerationRejected as exc:
                with lock:
                    report.dropped.append((fact.id, dim, exc.reason))

        if PORTABILITY in dimensions or LOCALITY in dimensions:
            if done(PORTABILITY) and done(LOCALITY):
                with lock:
                    report.skipped_existing += 2
                return
            reliability = next((i for i in local if i.dimension == RELIABILITY), None)
            if reliability is None:
                with lock:
                    report.dropped.append((fact.id, PORTABILITY, "no reliability item"))
                return
            entity = select_secondary_entity(fact, (links or {}).get(fact.id))
            if entity is None:
                with lock:
                    report.dropped.append((fact.id, PORTABILITY, "no non-bolded linked entity"))
                return
            page = (pages or {}).get(entity, "")
            try:
                desc = generate_entity_description(entity, page, backend(PORTABILITY), max_retries)
                port, loc = generate_portability_and_locality(
                    fact, desc, reliability, backend(PORTABILITY), max_retries
                )
                record([port, loc])
            except SkipFact as exc:
                with lock:
                    report.dropped.append((fact.id, PORTABILITY, str(exc)))
            except GenerationRejected as exc:
                with lock:
                    report.dropped.append((fact.id, PORTABILITY, exc.reason))

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        list(pool.map(work, facts))
    return items, report


def save_items(items: list[QAItem], path: str | Path) -> None:
    """Write questions.jsonl deterministically (sorted by fact, dimension, question)."""
    ordered = sorted(items, key=lambda i: (i.fact_id, i.dimension, i.question))
    with open(path, "w", encoding="utf-8") as fh:
        for item in ordered:
            fh.write(json.dumps(item.to_obj(), ensure_ascii=False, sort_keys=True) + "\n")


def load_items(path: str | Path) -> list[QAItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(QAItem.from_obj(json.loads(line)))
    return items


def validate_questions(items: list[QAItem], facts: list[FactRecord]) -> list[str]:
    """Re-validate a whole questions file; returns human-readable problems."""
    by_id = {f.id: f for f in facts}
    problems = []
    counts: dict[tuple[str, str], int] = {}
    reliability = {
        i.fact_id: i for i in items if i.dimension == RELIABILITY
    }
    for item in items:
        fact = by_id.get(item.fact_id)
        if fact is None:
            problems.append(f"unknown fact_id {item.fact_id}")
            continue
        reason = validate_qa(item, fact, reliability.get(item.fact_id))
        if reason:
            problems.append(f"{item.fact_id}/{item.dimension}: {reason}")
        counts[(item.fact_id, item.dimension)] = counts.get((item.fact_id, item.dimension), 0) + 1
    for (fid, dim), n in counts.items():
        if dim != TRAINING and n > 1:
            problems.append(f"{fid}/{dim}: {n} items, at most one allowed")
    return problems

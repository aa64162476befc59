import datetime

from dykpipe.corpus import FactRecord, fact_id

WORDS = (
    "festival river bridge museum orchestra species summit archive harbor"
    " novel garden treaty canyon lighthouse comet glacier market chapel"
).split()


def make_fact(i: int, year: int = 2023) -> FactRecord:
    """Synthetic fact with a distinct two-word bold entity."""
    entity = f"Entity{i:03d} Name{i:03d}"
    noun = WORDS[i % len(WORDS)]
    text = f"{entity} opened the {noun} number {i} to the public"
    date = datetime.date(year, 1 + (i % 12), 1 + (i % 28))
    return FactRecord(
        id=fact_id(date, text),
        date=date,
        text=text,
        bold_entity=entity,
        article_title=entity,
        article_text=f"The article about {entity} and its {noun}.",
    )


SAMPLE_PAGE = """\
==23 May 2023==
* ... that '''[[Margrit Waltz]]''' has ferried planes to points on five continents?
* ... that the chorus of "'''[[Gold Digger (Kanye West song)|Gold Digger]]'''" by [[Kanye West]] was originally written from a female point of view?
* ... that '''[[Alpha One]]''' and '''[[Beta Two]]''' share a runway?
* ... that nothing here is bolded at all?
* ... that '''unbalanced markers stay broken?
"""

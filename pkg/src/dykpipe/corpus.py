"""Parse "Did You Know" archive pages into structured fact records.

Each archive page lists roughly ten daily facts as ``* ... that ...?`` bullets
with one or more bold spans; the first bold span names the entity whose
article introduced the fact.  Parsing is pure text manipulation (no network)
and tolerant of per-entry damage: a malformed bullet is skipped and counted,
never fails the page.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError

# Wikitext bold ('''...''') and the rendered equivalents.
_BOLD_RE = re.compile(r"'''(.*?)'''|<b>(.*?)</b>|<strong>(.*?)</strong>", re.DOTALL)
_LINK_RE = re.compile(r"\[\[([^\[\]|]+)(?:\|([^\[\]]*))?\]\]")
_REF_RE = re.compile(r"<ref[^>/]*/>|<ref[^>]*>.*?</ref>", re.DOTALL)
_TAG_RE = re.compile(r"</?(?:i|em|small|span|sup|sub)[^>]*>")
_LEADING_THAT_RE = re.compile(r"^\s*(?:\.{2,}|…)?\s*that\s+", re.IGNORECASE)


@dataclass(frozen=True)
class FactRecord:
    """One DYK fact: cleaned sentence, bold entity and its source article."""

    id: str
    date: datetime.date
    text: str
    bold_entity: str
    article_title: str
    article_text: str = ""
    source_url: str = ""
    multi_bold: bool = False

    def to_obj(self) -> dict:
        return {
            "id": self.id,
            "date": self.date.isoformat(),
            "text": self.text,
            "bold_entity": self.bold_entity,
            "article_title": self.article_title,
            "article_text": self.article_text,
            "source_url": self.source_url,
            "multi_bold": self.multi_bold,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "FactRecord":
        return cls(
            id=obj["id"],
            date=datetime.date.fromisoformat(obj["date"]),
            text=obj["text"],
            bold_entity=obj["bold_entity"],
            article_title=obj["article_title"],
            article_text=obj.get("article_text", ""),
            source_url=obj.get("source_url", ""),
            multi_bold=bool(obj.get("multi_bold", False)),
        )


@dataclass(frozen=True)
class DateWindow:
    """Inclusive calendar-date range."""

    start: datetime.date
    end: datetime.date

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise InputError(f"window start {self.start} is after end {self.end}")

    def __contains__(self, date: datetime.date) -> bool:
        return self.start <= date <= self.end


@dataclass
class ParseReport:
    """Per-page parsing diagnostics."""

    n_bullets: int = 0
    n_parsed: int = 0
    n_skipped_no_bold: int = 0
    n_skipped_malformed: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)
    # fact_id -> link targets seen in the bullet, in order of appearance
    links: dict[str, list[str]] = field(default_factory=dict)


def fact_id(date: datetime.date, text: str) -> str:
    """Stable 128-bit id over (date, text), as lowercase hex."""
    h = hashlib.blake2b(digest_size=16)
    h.update(f"{date.isoformat()}|{text}".encode("utf-8"))
    return h.hexdigest()


def _strip_markup(s: str) -> str:
    """Reduce a wikitext fragment to display text."""
    s = _REF_RE.sub("", s)
    s = _LINK_RE.sub(lambda m: m.group(2) if m.group(2) is not None else m.group(1), s)
    s = s.replace("'''", "")
    s = s.replace("''", "")
    s = _TAG_RE.sub("", s)
    s = re.sub(r"</?(?:b|strong)[^>]*>", "", s)
    return re.sub(r"\s+", " ", s).strip()


def _bold_spans(bullet: str) -> list[str]:
    """Raw contents of every bold span, in order of appearance."""
    spans = []
    for m in _BOLD_RE.finditer(bullet):
        inner = next(g for g in m.groups() if g is not None)
        spans.append(inner)
    return spans


def parse_dyk_page(
    raw: str, page_date: datetime.date
) -> tuple[list[FactRecord], ParseReport]:
    """Parse one archive section into fact records plus a parse report.

    Every ``*`` bullet with at least one bold span yields a record; bullets
    without a bold span, with unbalanced bold markers, or whose bold entity
    does not survive cleaning are skipped and counted in the report.
    """
    if not isinstance(page_date, datetime.date):
        raise InputError(f"page_date must be a date, got {type(page_date).__name__}")

    report = ParseReport()
    records: list[FactRecord] = []
    for line in raw.splitlines():
        stripped = line.strip()
        if not stripped.startswith("*"):
            continue
        bullet = stripped.lstrip("*").strip()
        if not bullet:
            continue
        report.n_bullets += 1

        if bullet.count("'''") % 2 == 1:
            report.n_skipped_malformed += 1
            report.skipped.append((bullet, "unbalanced bold markers"))
            continue

        spans = _bold_spans(bullet)
        if not spans:
            report.n_skipped_no_bold += 1
            report.skipped.append((bullet, "no bold span"))
            continue

        text = _strip_markup(bullet)
        text = _LEADING_THAT_RE.sub("", text)
        text = text.rstrip("?").strip()

        bold_entity = _strip_markup(spans[0])
        if not bold_entity or bold_entity not in text:
            report.n_skipped_malformed += 1
            report.skipped.append((bullet, "bold entity lost during cleaning"))
            continue

        link_m = _LINK_RE.search(spans[0])
        article_title = link_m.group(1).strip() if link_m else bold_entity

        record = FactRecord(
            id=fact_id(page_date, text),
            date=page_date,
            text=text,
            bold_entity=bold_entity,
            article_title=article_title,
            multi_bold=len(spans) > 1,
        )
        records.append(record)
        report.n_parsed += 1
        report.links[record.id] = [m.group(1).strip() for m in _LINK_RE.finditer(bullet)]
    return records, report


def filter_facts(facts: list[FactRecord], window: DateWindow) -> list[FactRecord]:
    """Facts whose date falls inside the window, original order preserved."""
    return [f for f in facts if f.date in window]


def save_facts(facts: list[FactRecord], path: str | Path) -> None:
    """Write facts.jsonl, one object per line, sorted by (date, id)."""
    ordered = sorted(facts, key=lambda f: (f.date, f.id))
    with open(path, "w", encoding="utf-8") as fh:
        for f in ordered:
            fh.write(json.dumps(f.to_obj(), ensure_ascii=False) + "\n")


def load_facts(path: str | Path) -> list[FactRecord]:
    facts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                facts.append(FactRecord.from_obj(json.loads(line)))
    return facts

"""Ingest municipal-code chapters, keep the zoning-related ones, and build per-municipality documents."""

from __future__ import annotations

import logging
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import stats
from .io import read_table

log = logging.getLogger(__name__)

DEFAULT_KEYWORDS = (
    "Zoning",
    "Municipal Code",
    "Land division",
    "Subdivision",
    "Land use",
    "Land development",
    "Streets",
    "Master Plan",
    "Development",
    "Neighborhood Design",
)
HEADER_LINES = 5

GEOGRAPHY_TYPES = ("place", "county_subdivision", "county")
_PRIORITY = {"place": 0, "county_subdivision": 1, "county": 2}
_COUNTY_FIRST = {"county": 0, "place": 1, "county_subdivision": 2}


@dataclass(frozen=True)
class ChapterFile:
    municipality_id: str
    chapter_id: str
    text: str
    source_path: str = ""


@dataclass
class Document:
    place_id: str | None
    municipality_name: str
    text: str
    chapter_ids: list[str]
    match_level: str | None = None
    municipality_id: str = ""

    @property
    def doc_id(self) -> str:
        return self.place_id if self.place_id is not None else self.municipality_id

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "Document":
        return cls(
            place_id=data.get("place_id"),
            municipality_name=data["municipality_name"],
            text=data["text"],
            chapter_ids=list(data.get("chapter_ids", [])),
            match_level=data.get("match_level"),
            municipality_id=data.get("municipality_id", ""),
        )


def normalize_name(name: str) -> str:
    return " ".join(name.lower().split())


@dataclass
class GeoMatchTable:
    """Census geographies keyed by normalized name; ``(name, geography_type)`` must be unique."""

    rows: list[tuple[str, str, str]] = field(default_factory=list)

    def __post_init__(self):
        self._index: dict[str, dict[str, str]] = defaultdict(dict)
        for name, gtype, geo_id in self.rows:
            if gtype not in _PRIORITY:
                raise ValueError(f"unknown geography_type {gtype!r}")
            key = normalize_name(name)
            if gtype in self._index[key]:
                raise ValueError(f"duplicate geography ({name!r}, {gtype!r})")
            self._index[key][gtype] = geo_id

    @classmethod
    def from_csv(cls, path: str | Path) -> "GeoMatchTable":
        rows = [(r["name"], r["geography_type"].strip(), r["geo_id"].strip()) for r in read_table(path)]
        return cls(rows)

    def candidates(self, name: str) -> dict[str, str]:
        return dict(self._index.get(normalize_name(name), {}))


def _header_lines(text: str) -> list[str]:
    return text.replace("\r\n", "\n").split("\n")[:HEADER_LINES]


def is_zoning_chapter(chapter: ChapterFile, keywords: Sequence[str] = DEFAULT_KEYWORDS) -> bool:
    head = "\n".join(_header_lines(chapter.text)).lower()
    return any(k.lower() in head for k in keywords)


def filter_zoning_chapters(
    chapters: Iterable[ChapterFile], keywords: Sequence[str] = DEFAULT_KEYWORDS
) -> list[ChapterFile]:
    """Keep chapters where any keyword occurs (case-insensitive substring) in the first five lines."""
    keywords = [k for k in keywords if k.strip()]
    if not keywords:
        raise ValueError("keyword list is empty")
    return [c for c in chapters if is_zoning_chapter(c, keywords)]


def assemble_documents(chapters: Iterable[ChapterFile]) -> list[Document]:
    """One document per municipality, chapters joined by newline in chapter_id order."""
    grouped: dict[str, list[ChapterFile]] = defaultdict(list)
    for ch in chapters:
        grouped[ch.municipality_id].append(ch)
    docs = []
    for muni in sorted(grouped):
        parts = sorted(grouped[muni], key=lambda c: c.chapter_id)
        ids = [c.chapter_id for c in parts]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate chapter ids in {muni!r}")
        docs.append(
            Document(
                place_id=None,
                municipality_name=municipality_display_name(muni),
                text="\n".join(c.text for c in parts),
                chapter_ids=ids,
                municipality_id=muni,
            )
        )
    return docs


def municipality_display_name(municipality_id: str) -> str:
    return " ".join(municipality_id.replace("_", " ").split())


def match_geography(name: str, table: GeoMatchTable) -> tuple[str, str] | None:
    """Resolve a municipality name to ``(geo_id, match_level)``.

    Place beats county subdivision beats county, unless the name itself
    contains the word "county", in which case a county row wins.
    """
    found = table.candidates(name)
    if not found:
        return None
    wants_county = "county" in re.findall(r"[a-z]+", name.lower())
    order = _COUNTY_FIRST if wants_county else _PRIORITY
    level = min(found, key=order.__getitem__)
    return found[level], level


def attach_geography(docs: Iterable[Document], table: GeoMatchTable) -> list[Document]:
    out = []
    for doc in docs:
        match = match_geography(doc.municipality_name, table)
        if match is None:
            doc = Document(None, doc.municipality_name, doc.text, doc.chapter_ids, None, doc.municipality_id)
        else:
            geo_id, level = match
            doc = Document(geo_id, doc.municipality_name, doc.text, doc.chapter_ids, level, doc.municipality_id)
        out.append(doc)
    return out


def read_chapters(corpus_dir: str | Path) -> list[ChapterFile]:
    """Read ``corpus_dir/<municipality>/<chapter>.txt`` files; undecodable bytes are replaced."""
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {corpus_dir}")
    chapters = []
    for muni_dir in sorted(p for p in corpus_dir.iterdir() if p.is_dir()):
        for path in sorted(muni_dir.glob("*.txt")):
            text = path.read_bytes().decode("utf-8", errors="replace")
            if not text.strip():
                log.warning("skipping empty chapter %s", path)
                continue
            chapters.append(ChapterFile(muni_dir.name, path.stem, text, path.relative_to(corpus_dir).as_posix()))
    return chapters


def read_keywords(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip() and not line.startswith("#")]


def ingest(corpus_dir, table: GeoMatchTable | None = None, keywords: Sequence[str] = DEFAULT_KEYWORDS) -> list[Document]:
    docs = assemble_documents(filter_zoning_chapters(read_chapters(corpus_dir), keywords))
    if table is not None:
        docs = attach_geography(docs, table)
    return docs


@dataclass
class SummaryRow:
    statistic: str
    count: int
    mean: float
    median: float
    std: float
    std_defined: bool


CORPUS_STATISTICS = (
    "Number of Chunks per Document",
    "Total Tokens per Document",
    "Average Tokens per Chunk",
)


def corpus_summary(docs: Sequence[Document], chunk_stats: Mapping[str, tuple[int, int]]) -> list[SummaryRow]:
    """Count/mean/median/sample std of chunks per doc, tokens per doc and tokens per chunk.

    ``chunk_stats`` maps ``doc_id`` to ``(n_chunks, n_tokens)``.
    """
    if not docs:
        raise ValueError("empty corpus")
    n_chunks, n_tokens = [], []
    for doc in docs:
        c, t = chunk_stats[doc.doc_id]
        n_chunks.append(c)
        n_tokens.append(t)
    chunks = np.asarray(n_chunks, dtype=float)
    tokens = np.asarray(n_tokens, dtype=float)
    per_chunk = np.divide(tokens, chunks, out=np.zeros_like(tokens), where=chunks > 0)
    rows = []
    for label, series in zip(CORPUS_STATISTICS, (chunks, tokens, per_chunk)):
        rows.append(
            SummaryRow(
                statistic=label,
                count=int(series.size),
                mean=float(series.mean()),
                median=stats.median(series),
                std=stats.sample_std(series),
                std_defined=series.size >= 2,
            )
        )
    return rows

"""Text cleaning, whitespace token counting, fixed-size chunking and term-based paragraph extraction."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

SETBACK_TERMS = (
    "setback",
    "building line",
    "frontage requirement",
    "yard requirement",
    "buffer zone",
    "setback distance",
    "architectural clear zone",
    "perimeter restriction",
    "boundary requirement",
    "zoning setback",
    "encroachment limitation",
)
FAR_TERMS = (
    "FAR",
    "floor area ratio",
    "floor space ratio",
    "floor space",
    "site ratio",
    "buildable area",
    "building coverage",
    "development intensity",
    "development density",
    "intensity of land use",
)
TOPIC_TERMS = {"setbacks": SETBACK_TERMS, "far": FAR_TERMS}

DEFAULT_MAX_CHUNK_TOKENS = 4096

_NON_ALPHA = re.compile(r"[^a-z]+")
_BLANK_LINE = re.compile(r"\n[ \t]*\n")


@dataclass
class TokenStream:
    tokens: list[str]
    source_doc: str = ""


@dataclass
class Chunk:
    doc_id: str
    index: int
    tokens: list[str] = field(default_factory=list)

    @property
    def token_count(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def read_wordlist(path: str | Path) -> set[str]:
    with open(path, encoding="utf-8") as fh:
        return {w.strip().lower() for w in fh if w.strip() and not w.lstrip().startswith("#")}


def default_stopwords() -> set[str]:
    """English stopwords plus the bundled legal/geographic extension."""
    words: set[str] = set()
    for name in ("stopwords_en.txt", "stopwords_legal.txt"):
        with resources.files("zonescore").joinpath("data", name).open(encoding="utf-8") as fh:
            words |= {w.strip() for w in fh if w.strip() and not w.startswith("#")}
    return words


def preprocess(text: str, stopwords: Iterable[str] = (), source_doc: str = "") -> TokenStream:
    """Lowercase, replace everything outside a-z with spaces, split, drop stopwords."""
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    tokens = [t for t in _NON_ALPHA.sub(" ", text.lower()).split() if t not in stop]
    return TokenStream(tokens, source_doc)


def raw_tokens(text: str, source_doc: str = "") -> TokenStream:
    """Whitespace tokens of the untouched text (used when embedding raw text)."""
    return TokenStream(text.split(), source_doc)


def count_tokens(text: str) -> int:
    return len(text.split())


def chunk(stream: TokenStream, max_chunk_tokens: int = DEFAULT_MAX_CHUNK_TOKENS) -> list[Chunk]:
    """Greedy non-overlapping split; every chunk but the last is exactly ``max_chunk_tokens`` long."""
    if max_chunk_tokens < 1:
        raise ValueError(f"max_chunk_tokens must be >= 1, got {max_chunk_tokens}")
    toks = stream.tokens
    n = math.ceil(len(toks) / max_chunk_tokens)
    return [
        Chunk(stream.source_doc, i, toks[i * max_chunk_tokens : (i + 1) * max_chunk_tokens])
        for i in range(n)
    ]


def split_paragraphs(text: str) -> list[str]:
    text = text.replace("\r\n", "\n")
    return [p.strip() for p in _BLANK_LINE.split(text) if p.strip()]


def extract_paragraphs(text: str, terms: Sequence[str]) -> list[str]:
    """Blank-line-delimited paragraphs that mention any term (case-insensitive substring)."""
    needles = [t.lower() for t in terms if t]
    if not needles:
        raise ValueError("term list is empty")
    return [p for p in split_paragraphs(text) if any(n in p.lower() for n in needles)]

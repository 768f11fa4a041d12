"""LLM-assisted theme summaries and zoning-vintage extraction, and TF-IDF quantification of themes.

The LLM endpoint protocol is ``POST {endpoint}/complete`` with
``{"prompt": str, "temperature": 0}``; the reply is ``{"text": str}``.
Responses are cached on disk, one JSON file per SHA-256 prompt hash.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import re
import tempfile
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx

from .textprep import default_stopwords, extract_paragraphs, preprocess

log = logging.getLogger(__name__)

_SLOT = re.compile(r"\{(terms|text)\}")
_YEAR = re.compile(r"(?<!\d)(\d{4})(?!\d)")
MIN_YEAR, MAX_YEAR = 1800, 2100
VINTAGE_WORDS = 500

VINTAGE_BUCKETS = (
    ("1982-1996", 1982, 1996),
    ("1996-2008", 1996, 2008),
    ("2008-2016", 2008, 2016),
    ("2016-2021", 2016, 2021),
)
MISSING = "missing"
GROUPS = ("top_fbc", "bottom_fbc", "repository")


class LlmError(RuntimeError):
    pass


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    template: str

    @property
    def slots(self) -> set[str]:
        return set(_SLOT.findall(self.template))


OVERVIEW = PromptTemplate(
    "overview",
    "Provide a brief overview of the main points related to {terms} discussed in the following text: {text}",
)
FREQUENT_THEMES = PromptTemplate(
    "frequent_themes",
    "Identify the most frequently appearing themes and terms related to {terms} in the following text: {text}",
)
VINTAGE = PromptTemplate(
    "vintage",
    "The following text contains a zoning document. Return a table with the following columns: "
    "(1) Year the code was adopted/enacted, (2) Year the code was originally published, "
    "(3) Year the code was republished, and (4) Earliest year mentioned in the document. "
    'Separate each column value with a "$" symbol for easy parsing.\n\n{text}',
)
TEMPLATES = {t.name: t for t in (OVERVIEW, FREQUENT_THEMES, VINTAGE)}


def render_prompt(template: PromptTemplate, terms: Sequence[str], text: str) -> str:
    """Fill ``{terms}`` (comma-joined) and ``{text}`` in one pass; inserted text is not re-scanned."""
    if not text or not text.strip():
        raise PromptError("prompt text is empty")
    values = {"terms": ", ".join(terms), "text": text}
    if "terms" in template.slots and not terms:
        raise PromptError(f"template {template.name!r} needs terms")
    return _SLOT.sub(lambda m: values[m.group(1)], template.template)


def render_prompt_parts(
    template: PromptTemplate, terms: Sequence[str], text: str, max_words: int | None = None
) -> list[str]:
    """Render one prompt, or several with ``[part i of n]`` markers when the text is over the word limit."""
    whole = render_prompt(template, terms, text)
    if max_words is None or len(whole.split()) <= max_words:
        return [whole]
    overhead = len(render_prompt(template, terms, "x").split()) + 4
    budget = max_words - overhead
    if budget < 1:
        raise PromptError(f"max_words={max_words} leaves no room for text")
    words = text.split()
    pieces = [words[i : i + budget] for i in range(0, len(words), budget)]
    n = len(pieces)
    return [render_prompt(template, terms, f"[part {i + 1} of {n}] " + " ".join(p)) for i, p in enumerate(pieces)]


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass
class LlmResponse:
    prompt_hash: str
    text: str
    cached: bool = False


class CompletionClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class HttpLlmClient:
    def __init__(self, endpoint: str, timeout: float = 120.0, attempts: int = 3, backoff: float = 0.5,
                 client: httpx.Client | None = None):
        self._base = endpoint.rstrip("/")
        self.attempts = attempts
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)
        self.calls = 0

    def complete(self, prompt: str) -> str:
        last = "no attempt made"
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            self.calls += 1
            try:
                resp = self._client.post(f"{self._base}/complete", json={"prompt": prompt, "temperature": 0})
            except httpx.HTTPError as exc:
                last = f"transport error: {exc}"
                continue
            if resp.status_code != 200:
                last = f"HTTP {resp.status_code}"
                continue
            body = resp.json()
            if "text" not in body:
                raise LlmError("completion response lacks a 'text' field")
            return str(body["text"])
        raise LlmError(f"completion failed after {self.attempts} attempts: {last}")

    def close(self) -> None:
        self._client.close()


class CachedLlm:
    """Wraps a client with a prompt-hash keyed response cache."""

    def __init__(self, client: CompletionClient | None, cache_dir: str | Path | None = None):
        self.client = client
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.network_calls = 0

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def ask(self, prompt: str) -> LlmResponse:
        key = prompt_hash(prompt)
        if self.cache_dir and self._path(key).exists():
            data = json.loads(self._path(key).read_text(encoding="utf-8"))
            return LlmResponse(key, data["text"], cached=True)
        if self.client is None:
            raise LlmError("cache miss and no LLM client configured")
        text = self.client.complete(prompt)
        self.network_calls += 1
        if self.cache_dir:
            with self._lock:
                fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    json.dump({"prompt_hash": key, "text": text}, fh, sort_keys=True)
                os.replace(tmp, self._path(key))
        return LlmResponse(key, text, cached=False)

    def complete(self, prompt: str) -> str:
        return self.ask(prompt).text


def as_cached(llm) -> CachedLlm:
    return llm if isinstance(llm, CachedLlm) else CachedLlm(llm)


class RuleBasedLlm:
    """Deterministic offline stand-in for a chat model.

    Theme prompts get back the most frequent content words of the supplied
    text; the vintage prompt gets a ``$``-separated row of years found next
    to "adopted/enacted", "originally published" and "republished".
    """

    def __init__(self, n_terms: int = 12):
        self.n_terms = n_terms
        self.calls = 0
        self._stop = default_stopwords()

    def complete(self, prompt: str) -> str:
        self.calls += 1
        if prompt.startswith(VINTAGE.template.split("{text}")[0]):
            return self._vintage(prompt[len(VINTAGE.template.split("{text}")[0]):])
        for tpl in (OVERVIEW, FREQUENT_THEMES):
            marker = "in the following text: "
            if prompt.startswith(tpl.template.split("{terms}")[0]) and marker in prompt:
                body = prompt.split(marker, 1)[1]
                words = self._top_terms(body)
                if tpl is OVERVIEW:
                    return "; ".join(words[: self.n_terms // 2]) + "."
                return ", ".join(words) + "."
        return ""

    def _top_terms(self, text: str) -> list[str]:
        counts = Counter(t for t in preprocess(text, self._stop).tokens if len(t) > 2 and t not in {"part"})
        return [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: self.n_terms]]

    @staticmethod
    def _vintage(text: str) -> str:
        low = text.lower()

        def after(pattern: str) -> str:
            m = re.search(pattern + r"[^.\n]{0,40}?(?<!\d)(\d{4})(?!\d)", low)
            return m.group(m.lastindex) if m else "N/A"

        years = [int(y) for y in _YEAR.findall(low) if MIN_YEAR <= int(y) <= MAX_YEAR]
        return " $ ".join(
            [
                after(r"(adopted|enacted)"),
                after(r"(?<!re)(originally published|published)"),
                after(r"(republished)"),
                str(min(years)) if years else "N/A",
            ]
        )


@dataclass
class VintageRecord:
    place_id: str
    year_adopted: int | None = None
    year_published: int | None = None
    year_republished: int | None = None
    earliest_year: int | None = None
    vintage_year: int | None = None
    vintage_bucket: str = MISSING
    raw_response: str = ""
    parsed: bool = True


def vintage_bucket(year: int | None) -> str:
    if year is None:
        return MISSING
    for label, lo, hi in VINTAGE_BUCKETS:
        if lo <= year < hi or (hi == 2021 and year == 2021):
            return label
    return MISSING


def _parse_year(field_text: str) -> int | None:
    for y in _YEAR.findall(field_text):
        y = int(y)
        if MIN_YEAR <= y <= MAX_YEAR:
            return y
    return None


def parse_vintage_response(place_id: str, response: str) -> VintageRecord:
    """Pick the first four-field ``$`` row carrying a year; adopted > published > earliest."""
    rows = []
    for line in response.splitlines():
        fields = [f.strip().strip("|").strip() for f in line.strip().strip("|").split("$")]
        if len(fields) == 4:
            rows.append([_parse_year(f) for f in fields])
    if not rows:
        return VintageRecord(place_id, raw_response=response, parsed=False)
    years = next((r for r in rows if any(y is not None for y in r)), rows[0])
    adopted, published, republished, earliest = years
    vintage = next((y for y in (adopted, published, earliest) if y is not None), None)
    return VintageRecord(place_id, adopted, published, republished, earliest, vintage, vintage_bucket(vintage), response)


def first_words(text: str, n: int = VINTAGE_WORDS) -> str:
    return " ".join(text.split()[:n])


def extract_vintage(doc, llm) -> VintageRecord:
    """Ask for the code's dates using the first 500 raw whitespace words of the document."""
    head = first_words(doc.text)
    if not head:
        raise PromptError(f"{doc.doc_id}: empty document")
    response = as_cached(llm).ask(render_prompt(VINTAGE, (), head)).text
    return parse_vintage_response(doc.doc_id, response)


def summarize_themes(paragraphs: Sequence[str], terms: Sequence[str], llm, max_words: int | None = None) -> str:
    """Overview prompt output followed by the frequent-themes prompt output; "" when nothing matched."""
    if not paragraphs:
        return ""
    cached = as_cached(llm)
    text = "\n\n".join(paragraphs)
    outputs = []
    for tpl in (OVERVIEW, FREQUENT_THEMES):
        for prompt in render_prompt_parts(tpl, terms, text, max_words):
            outputs.append(cached.ask(prompt).text)
    return "\n".join(outputs)


@dataclass
class ThemeRow:
    term: str
    tfidf_score: float
    distinctiveness: float


@dataclass
class ThemeTable:
    group: str
    rows: list[ThemeRow] = field(default_factory=list)

    def scores(self) -> dict[str, float]:
        return {r.term: r.tfidf_score for r in self.rows}


def tfidf_themes(group_summaries: Mapping[str, Sequence[str]], stopwords=None) -> list[ThemeTable]:
    """Smooth-idf TF-IDF over one composite document per group, L2-normalized per composite.

    ``idf = ln((1 + G) / (1 + df)) + 1`` and ``tf`` is the raw count in the
    composite. ``distinctiveness`` is the group's score minus the best score
    any other group gives the same term.
    """
    if len(group_summaries) < 2:
        raise ValueError("TF-IDF themes need at least two groups")
    stop = default_stopwords() if stopwords is None else stopwords
    groups = list(group_summaries)
    counts = {}
    for g in groups:
        composite = " ".join(group_summaries[g])
        c = Counter(preprocess(composite, stop).tokens)
        if not c:
            raise ValueError(f"empty composite for group {g!r}")
        counts[g] = c
    n_groups = len(groups)
    vocab = sorted(set().union(*counts.values()))
    df = {t: sum(1 for g in groups if t in counts[g]) for t in vocab}
    idf = {t: math.log((1 + n_groups) / (1 + df[t])) + 1.0 for t in vocab}
    scores = {}
    for g in groups:
        raw = {t: counts[g][t] * idf[t] for t in counts[g]}
        norm = math.sqrt(sum(v * v for v in raw.values()))
        scores[g] = {t: v / norm for t, v in raw.items()}
    tables = []
    for g in groups:
        rows = []
        for t, s in scores[g].items():
            rival = max(scores[o].get(t, 0.0) for o in groups if o != g)
            rows.append(ThemeRow(t, s, s - rival))
        rows.sort(key=lambda r: (-r.tfidf_score, r.term))
        tables.append(ThemeTable(g, rows))
    return tables


def sample_theme_groups(
    scores: Sequence, sample_top: int = 50, sample_bottom: int = 50, seed: int = 0
) -> dict[str, list[str]]:
    """Seeded random draws of place ids from the high-FBC and low-FBC sets."""
    rng = random.Random(seed)
    top = sorted(s.place_id for s in scores if s.high_fbc)
    bottom = sorted(s.place_id for s in scores if not s.high_fbc)
    return {
        "top_fbc": sorted(rng.sample(top, min(sample_top, len(top)))),
        "bottom_fbc": sorted(rng.sample(bottom, min(sample_bottom, len(bottom)))),
    }


def theme_summaries(docs: Mapping[str, str], terms: Sequence[str], llm, max_words: int | None = None) -> dict[str, str]:
    """Summaries for documents that have matching paragraphs; provider failures skip the document."""
    out = {}
    for doc_id in sorted(docs):
        paragraphs = extract_paragraphs(docs[doc_id], terms)
        if not paragraphs:
            continue
        try:
            summary = summarize_themes(paragraphs, terms, llm, max_words)
        except LlmError as exc:
            log.warning("%s: theme summary skipped (%s)", doc_id, exc)
            continue
        if summary.strip():
            out[doc_id] = summary
    return out


def run_themes(
    docs: Mapping[str, str],
    scores: Sequence,
    reference_docs: Mapping[str, str] | None,
    terms: Sequence[str],
    llm,
    seed: int = 0,
    sample_top: int = 50,
    sample_bottom: int = 50,
    composite_size: int = 10,
    max_words: int | None = None,
    stopwords=None,
) -> list[ThemeTable]:
    """Sample documents per group, summarize them, draw ``composite_size`` summaries and run TF-IDF."""
    rng = random.Random(seed)
    chosen = sample_theme_groups(scores, sample_top, sample_bottom, seed)
    sources: dict[str, Mapping[str, str]] = {
        "top_fbc": {pid: docs[pid] for pid in chosen["top_fbc"] if pid in docs},
        "bottom_fbc": {pid: docs[pid] for pid in chosen["bottom_fbc"] if pid in docs},
    }
    if reference_docs:
        ref_ids = sorted(reference_docs)
        ref_ids = sorted(rng.sample(ref_ids, min(sample_top, len(ref_ids))))
        sources["repository"] = {r: reference_docs[r] for r in ref_ids}
    composites: dict[str, list[str]] = {}
    for group, group_docs in sources.items():
        summaries = theme_summaries(group_docs, terms, llm, max_words)
        if not summaries:
            log.warning("group %s has no summaries; dropped from TF-IDF", group)
            continue
        picked = sorted(rng.sample(sorted(summaries), min(composite_size, len(summaries))))
        composites[group] = [summaries[k] for k in picked]
    return tfidf_themes(composites, stopwords)

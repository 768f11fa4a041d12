"""End-to-end orchestration: config loading, the stage graph, resumable stamps and the artifact manifest.

Every stage reads its inputs from files and writes its artifacts into the run's
output directory, so each one can also be driven on its own from the CLI.
A stage is skipped when its stamp (a hash over parameters and input contents)
matches and its recorded outputs are unchanged.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__, corpus, embed, llm_analysis, similarity, textprep
from .econ import outcomes as econ_outcomes
from .econ.panel import DEMOGRAPHICS, PlacePanel, SUMMARY_HEADER, summary_rows, summary_stats
from .econ.regression import OUTCOMES, POST_SUFFIX, RESULT_HEADER, run_suite, suite_rows
from .io import (
    metadata_lines,
    parse_float,
    read_jsonl,
    read_table,
    sha256_bytes,
    sha256_file,
    sha256_tree,
    write_jsonl,
    write_table,
)
from .morpho import io as morpho_io
from .morpho.metrics import place_morphology, restrict_to_block_groups

log = logging.getLogger(__name__)

try:
    import tomllib  # type: ignore[import-not-found]
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------- config


@dataclass
class PipelineConfig:
    corpus_dir: Path
    reference_dir: Path
    geo_table: Path | None = None
    keywords: Path | None = None
    stopwords: list[Path] = field(default_factory=list)
    geometry_dir: Path | None = None
    panel: dict[str, Path] = field(default_factory=dict)
    embedding: dict[str, Any] = field(default_factory=dict)
    llm: dict[str, Any] = field(default_factory=lambda: {"kind": "rule_based"})
    themes: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    max_chunk_tokens: int = textprep.DEFAULT_MAX_CHUNK_TOKENS
    high_fbc_quantile: float = similarity.HIGH_FBC_QUANTILE
    clean_text: bool = True
    places_only: bool = True
    se_type: str = "HC1"
    cache_dir: Path | None = None
    skip: list[str] = field(default_factory=list)
    output_dir: Path | None = None

    def embedding_config(self, cache_dir: Path | None) -> embed.EmbeddingProviderConfig:
        opts = dict(self.embedding)
        if opts.get("kind", embed.LOCAL) == embed.REMOTE and cache_dir is not None:
            opts.setdefault("cache_dir", str(cache_dir / "embeddings"))
        try:
            return embed.EmbeddingProviderConfig(**opts)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"embedding: {exc}") from exc


PANEL_INPUTS = ("places", "lodes", "bg_centroids", "bg_places", "walkscore", "housing", "bg_years", "wrluri")


def load_config(path: str | Path, output_dir: str | Path | None = None) -> PipelineConfig:
    """Read a JSON or TOML config; relative paths resolve against the config file's directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix == ".toml":
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data, path.parent, output_dir)


def config_from_dict(data: Mapping[str, Any], base: Path, output_dir=None) -> PipelineConfig:
    def p(value) -> Path | None:
        if value in (None, ""):
            return None
        q = Path(value)
        return q if q.is_absolute() else (base / q)

    for key in ("corpus_dir", "reference_dir"):
        if key not in data:
            raise ConfigError(f"missing required key {key!r}")
    unknown = set(data.get("panel", {})) - set(PANEL_INPUTS)
    if unknown:
        raise ConfigError(f"unknown panel inputs {sorted(unknown)}")
    stop = data.get("stopwords", [])
    if isinstance(stop, str):
        stop = [stop]
    try:
        cfg = PipelineConfig(
            corpus_dir=p(data["corpus_dir"]),
            reference_dir=p(data["reference_dir"]),
            geo_table=p(data.get("geo_table")),
            keywords=p(data.get("keywords")),
            stopwords=[p(s) for s in stop],
            geometry_dir=p(data.get("geometry_dir")),
            panel={k: p(v) for k, v in data.get("panel", {}).items()},
            embedding=dict(data.get("embedding", {})),
            llm=dict(data.get("llm", {"kind": "rule_based"})),
            themes=dict(data.get("themes", {})),
            seed=int(data.get("seed", 0)),
            max_chunk_tokens=int(data.get("max_chunk_tokens", textprep.DEFAULT_MAX_CHUNK_TOKENS)),
            high_fbc_quantile=float(data.get("high_fbc_quantile", similarity.HIGH_FBC_QUANTILE)),
            clean_text=bool(data.get("clean_text", True)),
            places_only=bool(data.get("places_only", True)),
            se_type=str(data.get("se_type", "HC1")),
            cache_dir=p(data.get("cache_dir")),
            skip=list(data.get("skip", [])),
            output_dir=p(output_dir) if output_dir else p(data.get("output_dir")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    """Check the always-needed inputs now; stage-specific inputs are checked when their stage runs."""
    for label, path in (("corpus_dir", cfg.corpus_dir), ("reference_dir", cfg.reference_dir)):
        if not path.is_dir():
            raise ConfigError(f"{label} does not exist: {path}")
    for label, path in (("geo_table", cfg.geo_table), ("keywords", cfg.keywords)):
        if path is not None and not path.is_file():
            raise ConfigError(f"{label} does not exist: {path}")
    for s in cfg.stopwords:
        if not s.is_file():
            raise ConfigError(f"stopword file does not exist: {s}")
    if cfg.max_chunk_tokens < 1:
        raise ConfigError("max_chunk_tokens must be >= 1")
    if not 0 < cfg.high_fbc_quantile < 1:
        raise ConfigError("high_fbc_quantile must lie in (0, 1)")
    if cfg.llm.get("kind", "rule_based") not in ("rule_based", "remote_http"):
        raise ConfigError(f"unknown llm kind {cfg.llm.get('kind')!r}")
    if cfg.llm.get("kind") == "remote_http" and not cfg.llm.get("endpoint_url"):
        raise ConfigError("remote_http llm needs endpoint_url")
    unknown = set(cfg.skip) - set(STAGE_NAMES)
    if unknown:
        raise ConfigError(f"unknown stages in skip: {sorted(unknown)}")
    cfg.embedding_config(None)


# ---------------------------------------------------------------- artifact readers/writers


def _round_vector(values: np.ndarray) -> list[float]:
    # 12 significant digits: stable across BLAS builds, far below any tolerance used downstream.
    return [float(format(float(v), ".12g")) for v in values]


def write_embeddings(path: Path, vectors: Mapping[str, embed.EmbeddingVector], is_reference: bool) -> Path:
    return write_jsonl(
        path,
        (
            {"id": k, "is_reference": is_reference, "normalized": v.normalized, "vector": _round_vector(v.values)}
            for k, v in sorted(vectors.items())
        ),
    )


def read_embeddings(path: str | Path) -> dict[str, embed.EmbeddingVector]:
    return {
        r["id"]: embed.EmbeddingVector(np.asarray(r["vector"], dtype=float), normalized=r.get("normalized", False))
        for r in read_jsonl(path)
    }


SCORE_HEADER = ("place_id", "similarity", "log_similarity", "high_fbc")


def write_scores(path: Path, scores: Sequence[similarity.FbcScore], meta) -> Path:
    return write_table(
        path, SCORE_HEADER, ([s.place_id, s.similarity, s.log_similarity, s.high_fbc] for s in scores), meta
    )


def read_scores(path: str | Path) -> list[similarity.FbcScore]:
    out = []
    for r in read_table(path):
        out.append(
            similarity.FbcScore(r["place_id"], float(r["similarity"]), parse_float(r["log_similarity"]), r["high_fbc"] in ("1", "True", "true"))
        )
    return out


def read_documents(path: str | Path) -> list[corpus.Document]:
    return [corpus.Document.from_dict(r) for r in read_jsonl(path)]


def read_reference_dir(path: Path) -> list[corpus.Document]:
    docs = []
    for f in sorted(path.glob("*.txt")):
        text = f.read_bytes().decode("utf-8", errors="replace")
        if text.strip():
            docs.append(corpus.Document(None, f.stem, text, [f.stem], None, f"ref:{f.stem}"))
    if not docs:
        raise ValueError(f"no reference documents in {path}")
    return docs


def load_stopwords(paths: Sequence[Path]) -> set[str]:
    if not paths:
        return textprep.default_stopwords()
    words: set[str] = set()
    for p in paths:
        words |= textprep.read_wordlist(p)
    return words


def _csv_map(path: Path, key: str, value: str) -> dict[str, float]:
    out = {}
    for r in read_table(path):
        v = parse_float(r.get(value))
        if v is not None:
            out[r[key]] = v
    return out


# ---------------------------------------------------------------- standalone stage operations


def do_ingest(corpus_dir, geo_table=None, keywords=None, places_only=True) -> list[corpus.Document]:
    kw = corpus.read_keywords(keywords) if keywords else corpus.DEFAULT_KEYWORDS
    table = corpus.GeoMatchTable.from_csv(geo_table) if geo_table else None
    docs = corpus.ingest(corpus_dir, table, kw)
    if table is not None and places_only:
        dropped = [d.municipality_name for d in docs if d.match_level != "place"]
        if dropped:
            log.info("dropping %d documents without a census place match", len(dropped))
        docs = [d for d in docs if d.match_level == "place"]
    return docs


def do_prep(docs: Sequence[corpus.Document], stopwords: set[str], max_chunk: int, clean: bool = True,
            is_reference: bool = False) -> tuple[list[dict], dict[str, tuple[int, int]]]:
    records, stats = [], {}
    for d in docs:
        stream = textprep.preprocess(d.text, stopwords, d.doc_id) if clean else textprep.raw_tokens(d.text, d.doc_id)
        chunks = textprep.chunk(stream, max_chunk)
        stats[d.doc_id] = (len(chunks), len(stream.tokens))
        for c in chunks:
            records.append({"doc_id": d.doc_id, "index": c.index, "is_reference": is_reference, "text": c.text})
    return records, stats


def chunks_from_records(records: Sequence[Mapping]) -> dict[tuple[bool, str], list[textprep.Chunk]]:
    grouped: dict[tuple[bool, str], list[textprep.Chunk]] = {}
    for r in records:
        grouped.setdefault((bool(r["is_reference"]), r["doc_id"]), []).append(
            textprep.Chunk(r["doc_id"], int(r["index"]), r["text"].split())
        )
    for lst in grouped.values():
        lst.sort(key=lambda c: c.index)
    return grouped


def do_embed(records: Sequence[Mapping], provider: embed.EmbeddingProviderConfig):
    """Document vectors for corpus and reference documents, keyed by doc id."""
    grouped = chunks_from_records(records)
    keys = sorted(grouped)
    flat = [c for k in keys for c in grouped[k]]
    vectors = embed.embed_chunks(flat, provider)
    corpus_vecs, ref_vecs = {}, {}
    pos = 0
    for key in keys:
        n = len(grouped[key])
        try:
            doc_vec = embed.document_embedding(vectors[pos : pos + n])
        except embed.NoEmbeddableContent:
            log.warning("%s: no embeddable content, left out", key[1])
            pos += n
            continue
        pos += n
        (ref_vecs if key[0] else corpus_vecs)[key[1]] = doc_vec
    return corpus_vecs, ref_vecs


def do_score(corpus_vecs, ref_vecs, quantile=similarity.HIGH_FBC_QUANTILE) -> list[similarity.FbcScore]:
    centroid = similarity.build_centroid([ref_vecs[k] for k in sorted(ref_vecs)])
    return similarity.score_corpus(corpus_vecs, centroid, quantile)


PROJECTION_HEADER = ("id", "is_reference", "pc1", "pc2")


def do_pca(corpus_vecs, ref_vecs) -> tuple[similarity.PcaModel, list[list]]:
    items = [(k, False, v) for k, v in sorted(corpus_vecs.items())] + [(k, True, v) for k, v in sorted(ref_vecs.items())]
    model = similarity.fit_pca([v for _, _, v in items], k=2)
    proj = model.transform(np.stack([v.values for _, _, v in items]))
    # Rounded so tiny cross-platform SVD differences do not leak into the artifact bytes.
    rows = [[k, ref, round(float(z[0]), 8) + 0.0, round(float(z[1]), 8) + 0.0] for (k, ref, _), z in zip(items, proj)]
    return model, rows


def make_llm(llm_cfg: Mapping[str, Any], cache_dir: Path | None) -> llm_analysis.CachedLlm:
    kind = llm_cfg.get("kind", "rule_based")
    if kind == "rule_based":
        client = llm_analysis.RuleBasedLlm()
        return llm_analysis.CachedLlm(client, None)
    client = llm_analysis.HttpLlmClient(
        llm_cfg["endpoint_url"], timeout=float(llm_cfg.get("timeout", 120)), attempts=int(llm_cfg.get("attempts", 3)),
        backoff=float(llm_cfg.get("backoff", 0.5)),
    )
    return llm_analysis.CachedLlm(client, llm_cfg.get("cache_dir") or (cache_dir / "llm" if cache_dir else None))


THEME_HEADER = ("group", "term", "tfidf_score", "distinctiveness")


def do_themes(docs, scores, reference_docs, topic, llm, seed, sample_top=50, sample_bottom=50, composite_size=10,
              max_words=None, stopwords=None) -> list[llm_analysis.ThemeTable]:
    if topic not in textprep.TOPIC_TERMS:
        raise ValueError(f"unknown topic {topic!r}; choose from {sorted(textprep.TOPIC_TERMS)}")
    return llm_analysis.run_themes(
        {d.doc_id: d.text for d in docs},
        scores,
        {d.doc_id: d.text for d in reference_docs} if reference_docs else None,
        textprep.TOPIC_TERMS[topic],
        llm,
        seed=seed,
        sample_top=sample_top,
        sample_bottom=sample_bottom,
        composite_size=composite_size,
        max_words=max_words,
        stopwords=stopwords,
    )


def theme_rows(tables) -> list[list]:
    return [[t.group, r.term, r.tfidf_score, r.distinctiveness] for t in tables for r in t.rows]


VINTAGE_HEADER = ("place_id", "year_adopted", "year_published", "year_republished", "earliest_year", "vintage_year", "vintage_bucket", "parsed")


def do_vintage(docs, llm) -> list[llm_analysis.VintageRecord]:
    out = []
    for d in sorted(docs, key=lambda d: d.doc_id):
        try:
            out.append(llm_analysis.extract_vintage(d, llm))
        except (llm_analysis.LlmError, llm_analysis.PromptError) as exc:
            log.warning("%s: vintage extraction failed (%s)", d.doc_id, exc)
            out.append(llm_analysis.VintageRecord(d.doc_id, raw_response=str(exc), parsed=False))
    return out


MORPHO_FIELDS = ("median_setback", "setback_deviation", "mean_far", "log_far", "min_plot_size", "log_min_plot_size", "n_buildings", "n_segments")
MORPHO_HEADER = ("place_id", *MORPHO_FIELDS, *(f + POST_SUFFIX for f in MORPHO_FIELDS))


def do_morpho(geometry_dir: Path, development_year: Mapping[str, int] | None = None, height_per_floor=None) -> list[list]:
    rows = []
    keep = econ_outcomes.post1950_block_groups(development_year) if development_year else None
    for d in morpho_io.place_dirs(geometry_dir):
        place = morpho_io.read_place(d)
        m = place_morphology(place, height_per_floor)
        row = [place.place_id] + [getattr(m, f) for f in MORPHO_FIELDS]
        if keep is not None:
            sub = restrict_to_block_groups(place, keep)
            if sub.buildings or sub.parcels:
                mp = place_morphology(sub, height_per_floor)
                row += [getattr(mp, f) for f in MORPHO_FIELDS]
            else:
                row += [None] * len(MORPHO_FIELDS)
        else:
            row += [None] * len(MORPHO_FIELDS)
        rows.append(row)
    return rows


def _log_or_none(x):
    if x is None or x <= 0:
        return None
    return math.log(x)


def do_panel(scores, panel_inputs: Mapping[str, Path], vintage: Mapping[str, str] | None = None,
             morphology: Sequence[Mapping[str, str]] | None = None) -> PlacePanel:
    """Join place attributes, FBC scores, vintage, morphology and block-group outcomes into one panel."""
    if "places" not in panel_inputs:
        raise ValueError("panel needs a 'places' attribute file")
    for name, path in panel_inputs.items():
        if not Path(path).exists():
            raise FileNotFoundError(f"panel input {name} not found: {path}")
    places = {r["place_id"]: r for r in read_table(panel_inputs["places"])}
    by_score = {s.place_id: s for s in scores}
    bg_to_place = {r["bg_id"]: r["place_id"] for r in read_table(panel_inputs["bg_places"])} if "bg_places" in panel_inputs else {}
    years = None
    if "bg_years" in panel_inputs:
        years = {r["bg_id"]: int(float(r["year"])) for r in read_table(panel_inputs["bg_years"])}
    post = econ_outcomes.post1950_block_groups(years) if years is not None else None

    computed: dict[str, dict[str, float]] = {}
    if "walkscore" in panel_inputs and bg_to_place:
        ws = [(r["bg_id"], float(r["score"]), float(r["population"])) for r in read_table(panel_inputs["walkscore"])]
        computed["walkscore"] = econ_outcomes.walkscore_place(ws, bg_to_place)
        if post is not None:
            computed["walkscore" + POST_SUFFIX] = econ_outcomes.walkscore_place(ws, bg_to_place, post)
    if "lodes" in panel_inputs and "bg_centroids" in panel_inputs and bg_to_place:
        flows = [(r["home_bg"], r["work_bg"], float(r["jobs"])) for r in read_table(panel_inputs["lodes"])]
        cents = {r["bg_id"]: (float(r["lat"]), float(r["lon"])) for r in read_table(panel_inputs["bg_centroids"])}
        computed["log_commute"] = {k: v for k, v in ((p, _log_or_none(d)) for p, d in econ_outcomes.commute_distance(flows, cents, bg_to_place).items()) if v is not None}
        if post is not None:
            comm = econ_outcomes.commute_distance(flows, cents, bg_to_place, post)
            computed["log_commute" + POST_SUFFIX] = {k: v for k, v in ((p, _log_or_none(d)) for p, d in comm.items()) if v is not None}
    if "housing" in panel_inputs and bg_to_place:
        hs = [(r["bg_id"], float(r["mf_units"]), float(r["total_units"])) for r in read_table(panel_inputs["housing"])]
        computed["mf_share"] = econ_outcomes.mf_share_place(hs, bg_to_place)
        if post is not None:
            computed["mf_share" + POST_SUFFIX] = econ_outcomes.mf_share_place(hs, bg_to_place, post)
    if morphology:
        mapping = {
            "median_setback": "median_setback",
            "setback_deviation": "setback_deviation",
            "log_far": "log_far",
            "log_min_plot": "log_min_plot_size",
        }
        for out_col, src in mapping.items():
            for suffix in ("", POST_SUFFIX):
                computed[out_col + suffix] = {
                    r["place_id"]: v for r in morphology if (v := parse_float(r.get(src + suffix))) is not None
                }

    rows = []
    for pid in sorted(by_score):
        if pid not in places:
            log.warning("%s: scored but absent from the place attributes; left out of the panel", pid)
            continue
        src = places[pid]
        s = by_score[pid]
        area = parse_float(src.get("area_km2"))
        row: dict[str, Any] = {
            "place_id": pid,
            "state": src.get("state") or None,
            "region": src.get("region") or None,
            "place_type": src.get("place_type") or None,
            "vintage_bucket": (vintage or {}).get(pid, llm_analysis.MISSING),
            "lat": parse_float(src.get("lat")),
            "lon": parse_float(src.get("lon")),
            "log_area_km2": _log_or_none(area) if area is not None else parse_float(src.get("log_area_km2")),
            "similarity": s.similarity,
            "log_similarity": s.log_similarity,
            "high_fbc": int(s.high_fbc),
        }
        for col in (*OUTCOMES, *(o + POST_SUFFIX for o in OUTCOMES), *DEMOGRAPHICS):
            if col in computed:
                row[col] = computed[col].get(pid)
            else:
                row[col] = parse_float(src.get(col))
        rows.append(row)
    return PlacePanel(rows)


QUADRANT_HEADER = ("place_id", "wrluri", "log_similarity", "quadrant")


# ---------------------------------------------------------------- report


def coefficient_rows(results_rows: Sequence[Mapping[str, str]]) -> list[list]:
    out = []
    for r in results_rows:
        if r["status"] != "ok":
            continue
        beta, se = float(r["beta"]), float(r["se"])
        out.append([r["fbc_form"], r["outcome"], r["specification"], beta, se, beta - 1.96 * se, beta + 1.96 * se])
    return out


def similarity_histogram(corpus_sims: Sequence[float], ref_sims: Sequence[float], bins: int = 20) -> list[list]:
    allv = np.asarray(list(corpus_sims) + list(ref_sims), dtype=float)
    lo, hi = float(allv.min()), float(allv.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    rows = []
    for name, vals in (("municipal", corpus_sims), ("reference", ref_sims)):
        counts, _ = np.histogram(np.asarray(vals, dtype=float), bins=edges)
        for k in range(bins):
            rows.append([name, round(float(edges[k]), 10), round(float(edges[k + 1]), 10), int(counts[k])])
    return rows


# ---------------------------------------------------------------- stage graph


@dataclass
class RunContext:
    cfg: PipelineConfig
    out: Path
    cache: Path

    def path(self, name: str) -> Path:
        return self.out / name

    def meta(self, inputs: Mapping[str, str]) -> list[str]:
        return metadata_lines(self.cfg.seed, inputs)


@dataclass
class Stage:
    name: str
    outputs: tuple[str, ...]
    upstream: tuple[str, ...]
    external: Callable[[RunContext], dict[str, Path | None]]
    params: Callable[[RunContext], dict]
    run: Callable[[RunContext, dict[str, str]], list[str]]


def _ext_none(ctx):
    return {}


def _run_ingest(ctx: RunContext, hashes):
    cfg = ctx.cfg
    docs = do_ingest(cfg.corpus_dir, cfg.geo_table, cfg.keywords, cfg.places_only)
    if not docs:
        raise ValueError("no documents survived ingestion")
    refs = read_reference_dir(cfg.reference_dir)
    write_jsonl(ctx.path("documents.jsonl"), (d.to_dict() for d in docs))
    write_jsonl(ctx.path("reference_documents.jsonl"), (d.to_dict() for d in refs))
    return ["documents.jsonl", "reference_documents.jsonl"]


def _run_prep(ctx: RunContext, hashes):
    cfg = ctx.cfg
    stop = load_stopwords(cfg.stopwords)
    docs = read_documents(ctx.path("documents.jsonl"))
    refs = read_documents(ctx.path("reference_documents.jsonl"))
    recs, stats = do_prep(docs, stop, cfg.max_chunk_tokens, cfg.clean_text)
    ref_recs, _ = do_prep(refs, stop, cfg.max_chunk_tokens, cfg.clean_text, is_reference=True)
    write_jsonl(ctx.path("chunks.jsonl"), recs + ref_recs)
    rows = corpus.corpus_summary(docs, stats)
    write_table(
        ctx.path("corpus_summary.csv"),
        ("statistic", "count", "mean", "median", "std", "std_defined"),
        ([r.statistic, r.count, r.mean, r.median, r.std, r.std_defined] for r in rows),
        ctx.meta(hashes),
    )
    return ["chunks.jsonl", "corpus_summary.csv"]


def _run_embed(ctx: RunContext, hashes):
    provider = ctx.cfg.embedding_config(ctx.cache)
    corpus_vecs, ref_vecs = do_embed(read_jsonl(ctx.path("chunks.jsonl")), provider)
    if not ref_vecs:
        raise ValueError("no reference document could be embedded")
    write_embeddings(ctx.path("embeddings.jsonl"), corpus_vecs, False)
    write_embeddings(ctx.path("reference_embeddings.jsonl"), ref_vecs, True)
    return ["embeddings.jsonl", "reference_embeddings.jsonl"]


def _run_score(ctx: RunContext, hashes):
    scores = do_score(read_embeddings(ctx.path("embeddings.jsonl")), read_embeddings(ctx.path("reference_embeddings.jsonl")), ctx.cfg.high_fbc_quantile)
    write_scores(ctx.path("scores.csv"), scores, ctx.meta(hashes))
    return ["scores.csv"]


def _run_pca(ctx: RunContext, hashes):
    _, rows = do_pca(read_embeddings(ctx.path("embeddings.jsonl")), read_embeddings(ctx.path("reference_embeddings.jsonl")))
    write_table(ctx.path("projection.csv"), PROJECTION_HEADER, rows, ctx.meta(hashes))
    return ["projection.csv"]


def _run_themes(ctx: RunContext, hashes):
    t = ctx.cfg.themes
    llm = make_llm(ctx.cfg.llm, ctx.cache)
    tables = do_themes(
        read_documents(ctx.path("documents.jsonl")),
        read_scores(ctx.path("scores.csv")),
        read_documents(ctx.path("reference_documents.jsonl")),
        t.get("topic", "setbacks"),
        llm,
        ctx.cfg.seed,
        int(t.get("sample_top", 50)),
        int(t.get("sample_bottom", 50)),
        int(t.get("composite_size", 10)),
        t.get("max_words"),
        load_stopwords(ctx.cfg.stopwords),
    )
    write_table(ctx.path("themes.csv"), THEME_HEADER, theme_rows(tables), ctx.meta(hashes))
    return ["themes.csv"]


def _run_vintage(ctx: RunContext, hashes):
    recs = do_vintage(read_documents(ctx.path("documents.jsonl")), make_llm(ctx.cfg.llm, ctx.cache))
    write_table(
        ctx.path("vintage.csv"),
        VINTAGE_HEADER,
        ([r.place_id, r.year_adopted, r.year_published, r.year_republished, r.earliest_year, r.vintage_year, r.vintage_bucket, r.parsed] for r in recs),
        ctx.meta(hashes),
    )
    return ["vintage.csv"]


def _bg_years(path: Path | None) -> dict[str, int] | None:
    if path is None:
        return None
    return {r["bg_id"]: int(float(r["year"])) for r in read_table(path)}


def _run_morpho(ctx: RunContext, hashes):
    gdir = ctx.cfg.geometry_dir
    if gdir is None or not gdir.is_dir():
        raise FileNotFoundError(f"geometry directory not found: {gdir}")
    rows = do_morpho(gdir, _bg_years(ctx.cfg.panel.get("bg_years")))
    write_table(ctx.path("morphology.csv"), MORPHO_HEADER, rows, ctx.meta(hashes))
    return ["morphology.csv"]


def _run_panel(ctx: RunContext, hashes):
    vintage = {r["place_id"]: r["vintage_bucket"] for r in read_table(ctx.path("vintage.csv"))} if ctx.path("vintage.csv").exists() else None
    morph = read_table(ctx.path("morphology.csv")) if ctx.path("morphology.csv").exists() else None
    panel = do_panel(read_scores(ctx.path("scores.csv")), {k: v for k, v in ctx.cfg.panel.items() if k != "wrluri"}, vintage, morph)
    panel.to_csv(ctx.path("panel.csv"), ctx.meta(hashes))
    return ["panel.csv"]


def _run_regress(ctx: RunContext, hashes):
    panel = PlacePanel.from_csv(ctx.path("panel.csv"))
    rows = []
    for form in ("high20", "continuous"):
        rows += suite_rows(run_suite(panel, form, ctx.cfg.se_type))
    write_table(ctx.path("results.csv"), RESULT_HEADER, rows, ctx.meta(hashes))
    return ["results.csv"]


def _run_summary(ctx: RunContext, hashes):
    panel = PlacePanel.from_csv(ctx.path("panel.csv"))
    high = {s.place_id: s.high_fbc for s in read_scores(ctx.path("scores.csv"))}
    write_table(ctx.path("table1.csv"), SUMMARY_HEADER, summary_rows(summary_stats(panel, high)), ctx.meta(hashes))
    return ["table1.csv"]


def _run_analysis(ctx: RunContext, hashes):
    scores = read_scores(ctx.path("scores.csv"))
    written = []
    wr = ctx.cfg.panel.get("wrluri")
    if wr is not None:
        if not wr.exists():
            raise FileNotFoundError(f"WRLURI file not found: {wr}")
        q = similarity.quadrant_analysis(scores, _csv_map(wr, "place_id", "wrluri"))
        meta = ctx.meta(hashes) + [f"pearson_r: {q.pearson_r:.10g}", "counts: " + " ".join(f"{k}={v}" for k, v in q.counts.items())]
        write_table(ctx.path("quadrants.csv"), QUADRANT_HEADER,
                    ([pid, q.values[pid][0], q.values[pid][1], q.labels[pid]] for pid in sorted(q.labels)), meta)
        written.append("quadrants.csv")
    panel = PlacePanel.from_csv(ctx.path("panel.csv"))
    region = {r["place_id"]: r.get("region") for r in panel.rows if r.get("region")}
    try:
        between, within = similarity.variance_decomposition(scores, region)
        vrows = [["between_region", between], ["within_region", within]]
    except ValueError as exc:
        log.warning("variance decomposition skipped: %s", exc)
        vrows = []
    write_table(ctx.path("variance.csv"), ("component", "share"), vrows, ctx.meta(hashes))
    written.append("variance.csv")
    return written


def _run_report(ctx: RunContext, hashes):
    written = []
    meta = ctx.meta(hashes)
    write_table(ctx.path("fig1a_pca.csv"), PROJECTION_HEADER, ([r["id"], r["is_reference"], r["pc1"], r["pc2"]] for r in read_table(ctx.path("projection.csv"))), meta)
    written.append("fig1a_pca.csv")
    ref_vecs = read_embeddings(ctx.path("reference_embeddings.jsonl"))
    centroid = similarity.build_centroid([ref_vecs[k] for k in sorted(ref_vecs)])
    cs = [s.similarity for s in read_scores(ctx.path("scores.csv"))]
    rs = [similarity.cosine_similarity(ref_vecs[k], centroid.vector) for k in sorted(ref_vecs)]
    write_table(ctx.path("fig1b_similarity_hist.csv"), ("corpus", "bin_lo", "bin_hi", "count"), similarity_histogram(cs, rs), meta)
    written.append("fig1b_similarity_hist.csv")
    if ctx.path("quadrants.csv").exists():
        write_table(ctx.path("fig3_quadrants.csv"), QUADRANT_HEADER, ([r[c] for c in QUADRANT_HEADER] for r in read_table(ctx.path("quadrants.csv"))), meta)
        written.append("fig3_quadrants.csv")
    panel = read_table(ctx.path("panel.csv"))
    write_table(ctx.path("fig4b_region_scores.csv"), ("region", "place_id", "similarity"),
                sorted(([r["region"], r["place_id"], float(r["similarity"])] for r in panel if r.get("region")), key=lambda x: (x[0], x[1])), meta)
    written.append("fig4b_region_scores.csv")
    write_table(ctx.path("fig5_6_coefficients.csv"), ("fbc_form", "outcome", "specification", "beta", "se", "lo95", "hi95"),
                coefficient_rows(read_table(ctx.path("results.csv"))), meta)
    written.append("fig5_6_coefficients.csv")
    return written


def _embed_params(ctx):
    p = dict(ctx.cfg.embedding)
    p.pop("cache_dir", None)
    p.pop("max_workers", None)
    return {"embedding": p}


STAGES: tuple[Stage, ...] = (
    Stage("ingest", ("documents.jsonl", "reference_documents.jsonl"), (),
          lambda c: {"corpus": c.cfg.corpus_dir, "reference": c.cfg.reference_dir, "geo_table": c.cfg.geo_table, "keywords": c.cfg.keywords},
          lambda c: {"places_only": c.cfg.places_only}, _run_ingest),
    Stage("prep", ("chunks.jsonl", "corpus_summary.csv"), ("documents.jsonl", "reference_documents.jsonl"),
          lambda c: {f"stopwords{i}": s for i, s in enumerate(c.cfg.stopwords)},
          lambda c: {"max_chunk_tokens": c.cfg.max_chunk_tokens, "clean_text": c.cfg.clean_text}, _run_prep),
    Stage("embed", ("embeddings.jsonl", "reference_embeddings.jsonl"), ("chunks.jsonl",), _ext_none, _embed_params, _run_embed),
    Stage("score", ("scores.csv",), ("embeddings.jsonl", "reference_embeddings.jsonl"), _ext_none,
          lambda c: {"quantile": c.cfg.high_fbc_quantile}, _run_score),
    Stage("pca", ("projection.csv",), ("embeddings.jsonl", "reference_embeddings.jsonl"), _ext_none, lambda c: {}, _run_pca),
    Stage("themes", ("themes.csv",), ("documents.jsonl", "reference_documents.jsonl", "scores.csv"),
          lambda c: {f"stopwords{i}": s for i, s in enumerate(c.cfg.stopwords)},
          lambda c: {"themes": c.cfg.themes, "seed": c.cfg.seed, "llm": {k: v for k, v in c.cfg.llm.items() if k != "cache_dir"}}, _run_themes),
    Stage("vintage", ("vintage.csv",), ("documents.jsonl",), _ext_none,
          lambda c: {"llm": {k: v for k, v in c.cfg.llm.items() if k != "cache_dir"}}, _run_vintage),
    Stage("morpho", ("morphology.csv",), (),
          lambda c: {"geometry": c.cfg.geometry_dir, "bg_years": c.cfg.panel.get("bg_years")}, lambda c: {}, _run_morpho),
    Stage("panel", ("panel.csv",), ("scores.csv", "vintage.csv", "morphology.csv"),
          lambda c: {f"panel_{k}": v for k, v in c.cfg.panel.items() if k != "wrluri"}, lambda c: {}, _run_panel),
    Stage("regress", ("results.csv",), ("panel.csv",), _ext_none, lambda c: {"se_type": c.cfg.se_type}, _run_regress),
    Stage("summary", ("table1.csv",), ("panel.csv", "scores.csv"), _ext_none, lambda c: {}, _run_summary),
    Stage("analysis", ("quadrants.csv", "variance.csv"), ("scores.csv", "panel.csv"),
          lambda c: {"wrluri": c.cfg.panel.get("wrluri")}, lambda c: {}, _run_analysis),
    Stage("report", (), ("projection.csv", "embeddings.jsonl", "reference_embeddings.jsonl", "scores.csv", "panel.csv", "results.csv", "quadrants.csv"),
          _ext_none, lambda c: {}, _run_report),
)
STAGE_NAMES = tuple(s.name for s in STAGES)
STAMP_DIR = ".stamps"
MANIFEST = "manifest.json"


_CODE_HASH: str | None = None


def code_hash() -> str:
    """Digest of the package sources, so editing the code invalidates stage stamps."""
    global _CODE_HASH
    if _CODE_HASH is None:
        root = Path(__file__).parent
        parts = [f"{f.relative_to(root).as_posix()}:{sha256_file(f)}" for f in sorted(root.rglob("*")) if f.suffix in (".py", ".txt")]
        _CODE_HASH = sha256_bytes("\n".join(parts).encode())
    return _CODE_HASH


def _stage_key(ctx: RunContext, stage: Stage) -> tuple[str, dict[str, str]]:
    hashes = {}
    for name, path in sorted(stage.external(ctx).items()):
        if path is not None and Path(path).exists():
            hashes[name] = sha256_tree(path)
    for name in stage.upstream:
        if ctx.path(name).exists():
            hashes[name] = sha256_file(ctx.path(name))
    payload = json.dumps({"stage": stage.name, "version": __version__, "code": code_hash(), "params": stage.params(ctx), "inputs": hashes},
                         sort_keys=True, default=str)
    return sha256_bytes(payload.encode()), hashes


def _stamp_path(ctx: RunContext, stage: Stage) -> Path:
    return ctx.out / STAMP_DIR / f"{stage.name}.json"


def _fresh(ctx: RunContext, stage: Stage, key: str) -> list[tuple[str, str]] | None:
    p = _stamp_path(ctx, stage)
    if not p.exists():
        return None
    stamp = json.loads(p.read_text(encoding="utf-8"))
    if stamp.get("key") != key:
        return None
    for name, digest in stamp["outputs"]:
        if not ctx.path(name).exists() or sha256_file(ctx.path(name)) != digest:
            return None
    return [tuple(x) for x in stamp["outputs"]]


def run_stage(ctx: RunContext, name: str) -> list[str]:
    """Run one stage outside the full pipeline, with the same input hashes in its metadata."""
    stage = next(s for s in STAGES if s.name == name)
    _, hashes = _stage_key(ctx, stage)
    return stage.run(ctx, hashes)


@dataclass
class RunResult:
    status: int
    manifest: dict
    failed_stage: str | None = None
    error: str | None = None
    ran: list[str] = field(default_factory=list)
    reused: list[str] = field(default_factory=list)


def run_pipeline(cfg: PipelineConfig, out_dir: str | Path | None = None, force: bool = False) -> RunResult:
    """Run every enabled stage in order and write ``manifest.json``.

    Returns status 0 on success or 3 when a stage fails; artifacts of the
    stages completed before the failure stay in place and are listed in the
    manifest.
    """
    out = Path(out_dir or cfg.output_dir or "zonescore-out")
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg, out, cfg.cache_dir or out / ".cache")
    manifest: dict[str, Any] = {"tool": "zonescore", "version": __version__, "seed": cfg.seed, "stages": {}}
    result = RunResult(0, manifest)
    for stage in STAGES:
        if stage.name in cfg.skip:
            log.info("stage %s skipped by config", stage.name)
            for name in stage.outputs:
                if ctx.path(name).exists():
                    ctx.path(name).unlink()
            continue
        key, hashes = _stage_key(ctx, stage)
        outputs = None if force else _fresh(ctx, stage, key)
        if outputs is not None:
            result.reused.append(stage.name)
        else:
            log.info("running stage %s", stage.name)
            try:
                written = stage.run(ctx, hashes)
            except Exception as exc:  # noqa: BLE001 - any stage error halts the run with its name
                log.error("stage %s failed: %s", stage.name, exc)
                result.status = 3
                result.failed_stage = stage.name
                result.error = f"{type(exc).__name__}: {exc}"
                manifest["failed_stage"] = stage.name
                _stamp_path(ctx, stage).unlink(missing_ok=True)
                break
            for stale in set(stage.outputs) - set(written):
                ctx.path(stale).unlink(missing_ok=True)
            outputs = [(name, sha256_file(ctx.path(name))) for name in written]
            _stamp_path(ctx, stage).parent.mkdir(exist_ok=True)
            _stamp_path(ctx, stage).write_text(json.dumps({"key": key, "outputs": outputs}, sort_keys=True), encoding="utf-8")
            result.ran.append(stage.name)
        manifest["stages"][stage.name] = [list(o) for o in outputs]
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result

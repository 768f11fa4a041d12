"""Command-line entry point: ``zonescore run`` for the whole pipeline plus one subcommand per stage."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, corpus, embed, llm_analysis, pipeline, similarity, textprep
from .econ.panel import PlacePanel, SUMMARY_HEADER, summary_rows, summary_stats
from .econ.regression import RESULT_HEADER, run_suite, suite_rows
from .io import metadata_lines, read_jsonl, sha256_tree, write_jsonl, write_table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

log = logging.getLogger("zonescore")


class UsageError(ValueError):
    pass


def _hashes(**paths) -> dict[str, str]:
    return {k: sha256_tree(v) for k, v in paths.items() if v is not None and Path(v).exists()}


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise UsageError(f"input not found: {p}")


def cmd_run(args) -> int:
    try:
        cfg = pipeline.load_config(args.config, args.out)
    except pipeline.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg.seed = args.seed
    result = pipeline.run_pipeline(cfg, args.out, force=args.force)
    if result.status:
        print(f"stage {result.failed_stage} failed: {result.error}", file=sys.stderr)
    else:
        n = sum(len(v) for v in result.manifest["stages"].values())
        print(f"ok: {n} artifacts ({len(result.ran)} stages run, {len(result.reused)} reused)")
    return result.status


def cmd_ingest(args) -> int:
    _require(args.corpus_dir, args.geo_table, args.keywords)
    docs = pipeline.do_ingest(args.corpus_dir, args.geo_table, args.keywords, places_only=not args.keep_unmatched)
    write_jsonl(args.out, (d.to_dict() for d in docs))
    print(f"{len(docs)} documents -> {args.out}")
    return EXIT_OK


def cmd_prep(args) -> int:
    _require(args.input, *(args.stopwords or []))
    docs = pipeline.read_documents(args.input)
    stop = pipeline.load_stopwords([Path(s) for s in args.stopwords or []])
    records, stats = pipeline.do_prep(docs, stop, args.max_chunk, clean=not args.raw, is_reference=args.reference)
    write_jsonl(args.out, records)
    if args.summary and docs:
        rows = corpus.corpus_summary(docs, stats)
        write_table(args.summary, ("statistic", "count", "mean", "median", "std", "std_defined"),
                    ([r.statistic, r.count, r.mean, r.median, r.std, r.std_defined] for r in rows),
                    metadata_lines(None, _hashes(docs=args.input)))
    print(f"{len(records)} chunks -> {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    _require(args.input)
    opts = {"kind": args.provider}
    if args.dimension:
        opts["dimension"] = args.dimension
    if args.endpoint:
        opts["endpoint_url"] = args.endpoint
    if args.cache_dir:
        opts["cache_dir"] = args.cache_dir
    opts["batch_size"] = args.batch_size
    opts["max_workers"] = args.workers
    provider = embed.EmbeddingProviderConfig(**opts)
    corpus_vecs, ref_vecs = pipeline.do_embed(read_jsonl(args.input), provider)
    pipeline.write_embeddings(Path(args.out), corpus_vecs, False)
    if args.reference_out:
        pipeline.write_embeddings(Path(args.reference_out), ref_vecs, True)
    print(f"{len(corpus_vecs)} corpus and {len(ref_vecs)} reference embeddings")
    return EXIT_OK


def cmd_score(args) -> int:
    _require(args.embeddings, args.reference)
    scores = pipeline.do_score(pipeline.read_embeddings(args.embeddings), pipeline.read_embeddings(args.reference), args.quantile)
    pipeline.write_scores(Path(args.out), scores, metadata_lines(None, _hashes(embeddings=args.embeddings, reference=args.reference)))
    print(f"{sum(s.high_fbc for s in scores)} of {len(scores)} places flagged high FBC")
    return EXIT_OK


def cmd_pca(args) -> int:
    _require(args.embeddings, args.reference)
    refs = pipeline.read_embeddings(args.reference) if args.reference else {}
    model, rows = pipeline.do_pca(pipeline.read_embeddings(args.embeddings), refs)
    meta = metadata_lines(None, _hashes(embeddings=args.embeddings, reference=args.reference))
    meta.append("explained_ratio: " + " ".join(f"{v:.10g}" for v in model.explained_ratio))
    write_table(args.out, pipeline.PROJECTION_HEADER, rows, meta)
    return EXIT_OK


def cmd_quadrants(args) -> int:
    _require(args.scores, args.wrluri)
    scores = pipeline.read_scores(args.scores)
    q = similarity.quadrant_analysis(scores, pipeline._csv_map(Path(args.wrluri), "place_id", "wrluri"))
    meta = metadata_lines(None, _hashes(scores=args.scores, wrluri=args.wrluri))
    meta += [f"pearson_r: {q.pearson_r:.10g}", "counts: " + " ".join(f"{k}={v}" for k, v in q.counts.items())]
    write_table(args.out, pipeline.QUADRANT_HEADER,
                ([pid, q.values[pid][0], q.values[pid][1], q.labels[pid]] for pid in sorted(q.labels)), meta)
    print(f"r = {q.pearson_r:.4f}; " + ", ".join(f"{k}={v}" for k, v in q.counts.items()))
    return EXIT_OK


def _llm(args) -> llm_analysis.CachedLlm:
    cfg = {"kind": "remote_http", "endpoint_url": args.llm_endpoint} if args.llm_endpoint else {"kind": "rule_based"}
    if args.llm_cache:
        cfg["cache_dir"] = args.llm_cache
    return pipeline.make_llm(cfg, None)


def cmd_themes(args) -> int:
    _require(args.scores, args.docs, args.reference_docs)
    refs = pipeline.read_documents(args.reference_docs) if args.reference_docs else None
    tables = pipeline.do_themes(
        pipeline.read_documents(args.docs), pipeline.read_scores(args.scores), refs, args.topic, _llm(args),
        args.seed, args.sample_top, args.sample_bottom, args.composite_size,
    )
    write_table(args.out, pipeline.THEME_HEADER, pipeline.theme_rows(tables),
                metadata_lines(args.seed, _hashes(scores=args.scores, docs=args.docs)))
    return EXIT_OK


def cmd_vintage(args) -> int:
    _require(args.docs)
    recs = pipeline.do_vintage(pipeline.read_documents(args.docs), _llm(args))
    write_table(args.out, pipeline.VINTAGE_HEADER,
                ([r.place_id, r.year_adopted, r.year_published, r.year_republished, r.earliest_year, r.vintage_year, r.vintage_bucket, r.parsed] for r in recs),
                metadata_lines(None, _hashes(docs=args.docs)))
    return EXIT_OK


def cmd_morpho(args) -> int:
    _require(args.place_dir, args.bg_years)
    root = Path(args.place_dir)
    years = pipeline._bg_years(Path(args.bg_years)) if args.bg_years else None
    # A directory holding the three layers is a single place; otherwise treat it as a root of places.
    if (root / "buildings.geojson").exists():
        tmp_root = root.parent
        rows = [r for r in pipeline.do_morpho(tmp_root, years, args.height_per_floor) if r[0] == root.name]
    else:
        rows = pipeline.do_morpho(root, years, args.height_per_floor)
    write_table(args.out, pipeline.MORPHO_HEADER, rows, metadata_lines(None, _hashes(place_dir=args.place_dir)))
    return EXIT_OK


def cmd_regress(args) -> int:
    _require(args.panel)
    panel = PlacePanel.from_csv(args.panel)
    forms = ("high20", "continuous") if args.fbc_form == "both" else (args.fbc_form,)
    rows = []
    for form in forms:
        rows += suite_rows(run_suite(panel, form, args.se_type))
    write_table(args.out, RESULT_HEADER, rows, metadata_lines(None, _hashes(panel=args.panel)))
    return EXIT_OK


def cmd_summary(args) -> int:
    _require(args.panel, args.scores)
    panel = PlacePanel.from_csv(args.panel)
    high = {s.place_id: s.high_fbc for s in pipeline.read_scores(args.scores)}
    write_table(args.out, SUMMARY_HEADER, summary_rows(summary_stats(panel, high)),
                metadata_lines(None, _hashes(panel=args.panel, scores=args.scores)))
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.outputs)
    if not out.is_dir():
        raise UsageError(f"outputs directory not found: {out}")
    seed = 0
    if (out / pipeline.MANIFEST).exists():
        seed = int(json.loads((out / pipeline.MANIFEST).read_text(encoding="utf-8")).get("seed", 0))
    ctx = pipeline.RunContext(pipeline.PipelineConfig(out, out, seed=seed), out, out / ".cache")
    written = pipeline.run_stage(ctx, "report")
    print("wrote " + ", ".join(written))
    return EXIT_OK


def cmd_fixture(args) -> int:
    from .fixture import write_fixture

    root = write_fixture(args.out, seed=args.seed)
    print(f"fixture written to {root}; run: zonescore run --config {Path(root) / 'pipeline.json'} --out OUT")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zonescore", description="Zoning-code FBC similarity, urban form and regression pipeline.")
    parser.add_argument("--version", action="version", version=f"zonescore {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true", help="ignore stage stamps and rerun everything")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ingest", help="filter zoning chapters and match to census geography")
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--geo-table")
    p.add_argument("--keywords")
    p.add_argument("--keep-unmatched", action="store_true", help="keep documents without a census place match")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("prep", help="clean and chunk documents")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--stopwords", action="append")
    p.add_argument("--max-chunk", type=int, default=textprep.DEFAULT_MAX_CHUNK_TOKENS)
    p.add_argument("--raw", action="store_true", help="chunk raw tokens instead of cleaned text")
    p.add_argument("--reference", action="store_true", help="mark chunks as reference-corpus chunks")
    p.add_argument("--summary", help="also write the corpus summary CSV here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("embed", help="embed chunks and pool them per document")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--provider", choices=(embed.LOCAL, embed.REMOTE), default=embed.LOCAL)
    p.add_argument("--dimension", type=int)
    p.add_argument("--endpoint")
    p.add_argument("--cache-dir")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--reference-out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("score", help="cosine similarity to the reference centroid")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--quantile", type=float, default=similarity.HIGH_FBC_QUANTILE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("pca", help="two-component PCA of the embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--reference")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("quadrants", help="WRLURI x FBC median-split quadrants")
    p.add_argument("--scores", required=True)
    p.add_argument("--wrluri", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quadrants)

    for name, func in (("themes", cmd_themes), ("vintage", cmd_vintage)):
        p = sub.add_parser(name, help=f"LLM-assisted {name} extraction")
        p.add_argument("--docs", required=True)
        p.add_argument("--llm-endpoint", help="completion service URL; the offline rule-based responder is used when omitted")
        p.add_argument("--llm-cache")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
        if name == "themes":
            p.add_argument("--scores", required=True)
            p.add_argument("--reference-docs")
            p.add_argument("--topic", choices=sorted(textprep.TOPIC_TERMS), default="setbacks")
            p.add_argument("--sample-top", type=int, default=50)
            p.add_argument("--sample-bottom", type=int, default=50)
            p.add_argument("--composite-size", type=int, default=10)
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("morpho", help="setback, FAR and plot-size metrics from GeoJSON layers")
    p.add_argument("--place-dir", required=True)
    p.add_argument("--bg-years", help="block-group development years for the post-1950 columns")
    p.add_argument("--height-per-floor", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_morpho)

    p = sub.add_parser("regress", help="OLS suite over 7 outcomes x 5 specifications")
    p.add_argument("--panel", required=True)
    p.add_argument("--fbc-form", choices=("high20", "continuous", "both"), default="high20")
    p.add_argument("--se-type", choices=("HC1", "classical"), default="HC1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("summary", help="summary statistics by FBC group")
    p.add_argument("--panel", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("report", help="emit figure-data CSVs from a finished output directory")
    p.add_argument("--outputs", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("fixture", help="write the bundled synthetic fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=20240501)
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, pipeline.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - standalone stage errors map to the stage-failure code
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())

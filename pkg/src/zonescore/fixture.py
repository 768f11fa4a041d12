"""Deterministic synthetic inputs: a small end-to-end corpus, grid cities and regression panels."""

from __future__ import annotations

import json
import math
import random
from pathlib import Path

import numpy as np

from .econ.panel import DEMOGRAPHICS, PLACE_TYPES
from .econ.regression import OUTCOMES, POST_SUFFIX
from .io import write_table
from .llm_analysis import VINTAGE_BUCKETS
from .morpho.io import write_place
from .morpho.metrics import Building, Parcel, PlaceGeometry, Street

FBC_VOCAB = (
    "frontage build line facade transect streetscape landscape architectural buffers pedestrian "
    "mixed use form block corner porch storefront arcade civic plaza walkable neighborhood "
    "character massing gallery stoop courtyard thoroughfare sidewalk tree lawn"
).split()
EUCLID_VOCAB = (
    "permitted conditional district industrial commercial residential parking lot minimum maximum "
    "variance accessory dwelling unit use hazard floodplain sign signage loading spaces density "
    "acre subdivision plat easement utility drainage stormwater warehouse"
).split()
OTHER_VOCAB = (
    "animal dog leash kennel license fee tax levy assessment beverage permit vendor noise nuisance "
    "curfew cable franchise subscriber penalty fine citation"
).split()
FILLER = "the of and to in a is for be by with on as or that this any such all at from".split()
OTHER_CHAPTERS = ("ANIMALS AND FOWL", "TAXATION", "ALCOHOLIC BEVERAGES", "OFFENSES", "CABLE TELEVISION")
ZONING_TITLES = ("ZONING", "SUBDIVISION REGULATIONS", "LAND DEVELOPMENT CODE", "STREETS, SIDEWALKS, AND PUBLIC PROPERTY")
STATES = ("AL", "GA", "OH")
REGION_OF = {"AL": "South", "GA": "South", "OH": "Midwest"}


def _sentence(rng: random.Random, vocab, n: int) -> str:
    words = [rng.choice(vocab) if rng.random() < 0.7 else rng.choice(FILLER) for _ in range(n)]
    return " ".join(words).capitalize() + "."


def _paragraph(rng, fbc_share: float, n_sent: int = 5) -> str:
    out = []
    for _ in range(n_sent):
        vocab = FBC_VOCAB if rng.random() < fbc_share else EUCLID_VOCAB
        out.append(_sentence(rng, vocab, rng.randint(8, 16)))
    return " ".join(out)


def _setback_paragraph(rng, fbc_share: float) -> str:
    depth = rng.choice((5, 10, 15, 20, 25, 30))
    if rng.random() < fbc_share:
        return (f"The building line shall be located within {depth} feet of the frontage. "
                "Setback requirements reinforce the streetscape, landscape buffers and architectural facade. "
                + _paragraph(rng, fbc_share, 2))
    return (f"A minimum front yard requirement of {depth} feet applies. The setback distance shall be measured "
            "from the lot line; parking and accessory uses may not encroach. " + _paragraph(rng, fbc_share, 2))


def _far_paragraph(rng, fbc_share: float) -> str:
    ratio = rng.choice(("0.5", "1.0", "2.0", "3.5"))
    return (f"The maximum floor area ratio is {ratio}. Building coverage and development intensity are governed "
            "by the district standards. " + _paragraph(rng, fbc_share, 2))


def zoning_text(rng: random.Random, fbc_share: float, n_paragraphs: int, adopted: int | None, published: int | None) -> str:
    head = []
    if adopted:
        head.append(f"Ordinance adopted June 4, {adopted}.")
    if published:
        head.append(f"Code originally published {published}.")
    paragraphs = [" ".join(head)] if head else []
    for i in range(n_paragraphs):
        r = rng.random()
        if r < 0.2:
            paragraphs.append(_setback_paragraph(rng, fbc_share))
        elif r < 0.3:
            paragraphs.append(_far_paragraph(rng, fbc_share))
        else:
            paragraphs.append(_paragraph(rng, fbc_share))
    return "\n\n".join(p for p in paragraphs if p)


def grid_city(
    place_id: str = "grid",
    n_blocks_x: int = 3,
    n_blocks_y: int = 2,
    parcels_per_block: int = 4,
    setbacks=(3.0, 5.0, 8.0),
    heights=(4.0, 6.0, 8.0),
    parcel_width: float = 20.0,
    parcel_depth: float = 25.0,
    plot_offset: float = 1.0,
    building_size: float = 10.0,
    block_height: float = 60.0,
    bg_per_row: bool = True,
) -> tuple[PlaceGeometry, dict]:
    """Rows of parcels north of horizontal streets on the lines ``y = j * block_height``.

    Street segment (i, j) spans block i on street j; every building on it sits
    ``setbacks[(i + j * n_blocks_x) % len(setbacks)]`` metres north of the street
    and is ``heights[...]`` tall with the same cycling. Parcels start
    ``plot_offset`` metres from the street. Returns the geometry and the
    per-segment ground truth.
    """
    block_w = parcels_per_block * parcel_width
    parcels, buildings, streets, truth = [], [], [], {}
    for j in range(n_blocks_y):
        y0 = j * block_height
        for i in range(n_blocks_x):
            seg = f"s{j:03d}_{i:03d}"
            k = i + j * n_blocks_x
            s = setbacks[k % len(setbacks)]
            h = heights[k % len(heights)]
            x0 = i * block_w
            streets.append(Street(seg, [(x0, y0), (x0 + block_w, y0)]))
            truth[seg] = {"setback": s, "height": h, "plot_setback": plot_offset}
            bg = f"{place_id}-bg{j}" if bg_per_row else None
            for p in range(parcels_per_block):
                px = x0 + p * parcel_width
                py = y0 + plot_offset
                pid = f"{seg}_p{p}"
                parcels.append(Parcel(pid, [(px, py), (px + parcel_width, py), (px + parcel_width, py + parcel_depth), (px, py + parcel_depth)],
                                      zoning_district=f"D{j}", bg_id=bg))
                bx = px + (parcel_width - building_size) / 2
                by = y0 + s
                buildings.append(Building(f"{pid}_b", [(bx, by), (bx + building_size, by), (bx + building_size, by + building_size), (bx, by + building_size)],
                                          height=h, bg_id=bg))
    return PlaceGeometry(place_id, parcels, buildings, streets), truth


def transform_place(place: PlaceGeometry, angle: float = 0.0, shift=(0.0, 0.0), scale: float = 1.0) -> PlaceGeometry:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]]) * scale
    off = np.asarray(shift, dtype=float)

    def f(pts):
        return np.asarray(pts) @ rot.T + off

    return PlaceGeometry(
        place.place_id,
        [Parcel(p.parcel_id, f(p.ring), p.zoning_district, p.bg_id) for p in place.parcels],
        [Building(b.building_id, f(b.ring), b.height, b.bg_id) for b in place.buildings],
        [Street(st.segment_id, f(st.line)) for st in place.streets],
    )


def synthetic_panel(n: int = 2500, beta: float = -0.8, seed: int = 0, n_states: int = 40, post_share: float = 0.85) -> list[dict]:
    """A place panel where every outcome equals ``beta * high_fbc`` plus controls, fixed effects and noise."""
    rng = np.random.default_rng(seed)
    states = [f"S{k:02d}" for k in range(n_states)]
    regions = ("Midwest", "Northeast", "South", "West")
    state_fx = rng.normal(0, 1.0, n_states)
    type_fx = dict(zip(PLACE_TYPES, (0.3, 0.0, -0.2, 0.1)))
    buckets = [b[0] for b in VINTAGE_BUCKETS] + ["missing"]
    vint_fx = dict(zip(buckets, (0.0, 0.2, -0.1, 0.3, 0.05)))
    sim = rng.uniform(0.6, 0.99, n)
    order = np.argsort(-sim, kind="stable")
    high = np.zeros(n, dtype=int)
    high[order[: math.ceil(0.2 * n)]] = 1
    rows = []
    for i in range(n):
        st = int(rng.integers(n_states))
        pt = PLACE_TYPES[int(rng.integers(len(PLACE_TYPES)))]
        vb = buckets[int(rng.choice(len(buckets), p=(0.2, 0.3, 0.25, 0.2, 0.05)))]
        lat = float(rng.uniform(25, 48))
        lon = float(rng.uniform(-122, -70))
        la = float(rng.normal(2.0, 1.0))
        row = {
            "place_id": f"P{i:05d}",
            "state": states[st],
            "region": regions[st % 4],
            "place_type": pt,
            "vintage_bucket": vb,
            "lat": lat,
            "lon": lon,
            "log_area_km2": la,
            "similarity": float(sim[i]),
            "log_similarity": float(math.log(sim[i])),
            "high_fbc": int(high[i]),
        }
        base = state_fx[st] + type_fx[pt] + vint_fx[vb] + 0.02 * lat - 0.01 * lon + 0.1 * la
        post = rng.random() < post_share
        for k, o in enumerate(OUTCOMES):
            row[o] = float(beta * high[i] + base + 0.1 * k + rng.normal(0, 2.0))
            row[o + POST_SUFFIX] = float(beta * high[i] + base + rng.normal(0, 2.0)) if post else None
        for d in DEMOGRAPHICS:
            row[d] = float(rng.normal(10, 2))
        rows.append(row)
    return rows


def write_fixture(root: str | Path, seed: int = 20240501, n_docs: int = 20, n_reference: int = 3) -> Path:
    """Write the bundled end-to-end fixture and its ``pipeline.json`` under ``root``."""
    root = Path(root)
    rng = random.Random(seed)
    corpus = root / "corpus"
    reference = root / "reference"
    corpus.mkdir(parents=True, exist_ok=True)
    reference.mkdir(parents=True, exist_ok=True)

    geo_rows, place_rows, bg_rows, bg_places, walk, housing, years, wrluri = [], [], [], [], [], [], [], []
    for d in range(n_docs):
        name = f"Town {chr(65 + d % 26)}{d:02d}"
        muni = name.replace(" ", "_")
        place_id = f"{1000 + d:07d}"
        fbc_share = rng.uniform(0.05, 0.6)
        adopted = rng.choice((None, 1985, 1994, 1999, 2005, 2010, 2015, 2018, 2020))
        published = rng.choice((None, 1983, 1997, 2009))
        mdir = corpus / muni
        mdir.mkdir(exist_ok=True)
        titles = rng.sample(ZONING_TITLES, rng.randint(1, 3))
        for c, title in enumerate(titles):
            header = f"Chapter {10 + c}\n{title}\n"
            body = zoning_text(rng, fbc_share, rng.randint(20, 60), adopted if c == 0 else None, published if c == 0 else None)
            (mdir / f"ch{10 + c:03d}.txt").write_text(header + "\n" + body + "\n", encoding="utf-8")
        other = rng.choice(OTHER_CHAPTERS)
        other_body = " ".join(_sentence(rng, OTHER_VOCAB, rng.randint(8, 14)) for _ in range(6))
        (mdir / "ch002.txt").write_text(f"Chapter 2\n{other}\n\n{other_body}\n", encoding="utf-8")

        state = STATES[d % len(STATES)]
        geo_rows.append((name, "place", place_id))
        if d % 4 == 0:
            geo_rows.append((name, "county_subdivision", f"CS{place_id}"))
        lat, lon = 32.0 + rng.uniform(0, 8), -88.0 + rng.uniform(0, 8)
        place_rows.append({
            "place_id": place_id, "name": name, "state": state, "region": REGION_OF[state],
            "place_type": PLACE_TYPES[d % len(PLACE_TYPES)], "lat": lat, "lon": lon,
            "area_km2": round(rng.uniform(2, 80), 3),
            **{k: round(rng.uniform(5, 60), 3) for k in DEMOGRAPHICS},
        })
        for b in range(3):
            bg = f"{place_id}{b:02d}"
            bg_rows.append((bg, round(lat + rng.uniform(-0.05, 0.05), 6), round(lon + rng.uniform(-0.05, 0.05), 6)))
            bg_places.append((bg, place_id))
            walk.append((bg, rng.randint(1, 20), rng.randint(100, 3000)))
            total = rng.randint(200, 2000)
            housing.append((bg, rng.randint(0, total), total))
            years.append((bg, rng.choice((1925, 1948, 1955, 1972, 1990, 2004))))
        wrluri.append((place_id, round(rng.gauss(0, 1), 4)))
    geo_rows.append(("Orange County", "county", "C059"))

    for r in range(n_reference):
        text = "FORM-BASED CODE\n\n" + zoning_text(rng, 0.9, rng.randint(30, 50), 2008 + r, None)
        (reference / f"fbc_{r:02d}.txt").write_text(text, encoding="utf-8")

    lodes = []
    ids = [b[0] for b in bg_rows]
    for home in ids:
        for _ in range(4):
            lodes.append((home, rng.choice(ids), rng.randint(1, 200)))

    write_table(root / "geo_table.csv", ("name", "geography_type", "geo_id"), geo_rows, meta=[])
    header = list(place_rows[0])
    write_table(root / "places.csv", header, place_rows, meta=[])
    write_table(root / "bg_centroids.csv", ("bg_id", "lat", "lon"), bg_rows, meta=[])
    write_table(root / "bg_places.csv", ("bg_id", "place_id"), bg_places, meta=[])
    write_table(root / "walkscore.csv", ("bg_id", "score", "population"), walk, meta=[])
    write_table(root / "housing.csv", ("bg_id", "mf_units", "total_units"), housing, meta=[])
    write_table(root / "bg_years.csv", ("bg_id", "year"), years, meta=[])
    write_table(root / "lodes.csv", ("home_bg", "work_bg", "jobs"), lodes, meta=[])
    write_table(root / "wrluri.csv", ("place_id", "wrluri"), wrluri, meta=[])

    geometry = root / "geometry"
    for k, pid in enumerate((place_rows[0]["place_id"], place_rows[1]["place_id"])):
        place, _ = grid_city(pid, n_blocks_x=3 + k, n_blocks_y=2, parcels_per_block=4,
                             setbacks=((3.0, 5.0, 8.0) if k == 0 else (2.0, 4.0, 6.0)))
        tagged = []
        for b, bld in enumerate(place.buildings):
            bg = f"{pid}{(b // 12) % 3:02d}"
            h = None if b % 7 == 3 else bld.height
            tagged.append(Building(bld.building_id, bld.ring, h, bg))
        parcels = [Parcel(p.parcel_id, p.ring, p.zoning_district, f"{pid}{(i // 12) % 3:02d}") for i, p in enumerate(place.parcels)]
        write_place(PlaceGeometry(pid, parcels, tagged, place.streets), geometry / pid)

    config = {
        "corpus_dir": "corpus",
        "reference_dir": "reference",
        "geo_table": "geo_table.csv",
        "geometry_dir": "geometry",
        "seed": 7,
        "max_chunk_tokens": 512,
        "embedding": {"kind": "deterministic_local", "dimension": 64},
        "llm": {"kind": "rule_based"},
        "themes": {"topic": "setbacks", "sample_top": 50, "sample_bottom": 50, "composite_size": 10},
        "panel": {
            "places": "places.csv",
            "lodes": "lodes.csv",
            "bg_centroids": "bg_centroids.csv",
            "bg_places": "bg_places.csv",
            "walkscore": "walkscore.csv",
            "housing": "housing.csv",
            "bg_years": "bg_years.csv",
            "wrluri": "wrluri.csv",
        },
    }
    (root / "pipeline.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return root

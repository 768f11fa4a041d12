"""Block-group to place aggregation of commute distance, walkscore, multi-family share and development year."""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
POST_YEAR = 1950


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float, radius: float = EARTH_RADIUS_KM) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * radius * math.asin(min(1.0, math.sqrt(h)))


def commute_by_block_group(
    lodes_rows: Iterable[tuple[str, str, float]],
    bg_centroids: Mapping[str, tuple[float, float]],
) -> dict[str, tuple[float, float]]:
    """Jobs-weighted mean home-to-work distance per home block group, with the job total."""
    num: dict[str, float] = defaultdict(float)
    den: dict[str, float] = defaultdict(float)
    for home, work, jobs in lodes_rows:
        if jobs <= 0:
            continue
        if home not in bg_centroids or work not in bg_centroids:
            log.warning("flow %s -> %s: missing block-group centroid, skipped", home, work)
            continue
        (la1, lo1), (la2, lo2) = bg_centroids[home], bg_centroids[work]
        num[home] += jobs * haversine_km(la1, lo1, la2, lo2)
        den[home] += jobs
    return {bg: (num[bg] / den[bg], den[bg]) for bg in den}


def commute_distance(
    lodes_rows: Iterable[tuple[str, str, float]],
    bg_centroids: Mapping[str, tuple[float, float]],
    bg_to_place: Mapping[str, str],
    keep_bgs: set[str] | None = None,
) -> dict[str, float]:
    """Mean commute (km) per place: block-group means weighted by their total jobs."""
    per_bg = commute_by_block_group(lodes_rows, bg_centroids)
    num: dict[str, float] = defaultdict(float)
    den: dict[str, float] = defaultdict(float)
    for bg, (dist, jobs) in per_bg.items():
        if keep_bgs is not None and bg not in keep_bgs:
            continue
        place = bg_to_place.get(bg)
        if place is None:
            continue
        num[place] += dist * jobs
        den[place] += jobs
    return {p: num[p] / den[p] for p in sorted(den) if den[p] > 0}


def walkscore_place(
    block_scores: Iterable[tuple[str, float, float]],
    bg_to_place: Mapping[str, str],
    keep_bgs: set[str] | None = None,
) -> dict[str, float]:
    """Population-weighted mean walkscore (1-20 scale) per place."""
    num: dict[str, float] = defaultdict(float)
    den: dict[str, float] = defaultdict(float)
    for bg, score, pop in block_scores:
        if not 1 <= score <= 20:
            raise ValueError(f"walkscore {score} for {bg} outside [1, 20]")
        if pop < 0:
            raise ValueError(f"negative population for {bg}")
        if keep_bgs is not None and bg not in keep_bgs:
            continue
        place = bg_to_place.get(bg)
        if place is None:
            continue
        num[place] += score * pop
        den[place] += pop
    return {p: num[p] / den[p] for p in sorted(den) if den[p] > 0}


def mf_share_place(
    housing: Iterable[tuple[str, float, float]],
    bg_to_place: Mapping[str, str],
    keep_bgs: set[str] | None = None,
) -> dict[str, float]:
    """Multi-family units over total units per place, from (bg, mf_units, total_units) rows."""
    mf: dict[str, float] = defaultdict(float)
    total: dict[str, float] = defaultdict(float)
    for bg, mf_units, units in housing:
        if keep_bgs is not None and bg not in keep_bgs:
            continue
        place = bg_to_place.get(bg)
        if place is None:
            continue
        mf[place] += mf_units
        total[place] += units
    return {p: mf[p] / total[p] for p in sorted(total) if total[p] > 0}


def modal_year(years: Sequence[int]) -> int:
    """Most frequent year; ties go to the earliest."""
    if not years:
        raise ValueError("no years")
    counts = Counter(int(y) for y in years)
    top = max(counts.values())
    return min(y for y, c in counts.items() if c == top)


def development_years(records: Iterable[tuple[str, int]]) -> dict[str, int]:
    """Modal construction year per block group from (bg, year) building records."""
    grouped: dict[str, list[int]] = defaultdict(list)
    for bg, year in records:
        grouped[bg].append(int(year))
    return {bg: modal_year(ys) for bg, ys in sorted(grouped.items())}


def post1950_filter(bg_outcomes: Mapping[str, object], development_year: Mapping[str, int], cutoff: int = POST_YEAR) -> dict:
    """Keep block groups developed in or after ``cutoff``; block groups without a year are dropped."""
    return {bg: v for bg, v in bg_outcomes.items() if bg in development_year and development_year[bg] >= cutoff}


def post1950_block_groups(development_year: Mapping[str, int], cutoff: int = POST_YEAR) -> set[str]:
    return {bg for bg, y in development_year.items() if y >= cutoff}

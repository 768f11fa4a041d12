"""Place-level urban-form metrics: street setbacks, setback deviation, FAR and minimum plot size."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .. import stats
from . import geometry as geo

log = logging.getLogger(__name__)

SLIVER_AREA = 1.0
WINSOR_QUANTILE = 0.99


@dataclass
class Parcel:
    parcel_id: str
    ring: np.ndarray
    zoning_district: str | None = None
    bg_id: str | None = None

    def __post_init__(self):
        self.ring = geo.as_ring(self.ring)


@dataclass
class Building:
    building_id: str
    ring: np.ndarray
    height: float | None = None
    bg_id: str | None = None

    def __post_init__(self):
        self.ring = geo.as_ring(self.ring)
        if len(self.ring) < 3:
            raise ValueError(f"building {self.building_id} has fewer than 3 vertices")


@dataclass
class Street:
    segment_id: str
    line: np.ndarray

    def __post_init__(self):
        self.line = geo.as_polyline(self.line)


@dataclass
class PlaceGeometry:
    place_id: str
    parcels: list[Parcel] = field(default_factory=list)
    buildings: list[Building] = field(default_factory=list)
    streets: list[Street] = field(default_factory=list)


@dataclass
class SetbackObservation:
    building_id: str
    street_segment_id: str
    building_setback: float
    plot_setback: float
    deviation: float
    outside_plot: bool = False


@dataclass
class PlaceMorphology:
    place_id: str
    median_setback: float | None
    setback_deviation: float | None
    mean_far: float | None
    log_far: float | None
    min_plot_size: float | None
    log_min_plot_size: float | None
    n_buildings: int = 0
    n_segments: int = 0


class _SegmentGroups:
    """Segments of several polylines or rings stacked together, with the owner index per segment."""

    def __init__(self, parts: Sequence[tuple[np.ndarray, np.ndarray]]):
        self.a = np.concatenate([a for a, _ in parts])
        self.b = np.concatenate([b for _, b in parts])
        self._starts = np.concatenate([[0], np.cumsum([len(a) for a, _ in parts])])
        self.owner = np.repeat(np.arange(len(parts)), np.diff(self._starts))
        self.lo = np.minimum(self.a, self.b)
        self.hi = np.maximum(self.a, self.b)

    def segments_of(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self._starts[k], self._starts[k + 1]
        return self.a[lo:hi], self.b[lo:hi]

    def nearest(self, points: np.ndarray, block: int = 1024) -> np.ndarray:
        """Index of the nearest owner for each point (ties go to the earlier owner).

        Segments whose bounding box is farther than the closest segment
        endpoint cannot win, so exact distances are only computed for the rest.
        """
        out = np.empty(len(points), dtype=int)
        for lo in range(0, len(points), block):
            p = points[lo : lo + block]
            px, py = p[:, 0:1], p[:, 1:2]
            gx = np.maximum(np.maximum(self.lo[:, 0] - px, px - self.hi[:, 0]), 0.0)
            gy = np.maximum(np.maximum(self.lo[:, 1] - py, py - self.hi[:, 1]), 0.0)
            lower = gx * gx + gy * gy
            ex, ey = self.a[:, 0] - px, self.a[:, 1] - py
            upper = (ex * ex + ey * ey).min(axis=1, keepdims=True)
            pi, sj = np.nonzero(lower <= upper * (1 + 1e-9) + 1e-12)
            d = geo.point_segment_distances(p[pi][:, None, :], self.a[sj][:, None, :], self.b[sj][:, None, :])[:, 0, 0]
            order = np.lexsort((self.owner[sj], d, pi))
            first = np.ones(len(order), dtype=bool)
            first[1:] = pi[order][1:] != pi[order][:-1]
            out[lo + pi[order][first]] = self.owner[sj][order][first]
        return out


class _StreetSet(_SegmentGroups):
    def __init__(self, streets: Sequence[Street]):
        if not streets:
            raise ValueError("no streets")
        self.streets = list(streets)
        super().__init__([geo.polyline_segments(s.line) for s in self.streets])

    def nearest_streets(self, points: np.ndarray, block: int = 1024) -> np.ndarray:
        return self.nearest(points, block)


def _facing_distances(rings: np.ndarray, sa: np.ndarray, sb: np.ndarray) -> np.ndarray:
    """Setbacks of G rings (G, n, 2) from their streets, given as (m, 2) or per ring as (G, m, 2)."""
    ea = rings
    eb = np.concatenate((rings[:, 1:], rings[:, :1]), axis=1)
    mids = (ea + eb) / 2.0
    mid_d = geo.point_segment_distances(mids, sa, sb).min(axis=-1)
    j = np.argmin(mid_d, axis=1)
    rows = np.arange(len(rings))
    return geo.edge_sets_distance(ea[rows, j][:, None], eb[rows, j][:, None], sa, sb)


def _ring_distances(rings: np.ndarray, sa: np.ndarray, sb: np.ndarray) -> np.ndarray:
    eb = np.concatenate((rings[:, 1:], rings[:, :1]), axis=1)
    return geo.edge_sets_distance(rings, eb, sa, sb)


def _facing_distance(ring: np.ndarray, sa: np.ndarray, sb: np.ndarray) -> float:
    return float(_facing_distances(ring[None], sa, sb)[0])


def building_setback(building, streets: Sequence[Street]) -> tuple[float, str]:
    """Distance from the street-facing side of a building to its nearest street.

    The nearest street is the polyline closest to the building centroid; the
    facing side is the edge whose midpoint is closest to that street.
    """
    ring = building.ring if isinstance(building, Building) else geo.as_ring(building)
    if len(ring) < 3:
        raise ValueError("building needs at least 3 vertices")
    sset = _StreetSet(streets)
    k = int(sset.nearest_streets(geo.centroid(ring)[None, :])[0])
    sa, sb = sset.segments_of(k)
    return _facing_distance(ring, sa, sb), sset.streets[k].segment_id


def plot_setback(parcel, street: Street | np.ndarray) -> float:
    """Minimum distance from the parcel boundary to the street polyline."""
    ring = parcel.ring if isinstance(parcel, Parcel) else geo.as_ring(parcel)
    line = street.line if isinstance(street, Street) else geo.as_polyline(street)
    return geo.ring_to_polyline_distance(ring, line)


def assign_parcels(buildings: Sequence[Building], parcels: Sequence[Parcel], index: geo.GridIndex | None = None) -> list[int | None]:
    """Parcel index containing each building centroid, or None."""
    if not parcels:
        return [None] * len(buildings)
    index = index or geo.GridIndex([p.ring for p in parcels])
    return [index.containing(geo.centroid(b.ring)) for b in buildings]


_BATCH_ELEMENTS = 1 << 21


def _batched(keys: Sequence[tuple[int, int]], fn) -> None:
    """Group item indices by ``(ring vertices, street segments)`` and call ``fn(indices)`` per bounded batch."""
    groups: dict = defaultdict(list)
    for i, k in enumerate(keys):
        groups[k].append(i)
    for (n, m), idx in sorted(groups.items()):
        step = max(1, _BATCH_ELEMENTS // max(1, n * m * 4))
        for lo in range(0, len(idx), step):
            fn(np.asarray(idx[lo : lo + step]))


def setback_observations(place: PlaceGeometry, owners: Sequence[int | None] | None = None) -> list[SetbackObservation]:
    """Raw per-building observations (before the cleaning rules).

    Buildings with the same vertex count whose streets have the same number
    of segments are processed together, which keeps the work vectorized.
    """
    buildings = place.buildings
    if not buildings:
        return []
    sset = _StreetSet(place.streets)
    centroids = np.array([geo.centroid(b.ring) for b in buildings])
    nearest = sset.nearest_streets(centroids)
    if owners is None:
        owners = assign_parcels(buildings, place.parcels)
    owners = list(owners)
    outside = [pi is None for pi in owners]
    if place.parcels and any(outside):
        lost = [i for i, o in enumerate(outside) if o]
        pset = _SegmentGroups([geo.ring_edges(p.ring) for p in place.parcels])
        for i, pi in zip(lost, pset.nearest(centroids[lost])):
            owners[i] = int(pi)
    street_segs = [sset.segments_of(k) for k in range(len(sset.streets))]

    def stacked_streets(ks):
        return np.stack([street_segs[k][0] for k in ks]), np.stack([street_segs[k][1] for k in ks])

    bset = np.empty(len(buildings))

    def facing(idx):
        sa, sb = stacked_streets(nearest[idx])
        bset[idx] = _facing_distances(np.stack([buildings[i].ring for i in idx]), sa, sb)

    _batched([(len(b.ring), len(street_segs[k][0])) for b, k in zip(buildings, nearest)], facing)

    pairs = sorted({(owners[i], int(nearest[i])) for i in range(len(buildings)) if owners[i] is not None})
    pair_d = np.empty(len(pairs))

    def plots(idx):
        sa, sb = stacked_streets([pairs[i][1] for i in idx])
        pair_d[idx] = _ring_distances(np.stack([place.parcels[pairs[i][0]].ring for i in idx]), sa, sb)

    _batched([(len(place.parcels[pi].ring), len(street_segs[k][0])) for pi, k in pairs], plots)
    pair_distance = dict(zip(pairs, pair_d.tolist()))
    plot = [pair_distance[(o, int(k))] if o is not None else 0.0 for o, k in zip(owners, nearest)]

    return [
        SetbackObservation(b.building_id, sset.streets[int(k)].segment_id, float(bs), float(ps), float(bs - ps), out)
        for b, k, bs, ps, out in zip(buildings, nearest, bset, plot, outside)
    ]


def clean_rules(observations: Sequence[SetbackObservation], quantile: float = WINSOR_QUANTILE) -> list[SetbackObservation]:
    """Zero the setback of buildings outside their plot, then cap deviations at the 99th percentile."""
    fixed = []
    for o in observations:
        if o.outside_plot:
            o = replace(o, building_setback=0.0, deviation=0.0 - o.plot_setback)
        fixed.append(o)
    if not fixed:
        return fixed
    capped = stats.winsorize_upper([o.deviation for o in fixed], quantile)
    return [replace(o, deviation=float(d)) for o, d in zip(fixed, capped)]


def aggregate_setbacks(observations: Sequence[SetbackObservation], clean: bool = True) -> tuple[float, float]:
    """Mean per street segment, then the median of those segment means across the place."""
    if not observations:
        raise ValueError("no setback observations")
    obs = clean_rules(observations) if clean else list(observations)
    by_segment: dict[str, list[SetbackObservation]] = defaultdict(list)
    for o in obs:
        by_segment[o.street_segment_id].append(o)
    seg_ids = sorted(by_segment)
    setbacks = [math.fsum(o.building_setback for o in by_segment[s]) / len(by_segment[s]) for s in seg_ids]
    deviations = [math.fsum(o.deviation for o in by_segment[s]) / len(by_segment[s]) for s in seg_ids]
    return stats.median(setbacks), stats.median(deviations)


def _valid_height(h) -> bool:
    return h is not None and isinstance(h, (int, float)) and math.isfinite(h) and h > 0


def building_fars(
    buildings: Sequence[Building], parcels: Sequence[Parcel], height_per_floor: float | None = None,
    owners: Sequence[int | None] | None = None,
) -> dict[str, float]:
    """FAR per building: footprint area x height over the area of the parcel holding its centroid.

    Missing or invalid heights take the mean valid height of buildings in the
    same zoning district, else the place mean; otherwise the building is dropped.
    ``height_per_floor`` converts metres to floors when given.
    """
    if owners is None:
        owners = assign_parcels(buildings, parcels)
    parcel_area = {}
    joined = []
    for b, pi in zip(buildings, owners):
        if pi is None:
            log.warning("building %s: centroid in no parcel, excluded from FAR", b.building_id)
            continue
        if pi not in parcel_area:
            parcel_area[pi] = geo.area(parcels[pi].ring)
        if parcel_area[pi] <= 0:
            log.warning("building %s: parcel %s has no area", b.building_id, parcels[pi].parcel_id)
            continue
        joined.append((b, parcels[pi], parcel_area[pi]))
    district_heights: dict[str | None, list[float]] = defaultdict(list)
    all_heights = []
    for b, p, _ in joined:
        if _valid_height(b.height):
            district_heights[p.zoning_district].append(float(b.height))
            all_heights.append(float(b.height))
    place_mean = math.fsum(all_heights) / len(all_heights) if all_heights else None
    fars = {}
    for b, p, p_area in joined:
        h = b.height
        if not _valid_height(h):
            pool = district_heights.get(p.zoning_district) if p.zoning_district is not None else None
            if pool:
                h = math.fsum(pool) / len(pool)
            elif place_mean is not None:
                h = place_mean
            else:
                log.warning("building %s: no height available, dropped", b.building_id)
                continue
        if height_per_floor:
            h = h / height_per_floor
        fars[b.building_id] = geo.area(b.ring) * h / p_area
    return fars


def compute_far(buildings: Sequence[Building], parcels: Sequence[Parcel], height_per_floor: float | None = None,
                owners: Sequence[int | None] | None = None) -> float | None:
    fars = building_fars(buildings, parcels, height_per_floor, owners)
    if not fars:
        return None
    return math.fsum(fars.values()) / len(fars)


def min_plot_size(parcels: Sequence[Parcel], sliver: float = SLIVER_AREA) -> float:
    """Smallest parcel area, ignoring slivers of at most ``sliver`` square metres."""
    if not parcels:
        raise ValueError("no parcels")
    areas = [geo.area(p.ring) for p in parcels]
    kept = [a for a in areas if a > sliver]
    if not kept:
        raise ValueError("all parcels are slivers")
    return min(kept)


def _log(x: float | None) -> float | None:
    if x is None or x <= 0:
        return None
    return math.log(x)


def place_morphology(place: PlaceGeometry, height_per_floor: float | None = None) -> PlaceMorphology:
    med = dev = None
    owners = assign_parcels(place.buildings, place.parcels)
    obs = setback_observations(place, owners) if place.streets else []
    if obs:
        med, dev = aggregate_setbacks(obs)
    far = compute_far(place.buildings, place.parcels, height_per_floor, owners) if place.parcels else None
    try:
        mps = min_plot_size(place.parcels)
    except ValueError:
        mps = None
    return PlaceMorphology(
        place.place_id,
        med,
        dev,
        far,
        _log(far),
        mps,
        _log(mps),
        n_buildings=len(place.buildings),
        n_segments=len({o.street_segment_id for o in obs}),
    )


def restrict_to_block_groups(place: PlaceGeometry, keep: set[str]) -> PlaceGeometry:
    """Sub-geometry with only the buildings and parcels tagged with a retained block group."""
    return PlaceGeometry(
        place.place_id,
        [p for p in place.parcels if p.bg_id in keep],
        [b for b in place.buildings if b.bg_id in keep],
        place.streets,
    )

"""GeoJSON layer readers for one place: ``parcels.geojson``, ``buildings.geojson``, ``streets.geojson``."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from ..io import parse_float
from . import geometry as geo
from .metrics import Building, Parcel, PlaceGeometry, Street

log = logging.getLogger(__name__)

LAYERS = ("parcels", "buildings", "streets")


def _features(path: Path) -> list[dict]:
    if not path.exists():
        return []
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("type") != "FeatureCollection":
        raise ValueError(f"{path}: expected a FeatureCollection")
    return data.get("features", [])


def _outer_rings(geom: dict) -> list:
    if geom["type"] == "Polygon":
        return [geom["coordinates"][0]]
    if geom["type"] == "MultiPolygon":
        return [poly[0] for poly in geom["coordinates"]]
    raise ValueError(f"unsupported polygon geometry {geom['type']}")


def _largest_ring(geom: dict):
    rings = [geo.as_ring(r) for r in _outer_rings(geom)]
    if len(rings) > 1:
        log.warning("multipolygon reduced to its largest part")
    return max(rings, key=geo.area)


def _lines(geom: dict) -> list:
    if geom["type"] == "LineString":
        return [geom["coordinates"]]
    if geom["type"] == "MultiLineString":
        return list(geom["coordinates"])
    raise ValueError(f"unsupported street geometry {geom['type']}")


def _str(value) -> str | None:
    return None if value is None or value == "" else str(value)


def read_place(place_dir: str | Path, place_id: str | None = None) -> PlaceGeometry:
    place_dir = Path(place_dir)
    pid = place_id or place_dir.name
    parcels = []
    for i, f in enumerate(_features(place_dir / "parcels.geojson")):
        props = f.get("properties") or {}
        parcels.append(
            Parcel(_str(props.get("parcel_id")) or f"p{i}", _largest_ring(f["geometry"]),
                   _str(props.get("zoning_district")), _str(props.get("bg_id")))
        )
    buildings = []
    for i, f in enumerate(_features(place_dir / "buildings.geojson")):
        props = f.get("properties") or {}
        h = props.get("height_m")
        h = parse_float(h) if isinstance(h, str) else (float(h) if h is not None else None)
        buildings.append(
            Building(_str(props.get("building_id")) or f"b{i}", _largest_ring(f["geometry"]), h, _str(props.get("bg_id")))
        )
    streets = []
    for i, f in enumerate(_features(place_dir / "streets.geojson")):
        props = f.get("properties") or {}
        seg = _str(props.get("segment_id")) or f"s{i}"
        for j, line in enumerate(_lines(f["geometry"])):
            # Parts of a multi-line keep the segment id so they aggregate together.
            streets.append(Street(seg, line))
    return PlaceGeometry(pid, parcels, buildings, streets)


def place_dirs(root: str | Path) -> list[Path]:
    """``root`` itself if it holds layer files, else its subdirectories that do."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"geometry directory not found: {root}")
    if any((root / f"{layer}.geojson").exists() for layer in LAYERS):
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and any((p / f"{l}.geojson").exists() for l in LAYERS))


def _feature_collection(features: list[dict]) -> dict:
    return {"type": "FeatureCollection", "features": features}


def write_place(place: PlaceGeometry, place_dir: str | Path) -> Path:
    place_dir = Path(place_dir)
    place_dir.mkdir(parents=True, exist_ok=True)

    def poly(ring):
        coords = [list(map(float, v)) for v in ring]
        return {"type": "Polygon", "coordinates": [coords + [coords[0]]]}

    layers = {
        "parcels": [
            {"type": "Feature", "geometry": poly(p.ring),
             "properties": {"parcel_id": p.parcel_id, "zoning_district": p.zoning_district, "bg_id": p.bg_id}}
            for p in place.parcels
        ],
        "buildings": [
            {"type": "Feature", "geometry": poly(b.ring),
             "properties": {"building_id": b.building_id, "height_m": b.height, "bg_id": b.bg_id}}
            for b in place.buildings
        ],
        "streets": [
            {"type": "Feature", "geometry": {"type": "LineString", "coordinates": [list(map(float, v)) for v in s.line]},
             "properties": {"segment_id": s.segment_id}}
            for s in place.streets
        ],
    }
    for name, feats in layers.items():
        (place_dir / f"{name}.geojson").write_text(json.dumps(_feature_collection(feats), sort_keys=True), encoding="utf-8")
    return place_dir

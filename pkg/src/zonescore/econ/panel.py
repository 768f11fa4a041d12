"""The place panel (one row per census place) and the grouped summary-statistics table."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..io import read_table, write_table
from .regression import OUTCOMES, POST_SUFFIX, _number

PLACE_TYPES = ("borough", "city", "town", "village")
ID_COLUMNS = ("place_id", "state", "region", "place_type", "vintage_bucket")
GEO_COLUMNS = ("lat", "lon", "log_area_km2")
FBC_COLUMNS = ("similarity", "log_similarity", "high_fbc")
DEMOGRAPHICS = (
    "log_population",
    "median_income",
    "pct_college",
    "pct_foreign_born",
    "pct_over_65",
    "pct_owner_occupied",
    "pct_white",
    "unemployment_rate",
)
PANEL_HEADER = (
    *ID_COLUMNS,
    *GEO_COLUMNS,
    *FBC_COLUMNS,
    *OUTCOMES,
    *(o + POST_SUFFIX for o in OUTCOMES),
    *DEMOGRAPHICS,
)
SUMMARY_GROUPS = ("all", "high_fbc", "low_fbc")


@dataclass
class PlacePanel:
    rows: list[dict] = field(default_factory=list)

    def __post_init__(self):
        ids = [r["place_id"] for r in self.rows]
        if len(set(ids)) != len(ids):
            raise ValueError("panel place_ids are not unique")
        for r in self.rows:
            pt = r.get("place_type")
            if pt not in (None, "") and pt not in PLACE_TYPES:
                raise ValueError(f"{r['place_id']}: place_type {pt!r} not in {PLACE_TYPES}")

    @property
    def place_ids(self) -> list[str]:
        return [r["place_id"] for r in self.rows]

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]

    @classmethod
    def from_csv(cls, path: str | Path) -> "PlacePanel":
        rows = []
        for r in read_table(path):
            row = {}
            for k, v in r.items():
                row[k] = v if k in ID_COLUMNS else _number(v)
            rows.append(row)
        return cls(rows)

    def to_csv(self, path: str | Path, meta: Sequence[str] | None = None) -> Path:
        extra = sorted({k for r in self.rows for k in r} - set(PANEL_HEADER))
        header = [*PANEL_HEADER, *extra]
        return write_table(path, header, sorted(self.rows, key=lambda r: r["place_id"]), meta)


@dataclass
class SummaryStat:
    variable: str
    group: str
    n: int
    mean: float | None
    std: float | None


def summary_stats(
    panel: PlacePanel, high_fbc: Mapping[str, bool], variables: Iterable[str] = DEMOGRAPHICS
) -> list[SummaryStat]:
    """Mean and sample std-dev per variable for all places, high-FBC places and low-FBC places.

    Only places that carry a classification are counted, so the high and low
    groups partition the full sample.
    """
    rows = [r for r in panel.rows if r["place_id"] in high_fbc]
    groups = {
        "all": rows,
        "high_fbc": [r for r in rows if high_fbc[r["place_id"]]],
        "low_fbc": [r for r in rows if not high_fbc[r["place_id"]]],
    }
    out = []
    for var in variables:
        if not any(var in r for r in panel.rows):
            continue
        for g in SUMMARY_GROUPS:
            vals = np.array([v for v in (_number(r.get(var)) for r in groups[g]) if v is not None])
            if vals.size == 0:
                out.append(SummaryStat(var, g, 0, None, None))
                continue
            std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            out.append(SummaryStat(var, g, int(vals.size), float(vals.mean()), std))
    return out


SUMMARY_HEADER = ("variable", *(f"{g}_{s}" for g in SUMMARY_GROUPS for s in ("n", "mean", "std")))


def summary_rows(stats: Sequence[SummaryStat]) -> list[list]:
    by_var: dict[str, dict[str, SummaryStat]] = {}
    for s in stats:
        by_var.setdefault(s.variable, {})[s.group] = s
    rows = []
    for var, groups in by_var.items():
        row = [var]
        for g in SUMMARY_GROUPS:
            s = groups[g]
            row += [s.n, s.mean, s.std]
        rows.append(row)
    return rows

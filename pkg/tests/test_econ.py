import math

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, strategies as st

from zonescore.econ import outcomes as oc
from zonescore.econ import regression as rg
from zonescore.econ.panel import SUMMARY_HEADER, PlacePanel, summary_rows, summary_stats
from zonescore.fixture import synthetic_panel


# ---- outcomes


def _great_circle_oracle(lat1, lon1, lat2, lon2, r=6371.0088):
    """Angle between unit vectors via atan2(|u x v|, u . v)."""

    def unit(lat, lon):
        la, lo = math.radians(lat), math.radians(lon)
        return np.array([math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo), math.sin(la)])

    u, v = unit(lat1, lon1), unit(lat2, lon2)
    return r * math.atan2(np.linalg.norm(np.cross(u, v)), float(u @ v))


def test_haversine_one_degree():
    assert oc.haversine_km(0, 0, 1, 0) == pytest.approx(111.195, abs=5e-4)
    assert oc.haversine_km(0, 0, 1, 0) == pytest.approx(6371.0088 * math.pi / 180, abs=1e-9)
    assert oc.haversine_km(40.1, -75.2, 40.1, -75.2) == 0.0


coords = st.tuples(st.floats(-89, 89), st.floats(-180, 180))


@given(coords, coords)
def test_haversine_matches_vector_oracle_and_is_symmetric(a, b):
    d = oc.haversine_km(*a, *b)
    assert d == pytest.approx(_great_circle_oracle(*a, *b), abs=1e-6)
    assert d == oc.haversine_km(*b, *a)
    assert d >= 0


@given(coords, coords, coords)
def test_haversine_triangle_inequality(a, b, c):
    assert oc.haversine_km(*a, *c) <= oc.haversine_km(*a, *b) + oc.haversine_km(*b, *c) + 1e-6


def test_commute_weighted_mean():
    # home bg H sends 1 job 10 km away and 3 jobs 20 km away along the equator
    km = 6371.0088 * math.pi / 180
    cents = {"H": (0.0, 0.0), "W1": (0.0, 10 / km), "W2": (0.0, 20 / km)}
    out = oc.commute_distance([("H", "W1", 1), ("H", "W2", 3)], cents, {"H": "P"})
    assert out["P"] == pytest.approx(17.5, abs=1e-9)


def test_commute_home_equals_work_and_zero_jobs():
    cents = {"A": (10.0, 10.0), "B": (11.0, 10.0)}
    assert oc.commute_distance([("A", "A", 5)], cents, {"A": "P"}) == {"P": 0.0}
    assert oc.commute_distance([("A", "B", 0)], cents, {"A": "P"}) == {}


def test_commute_place_weights_block_groups_by_jobs():
    km = 6371.0088 * math.pi / 180
    cents = {"A": (0.0, 0.0), "B": (0.0, 0.0), "X": (0.0, 10 / km), "Y": (0.0, 40 / km)}
    out = oc.commute_distance([("A", "X", 3), ("B", "Y", 1)], cents, {"A": "P", "B": "P"})
    assert out["P"] == pytest.approx((3 * 10 + 40) / 4)


def test_walkscore_weighted():
    assert oc.walkscore_place([("a", 10, 100), ("b", 20, 100)], {"a": "P", "b": "P"}) == {"P": 15.0}
    assert oc.walkscore_place([("a", 7, 30)], {"a": "P"}) == {"P": 7.0}
    assert oc.walkscore_place([("a", 7, 0)], {"a": "P"}) == {}
    with pytest.raises(ValueError):
        oc.walkscore_place([("a", 25, 1)], {"a": "P"})


@given(st.lists(st.tuples(st.floats(1, 20), st.floats(0.1, 1e4)), min_size=1, max_size=20))
def test_weighted_mean_bounded(rows):
    out = oc.walkscore_place([(str(i), s, p) for i, (s, p) in enumerate(rows)], {str(i): "P" for i in range(len(rows))})
    scores = [s for s, _ in rows]
    assert min(scores) - 1e-9 <= out["P"] <= max(scores) + 1e-9


def test_mf_share():
    assert oc.mf_share_place([("a", 10, 40), ("b", 30, 60)], {"a": "P", "b": "P"}) == {"P": 0.4}


def test_modal_year_rules():
    assert oc.modal_year([1951, 1951, 1990]) == 1951
    assert oc.modal_year([1990, 1960]) == 1960
    with pytest.raises(ValueError):
        oc.modal_year([])


def test_post1950_filter():
    years = oc.development_years([("a", 1940), ("b", 1960), ("b", 1960), ("b", 1930)])
    assert years == {"a": 1940, "b": 1960}
    assert oc.post1950_filter({"a": 1.0, "b": 2.0, "c": 3.0}, years) == {"b": 2.0}
    assert oc.post1950_filter({"a": 1.0}, {"a": 1940}) == {}
    keep = oc.post1950_block_groups(years)
    assert oc.walkscore_place([("a", 5, 10), ("b", 15, 10)], {"a": "P", "b": "P"}, keep) == {"P": 15.0}
    assert oc.walkscore_place([("a", 5, 10)], {"a": "P"}, keep) == {}


# ---- OLS


def test_noise_free_line():
    x = np.arange(10.0)
    rows = [{"place_id": str(i), "y": 2 * v + 1, "x": v} for i, v in enumerate(x)]
    y, X, cols, _ = rg.design_matrix(rows, "y", "x")
    coef, se, resid, fitted, r2 = rg.ols(y, X, cols)
    assert abs(coef[1] - 2.0) < 1e-12 and abs(coef[0] - 1.0) < 1e-12 and r2 == 1.0
    assert np.max(np.abs(resid)) < 1e-12


def grouped_rows(seed, n=300, groups=7):
    rng = np.random.default_rng(seed)
    offsets = rng.normal(0, 3, groups)
    rows = []
    for i in range(n):
        g = int(rng.integers(groups))
        x = rng.normal(g * 0.3, 1)
        rows.append({"place_id": f"p{i}", "state": f"S{g}", "x": x, "lat": rng.normal(),
                     "y": 1.3 * x + offsets[g] + rng.normal(0, 0.5)})
    return rows


@pytest.mark.parametrize("seed", range(5))
def test_frisch_waugh_dummies_vs_demeaning(seed):
    rows = grouped_rows(seed)
    y, X, cols, _ = rg.design_matrix(rows, "y", "x", categorical=("state",))
    beta = rg.ols(y, X, cols)[0][1]
    g = np.array([r["state"] for r in rows])
    xs = np.array([r["x"] for r in rows])
    ys = np.array([r["y"] for r in rows])
    xd, yd = xs.copy(), ys.copy()
    for level in np.unique(g):
        m = g == level
        xd[m] -= xs[m].mean()
        yd[m] -= ys[m].mean()
    assert abs(beta - (xd @ yd) / (xd @ xd)) < 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_hc1_matches_statsmodels(seed):
    rows = grouped_rows(seed)
    for r in rows:
        r["y"] += abs(r["x"]) * np.random.default_rng(seed).normal()
    y, X, cols, _ = rg.design_matrix(rows, "y", "x", numeric=("lat",), categorical=("state",))
    coef, se, *_ = rg.ols(y, X, cols, "HC1")
    ref = sm.OLS(y, X).fit(cov_type="HC1")
    assert np.allclose(coef, ref.params, atol=1e-10)
    assert np.allclose(se, ref.bse, atol=1e-10)
    classical = rg.ols(y, X, cols, "classical")[1]
    assert np.allclose(classical, sm.OLS(y, X).fit().bse, atol=1e-10)


def test_residuals_orthogonal_and_fit_identity():
    rows = synthetic_panel(400, seed=3)
    res = rg.fit_ols(rows, rg.RegressionSpec("median_setback", "high20", "IV"))
    y, X, *_ = rg.design_matrix(rows, "median_setback", "high_fbc", ("lat", "lon", "log_area_km2"),
                                ("state", "place_type", "vintage_bucket"))
    assert np.max(np.abs(X.T @ res.residuals)) <= 1e-6 * np.linalg.norm(y) * np.linalg.norm(X)
    assert np.allclose(res.fitted + res.residuals, y, rtol=0, atol=1e-12)
    assert res.n_obs <= len(rows) and 0 <= res.r_squared <= 1


def test_r2_invariant_to_rescaling_and_beta_to_outcome_shift():
    rows = synthetic_panel(300, seed=4)
    spec = rg.RegressionSpec("log_far", "continuous", "II")
    base = rg.fit_ols(rows, spec)
    scaled = [dict(r, lat=3 * r["lat"] - 7) for r in rows]
    shifted = [dict(r, log_far=r["log_far"] + 100) for r in rows]
    assert abs(rg.fit_ols(scaled, spec).r_squared - base.r_squared) < 1e-10
    assert abs(rg.fit_ols(shifted, spec).beta - base.beta) < 1e-8


def test_r2_non_decreasing_across_nested_specs():
    rows = [r for r in synthetic_panel(600, seed=9)]
    r2 = [rg.fit_ols(rows, rg.RegressionSpec("walkscore", "high20", s)).r_squared for s in ("I", "II", "III", "IV")]
    assert all(b >= a - 1e-12 for a, b in zip(r2, r2[1:]))


def test_listwise_deletion_and_missing_vintage_level():
    rows = synthetic_panel(200, seed=1)
    rows[0]["median_setback"] = None
    rows[1]["lat"] = float("nan")
    rows[2]["vintage_bucket"] = ""
    res = rg.fit_ols(rows, rg.RegressionSpec("median_setback", "high20", "IV"))
    assert res.n_obs == 198 and "P00000" not in res.place_ids and "P00001" not in res.place_ids
    assert "P00002" in res.place_ids and "vintage_bucket[missing]" in res.columns


def test_rank_deficiency_names_columns():
    rows = [{"place_id": str(i), "y": float(i), "x": float(i % 3), "lat": 2.0 * (i % 3), "lon": float(i % 5), "state": "A"} for i in range(30)]
    with pytest.raises(rg.RankDeficient) as info:
        y, X, cols, _ = rg.design_matrix(rows, "y", "x", numeric=("lat", "lon"))
        rg.ols(y, X, cols)
    assert "lat" in info.value.columns


def test_spec_v_uses_post1950_outcome():
    spec = rg.RegressionSpec("walkscore", "high20", "V")
    assert spec.outcome_column == "walkscore_post1950"
    rows = synthetic_panel(300, seed=2)
    res = rg.fit_ols(rows, spec)
    assert res.n_obs == sum(r["walkscore_post1950"] is not None for r in rows)


def test_spec_controls_nested():
    sets = [set(rg.RegressionSpec("walkscore", "high20", s).numeric_controls) | set(rg.RegressionSpec("walkscore", "high20", s).categorical_controls)
            for s in ("I", "II", "III", "IV")]
    assert all(a < b for a, b in zip(sets, sets[1:]))


def test_bad_spec_values():
    with pytest.raises(ValueError):
        rg.RegressionSpec("walkscore", "other")
    with pytest.raises(ValueError):
        rg.RegressionSpec("walkscore", "high20", "VI")


def test_suite_has_35_rows_and_reports_failures():
    rows = synthetic_panel(500, seed=6)
    for r in rows:
        r["mf_share"] = None
        r["mf_share_post1950"] = None
    cells = rg.run_suite(rows, "continuous")
    out = rg.suite_rows(cells)
    assert len(out) == 35 and len(out[0]) == len(rg.RESULT_HEADER)
    failed = [r for r in out if r[-1] != "ok"]
    assert len(failed) == 5 and all(r[1] == "mf_share" for r in failed)


def test_residual_hash_is_stable():
    rows = synthetic_panel(200, seed=7)
    spec = rg.RegressionSpec("log_commute")
    assert rg.fit_ols(rows, spec).residual_hash == rg.fit_ols(rows, spec).residual_hash


# ---- panel and summary


def test_summary_partition_and_constant_column():
    rows = synthetic_panel(100, seed=5)
    for r in rows:
        r["pct_white"] = 0.5
    panel = PlacePanel(rows)
    high = {r["place_id"]: bool(r["high_fbc"]) for r in rows}
    stats = summary_stats(panel, high)
    by = {(s.variable, s.group): s for s in stats}
    for var in {s.variable for s in stats}:
        assert by[(var, "high_fbc")].n + by[(var, "low_fbc")].n == by[(var, "all")].n
    assert by[("pct_white", "all")].std == 0.0
    vals = np.array([r["median_income"] for r in rows])
    assert by[("median_income", "all")].mean == pytest.approx(vals.mean())
    assert by[("median_income", "all")].std == pytest.approx(vals.std(ddof=1))
    table = summary_rows(stats)
    assert len(table[0]) == len(SUMMARY_HEADER) == 10


def test_panel_round_trip(tmp_path):
    rows = synthetic_panel(20, seed=8)
    path = PlacePanel(rows).to_csv(tmp_path / "panel.csv", ["seed: 8"])
    back = PlacePanel.from_csv(path)
    assert back.place_ids == sorted(r["place_id"] for r in rows)
    a = {r["place_id"]: r for r in rows}
    for r in back.rows:
        assert r["state"] == a[r["place_id"]]["state"]
        assert r["walkscore"] == pytest.approx(a[r["place_id"]]["walkscore"], rel=1e-9)
        assert (r["walkscore_post1950"] is None) == (a[r["place_id"]]["walkscore_post1950"] is None)


def test_panel_rejects_duplicates_and_bad_place_type():
    with pytest.raises(ValueError):
        PlacePanel([{"place_id": "a"}, {"place_id": "a"}])
    with pytest.raises(ValueError):
        PlacePanel([{"place_id": "a", "place_type": "hamlet"}])

"""Place-level OLS of urban-form outcomes on FBC similarity with state and vintage fixed effects.

Categorical controls are expanded into explicit dummies with the
lexicographically smallest level of the estimation sample as reference.
Standard errors default to HC1 (heteroskedasticity-robust with the
``n / (n - k)`` correction); ``se_type="classical"`` gives the homoskedastic ones.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

OUTCOMES = (
    "median_setback",
    "setback_deviation",
    "log_far",
    "log_min_plot",
    "walkscore",
    "log_commute",
    "mf_share",
)
POST_SUFFIX = "_post1950"
FBC_COLUMNS = {"continuous": "log_similarity", "high20": "high_fbc"}
SPECIFICATIONS = ("I", "II", "III", "IV", "V")

# (numeric controls, categorical controls); V reuses IV on post-1950 outcomes.
_CONTROLS = {
    "I": (("lat", "lon"), ("state",)),
    "II": (("lat", "lon", "log_area_km2"), ("state",)),
    "III": (("lat", "lon", "log_area_km2"), ("state", "place_type")),
    "IV": (("lat", "lon", "log_area_km2"), ("state", "place_type", "vintage_bucket")),
}
_CONTROLS["V"] = _CONTROLS["IV"]
MISSING_LEVEL = {"vintage_bucket": "missing"}


class RankDeficient(ValueError):
    def __init__(self, columns: Sequence[str]):
        super().__init__(f"design matrix is rank deficient; collinear columns: {', '.join(columns)}")
        self.columns = list(columns)


@dataclass(frozen=True)
class RegressionSpec:
    outcome: str
    fbc_form: str = "high20"
    specification: str = "IV"

    def __post_init__(self):
        if self.fbc_form not in FBC_COLUMNS:
            raise ValueError(f"unknown fbc_form {self.fbc_form!r}")
        if self.specification not in SPECIFICATIONS:
            raise ValueError(f"unknown specification {self.specification!r}")

    @property
    def outcome_column(self) -> str:
        return self.outcome + POST_SUFFIX if self.specification == "V" else self.outcome

    @property
    def fbc_column(self) -> str:
        return FBC_COLUMNS[self.fbc_form]

    @property
    def numeric_controls(self) -> tuple[str, ...]:
        return _CONTROLS[self.specification][0]

    @property
    def categorical_controls(self) -> tuple[str, ...]:
        return _CONTROLS[self.specification][1]


@dataclass
class RegressionResult:
    spec: RegressionSpec
    beta: float
    se: float
    n_obs: int
    r_squared: float
    columns: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    residuals: np.ndarray = field(repr=False)
    fitted: np.ndarray = field(repr=False)
    place_ids: list[str] = field(default_factory=list, repr=False)
    se_type: str = "HC1"

    @property
    def residual_hash(self) -> str:
        # Fixed decimals keep the hash stable against last-bit BLAS differences.
        text = ",".join(format(round(float(r), 8) + 0.0, ".8f") for r in self.residuals)
        return hashlib.sha256(text.encode()).hexdigest()

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.columns.index(name)])


def _number(value) -> float | None:
    if value is None:
        return None
    if isinstance(value, bool):
        return float(value)
    if isinstance(value, (int, float)):
        return None if math.isnan(value) else float(value)
    text = str(value).strip()
    if text == "":
        return None
    lowered = text.lower()
    if lowered in {"true", "false"}:
        return 1.0 if lowered == "true" else 0.0
    if lowered in {"na", "nan", "none"}:
        return None
    v = float(text)
    return None if math.isnan(v) else v


def _category(value, column: str) -> str | None:
    if value is None or (isinstance(value, float) and math.isnan(value)) or str(value).strip() == "":
        return MISSING_LEVEL.get(column)
    return str(value).strip()


def design_matrix(
    rows: Sequence[Mapping], outcome: str, regressor: str, numeric: Sequence[str] = (), categorical: Sequence[str] = ()
) -> tuple[np.ndarray, np.ndarray, list[str], list[str]]:
    """``(y, X, column names, place ids)`` after listwise deletion; X starts with the intercept and the regressor."""
    kept = []
    for r in rows:
        y = _number(r.get(outcome))
        x = _number(r.get(regressor))
        nums = [_number(r.get(c)) for c in numeric]
        cats = [_category(r.get(c), c) for c in categorical]
        if y is None or x is None or any(v is None for v in nums) or any(c is None for c in cats):
            continue
        kept.append((str(r.get("place_id", len(kept))), y, x, nums, cats))
    columns = ["const", regressor, *numeric]
    levels = []
    for j, c in enumerate(categorical):
        lv = sorted({k[4][j] for k in kept})
        levels.append(lv)
        columns.extend(f"{c}[{level}]" for level in lv[1:])
    n = len(kept)
    X = np.zeros((n, len(columns)))
    y = np.zeros(n)
    ids = []
    for i, (pid, yi, xi, nums, cats) in enumerate(kept):
        ids.append(pid)
        y[i] = yi
        X[i, 0] = 1.0
        X[i, 1] = xi
        X[i, 2 : 2 + len(nums)] = nums
        col = 2 + len(nums)
        for j, lv in enumerate(levels):
            pos = lv.index(cats[j])
            if pos > 0:
                X[i, col + pos - 1] = 1.0
            col += len(lv) - 1
    return y, X, columns, ids


def collinear_columns(X: np.ndarray, columns: Sequence[str], tol: float = 1e-10) -> list[str]:
    """Columns that are (numerically) linear combinations of the columns before them."""
    bad = []
    basis = np.zeros((X.shape[0], 0))
    for j, name in enumerate(columns):
        v = X[:, j]
        norm = np.linalg.norm(v)
        if norm == 0:
            bad.append(name)
            continue
        if basis.shape[1]:
            coef, *_ = np.linalg.lstsq(basis, v, rcond=None)
            resid = v - basis @ coef
        else:
            resid = v
        if np.linalg.norm(resid) <= tol * max(norm, 1.0) * math.sqrt(X.shape[0]):
            bad.append(name)
        else:
            basis = np.column_stack([basis, v])
    return bad


def ols(y: np.ndarray, X: np.ndarray, columns: Sequence[str], se_type: str = "HC1", tol: float = 1e-10):
    """Solve by Householder QR; returns (coef, se, residuals, fitted, r2)."""
    n, k = X.shape
    if n <= k:
        raise ValueError(f"not enough observations: n={n}, k={k}")
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    Q, R = np.linalg.qr(X / scale)
    diag = np.abs(np.diag(R))
    if diag.min() <= tol * diag.max():
        raise RankDeficient(collinear_columns(X, columns) or [columns[int(np.argmin(diag))]])
    coef_scaled = np.linalg.solve(R, Q.T @ y)
    coef = coef_scaled / scale
    fitted = X @ coef
    resid = y - fitted
    Rinv = np.linalg.solve(R, np.eye(k))
    bread = (Rinv @ Rinv.T) / np.outer(scale, scale)
    if se_type == "HC1":
        Xe = X * resid[:, None]
        meat = Xe.T @ Xe
        cov = bread @ meat @ bread * (n / (n - k))
    elif se_type == "classical":
        cov = bread * float(resid @ resid) / (n - k)
    else:
        raise ValueError(f"unknown se_type {se_type!r}")
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    yc = y - y.mean()
    sst = float(yc @ yc)
    r2 = 0.0 if sst == 0 else float(np.clip(1.0 - float(resid @ resid) / sst, 0.0, 1.0))
    return coef, se, resid, fitted, r2


def fit_ols(panel, spec: RegressionSpec, se_type: str = "HC1") -> RegressionResult:
    rows = panel.rows if hasattr(panel, "rows") else panel
    y, X, columns, ids = design_matrix(
        rows, spec.outcome_column, spec.fbc_column, spec.numeric_controls, spec.categorical_controls
    )
    coef, se, resid, fitted, r2 = ols(y, X, columns, se_type)
    return RegressionResult(spec, float(coef[1]), float(se[1]), len(y), r2, columns, coef, se, resid, fitted, ids, se_type)


@dataclass
class SuiteCell:
    spec: RegressionSpec
    result: RegressionResult | None
    error: str | None = None


def run_suite(panel, fbc_form: str = "high20", se_type: str = "HC1",
                    outcomes: Sequence[str] = OUTCOMES) -> list[SuiteCell]:
    """Every outcome under every specification; failing cells carry their error instead of a result."""
    cells = []
    for outcome in outcomes:
        for s in SPECIFICATIONS:
            spec = RegressionSpec(outcome, fbc_form, s)
            try:
                cells.append(SuiteCell(spec, fit_ols(panel, spec, se_type)))
            except (ValueError, np.linalg.LinAlgError) as exc:
                log.info("%s / %s / %s failed: %s", outcome, fbc_form, s, exc)
                cells.append(SuiteCell(spec, None, str(exc)))
    return cells


RESULT_HEADER = ("fbc_form", "outcome", "specification", "beta", "se", "n_obs", "r_squared", "residual_sha256", "status")


def suite_rows(cells: Sequence[SuiteCell]) -> list[list]:
    rows = []
    for c in cells:
        r = c.result
        if r is None:
            rows.append([c.spec.fbc_form, c.spec.outcome, c.spec.specification, None, None, None, None, None, f"failed: {c.error}"])
        else:
            rows.append([c.spec.fbc_form, c.spec.outcome, c.spec.specification, r.beta, r.se, r.n_obs, r.r_squared, r.residual_hash, "ok"])
    return rows

"""FBC similarity scoring against a reference centroid, plus the PCA, quadrant and variance analyses."""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import stats
from .embed import EmbeddingVector

log = logging.getLogger(__name__)

HIGH_FBC_QUANTILE = 0.8
QUADRANTS = ("HH", "HL", "LH", "LL")


class UndefinedSimilarity(ValueError):
    pass


class DegenerateCovariance(ValueError):
    pass


def _values(v) -> np.ndarray:
    return v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=float)


def cosine_similarity(a, b) -> float:
    x, y = _values(a), _values(b)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch {x.shape} vs {y.shape}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise UndefinedSimilarity("undefined similarity: zero vector")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


@dataclass
class ReferenceCentroid:
    vector: EmbeddingVector
    n_reference_docs: int


def build_centroid(reference_docs: Sequence) -> ReferenceCentroid:
    """Component-wise mean of the reference embeddings (left unnormalized)."""
    if len(reference_docs) == 0:
        raise ValueError("centroid needs at least one reference document")
    mat = np.stack([_values(v) for v in reference_docs])
    # Sorting rows makes the float summation order independent of input order.
    mat = mat[np.lexsort(mat.T[::-1])]
    return ReferenceCentroid(EmbeddingVector(mat.mean(axis=0), normalized=False), len(reference_docs))


@dataclass
class FbcScore:
    place_id: str
    similarity: float
    log_similarity: float | None
    high_fbc: bool = False


def high_fbc_count(n: int, quantile: float = HIGH_FBC_QUANTILE) -> int:
    share = 1 - Fraction(str(quantile))
    return math.ceil(share * n)


def classify_high(similarity: Mapping[str, float], quantile: float = HIGH_FBC_QUANTILE) -> tuple[set[str], float]:
    """Flag exactly ``ceil((1 - quantile) * N)`` places as high FBC.

    Every place strictly above the interpolated percentile is flagged; the
    remaining slots go to places at the threshold in ascending place_id order.
    Ranking by (-similarity, place_id) and taking the first k does both at once.
    Returns the flagged ids and the percentile threshold.
    """
    if not similarity:
        return set(), float("nan")
    threshold = stats.percentile(similarity.values(), quantile)
    k = high_fbc_count(len(similarity), quantile)
    ranked = sorted(similarity, key=lambda pid: (-similarity[pid], pid))
    return set(ranked[:k]), threshold


def score_corpus(
    docs: Mapping[str, EmbeddingVector],
    centroid: ReferenceCentroid,
    quantile: float = HIGH_FBC_QUANTILE,
) -> list[FbcScore]:
    sims = {}
    for pid, vec in docs.items():
        if vec.dimension != centroid.vector.dimension:
            raise ValueError(f"{pid}: dimension {vec.dimension} != centroid {centroid.vector.dimension}")
        sims[pid] = cosine_similarity(vec, centroid.vector)
    flagged, _ = classify_high(sims, quantile)
    out = []
    for pid in sorted(sims):
        s = sims[pid]
        if s > 0:
            logs = math.log(s)
        else:
            log.warning("%s: similarity %.6g <= 0, excluded from log-based analyses", pid, s)
            logs = None
        out.append(FbcScore(pid, s, logs, pid in flagged))
    return out


@dataclass
class PcaModel:
    component_matrix: np.ndarray  # D x k, orthonormal columns
    explained_variance: np.ndarray
    mean_vector: np.ndarray
    total_variance: float

    @property
    def explained_ratio(self) -> np.ndarray:
        if self.total_variance == 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def transform(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x - self.mean_vector) @ self.component_matrix

    def inverse_transform(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return z @ self.component_matrix.T + self.mean_vector


def fix_signs(components: np.ndarray) -> np.ndarray:
    """Flip each column so that its largest-magnitude entry is positive."""
    comps = components.copy()
    for j in range(comps.shape[1]):
        i = int(np.argmax(np.abs(comps[:, j])))
        if comps[i, j] < 0:
            comps[:, j] = -comps[:, j]
    return comps


def fit_pca(embeddings: Sequence, k: int = 2, rank_tol: float = 1e-10) -> PcaModel:
    """Top-``k`` principal components via SVD of the mean-centred data matrix."""
    x = np.stack([_values(v) for v in embeddings]).astype(float)
    n, d = x.shape
    if n < k + 1:
        raise DegenerateCovariance(f"need at least {k + 1} vectors for k={k}, got {n}")
    if k > d:
        raise DegenerateCovariance(f"k={k} exceeds dimension {d}")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    if s.size < k or s[0] == 0 or s[k - 1] <= rank_tol * s[0]:
        raise DegenerateCovariance(f"degenerate covariance: rank < {k}")
    variances = s**2 / (n - 1)
    comps = fix_signs(vt[:k].T)
    return PcaModel(comps, variances[:k].copy(), mean, float(variances.sum()))


@dataclass
class QuadrantResult:
    labels: dict[str, str]
    counts: dict[str, int]
    pearson_r: float
    wrluri_median: float
    fbc_median: float
    values: dict[str, tuple[float, float]] = field(default_factory=dict)


def quadrant_analysis(scores: Sequence[FbcScore], wrluri: Mapping[str, float]) -> QuadrantResult:
    """Median splits on WRLURI (first letter) and log similarity (second letter).

    Places sitting exactly on a median are put on the low side.
    """
    pairs = {
        s.place_id: (float(wrluri[s.place_id]), s.log_similarity)
        for s in scores
        if s.place_id in wrluri and s.log_similarity is not None and wrluri[s.place_id] is not None
    }
    if not pairs:
        raise ValueError("no places shared between scores and WRLURI")
    if len(pairs) < 3:
        raise ValueError(f"correlation needs at least 3 overlapping places, got {len(pairs)}")
    ids = sorted(pairs)
    w = np.array([pairs[i][0] for i in ids])
    f = np.array([pairs[i][1] for i in ids])
    r = stats.pearson_r(w, f)
    w_med, f_med = stats.median(w), stats.median(f)
    labels = {}
    for pid, wi, fi in zip(ids, w, f):
        labels[pid] = ("H" if wi > w_med else "L") + ("H" if fi > f_med else "L")
    counts = Counter(labels.values())
    return QuadrantResult(labels, {q: counts.get(q, 0) for q in QUADRANTS}, r, w_med, f_med, pairs)


def variance_decomposition(scores: Sequence[FbcScore], region: Mapping[str, str]) -> tuple[float, float]:
    """Between- and within-region shares of the total sum of squares of similarity."""
    groups: dict[str, list[float]] = defaultdict(list)
    for s in scores:
        r = region.get(s.place_id)
        if r is not None and r != "":
            groups[r].append(s.similarity)
    n = sum(len(g) for g in groups.values())
    if len(groups) < 2 or n < 2:
        raise ValueError("variance decomposition needs at least 2 regions and 2 places")
    allv = np.concatenate([np.asarray(g) for g in groups.values()])
    grand = allv.mean()
    sst = float(((allv - grand) ** 2).sum())
    if sst == 0.0:
        raise ValueError("zero total variance")
    ssb = sum(len(g) * (np.mean(g) - grand) ** 2 for g in groups.values())
    ssw = sum(float(((np.asarray(g) - np.mean(g)) ** 2).sum()) for g in groups.values())
    return float(ssb / sst), float(ssw / sst)

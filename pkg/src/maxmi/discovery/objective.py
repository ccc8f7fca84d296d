"""Loss terms for key-state discovery: predecessor MI, gap penalty and their combination."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from ..data import NormalizedDataset
from ..mi import MIEstimatorConfig, SamplePairs, estimate_mi, gather_pairs

LN2 = math.log(2.0)


def soft_argmax(p: np.ndarray, atol: float = 1e-6) -> float:
    """Expected index under the probability vector p."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or len(p) == 0:
        raise ValueError("p must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("p must be non-negative and finite")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"p must sum to 1 (got {p.sum():.9g})")
    return float(np.dot(np.arange(len(p)), p))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def grid_indices(values: np.ndarray, delta_t: int, T: int) -> np.ndarray:
    """Round half up onto the grid and keep a predecessor available."""
    idx = np.floor(np.asarray(values, dtype=np.float64) + 0.5).astype(np.int64)
    return np.clip(idx, delta_t, T - 1)


def concept_mi(
    nd: NormalizedDataset, column: np.ndarray, delta_t: int, estimator: MIEstimatorConfig
) -> float:
    """MI between the states at one concept's indices and their delta_t predecessors."""
    idx = grid_indices(column, delta_t, nd.T)
    xs, ys = gather_pairs(nd.states, idx, delta_t)
    return estimate_mi(SamplePairs(xs, ys), estimator)


def concept_scores(
    nd: NormalizedDataset, indices: np.ndarray, delta_t: int, estimator: MIEstimatorConfig
) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.float64)
    out = np.empty(indices.shape[1])
    for k in range(indices.shape[1]):
        try:
            out[k] = concept_mi(nd, indices[:, k], delta_t, estimator)
        except ValueError as err:
            raise type(err)(f"concept {k}: {err}") from err
    return out


def maxmi_objective(nd: NormalizedDataset, indices: np.ndarray, delta_t: int, estimator: MIEstimatorConfig) -> float:
    """Negative summed predecessor MI over concepts (lower is better)."""
    return -float(np.sum(concept_scores(nd, indices, delta_t, estimator)))


def pair_penalty(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return softplus(-np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))


def diversity_penalty(indices: np.ndarray) -> float:
    """Sum over trajectories and concept pairs of softplus(-gap)."""
    indices = np.asarray(indices, dtype=np.float64)
    if indices.ndim != 2:
        raise ValueError("indices must be an N x K matrix")
    K = indices.shape[1]
    total = 0.0
    for u in range(K):
        for v in range(u + 1, K):
            total += float(np.sum(pair_penalty(indices[:, u], indices[:, v])))
    return total


def concept_penalty(indices: np.ndarray, k: int, column: np.ndarray | None = None) -> np.ndarray:
    """Per-trajectory penalty of concept k against all others (optionally with column replacing k)."""
    col = indices[:, k] if column is None else column
    out = np.zeros(np.shape(col))
    for v in range(indices.shape[1]):
        if v != k:
            out = out + pair_penalty(col, indices[:, v])
    return out


def combine(mi_values: Sequence[float], penalty: float, lam: float, mi_weight: float = 1.0) -> float:
    return -mi_weight * float(np.sum(mi_values)) + lam * penalty


def total_loss(
    nd: NormalizedDataset,
    indices: np.ndarray,
    delta_t: int,
    estimator: MIEstimatorConfig,
    lam: float,
    mi_weight: float = 1.0,
) -> float:
    """maxmi_objective + lam * diversity_penalty; mi_weight=0 drops the MI term (ablation)."""
    mi_part = maxmi_objective(nd, indices, delta_t, estimator) if mi_weight else 0.0
    return mi_weight * mi_part + lam * diversity_penalty(indices)


def nms(candidates: Iterable[tuple[float, float]], window: float) -> list[tuple[float, float]]:
    """Greedy suppression: keep the best score, drop everything within window of it, repeat.

    Ties in score go to the smaller index.  Output is ordered by descending score.
    """
    pool = [(float(i), float(s)) for i, s in candidates]
    for _, s in pool:
        if not math.isfinite(s):
            raise ValueError("NMS scores must be finite")
    pool.sort(key=lambda c: (-c[1], c[0]))
    kept: list[tuple[float, float]] = []
    for idx, score in pool:
        if all(abs(idx - j) > window for j, _ in kept):
            kept.append((idx, score))
    return kept


def default_lambda(peak_scores: Sequence[float]) -> float:
    """Scale the gap penalty to a small fraction of a typical profile peak."""
    peaks = [s for s in peak_scores if math.isfinite(s) and s > 0]
    mean_peak = float(np.mean(peaks)) if peaks else 1.0
    return 0.05 * mean_peak / LN2

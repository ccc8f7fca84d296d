"""Discovery engines: shared-index profile peaks and per-trajectory coordinate descent."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..data import NormalizedDataset
from ..mi import IncrementalKSG, MIProfile, mi_profile
from .concepts import ConceptSet, DiscoveryConfig, IndexAssignment, build_concept_set
from .objective import (
    combine,
    concept_mi,
    concept_penalty,
    concept_scores,
    default_lambda,
    diversity_penalty,
    grid_indices,
    nms,
    pair_penalty,
)

log = logging.getLogger(__name__)

_ACCEPT = 1e-12


def profile_local_maxima(profile: MIProfile) -> list[tuple[float, float]]:
    """Interior local maxima of the profile as (t, value); plateaus report their first step."""
    v = profile.values
    out = []
    for j in range(1, len(v) - 1):
        if v[j] > v[j - 1] and v[j] >= v[j + 1]:
            out.append((float(profile.times[j]), float(v[j])))
    return out


@dataclass(frozen=True)
class PeakSelection:
    profile: MIProfile
    peaks: list[tuple[float, float]]
    low_confidence: bool


def select_peaks(nd: NormalizedDataset, cfg: DiscoveryConfig, profile: MIProfile | None = None) -> PeakSelection:
    if profile is None:
        profile = mi_profile(nd, cfg.delta_t, cfg.estimator)
    maxima = profile_local_maxima(profile)
    strong = [c for c in maxima if c[1] >= cfg.low_confidence_nats]
    low = not strong
    kept = nms(strong if strong else maxima, cfg.resolved_nms_window(nd.T))[: cfg.K]
    return PeakSelection(profile, kept, low)


def resolve_lambda(nd: NormalizedDataset, cfg: DiscoveryConfig, peaks: PeakSelection | None = None) -> float:
    if cfg.variant == "maxmi_only":
        return 0.0
    if cfg.lam is not None:
        return float(cfg.lam)
    if peaks is None:
        peaks = select_peaks(nd, cfg)
    return default_lambda([s for _, s in peaks.peaks])


def discover_profile_peaks(nd: NormalizedDataset, cfg: DiscoveryConfig, profile: MIProfile | None = None) -> ConceptSet:
    """Shared-index concepts at the strongest NMS-separated peaks of the MI profile."""
    sel = select_peaks(nd, cfg, profile)
    lam = resolve_lambda(nd, cfg, sel)
    if not sel.peaks:
        log.warning("no local maximum in the MI profile; returning an empty concept set")
        return build_concept_set(
            nd, np.empty((nd.N, 0)), np.empty(0), engine="profile_peaks", delta_t=cfg.delta_t, lam=lam, status="empty"
        )
    positions = np.array([t for t, _ in sel.peaks])
    scores = np.array([s for _, s in sel.peaks])
    status = "low_confidence" if sel.low_confidence else "ok"
    if sel.low_confidence:
        log.warning("all MI profile peaks are below %.3g nats", cfg.low_confidence_nats)
    return build_concept_set(
        nd,
        np.tile(positions, (nd.N, 1)),
        scores,
        engine="profile_peaks",
        delta_t=cfg.delta_t,
        lam=lam,
        status=status,
    )


def initial_assignment(nd: NormalizedDataset, cfg: DiscoveryConfig, peaks: PeakSelection | None = None) -> IndexAssignment:
    """Profile-peak positions padded with evenly spaced ones, or a plain even spread."""
    T, K = nd.T, cfg.K
    uniform = IndexAssignment.uniform(nd.N, K, T, cfg.delta_t)
    if cfg.init == "uniform":
        return uniform
    if peaks is None:
        peaks = select_peaks(nd, cfg)
    chosen = [t for t, _ in peaks.peaks][:K]
    pool = list(uniform.indices[0])
    while len(chosen) < K:
        # farthest evenly spaced slot from what is already taken
        gaps = [min((abs(p - c) for c in chosen), default=np.inf) for p in pool]
        chosen.append(pool.pop(int(np.argmax(gaps))))
    return IndexAssignment.shared(sorted(chosen), nd.N, T)


class _Search:
    """Mutable state of one coordinate-descent run."""

    def __init__(self, nd: NormalizedDataset, cfg: DiscoveryConfig, lam: float, start: np.ndarray):
        self.nd = nd
        self.cfg = cfg
        self.lam = lam
        self.w = cfg.mi_weight
        self.dt = cfg.delta_t
        self.T = nd.T
        self.X = grid_indices(start, self.dt, self.T).astype(np.float64)
        self.mi = concept_scores(nd, self.X, self.dt, cfg.estimator) if self.w else np.zeros(self.X.shape[1])

    def loss(self) -> float:
        return combine(self.mi, diversity_penalty(self.X), self.lam, self.w)

    def _pairs(self, rows: np.ndarray, idx: np.ndarray):
        s = self.nd.states
        return s[rows, idx], s[rows, idx - self.dt]

    def block_step(self, k: int) -> None:
        """Best shift of the whole column k by a shared offset."""
        col = self.X[:, k]
        lo = int(self.dt - col.min())
        hi = int(self.T - 1 - col.max())
        pen_cur = float(np.sum(concept_penalty(self.X, k)))
        best, best_delta, best_mi = 0, 0.0, self.mi[k]
        for s in range(lo, hi + 1):
            if s == 0:
                continue
            cand = col + s
            pen = float(np.sum(concept_penalty(self.X, k, cand)))
            m = concept_mi(self.nd, cand, self.dt, self.cfg.estimator) if self.w else 0.0
            delta = -self.w * (m - self.mi[k]) + self.lam * (pen - pen_cur)
            if delta < best_delta - _ACCEPT:
                best, best_delta, best_mi = s, delta, m
        if best:
            self.X[:, k] = col + best
            self.mi[k] = best_mi

    def local_step(self, k: int, half_width: int) -> None:
        """Re-place concept k in each trajectory within +-half_width of its current index."""
        nd, dt = self.nd, self.dt
        N = nd.N
        rows = np.arange(N)
        idx = self.X[:, k].astype(np.int64)
        est = self.cfg.estimator
        inc = None
        if self.w and est.method == "ksg":
            xs, ys = self._pairs(rows, idx)
            inc = IncrementalKSG(xs, ys, est.k_neighbors, est.jitter_sd, est.jitter_seed)
        others = np.delete(self.X, k, axis=1)
        for i in range(N):
            c = int(self.X[i, k])
            cand = np.arange(max(dt, c - half_width), min(self.T - 1, c + half_width) + 1)
            pen = pair_penalty(cand[:, None], others[i][None, :]).sum(axis=1)
            pen_cur = float(pair_penalty(c, others[i]).sum())
            if self.w == 0:
                scores = np.zeros(len(cand))
            elif inc is not None:
                scores = inc.score(i, nd.states[i, cand], nd.states[i, cand - dt])
            else:
                scores = np.empty(len(cand))
                for j, u in enumerate(cand):
                    col = self.X[:, k].copy()
                    col[i] = u
                    scores[j] = concept_mi(nd, col, dt, est)
            delta = -self.w * (scores - self.mi[k]) + self.lam * (pen - pen_cur)
            j = int(np.argmin(delta))
            if delta[j] < -_ACCEPT and cand[j] != c:
                self.X[i, k] = cand[j]
                if self.w:
                    self.mi[k] = scores[j]
                if inc is not None:
                    inc.update(i, nd.states[i, cand[j]], nd.states[i, cand[j] - dt])


def discover_coordinate_ascent(
    nd: NormalizedDataset,
    cfg: DiscoveryConfig,
    init: IndexAssignment | None = None,
    lam: float | None = None,
) -> ConceptSet:
    """Block-coordinate descent on the combined MaxMI + gap-penalty loss.

    Each sweep visits every concept: first a shared shift of the whole column,
    then a per-trajectory move inside a local window.  A move is taken only if
    it lowers the loss, so the per-sweep loss trace never increases.
    """
    peaks = None
    if init is None and cfg.init == "profile_peaks" or (lam is None and cfg.lam is None and cfg.variant != "maxmi_only"):
        peaks = select_peaks(nd, cfg)
    if lam is None:
        lam = resolve_lambda(nd, cfg, peaks)
    if init is None:
        init = initial_assignment(nd, cfg, peaks)
    if init.N != nd.N or init.T != nd.T:
        raise ValueError("initial assignment does not match the dataset")
    search = _Search(nd, cfg, lam, init.indices)
    half = cfg.resolved_window(nd.T)
    trace = [search.loss()]
    converged = False
    for sweep in range(cfg.max_sweeps):
        saved_X, saved_mi = search.X.copy(), search.mi.copy()
        for k in range(init.K):
            search.block_step(k)
            search.local_step(k, half)
        loss = search.loss()
        if loss > trace[-1]:
            # rounding in incremental bookkeeping; keep the previous state
            search.X, search.mi = saved_X, saved_mi
            loss = trace[-1]
        trace.append(loss)
        log.info("sweep %d loss %.6f", sweep + 1, loss)
        if trace[-2] - trace[-1] < cfg.tol:
            converged = True
            break

    X = search.X
    scores = concept_scores(nd, X, cfg.delta_t, cfg.estimator)
    means = X.mean(axis=0)
    kept = nms(list(zip(means, scores)), cfg.resolved_nms_window(nd.T))
    cols = sorted(int(np.flatnonzero((means == m) & (scores == s))[0]) for m, s in kept)
    return build_concept_set(
        nd,
        X[:, cols],
        scores[cols],
        engine="coordinate_ascent",
        delta_t=cfg.delta_t,
        lam=lam,
        status="ok" if converged else "not_converged",
        loss_trace=trace,
        unpruned=IndexAssignment(X, nd.T),
        unpruned_scores=scores,
    )

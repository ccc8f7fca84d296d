"""Sample-based mutual information estimators and MI profiles along trajectories.

All estimates are in nats and are not clamped at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import digamma
from scipy.stats import norm, rankdata

from .data import NormalizedDataset

METHODS = ("ksg", "binned", "gaussian_copula")
MIN_SAMPLES = 8


class EstimatorDomainError(ValueError):
    """The sample set is outside the estimator's domain (too small, degenerate, duplicated)."""


@dataclass(frozen=True)
class MIEstimatorConfig:
    method: str = "ksg"
    k_neighbors: int = 3
    bins_per_dim: int = 16
    jitter_sd: float = 1e-10
    jitter_seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown estimator {self.method!r}; expected one of {METHODS}")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.bins_per_dim < 2:
            raise ValueError("bins_per_dim must be >= 2")
        if not (self.jitter_sd >= 0 and math.isfinite(self.jitter_sd)):
            raise ValueError("jitter_sd must be finite and >= 0")


@dataclass(frozen=True)
class SamplePairs:
    """Row i of xs is paired with row i of ys."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self) -> None:
        xs = np.asarray(self.xs, dtype=np.float64)
        ys = np.asarray(self.ys, dtype=np.float64)
        if xs.ndim == 1:
            xs = xs[:, None]
        if ys.ndim == 1:
            ys = ys[:, None]
        if xs.ndim != 2 or ys.ndim != 2 or xs.shape[1] < 1 or ys.shape[1] < 1:
            raise ValueError("xs and ys must be N x D matrices with D >= 1")
        if xs.shape[0] != ys.shape[0]:
            raise ValueError(f"unpaired samples: {xs.shape[0]} xs vs {ys.shape[0]} ys")
        if xs.shape[0] < MIN_SAMPLES:
            raise EstimatorDomainError(f"need at least {MIN_SAMPLES} samples, got {xs.shape[0]}")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("samples contain non-finite values")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.xs.shape[0]


def estimate_mi(pairs: SamplePairs, cfg: MIEstimatorConfig = MIEstimatorConfig()) -> float:
    """Estimate I(X;Y) in nats from paired samples."""
    xs, ys = pairs.xs, pairs.ys
    if _all_constant(xs) or _all_constant(ys):
        raise EstimatorDomainError("every column of one side is constant; MI is undefined for this sample")
    if cfg.method == "ksg":
        return ksg_mi(xs, ys, cfg.k_neighbors, cfg.jitter_sd, cfg.jitter_seed)
    if cfg.method == "binned":
        return binned_mi(xs, ys, cfg.bins_per_dim)
    return gaussian_copula_mi(xs, ys)


def mi(xs, ys, cfg: MIEstimatorConfig = MIEstimatorConfig()) -> float:
    return estimate_mi(SamplePairs(xs, ys), cfg)


def _all_constant(a: np.ndarray) -> bool:
    return bool(np.all(a.max(axis=0) == a.min(axis=0)))


# --- KSG ---------------------------------------------------------------------


@lru_cache(maxsize=64)
def _psi_table(n: int) -> np.ndarray:
    t = np.empty(n + 2)
    t[0] = -np.inf
    t[1:] = digamma(np.arange(1, n + 2))
    t.setflags(write=False)
    return t


def jitter(shape: tuple[int, int], sd: float, seed: int, side: int) -> np.ndarray:
    """Deterministic tie-breaking noise; row r always receives the same vector for a given shape."""
    if sd == 0:
        return np.zeros(shape)
    rng = np.random.default_rng([int(seed), int(side), shape[0], shape[1]])
    return sd * rng.standard_normal(shape)


def maxnorm_distances(a: np.ndarray) -> np.ndarray:
    """Pairwise Chebyshev distances with +inf on the diagonal."""
    out = cdist(a, a, metric="chebyshev")
    np.fill_diagonal(out, np.inf)
    return out


def _check_ksg(xs: np.ndarray, ys: np.ndarray, k: int) -> None:
    n = xs.shape[0]
    if not (1 <= k <= n - 1):
        raise EstimatorDomainError(f"k_neighbors={k} must lie in [1, {n - 1}]")
    if xs.shape == ys.shape and np.array_equal(xs, ys):
        raise EstimatorDomainError("identical X and Y: every k-NN distance is tied; KSG is undefined here")


def ksg_mi(xs: np.ndarray, ys: np.ndarray, k: int = 3, jitter_sd: float = 1e-10, jitter_seed: int = 0) -> float:
    """Kraskov-Stoegbauer-Grassberger estimator (variant 1, max-norm)."""
    _check_ksg(xs, ys, k)
    n = xs.shape[0]
    x = xs + jitter(xs.shape, jitter_sd, jitter_seed, 0)
    y = ys + jitter(ys.shape, jitter_sd, jitter_seed, 1)
    dx = maxnorm_distances(x)
    dy = maxnorm_distances(y)
    return _ksg_from_distances(dx, dy, k)


def _ksg_from_distances(dx: np.ndarray, dy: np.ndarray, k: int) -> float:
    n = dx.shape[0]
    dz = np.maximum(dx, dy)
    eps = np.partition(dz, k - 1, axis=1)[:, k - 1]
    nx = (dx < eps[:, None]).sum(axis=1)
    ny = (dy < eps[:, None]).sum(axis=1)
    psi = _psi_table(n)
    return float(psi[k] + psi[n] - np.mean(psi[nx + 1] + psi[ny + 1]))


class IncrementalKSG:
    """KSG estimate that can score many replacements of a single row cheaply.

    Scores agree exactly with `ksg_mi` on the modified sample, which lets a
    local search swap one trajectory's sample at a time.
    """

    def __init__(self, xs: np.ndarray, ys: np.ndarray, k: int = 3, jitter_sd: float = 1e-10, jitter_seed: int = 0):
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        _check_ksg(xs, ys, k)
        self.k = k
        self.n = xs.shape[0]
        self.jx = jitter(xs.shape, jitter_sd, jitter_seed, 0)
        self.jy = jitter(ys.shape, jitter_sd, jitter_seed, 1)
        self.x = xs + self.jx
        self.y = ys + self.jy
        self.dx = maxnorm_distances(self.x)
        self.dy = maxnorm_distances(self.y)
        self._psi = _psi_table(self.n)
        self._refresh()

    def _refresh(self) -> None:
        k = self.k
        self.dz = np.maximum(self.dx, self.dy)
        part = np.argpartition(self.dz, k, axis=1)[:, : k + 1]
        vals = np.take_along_axis(self.dz, part, axis=1)
        order = np.argsort(vals, axis=1, kind="stable")
        self.top_i = np.take_along_axis(part, order, axis=1)
        self.top_v = np.take_along_axis(vals, order, axis=1)
        self.eps = self.top_v[:, k - 1]
        self.nx = (self.dx < self.eps[:, None]).sum(axis=1)
        self.ny = (self.dy < self.eps[:, None]).sum(axis=1)

    def value(self) -> float:
        psi = self._psi
        return float(psi[self.k] + psi[self.n] - np.mean(psi[self.nx + 1] + psi[self.ny + 1]))

    def score(self, i: int, cand_x: np.ndarray, cand_y: np.ndarray) -> np.ndarray:
        """MI after replacing row i by each candidate row (inputs are un-jittered)."""
        k, n = self.k, self.n
        cx = np.atleast_2d(cand_x) + self.jx[i]
        cy = np.atleast_2d(cand_y) + self.jy[i]
        c = cx.shape[0]
        ddx = cdist(cx, self.x, metric="chebyshev")
        ddy = cdist(cy, self.y, metric="chebyshev")
        ddx[:, i] = np.inf
        ddy[:, i] = np.inf
        ddz = np.maximum(ddx, ddy)

        # k smallest distances of every other row once row i is dropped
        keep = self.top_i != i
        rank = np.cumsum(keep, axis=1) - 1
        a = np.full(n, -np.inf)
        b = np.empty(n)
        for r in range(k + 1):
            sel = keep[:, r]
            if k >= 2:
                m = sel & (rank[:, r] == k - 2)
                a[m] = self.top_v[m, r]
            m = sel & (rank[:, r] == k - 1)
            b[m] = self.top_v[m, r]
        eps = np.where(ddz < b[None, :], np.maximum(ddz, a[None, :]), b[None, :])
        eps[:, i] = 0.0

        old_x_i = self.dx[:, i]
        old_y_i = self.dy[:, i]
        nx = np.broadcast_to(self.nx, (c, n)).copy()
        ny = np.broadcast_to(self.ny, (c, n)).copy()
        same = eps == self.eps[None, :]
        # rows whose radius is unchanged: swap the contribution of row i only
        nx -= (old_x_i[None, :] < eps) & same
        ny -= (old_y_i[None, :] < eps) & same
        nx += (ddx < eps) & same
        ny += (ddy < eps) & same
        cc, jj = np.nonzero(~same)
        if len(cc):
            thr = eps[cc, jj][:, None]
            rx = self.dx[jj] < thr
            ry = self.dy[jj] < thr
            rx[np.arange(len(jj)), i] = ddx[cc, jj] < eps[cc, jj]
            ry[np.arange(len(jj)), i] = ddy[cc, jj] < eps[cc, jj]
            nx[cc, jj] = rx.sum(axis=1)
            ny[cc, jj] = ry.sum(axis=1)
        eps_i = np.partition(ddz, k - 1, axis=1)[:, k - 1]
        nx[:, i] = (ddx < eps_i[:, None]).sum(axis=1)
        ny[:, i] = (ddy < eps_i[:, None]).sum(axis=1)
        psi = self._psi
        return psi[k] + psi[n] - np.mean(psi[nx + 1] + psi[ny + 1], axis=1)

    def update(self, i: int, new_x: np.ndarray, new_y: np.ndarray) -> None:
        self.x[i] = np.asarray(new_x, dtype=np.float64) + self.jx[i]
        self.y[i] = np.asarray(new_y, dtype=np.float64) + self.jy[i]
        rx = np.abs(self.x - self.x[i]).max(axis=1)
        ry = np.abs(self.y - self.y[i]).max(axis=1)
        rx[i] = np.inf
        ry[i] = np.inf
        self.dx[i, :] = rx
        self.dx[:, i] = rx
        self.dy[i, :] = ry
        self.dy[:, i] = ry
        self._refresh()


# --- other estimators ------------------------------------------------------------


def _bin_codes(a: np.ndarray, bins: int) -> np.ndarray:
    lo = a.min(axis=0)
    span = a.max(axis=0) - lo
    span[span == 0] = 1.0
    codes = np.floor((a - lo) / span * bins).astype(np.int64)
    return np.clip(codes, 0, bins - 1)


def _plugin_entropy(codes: np.ndarray) -> float:
    _, counts = np.unique(codes, axis=0, return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def binned_mi(xs: np.ndarray, ys: np.ndarray, bins: int = 16) -> float:
    """Plug-in estimate on an equal-width grid over each dimension's observed range."""
    cx = _bin_codes(xs, bins)
    cy = _bin_codes(ys, bins)
    return _plugin_entropy(cx) + _plugin_entropy(cy) - _plugin_entropy(np.hstack([cx, cy]))


def _normal_scores(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    return norm.ppf(rankdata(a, axis=0) / (n + 1))


def gaussian_copula_mi(xs: np.ndarray, ys: np.ndarray) -> float:
    """MI of the Gaussian copula fitted to normal scores; invariant to monotone marginal maps."""
    xs = xs[:, xs.max(axis=0) > xs.min(axis=0)]
    ys = ys[:, ys.max(axis=0) > ys.min(axis=0)]
    z = _normal_scores(np.hstack([xs, ys]))
    dxn = xs.shape[1]
    r = np.corrcoef(z, rowvar=False)
    r = np.atleast_2d(r)
    _, ld = np.linalg.slogdet(r)
    _, ldx = np.linalg.slogdet(r[:dxn, :dxn])
    _, ldy = np.linalg.slogdet(r[dxn:, dxn:])
    return float(-0.5 * (ld - ldx - ldy))


# --- profiles ----------------------------------------------------------------------


@dataclass(frozen=True)
class MIProfile:
    """values[j] = I(s_t ; s_{t - delta_t}) at t = times[j]."""

    delta_t: int
    times: np.ndarray
    values: np.ndarray

    def at(self, t: int) -> float:
        return float(self.values[t - self.times[0]])

    def to_csv(self, header_comment: str | None = None) -> str:
        lines = []
        if header_comment:
            lines.append(f"# {header_comment}")
        lines.append("t,mi_nats")
        lines += [f"{int(t)},{float(v)!r}" for t, v in zip(self.times, self.values)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, delta_t: int | None = None) -> "MIProfile":
        rows = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not rows or rows[0].replace(" ", "") != "t,mi_nats":
            raise ValueError("profile CSV must start with header 't,mi_nats'")
        times, values = [], []
        for n, ln in enumerate(rows[1:], start=2):
            parts = ln.split(",")
            if len(parts) != 2:
                raise ValueError(f"profile CSV row {n}: expected 2 columns")
            try:
                times.append(int(parts[0]))
                values.append(float(parts[1]))
            except ValueError:
                raise ValueError(f"profile CSV row {n}: unparseable value") from None
        if not times:
            raise ValueError("profile CSV has no rows")
        t = np.array(times)
        if delta_t is None:
            delta_t = int(t[0])
        return cls(delta_t, t, np.array(values))


def gather_pairs(states: np.ndarray, idx: np.ndarray, delta_t: int) -> tuple[np.ndarray, np.ndarray]:
    """(s_i[idx_i], s_i[idx_i - delta_t]) for every trajectory i."""
    rows = np.arange(states.shape[0])
    return states[rows, idx], states[rows, idx - delta_t]


def mi_profile(
    nd: NormalizedDataset,
    delta_t: int = 8,
    cfg: MIEstimatorConfig = MIEstimatorConfig(),
    workers: int | None = None,
) -> MIProfile:
    """Estimate I(s_t; s_{t-delta_t}) across trajectories for every t in [delta_t, T-1]."""
    T = nd.T
    if not (1 <= delta_t < T):
        raise ValueError(f"delta_t must satisfy 1 <= delta_t < T={T}")
    times = np.arange(delta_t, T)

    def one(t: int) -> float:
        xs, ys = nd.states[:, t], nd.states[:, t - delta_t]
        try:
            return estimate_mi(SamplePairs(xs, ys), cfg)
        except ValueError as err:
            raise type(err)(f"profile at t={t}: {err}") from err

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            values = list(pool.map(one, times))
    else:
        values = [one(int(t)) for t in times]
    return MIProfile(delta_t, times, np.array(values))


def aligned_profile(
    nd: NormalizedDataset,
    anchors: np.ndarray,
    delta_t: int = 8,
    half_width: int | None = None,
    cfg: MIEstimatorConfig = MIEstimatorConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Sweep a per-trajectory anchor by sigma in [-l, l] and estimate I(s_{a+sigma}; s_{a+sigma-delta_t}).

    Returns (sigmas, values).  Shifted indices are clamped to [delta_t, T-1].
    """
    T = nd.T
    if half_width is None:
        half_width = T // 4
    anchors = np.asarray(anchors, dtype=float)
    sigmas = np.arange(-half_width, half_width + 1)
    values = np.empty(len(sigmas))
    for j, s in enumerate(sigmas):
        idx = np.clip(np.floor(anchors + s + 0.5).astype(int), delta_t, T - 1)
        xs, ys = gather_pairs(nd.states, idx, delta_t)
        values[j] = estimate_mi(SamplePairs(xs, ys), cfg)
    return sigmas, values

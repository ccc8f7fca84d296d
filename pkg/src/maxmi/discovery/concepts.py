"""Configuration and result containers for key-state discovery."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..data import NormalizedDataset, map_index
from ..mi import MIEstimatorConfig

ENGINES = ("profile_peaks", "coordinate_ascent", "localizer")
VARIANTS = ("full", "maxmi_only", "pd_only")
INITS = ("profile_peaks", "uniform")
CONCEPTS_FORMAT = "maxmi-concepts"
CONCEPTS_VERSION = 1


@dataclass(frozen=True)
class DiscoveryConfig:
    """Knobs for all discovery engines.

    `lam=None` means "derive from the MI profile".  `variant` selects the ablations:
    maxmi_only forces lam to 0, pd_only drops the MI term.  `window` and
    `nms_window` default to T/8 and T/16.
    """

    K: int = 10
    lam: float | None = None
    delta_t: int = 8
    nms_window: int | None = None
    engine: str = "coordinate_ascent"
    variant: str = "full"
    estimator: MIEstimatorConfig = field(default_factory=MIEstimatorConfig)
    seed: int = 0
    init: str = "profile_peaks"
    window: int | None = None
    max_sweeps: int = 20
    tol: float = 1e-4
    low_confidence_nats: float = 0.1
    # localizer
    iterations: int = 150
    population: int = 32
    es_sigma: float = 0.01
    es_lr: float = 0.001
    embed_dim: int = 16
    channels: int = 32
    hidden: int = 64

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.delta_t < 1:
            raise ValueError("delta_t must be >= 1")
        if self.nms_window is not None and self.nms_window < 1:
            raise ValueError("nms_window must be >= 1")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}; expected one of {ENGINES}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}; expected one of {INITS}")
        if self.lam is not None:
            if not (math.isfinite(self.lam) and self.lam >= 0):
                raise ValueError("lambda must be finite and >= 0")
            if self.lam == 0 and self.variant == "full":
                raise ValueError("lambda must be > 0 for the full model (use variant=maxmi_only)")
        if self.max_sweeps < 1 or self.tol < 0:
            raise ValueError("max_sweeps must be >= 1 and tol >= 0")
        if self.population < 2 or self.iterations < 1:
            raise ValueError("localizer needs population >= 2 and iterations >= 1")

    @property
    def mi_weight(self) -> float:
        return 0.0 if self.variant == "pd_only" else 1.0

    def resolved_window(self, T: int) -> int:
        return self.window if self.window is not None else max(1, T // 8)

    def resolved_nms_window(self, T: int) -> int:
        return self.nms_window if self.nms_window is not None else max(1, T // 16)

    def with_lambda(self, lam: float) -> "DiscoveryConfig":
        return replace(self, lam=lam)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class IndexAssignment:
    """N x K real-valued key-state positions on the normalized grid."""

    indices: np.ndarray
    T: int

    def __post_init__(self) -> None:
        a = np.array(self.indices, dtype=np.float64, copy=True)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 0:
            raise ValueError("indices must be an N x K matrix")
        if not np.all(np.isfinite(a)):
            raise ValueError("indices must be finite")
        if a.size and (a.min() < 0 or a.max() > self.T - 1):
            raise ValueError(f"indices must lie in [0, {self.T - 1}]")
        a.setflags(write=False)
        object.__setattr__(self, "indices", a)

    @property
    def N(self) -> int:
        return self.indices.shape[0]

    @property
    def K(self) -> int:
        return self.indices.shape[1]

    def means(self) -> np.ndarray:
        return self.indices.mean(axis=0)

    def spread(self) -> float:
        """Largest distance between concept mean indices."""
        m = self.means()
        return float(m.max() - m.min()) if len(m) else 0.0

    @classmethod
    def uniform(cls, N: int, K: int, T: int, delta_t: int = 0) -> "IndexAssignment":
        """Concepts evenly spaced over [delta_t, T-1], identical across trajectories."""
        pos = np.round(np.linspace(delta_t, T - 1, K + 2)[1:-1]) if K else np.empty(0)
        return cls(np.tile(pos, (N, 1)), T)

    @classmethod
    def shared(cls, positions, N: int, T: int) -> "IndexAssignment":
        return cls(np.tile(np.asarray(positions, dtype=np.float64), (N, 1)), T)


@dataclass(frozen=True)
class ConceptSet:
    """Discovered concepts, columns ordered by mean index."""

    assignment: IndexAssignment
    scores: np.ndarray
    raw_indices: np.ndarray
    trajectory_ids: tuple[str, ...]
    engine: str
    delta_t: int
    lam: float
    config_hash: str = ""
    dataset_hash: str = ""
    status: str = "ok"
    loss_trace: tuple[float, ...] = ()
    unpruned: IndexAssignment | None = None
    unpruned_scores: np.ndarray | None = None

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (self.assignment.K,):
            raise ValueError("one score per concept required")
        if not np.all(np.isfinite(scores)):
            raise ValueError("concept scores must be finite")
        means = self.assignment.means()
        if np.any(np.diff(means) < 0):
            raise ValueError("concept columns must be sorted by mean index")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "raw_indices", np.asarray(self.raw_indices, dtype=np.float64))
        object.__setattr__(self, "loss_trace", tuple(float(v) for v in self.loss_trace))

    @property
    def K(self) -> int:
        return self.assignment.K

    def rounded_raw(self) -> np.ndarray:
        return np.floor(self.raw_indices + 0.5).astype(np.int64)

    def to_json(self) -> str:
        doc = {
            "format": CONCEPTS_FORMAT,
            "version": CONCEPTS_VERSION,
            "config_hash": self.config_hash,
            "dataset_hash": self.dataset_hash,
            "engine": self.engine,
            "status": self.status,
            "T": self.assignment.T,
            "delta_t": self.delta_t,
            "lambda": self.lam,
            "trajectory_ids": list(self.trajectory_ids),
            "loss_trace": list(self.loss_trace),
            "concepts": [
                {
                    "concept": k,
                    "score": float(self.scores[k]),
                    "mean_index": float(self.assignment.indices[:, k].mean()),
                    "normalized": [float(v) for v in self.assignment.indices[:, k]],
                    "raw": [float(v) for v in self.raw_indices[:, k]],
                }
                for k in range(self.K)
            ],
        }
        if self.unpruned is not None:
            doc["unpruned"] = {
                "scores": [float(s) for s in self.unpruned_scores],
                "mean_index": [float(m) for m in self.unpruned.means()],
                "normalized": self.unpruned.indices.tolist(),
            }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ConceptSet":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise ValueError(f"concept file is not valid JSON: {err}") from None
        if doc.get("format") != CONCEPTS_FORMAT or doc.get("version") != CONCEPTS_VERSION:
            raise ValueError("not a version 1 concept file")
        ids = tuple(doc["trajectory_ids"])
        T = int(doc["T"])
        concepts = doc["concepts"]
        N = len(ids)
        norm = np.array([c["normalized"] for c in concepts], dtype=np.float64).T.reshape(N, len(concepts))
        raw = np.array([c["raw"] for c in concepts], dtype=np.float64).T.reshape(N, len(concepts))
        unpruned = unpruned_scores = None
        if "unpruned" in doc:
            unpruned = IndexAssignment(np.array(doc["unpruned"]["normalized"], dtype=np.float64), T)
            unpruned_scores = np.array(doc["unpruned"]["scores"], dtype=np.float64)
        return cls(
            assignment=IndexAssignment(norm, T),
            scores=np.array([c["score"] for c in concepts], dtype=np.float64),
            raw_indices=raw,
            trajectory_ids=ids,
            engine=doc["engine"],
            delta_t=int(doc["delta_t"]),
            lam=float(doc["lambda"]),
            config_hash=doc.get("config_hash", ""),
            dataset_hash=doc.get("dataset_hash", ""),
            status=doc.get("status", "ok"),
            loss_trace=tuple(doc.get("loss_trace", ())),
            unpruned=unpruned,
            unpruned_scores=unpruned_scores,
        )

    def to_csv(self) -> str:
        lines = []
        if self.config_hash:
            lines.append(f"# config_hash={self.config_hash}")
        lines.append("trajectory_id,concept,raw_index")
        raw = self.rounded_raw()
        for i, tid in enumerate(self.trajectory_ids):
            for k in range(self.K):
                lines.append(f"{tid},{k},{raw[i, k]}")
        return "\n".join(lines) + "\n"


def build_concept_set(
    nd: NormalizedDataset,
    indices: np.ndarray,
    scores: np.ndarray,
    *,
    engine: str,
    delta_t: int,
    lam: float,
    status: str = "ok",
    loss_trace=(),
    unpruned: IndexAssignment | None = None,
    unpruned_scores: np.ndarray | None = None,
) -> ConceptSet:
    """Order columns temporally and attach raw-time indices."""
    indices = np.asarray(indices, dtype=np.float64).reshape(nd.N, -1)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(indices.mean(axis=0), kind="stable")
    indices = indices[:, order]
    scores = scores[order]
    raw = np.array(
        [[map_index(v, nd.raw_lengths[i], nd.T) for v in indices[i]] for i in range(nd.N)]
    ).reshape(indices.shape)
    return ConceptSet(
        assignment=IndexAssignment(indices, nd.T),
        scores=scores,
        raw_indices=raw,
        trajectory_ids=nd.ids,
        engine=engine,
        delta_t=delta_t,
        lam=lam,
        status=status,
        loss_trace=tuple(loss_trace),
        unpruned=unpruned,
        unpruned_scores=unpruned_scores,
    )

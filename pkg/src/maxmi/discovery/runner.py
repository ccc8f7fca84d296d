"""Engine dispatch and the three-way ablation of the discovery objective."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..data import NormalizedDataset
from .concepts import ConceptSet, DiscoveryConfig
from .engines import discover_coordinate_ascent, discover_profile_peaks


def discover(nd: NormalizedDataset, cfg: DiscoveryConfig) -> ConceptSet:
    if cfg.engine == "profile_peaks":
        return discover_profile_peaks(nd, cfg)
    if cfg.engine == "coordinate_ascent":
        return discover_coordinate_ascent(nd, cfg)
    from .localizer import discover_localizer

    return discover_localizer(nd, cfg)[0]


def event_error(cs: ConceptSet, marks: dict[str, np.ndarray]) -> float:
    """Mean over events of the smallest per-concept mean absolute error to that event."""
    X = cs.assignment.indices
    if not marks or cs.K == 0:
        return float("nan")
    per_event = [min(float(np.mean(np.abs(X[:, k] - m))) for k in range(cs.K)) for m in marks.values()]
    return float(np.mean(per_event))


@dataclass(frozen=True)
class AblationRow:
    variant: str
    lam: float
    init: str
    kept: int
    spread: float
    mean_abs_error: float
    final_loss: float
    monotone: bool


ABLATION_HEADER = "variant,lambda,init,kept,spread,mean_abs_error,final_loss,monotone"


def ablation_variants(cfg: DiscoveryConfig) -> list[DiscoveryConfig]:
    """Full model, MaxMI only (lambda 0) and penalty only (MI term off).

    The penalty-only run starts from an even spread: its usual starting point,
    the MI profile peaks, would smuggle the MI term back in.
    """
    return [
        replace(cfg, variant="full"),
        replace(cfg, variant="maxmi_only", lam=0.0),
        replace(cfg, variant="pd_only", init="uniform"),
    ]


def ablation(
    nd: NormalizedDataset, cfg: DiscoveryConfig, marks: dict[str, np.ndarray] | None = None
) -> tuple[list[AblationRow], list[ConceptSet]]:
    if cfg.lam == 0:
        cfg = replace(cfg, lam=None)
    rows, sets = [], []
    for variant_cfg in ablation_variants(cfg):
        cs = discover(nd, variant_cfg)
        trace = np.asarray(cs.loss_trace)
        spread_of = cs.unpruned if cs.unpruned is not None else cs.assignment
        rows.append(
            AblationRow(
                variant=variant_cfg.variant,
                lam=cs.lam,
                init=variant_cfg.init,
                kept=cs.K,
                spread=spread_of.spread(),
                mean_abs_error=event_error(cs, marks or {}),
                final_loss=float(trace[-1]) if trace.size else float("nan"),
                monotone=bool(np.all(np.diff(trace) <= 0)),
            )
        )
        sets.append(cs)
    return rows, sets


def ablation_csv(rows: list[AblationRow], config_hash: str = "") -> str:
    lines = [f"# config_hash={config_hash}"] if config_hash else []
    lines.append(ABLATION_HEADER)
    for r in rows:
        lines.append(
            f"{r.variant},{r.lam!r},{r.init},{r.kept},{r.spread!r},{r.mean_abs_error!r},{r.final_loss!r},{str(r.monotone).lower()}"
        )
    return "\n".join(lines) + "\n"

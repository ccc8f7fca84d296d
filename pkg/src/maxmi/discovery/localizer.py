"""Convolutional key-state localizer trained by evolution strategies.

The network sees a normalized trajectory with a concept embedding appended to
every row and emits a distribution over the T grid positions; its expected
position is the key-state index for that concept.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..data import NormalizedDataset
from .concepts import ConceptSet, DiscoveryConfig, IndexAssignment, build_concept_set
from .engines import initial_assignment, resolve_lambda
from .objective import concept_scores, diversity_penalty, nms

log = logging.getLogger(__name__)

KERNEL = 5
_PAD = KERNEL // 2
EMBED_SCALE = 10.0
_ORDER = ("E", "W1s", "W1e", "b1", "W2", "b2", "W3", "b3", "H1", "c1", "H2", "c2")


@dataclass
class LocalizerModel:
    """Weights of the localizer; `params` maps names to arrays.

    Conv kernels are stored as (KERNEL, C_in, C_out); the first layer is split
    into its state part W1s and its embedding part W1e.
    """

    params: dict[str, np.ndarray]
    T: int
    in_mean: np.ndarray
    in_std: np.ndarray
    loss_trace: list[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.params["E"].shape[0]

    @property
    def P(self) -> int:
        return self.params["E"].shape[1]

    @property
    def Q(self) -> int:
        return self.params["W1s"].shape[1]

    @property
    def chi(self) -> np.ndarray:
        return np.arange(self.T, dtype=np.float64)

    @property
    def embeddings(self) -> np.ndarray:
        return self.params["E"]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in _ORDER])

    def with_flat(self, vec: np.ndarray) -> "LocalizerModel":
        out, pos = {}, 0
        for n in _ORDER:
            shape = self.params[n].shape
            size = int(np.prod(shape))
            out[n] = vec[pos : pos + size].reshape(shape).copy()
            pos += size
        return LocalizerModel(out, self.T, self.in_mean, self.in_std, list(self.loss_trace))


def init_localizer(
    T: int, Q: int, K: int, rng: np.random.Generator, embed_dim: int = 16, channels: int = 32, hidden: int = 64,
    in_mean: np.ndarray | None = None, in_std: np.ndarray | None = None,
) -> LocalizerModel:
    """He-style conv/MLP weights; the output layer starts near zero so the first distributions are almost flat."""

    def he(shape, fan_in):
        return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)

    C, P = channels, embed_dim
    params = {
        # large enough that concept identity is not drowned out by the state features
        "E": EMBED_SCALE * rng.standard_normal((K, P)),
        "W1s": he((KERNEL, Q, C), KERNEL * (Q + P)),
        "W1e": he((KERNEL, P, C), KERNEL * (Q + P)),
        "b1": np.zeros(C),
        "W2": he((KERNEL, C, C), KERNEL * C),
        "b2": np.zeros(C),
        "W3": he((KERNEL, C, C), KERNEL * C),
        "b3": np.zeros(C),
        "H1": he((C, hidden), C),
        "c1": np.zeros(hidden),
        "H2": 0.01 * rng.standard_normal((hidden, T)),
        "c2": np.zeros(T),
    }
    return LocalizerModel(
        params,
        T,
        np.zeros(Q) if in_mean is None else np.asarray(in_mean, dtype=np.float64),
        np.ones(Q) if in_std is None else np.asarray(in_std, dtype=np.float64),
    )


def _conv(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """'same' 1-D convolution over axis -2 of (..., T, C_in) with zero padding."""
    T = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(_PAD, _PAD), (0, 0)]
    xp = np.pad(x, pad)
    out = b + xp[..., 0:T, :] @ w[0]
    for j in range(1, KERNEL):
        out = out + xp[..., j : j + T, :] @ w[j]
    return out


def _edge_mask(T: int) -> np.ndarray:
    """mask[t, j] = 1 when tap j reads a real (unpadded) row at output position t."""
    t = np.arange(T)[:, None] + np.arange(KERNEL)[None, :] - _PAD
    return ((t >= 0) & (t < T)).astype(np.float64)


def _head_features(model: LocalizerModel, states: np.ndarray) -> np.ndarray:
    """Hidden layer of the head, shape (N, K, hidden)."""
    p = model.params
    x = (np.asarray(states, dtype=np.float64) - model.in_mean) / model.in_std
    if x.ndim != 3 or x.shape[1] != model.T or x.shape[2] != model.Q:
        raise ValueError(f"expected trajectories of shape (N, {model.T}, {model.Q}), got {x.shape}")
    # the embedding is constant along time, so its share of layer 1 only depends on the padding at the edges
    emb = np.einsum("tj,jpc,kp->ktc", _edge_mask(model.T), p["W1e"], p["E"])
    h = _conv(x, p["W1s"], p["b1"])[:, None] + emb[None]
    h = np.maximum(h, 0.0)
    h = np.maximum(_conv(h, p["W2"], p["b2"]), 0.0)
    h = np.maximum(_conv(h, p["W3"], p["b3"]), 0.0)
    pooled = h.max(axis=2)
    return np.maximum(pooled @ p["H1"] + p["c1"], 0.0)


def localizer_logits(model: LocalizerModel, states: np.ndarray) -> np.ndarray:
    """Logits of shape (N, K, T) for a batch of normalized trajectories (N, T, Q)."""
    return _head_features(model, states) @ model.params["H2"] + model.params["c2"]


def fit_output_layer(
    model: LocalizerModel, states: np.ndarray, targets: np.ndarray, width: float = 2.0, ridge: float = 1e-3
) -> LocalizerModel:
    """Ridge fit of the output layer so each concept's logits form a bump at its target index.

    The rest of the network is left as is; targets has shape (N, K).
    """
    z = _head_features(model, states)
    N, K, H = z.shape
    design = np.concatenate([z.reshape(N * K, H), np.ones((N * K, 1))], axis=1)
    t = np.arange(model.T, dtype=np.float64)
    wanted = -0.5 * ((t[None, :] - np.asarray(targets, dtype=np.float64).reshape(-1, 1)) / width) ** 2
    gram = design.T @ design + ridge * np.eye(H + 1)
    coef = np.linalg.solve(gram, design.T @ wanted)
    params = dict(model.params)
    params["H2"], params["c2"] = coef[:H], coef[H]
    return LocalizerModel(params, model.T, model.in_mean, model.in_std, list(model.loss_trace))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def localizer_probs(model: LocalizerModel, states: np.ndarray) -> np.ndarray:
    return _softmax(localizer_logits(model, states))


def localizer_forward(model: LocalizerModel, trajectory: np.ndarray, k: int) -> np.ndarray:
    """Probability over the T grid positions that each state is concept k's key state."""
    trajectory = np.asarray(trajectory, dtype=np.float64)
    if trajectory.ndim != 2:
        raise ValueError("trajectory must be a T x Q matrix")
    if not (0 <= k < model.K):
        raise ValueError(f"concept id {k} outside [0, {model.K})")
    return localizer_probs(model, trajectory[None])[0, k]


def localizer_indices(model: LocalizerModel, states: np.ndarray) -> np.ndarray:
    """Soft-argmax positions, shape (N, K)."""
    return localizer_probs(model, states) @ model.chi


def _loss(nd: NormalizedDataset, indices: np.ndarray, cfg: DiscoveryConfig, lam: float) -> float:
    mi_part = -float(np.sum(concept_scores(nd, indices, cfg.delta_t, cfg.estimator))) if cfg.mi_weight else 0.0
    return cfg.mi_weight * mi_part + lam * diversity_penalty(indices)


def train_localizer(nd: NormalizedDataset, cfg: DiscoveryConfig, lam: float | None = None) -> LocalizerModel:
    """Evolution strategies on the combined loss of the soft-argmax assignment.

    The output layer is first fitted so the soft-argmax starts at the initial
    assignment.  Then antithetic Gaussian perturbations, centered-rank
    utilities and an Adam step on the rank-weighted direction.  The best model
    seen is kept, so the returned loss trace never increases; its first entry
    is the loss of the random initialization.
    """
    if lam is None:
        lam = resolve_lambda(nd, cfg)
    rng = np.random.default_rng([cfg.seed, 0x10CA])
    flat_states = nd.states.reshape(-1, nd.Q)
    std = flat_states.std(axis=0)
    std[std == 0] = 1.0
    model = init_localizer(
        nd.T, nd.Q, cfg.K, rng, cfg.embed_dim, cfg.channels, cfg.hidden, flat_states.mean(axis=0), std
    )

    def evaluate(m: LocalizerModel) -> float:
        value = _loss(nd, localizer_indices(m, nd.states), cfg, lam)
        if not math.isfinite(value):
            raise FloatingPointError(f"localizer loss is not finite ({value}); weights norm {np.linalg.norm(m.flat()):.3g}")
        return value

    theta = model.flat()
    best_theta, best = theta.copy(), evaluate(model)
    trace = [best]
    # start the search from the same initial assignment the coordinate engine uses
    model = fit_output_layer(model, nd.states, initial_assignment(nd, cfg).indices)
    theta = model.flat()
    start = evaluate(model)
    if start < best:
        best_theta, best = theta.copy(), start
    trace.append(best)
    half = cfg.population // 2
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    b1, b2, eps_adam = 0.9, 0.999, 1e-8
    for it in range(1, cfg.iterations + 1):
        noise = rng.standard_normal((half, theta.size))
        noise = np.concatenate([noise, -noise])
        losses = np.empty(len(noise))
        for j, e in enumerate(noise):
            losses[j] = evaluate(model.with_flat(theta + cfg.es_sigma * e))
            if losses[j] < best:
                best, best_theta = losses[j], theta + cfg.es_sigma * e
        ranks = np.empty(len(losses))
        ranks[np.argsort(-losses, kind="stable")] = np.arange(len(losses))
        util = ranks / (len(losses) - 1) - 0.5
        grad = -(util @ noise) / (len(noise) * cfg.es_sigma)
        m1 = b1 * m1 + (1 - b1) * grad
        m2 = b2 * m2 + (1 - b2) * grad**2
        step = (m1 / (1 - b1**it)) / (np.sqrt(m2 / (1 - b2**it)) + eps_adam)
        theta = theta - cfg.es_lr * step
        center = evaluate(model.with_flat(theta))
        if center < best:
            best, best_theta = center, theta.copy()
        trace.append(best)
        if it % 10 == 0:
            log.info("localizer iteration %d best loss %.5f", it, best)
    out = model.with_flat(best_theta)
    out.loss_trace = trace
    return out


def discover_localizer(nd: NormalizedDataset, cfg: DiscoveryConfig) -> tuple[ConceptSet, LocalizerModel]:
    lam = resolve_lambda(nd, cfg)
    model = train_localizer(nd, cfg, lam)
    X = localizer_indices(model, nd.states)
    scores = concept_scores(nd, X, cfg.delta_t, cfg.estimator)
    means = X.mean(axis=0)
    kept = nms(list(zip(means, scores)), cfg.resolved_nms_window(nd.T))
    cols = sorted(int(np.flatnonzero((means == m) & (scores == s))[0]) for m, s in kept)
    cs = build_concept_set(
        nd,
        X[:, cols],
        scores[cols],
        engine="localizer",
        delta_t=cfg.delta_t,
        lam=lam,
        loss_trace=model.loss_trace,
        unpruned=IndexAssignment(X, nd.T),
        unpruned_scores=scores,
    )
    return cs, model

"""Behavior cloning with auxiliary key-state prediction heads, plus rollout and evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset
from .discovery.concepts import ConceptSet
from .tasks import ANGLE_STEP_MAX, V_MAX, EnvState, ScriptedExpert, TaskSpec, initial_state, run_episode

WEIGHTS_TAG = "MAXMI-POLICY v1"
SPLITS = ("seen", "unseen")
_SPLIT_STREAM = {"seen": 0, "unseen": 1}


@dataclass(frozen=True)
class PolicyConfig:
    alpha: float = 0.1
    learning_rate: float = 0.03
    epochs: int = 300
    batch_size: int = 32
    hidden_sizes: tuple[int, ...] = (128, 128)
    seed: int = 0
    clip_norm: float = 10.0
    momentum: float = 0.9
    smooth_eps: float = 1e-3

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError("alpha must be finite and >= 0")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be a non-empty list of positive widths")
        if not (0 <= self.momentum < 1):
            raise ValueError("momentum must lie in [0, 1)")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


class PolicyModel:
    """tanh MLP trunk with a linear action head and K linear key-state heads.

    Inputs are standardized and head outputs de-standardized with statistics
    stored in the model, so every loss is measured in task units.
    """

    def __init__(self, weights: dict[str, np.ndarray], x_mean, x_std, a_mean=None, a_std=None):
        self.weights = {k: np.array(v, dtype=np.float64) for k, v in weights.items()}
        self.x_mean = np.asarray(x_mean, dtype=np.float64)
        self.x_std = np.asarray(x_std, dtype=np.float64)
        A = self.weights["Wa"].shape[1]
        self.a_mean = np.zeros(A) if a_mean is None else np.asarray(a_mean, dtype=np.float64)
        self.a_std = np.ones(A) if a_std is None else np.asarray(a_std, dtype=np.float64)

    @classmethod
    def init(cls, Q: int, A: int, K: int, hidden: tuple[int, ...], rng: np.random.Generator,
             x_mean=None, x_std=None, a_mean=None, a_std=None) -> "PolicyModel":
        w = {}
        sizes = (Q,) + tuple(hidden)
        for l in range(len(hidden)):
            w[f"W{l}"] = rng.standard_normal((sizes[l], sizes[l + 1])) / math.sqrt(sizes[l])
            w[f"b{l}"] = np.zeros(sizes[l + 1])
        H = sizes[-1]
        w["Wa"] = rng.standard_normal((H, A)) * 0.1 / math.sqrt(H)
        w["ba"] = np.zeros(A)
        w["Wk"] = rng.standard_normal((K, H, Q)) * 0.1 / math.sqrt(H)
        w["bk"] = np.zeros((K, Q))
        return cls(w, np.zeros(Q) if x_mean is None else x_mean, np.ones(Q) if x_std is None else x_std, a_mean, a_std)

    @property
    def depth(self) -> int:
        return sum(1 for k in self.weights if k.startswith("W") and k[1:].isdigit())

    @property
    def Q(self) -> int:
        return self.weights["W0"].shape[0]

    @property
    def A(self) -> int:
        return self.weights["Wa"].shape[1]

    @property
    def K(self) -> int:
        return self.weights["Wk"].shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(self.weights[f"W{l}"].shape[1] for l in range(self.depth))

    def names(self) -> list[str]:
        return [f"{p}{l}" for l in range(self.depth) for p in ("W", "b")] + ["Wa", "ba", "Wk", "bk"]

    def forward(self, states: np.ndarray):
        """(actions B x A, key predictions B x K x Q, hidden activations)."""
        h = (np.atleast_2d(states) - self.x_mean) / self.x_std
        acts = [h]
        for l in range(self.depth):
            h = np.tanh(h @ self.weights[f"W{l}"] + self.weights[f"b{l}"])
            acts.append(h)
        a = (h @ self.weights["Wa"] + self.weights["ba"]) * self.a_std + self.a_mean
        K, H, Q = self.weights["Wk"].shape
        flat_keys = h @ self.weights["Wk"].transpose(1, 0, 2).reshape(H, K * Q)
        keys = (flat_keys.reshape(len(h), K, Q) + self.weights["bk"]) * self.x_std + self.x_mean
        return a, keys, acts

    def act(self, state: EnvState) -> np.ndarray:
        return self.forward(state.observation()[None])[0][0]

    __call__ = act

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights[n].ravel() for n in self.names()])

    def with_flat(self, vec: np.ndarray) -> "PolicyModel":
        w, pos = {}, 0
        for n in self.names():
            size = self.weights[n].size
            w[n] = vec[pos : pos + size].reshape(self.weights[n].shape)
            pos += size
        return PolicyModel(w, self.x_mean, self.x_std, self.a_mean, self.a_std)

    # --- weight file ---

    def dumps(self, config_hash: str = "") -> str:
        head = f"{WEIGHTS_TAG} Q={self.Q} A={self.A} K={self.K} hidden={','.join(map(str, self.hidden_sizes))}"
        lines = [head + (f" config_hash={config_hash}" if config_hash else "")]
        blocks = [("x_mean", self.x_mean), ("x_std", self.x_std), ("a_mean", self.a_mean), ("a_std", self.a_std)]
        blocks += [(n, self.weights[n]) for n in self.names()]
        for name, arr in blocks:
            lines.append(f"{name} {' '.join(map(str, arr.shape))}")
            lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PolicyModel":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(WEIGHTS_TAG):
            raise ValueError("not a version 1 policy weight file")
        arrays = {}
        it = iter(lines[1:])
        for head in it:
            if not head.strip():
                continue
            name, *shape = head.split()
            body = next(it, None)
            if body is None:
                raise ValueError(f"weight block {name} has no values")
            vals = np.array([float(v) for v in body.split()]) if body.strip() else np.empty(0)
            shape = tuple(int(s) for s in shape)
            if vals.size != int(np.prod(shape)):
                raise ValueError(f"weight block {name}: expected {int(np.prod(shape))} values, got {vals.size}")
            arrays[name] = vals.reshape(shape)
        try:
            stats = [arrays.pop(n) for n in ("x_mean", "x_std", "a_mean", "a_std")]
        except KeyError as err:
            raise ValueError(f"weight file lacks block {err}") from None
        return cls(arrays, *stats)


# --- loss and gradients ---


def _snorm(r: np.ndarray, eps: float) -> np.ndarray:
    """Euclidean norm over the last axis, smoothed at the origin."""
    return np.sqrt(np.sum(r * r, axis=-1) + eps * eps)


def loss_and_grad(
    model: PolicyModel,
    states: np.ndarray,
    actions: np.ndarray,
    key_targets: np.ndarray,
    alpha: float,
    eps: float = 1e-6,
    need_grad: bool = True,
):
    """Mean over samples of |a_hat - a| + alpha * sum_k |s_hat_k - s_key_k|.

    key_targets has shape (B, K, Q).  Returns (loss, action_term, aux_term, grads).
    """
    B = states.shape[0]
    a, keys, acts = model.forward(states)
    ra = a - actions
    na = _snorm(ra, eps)
    action_term = float(np.mean(na))
    if model.K:
        rk = keys - key_targets
        nk = _snorm(rk, eps)
        aux_term = float(np.mean(np.sum(nk, axis=1)))
    else:
        aux_term = 0.0
    loss = action_term + alpha * aux_term
    if not need_grad:
        return loss, action_term, aux_term, None

    w = model.weights
    g: dict[str, np.ndarray] = {}
    h = acts[-1]
    da = ra / na[:, None] / B * model.a_std
    g["Wa"] = h.T @ da
    g["ba"] = da.sum(axis=0)
    dh = da @ w["Wa"].T
    if model.K:
        dk = alpha * rk / nk[..., None] / B * model.x_std
        K, H, Q = w["Wk"].shape
        dk2 = dk.reshape(B, K * Q)
        g["Wk"] = (h.T @ dk2).reshape(H, K, Q).transpose(1, 0, 2)
        g["bk"] = dk.sum(axis=0)
        dh = dh + dk2 @ w["Wk"].transpose(1, 0, 2).reshape(H, K * Q).T
    else:
        g["Wk"] = np.zeros_like(w["Wk"])
        g["bk"] = np.zeros_like(w["bk"])
    for l in range(model.depth - 1, -1, -1):
        dz = dh * (1.0 - acts[l + 1] ** 2)
        g[f"W{l}"] = acts[l].T @ dz
        g[f"b{l}"] = dz.sum(axis=0)
        dh = dz @ w[f"W{l}"].T
    return loss, action_term, aux_term, g


def gradient_check(
    model: PolicyModel,
    states: np.ndarray,
    actions: np.ndarray,
    key_targets: np.ndarray,
    alpha: float,
    probes: int = 10,
    h: float = 1e-6,
    seed: int = 0,
) -> list[float]:
    """Relative error between analytic and central-difference gradients at random weights."""
    rng = np.random.default_rng(seed)
    _, _, _, g = loss_and_grad(model, states, actions, key_targets, alpha)
    flat_g = np.concatenate([g[n].ravel() for n in model.names()])
    theta = model.flat()
    errs = []
    for j in rng.choice(theta.size, size=probes, replace=False):
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        lu = loss_and_grad(model.with_flat(up), states, actions, key_targets, alpha, need_grad=False)[0]
        ld = loss_and_grad(model.with_flat(dn), states, actions, key_targets, alpha, need_grad=False)[0]
        fd = (lu - ld) / (2 * h)
        errs.append(abs(fd - flat_g[j]) / max(abs(fd), abs(flat_g[j]), 1e-8))
    return errs


# --- training ---


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    action_loss: float
    aux_loss: float


@dataclass
class TrainingData:
    states: np.ndarray
    actions: np.ndarray
    key_targets: np.ndarray
    K: int


def training_arrays(dataset: Dataset, concepts: ConceptSet | None) -> TrainingData:
    """Flatten raw-time trajectories into (state, action, key-state targets) samples."""
    Q, A = dataset.schema
    if A == 0:
        raise ValueError("behavior cloning needs a dataset with actions")
    K = 0 if concepts is None else concepts.K
    if concepts is not None:
        ids = tuple(t.id for t in dataset)
        if ids != tuple(concepts.trajectory_ids):
            raise ValueError("concept set does not reference this dataset's trajectories")
        raw = concepts.rounded_raw()
    S, Acts, Keys = [], [], []
    for i, traj in enumerate(dataset):
        S.append(traj.states)
        Acts.append(traj.actions)
        if K:
            idx = np.clip(raw[i], 0, traj.length - 1)
            target = traj.states[idx]
        else:
            target = np.zeros((0, Q))
        Keys.append(np.broadcast_to(target, (traj.length, K, Q)))
    return TrainingData(np.concatenate(S), np.concatenate(Acts), np.concatenate(Keys), K)


def train_bc(
    dataset: Dataset, concepts: ConceptSet | None, cfg: PolicyConfig
) -> tuple[PolicyModel, list[EpochRecord]]:
    """Mini-batch gradient descent (fixed step, momentum, global-norm clipping).

    Records the full-data loss before training and after every epoch.
    """
    data = training_arrays(dataset, concepts)
    rng = np.random.default_rng([cfg.seed, 0xBC])
    std = data.states.std(axis=0)
    std[std == 0] = 1.0
    a_std = data.actions.std(axis=0)
    a_std[a_std == 0] = 1.0
    model = PolicyModel.init(
        data.states.shape[1], data.actions.shape[1], data.K, cfg.hidden_sizes, rng,
        data.states.mean(axis=0), std, data.actions.mean(axis=0), a_std,
    )

    def record(epoch: int) -> EpochRecord:
        loss, la, lk, _ = loss_and_grad(
            model, data.states, data.actions, data.key_targets, cfg.alpha, cfg.smooth_eps, need_grad=False
        )
        if not math.isfinite(loss):
            raise FloatingPointError(f"training loss became non-finite at epoch {epoch}")
        return EpochRecord(epoch, loss, la, lk)

    trace = [record(0)]
    velocity = {n: np.zeros_like(v) for n, v in model.weights.items()}
    n = data.states.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            b = order[start : start + cfg.batch_size]
            _, _, _, g = loss_and_grad(
                model, data.states[b], data.actions[b], data.key_targets[b], cfg.alpha, cfg.smooth_eps
            )
            gnorm = math.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
            scale = min(1.0, cfg.clip_norm / gnorm) if gnorm > 0 else 1.0
            for name, grad in g.items():
                velocity[name] = cfg.momentum * velocity[name] - cfg.learning_rate * scale * grad
                model.weights[name] += velocity[name]
        trace.append(record(epoch))
    return model, trace


def loss_trace_csv(trace: list[EpochRecord], config_hash: str = "") -> str:
    lines = [f"# config_hash={config_hash}"] if config_hash else []
    lines.append("epoch,loss,action_loss,aux_loss")
    lines += [f"{r.epoch},{r.loss!r},{r.action_loss!r},{r.aux_loss!r}" for r in trace]
    return "\n".join(lines) + "\n"


# --- rollouts ---


class ExpertPolicy:
    """The planning expert exposed through the policy interface (fresh plan per episode)."""

    def __init__(self, spec: TaskSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.reset()

    def reset(self) -> None:
        self.expert = ScriptedExpert(self.spec, self.rng)

    def __call__(self, state: EnvState) -> np.ndarray:
        a = self.expert.act(state)
        return np.zeros(self.spec.action_dim) if a is None else a


class ZeroPolicy:
    def __init__(self, action_dim: int):
        self.action_dim = action_dim

    def __call__(self, state: EnvState) -> np.ndarray:
        return np.zeros(self.action_dim)


class RandomPolicy:
    """Uniform over the box of actions the environment does not clip away."""

    def __init__(self, spec: TaskSpec, rng: np.random.Generator):
        self.bound = np.array([V_MAX, V_MAX, 1.0, ANGLE_STEP_MAX][: spec.action_dim])
        self.rng = rng

    def __call__(self, state: EnvState) -> np.ndarray:
        return self.rng.uniform(-self.bound, self.bound)


@dataclass
class RolloutResult:
    states: np.ndarray
    actions: np.ndarray
    marks: dict[str, int]
    flags: dict[str, bool]

    @property
    def success(self) -> bool:
        return all(self.flags.values())


def episode_rng(spec: TaskSpec, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, int(index), 7919, int(stream)])


def rollout(
    policy: Callable[[EnvState], np.ndarray] | PolicyModel,
    spec: TaskSpec,
    index: int = 0,
    stream: int = 0,
    start: EnvState | None = None,
) -> RolloutResult:
    """Closed-loop episode from initial configuration `index` of the given stream."""
    if isinstance(policy, PolicyModel) and policy.A != spec.action_dim:
        raise ValueError(f"policy emits {policy.A}-d actions, task needs {spec.action_dim}")
    if start is None:
        start = initial_state(spec, index, stream)
    if hasattr(policy, "reset"):
        policy.reset()
    ep = run_episode(spec, start, policy, episode_rng(spec, index, stream), stop_on_success=True)
    flags = {ev: ev in ep.marks for ev in spec.events}
    return RolloutResult(ep.states, ep.actions, ep.marks, flags)


def evaluate(
    policy: Callable[[EnvState], np.ndarray] | PolicyModel,
    spec: TaskSpec,
    n_episodes: int,
    split: str = "seen",
    workers: int | None = None,
) -> dict:
    """Success rates overall and per sub-task.

    The seen split replays the training initial configurations 0..n-1; the
    unseen split draws from a disjoint random stream.  Every episode has its
    own seed, so rates do not depend on `workers`.  Only stateless weight
    policies run in parallel; stateful callables run serially.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    stream = _SPLIT_STREAM[split]
    counts = {ev: 0 for ev in spec.events}
    wins = 0
    episodes = range(n_episodes)
    if workers and workers > 1 and isinstance(policy, PolicyModel):
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda i: rollout(policy, spec, i, stream), episodes))
    else:
        results = [rollout(policy, spec, i, stream) for i in episodes]
    for res in results:
        for ev, ok in res.flags.items():
            counts[ev] += ok
        wins += res.success
    return {
        "split": split,
        "n": n_episodes,
        "success_rate": wins / n_episodes,
        "subtask_rates": {ev: c / n_episodes for ev, c in counts.items()},
    }


def report_json(report: dict, config_hash: str = "") -> str:
    doc = dict(report)
    if config_hash:
        doc["config_hash"] = config_hash
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"

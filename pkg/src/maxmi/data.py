"""Trajectory containers, temporal normalization and the text dataset format."""

from __future__ import annotations

import hashlib
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FORMAT_TAG = "MAXMI-DS"
FORMAT_VERSION = "v1"
DEFAULT_T = 128


class DatasetFormatError(ValueError):
    """Raised when a dataset file or in-memory dataset violates the schema."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    id: str
    states: np.ndarray
    actions: np.ndarray | None = None
    event_marks: tuple[tuple[str, int], ...] = ()

    def __post_init__(self) -> None:
        if not self.id or any(c.isspace() for c in self.id):
            raise DatasetFormatError(f"trajectory id {self.id!r} must be non-empty without whitespace")
        states = _frozen(self.states)
        if states.ndim != 2 or states.shape[0] < 2 or states.shape[1] < 1:
            raise DatasetFormatError(f"trajectory {self.id}: states must be a T x Q matrix with T >= 2")
        if not np.all(np.isfinite(states)):
            row = int(np.argwhere(~np.isfinite(states))[0, 0])
            raise DatasetFormatError(f"trajectory {self.id}: non-finite state at row {row}")
        object.__setattr__(self, "states", states)
        if self.actions is not None:
            actions = _frozen(self.actions)
            if actions.ndim != 2 or actions.shape[0] != states.shape[0] or actions.shape[1] < 1:
                raise DatasetFormatError(f"trajectory {self.id}: actions must be a T x A matrix matching states")
            if not np.all(np.isfinite(actions)):
                row = int(np.argwhere(~np.isfinite(actions))[0, 0])
                raise DatasetFormatError(f"trajectory {self.id}: non-finite action at row {row}")
            object.__setattr__(self, "actions", actions)
        marks = tuple((str(label), int(index)) for label, index in self.event_marks)
        prev = -1
        for label, index in marks:
            if not label or any(c.isspace() for c in label):
                raise DatasetFormatError(f"trajectory {self.id}: bad mark label {label!r}")
            if index <= prev or index >= states.shape[0]:
                raise DatasetFormatError(
                    f"trajectory {self.id}: event marks must be strictly increasing within [0, {states.shape[0] - 1}]"
                )
            prev = index
        object.__setattr__(self, "event_marks", marks)

    @property
    def length(self) -> int:
        return self.states.shape[0]

    def mark(self, label: str) -> int | None:
        for name, index in self.event_marks:
            if name == label:
                return index
        return None


@dataclass(frozen=True)
class Dataset:
    trajectories: tuple[Trajectory, ...]
    header: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        trajs = tuple(self.trajectories)
        if not trajs:
            raise DatasetFormatError("dataset needs at least one trajectory")
        q = trajs[0].states.shape[1]
        a = 0 if trajs[0].actions is None else trajs[0].actions.shape[1]
        seen = set()
        for traj in trajs:
            if traj.states.shape[1] != q:
                raise DatasetFormatError(f"trajectory {traj.id}: Q={traj.states.shape[1]} does not match schema Q={q}")
            ta = 0 if traj.actions is None else traj.actions.shape[1]
            if ta != a:
                raise DatasetFormatError(f"trajectory {traj.id}: A={ta} does not match schema A={a}")
            if traj.id in seen:
                raise DatasetFormatError(f"duplicate trajectory id {traj.id}")
            seen.add(traj.id)
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "header", dict(self.header))

    @property
    def schema(self) -> tuple[int, int]:
        first = self.trajectories[0]
        return first.states.shape[1], (0 if first.actions is None else first.actions.shape[1])

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def labels(self) -> list[str]:
        """Event labels in order of first appearance."""
        out: list[str] = []
        for traj in self.trajectories:
            for label, _ in traj.event_marks:
                if label not in out:
                    out.append(label)
        return out


@dataclass(frozen=True)
class NormalizedDataset:
    """N trajectories resampled onto a common grid of T steps."""

    states: np.ndarray
    raw_lengths: tuple[int, ...]
    ids: tuple[str, ...]
    actions: np.ndarray | None = None
    event_marks: tuple[tuple[tuple[str, int], ...], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", _frozen(self.states))
        if self.actions is not None:
            object.__setattr__(self, "actions", _frozen(self.actions))

    @property
    def T(self) -> int:
        return self.states.shape[1]

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def Q(self) -> int:
        return self.states.shape[2]

    def to_raw(self, i: int, normalized_index: float) -> float:
        return map_index(normalized_index, self.raw_lengths[i], self.T)

    def index_maps(self) -> list[tuple[float, float]]:
        """Per trajectory (slope, intercept) of the normalized -> raw index map."""
        return [((n - 1) / (self.T - 1), 0.0) for n in self.raw_lengths]

    def normalized_marks(self, label: str) -> np.ndarray:
        """Per-trajectory mark position on the normalized grid (NaN when absent)."""
        out = np.full(self.N, np.nan)
        for i, marks in enumerate(self.event_marks):
            for name, index in marks:
                if name == label:
                    out[i] = index * (self.T - 1) / (self.raw_lengths[i] - 1)
        return out

    def as_dataset(self) -> Dataset:
        trajs = []
        for i in range(self.N):
            acts = None if self.actions is None else self.actions[i]
            trajs.append(Trajectory(self.ids[i], self.states[i], acts))
        return Dataset(tuple(trajs))


def normalize(dataset: Dataset, T: int = DEFAULT_T) -> NormalizedDataset:
    """Resample every trajectory to T uniformly spaced steps by per-dimension linear interpolation."""
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    states, actions = [], []
    has_actions = dataset.schema[1] > 0
    for traj in dataset:
        grid = np.linspace(0.0, traj.length - 1, T)
        src = np.arange(traj.length, dtype=np.float64)
        states.append(_interp_columns(grid, src, traj.states))
        if has_actions:
            actions.append(_interp_columns(grid, src, traj.actions))
    return NormalizedDataset(
        states=np.stack(states),
        raw_lengths=tuple(t.length for t in dataset),
        ids=tuple(t.id for t in dataset),
        actions=np.stack(actions) if has_actions else None,
        event_marks=tuple(t.event_marks for t in dataset),
    )


def _interp_columns(grid: np.ndarray, src: np.ndarray, values: np.ndarray) -> np.ndarray:
    if len(grid) == len(src):
        # grid points coincide with the source samples
        return np.array(values, dtype=np.float64)
    return np.stack([np.interp(grid, src, values[:, q]) for q in range(values.shape[1])], axis=1)


def map_index(normalized_index: float, raw_length: int, T: int) -> float:
    """Map a (real) position on the normalized grid back to raw time."""
    if T < 2 or raw_length < 1:
        raise ValueError("T must be >= 2 and raw_length >= 1")
    if not (0.0 <= normalized_index <= T - 1):
        raise ValueError(f"normalized index {normalized_index} outside [0, {T - 1}]")
    if normalized_index == T - 1:
        return float(raw_length - 1)
    return float(normalized_index) * (raw_length - 1) / (T - 1)


# --- file format -----------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_dataset(dataset: Dataset) -> str:
    q, a = dataset.schema
    buf = io.StringIO()
    extra = "".join(f" {k}={v}" for k, v in sorted(dataset.header.items()))
    buf.write(f"{FORMAT_TAG} {FORMAT_VERSION} N={len(dataset)} Q={q} A={a}{extra}\n")
    for traj in dataset:
        buf.write(f"TRAJ {traj.id} T={traj.length} MARKS={len(traj.event_marks)}\n")
        for label, index in traj.event_marks:
            buf.write(f"MARK {label} {index}\n")
        rows = traj.states if traj.actions is None else np.hstack([traj.states, traj.actions])
        for row in rows:
            buf.write(" ".join(_fmt(v) for v in row))
            buf.write("\n")
    return buf.getvalue()


def save_dataset(dataset: Dataset, path: str | os.PathLike) -> None:
    atomic_write_text(path, dumps_dataset(dataset))


def _kv(token: str, key: str, where: str) -> int:
    name, _, value = token.partition("=")
    if name != key or not value:
        raise DatasetFormatError(f"{where}: expected {key}=<int>, got {token!r}")
    try:
        return int(value)
    except ValueError:
        raise DatasetFormatError(f"{where}: {key} is not an integer: {value!r}") from None


def loads_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("empty dataset file")
    head = lines[0].split()
    if len(head) < 5 or head[0] != FORMAT_TAG:
        raise DatasetFormatError(f"malformed header: {lines[0]!r}")
    if head[1] != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {head[1]!r}")
    n = _kv(head[2], "N", "header")
    q = _kv(head[3], "Q", "header")
    a = _kv(head[4], "A", "header")
    if n < 1 or q < 1 or a < 0:
        raise DatasetFormatError(f"malformed header: {lines[0]!r}")
    extra = {}
    for token in head[5:]:
        key, sep, value = token.partition("=")
        if not sep:
            raise DatasetFormatError(f"malformed header token {token!r}")
        extra[key] = value
    pos = 1
    trajs = []
    for _ in range(n):
        if pos >= len(lines):
            raise DatasetFormatError(f"expected {n} trajectories, file ended after {len(trajs)}")
        parts = lines[pos].split()
        if len(parts) != 4 or parts[0] != "TRAJ":
            raise DatasetFormatError(f"line {pos + 1}: malformed trajectory header {lines[pos]!r}")
        tid = parts[1]
        t = _kv(parts[2], "T", f"trajectory {tid}")
        m = _kv(parts[3], "MARKS", f"trajectory {tid}")
        pos += 1
        marks = []
        for _ in range(m):
            mp = lines[pos].split() if pos < len(lines) else []
            if len(mp) != 3 or mp[0] != "MARK":
                raise DatasetFormatError(f"trajectory {tid}: malformed mark line {pos + 1}")
            try:
                marks.append((mp[1], int(mp[2])))
            except ValueError:
                raise DatasetFormatError(f"trajectory {tid}: mark index not an integer on line {pos + 1}") from None
            pos += 1
        rows = np.empty((t, q + a))
        for r in range(t):
            if pos >= len(lines):
                raise DatasetFormatError(f"trajectory {tid}: file ended at row {r}")
            fields = lines[pos].split()
            if len(fields) != q + a:
                raise DatasetFormatError(
                    f"trajectory {tid} row {r}: expected {q + a} values, got {len(fields)}"
                )
            try:
                rows[r] = [float(v) for v in fields]
            except ValueError:
                raise DatasetFormatError(f"trajectory {tid} row {r}: unparseable value") from None
            if not np.all(np.isfinite(rows[r])):
                raise DatasetFormatError(f"trajectory {tid} row {r}: non-finite value")
            pos += 1
        trajs.append(
            Trajectory(tid, rows[:, :q], rows[:, q:] if a else None, tuple(marks))
        )
    if any(line.strip() for line in lines[pos:]):
        raise DatasetFormatError(f"trailing content after {n} trajectories at line {pos + 1}")
    return Dataset(tuple(trajs), header=extra)


def load_dataset(path: str | os.PathLike) -> Dataset:
    return loads_dataset(Path(path).read_text())


def dataset_csv(dataset: Dataset) -> str:
    """Long-form CSV: one row per (trajectory, time, dimension, value)."""
    buf = io.StringIO()
    buf.write("trajectory,time,dimension,value\n")
    for traj in dataset:
        for t, row in enumerate(traj.states):
            for d, v in enumerate(row):
                buf.write(f"{traj.id},{t},{d},{_fmt(v)}\n")
    return buf.getvalue()


def content_hash(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary sibling file and rename, so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    try:
        with open(tmp, "w", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def stack_marks(nd: NormalizedDataset, labels: Iterable[str]) -> dict[str, np.ndarray]:
    return {label: nd.normalized_marks(label) for label in labels}


def mean_mark(nd: NormalizedDataset, label: str) -> float:
    marks = nd.normalized_marks(label)
    marks = marks[np.isfinite(marks)]
    return float(np.mean(marks)) if len(marks) else math.nan


def subset(dataset: Dataset, indices: Sequence[int]) -> Dataset:
    return Dataset(tuple(dataset.trajectories[i] for i in indices), header=dataset.header)

"""Scripted-expert demonstrations on two planar manipulation tasks.

Both tasks live in an axis-aligned box.  The agent is a point gripper; an
object (a cube, or a peg with an orientation) is latched to the gripper when
the gripper is closed in contact with it.  The expert follows a planned
reference path: free transit segments bend through a random via-point,
while every key event is reached through a short straight final approach
from a fixed direction.  Each demonstration runs at its own tempo, which
scales all of its phase durations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import Dataset, Trajectory

EPS_CONTACT = 0.02
EPS_GOAL = 0.03
EPS_ANGLE = 0.05
V_MAX = 0.05
ANGLE_STEP_MAX = 0.1
EXPERT_GAIN = 0.5
RETRY_CAP = 10

TASK_KINDS = ("reach_grasp_place", "peg_align_insert")
EVENTS = {
    "reach_grasp_place": ("grasp", "place"),
    "peg_align_insert": ("grasp", "align", "insert"),
}

# geometry, in workspace fractions
_GRASP_APPROACH = np.array([0.0, -0.12])
_ALIGN_APPROACH = np.array([-0.12, 0.0])
_INSERT_OFFSET = np.array([0.15, 0.0])
_TEMPO = (0.8, 1.25)
_VIA_SD = 0.15
_MIN_SEPARATION = 0.3


class ExpertFailure(RuntimeError):
    """The scripted expert did not finish within the horizon after all retries."""


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "reach_grasp_place"
    horizon: int = 200
    state_noise_sd: float = 0.01
    action_noise_sd: float = 0.0
    seed: int = 0
    workspace_bounds: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 0.0), (1.0, 1.0))

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if self.horizon < 20:
            raise ValueError("horizon must be >= 20")
        for name in ("state_noise_sd", "action_noise_sd"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")
        lo, hi = (tuple(map(float, b)) for b in self.workspace_bounds)
        if len(lo) != 2 or len(hi) != 2 or not (hi[0] > lo[0] and hi[1] > lo[1]):
            raise ValueError("workspace_bounds must be a non-degenerate 2-D box")
        object.__setattr__(self, "workspace_bounds", (lo, hi))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.workspace_bounds[0])

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.workspace_bounds[1])

    @property
    def events(self) -> tuple[str, ...]:
        return EVENTS[self.kind]

    @property
    def state_dim(self) -> int:
        return 7 if self.kind == "reach_grasp_place" else 8

    @property
    def action_dim(self) -> int:
        return 3 if self.kind == "reach_grasp_place" else 4

    def to_world(self, frac) -> np.ndarray:
        return self.lo + np.asarray(frac, dtype=float) * (self.hi - self.lo)

    @property
    def scale(self) -> float:
        return float(np.min(self.hi - self.lo))


@dataclass(frozen=True)
class EnvState:
    agent_pos: np.ndarray
    object_pos: np.ndarray
    goal_pos: np.ndarray
    gripper: float = 0.0
    held: bool = False
    peg_angle: float | None = None
    events: tuple[str, ...] = field(default=())

    @property
    def hole_pos(self) -> np.ndarray:
        # the peg's insertion goal is the hole
        return self.goal_pos

    def observation(self) -> np.ndarray:
        parts = [self.agent_pos, self.object_pos, self.goal_pos, [self.gripper]]
        if self.peg_angle is not None:
            parts.append([self.peg_angle])
        return np.concatenate(parts).astype(float)

    @classmethod
    def from_observation(cls, obs, kind: str) -> "EnvState":
        obs = np.asarray(obs, dtype=float)
        agent, obj, goal, grip = obs[0:2], obs[2:4], obs[4:6], float(obs[6])
        held = grip >= 0.5 and np.linalg.norm(agent - obj) < EPS_CONTACT
        angle = float(obs[7]) if kind == "peg_align_insert" else None
        return cls(agent.copy(), obj.copy(), goal.copy(), grip, bool(held), angle)


def alignment_waypoint(spec: TaskSpec, hole: np.ndarray) -> np.ndarray:
    return hole - _INSERT_OFFSET * spec.scale


def _check_events(state: EnvState, spec: TaskSpec) -> EnvState:
    ev = list(state.events)
    if state.held and "grasp" not in ev:
        ev.append("grasp")
    if spec.kind == "reach_grasp_place":
        if state.held and "place" not in ev and np.linalg.norm(state.object_pos - state.goal_pos) < EPS_GOAL:
            ev.append("place")
    else:
        way = alignment_waypoint(spec, state.goal_pos)
        if (
            state.held
            and "align" not in ev
            and np.linalg.norm(state.object_pos - way) < EPS_CONTACT
            and abs(state.peg_angle) < EPS_ANGLE
        ):
            ev.append("align")
        if (
            state.held
            and "align" in ev
            and "insert" not in ev
            and abs(state.peg_angle) < EPS_ANGLE
            and np.linalg.norm(state.object_pos - state.goal_pos) < EPS_GOAL
        ):
            ev.append("insert")
    if tuple(ev) == state.events:
        return state
    return replace(state, events=tuple(ev))


def _truncated_noise(rng: np.random.Generator | None, sd: float, size: int) -> np.ndarray:
    if rng is None or sd == 0:
        return np.zeros(size)
    # redraw rather than rescale so the 3-sd ball is never hit exactly
    while True:
        z = rng.standard_normal(size) * sd
        if np.linalg.norm(z) < 3 * sd:
            return z


def _clip_step(delta: np.ndarray, limit: float = V_MAX) -> np.ndarray:
    n = float(np.linalg.norm(delta))
    return delta * (limit / n) if n > limit else delta


def env_step(state: EnvState, action, spec: TaskSpec, rng: np.random.Generator | None = None) -> EnvState:
    """Kinematic update: move, actuate the gripper latch, carry the held object, add process noise."""
    action = np.asarray(action, dtype=float)
    lo, hi = spec.lo, spec.hi
    move = _clip_step(action[:2])
    agent = np.clip(state.agent_pos + move + _truncated_noise(rng, spec.state_noise_sd, 2), lo, hi)
    gripper = float(np.clip(state.gripper + action[2], 0.0, 1.0))
    angle = state.peg_angle
    if angle is not None and state.held:
        turn = float(np.clip(action[3] if len(action) > 3 else 0.0, -ANGLE_STEP_MAX, ANGLE_STEP_MAX))
        angle = angle + turn + float(_truncated_noise(rng, 0.5 * spec.state_noise_sd, 1)[0])
    obj = state.object_pos
    held = state.held
    if held:
        obj = np.clip(obj + (agent - state.agent_pos), lo, hi)
    if held and gripper < 0.5:
        held = False
    elif not held and gripper >= 0.5 and np.linalg.norm(agent - obj) < EPS_CONTACT:
        held = True
    new = EnvState(agent, obj, state.goal_pos, gripper, held, angle, state.events)
    return _check_events(new, spec)


def scripted_expert_step(state: EnvState, spec: TaskSpec) -> np.ndarray:
    """Reactive proportional controller toward the phase target implied by the state."""
    agent = state.agent_pos
    turn = 0.0
    if not state.held:
        target = state.object_pos
        close = np.linalg.norm(agent - state.object_pos) < EPS_CONTACT
        grip = 1.0 if close else -1.0
    elif spec.kind == "reach_grasp_place":
        if np.linalg.norm(state.object_pos - state.goal_pos) < EPS_GOAL:
            return np.array([0.0, 0.0, -1.0])
        target, grip = state.goal_pos, 1.0
    else:
        hole = state.goal_pos
        way = alignment_waypoint(spec, hole)
        turn = float(np.clip(-EXPERT_GAIN * state.peg_angle, -ANGLE_STEP_MAX, ANGLE_STEP_MAX))
        if "insert" in state.events:
            return np.array([0.0, 0.0, -1.0, 0.0])
        target = hole if "align" in state.events else way
        grip = 1.0
    if state.held:
        # steer the carried object, not the gripper, onto the target
        agent = state.object_pos
    move = _clip_step(EXPERT_GAIN * (target - agent))
    if spec.kind == "reach_grasp_place":
        return np.array([move[0], move[1], grip])
    return np.array([move[0], move[1], grip, turn])


# --- planned expert used for demonstrations --------------------------------


def _line(a: np.ndarray, b: np.ndarray, n: int) -> list[np.ndarray]:
    n = max(int(n), 1)
    return [a + (b - a) * (j / n) for j in range(1, n + 1)]


class ScriptedExpert:
    """Reference-tracking expert; one instance per demonstration."""

    def __init__(self, spec: TaskSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.tempo = float(rng.uniform(*_TEMPO))
        self.phase = "start"
        # (position reference, gripper level) per step
        self.queue: list[tuple[np.ndarray, float]] = []
        self.done = False

    def _steps(self, n: float) -> int:
        return max(int(round(n * self.tempo)), 1)

    def _transit(self, start, target, approach) -> list[np.ndarray]:
        spec = self.spec
        pre = target + approach * spec.scale
        via = 0.5 * (start + pre) + _VIA_SD * spec.scale * self.rng.standard_normal(2)
        via = np.clip(via, spec.to_world(0.02), spec.to_world(0.98))
        leg = self._steps(18)
        self._final = self._steps(8)
        return _line(start, via, leg) + _line(via, pre, leg) + _line(pre, target, self._final)

    def _plan(self, state: EnvState) -> None:
        spec = self.spec
        agent = state.agent_pos.copy()
        dwell = self._steps(4)
        peg = spec.kind == "peg_align_insert"
        if self.phase == "start":
            path = self._transit(agent, state.object_pos.copy(), _GRASP_APPROACH)
            # close gradually along the final straight approach
            final = self._final
            self.queue = [(p, 0.0) for p in path[:-final]]
            self.queue += [(p, (j + 1) / final) for j, p in enumerate(path[-final:])]
            self.queue += [(state.object_pos.copy(), 1.0)] * dwell
            self.phase = "reach"
        elif self.phase == "reach":
            if not state.held:
                self.queue = [(state.object_pos.copy(), 1.0)]
                return
            target = alignment_waypoint(spec, state.goal_pos) if peg else state.goal_pos.copy()
            approach = _ALIGN_APPROACH if peg else _GRASP_APPROACH
            self.queue = [(p, 1.0) for p in self._transit(state.object_pos.copy(), target, approach)]
            if peg:
                self.queue += [(target, 1.0)] * self._steps(2)
            self.phase = "carry"
        elif self.phase == "carry":
            if peg:
                if "align" not in state.events:
                    self.queue = [(alignment_waypoint(spec, state.goal_pos), 1.0)]
                    return
                hole = state.goal_pos.copy()
                wiggle = 0.5 * (state.object_pos + hole) + np.array([0.0, 0.06 * spec.scale * self.rng.standard_normal()])
                self.queue = [(p, 1.0) for p in _line(state.object_pos.copy(), wiggle, self._steps(10)) + _line(wiggle, hole, self._steps(10))]
                self.queue += [(hole, 1.0)] * dwell
                self.phase = "insert"
            else:
                self._finish_or_wait(state, "place")
        elif self.phase == "insert":
            self._finish_or_wait(state, "insert")
        elif self.phase == "release":
            back = (_ALIGN_APPROACH if peg else _GRASP_APPROACH) * 0.8 * spec.scale
            up = np.clip(agent + back, spec.lo, spec.hi)
            wander = np.clip(up + 0.15 * spec.scale * self.rng.standard_normal(2), spec.to_world(0.05), spec.to_world(0.95))
            self.queue = [(p, 0.0) for p in _line(agent, up, self._steps(8)) + _line(up, wander, self._steps(12))]
            self.phase = "retreat"
        elif self.phase == "retreat":
            self.done = True

    def _finish_or_wait(self, state: EnvState, event: str) -> None:
        if event not in state.events:
            self.queue = [(state.goal_pos.copy(), 1.0)]
        else:
            # open gradually while keeping the object on the goal
            n = self._steps(4)
            self.queue = [(state.goal_pos.copy(), 1.0 - (j + 1) / n) for j in range(n)]
            self.phase = "release"

    def act(self, state: EnvState) -> np.ndarray | None:
        """Next action, or None once the demonstration is complete."""
        while not self.queue and not self.done:
            self._plan(state)
        if self.done:
            return None
        ref, level = self.queue.pop(0)
        grip = float(np.clip(level - state.gripper, -1.0, 1.0))
        # while carrying, references are for the object
        here = state.object_pos if (state.held and self.phase != "retreat") else state.agent_pos
        move = _clip_step(ref - here)
        if self.spec.kind == "reach_grasp_place":
            return np.array([move[0], move[1], grip])
        turn = 0.0
        if state.held and self.phase == "carry":
            turn = float(np.clip(-0.12 / self.tempo * state.peg_angle, -ANGLE_STEP_MAX, ANGLE_STEP_MAX))
        return np.array([move[0], move[1], grip, turn])


def initial_state(spec: TaskSpec, index: int, stream: int = 0) -> EnvState:
    """Initial configuration for demonstration `index`; stream 0 is the training range."""
    rng = np.random.default_rng([spec.seed, int(index), 0, int(stream)])
    kind = spec.kind
    for _ in range(10_000):
        agent = rng.uniform([0.1, 0.1], [0.9, 0.9])
        if kind == "reach_grasp_place":
            obj = rng.uniform([0.1, 0.15], [0.9, 0.45])
            goal = rng.uniform([0.1, 0.6], [0.9, 0.85])
        else:
            obj = rng.uniform([0.1, 0.15], [0.55, 0.45])
            goal = rng.uniform([0.7, 0.45], [0.88, 0.85])
        pts = (agent, obj, goal)
        if min(np.linalg.norm(pts[a] - pts[b]) for a, b in ((0, 1), (1, 2), (0, 2))) >= _MIN_SEPARATION:
            break
    angle = float(rng.uniform(-1.2, 1.2)) if kind == "peg_align_insert" else None
    return EnvState(spec.to_world(agent), spec.to_world(obj), spec.to_world(goal), 0.0, False, angle)


@dataclass
class Episode:
    states: np.ndarray
    actions: np.ndarray
    marks: dict[str, int]
    success: bool


def run_episode(
    spec: TaskSpec,
    start: EnvState,
    policy: Callable[[EnvState], np.ndarray | None],
    rng: np.random.Generator,
    stop_on_success: bool = False,
) -> Episode:
    state = start
    states = [state.observation()]
    actions = []
    marks: dict[str, int] = {}
    final = spec.events[-1]
    for t in range(spec.horizon):
        action = policy(state)
        if action is None:
            break
        action = np.asarray(action, dtype=float)
        actions.append(action)
        executed = action.copy()
        if spec.action_noise_sd > 0:
            executed[:2] += rng.standard_normal(2) * spec.action_noise_sd
        state = env_step(state, executed, spec, rng)
        states.append(state.observation())
        for ev in state.events:
            marks.setdefault(ev, t + 1)
        if stop_on_success and final in marks:
            break
    actions.append(np.zeros(spec.action_dim))
    return Episode(np.array(states), np.array(actions), marks, final in marks)


def demonstrate(spec: TaskSpec, index: int) -> Trajectory:
    """One expert demonstration; retried with fresh noise when the expert runs out of horizon."""
    start = initial_state(spec, index)
    for attempt in range(RETRY_CAP):
        rng = np.random.default_rng([spec.seed, int(index), attempt + 1])
        expert = ScriptedExpert(spec, rng)
        ep = run_episode(spec, start, expert.act, rng)
        if expert.done and ep.success:
            marks = tuple(sorted(((k, v) for k, v in ep.marks.items()), key=lambda kv: kv[1]))
            return Trajectory(f"{spec.kind}-s{spec.seed}-{index:05d}", ep.states, ep.actions, marks)
    raise ExpertFailure(f"demonstration {index} failed {RETRY_CAP} times within horizon {spec.horizon}")


def generate(spec: TaskSpec, n: int, workers: int | None = None) -> Dataset:
    """n demonstrations; a pure function of (spec, n) regardless of worker count."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            trajs = list(pool.map(lambda i: demonstrate(spec, i), range(n)))
    else:
        trajs = [demonstrate(spec, i) for i in range(n)]
    return Dataset(tuple(trajs), header={"kind": spec.kind})

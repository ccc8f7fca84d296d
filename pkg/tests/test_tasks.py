import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxmi.tasks import (
    ANGLE_STEP_MAX,
    EPS_CONTACT,
    EPS_GOAL,
    EVENTS,
    V_MAX,
    EnvState,
    TaskSpec,
    env_step,
    generate,
    scripted_expert_step,
)

RGP = TaskSpec(kind="reach_grasp_place", state_noise_sd=0.0)
PEG = TaskSpec(kind="peg_align_insert", state_noise_sd=0.0)


@pytest.fixture(scope="module")
def rgp_noisy():
    return generate(TaskSpec(kind="reach_grasp_place", state_noise_sd=0.01, seed=0), 100)


@pytest.fixture(scope="module")
def peg_noisy():
    return generate(TaskSpec(kind="peg_align_insert", state_noise_sd=0.01, seed=0), 40)


def _random_state(rng, kind):
    peg = kind == "peg_align_insert"
    held = bool(rng.integers(2))
    agent = rng.uniform(0, 1, 2)
    obj = agent.copy() if held else rng.uniform(0, 1, 2)
    return EnvState(
        agent, obj, rng.uniform(0, 1, 2), float(rng.uniform()), held,
        float(rng.uniform(-1.5, 1.5)) if peg else None,
        ("grasp",) if held and rng.integers(2) else (),
    )


@pytest.mark.parametrize(
    "kwargs",
    [dict(kind="stack"), dict(horizon=19), dict(state_noise_sd=-0.1), dict(action_noise_sd=float("nan")),
     dict(workspace_bounds=((0, 0), (0, 1)))],
)
def test_task_spec_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        TaskSpec(**kwargs)


def test_grasp_mark_is_first_contact_with_closed_gripper():
    traj = generate(RGP, 1).trajectories[0]
    marks = dict(traj.event_marks)
    m = marks["grasp"]
    s = traj.states

    def held(t):
        return np.linalg.norm(s[t, 0:2] - s[t, 2:4]) < EPS_CONTACT and s[t, 6] >= 0.5

    assert held(m)
    assert not any(held(t) for t in range(m))
    assert s[m - 1, 6] < 0.5 <= s[m, 6] or np.linalg.norm(s[m - 1, 0:2] - s[m - 1, 2:4]) >= EPS_CONTACT


def test_generation_is_deterministic():
    a = generate(TaskSpec(seed=5), 3)
    b = generate(TaskSpec(seed=5), 3)
    for x, y in zip(a, b):
        assert np.array_equal(x.states, y.states) and np.array_equal(x.actions, y.actions)
        assert x.event_marks == y.event_marks


def test_parallel_generation_matches_serial():
    a = generate(TaskSpec(kind="peg_align_insert", seed=2), 4)
    b = generate(TaskSpec(kind="peg_align_insert", seed=2), 4, workers=3)
    assert all(np.array_equal(x.states, y.states) for x, y in zip(a, b))


def test_expert_succeeds_on_every_noisy_demo(rgp_noisy):
    assert len(rgp_noisy) == 100
    for traj in rgp_noisy:
        final = traj.states[-1]
        assert np.linalg.norm(final[2:4] - final[4:6]) < EPS_GOAL
        assert [e for e, _ in traj.event_marks] == list(EVENTS["reach_grasp_place"])


def test_peg_demos_carry_all_three_events(peg_noisy):
    for traj in peg_noisy:
        assert [e for e, _ in traj.event_marks] == ["grasp", "align", "insert"]


@pytest.mark.parametrize("fixture", ["rgp_noisy", "peg_noisy"])
def test_event_marks_strictly_increase(fixture, request):
    for traj in request.getfixturevalue(fixture):
        times = [t for _, t in traj.event_marks]
        labels = [e for e, _ in traj.event_marks]
        assert all(a < b for a, b in zip(times, times[1:]))
        assert len(set(labels)) == len(labels)


@pytest.mark.parametrize("fixture", ["rgp_noisy", "peg_noisy"])
def test_positions_move_continuously(fixture, request):
    limit = V_MAX + 3 * 0.01 + 1e-12
    for traj in request.getfixturevalue(fixture):
        for block in (slice(0, 2), slice(2, 4), slice(4, 6)):
            step = np.linalg.norm(np.diff(traj.states[:, block], axis=0), axis=1)
            assert step.max() <= limit


def test_zero_noise_event_times_depend_only_on_initial_state():
    a = generate(RGP, 3)
    b = generate(TaskSpec(kind="reach_grasp_place", state_noise_sd=0.0, seed=0), 3)
    assert [t.event_marks for t in a] == [t.event_marks for t in b]


def test_expert_carries_toward_goal():
    state = EnvState(np.array([0.3, 0.3]), np.array([0.3, 0.3]), np.array([0.7, 0.8]), 1.0, True, None, ("grasp",))
    action = scripted_expert_step(state, RGP)
    to_goal = state.goal_pos - state.agent_pos
    assert np.dot(action[:2], to_goal) > 0.99 * np.linalg.norm(action[:2]) * np.linalg.norm(to_goal)
    assert action[2] > 0


def test_expert_releases_at_goal():
    g = np.array([0.5, 0.7])
    state = EnvState(g.copy(), g.copy(), g.copy(), 1.0, True, None, ("grasp", "place"))
    action = scripted_expert_step(state, RGP)
    assert np.linalg.norm(action[:2]) < 1e-12
    assert action[2] < 0


@pytest.mark.parametrize("kind", ["reach_grasp_place", "peg_align_insert"])
def test_expert_step_bounded_on_random_states(kind):
    rng = np.random.default_rng(11)
    spec = TaskSpec(kind=kind)
    for _ in range(10_000):
        action = scripted_expert_step(_random_state(rng, kind), spec)
        assert np.linalg.norm(action[:2]) <= V_MAX + 1e-12
        if kind == "peg_align_insert":
            assert abs(action[3]) <= ANGLE_STEP_MAX


@pytest.mark.parametrize("kind", ["reach_grasp_place", "peg_align_insert"])
def test_zero_action_without_noise_is_identity(kind):
    spec = TaskSpec(kind=kind, state_noise_sd=0.0)
    state = _random_state(np.random.default_rng(1), kind)
    after = env_step(state, np.zeros(spec.action_dim), spec)
    assert np.array_equal(after.observation(), state.observation())


def test_held_object_follows_agent_exactly():
    state = EnvState(np.array([0.4, 0.4]), np.array([0.41, 0.4]), np.array([0.8, 0.8]), 1.0, True)
    after = env_step(state, np.array([0.03, -0.02, 0.0]), RGP)
    assert np.allclose(after.object_pos - state.object_pos, after.agent_pos - state.agent_pos, atol=1e-15)
    assert np.allclose(after.agent_pos - state.agent_pos, [0.03, -0.02], atol=1e-15)


@pytest.mark.parametrize("kind", ["reach_grasp_place", "peg_align_insert"])
def test_random_steps_stay_in_workspace(kind):
    spec = TaskSpec(kind=kind, state_noise_sd=0.02)
    rng = np.random.default_rng(4)
    state = _random_state(rng, kind)
    for _ in range(1000):
        action = rng.uniform(-1, 1, spec.action_dim)
        state = env_step(state, action, spec, rng)
        for p in (state.agent_pos, state.object_pos, state.goal_pos):
            assert np.all(p >= 0) and np.all(p <= 1)
        assert 0.0 <= state.gripper <= 1.0


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0, 1), min_size=6, max_size=6),
    st.floats(0, 1),
    st.booleans(),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
)
def test_env_step_keeps_state_valid(pos, grip, held, action):
    p = np.array(pos)
    state = EnvState(p[0:2], p[0:2].copy() if held else p[2:4], p[4:6], grip, held)
    after = env_step(state, action, RGP)
    assert np.linalg.norm(after.agent_pos - state.agent_pos) <= V_MAX + 1e-12
    assert 0.0 <= after.gripper <= 1.0
    assert np.all((after.object_pos >= 0) & (after.object_pos <= 1))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maxmi.data import (
    Dataset,
    DatasetFormatError,
    Trajectory,
    dataset_csv,
    dumps_dataset,
    load_dataset,
    loads_dataset,
    map_index,
    normalize,
    save_dataset,
)

TWO_TRAJ = """MAXMI-DS v1 N=2 Q=1 A=0
TRAJ a T=3 MARKS=0
0.0
1.0
2.0
TRAJ b T=3 MARKS=1
MARK grasp 1
5.0
6.0
7.0
"""


def _ds(*trajs, header=None):
    return Dataset(tuple(trajs), header=header or {})


def test_load_two_trajectories(tmp_path):
    path = tmp_path / "d.txt"
    path.write_text(TWO_TRAJ)
    ds = load_dataset(path)
    assert len(ds) == 2
    assert ds.schema == (1, 0)
    assert ds.trajectories[1].event_marks == (("grasp", 1),)


def test_mismatched_q_names_trajectory():
    text = "MAXMI-DS v1 N=2 Q=1 A=0\nTRAJ a T=2 MARKS=0\n0.0\n1.0\nTRAJ bad T=2 MARKS=0\n0.0 1.0\n1.0 2.0\n"
    with pytest.raises(DatasetFormatError, match="bad"):
        loads_dataset(text)


@pytest.mark.parametrize(
    "text, needle",
    [
        ("", "empty"),
        ("NOPE v1 N=1 Q=1 A=0\n", "header"),
        ("MAXMI-DS v9 N=1 Q=1 A=0\n", "version"),
        ("MAXMI-DS v1 N=1 Q=1 A=0\nTRAJ a T=2 MARKS=0\n0.0\nnan\n", "row"),
        ("MAXMI-DS v1 N=1 Q=1 A=0\nTRAJ a T=3 MARKS=0\n0.0\n1.0\n", "a"),
    ],
)
def test_parse_errors_are_descriptive(text, needle):
    with pytest.raises(DatasetFormatError, match=needle):
        loads_dataset(text)


def test_nonfinite_value_reports_trajectory_and_row():
    text = "MAXMI-DS v1 N=1 Q=2 A=0\nTRAJ traj7 T=3 MARKS=0\n0 0\n1 inf\n2 2\n"
    with pytest.raises(DatasetFormatError) as err:
        loads_dataset(text)
    assert "traj7" in str(err.value) and "1" in str(err.value)


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    ds = _ds(
        Trajectory("x", rng.standard_normal((5, 3)) * 1e-7, rng.standard_normal((5, 2)), (("grasp", 1), ("place", 4))),
        Trajectory("y", rng.standard_normal((4, 3)) * 1e9, rng.standard_normal((4, 2))),
    )
    path = tmp_path / "d.txt"
    save_dataset(ds, path)
    back = load_dataset(path)
    for a, b in zip(ds, back):
        assert a.id == b.id and a.event_marks == b.event_marks
        assert np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)


def test_empty_actions_flag_a0():
    text = dumps_dataset(_ds(Trajectory("x", np.zeros((2, 2)))))
    assert text.splitlines()[0].startswith("MAXMI-DS v1 N=1 Q=2 A=0")
    assert loads_dataset(text).trajectories[0].actions is None


def test_two_saves_identical_bytes(tmp_path):
    ds = _ds(Trajectory("x", np.arange(6.0).reshape(3, 2) / 7, event_marks=(("grasp", 2),)))
    save_dataset(ds, tmp_path / "a.txt")
    save_dataset(ds, tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_csv_export_long_form():
    lines = dataset_csv(_ds(Trajectory("x", np.array([[1.0, 2.0], [3.0, 4.0]])))).splitlines()
    assert lines[0] == "trajectory,time,dimension,value"
    assert lines[1:] == ["x,0,0,1.0", "x,0,1,2.0", "x,1,0,3.0", "x,1,1,4.0"]


def test_marks_must_increase():
    with pytest.raises(DatasetFormatError):
        Trajectory("x", np.zeros((4, 1)), event_marks=(("b", 2), ("a", 2)))


@pytest.mark.parametrize(
    "states, T, expected",
    [
        ([[0.0], [1.0], [2.0]], 5, [[0], [0.5], [1], [1.5], [2]]),
        ([[0.0], [4.0]], 5, [[0], [1], [2], [3], [4]]),
    ],
)
def test_normalize_linear_interpolation(states, T, expected):
    nd = normalize(_ds(Trajectory("x", np.array(states))), T)
    assert np.allclose(nd.states[0], expected, atol=1e-15)


def test_normalize_identity_when_lengths_match():
    s = np.random.default_rng(0).standard_normal((7, 3))
    nd = normalize(_ds(Trajectory("x", s)), 7)
    assert np.array_equal(nd.states[0], s)


def test_normalize_rejects_small_t():
    with pytest.raises(ValueError):
        normalize(_ds(Trajectory("x", np.zeros((3, 1)))), 1)


@pytest.mark.parametrize("idx, n, T, expected", [(4, 3, 5, 2.0), (0, 17, 9, 0.0), (2, 3, 5, 1.0)])
def test_map_index_examples(idx, n, T, expected):
    assert map_index(idx, n, T) == expected


@pytest.mark.parametrize("idx", [-0.1, 4.5])
def test_map_index_out_of_range(idx):
    with pytest.raises(ValueError):
        map_index(idx, 3, 5)


traj_arrays = st.integers(2, 12).flatmap(
    lambda n: arrays(np.float64, (n, 2), elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False))
)


@settings(max_examples=60, deadline=None)
@given(traj_arrays, st.integers(2, 40))
def test_normalize_is_idempotent(states, T):
    once = normalize(_ds(Trajectory("x", states)), T)
    twice = normalize(once.as_dataset(), T)
    assert np.allclose(once.states, twice.states, atol=1e-12, rtol=0)


@settings(max_examples=60, deadline=None)
@given(traj_arrays, st.integers(2, 40))
def test_normalize_preserves_endpoints(states, T):
    nd = normalize(_ds(Trajectory("x", states)), T)
    assert np.array_equal(nd.states[0, 0], states[0])
    assert np.array_equal(nd.states[0, -1], states[-1])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 300), st.integers(2, 300), st.data())
def test_map_index_recovers_raw_grid_points(n, T, data):
    # a normalized grid point that lands on an integer raw time maps back to it exactly
    j = data.draw(st.integers(0, T - 1))
    raw = j * (n - 1) / (T - 1)
    assert map_index(j, n, T) == raw
    if float(raw).is_integer():
        assert map_index(j, n, T) == int(raw)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 300), st.integers(2, 300), st.floats(0, 1), st.floats(0, 1))
def test_map_index_monotone(n, T, a, b):
    lo, hi = sorted((a * (T - 1), b * (T - 1)))
    assert map_index(lo, n, T) <= map_index(hi, n, T)


@settings(max_examples=40, deadline=None)
@given(traj_arrays, st.booleans())
def test_load_save_identity(states, with_actions):
    acts = states[:, :1] * 2 if with_actions else None
    ds = _ds(Trajectory("t0", states, acts, (("e", states.shape[0] - 1),)))
    back = loads_dataset(dumps_dataset(ds))
    assert np.array_equal(back.trajectories[0].states, states)
    if with_actions:
        assert np.array_equal(back.trajectories[0].actions, acts)
    assert back.trajectories[0].event_marks == ds.trajectories[0].event_marks

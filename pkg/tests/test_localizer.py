import numpy as np
import pytest

from maxmi import data, tasks
from maxmi.discovery import DiscoveryConfig, discover_coordinate_ascent, discover_localizer, localizer_forward
from maxmi.discovery.localizer import init_localizer, localizer_indices, train_localizer

SMALL = dict(engine="localizer", iterations=30, population=16, channels=16, hidden=64, embed_dim=16)


def split(seed, n_train=200, n_held=60):
    ds = tasks.generate(tasks.TaskSpec(seed=seed), n_train + n_held)
    train = data.Dataset(ds.trajectories[:n_train], ds.header)
    if not n_held:
        return data.normalize(train, 128), None
    held = data.Dataset(ds.trajectories[n_train:], ds.header)
    return data.normalize(train, 128), data.normalize(held, 128)


@pytest.fixture(scope="module")
def trained():
    nd, held = split(0)
    cs, model = discover_localizer(nd, DiscoveryConfig(K=6, seed=0, **SMALL))
    return nd, held, cs, model


def test_forward_is_a_distribution():
    rng = np.random.default_rng(0)
    model = init_localizer(64, 5, 3, rng)
    traj = rng.standard_normal((64, 5))
    for k in range(3):
        p = localizer_forward(model, traj, k)
        assert p.shape == (64,)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) < 1e-6
        assert np.array_equal(p, localizer_forward(model, traj, k))


def test_forward_checks_shapes():
    model = init_localizer(16, 2, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        localizer_forward(model, np.zeros(16), 0)
    with pytest.raises(ValueError):
        localizer_forward(model, np.zeros((16, 2)), 2)


def test_trace_never_increases_and_beats_random_init(trained):
    _, _, cs, model = trained
    trace = model.loss_trace
    assert len(trace) == SMALL["iterations"] + 2
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert trace[-1] <= trace[0]
    assert cs.loss_trace == tuple(trace)


def test_training_is_deterministic():
    nd, _ = split(3, n_train=40, n_held=0)
    cfg = DiscoveryConfig(K=2, seed=3, **dict(SMALL, iterations=3, population=4))
    a = train_localizer(nd, cfg)
    b = train_localizer(nd, cfg)
    assert np.array_equal(a.flat(), b.flat())
    assert a.loss_trace == b.loss_trace


def test_grasp_concept_generalizes_to_held_out(trained):
    nd, held, _, model = trained
    grasp_train = nd.normalized_marks("grasp").mean()
    k = int(np.argmin(np.abs(localizer_indices(model, nd.states).mean(axis=0) - grasp_train)))
    X = localizer_indices(model, held.states)[:, k]
    assert np.mean(np.abs(X - held.normalized_marks("grasp")) <= 5) >= 0.7


def test_agrees_with_coordinate_engine():
    # at least 2 of 3 localizer concepts land within 5 steps of a coordinate-engine concept, on each seed
    for seed in range(5):
        nd, _ = split(seed, n_held=0)
        coord = discover_coordinate_ascent(nd, DiscoveryConfig(K=3, seed=seed)).assignment.means()
        loc, _ = discover_localizer(nd, DiscoveryConfig(K=3, seed=seed, **SMALL))
        agree = sum(np.min(np.abs(coord - m)) <= 5 for m in loc.assignment.means())
        assert agree >= 2, (seed, coord, loc.assignment.means())

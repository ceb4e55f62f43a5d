import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize, minimize_scalar

from poseparse.core import InvalidInputError, PoseJoints, SegmentMask
from poseparse.features import PBG_DIM, Dictionary
from poseparse.ranking import (
    SelectedPool,
    SvrConfig,
    SvrModel,
    score,
    select_top,
    top_indices,
    train_svr,
)


def primal(beta, X, t, C, eps):
    r = np.abs(X @ beta - t) - eps
    return 0.5 * beta @ beta + C / len(t) * np.maximum(r, 0).sum()


# --- training ----------------------------------------------------------------------------


def test_constant_targets_inside_tube_give_zero():
    X = np.random.default_rng(0).random((10, 4))
    beta, info = train_svr(X, np.full(10, 0.03), C=10.0, epsilon=0.05)
    assert np.array_equal(beta, np.zeros(4))
    assert not info["degenerate"]


def test_scalar_problem_matches_grid_oracle():
    X = np.array([[0.0], [1.0], [0.0], [1.0], [1.0]])
    t = X[:, 0].copy()
    C, eps = 100.0, 0.01
    beta, _ = train_svr(X, t, C=C, epsilon=eps, tol=1e-10)
    grid = np.linspace(0, 2, 200001)
    vals = [primal(np.array([b]), X, t, C, eps) for b in grid[::100]]
    coarse = grid[::100][int(np.argmin(vals))]
    best = minimize_scalar(lambda b: primal(np.array([b]), X, t, C, eps), bounds=(coarse - 0.01, coarse + 0.01), method="bounded", options={"xatol": 1e-10})
    assert beta[0] > 0
    assert beta[0] == pytest.approx(best.x, abs=1e-6)
    assert np.array_equal(np.argsort(-(X @ beta), kind="stable")[:3], [1, 3, 4])


def test_matches_generic_optimizer(rng):
    X = rng.random((30, 3))
    t = np.clip(X @ np.array([0.5, -0.2, 0.8]) + rng.normal(0, 0.05, 30), 0, 1)
    C, eps = 5.0, 0.05
    beta, info = train_svr(X, t, C=C, epsilon=eps, tol=1e-9)
    ref = minimize(primal, np.zeros(3), args=(X, t, C, eps), method="Powell", options={"xtol": 1e-10, "ftol": 1e-14, "maxiter": 20000})
    assert primal(beta, X, t, C, eps) <= ref.fun + 1e-7
    assert info["gap"] < 1e-9


def test_duplicated_set_gives_same_model(rng):
    X = rng.random((20, 5))
    t = rng.random(20)
    a, _ = train_svr(X, t, tol=1e-10)
    b, _ = train_svr(np.vstack([X, X]), np.concatenate([t, t]), tol=1e-10)
    assert np.allclose(a, b, atol=1e-5)


def test_training_deterministic(rng):
    X = rng.random((50, 6))
    t = rng.random(50)
    assert np.array_equal(train_svr(X, t)[0], train_svr(X, t)[0])


def test_degenerate_features_flagged():
    X = np.ones((5, 3))
    beta, info = train_svr(X, np.linspace(0, 1, 5))
    assert info["degenerate"]
    assert np.all(np.isfinite(beta))


@pytest.mark.parametrize("X,t", [(np.ones((1, 2)), np.ones(1)), (np.ones((3, 2)), np.array([0, 2.0, 0])), (np.ones((3, 2)), np.ones(2))])
def test_training_input_errors(X, t):
    with pytest.raises(InvalidInputError):
        train_svr(X, t)


# --- scoring -----------------------------------------------------------------------------


def test_score_examples():
    phi = np.array([0.3, -0.2, 0.7])
    assert score(np.zeros(3), phi) == 0.0
    assert score(np.array([0.0, 1.0, 0.0]), phi) == -0.2
    with pytest.raises(InvalidInputError):
        score(np.zeros(2), phi)


@given(arrays(float, (20,), elements=st.floats(-1, 1)), arrays(float, (20,), elements=st.floats(-1, 1)))
def test_score_matches_naive_sum(beta, phi):
    naive = 0.0
    for a, b in zip(beta, phi):
        naive += a * b
    assert score(beta, phi) == pytest.approx(naive, abs=1e-12)


@given(arrays(float, (15,), elements=st.floats(-1, 1)), st.floats(0.01, 100))
def test_ranking_invariant_to_positive_scale(scores, k):
    assert np.array_equal(top_indices(scores, 15), top_indices(scores * k, 15))


def test_top_indices_tie_break():
    assert top_indices(np.array([0.5, 0.9, 0.5, 0.9]), 4).tolist() == [1, 3, 0, 2]


# --- selection -----------------------------------------------------------------------------


@pytest.fixture
def small_pool():
    h = w = 20
    segs = []
    for i in range(5):
        bits = np.zeros((h, w), bool)
        bits[i * 3 : i * 3 + 3, 2:10] = True
        segs.append(SegmentMask(bits))
    feats = np.eye(5)
    joints = PoseJoints(np.tile([5.0, 5.0], (14, 1)))
    dicts = {"a": Dictionary(np.zeros((2, PBG_DIM))), "b": Dictionary(np.zeros((1, PBG_DIM)))}
    return segs, feats, joints, dicts


def test_select_whole_pool_reordered(small_pool):
    segs, feats, joints, dicts = small_pool
    model = SvrModel({"a": np.array([0.1, 0.5, 0.3, 0.9, 0.2]), "b": np.zeros(5)})
    sel = select_top(segs, feats, model, joints, dicts, n_p=5)
    assert [c.pool_index for c in sel.candidates["a"]] == [3, 1, 2, 4, 0]
    assert [c.pool_index for c in sel.candidates["b"]] == [0, 1, 2, 3, 4]
    assert not sel.truncated
    assert all(c.part_type == 1 for c in sel.candidates["a"])
    assert sel.y_index("a", sel.candidates["a"][2]) == 3
    assert set(sel.store) == set(range(5))


def test_select_top1_and_truncation(small_pool):
    segs, feats, joints, dicts = small_pool
    model = SvrModel({"a": np.array([0.9, 0.1, 0, 0, 0]), "b": np.zeros(5)})
    sel = select_top(segs[:2], feats[:2], model, joints, dicts, n_p=1)
    assert sel.candidates["a"][0].pool_index == 0
    sel = select_top(segs, feats, model, joints, dicts, n_p=10)
    assert sel.truncated and len(sel.candidates["a"]) == 5
    with pytest.raises(InvalidInputError):
        select_top([], feats[:0], model, joints, dicts)


def test_by_type_views_partition_the_list(small_pool):
    segs, feats, joints, dicts = small_pool
    model = SvrModel({"a": np.arange(5.0), "b": np.zeros(5)})
    # type 2 for segments whose pbg is nonzero in a bin unique to them
    from poseparse.features import pbg

    protos = np.stack([pbg(segs[0], joints), pbg(segs[4], joints)])
    dicts = {"a": Dictionary(protos), "b": dicts["b"]}
    sel = select_top(segs, feats, model, joints, dicts, n_p=5)
    views = sel.by_type("a", 1) + sel.by_type("a", 2)
    assert sorted(c.pool_index for c in views) == list(range(5))
    for z in (1, 2):
        scores = [c.score for c in sel.by_type("a", z)]
        assert scores == sorted(scores, reverse=True)


def test_selection_and_model_serialization(tmp_path, small_pool):
    segs, feats, joints, dicts = small_pool
    model = SvrModel({"a": np.arange(5.0), "b": -np.arange(5.0)}, SvrConfig(C=2.0))
    model.save(tmp_path / "m.json")
    back = SvrModel.load(tmp_path / "m.json")
    assert back.config.C == 2.0 and np.array_equal(back.weights["b"], model.weights["b"])
    sel = select_top(segs, feats, model, joints, dicts, n_p=3)
    again = SelectedPool.from_dict(sel.to_dict(), segs, joints)
    assert again.to_dict() == sel.to_dict()

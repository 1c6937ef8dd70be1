import json
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from cesa.metrics import (MetricInputError, confidence_interval, contact_score, diversity, fid,
                          fit_gaussian, goal_and_path_errors, matrix_sqrt_psd,
                          mean_pairwise_path_distance, metric_report, non_collision_score,
                          recognition_accuracy, report_json, resample_frames,
                          train_feature_extractor)
from cesa.substrate import make_rng
from cesa.synthworld import CommandSpec, MotionSample, ObjectInstance, SceneSpec, desk_skeleton
from cesa.synthworld.skeleton import matrix_to_rot6d


# -- Gaussian fits ------------------------------------------------------------------
def test_identical_rows_give_zero_covariance():
    g = fit_gaussian(np.ones((5, 3)))
    assert np.all(g.sigma == 0) and np.allclose(g.mu, 1)


def test_fit_matches_two_pass_estimator():
    x = np.random.default_rng(0).standard_normal((50, 4))
    g = fit_gaussian(x)
    mu = x.sum(0) / len(x)
    want = sum(np.outer(r - mu, r - mu) for r in x) / (len(x) - 1)
    np.testing.assert_allclose(g.sigma, want, atol=1e-9)
    np.testing.assert_allclose(g.sigma, np.cov(x, rowvar=False), atol=1e-12)


def test_fit_sampling_check():
    x = np.random.default_rng(1).standard_normal((100_000, 8))
    g = fit_gaussian(x)
    assert np.abs(g.mu).max() < 0.02
    assert np.linalg.norm(g.sigma - np.eye(8), 2) < 0.05


def test_fit_needs_two_rows():
    with pytest.raises(MetricInputError):
        fit_gaussian(np.zeros((1, 3)))


def test_matrix_sqrt_examples():
    np.testing.assert_allclose(matrix_sqrt_psd(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_matrix_sqrt_reconstructs_random_psd():
    a = np.random.default_rng(2).standard_normal((64, 64))
    a = a @ a.T
    b = matrix_sqrt_psd(a)
    assert np.linalg.norm(b @ b - a) < 1e-6
    np.testing.assert_allclose(b, scipy.linalg.sqrtm(a).real, atol=1e-6)


def test_matrix_sqrt_rejects_indefinite():
    with pytest.raises(np.linalg.LinAlgError):
        matrix_sqrt_psd(np.diag([1.0, -1.0]))


# -- FID / DIV -----------------------------------------------------------------------
def test_fid_self_is_zero_and_symmetric():
    r = np.random.default_rng(3)
    x, y = r.standard_normal((200, 16)), r.standard_normal((150, 16)) + 0.3
    assert fid(x, x) <= 1e-6
    assert abs(fid(x, y) - fid(y, x)) < 1e-6


def test_fid_closed_form_shift():
    r = np.random.default_rng(4)
    mu = np.full(8, 0.5)
    x, y = r.standard_normal((10_000, 8)), r.standard_normal((10_000, 8)) + mu
    assert abs(fid(x, y) - mu @ mu) / (mu @ mu) < 0.05


def test_fid_uses_plus_sign_on_trace():
    # N(0, I) vs N(0, 4I) in 1-D: (1 + 4 - 2 * 2) = 1
    r = np.random.default_rng(5)
    x, y = r.standard_normal((50_000, 1)), 2 * r.standard_normal((50_000, 1))
    assert abs(fid(x, y) - 1.0) < 0.05


def test_fid_width_mismatch():
    with pytest.raises(MetricInputError):
        fid(np.zeros((4, 2)), np.zeros((4, 3)))


def test_diversity_identical_is_zero():
    assert diversity(np.ones((20, 4)), make_rng(0, "d")) == 0.0


def test_diversity_brute_force():
    x = np.random.default_rng(6).standard_normal((70, 5))
    got = diversity(x, make_rng(1, "d"))
    idx = make_rng(1, "d").permutation(70)
    want = np.mean([np.linalg.norm(x[idx[i]] - x[idx[30 + i]]) for i in range(30)])
    assert abs(got - want) < 1e-9
    assert got == diversity(x, make_rng(1, "d"))


def test_diversity_too_few():
    with pytest.raises(MetricInputError):
        diversity(np.zeros((1, 3)), make_rng(0, "d"))


def test_pairwise_path_distance():
    p = np.zeros((3, 4, 3))
    p[1, :, 0] = 1.0
    p[2, :, 0] = 2.0
    assert mean_pairwise_path_distance(p) == pytest.approx((1 + 2 + 1) / 3)


def test_accuracy_bounds():
    assert recognition_accuracy([0, 1, 2], [0, 1, 3]) == pytest.approx(2 / 3)
    with pytest.raises(MetricInputError):
        recognition_accuracy([0], [0, 1])


# -- scene metrics ------------------------------------------------------------------------
def _scene():
    box = ObjectInstance(0, "table", (2.0, 2.0, 0.4), (0.4, 0.4, 0.4), 0.0, (0.5, 0.5, 0.5), 0.0)
    chair = ObjectInstance(1, "chair", (4.0, 4.0, 0.4), (0.3, 0.3, 0.4), 0.0, (0.5, 0.5, 0.5), 0.45)
    return SceneSpec("t", (6.0, 6.0, 2.6), (box, chair))


def _standing(path):
    """Upright frames following ``path`` (N, 3)."""
    n = len(path)
    frames = np.zeros((n, 33))
    frames[:, :3] = path
    frames[:, 3:9] = matrix_to_rot6d(np.eye(3))
    return frames


def _line(a, b, n=20, z=0.92):
    t = np.linspace(0, 1, n)[:, None]
    p = (1 - t) * np.array([*a, z]) + t * np.array([*b, z])
    return p


def test_straight_line_through_obstacle_scores_below_100():
    sk = desk_skeleton()
    through = _standing(_line((0.5, 2.0), (3.5, 2.0)))
    clear = _standing(_line((0.5, 0.5), (3.5, 0.5)))
    assert non_collision_score([clear], [_scene()], [(1,)], sk) == 100.0
    assert non_collision_score([through], [_scene()], [(1,)], sk) < 100.0
    # excluding the obstacle as a target removes the penalty
    assert non_collision_score([through], [_scene()], [(0,)], sk) == 100.0


def test_contact_far_is_zero_and_touching_counts():
    sk = desk_skeleton()
    cmd = CommandSpec("sit on", "chair", target_ids=(1,))
    far = _standing(_line((0.5, 0.5), (1.0, 0.5)))
    near = _standing(_line((0.5, 0.5), (3.85, 4.0)))
    assert contact_score([far], [_scene()], [cmd], sk) == 0.0
    assert contact_score([near], [_scene()], [cmd], sk) == 100.0
    walk = CommandSpec("walk to", "chair", target_ids=(1,))
    assert math.isnan(contact_score([near], [_scene()], [walk], sk))


def _sample(path, targets=(1,), target=1):
    cmd = CommandSpec("walk to", "chair", target_ids=targets)
    return MotionSample("s", "t", cmd, target, np.array([4.0, 4.0, 0.4]), _standing(path))


def test_goal_and_path_errors_examples():
    path = _line((0.5, 0.5), (3.5, 3.5), n=6)
    s = _sample(path)
    assert goal_and_path_errors([[4.0, 4.0, 0.4]], [path], [s], [_scene()]) == pytest.approx((0.0, 0.0), abs=1e-6)
    g, p = goal_and_path_errors([[5.0, 4.0, 0.4]], [path + [0, 0, 1.0]], [s], [_scene()])
    assert g == pytest.approx(1.0) and p == pytest.approx(1.0)
    with pytest.raises(MetricInputError):
        goal_and_path_errors([[0, 0, 0]], [path], [s, s], [_scene()])


def test_goal_error_uses_nearest_valid_target():
    s = _sample(_line((0, 0), (1, 1), n=3), targets=(0, 1), target=1)
    g, _ = goal_and_path_errors([[2.0, 2.0, 0.4]], [s.path], [s], [_scene()])
    assert g == pytest.approx(0.0)


def test_oracle_sit_samples_make_contact(small_corpus):
    sk = desk_skeleton()
    sits = [s for s in small_corpus.samples if s.command.action != "walk to"]
    score = contact_score([s.frames for s in sits], [small_corpus.scene_of(s) for s in sits],
                          [s.command for s in sits], sk)
    assert score >= 99.0


def test_oracle_corpus_non_collision_exact(small_corpus):
    s = small_corpus.samples
    # oracle motions avoid every box but their own target
    assert non_collision_score([x.frames for x in s], [small_corpus.scene_of(x) for x in s],
                               [(x.target_id,) for x in s], desk_skeleton()) == 100.0


# -- feature extractor and reports -----------------------------------------------------------
def test_resample_frames():
    f = np.arange(10.0).reshape(5, 2)
    np.testing.assert_allclose(resample_frames(f, 9)[:, 0], np.linspace(0, 8, 9))
    assert resample_frames(f[:1], 4).shape == (4, 2)


def test_feature_extractor_deterministic_and_hashed(small_corpus):
    motions = [s.frames for s in small_corpus.samples]
    a = train_feature_extractor(motions, 30, 33, steps=30, seed=1)
    b = train_feature_extractor(motions, 30, 33, steps=30, seed=1)
    c = train_feature_extractor(motions, 30, 33, steps=30, seed=2)
    assert a.digest() == b.digest() != c.digest()
    feats = a.features(motions)
    assert feats.shape == (len(motions), 64)
    np.testing.assert_array_equal(feats, b.features(motions))


def test_extractor_learns(small_corpus):
    motions = [s.frames for s in small_corpus.samples]
    fx = train_feature_extractor(motions, 30, 33, steps=1, seed=0)
    first = fx.fit(motions, steps=200, seed=0)
    assert first[-1] < 0.5 * first[0]


def test_confidence_interval_matches_t():
    v = [1.0, 2.0, 3.0, 4.0]
    ci = confidence_interval(v)
    assert ci["mean"] == 2.5 and ci["n"] == 4
    assert ci["ci95"] == pytest.approx(3.182446 * np.std(v, ddof=1) / 2, rel=1e-5)


def test_report_schema():
    reps = [{"fid": 1.0, "contact": float("nan")}, {"fid": 2.0, "contact": 50.0}]
    rep = metric_report(reps, 10, "abc", {"seed": 1})
    text = report_json(rep)
    back = json.loads(text)
    assert back["extractor_hash"] == "abc" and back["sample_count"] == 10
    assert back["metrics"]["fid"]["mean"] == 1.5
    assert back["repeats"][0]["contact"] is None


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 100))
def test_fid_non_negative(n, d, seed):
    r = np.random.default_rng(seed)
    assert fid(r.standard_normal((n, d)), r.standard_normal((n + 1, d))) >= 0.0

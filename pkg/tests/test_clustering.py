import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merge_planner.clustering import (
    ClusterModel,
    StyleFeatures,
    cluster_styles,
    extract_style_features,
    feature_matrix,
    kmeans_assign,
    kmeans_fit,
    kmeans_objective,
    label_clusters,
    hartigan_refine,
    lloyd,
    purity,
)
from merge_planner.errors import DegenerateInputError
from merge_planner.synthetic import generate_episode
from merge_planner.trajectory import AGGRESSIVE, NORMAL, MergingEpisode


def brute_force_two_means(X):
    """Exact optimum over every split of the points into two non-empty groups."""
    n = len(X)
    best = np.inf
    for mask in itertools.product([0, 1], repeat=n - 1):
        labels = np.array((0,) + mask)
        if labels.min() == labels.max():
            continue
        cost = sum(((X[labels == j] - X[labels == j].mean(axis=0)) ** 2).sum() for j in (0, 1))
        best = min(best, cost)
    return best


def _model(centers):
    c = np.asarray(centers, float).reshape(len(centers), -1)
    return ClusterModel(c, np.zeros(c.shape[1]), np.ones(c.shape[1]), ("f0",) * c.shape[1])


class TestFeatures:
    def test_lcd_is_settle_minus_onset(self, normal_episode):
        f = extract_style_features(normal_episode)
        assert f.lcd == pytest.approx(normal_episode.t_e - normal_episode.t_s)

    def test_gap_matches_generator_truth(self):
        ep = generate_episode(NORMAL, seed=31)
        i = ep.track.index_of(ep.t_lc)
        truth = ep.lead.y[i] - ep.lead.length[i] - ep.track.y[i]
        assert extract_style_features(ep).gap_lead == pytest.approx(truth, abs=0.1)

    def test_missing_follower_is_invalid(self, normal_episode):
        ep = MergingEpisode(normal_episode.track, normal_episode.t_s, normal_episode.t_lc, normal_episode.t_e,
                            normal_episode.origin_lane, normal_episode.target_lane, lead=normal_episode.lead)
        f = extract_style_features(ep)
        assert f.lead_valid and not f.follow_valid and not f.valid
        X, kept = feature_matrix([f, extract_style_features(normal_episode)])
        assert X.shape == (1, 5) and kept.tolist() == [1]


class TestKMeans:
    pts = np.array([[0.0], [1.0], [10.0], [11.0]])

    def test_two_pairs(self):
        m = kmeans_fit(self.pts, 2, seed=0, standardize=False)
        np.testing.assert_allclose(np.sort(m.centers.ravel()), [0.5, 10.5])
        assert m.objective == pytest.approx(1.0, abs=1e-12)

    def test_objective_hand_value(self):
        c = np.array([[0.5], [10.5]])
        assert kmeans_objective(self.pts, c, np.array([0, 0, 1, 1])) == pytest.approx(1.0)

    def test_identical_points_are_degenerate(self):
        with pytest.raises(DegenerateInputError):
            kmeans_fit(np.ones((5, 2)), 2)

    def test_assign_tie_goes_to_lower_index(self):
        m = _model([0.5, 10.5])
        assert kmeans_assign(m, [5.5]) == 0
        assert kmeans_assign(m, [2.0]) == 0
        assert kmeans_assign(m, [10.5]) == 1

    @pytest.mark.parametrize("seed", range(60))
    def test_matches_brute_force_optimum(self, seed):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(3, 9)), int(rng.integers(1, 3))
        X = rng.normal(size=(n, d)) * rng.uniform(0.5, 5.0)
        m = kmeans_fit(X, 2, seed=seed, restarts=20, standardize=False)
        assert abs(m.objective - brute_force_two_means(X)) < 1e-9
        assert all(b <= a + 1e-12 for a, b in zip(m.history, m.history[1:]))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 4))
    def test_lloyd_history_is_non_increasing(self, seed, k):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(20, 2))
        c0 = X[rng.choice(20, size=k, replace=False)]
        _, labels, hist = lloyd(X, c0, max_iter=50)
        assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
        assert labels.shape == (20,)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_refinement_never_hurts(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(int(rng.integers(4, 30)), 2))
        _, labels, hist = lloyd(X, X[:2].copy(), max_iter=100)
        centers, refined, more = hartigan_refine(X, labels, 2)
        assert more[-1] <= hist[-1] + 1e-12
        assert all(b <= a + 1e-12 for a, b in zip(more, more[1:]))
        assert kmeans_objective(X, centers, refined) == pytest.approx(more[-1])

    def test_refinement_escapes_a_lloyd_fixed_point(self):
        # {0, 2} | {3}: point 2 is equidistant from both means, so Lloyd keeps it
        X = np.array([[0.0], [2.0], [3.0]])
        centers, labels, hist = lloyd(X, np.array([[1.0], [3.0]]))
        assert labels.tolist() == [0, 0, 1] and hist[-1] == pytest.approx(2.0)
        _, refined, more = hartigan_refine(X, labels, 2)
        assert refined.tolist() == [0, 1, 1] and more[-1] == pytest.approx(0.5)

    def test_restart_histories_are_kept(self):
        m = kmeans_fit(np.random.default_rng(0).normal(size=(10, 2)), 2, restarts=7)
        assert len(m.restart_histories) == 7
        assert m.history in m.restart_histories

    def test_deterministic(self):
        X = np.random.default_rng(1).normal(size=(30, 3))
        a, b = kmeans_fit(X, 2, seed=5), kmeans_fit(X, 2, seed=5)
        np.testing.assert_array_equal(a.centers, b.centers)

    def test_model_round_trip(self, tmp_path):
        m = kmeans_fit(np.random.default_rng(2).normal(size=(12, 2)), 2, seed=0)
        m.label_map = {0: AGGRESSIVE, 1: NORMAL}
        m.save(tmp_path / "k.json")
        back = ClusterModel.load(tmp_path / "k.json")
        np.testing.assert_array_equal(back.centers, m.centers)
        assert back.label_map == m.label_map


class TestLabelling:
    def test_shorter_lcd_cluster_is_aggressive(self):
        feats = [StyleFeatures(lcd, g, 0.0, g, 0.0) for lcd, g in
                 [(3.0, 8.0), (3.2, 7.0), (3.4, 9.0), (6.0, 20.0), (6.2, 21.0), (5.9, 19.0)]]
        m = kmeans_fit(feats, 2, seed=0)
        label_map = label_clusters(m, feats)
        assert sorted(label_map.values()) == [AGGRESSIVE, NORMAL]
        assert m.style_of(feats[0]) == AGGRESSIVE
        assert m.style_of(feats[-1]) == NORMAL

    def test_purity(self):
        assert purity([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
        assert purity([0, 0, 0, 1], [0, 1, 1, 1]) == 0.75

    def test_cluster_styles_on_population(self, dataset_202):
        _, styles = cluster_styles(dataset_202[:60], seed=0)
        truth = [ep.style for ep in dataset_202[:60]]
        assert purity(styles, truth) >= 0.9

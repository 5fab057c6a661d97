import math

import numpy as np
import pytest

from tcmr import corpus as cp
from tcmr import temporal as tp

DAY = 86400


def day_corpus(doc_specs):
    """doc_specs: list of (day, tokens, labels)."""
    records = [
        (f"d{i}", np.zeros(2), tokens, day * DAY, labels)
        for i, (day, tokens, labels) in enumerate(doc_specs)
    ]
    return cp.from_records(records)


class TestRecency:
    def test_zero_gap(self):
        model = tp.RecencyModel(h_rec=0.3)
        assert tp.recency_sim(4.2, 4.2, model) == 1.0

    def test_gap_equal_to_scale(self):
        model = tp.RecencyModel(h_rec=0.3)
        assert tp.recency_sim(1.0, 1.3, model) == pytest.approx(math.exp(-1), abs=1e-9)

    def test_large_gap_underflow_safe(self):
        model = tp.RecencyModel(h_rec=0.3)
        v = tp.recency_sim(0.0, 30.0, model)
        assert 0.0 <= v < 1e-40

    def test_symmetry(self):
        model = tp.RecencyModel(h_rec=0.7)
        assert model.sim(2.0, 5.0) == model.sim(5.0, 2.0)

    def test_bad_scale(self):
        with pytest.raises(tp.TemporalModelError):
            tp.RecencyModel(h_rec=0.0)


class TestCategoryKDE:
    def test_single_observation_peak(self):
        corpus = day_corpus([(3, {"w": 1}, ["a"]), (0, {"w": 1}, ["b"]), (6, {"w": 1}, ["b"])])
        model = tp.fit_category_kde(corpus, bandwidth=1.0, grid_size=1024)
        assert model.density("a", 3.0) == pytest.approx(1.0, abs=1e-6)

    def test_two_observation_hand_values(self):
        corpus = day_corpus([(0, {"w": 1}, ["a"]), (10, {"w": 1}, ["a"])])
        obs = np.array([0.0, 10.0])
        raw0 = tp.gaussian_kde_density(obs, 0.0, 1.0)
        assert raw0 == pytest.approx(0.5 * 0.3989422804, abs=1e-6)
        model = tp.fit_category_kde(corpus, bandwidth=1.0, grid_size=2048)
        assert model.density("a", 0.0) == pytest.approx(1.0, abs=1e-6)
        assert model.density("a", 10.0) == pytest.approx(1.0, abs=1e-6)
        mid = model.density("a", 5.0)
        assert mid == pytest.approx(7.45e-6, rel=0.05)
        assert mid == pytest.approx(tp.gaussian_kde_density(obs, 5.0, 1.0) / raw0, rel=1e-3)

    def test_grid_queries_match_direct_oracle(self):
        rng = np.random.default_rng(0)
        days = rng.uniform(0, 30, size=40)
        corpus = day_corpus(
            [(0, {"w": 1}, ["a"]), (30, {"w": 1}, ["a"])]
            + [(float(d), {"w": 1}, ["a"]) for d in days]
        )
        model = tp.fit_category_kde(corpus, bandwidth=1.0, grid_size=512)
        obs = model.observations["a"]
        peak = tp.gaussian_kde_density(obs, model.grid, 1.0).max()
        for t in rng.uniform(0, 30, size=200):
            direct = tp.gaussian_kde_density(obs, float(t), 1.0) / peak
            assert abs(model.density("a", float(t)) - direct) < 1e-3

    def test_unknown_category_raises(self):
        corpus = day_corpus([(0, {"w": 1}, ["a"]), (1, {"w": 1}, ["a"])])
        model = tp.fit_category_kde(corpus, bandwidth=1.0)
        with pytest.raises(tp.UnknownCategoryError):
            model.density("nope", 0.0)

    def test_sim_peak_product(self):
        corpus = day_corpus([(5, {"w": 1}, ["a"]), (0, {"w": 1}, ["b"]), (10, {"w": 1}, ["b"])])
        model = tp.fit_category_kde(corpus, bandwidth=0.5, grid_size=2048)
        assert tp.category_sim(5.0, {"a"}, 5.0, {"a", "b"}, model) == pytest.approx(1.0, abs=1e-5)

    def test_sim_zero_density_region(self):
        corpus = day_corpus([(0, {"w": 1}, ["a"]), (30, {"w": 1}, ["a"])])
        model = tp.fit_category_kde(corpus, bandwidth=0.3, grid_size=4096)
        assert tp.category_sim(0.0, {"a"}, 15.0, {"a"}, model) < 1e-12

    def test_sim_takes_maximizing_label(self):
        grid = np.linspace(0.0, 1.0, 8)
        model = tp.CategoryKDE(
            bandwidth=1.0,
            grid=grid,
            curves={
                "a": np.full(8, math.sqrt(0.2)),
                "b": np.full(8, math.sqrt(0.6)),
            },
            observations={},
        )
        assert model.sim(0.2, frozenset("ab"), 0.8, frozenset("ab")) == pytest.approx(0.6)

    def test_sim_without_fitted_shared_label(self):
        corpus = day_corpus([(0, {"w": 1}, ["a"]), (1, {"w": 1}, ["a"])])
        model = tp.fit_category_kde(corpus, bandwidth=1.0)
        assert model.sim(0.0, frozenset(["z"]), 1.0, frozenset(["z"])) == 0.0
        assert model.missing_pair_count == 1

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(3)
        corpus = day_corpus(
            [(float(rng.uniform(0, 20)), {"w": 1}, [str(rng.integers(3))]) for _ in range(60)]
        )
        model = tp.fit_category_kde(corpus, bandwidth=1.0, grid_size=512)
        for _ in range(500):
            t_i, t_j = rng.uniform(0, 20, size=2)
            lab = str(rng.integers(3))
            v = tp.category_sim(t_i, {lab}, t_j, {lab}, model)
            assert 0.0 <= v <= 1.0


class TestTopicDensity:
    def test_single_slice_profile_is_one(self):
        corpus = day_corpus([(0, {"a": 2, "b": 1}, ["l"]), (0, {"b": 3}, ["l"])])
        model = tp.fit_topic_densities(corpus, num_topics=2, seed=0, gibbs_iters=10)
        assert model.phi.shape[1] == 1
        np.testing.assert_allclose(model.phi, 1.0)

    def test_word_concentrated_in_one_slice(self):
        specs = [(d, {"common": 3}, ["l"]) for d in range(5)]
        specs[3] = (3, {"common": 3, "rare": 4}, ["l"])
        corpus = day_corpus(specs)
        model = tp.fit_topic_densities(corpus, num_topics=1, seed=1, gibbs_iters=20)
        curve = model.word_curve("rare")
        assert int(np.argmax(curve)) == 3
        assert curve[3] > 0.5

    def test_profiles_sum_to_one(self):
        rng = np.random.default_rng(5)
        specs = [
            (int(rng.integers(0, 6)), {f"w{rng.integers(8)}": int(rng.integers(1, 4))}, ["l"])
            for _ in range(30)
        ]
        corpus = day_corpus(specs)
        model = tp.fit_topic_densities(corpus, num_topics=3, seed=2, gibbs_iters=15)
        np.testing.assert_allclose(model.phi.sum(axis=1), 1.0, atol=1e-9)
        assert (model.phi >= 0).all()

    def test_seed_determinism(self):
        specs = [(d % 4, {f"w{d % 5}": 2, "x": 1}, ["l"]) for d in range(20)]
        corpus = day_corpus(specs)
        a = tp.fit_topic_densities(corpus, num_topics=3, seed=9, gibbs_iters=15)
        b = tp.fit_topic_densities(corpus, num_topics=3, seed=9, gibbs_iters=15)
        np.testing.assert_array_equal(a.phi, b.phi)
        np.testing.assert_array_equal(a.beta, b.beta)

    def _manual_model(self, phi, num_slices=None, aggregate="geometric"):
        phi = np.asarray(phi, dtype=np.float64)
        n_slices = num_slices or phi.shape[1]
        axis = cp.TimeAxis(unit=1.0, origin=0, num_slices=n_slices)
        return tp.TopicDensity(
            num_topics=1,
            vocabulary=[f"w{i}" for i in range(phi.shape[0])],
            phi=phi,
            beta=np.zeros((phi.shape[1], 1, phi.shape[0])),
            slice_map=np.arange(n_slices, dtype=np.int64),
            time_axis=axis,
            aggregate=aggregate,
        )

    def test_uniform_densities_give_one_everywhere(self):
        model = self._manual_model(np.full((3, 4), 0.25))
        for t in range(4):
            assert tp.topic_sim({"w0": 1, "w2": 2}, float(t), model) == pytest.approx(1.0)

    def test_fully_concentrated_word_peaks(self):
        model = self._manual_model([[0.0, 1.0, 0.0]])
        assert tp.topic_sim({"w0": 1}, 1.0, model) == pytest.approx(1.0)

    def test_geometric_mean_hand_value(self):
        phi = np.array([[0.5, 0.5], [0.125, 0.875]])
        model = self._manual_model(phi)
        gm = np.sqrt(phi[0] * phi[1])  # per-slice direct product oracle
        assert gm[0] == pytest.approx(0.25)
        expected = gm / gm.max()
        assert tp.topic_sim({"w0": 1, "w1": 1}, 0.0, model) == pytest.approx(expected[0])
        assert tp.topic_sim({"w0": 1, "w1": 1}, 1.0, model) == pytest.approx(expected[1])

    def test_product_aggregate_matches_direct_product(self):
        phi = np.array([[0.5, 0.5], [0.125, 0.875]])
        model = self._manual_model(phi, aggregate="product")
        prod = phi[0] * phi[1]
        expected = prod / prod.max()
        assert tp.topic_sim({"w0": 1, "w1": 1}, 0.0, model) == pytest.approx(expected[0])

    def test_no_known_words_returns_zero(self):
        model = self._manual_model([[0.5, 0.5]])
        assert tp.topic_sim({"mystery": 1}, 0.0, model) == 0.0
        assert model.empty_word_count == 1

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(11)
        specs = [
            (
                int(rng.integers(0, 8)),
                {f"w{rng.integers(10)}": int(rng.integers(1, 3)) for _ in range(3)},
                ["l"],
            )
            for _ in range(40)
        ]
        corpus = day_corpus(specs)
        model = tp.fit_topic_densities(corpus, num_topics=2, seed=3, gibbs_iters=10)
        for doc in corpus.documents:
            for other in corpus.documents[:10]:
                v = model.pair_sim(doc, other)
                assert 0.0 <= v <= 1.0

    def test_asymmetric_by_construction(self):
        phi = np.array([[0.9, 0.1], [0.2, 0.8]])
        model = self._manual_model(phi)
        doc_i = cp.Document("i", np.zeros(1), {"w0": 1}, 0.0, frozenset(["l"]))
        doc_j = cp.Document("j", np.zeros(1), {"w1": 1}, 1.0, frozenset(["l"]))
        assert model.pair_sim(doc_i, doc_j) != model.pair_sim(doc_j, doc_i)

    def test_empty_slices_merge_forward(self):
        # days 0 and 5 populated; slices 1..4 map forward to day 5's slot
        corpus = day_corpus([(0, {"a": 2}, ["l"]), (5, {"b": 2}, ["l"])])
        model = tp.fit_topic_densities(corpus, num_topics=1, seed=0, gibbs_iters=5)
        assert model.num_effective_slices == 2
        assert list(model.slice_map) == [0, 1, 1, 1, 1, 1]


class TestSerialization:
    def test_recency_round_trip(self, tmp_path):
        path = tmp_path / "model.txnt"
        tp.write_temporal_model(path, tp.RecencyModel(h_rec=0.3))
        loaded = tp.read_temporal_model(path)
        assert isinstance(loaded, tp.RecencyModel)
        assert loaded.h_rec == 0.3

    def test_category_round_trip(self, tmp_path):
        corpus = day_corpus(
            [(0, {"w": 1}, ["a"]), (3, {"w": 1}, ["a", "b"]), (7, {"w": 1}, ["b"])]
        )
        model = tp.fit_category_kde(corpus, bandwidth=1.0, grid_size=256)
        path = tmp_path / "model.txnt"
        tp.write_temporal_model(path, model)
        loaded = tp.read_temporal_model(path)
        np.testing.assert_array_equal(loaded.grid, model.grid)
        for cat in model.curves:
            np.testing.assert_array_equal(loaded.curves[cat], model.curves[cat])
            np.testing.assert_array_equal(loaded.observations[cat], model.observations[cat])
        for d1 in corpus.documents:
            for d2 in corpus.documents:
                assert loaded.pair_sim(d1, d2) == model.pair_sim(d1, d2)

    def test_topic_round_trip(self, tmp_path):
        specs = [(d % 3, {f"w{d % 4}": 1, "z": 1}, ["l"]) for d in range(12)]
        corpus = day_corpus(specs)
        model = tp.fit_topic_densities(corpus, num_topics=2, seed=4, gibbs_iters=8)
        path = tmp_path / "model.txnt"
        tp.write_temporal_model(path, model)
        loaded = tp.read_temporal_model(path)
        np.testing.assert_array_equal(loaded.phi, model.phi)
        np.testing.assert_array_equal(loaded.beta, model.beta)
        np.testing.assert_array_equal(loaded.slice_map, model.slice_map)
        assert loaded.time_axis == model.time_axis
        for d1 in corpus.documents[:5]:
            for d2 in corpus.documents[:5]:
                assert loaded.pair_sim(d1, d2) == model.pair_sim(d1, d2)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.txnt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(tp.TemporalModelError, match="magic"):
            tp.read_temporal_model(path)

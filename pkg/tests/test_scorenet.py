import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffood.diffusion import NoiseSchedule, cosine_schedule
from diffood.rng import stream
from diffood.scorenet import (ScoreModel, TrainConfig, TrainingDivergedError,
                              load_checkpoint, sample_training_pair,
                              save_checkpoint, score_forward, time_embedding,
                              train)


class TestTimeEmbedding:
    def test_t0_components(self):
        emb = time_embedding(0, 8)
        np.testing.assert_array_equal(emb[:4], 0.0)
        np.testing.assert_array_equal(emb[4:], 1.0)

    def test_t1_dim4_frequencies(self):
        emb = time_embedding(1, 4)
        expected = [math.sin(1.0), math.sin(1e-4), math.cos(1.0), math.cos(1e-4)]
        np.testing.assert_allclose(emb, expected, atol=1e-15)

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError):
            time_embedding(3, 5)

    @given(st.integers(0, 10_000), st.integers(1, 64))
    @settings(max_examples=80, deadline=None)
    def test_bounded_by_one(self, t, half):
        emb = time_embedding(t, 2 * half)
        assert np.abs(emb).max() <= 1.0


@pytest.fixture(scope="module")
def sched():
    return cosine_schedule(1000)


class TestScoreForward:
    def test_fresh_model_is_zero_predictor(self):
        model = ScoreModel(data_dim=3, hidden=(16, 16), embed_dim=8, init_seed=1)
        out = model.score_forward(np.array([0.5, -2.0, 1.0]), 100)
        np.testing.assert_array_equal(out, 0.0)

    def test_deterministic(self):
        model = ScoreModel(data_dim=2, hidden=(16,), embed_dim=8, init_seed=2)
        # give the zero output layer some structure first
        model.weights[-1].data = np.ones_like(model.weights[-1].data)
        x = np.array([0.3, 0.4])
        a = model.score_forward(x, 7)
        b = model.score_forward(x, 7)
        assert a.tobytes() == b.tobytes()

    def test_dimension_mismatch(self):
        model = ScoreModel(data_dim=2, hidden=(8,), embed_dim=4)
        with pytest.raises(ValueError):
            model.score_forward(np.zeros(3), 1)

    def test_nfe_counts_batch_rows(self):
        model = ScoreModel(data_dim=2, hidden=(8,), embed_dim=4)
        model.score_forward(np.zeros(2), 1)
        model.score_forward(np.zeros((5, 2)), 1)
        assert model.nfe == 6


class TestSampleTrainingPair:
    def test_alpha_near_one_returns_x0(self):
        # the schedule invariants exclude alpha_bar being exactly 1 past t=0,
        # so exercise the limit with an epsilon-close level
        ab = np.array([1.0, 1.0 - 1e-14, 0.005])
        sched = NoiseSchedule(T=2, alpha_bar=ab,
                              beta=np.concatenate([[0.0], 1.0 - ab[1:] / ab[:-1]]))
        x0 = np.array([1.0, -2.0])
        x_t, eps = sample_training_pair(x0, 1, sched, stream(0, "pair"))
        np.testing.assert_allclose(x_t, x0, atol=1e-6)
        assert eps.shape == x0.shape

    def test_t_zero_rejected(self, sched):
        with pytest.raises(ValueError):
            sample_training_pair(np.zeros(2), 0, sched, stream(0, "pair"))

    def test_marginal_variance_moment(self, sched):
        t = 450
        x0 = np.array([0.7])
        rng = stream(1, "pair-var")
        draws = np.array([sample_training_pair(x0, t, sched, rng)[0][0]
                          for _ in range(100_000)])
        target = 1.0 - sched.alpha_bar[t]
        se = target * math.sqrt(2.0 / draws.size)
        assert abs(draws.var() - target) <= 3 * se

    def test_noise_moments(self, sched):
        rng = stream(2, "pair-eps")
        draws = np.array([sample_training_pair(np.zeros(1), 100, sched, rng)[1][0]
                          for _ in range(100_000)])
        assert abs(draws.mean()) <= 3.0 / math.sqrt(draws.size)
        assert abs(draws.var() - 1.0) <= 3.0 * math.sqrt(2.0 / draws.size)

    def test_step_ratio_mode(self, sched):
        t = 500
        rng = stream(3, "pair-ratio")
        x_t, eps = sample_training_pair(np.zeros(1), t, sched, rng,
                                        sigma_mode="step-ratio")
        ratio = math.sqrt((1 - sched.alpha_bar[t - 1]) / (1 - sched.alpha_bar[t]))
        assert x_t[0] == pytest.approx(ratio * eps[0], abs=1e-12)


@pytest.fixture(scope="module")
def gauss1d_model(sched):
    rng = stream(11, "gauss1d")
    data = rng.standard_normal((3000, 1))
    model = ScoreModel(data_dim=1, T=1000, schedule_tag=sched.tag, init_seed=11)
    cfg = TrainConfig(learning_rate=2e-3, batch_size=64, epochs=40, seed=11, T=1000)
    curve = train(model, data, cfg, sched)
    return model, data, curve


class TestTrain:
    def test_untrained_loss_is_the_zero_predictor_baseline(self, sched):
        # fresh model predicts zero everywhere, so its loss is the mean
        # squared noise: 1.0 in the per-coordinate-mean convention
        # (equivalently d under a per-sample squared-norm convention)
        rng = stream(4, "baseline")
        data = rng.standard_normal((512, 3))
        model = ScoreModel(data_dim=3, hidden=(16,), embed_dim=8, init_seed=4)
        cfg = TrainConfig(learning_rate=0.0 + 1e-12, batch_size=64, epochs=1,
                          seed=4, T=1000)
        curve = train(model, data, cfg, sched)
        assert abs(curve[0] - 1.0) < 0.1

    def test_training_beats_zero_predictor(self, gauss1d_model):
        _, _, curve = gauss1d_model
        assert curve[-1] < curve[0]
        assert curve[-1] < 1.0  # zero-predictor baseline in mean convention

    def test_identical_seeds_identical_curves_and_params(self, sched):
        rng = stream(5, "det")
        data = rng.standard_normal((256, 2))

        def run():
            model = ScoreModel(data_dim=2, hidden=(16, 16), embed_dim=8, init_seed=5)
            cfg = TrainConfig(learning_rate=1e-3, batch_size=32, epochs=3,
                              seed=5, T=1000)
            curve = train(model, data, cfg, sched)
            return curve, [p.data.tobytes() for p in model.params]

        curve_a, params_a = run()
        curve_b, params_b = run()
        assert curve_a == curve_b
        assert params_a == params_b

    def test_divergent_loss_aborts_with_diagnostic(self, sched):
        # an absurd learning rate kicks the bias to ~1e160 after one step,
        # so the next batch's squared error overflows
        rng = stream(6, "diverge")
        data = rng.standard_normal((64, 1))
        model = ScoreModel(data_dim=1, hidden=(8,), embed_dim=4, init_seed=6)
        cfg = TrainConfig(learning_rate=1e160, batch_size=32, epochs=1,
                          seed=6, T=1000)
        with pytest.raises(TrainingDivergedError) as err, np.errstate(over="ignore"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                train(model, data, cfg, sched)
        assert err.value.seed == 6
        assert err.value.epoch == 0
        assert err.value.batch == 1

    def test_empty_data_rejected(self, sched):
        model = ScoreModel(data_dim=1, hidden=(8,), embed_dim=4)
        cfg = TrainConfig(epochs=1)
        with pytest.raises(ValueError):
            train(model, np.empty((0, 1)), cfg, sched)


def test_high_noise_eps_tracks_input(gauss1d_model, sched):
    """For standard normal data the optimal eps approaches x_t at high t."""
    model, _, _ = gauss1d_model
    rng = stream(12, "high-t")
    xs = rng.standard_normal(200)
    t = 900
    preds = np.array([model.score_forward(np.array([x]), t)[0] for x in xs])
    cos = preds @ xs / (np.linalg.norm(preds) * np.linalg.norm(xs))
    assert 1.0 - cos <= 0.1


def test_learned_score_tracks_analytic_optimum(gauss1d_model, sched):
    """MSE against sigma_t * x over moderate levels, unit-test scale."""
    model, _, _ = gauss1d_model
    rng = stream(13, "score-acc")
    err = []
    for _ in range(400):
        t = int(rng.integers(20, 501))
        x = rng.standard_normal()
        pred = model.score_forward(np.array([x]), t)[0]
        err.append((pred - sched.sigma[t] * x) ** 2)
    assert float(np.mean(err)) <= 0.1


def test_checkpoint_roundtrip(tmp_path, gauss1d_model):
    model, _, _ = gauss1d_model
    path = tmp_path / "model.sbdt"
    save_checkpoint(path, model, train_seed=11)
    loaded = load_checkpoint(path)
    assert loaded.data_dim == model.data_dim
    assert loaded.hidden == model.hidden
    assert loaded.T == model.T
    x = np.array([0.37])
    np.testing.assert_array_equal(loaded.score_forward(x, 123),
                                  score_forward(model, x, 123))

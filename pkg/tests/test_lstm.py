import numpy as np
import pytest

from occpred.dataset import WindowedDataset, build_windows, chronological_split
from occpred.errors import InputError, TrainingError
from occpred.lstm import (
    LstmModel,
    LstmWeights,
    TrainConfig,
    cell_forward,
    clip_gradients,
    forward,
    grad_check,
    init_weights,
    loss,
    loss_and_grads,
    train,
)
from occpred.markov import decide, fit_markov, predict_markov
from occpred.occupancy import OccupancyGrid
from occpred.synthgen import ChannelSpec, gen_channel

from oracles import scalar_lstm_cell


def _zero_weights(F, H):
    return LstmWeights(np.zeros((4 * H, F)), np.zeros((4 * H, H)), np.zeros(4 * H), np.zeros((F, H)), np.zeros(F))


class TestCell:
    def test_all_zero_gives_zero_state(self):
        h, c = cell_forward(np.zeros(3), np.zeros(2), np.zeros(2), _zero_weights(3, 2))
        assert h.tolist() == [0.0, 0.0] and c.tolist() == [0.0, 0.0]

    def test_open_forget_closed_input_keeps_memory(self):
        w = _zero_weights(2, 3)
        H = 3
        w.b[:H] = -1e3  # input gate shut
        w.b[H : 2 * H] = 1e3  # forget gate open
        c0 = np.array([0.3, -0.7, 2.0])
        _, c1 = cell_forward(np.array([1.0, 0.0]), np.array([0.1, 0.2, 0.3]), c0, w)
        np.testing.assert_array_equal(c1, c0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scalar_reference(self, seed):
        r = np.random.default_rng(seed)
        F, H = 3, 4
        w = init_weights(F, H, r)
        x, h, c = r.random(F), r.uniform(-1, 1, H), r.uniform(-1, 1, H)
        h1, c1 = cell_forward(x, h, c, w)
        rh, rc = scalar_lstm_cell(x.tolist(), h.tolist(), c.tolist(), w.W.tolist(), w.U.tolist(), w.b.tolist())
        np.testing.assert_allclose(h1, rh, rtol=0, atol=1e-14)
        np.testing.assert_allclose(c1, rc, rtol=0, atol=1e-14)


class TestForward:
    def test_single_step_is_cell_plus_readout(self, rng):
        w = init_weights(4, 5, rng)
        x = rng.integers(0, 2, (1, 4)).astype(float)
        h, _ = cell_forward(x[0], np.zeros(5), np.zeros(5), w)
        np.testing.assert_allclose(forward(x, w), w.V @ h + w.c, rtol=0, atol=1e-14)

    def test_zero_readout_gives_bias(self, rng):
        w = init_weights(3, 4, rng)
        w.V[:] = 0
        w.c[:] = [0.1, -2.0, 3.0]
        out = forward(rng.integers(0, 2, (6, 10, 3)), w)
        assert (out == w.c).all()

    def test_hidden_state_bounded(self, rng):
        w = init_weights(3, 4, rng)
        for arr in (w.W, w.U, w.b):
            arr *= 50
        x = rng.integers(0, 2, (30, 3)).astype(float)
        h, c = np.zeros(4), np.zeros(4)
        for t in range(30):
            h, c = cell_forward(x[t], h, c, w)
            assert (np.abs(h) <= 1).all()

    def test_batch_equals_per_sequence(self, rng):
        w = init_weights(3, 6, rng)
        X = rng.integers(0, 2, (7, 5, 3))
        batch = forward(X, w)
        for n in range(7):
            np.testing.assert_allclose(batch[n], forward(X[n], w), rtol=0, atol=1e-13)

    def test_wrong_k_rejected(self, rng):
        with pytest.raises(InputError):
            forward(np.zeros((4, 3)), init_weights(3, 2, rng), K=5)


class TestLoss:
    def test_zero_logits(self):
        assert loss(np.zeros(5), np.array([0, 1, 1, 0, 1])) == pytest.approx(np.log(2), abs=1e-15)

    def test_saturated(self):
        assert loss(np.array([20.0]), np.array([1.0])) < 3e-9

    def test_readout_bias_gradient(self):
        F, H = 4, 3
        w = _zero_weights(F, H)
        _, grads = loss_and_grads(w, np.zeros((2, F)), np.zeros(F))
        # sigma(0) - 0 = 0.5, averaged over F bins
        np.testing.assert_allclose(grads["c"], 0.5 / F, rtol=0, atol=1e-15)


def _fd_all(w, seqs, targets, eps=1e-6):
    """Central differences for every scalar parameter."""
    out = {}
    for name in ("W", "U", "b", "V", "c"):
        arr = getattr(w, name)
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + eps
            lp, _ = loss_and_grads(w, seqs, targets)
            flat[j] = old - eps
            lm, _ = loss_and_grads(w, seqs, targets)
            flat[j] = old
            gflat[j] = (lp - lm) / (2 * eps)
        out[name] = g
    return out


class TestGradients:
    @pytest.mark.parametrize("H", [2, 4])
    def test_every_parameter_against_finite_differences(self, H):
        r = np.random.default_rng(H)
        F, K, B = 3, 4, 5
        w = init_weights(F, H, r)
        seqs = r.integers(0, 2, (B, K, F)).astype(float)
        y = r.integers(0, 2, (B, F)).astype(float)
        _, grads = loss_and_grads(w, seqs, y)
        fd = _fd_all(w, seqs, y)
        for name in fd:
            np.testing.assert_allclose(grads[name], fd[name], rtol=1e-5, atol=1e-9, err_msg=name)

    def test_grad_check_helper_small(self, rng):
        w = init_weights(4, 8, rng)
        seqs = rng.integers(0, 2, (3, 6, 4))
        y = rng.integers(0, 2, (3, 4))
        assert grad_check(w, (seqs, y), n_params=200) < 1e-4

    def test_clip_is_noop_below_threshold(self, rng):
        g = {"a": rng.normal(size=4), "b": rng.normal(size=(2, 2))}
        out, norm = clip_gradients(g, 1e6)
        assert out is g and norm > 0

    def test_clip_rescales_to_max_norm(self, rng):
        g = {"a": np.full(4, 10.0)}
        out, norm = clip_gradients(g, 2.0)
        assert norm == 20.0
        assert np.sqrt((out["a"] ** 2).sum()) == pytest.approx(2.0, rel=1e-15)


class TestTraining:
    def test_constant_targets_reach_low_loss(self):
        ds = build_windows(OccupancyGrid(np.ones((3, 200), np.uint8)), 5)
        m = train(ds, TrainConfig(hidden_size=8, epochs=20, batch_size=32, learning_rate=1e-2))
        assert m.loss_history[-1] < 0.05

    def test_same_seed_same_weights(self, rng):
        ds = build_windows(OccupancyGrid(rng.integers(0, 2, (2, 150))), 4)
        cfg = TrainConfig(hidden_size=5, epochs=3, batch_size=16, seed=7)
        a, b = train(ds, cfg), train(ds, cfg)
        assert a.to_dict() == b.to_dict()

    def test_sgd_runs_and_reduces_loss(self, rng):
        ds = build_windows(OccupancyGrid(np.ones((2, 120), np.uint8)), 3)
        m = train(ds, TrainConfig(hidden_size=4, epochs=10, batch_size=16, learning_rate=0.5, optimizer="sgd"))
        assert m.loss_history[-1] < m.loss_history[0]

    def test_lagged_channel_beats_markov(self):
        s = gen_channel(ChannelSpec("lagged", order=3, noise=0.2), 4000, seed=0)
        grid = OccupancyGrid(s[None, :])
        train_g, test_g = chronological_split(grid, 0.75, K=10)
        ds_tr, ds_te = build_windows(train_g, 10), build_windows(test_g, 10)
        m = train(ds_tr, TrainConfig(hidden_size=8, epochs=30, batch_size=32, learning_rate=1e-2))
        acc_lstm = (decide(m.predict_proba(ds_te.sequences)) == ds_te.targets).mean()
        mk = fit_markov(train_g)
        acc_mk = (decide(predict_markov(mk, ds_te.previous_state)) == ds_te.targets).mean()
        assert acc_lstm >= acc_mk + 0.03

    def test_non_finite_loss_raises(self, rng):
        ds = build_windows(OccupancyGrid(rng.integers(0, 2, (2, 60))), 3)
        bad = WindowedDataset(3, ds.sequences, ds.targets.astype(float) * np.nan, ds.origin_minutes)
        with pytest.raises(TrainingError, match="epoch 0, batch 0"):
            train(bad, TrainConfig(hidden_size=2, epochs=1))

    def test_serialization_round_trip(self, rng):
        ds = build_windows(OccupancyGrid(rng.integers(0, 2, (3, 80))), 4)
        m = train(ds, TrainConfig(hidden_size=3, epochs=1, batch_size=16))
        d = m.to_dict()
        assert {"W_i", "U_f", "b_o", "V", "c"} <= set(d["weights"])
        back = LstmModel.from_dict(d)
        np.testing.assert_array_equal(back.predict_proba(ds.sequences), m.predict_proba(ds.sequences))

    @pytest.mark.parametrize("kw", [{"hidden_size": 0}, {"optimizer": "rmsprop"}, {"learning_rate": 0.0}])
    def test_invalid_config(self, kw):
        with pytest.raises(InputError):
            TrainConfig(**kw)

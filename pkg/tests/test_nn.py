"""Recurrent cells, optimizers, schedulers, checkpoint format."""

import numpy as np
import pytest

from awekit import autodiff as ad
from awekit import nn
from awekit.autodiff import Tape, Tensor


def _zero_lstm(d, h):
    rng = np.random.default_rng(0)
    p = nn.LstmParams.create("z", d, h, rng)
    for q in p.parameters():
        q.values[...] = 0.0
    return p


def _zero_gru(d, h):
    rng = np.random.default_rng(0)
    p = nn.GruParams.create("z", d, h, rng)
    for q in p.parameters():
        q.values[...] = 0.0
    return p


class TestLstmCell:
    def test_all_zero_params_forced_values(self):
        # gates sigmoid(0)=0.5, candidate tanh(0)=0 => c=0.5*c_prev,
        # h=0.5*tanh(0.5*c_prev)
        p = _zero_lstm(3, 2)
        c_prev = np.array([[0.4, -1.2]])
        h, c = nn.lstm_cell(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 2))), Tensor(c_prev), p)
        np.testing.assert_allclose(c.values, 0.5 * c_prev)
        np.testing.assert_allclose(h.values, 0.5 * np.tanh(0.5 * c_prev))

    def test_hand_evaluated_scalar_step(self):
        # 1-dim cell, all weights 1, bias 0, x=0, h_prev=0, c_prev=1:
        # every gate pre-activation is 0 => i=f=o=0.5, c~=0,
        # c = 0.5*0 + 0.5*1 = 0.5, h = 0.5*tanh(0.5)
        p = _zero_lstm(1, 1)
        p.w_x.values[...] = 1.0
        p.w_h.values[...] = 1.0
        h, c = nn.lstm_cell(Tensor([[0.0]]), Tensor([[0.0]]), Tensor([[1.0]]), p)
        np.testing.assert_allclose(c.values, [[0.5]])
        np.testing.assert_allclose(h.values, [[0.5 * np.tanh(0.5)]])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        p = nn.LstmParams.create("g", 3, 2, rng)
        x = Tensor(rng.standard_normal((2, 3)))
        h0 = Tensor(rng.standard_normal((2, 2)))
        c0 = Tensor(rng.standard_normal((2, 2)))

        def f():
            h, c = nn.lstm_cell(x, h0, c0, p)
            return ad.sum_(ad.mul(h, h)) + ad.sum_(ad.tanh(c))

        leaves = [x, h0, c0] + [q.tensor for q in p.parameters()]
        assert ad.grad_check(f, leaves, eps=1e-4) <= 1e-5


class TestGruCell:
    def test_all_zero_params_halves_h_prev(self):
        p = _zero_gru(3, 2)
        h_prev = np.array([[0.8, -0.2]])
        h = nn.gru_cell(Tensor(np.ones((1, 3))), Tensor(h_prev), p)
        np.testing.assert_allclose(h.values, 0.5 * h_prev)

    def test_zero_state_zero_params_stays_zero(self):
        p = _zero_gru(2, 2)
        h = nn.gru_cell(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), p)
        np.testing.assert_allclose(h.values, 0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        p = nn.GruParams.create("g", 3, 2, rng)
        x = Tensor(rng.standard_normal((2, 3)))
        h0 = Tensor(rng.standard_normal((2, 2)))

        def f():
            return ad.sum_(ad.mul(nn.gru_cell(x, h0, p), nn.gru_cell(x, h0, p)))

        leaves = [x, h0] + [q.tensor for q in p.parameters()]
        assert ad.grad_check(f, leaves, eps=1e-4) <= 1e-5


class TestRecurrentLayer:
    @pytest.mark.parametrize("kind", ["lstm", "gru"])
    @pytest.mark.parametrize("reverse", [False, True])
    def test_padding_does_not_change_outputs(self, kind, reverse):
        rng = np.random.default_rng(9)
        make = nn.LstmParams.create if kind == "lstm" else nn.GruParams.create
        p = make("l", 3, 4, rng)
        x = rng.standard_normal((1, 5, 3))
        full = nn.run_recurrent_layer(p, Tensor(x), np.ones((1, 5)), reverse=reverse).values
        padded = np.concatenate([x, np.zeros((1, 3, 3))], axis=1)
        mask = np.concatenate([np.ones((1, 5)), np.zeros((1, 3))], axis=1)
        got = nn.run_recurrent_layer(p, Tensor(padded), mask, reverse=reverse).values
        np.testing.assert_allclose(got[:, :5], full, atol=1e-12)
        np.testing.assert_allclose(got[:, 5:], 0.0)

    def test_layer_gradients(self):
        rng = np.random.default_rng(10)
        p = nn.GruParams.create("l", 2, 3, rng)
        x = Tensor(rng.standard_normal((2, 4, 2)))
        mask = np.array([[1.0, 1, 1, 1], [1, 1, 0, 0]])

        def f():
            out = nn.run_recurrent_layer(p, x, mask, reverse=True)
            return ad.sum_(ad.mul(out, out))

        leaves = [x] + [q.tensor for q in p.parameters()]
        assert ad.grad_check(f, leaves, eps=1e-4) <= 1e-5


class TestAdam:
    def test_first_step_magnitude(self):
        # scalar g=1, lr=0.1: bias-corrected m_hat=v_hat=1 so the update is
        # lr/(1+eps) ~= 0.1
        p = nn.Parameter("w", np.array([1.0]))
        p.tensor.grad = np.array([1.0])
        nn.Adam(lr=0.1).step([p])
        np.testing.assert_allclose(p.values, 1.0 - 0.1, atol=1e-8)

    def test_zero_gradient_leaves_params(self):
        p = nn.Parameter("w", np.array([1.0, 2.0]))
        p.tensor.grad = np.zeros(2)
        nn.Adam(lr=0.5).step([p])
        np.testing.assert_allclose(p.values, [1.0, 2.0])

    def test_deterministic_trajectory(self):
        def run():
            p = nn.Parameter("w", np.array([0.3]))
            opt = nn.Adam(lr=0.05)
            for i in range(5):
                p.tensor.grad = np.array([np.sin(i + 1.0)])
                opt.step([p])
                p.zero_grad()
            return p.values.copy()

        np.testing.assert_array_equal(run(), run())


class TestNesterovSGD:
    def test_zero_momentum_is_plain_sgd(self):
        p = nn.Parameter("w", np.array([2.0]))
        p.tensor.grad = np.array([0.5])
        nn.NesterovSGD(lr=0.1, momentum=0.0).step([p])
        np.testing.assert_allclose(p.values, 2.0 - 0.1 * 0.5)

    def test_momentum_moves_without_gradient(self):
        p = nn.Parameter("w", np.array([0.0]))
        opt = nn.NesterovSGD(lr=0.1, momentum=0.9)
        p.tensor.grad = np.array([1.0])
        opt.step([p])
        before = p.values.copy()
        p.zero_grad()
        opt.step([p])
        assert p.values[0] < before[0]

    def test_three_step_hand_computation(self):
        # v <- mu*v + g; p -= lr*(g + mu*v), with g=1, lr=0.1, mu=0.9:
        # updates 0.19, 0.271, 0.3439 => p3 = -0.8049
        p = nn.Parameter("w", np.array([0.0]))
        opt = nn.NesterovSGD(lr=0.1, momentum=0.9)
        for _ in range(3):
            p.tensor.grad = np.array([1.0])
            opt.step([p])
            p.zero_grad()
        np.testing.assert_allclose(p.values, [-0.8049], atol=1e-12)


class TestPlateauScheduler:
    def test_improving_history_keeps_lr(self):
        s = nn.PlateauScheduler(lr=0.1, patience=2, factor=0.1, min_lr=1e-6)
        for m in [0.1, 0.2, 0.3, 0.4]:
            d = s.update(m)
            assert d.lr == 0.1 and not d.decayed

    def test_flat_history_decays_once(self):
        s = nn.PlateauScheduler(lr=0.1, patience=3, factor=0.1, min_lr=1e-6)
        decisions = [s.update(0.5) for _ in range(4)]
        assert [d.decayed for d in decisions] == [False, False, False, True]
        assert decisions[-1].reset_to_best
        np.testing.assert_allclose(s.lr, 0.01)

    def test_stop_when_below_min_lr(self):
        s = nn.PlateauScheduler(lr=1e-5, patience=1, factor=0.1, min_lr=1e-5)
        s.update(1.0)
        d = s.update(0.5)
        assert d.decayed and d.stop

    def test_min_mode_for_error_rates(self):
        s = nn.PlateauScheduler(lr=0.1, patience=1, factor=0.5, min_lr=1e-9, mode="min")
        assert s.update(0.5).improved
        assert s.update(0.4).improved
        assert s.update(0.45).decayed


class TestLossPlateauHeuristic:
    def test_three_consecutive_plateaus_decay(self):
        h = nn.LossPlateauHeuristic(lr=0.1)
        for loss in [1.0, 1.0, 1.0]:  # warmup window
            assert h.update(loss) == 0.1
        for i, loss in enumerate([1.05, 1.05, 1.05]):
            lr = h.update(loss)
        np.testing.assert_allclose(lr, 0.01)

    def test_improvement_resets_the_streak(self):
        h = nn.LossPlateauHeuristic(lr=0.1)
        for loss in [1.0, 1.0, 1.0, 1.05, 1.05, 0.5, 1.05, 1.05]:
            lr = h.update(loss)
        assert lr == 0.1


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        params = [
            nn.Parameter("enc.w", rng.standard_normal((3, 4)).astype(np.float32).astype(np.float64)),
            nn.Parameter("enc.b", rng.standard_normal(4).astype(np.float32).astype(np.float64)),
            nn.Parameter("scalar", np.float32(0.25).astype(np.float64)),
        ]
        path = tmp_path / "model.cadp"
        nn.save_checkpoint(path, params)
        loaded = nn.load_checkpoint(path)
        for p in params:
            np.testing.assert_array_equal(loaded[p.name], p.values)
        # re-serialize: identical bytes
        params2 = [nn.Parameter(k, v) for k, v in loaded.items()]
        path2 = tmp_path / "model2.cadp"
        nn.save_checkpoint(path2, params2)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.cadp"
        path.write_bytes(b"XXXX" + b"\0" * 16)
        with pytest.raises(nn.CheckpointError):
            nn.load_checkpoint(path)

    def test_assign_shape_mismatch_rejected(self, tmp_path):
        p = nn.Parameter("w", np.zeros((2, 2)))
        path = tmp_path / "m.cadp"
        nn.save_checkpoint(path, [p])
        q = nn.Parameter("w", np.zeros((3, 2)))
        with pytest.raises(nn.CheckpointError):
            nn.assign_from_checkpoint([q], nn.load_checkpoint(path))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from g2hf import objective as obj
from g2hf import reference as ref
from g2hf.rng import Rng
from g2hf.tensor import ShapeError, Tape, Tensor


def square_mask(n=8, lo=2, hi=6):
    g = np.zeros((1, n, n))
    g[:, lo:hi, lo:hi] = 1.0
    return g


class TestLosses:
    def test_bce_of_half_is_ln2(self):
        g = (Rng(1).uniform(0, 1, (1, 6, 6)) > 0.5) * 1.0
        assert obj.bce_loss(np.full((1, 6, 6), 0.5), g).item() == pytest.approx(math.log(2), abs=1e-9)

    def test_bce_hand_value(self):
        s = np.array([[[0.9, 0.2]]])
        g = np.array([[[1.0, 0.0]]])
        expect = -(math.log(0.9) + math.log(0.8)) / 2
        assert obj.bce_loss(s, g).item() == pytest.approx(expect, abs=1e-15)

    def test_bce_clamps_saturated_predictions(self):
        v = obj.bce_loss(np.array([[[0.0, 1.0]]]), np.array([[[1.0, 0.0]]])).item()
        assert v == pytest.approx(-math.log(1e-7), rel=1e-9) and math.isfinite(v)

    def test_iou_disjoint_full_empty(self):
        assert obj.iou_loss(np.ones((1, 4, 4)), np.zeros((1, 4, 4))).item() == pytest.approx(1.0, abs=1e-7)

    def test_iou_both_empty_is_zero(self):
        assert obj.iou_loss(np.zeros((1, 3, 3)), np.zeros((1, 3, 3))).item() == 0.0

    def test_iou_hand_value(self):
        s = np.array([[[0.5, 1.0, 0.0]]])
        g = np.array([[[1.0, 1.0, 0.0]]])
        # inter 1.5, union 2.0
        assert obj.iou_loss(s, g).item() == pytest.approx(1 - 1.5 / (2.0 + 1e-8), abs=1e-15)

    def test_fm_perfect_and_hand_value(self):
        g = square_mask()
        assert obj.fm_loss(g, g).item() <= 1e-7
        s = np.array([[[1.0, 1.0, 0.0, 0.0]]])
        g = np.array([[[1.0, 0.0, 1.0, 0.0]]])
        # tp=1 fp=1 fn=1 -> F = 1.3 / (0.3*2 + 2)
        assert obj.fm_loss(s, g).item() == pytest.approx(1 - 1.3 / (2.6 + 1e-8), abs=1e-15)

    def test_shape_mismatch(self):
        for fn in (obj.bce_loss, obj.iou_loss, obj.fm_loss):
            with pytest.raises(ShapeError):
                fn(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))

    @pytest.mark.parametrize("seed", range(10))
    def test_loop_oracles(self, seed):
        rng = Rng(seed)
        s, g = rng.uniform(0, 1, (1, 5, 7)), (rng.uniform(0, 1, (1, 5, 7)) > 0.4) * 1.0
        assert abs(obj.bce_loss(s, g).item() - ref.bce_loop(s, g)) <= 1e-10
        assert abs(obj.iou_loss(s, g).item() - ref.iou_loop(s, g)) <= 1e-10
        assert abs(obj.fm_loss(s, g).item() - ref.fm_loop(s, g)) <= 1e-10

    @pytest.mark.parametrize("fn", [obj.bce_loss, obj.iou_loss, obj.fm_loss])
    def test_gradients(self, fn):
        from g2hf.gradcheck import gradcheck

        rng = Rng(5)
        arrays = {"s": rng.uniform(0.05, 0.95, (1, 8, 8)), "g": (rng.uniform(0, 1, (1, 8, 8)) > 0.5) * 1.0}
        r = gradcheck(lambda t: fn(t["s"], t["g"]), arrays, Rng(6), n_coords=64, wrt=["s"])
        assert r.ok, r


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(1, 6))
def test_losses_are_non_negative(seed, n):
    rng = Rng(seed)
    s, g = rng.uniform(0, 1, (1, n, n)), (rng.uniform(0, 1, (1, n, n)) > 0.5) * 1.0
    for fn in (obj.bce_loss, obj.iou_loss, obj.fm_loss):
        assert fn(s, g).item() >= 0.0


class TestTotalLoss:
    def test_perfect_five_heads(self):
        g = square_mask(16, 4, 12)
        lb = obj.total_loss([([g] * 5, g)])
        assert lb.value <= 5e-6
        assert lb.value == lb.bce + lb.iou + lb.fm
        assert len(lb.per_output) == 5

    def test_sums_heads_and_averages_batch(self):
        rng = Rng(2)
        g1, g2 = square_mask(), square_mask(8, 1, 3)
        outs1 = [rng.uniform(0, 1, (1, 8, 8)) for _ in range(5)]
        outs2 = [rng.uniform(0, 1, (1, 8, 8)) for _ in range(5)]
        lb = obj.total_loss([(outs1, g1), (outs2, g2)])
        expect_bce = sum(ref.bce_loop(s, g1) for s in outs1) + sum(ref.bce_loop(s, g2) for s in outs2)
        assert lb.bce == pytest.approx(expect_bce / 2, abs=1e-12)
        expect = sum(ref.bce_loop(s, g) + ref.iou_loop(s, g) + ref.fm_loop(s, g)
                     for outs, g in ((outs1, g1), (outs2, g2)) for s in outs) / 2
        assert lb.value == pytest.approx(expect, abs=1e-12)
        assert lb.value == lb.bce + lb.iou + lb.fm

    def test_total_is_differentiable(self):
        g = square_mask()
        s = Tensor(Rng(3).uniform(0.1, 0.9, (1, 8, 8)), requires_grad=True)
        with Tape() as tape:
            grad, = tape.gradient(obj.total_loss([([s, s], g)]).total, [s])
        assert grad.shape == (1, 8, 8) and np.isfinite(grad).all()

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            obj.total_loss([])


class TestMetrics:
    @pytest.mark.parametrize("seed", range(5))
    def test_identities(self, seed):
        g = (Rng(seed).uniform(0, 1, (1, 9, 9)) > 0.7) * 1.0
        g[0, 0, 0] = 1.0
        assert obj.mae_metric(g, g) == 0.0
        assert obj.f_measure(g, g).f_beta == 1.0
        assert obj.mae_metric(g, 1.0 - g) == 1.0

    def test_mae_symmetric(self):
        rng = Rng(1)
        a, b = rng.uniform(0, 1, (1, 5, 5)), rng.uniform(0, 1, (1, 5, 5))
        assert obj.mae_metric(a, b) == obj.mae_metric(b, a)

    def test_all_black_against_all_white(self):
        r = obj.f_measure(np.zeros((1, 4, 4)), np.ones((1, 4, 4)))
        assert (r.mae, r.f_beta) == (1.0, 0.0)

    def test_adaptive_threshold_hand_value(self):
        s = np.array([[[0.9, 0.3, 0.1, 0.1]]])
        g = np.array([[[1.0, 1.0, 0.0, 0.0]]])
        r = obj.f_measure(s, g)
        # mean 0.35 -> t 0.7: only the first pixel predicted; P=1, R=0.5
        assert r.threshold == pytest.approx(0.7)
        assert r.f_beta == pytest.approx(1.3 * 0.5 / (0.3 + 0.5), abs=1e-15)

    def test_threshold_capped_at_one(self):
        r = obj.f_measure(np.full((1, 2, 2), 0.9), np.ones((1, 2, 2)))
        assert r.threshold == 1.0 and r.f_beta == 0.0

    @pytest.mark.parametrize("seed", range(10))
    def test_loop_oracles(self, seed):
        rng = Rng(100 + seed)
        s, g = rng.uniform(0, 1, (1, 6, 6)), (rng.uniform(0, 1, (1, 6, 6)) > 0.5) * 1.0
        assert abs(obj.mae_metric(s, g) - ref.mae_loop(s, g)) <= 1e-12
        assert abs(obj.f_measure(s, g).f_beta - ref.f_measure_loop(s, g)) <= 1e-12


class TestRmsprop:
    def test_first_step_hand_value(self):
        st_ = obj.RmsState()
        out = obj.rmsprop_step({"w": np.array([1.0, -2.0])}, {"w": np.array([1.0, -0.5])}, st_)
        # acc = 0.1 g^2, step = g / sqrt(acc + eps)
        expect = np.array([1.0, -2.0]) - 1e-4 * np.array([1, -0.5]) / np.sqrt(0.1 * np.array([1, 0.25]) + 1e-8)
        np.testing.assert_allclose(out["w"], expect, rtol=0, atol=1e-16)
        assert st_.step == 1

    def test_second_step_uses_momentum(self):
        st_ = obj.RmsState()
        w = {"w": np.array(0.0)}
        g = {"w": np.array(2.0)}
        w = obj.rmsprop_step(w, g, st_)
        w = obj.rmsprop_step(w, g, st_)
        a1, a2 = 0.4, 0.9 * 0.4 + 0.4
        m2 = 0.9 * (2 / math.sqrt(a1 + 1e-8)) + 2 / math.sqrt(a2 + 1e-8)
        expect = -1e-4 * (2 / math.sqrt(a1 + 1e-8)) - 1e-4 * m2
        assert float(w["w"]) == pytest.approx(expect, abs=1e-18)

    def test_zero_lr_is_identity(self):
        rng = Rng(1)
        w = {"a": rng.normal((3, 3)), "b": rng.normal((2,))}
        out = obj.rmsprop_step(w, {k: rng.normal(v.shape) for k, v in w.items()}, obj.RmsState(), lr=0.0)
        assert all(np.array_equal(out[k], w[k]) for k in w)

    def test_missing_gradient_carries_weight(self):
        out = obj.rmsprop_step({"a": np.ones(2), "b": np.ones(2)}, {"a": np.ones(2)}, obj.RmsState())
        assert np.array_equal(out["b"], np.ones(2)) and not np.array_equal(out["a"], np.ones(2))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            obj.rmsprop_step({"a": np.ones(2)}, {"a": np.ones(3)}, obj.RmsState())

    def test_descends_quadratic(self):
        w, st_ = {"w": np.array([3.0, -1.0])}, obj.RmsState()
        losses = []
        for _ in range(200):
            losses.append(float(np.sum(w["w"] ** 2)))
            w = obj.rmsprop_step(w, {"w": 2 * w["w"]}, st_, lr=1e-2)
        assert losses[-1] < losses[0] * 0.5


class TestSchedule:
    def test_values(self):
        assert obj.lr_schedule(0) == 1e-4
        assert obj.lr_schedule(29) == 1e-4
        assert obj.lr_schedule(30) == pytest.approx(7e-5, rel=1e-15)
        assert obj.lr_schedule(41) == pytest.approx(7e-5, rel=1e-15)
        assert obj.lr_schedule(42) == pytest.approx(4.9e-5, rel=1e-15)
        assert obj.lr_schedule(54) == pytest.approx(1e-4 * 0.7**3, rel=1e-15)

    def test_monotone_non_increasing(self):
        vals = [obj.lr_schedule(e) for e in range(200)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            obj.lr_schedule(-1)

"""Optimizer recurrence and schedule tests; expectations hand-evaluated."""

import numpy as np
import pytest

from pixpoint.errors import NonFiniteGradient, ShapeError
from pixpoint.optim import OptimConfig, OptimState, lr_schedule, sgd_step


def cfg(**kw):
    base = dict(lr0=0.1, momentum=0.0, dampening=0.0, weight_decay=0.0, gamma=1.0, decay_every=100)
    base.update(kw)
    return OptimConfig(**base)


class TestSgdStep:
    def test_plain_sgd(self):
        p = {"w": np.array([1.0])}
        sgd_step(p, {"w": np.array([0.5])}, OptimState(), cfg())
        assert p["w"][0] == pytest.approx(0.95, abs=1e-15)

    def test_first_step_with_weight_decay(self):
        # g = 1 + 0.004*1 = 1.004; buf = g; p' = 1 - 0.1*1.004 = 0.8996
        p = {"w": np.array([1.0])}
        sgd_step(p, {"w": np.array([1.0])}, OptimState(), cfg(weight_decay=0.004, momentum=0.9, dampening=0.1))
        assert p["w"][0] == pytest.approx(0.8996, abs=1e-15)

    def test_zero_lr_keeps_params_bit_identical(self):
        rng = np.random.default_rng(0)
        p = {"w": rng.normal(size=(4, 3))}
        before = p["w"].copy()
        state = OptimState()
        for _ in range(3):
            sgd_step(p, {"w": rng.normal(size=(4, 3))}, state, cfg(lr0=0.0, momentum=0.9))
        assert np.array_equal(p["w"], before)
        assert state.step == 3

    def test_momentum_recurrence_hand_evaluated(self):
        # two steps, momentum 0.5, dampening 0.2, lr 0.1, grads 1 then 2:
        # buf1 = 1 (first step), p1 = 1 - 0.1 = 0.9
        # buf2 = 0.5*1 + 0.8*2 = 2.1, p2 = 0.9 - 0.21 = 0.69
        p = {"w": np.array([1.0])}
        state = OptimState()
        c = cfg(momentum=0.5, dampening=0.2)
        sgd_step(p, {"w": np.array([1.0])}, state, c)
        assert p["w"][0] == pytest.approx(0.9, abs=1e-15)
        sgd_step(p, {"w": np.array([2.0])}, state, c)
        assert p["w"][0] == pytest.approx(0.69, abs=1e-15)

    def test_update_linear_in_gradient(self):
        def run(scale):
            p = {"w": np.array([0.0])}
            sgd_step(p, {"w": np.array([scale])}, OptimState(), cfg())
            return p["w"][0]

        assert run(2.0) == pytest.approx(2 * run(1.0), abs=1e-15)

    def test_matches_vanilla_descent_without_momentum(self):
        rng = np.random.default_rng(1)
        p = {"w": rng.normal(size=5)}
        manual = p["w"].copy()
        state = OptimState()
        for _ in range(4):
            g = rng.normal(size=5)
            sgd_step(p, {"w": g.copy()}, state, cfg())
            manual -= 0.1 * g
            assert np.allclose(p["w"], manual, atol=1e-15)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            sgd_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, OptimState(), cfg())

    def test_non_finite_gradient_raises(self):
        with pytest.raises(NonFiniteGradient):
            sgd_step({"w": np.zeros(2)}, {"w": np.array([1.0, np.nan])}, OptimState(), cfg())


class TestSchedule:
    def test_initial(self):
        assert lr_schedule(0, cfg(lr0=0.01, gamma=0.99)) == 0.01

    def test_one_decay(self):
        assert lr_schedule(100, cfg(lr0=0.01, gamma=0.99)) == pytest.approx(0.0099, abs=1e-15)

    def test_floor_behaviour(self):
        got = lr_schedule(250, cfg(lr0=0.01, gamma=0.99))
        assert got == pytest.approx(0.01 * 0.99**2, abs=1e-15)

    def test_non_increasing(self):
        c = cfg(lr0=0.5, gamma=0.97, decay_every=7)
        values = [lr_schedule(s, c) for s in range(100)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimConfig(lr0=-1.0)
        with pytest.raises(ValueError):
            OptimConfig(lr0=0.1, momentum=1.0)
        with pytest.raises(ValueError):
            OptimConfig(lr0=0.1, gamma=0.0)

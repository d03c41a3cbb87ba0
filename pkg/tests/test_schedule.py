"""Noise schedule, sampler plan, and the deterministic DDIM update rule."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cono import (
    InvalidArgumentError,
    LatentClip,
    NoiseSchedule,
    SeededRng,
    add_noise,
    build_schedule,
    ddim_step,
    make_plan,
    sample_standard_normal,
)
from cono import _kernels as K
from cono.schedule import coeffs_from_alpha_bars


class TestSchedule:
    def test_linear_hand_values(self):
        s = build_schedule(2, 0.1, 0.2, "linear")
        assert s.betas == pytest.approx([0.1, 0.2], abs=0)
        assert s.alpha_bars == pytest.approx([0.9, 0.72], rel=1e-15)

    def test_scaled_linear_endpoints_exact(self):
        s = build_schedule()
        assert len(s.betas) == 1000
        assert s.betas[0] == pytest.approx(0.00085, rel=1e-12)
        assert s.betas[-1] == pytest.approx(0.012, rel=1e-12)
        assert s.alpha_bars[0] == pytest.approx(0.99915, rel=1e-12)

    def test_alpha_bars_strictly_decreasing(self):
        s = build_schedule()
        assert np.all(np.diff(s.alpha_bars) < 0)
        assert s.alpha_bars[-1] > 0

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidArgumentError):
            build_schedule(kind="cosine")

    @pytest.mark.parametrize("beta", [0.0, 1.0, -0.1, 1.5])
    def test_beta_range_rejected(self, beta):
        with pytest.raises(InvalidArgumentError):
            NoiseSchedule(np.array([beta]))

    def test_t_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            build_schedule(0)


class TestPlan:
    def test_hand_timesteps(self, sched):
        plan = make_plan(sched, 50)
        assert plan.steps == 50
        ts = list(plan.timesteps)
        assert ts[:3] == [999, 979, 959]
        assert ts[-1] == 19
        assert len(ts) == 50
        assert all(a - b == 20 for a, b in zip(ts, ts[1:]))

    def test_single_step_plan(self, sched):
        assert list(make_plan(sched, 1).timesteps) == [999]

    def test_full_plan(self, sched):
        ts = list(make_plan(sched, 1000).timesteps)
        assert ts == list(range(999, -1, -1))

    def test_step_ref_counts_from_end(self, sched):
        plan = make_plan(sched, 50)
        first = plan.step_ref(0)
        last = plan.step_ref(49)
        assert (first.step_index, first.timestep) == (49, 999)
        assert (last.step_index, last.timestep) == (0, 19)

    def test_t_prev_chain(self, sched):
        plan = make_plan(sched, 50)
        assert plan.t_prev(0) == 979
        assert plan.t_prev(48) == 19
        assert plan.t_prev(49) is None

    def test_eta_must_be_zero(self, sched):
        plan = make_plan(sched, 10)
        assert plan.eta == 0.0

    @pytest.mark.parametrize("steps", [0, -1, 1001])
    def test_bad_steps_rejected(self, sched, steps):
        with pytest.raises(InvalidArgumentError):
            make_plan(sched, steps)


class TestAddNoise:
    def test_hand_value(self):
        # alpha_bar = 0.25: out = 0.5*z0 + sqrt(0.75)*eps
        s = NoiseSchedule(np.array([0.75]))
        z0 = LatentClip(np.ones((1, 1, 1, 1)))
        eps = LatentClip(np.ones((1, 1, 1, 1)))
        out = add_noise(s, z0, eps, 0)
        assert out.data[0, 0, 0, 0] == pytest.approx(1.3660254037844386, rel=1e-7)

    def test_zero_noise_scales_signal(self, sched, rand4d):
        z0 = LatentClip(rand4d((2, 1, 2, 2)))
        eps = LatentClip(np.zeros((2, 1, 2, 2)))
        out = add_noise(sched, z0, eps, 0)
        assert np.allclose(
            out.data, np.sqrt(sched.alpha_bars[0]) * z0.data.astype(np.float64), rtol=1e-6
        )

    def test_bad_t_rejected(self, sched):
        z = LatentClip(np.zeros((1, 1, 1, 1)))
        with pytest.raises(InvalidArgumentError):
            add_noise(sched, z, z, 1000)
        with pytest.raises(InvalidArgumentError):
            add_noise(sched, z, z, -1)


class TestDdimStep:
    def test_hand_value(self):
        # alpha_bars [0.5, 0.25]; step t=1 -> t_prev=0 with z=1, eps=0.4
        s = NoiseSchedule(np.array([0.5, 0.5]))
        z = LatentClip(np.full((1, 1, 1, 1), 1.0))
        e = LatentClip(np.full((1, 1, 1, 1), 0.4))
        out = ddim_step(s, z, e, 1, 0)
        assert out.data[0, 0, 0, 0] == pytest.approx(1.2071583262910786, rel=1e-7)

    def test_terminal_step_returns_x0(self):
        s = NoiseSchedule(np.array([0.5, 0.5]))
        z = LatentClip(np.full((1, 1, 1, 1), 1.0))
        e = LatentClip(np.full((1, 1, 1, 1), 0.4))
        out = ddim_step(s, z, e, 1, None)
        assert out.data[0, 0, 0, 0] == pytest.approx(1.307179676972449, rel=1e-7)

    def test_equal_alpha_bar_is_bit_exact_noop(self, rand4d):
        a, b = coeffs_from_alpha_bars(0.37, 0.37)
        z = rand4d((3, 1, 4, 4))
        e = rand4d((3, 1, 4, 4))
        out = K.affine2(z, e, a, b)
        assert np.array_equal(out, z)

    def test_two_hop_x0_matches_direct_x0(self, sched, rand4d):
        # with the same eps reused, stepping t -> t' -> x0 equals t -> x0
        z = LatentClip(rand4d((2, 1, 3, 3)))
        e = LatentClip(rand4d((2, 1, 3, 3)))
        via = ddim_step(sched, ddim_step(sched, z, e, 700, 350), e, 350, None)
        direct = ddim_step(sched, z, e, 700, None)
        assert np.allclose(via.data, direct.data, rtol=0, atol=1e-5)

    def test_t_prev_must_be_smaller(self, sched):
        z = LatentClip(np.zeros((1, 1, 1, 1)))
        with pytest.raises(InvalidArgumentError):
            ddim_step(sched, z, z, 100, 100)
        with pytest.raises(InvalidArgumentError):
            ddim_step(sched, z, z, 100, 200)


@settings(max_examples=50, deadline=None)
@given(t=st.integers(1, 999), seed=st.integers(0, 2**32 - 1))
def test_add_noise_then_terminal_step_recovers_z0(t, seed):
    sched = build_schedule()
    rng = SeededRng(seed)
    z0 = sample_standard_normal(rng, (2, 1, 2, 2))
    eps = sample_standard_normal(rng, (2, 1, 2, 2))
    z_t = add_noise(sched, z0, eps, t)
    back = ddim_step(sched, z_t, eps, t, None)
    assert np.allclose(back.data, z0.data, rtol=1e-4, atol=2e-5)

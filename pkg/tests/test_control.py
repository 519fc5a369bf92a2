import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from convoysim.control import (
    GapPolicy,
    SpeedLoopState,
    UpstreamView,
    estimate_loss,
    speed_pid_step,
    stanley_steer,
    timegap_command,
    timegap_target_speed,
)
from convoysim.dynamics import VehicleState
from convoysim.errors import ContractError, NumericDomainError
from convoysim.params import SimConfig
from convoysim.track import oval_path, straight_path
from convoysim.v2v import Bsm

LINE = straight_path(200.0, 0.02)
OVAL = oval_path(8.0, 4.0, 0.02)


class TestStanley:
    def test_on_path(self):
        assert stanley_steer(0.0, 0.0, 1.0) == 0.0

    def test_example(self):
        assert stanley_steer(0.1, 0.0, 1.0) == pytest.approx(math.atan2(0.25, 1.1))
        assert stanley_steer(0.1, 0.0, 1.0) == pytest.approx(0.2234, abs=1e-4)

    def test_saturation(self):
        assert stanley_steer(5.0, 0.0, 0.0) == 0.44
        assert stanley_steer(-5.0, 0.0, 0.0) == -0.44
        assert stanley_steer(0.0, 1.0, 1.0) == 0.44

    def test_low_speed_softening(self):
        # eps keeps the gain finite at standstill
        assert stanley_steer(0.01, 0.0, 0.0) == pytest.approx(math.atan2(0.025, 0.1))

    @given(st.floats(-2, 2), st.floats(-1, 1), st.floats(0, 6))
    def test_odd_symmetry(self, e, psi, v):
        assert stanley_steer(-e, -psi, v) == pytest.approx(-stanley_steer(e, psi, v), abs=1e-15)

    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-0.3, 0.3), st.floats(0, 6))
    def test_monotone_in_cross_track(self, e1, e2, psi, v):
        lo, hi = min(e1, e2), max(e1, e2)
        assert stanley_steer(lo, psi, v) <= stanley_steer(hi, psi, v)

    @given(st.floats(-10, 10), st.floats(-3, 3), st.floats(0, 10))
    def test_bounded(self, e, psi, v):
        assert abs(stanley_steer(e, psi, v)) <= 0.44

    def test_bad_input(self):
        with pytest.raises(NumericDomainError):
            stanley_steer(float("nan"), 0.0, 1.0)
        with pytest.raises(ContractError):
            stanley_steer(0.0, 0.0, -1.0)


class TestSpeedPid:
    def test_zero_error_holds_cruise(self, cfg):
        thr, st_ = speed_pid_step(SpeedLoopState(), 2.0, 2.0, cfg, 0.01)
        assert thr == 30.0 and st_.integrator == 0.0

    def test_literal_percent_gains(self):
        cfg = SimConfig(throttle_gain_scale=1.0, speed_i=0.05)
        thr, _ = speed_pid_step(SpeedLoopState(), 1.0, 0.0, cfg, 0.01)
        assert thr == pytest.approx(30.0 + 0.25 + 0.05 * 0.01)
        thr, _ = speed_pid_step(SpeedLoopState(), 1.0, 0.0, SimConfig(throttle_gain_scale=1.0, speed_i=0.0), 0.01)
        assert thr == pytest.approx(30.25)

    def test_normalized_gains_clamp(self, cfg):
        # 30 + 100 * (0.25 + 0.002) = 55.2 -> THR_MAX
        thr, _ = speed_pid_step(SpeedLoopState(), 1.0, 0.0, cfg, 0.01)
        assert thr == 50.0

    def test_integrator_windup(self, cfg):
        s = SpeedLoopState()
        for _ in range(10_000):
            thr, s = speed_pid_step(s, 10.0, 0.0, cfg, 0.01)
        assert s.integrator == 0.125
        assert thr <= 50.0

    def test_negative_error_floors_at_min(self, cfg):
        s = SpeedLoopState()
        for _ in range(5000):
            thr, s = speed_pid_step(s, 0.0, 5.0, cfg, 0.01)
        assert s.integrator == -0.125 and thr == 0.0

    def test_bad_dt(self, cfg):
        with pytest.raises(ContractError):
            speed_pid_step(SpeedLoopState(), 1.0, 0.0, cfg, 0.0)

    def test_fuzz_clamps(self, cfg):
        rng = np.random.default_rng(7)
        errors = rng.uniform(-10, 10, size=100_000)
        s = SpeedLoopState()
        for e in errors:
            thr, s = speed_pid_step(s, float(e), 0.0, cfg, 0.01)
            assert abs(s.integrator) <= cfg.speed_imax
            assert cfg.thr_min <= thr <= cfg.thr_max


def _view(pred_msg, leader_msg=None, loss=0.0, predecessor=0, leader=None):
    view = UpstreamView(predecessor=predecessor, leader=leader)
    view.update(pred_msg, pred_msg.timestamp)
    view.entries[pred_msg.sender].loss = loss
    if leader_msg is not None:
        view.update(leader_msg, leader_msg.timestamp)
    return view


def _cmd(view, v_self, gap, now=10.0, policy=GapPolicy()):
    # predecessor front axle sits `gap + length` ahead of ours on the line
    me = VehicleState(0.0, 0.0, 0.0, v_self)
    return timegap_command(me, 10.0, view, policy, now, LINE, 0.75, 6.0)


class TestTimeGap:
    def test_equilibrium(self):
        # g = d0 + h v: target equals predecessor speed
        pred = Bsm(0, 5, 10.0, 10.0 + 3.0 + 0.75, 0.0, 2.0, 0.0)
        c = _cmd(_view(pred), 2.0, 3.0)
        assert c.desired_gap == pytest.approx(3.0)
        assert c.measured_gap == pytest.approx(3.0, abs=1e-9)
        assert c.target_speed == pytest.approx(2.0)
        assert not c.stale

    def test_closing_in_slows_down(self):
        pred = Bsm(0, 5, 10.0, 10.0 + 2.0 + 0.75, 0.0, 2.0, 0.0)
        c = _cmd(_view(pred), 2.0, 2.0)
        assert c.target_speed == pytest.approx(2.0 + 0.8 * (2.0 - 3.0))

    def test_loss_widens_headway(self):
        pred = Bsm(0, 5, 10.0, 20.0, 0.0, 2.0, 0.0)
        c = _cmd(_view(pred, loss=0.5), 2.0, 0.0)
        assert c.effective_headway == pytest.approx(1.5)
        assert c.desired_gap == pytest.approx(1.0 + 1.5 * 2.0)

    def test_headway_monotone_in_loss(self):
        pol = GapPolicy()
        hs = [pol.effective_headway(p) for p in np.linspace(0, 1, 21)]
        assert all(a <= b for a, b in zip(hs, hs[1:]))

    def test_stale_decay(self):
        pred = Bsm(0, 5, 10.0, 20.0, 0.0, 2.0, 0.0)
        c = _cmd(_view(pred), 1.5, 0.0, now=11.0)
        assert c.stale
        assert c.target_speed == pytest.approx(1.5 - 1.0 * (1.0 - 0.5))
        c = _cmd(_view(pred), 1.5, 0.0, now=20.0)
        assert c.target_speed == 0.0

    def test_stale_coasts_predecessor_for_gap(self):
        pred = Bsm(0, 5, 10.0, 20.0, 0.0, 2.0, 0.0)
        c = _cmd(_view(pred), 1.5, 0.0, now=10.4)
        assert c.measured_gap == pytest.approx(20.0 + 0.8 - 10.0 - 0.75, abs=1e-9)

    def test_speed_match_from_leader(self):
        pred = Bsm(1, 5, 10.0, 10.0 + 3.0 + 0.75, 0.0, 2.0, 0.0)
        lead = Bsm(0, 5, 10.0, 30.0, 0.0, 2.5, 0.0)
        c = _cmd(_view(pred, lead, predecessor=1, leader=0), 2.0, 3.0)
        assert c.target_speed == pytest.approx(2.0 + 0.3 * 0.5)

    def test_clamped(self):
        pred = Bsm(0, 5, 10.0, 100.0, 0.0, 5.0, 0.0)
        assert _cmd(_view(pred), 5.0, 0.0).target_speed == 6.0
        pred = Bsm(0, 5, 10.0, 10.8, 0.0, 0.0, 0.0)
        assert _cmd(_view(pred), 2.0, 0.0).target_speed == 0.0

    def test_missing_predecessor(self):
        view = UpstreamView(predecessor=0)
        with pytest.raises(ContractError):
            timegap_target_speed(VehicleState(0, 0, 0, 1), 0.0, view, GapPolicy(), 0.0, LINE, 0.75, 6.0)

    def test_old_sequence_ignored(self):
        view = _view(Bsm(0, 5, 10.0, 20.0, 0.0, 2.0, 0.0))
        view.update(Bsm(0, 4, 9.9, 0.0, 0.0, 0.0, 0.0), 10.05)
        assert view.entries[0].bsm.seq == 5

    def test_wraps_on_closed_path(self):
        # predecessor just past the lap seam, follower just before it
        x1, y1, _ = OVAL.point_at(1.0)
        pred = Bsm(0, 1, 10.0, x1, y1, 1.0, 0.0)
        c = timegap_command(VehicleState(0, 0, 0, 1.0), OVAL.total_length - 1.0, _view(pred), GapPolicy(),
                            10.0, OVAL, 0.75, 6.0)
        assert c.measured_gap == pytest.approx(2.0 - 0.75, abs=1e-3)


class TestEstimateLoss:
    def test_examples(self):
        assert estimate_loss([0.1 * k for k in range(1, 21)], 10, 2.0, 2.0) == 0.0
        assert estimate_loss([0.1 * k for k in range(1, 21, 2)], 10, 2.0, 2.0) == pytest.approx(0.5)
        assert estimate_loss([], 10, 2.0, 2.0) == 1.0

    def test_window_half_open(self):
        # a receipt exactly at now - window is outside
        assert estimate_loss([0.0], 10, 0.1, 0.1) == 1.0
        assert estimate_loss([0.1], 10, 0.1, 0.1) == 0.0

    def test_bad_args(self):
        with pytest.raises(ContractError):
            estimate_loss([], 0, 2.0, 0.0)

    @pytest.mark.parametrize("p", [0.0, 0.2, 0.5, 0.8])
    def test_deterministic_pattern(self, p):
        # drop message k when the running drop quota floor(p * (k + 1)) increases
        n = 1000
        keep = [k for k in range(n) if math.floor(p * (k + 1) + 1e-9) == math.floor(p * k + 1e-9)]
        times = [0.1 * (k + 1) for k in keep]
        est = estimate_loss(times, 10, n / 10, n / 10)
        assert abs(est - p) <= 2 / math.sqrt(n)

    @pytest.mark.parametrize("p", [0.0, 0.2, 0.5])
    def test_bernoulli_convergence(self, p):
        rng = np.random.default_rng(11)
        for n in (100, 1000, 10_000):
            times = [0.1 * (k + 1) for k in range(n) if rng.random() >= p]
            est = estimate_loss(times, 10, n / 10, n / 10)
            assert abs(est - p) <= 2 / math.sqrt(n)

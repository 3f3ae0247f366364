import math
from collections import deque

import numpy as np
import pytest

from homotrack.geometry import CameraModel, GroundPoint, ImagePoint
from homotrack.identify import (
    ChannelBank,
    EmaBank,
    IdentityConfig,
    IdentityMatch,
    RobotChannel,
    build_identity_cost,
    compute_gamma,
    decode_heading_report,
    emit_estimates,
    encode_heading_report,
    identify,
)
from homotrack.kalman import KalmanParams, kf_init
from homotrack.tracklets import Tracklet, TrackStatus

DEG = math.pi / 180.0
DIAG = 800.0


def make_channel(robot_id, headings, positions=(), capacity=60, stale=False) -> RobotChannel:
    """Channel with given buffers, newest first."""
    ch = RobotChannel(robot_id, capacity)
    ch.r_rot = deque(headings, maxlen=capacity)
    ch.r_pos = deque([ImagePoint(*p) for p in positions], maxlen=capacity)
    ch.stale = stale
    return ch


def make_tracklet(tid, headings, positions, capacity=60) -> Tracklet:
    t = Tracklet(tid, kf_init(ImagePoint(0.0, 0.0), KalmanParams.defaults(dt=0.05)),
                 capacity, TrackStatus.CONFIRMED)
    t.t_rot = deque(headings, maxlen=capacity)
    t.t_pos = deque([ImagePoint(*p) for p in positions], maxlen=capacity)
    t.last_foot = ImagePoint(320.0, 400.0)
    return t


# --------------------------------------------------------------------------
# independent substitution oracle for the gamma / cost formulas

def oracle_circ(a, b):
    d = abs(a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def oracle_gamma(heads, floor):
    r = len(heads)
    if r < 2:
        return floor
    min_sep = min(oracle_circ(heads[a], heads[b])
                  for a in range(r) for b in range(a + 1, r))
    return min(max(r / (2 * math.pi) * min_sep, 0.0), 1.0)


def oracle_cost(t_rot, t_pos, r_rot, r_pos, gamma, tau, diag, sentinel):
    d_i = min(len(t_rot), len(r_rot))
    if d_i < tau:
        return sentinel
    heading = gamma / (math.pi * d_i) * sum(
        oracle_circ(t_rot[k], r_rot[k]) for k in range(d_i))
    if r_pos:
        dist = math.hypot(t_pos[0][0] - r_pos[0][0], t_pos[0][1] - r_pos[0][1])
        position = (1.0 - gamma) / diag * min(dist, diag)
    else:
        position = 0.0
    return heading + position


class TestGamma:
    def test_two_robots_antipodal(self):
        cfg = IdentityConfig()
        chans = [make_channel(1, [0.0]), make_channel(2, [math.pi])]
        assert compute_gamma(chans, cfg) == pytest.approx(1.0)

    def test_single_robot_floor(self):
        cfg = IdentityConfig()
        assert compute_gamma([make_channel(1, [0.0])], cfg) == 0.5
        assert compute_gamma([], cfg) == 0.5

    def test_two_robots_36_degrees(self):
        cfg = IdentityConfig()
        chans = [make_channel(1, [0.0]), make_channel(2, [36 * DEG])]
        assert compute_gamma(chans, cfg) == pytest.approx(0.2)

    def test_stale_channels_excluded(self):
        cfg = IdentityConfig()
        chans = [make_channel(1, [0.0]), make_channel(2, [math.pi], stale=True)]
        assert compute_gamma(chans, cfg) == 0.5

    def test_gamma_bounded_and_monotone(self):
        cfg = IdentityConfig()
        rng = np.random.default_rng(3)
        for _ in range(200):
            r = int(rng.integers(2, 6))
            heads = list(rng.uniform(0, 2 * math.pi, size=r))
            gamma = compute_gamma([make_channel(i, [h]) for i, h in enumerate(heads)], cfg)
            assert 0.0 <= gamma <= 1.0
            assert gamma == pytest.approx(oracle_gamma(heads, 0.5), rel=1e-12)


class TestIdentityCost:
    def test_identical_buffers_cost_zero(self):
        cfg = IdentityConfig(tau=3)
        heads = [0.3, 0.4, 0.5]
        pos = [(100.0, 200.0)]
        t = make_tracklet(1, heads, pos)
        ch = make_channel(1, heads, pos)
        g = build_identity_cost([t], [ch], gamma=0.7, config=cfg, image_diag=DIAG)
        assert g[0, 0] == 0.0

    def test_max_heading_term(self):
        cfg = IdentityConfig(tau=2)
        t = make_tracklet(1, [0.0, 0.0], [(0.0, 0.0)])
        ch = make_channel(1, [math.pi, math.pi], [(0.0, 0.0)])
        g = build_identity_cost([t], [ch], gamma=1.0, config=cfg, image_diag=DIAG)
        assert g[0, 0] == pytest.approx(1.0)

    def test_short_buffer_hits_sentinel(self):
        cfg = IdentityConfig(tau=5)
        t = make_tracklet(1, [0.0] * 4, [(0.0, 0.0)])
        ch = make_channel(1, [0.0] * 10)
        g = build_identity_cost([t], [ch], gamma=1.0, config=cfg, image_diag=DIAG)
        assert g[0, 0] == 2.0

    def test_empty_r_pos_zeroes_position_term(self):
        cfg = IdentityConfig(tau=1)
        t = make_tracklet(1, [0.0], [(500.0, 400.0)])
        ch = make_channel(1, [0.0], positions=())
        g = build_identity_cost([t], [ch], gamma=0.25, config=cfg, image_diag=DIAG)
        assert g[0, 0] == 0.0

    def test_substitution_oracle_random_fixtures(self):
        cfg = IdentityConfig(tau=4)
        rng = np.random.default_rng(1234)
        for _ in range(500):
            n = int(rng.integers(1, 4))
            r = int(rng.integers(1, 4))
            tracklets, channels = [], []
            for i in range(n):
                length = int(rng.integers(0, 12))
                heads = list(rng.uniform(0, 2 * math.pi, size=length))
                pos = [(rng.uniform(0, 640), rng.uniform(0, 480))]
                tracklets.append(make_tracklet(i + 1, heads, pos))
            for j in range(r):
                length = int(rng.integers(0, 12))
                heads = list(rng.uniform(0, 2 * math.pi, size=length))
                has_pos = rng.random() < 0.7
                pos = [(rng.uniform(0, 640), rng.uniform(0, 480))] if has_pos else ()
                channels.append(make_channel(j + 1, heads, pos))
            gamma = compute_gamma(channels, cfg)
            g = build_identity_cost(tracklets, channels, gamma, cfg, DIAG)
            for i, t in enumerate(tracklets):
                for j, ch in enumerate(channels):
                    expected = oracle_cost(list(t.t_rot), list(t.t_pos),
                                           list(ch.r_rot), list(ch.r_pos),
                                           gamma, cfg.tau, DIAG, cfg.unassigned_cost)
                    assert g[i, j] == pytest.approx(expected, rel=1e-12, abs=1e-15)

    def test_scale_invariance_of_position_term(self):
        cfg = IdentityConfig(tau=1)
        t1 = make_tracklet(1, [0.0], [(100.0, 100.0)])
        ch1 = make_channel(1, [0.0], [(160.0, 180.0)])
        g1 = build_identity_cost([t1], [ch1], gamma=0.3, config=cfg, image_diag=DIAG)
        scale = 2.5
        t2 = make_tracklet(1, [0.0], [(100.0 * scale, 100.0 * scale)])
        ch2 = make_channel(1, [0.0], [(160.0 * scale, 180.0 * scale)])
        g2 = build_identity_cost([t2], [ch2], gamma=0.3, config=cfg, image_diag=DIAG * scale)
        assert g1[0, 0] == pytest.approx(g2[0, 0], rel=1e-12)

    def test_cost_bounds(self):
        cfg = IdentityConfig(tau=1)
        rng = np.random.default_rng(9)
        for _ in range(100):
            gamma = rng.uniform(0, 1)
            t = make_tracklet(1, list(rng.uniform(0, 2 * math.pi, 8)),
                              [(rng.uniform(0, 640), rng.uniform(0, 480))])
            ch = make_channel(1, list(rng.uniform(0, 2 * math.pi, 8)),
                              [(rng.uniform(0, 640), rng.uniform(0, 480))])
            g = build_identity_cost([t], [ch], gamma, cfg, DIAG)
            assert 0.0 <= g[0, 0] <= 1.0 + 1e-12  # real costs stay below sentinel


class TestIdentify:
    def test_two_tracklets_two_robots(self):
        cfg = IdentityConfig(tau=5)
        n = 10
        t1 = make_tracklet(1, [5 * DEG] * n, [(100.0, 300.0)])
        t2 = make_tracklet(2, [95 * DEG] * n, [(500.0, 300.0)])
        ch1 = make_channel(11, [0.0] * n)
        ch2 = make_channel(12, [90 * DEG] * n)
        matches = identify([t1, t2], [ch1, ch2], cfg, DIAG)
        # gamma = 2/(2*pi) * (pi/2) = 0.5; cost = gamma * (5/180 deg ratio)
        assert sorted(matches) == [IdentityMatch(1, 11, pytest.approx(5 / 360)),
                                   IdentityMatch(2, 12, pytest.approx(5 / 360))]

    def test_identical_headings_fall_back_to_position(self):
        cfg = IdentityConfig(tau=5)
        n = 10
        heads = [45 * DEG] * n
        t1 = make_tracklet(1, heads, [(100.0, 300.0)])
        t2 = make_tracklet(2, heads, [(500.0, 300.0)])
        ch1 = make_channel(11, heads, [(110.0, 295.0)])
        ch2 = make_channel(12, heads, [(480.0, 310.0)])
        matches = identify([t1, t2], [ch1, ch2], cfg, DIAG)
        pairs = {(m.tracklet_id, m.robot_id) for m in matches}
        assert pairs == {(1, 11), (2, 12)}

    def test_short_buffer_emits_nothing(self):
        cfg = IdentityConfig(tau=10)
        t = make_tracklet(1, [0.0] * 5, [(100.0, 300.0)])
        ch = make_channel(11, [0.0] * 20)
        assert identify([t], [ch], cfg, DIAG) == []

    def test_injective_both_ways(self):
        cfg = IdentityConfig(tau=2)
        rng = np.random.default_rng(21)
        for _ in range(50):
            n, r = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            tracklets = [make_tracklet(i + 1, list(rng.uniform(0, 6.28, 6)),
                                       [(rng.uniform(0, 640), rng.uniform(0, 480))])
                         for i in range(n)]
            channels = [make_channel(j + 1, list(rng.uniform(0, 6.28, 6)),
                                     [(rng.uniform(0, 640), rng.uniform(0, 480))])
                        for j in range(r)]
            matches = identify(tracklets, channels, cfg, DIAG)
            assert len({m.tracklet_id for m in matches}) == len(matches)
            assert len({m.robot_id for m in matches}) == len(matches)


class TestChannelBank:
    def test_first_packet_retained_and_pushed(self):
        bank = ChannelBank(IdentityConfig())
        bank.receive(1, 90 * DEG, stamp_us=0, rx_time=0.0)
        bank.advance_frame(now=0.0)
        ch = bank.get(1)
        assert ch.r_rot[0] == pytest.approx(90 * DEG)

    def test_hold_last_value_across_lost_frames(self):
        bank = ChannelBank(IdentityConfig())
        bank.receive(1, 90 * DEG, stamp_us=0, rx_time=0.0)
        for k in range(4):
            bank.advance_frame(now=0.05 * k)
        ch = bank.get(1)
        assert len(ch.r_rot) == 4
        assert all(h == pytest.approx(90 * DEG) for h in ch.r_rot)

    def test_late_packet_dropped_and_counted(self):
        bank = ChannelBank(IdentityConfig())
        bank.receive(1, 10 * DEG, stamp_us=100, rx_time=0.0)
        bank.receive(1, 20 * DEG, stamp_us=50, rx_time=0.01)
        ch = bank.get(1)
        assert ch.late_drops == 1
        bank.advance_frame(now=0.05)
        assert ch.r_rot[0] == pytest.approx(10 * DEG)

    def test_out_of_order_newer_stamp_wins(self):
        bank = ChannelBank(IdentityConfig())
        bank.receive(1, 10 * DEG, stamp_us=100, rx_time=0.0)
        bank.receive(1, 30 * DEG, stamp_us=200, rx_time=0.005)
        bank.advance_frame(now=0.05)
        assert bank.get(1).r_rot[0] == pytest.approx(30 * DEG)

    def test_staleness_flag(self):
        cfg = IdentityConfig(staleness_timeout_s=2.0)
        bank = ChannelBank(cfg)
        bank.receive(1, 0.0, stamp_us=0, rx_time=0.0)
        bank.advance_frame(now=1.0)
        assert not bank.get(1).stale
        bank.advance_frame(now=2.5)
        assert bank.get(1).stale
        bank.receive(1, 0.1, stamp_us=10, rx_time=2.6)
        bank.advance_frame(now=2.7)
        assert not bank.get(1).stale

    def test_channels_sorted_by_id(self):
        bank = ChannelBank(IdentityConfig())
        for rid in (5, 2, 9):
            bank.receive(rid, 0.0, stamp_us=0, rx_time=0.0)
        assert [c.robot_id for c in bank.channels()] == [2, 5, 9]


def make_camera():
    return CameraModel(fx=554.0, fy=554.0, cx=320.0, cy=240.0,
                       height_m=0.8, pitch_rad=math.radians(25.0))


class TestEmitEstimates:
    def _setup(self, alpha=1.0):
        cfg = IdentityConfig(tau=1, lowpass_alpha=alpha)
        bank = ChannelBank(cfg)
        bank.receive(7, 0.5, stamp_us=0, rx_time=0.0)
        bank.advance_frame(0.0)
        t = make_tracklet(3, [0.5], [(320.0, 400.0)])
        return cfg, bank, t

    def test_alpha_one_outputs_raw_projection(self):
        cfg, bank, t = self._setup(alpha=1.0)
        cam = make_camera()
        ema = EmaBank(cfg)
        [est] = emit_estimates([IdentityMatch(3, 7, 0.1)], {3: t}, bank, cam, cfg, ema)
        from homotrack.geometry import project_to_ground
        raw = project_to_ground(t.last_foot, cam)
        assert est.ground == raw
        assert est.robot_id == 7 and est.tracklet_id == 3
        assert est.heading == 0.5
        assert est.confidence == pytest.approx(0.9)

    def test_ema_step_response(self):
        cfg = IdentityConfig(tau=1, lowpass_alpha=0.2)
        ema = EmaBank(cfg)
        # converge to 0 first, then step to 1
        ema._state[1] = (0.0, 0.0)
        out1 = ema.update(1, GroundPoint(1.0, 0.0))
        assert out1.x == pytest.approx(0.2)
        out2 = ema.update(1, GroundPoint(1.0, 0.0))
        assert out2.x == pytest.approx(0.36)

    def test_ema_converges_to_constant(self):
        cfg = IdentityConfig(tau=1, lowpass_alpha=0.2)
        ema = EmaBank(cfg)
        ema._state[1] = (5.0, -5.0)
        target = GroundPoint(1.25, 0.75)
        for _ in range(100):
            out = ema.update(1, target)
        assert abs(out.x - target.x) < 1e-6
        assert abs(out.y - target.y) < 1e-6

    def test_ema_resets_after_long_unassignment(self):
        cfg = IdentityConfig(tau=1, lowpass_alpha=0.2, ema_reset_after=3)
        ema = EmaBank(cfg)
        ema.update(1, GroundPoint(10.0, 10.0))
        for _ in range(4):
            ema.tick_unassigned(1)
        out = ema.update(1, GroundPoint(0.0, 0.0))
        assert out == GroundPoint(0.0, 0.0)  # fresh start, no stale blend

    def test_horizon_failure_skips_estimate_but_updates_r_pos(self):
        cfg, bank, t = self._setup()
        # horizon for this camera sits at v = cy - fy*tan(pitch) ~ -18
        t.last_foot = ImagePoint(320.0, -30.0)
        cam = make_camera()
        ema = EmaBank(cfg)
        out = emit_estimates([IdentityMatch(3, 7, 0.1)], {3: t}, bank, cam, cfg, ema)
        assert out == []
        assert len(bank.get(7).r_pos) == 1


class TestWireFormat:
    def test_encode_is_byte_exact(self):
        data = encode_heading_report(1, math.pi / 2, 123456)
        assert data == b'{"robot_id": 1, "heading_rad": 1.5707963267948966, "stamp_us": 123456}'

    def test_round_trip(self):
        report = decode_heading_report(encode_heading_report(42, 0.1, 999))
        assert report.robot_id == 42
        assert report.heading_rad == 0.1
        assert report.stamp_us == 999

    def test_canonical_bytes_survive_round_trip(self):
        raw = b'{"robot_id": 3, "heading_rad": 0.25, "stamp_us": 10}'
        rep = decode_heading_report(raw)
        assert encode_heading_report(*rep) == raw

    @pytest.mark.parametrize("bad", [
        b"not json",
        b"[1, 2, 3]",
        b'{"robot_id": 1, "heading_rad": 0.5}',
        b'{"robot_id": "x", "heading_rad": 0.5, "stamp_us": 1}',
        b'{"robot_id": 1, "heading_rad": "y", "stamp_us": 1}',
        b'{"robot_id": 1, "heading_rad": 0.5, "stamp_us": 1.5}',
    ])
    def test_malformed_rejected(self, bad):
        with pytest.raises(ValueError):
            decode_heading_report(bad)

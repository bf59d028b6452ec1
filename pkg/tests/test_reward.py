import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mergeshield.reward import (
    RewardWeights,
    custom_reward,
    default_reward,
    fleet_rewards,
    headway_reward,
    merge_reward,
    overall_reward,
    speed_reward,
)
from mergeshield.road import RoadNetwork

from conftest import make_vehicle, make_world

W = RewardWeights()


class TestHeadwayReward:
    def test_zero_at_desired_headway(self):
        assert headway_reward(12.5, 25.0, 0.5) == 0.0

    def test_double_gap(self):
        assert headway_reward(25.0, 25.0, 0.5) == pytest.approx(-math.log(2.0))

    def test_half_gap(self):
        assert headway_reward(6.25, 25.0, 0.5) == pytest.approx(math.log(2.0))

    @given(st.floats(min_value=0.1, max_value=200.0), st.floats(min_value=1.0, max_value=35.0))
    def test_strictly_decreasing_in_gap(self, dx, v):
        assert headway_reward(dx, v, 0.5) > headway_reward(dx * 1.1, v, 0.5)

    def test_speed_floor_clamp(self):
        assert headway_reward(5.0, 0.2, 0.5) == headway_reward(5.0, 1.0, 0.5)

    def test_nonpositive_gap_rejected(self):
        with pytest.raises(ValueError):
            headway_reward(0.0, 20.0, 0.5)


class TestSpeedReward:
    def test_saturates_at_one(self):
        assert speed_reward(30.0, 10.0, 30.0) == 1.0
        assert speed_reward(35.0, 10.0, 30.0) == 1.0

    def test_lower_endpoint(self):
        assert speed_reward(10.0, 10.0, 30.0) == 0.0

    def test_midpoint(self):
        assert speed_reward(20.0, 10.0, 30.0) == 0.5

    @given(st.floats(min_value=0.0, max_value=40.0), st.floats(min_value=0.0, max_value=40.0))
    def test_monotone_nondecreasing(self, a, b):
        lo, hi = sorted((a, b))
        assert speed_reward(lo, 10.0, 30.0) <= speed_reward(hi, 10.0, 30.0)
        assert speed_reward(hi, 10.0, 30.0) <= 1.0


class TestMergeReward:
    def test_at_merge_end(self):
        assert merge_reward(100.0, 100.0) == -1.0

    def test_at_merge_start(self):
        assert merge_reward(0.0, 100.0) == pytest.approx(-math.exp(-10.0))
        assert merge_reward(0.0, 100.0) == pytest.approx(-4.5399929762484854e-05)

    def test_midway(self):
        assert merge_reward(50.0, 100.0) == pytest.approx(-math.exp(-2.5))

    @given(st.floats(min_value=0.0, max_value=100.0), st.floats(min_value=0.0, max_value=100.0))
    def test_monotone_decreasing_and_bounded(self, a, b):
        lo, hi = sorted((a, b))
        assert -1.0 <= merge_reward(hi, 100.0) <= merge_reward(lo, 100.0) <= 0.0


class TestCustomReward:
    def test_highway_vehicle_composition(self):
        # leader exactly at the desired headway, speed at the top of the band
        road = RoadNetwork()
        ego = make_vehicle(0, 100.0, 30.0, road=road)
        leader = make_vehicle(1, 100.0 + 5.0 + 15.0, 30.0, road=road)  # gap = tau*v
        w = make_world([ego, leader], road=road)
        assert custom_reward(ego, W, w) == pytest.approx(1.0 * 0.0 + 4.0 * 1.0 + 8.0 * 0.0)

    def test_ramp_vehicle_at_merge_end(self):
        road = RoadNetwork()
        ego = make_vehicle(0, road.merge_end, 10.0, lane=road.ramp_lane, road=road)
        w = make_world([ego], road=road)
        assert custom_reward(ego, W, w) == pytest.approx(0.0 + 0.0 + 8.0 * (-1.0))

    def test_matches_hand_composition_on_random_states(self):
        rng = np.random.default_rng(6)
        road = RoadNetwork()
        for _ in range(100):
            lane = int(rng.integers(0, 2))
            x = float(rng.uniform(150.0, 290.0))
            v = float(rng.uniform(2.0, 35.0))
            gap = float(rng.uniform(1.0, 60.0))
            ego = make_vehicle(0, x, v, lane=lane, road=road)
            leader = make_vehicle(1, x + 5.0 + gap, 20.0, lane=lane, road=road)
            w = make_world([ego, leader], road=road)
            r_h = -math.log(gap / (0.5 * max(v, 1.0)))
            r_s = min((v - 10.0) / 20.0, 1.0)
            r_m = 0.0
            if lane == road.ramp_lane:
                x_m = min(max(x - road.merge_start, 0.0), road.merge_length)
                r_m = -math.exp(-((x_m - 100.0) ** 2) / 1000.0)
            want = 1.0 * r_h + 4.0 * r_s + 8.0 * r_m
            assert custom_reward(ego, W, w) == pytest.approx(want, abs=1e-12)

    def test_ignores_crash_flag(self):
        road = RoadNetwork()
        ego = make_vehicle(0, 100.0, 20.0, road=road)
        w = make_world([ego], road=road)
        before = custom_reward(ego, W, w)
        ego.crashed = True
        assert custom_reward(ego, W, w) == before


class TestDefaultReward:
    def test_crash_contribution(self):
        road = RoadNetwork()
        ego = make_vehicle(0, 100.0, 20.0, road=road)
        w = make_world([ego], road=road)
        base = default_reward(ego, W, w)
        ego.crashed = True
        assert default_reward(ego, W, w) == pytest.approx(base - 200.0)

    def test_uncrashed_equals_custom(self):
        road = RoadNetwork()
        ego = make_vehicle(0, 100.0, 24.0, road=road)
        leader = make_vehicle(1, 130.0, 20.0, road=road)
        w = make_world([ego, leader], road=road)
        assert default_reward(ego, W, w) == custom_reward(ego, W, w)


class TestOverallReward:
    def test_isolated_vehicle(self):
        road = RoadNetwork()
        ego = make_vehicle(0, 100.0, 20.0, road=road)
        w = make_world([ego], road=road)
        assert overall_reward(ego, w, custom_reward, W) == custom_reward(ego, W, w)

    def test_two_vehicle_mean(self):
        road = RoadNetwork()
        a = make_vehicle(0, 100.0, 20.0, road=road)
        b = make_vehicle(1, 150.0, 25.0, road=road)
        w = make_world([a, b], road=road)
        ra = custom_reward(a, W, w)
        rb = custom_reward(b, W, w)
        assert overall_reward(a, w, custom_reward, W) == pytest.approx((ra + rb) / 2)
        assert overall_reward(b, w, custom_reward, W) == pytest.approx((ra + rb) / 2)

    def test_matches_brute_force_on_random_fleets(self):
        rng = np.random.default_rng(14)
        road = RoadNetwork()
        for _ in range(30):
            n = int(rng.integers(2, 10))
            vehicles = [
                make_vehicle(i, float(rng.uniform(0, 400)), float(rng.uniform(2, 30)),
                             lane=int(rng.integers(0, 2)), road=road)
                for i in range(n)
            ]
            w = make_world(vehicles, road=road)
            fleet = fleet_rewards(w, W, "custom")
            for ego in vehicles:
                # brute-force neighbourhood mean
                dists = sorted(
                    (math.hypot(o.state.x - ego.state.x, o.state.y - ego.state.y), o.vid)
                    for o in vehicles
                    if o.vid != ego.vid
                    and math.hypot(o.state.x - ego.state.x, o.state.y - ego.state.y)
                    <= w.scenario.comm_range
                )
                group = [ego.vid] + [vid for _, vid in dists[: w.scenario.perception_n]]
                want = sum(custom_reward(w.vehicle(g), W, w) for g in group) / len(group)
                assert fleet[ego.vid][1] == pytest.approx(want, abs=1e-12)
                assert fleet[ego.vid][0] == pytest.approx(custom_reward(ego, W, w), abs=1e-12)

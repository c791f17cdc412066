import math

import numpy as np
import pytest

from drivelab import mapfeatures as mf
from drivelab import roadworld as rw
from drivelab.geometry import Polyline


def straight_route(length=600.0, limit=50, lights=(), crossings=(), yields=()):
    n = max(int(length / 20), 2)
    pts = np.column_stack([np.linspace(0, length, n + 1), np.zeros(n + 1)])
    edge = rw.RoadEdge(0, 0, 1, Polyline(pts), limit, tuple(lights),
                       tuple(crossings), tuple(yields))
    net = rw.RoadNetwork({0: (0.0, 0.0), 1: (length, 0.0)}, [edge])
    route = rw.Route(((0, True),))
    return net, route, rw.RoutePath(net, route)


def four_way_net():
    """Orthogonal 4-way junction at (100, 0); approach arrives from the west."""
    mk = lambda pts: Polyline(pts)
    edges = [
        rw.RoadEdge(0, 0, 1, mk([[0, 0], [100, 0]]), 50),       # west approach
        rw.RoadEdge(1, 1, 2, mk([[100, 0], [200, 0]]), 50),     # straight exit
        rw.RoadEdge(2, 1, 3, mk([[100, 0], [100, 100]]), 50),   # left exit
        rw.RoadEdge(3, 1, 4, mk([[100, 0], [100, -100]]), 50),  # right exit
    ]
    nodes = {0: (0, 0), 1: (100, 0), 2: (200, 0), 3: (100, 100), 4: (100, -100)}
    return rw.RoadNetwork(nodes, edges)


class TestInverseDistanceEncoding:
    def test_beyond_cap_encodes_zero(self):
        assert mf.encode_inverse_distance(300.0) == 0.0
        assert mf.encode_inverse_distance(250.0001) == 0.0
        assert mf.encode_inverse_distance(math.inf) == 0.0

    def test_within_one_meter_saturates(self):
        assert mf.encode_inverse_distance(0.5) == 1.0
        assert mf.encode_inverse_distance(0.0) == 1.0

    def test_formula_on_random_distances(self):
        rng = np.random.default_rng(0)
        for d in rng.uniform(0.0, 400.0, size=500):
            got = mf.encode_inverse_distance(float(d))
            want = 0.0 if d > 250.0 else min(1.0, 1.0 / d) if d > 0 else 1.0
            assert abs(got - want) <= 1e-12


class TestExtractFrame:
    def test_attribute_distances(self):
        net, route, rp = straight_route(600.0, 50, lights=(400.0,),
                                        crossings=(110.0,), yields=(90.0,))
        f = mf.extract_frame_at(rp, 100.0)
        assert f.raw_d_light == pytest.approx(300.0)
        assert f.d_light == 0.0                       # beyond the 250 m cap
        assert f.raw_d_crossing == pytest.approx(10.0)
        assert f.d_crossing == pytest.approx(0.1)
        assert math.isinf(f.raw_d_yield)              # the one at 90 m is behind
        assert f.d_yield == 0.0

    def test_intersection_half_meter_ahead_saturates(self):
        net = four_way_net()
        route = rw.Route(((0, True), (2, True)))
        rp = rw.RoutePath(net, route)
        f = mf.extract_frame_at(rp, 99.5)
        assert f.raw_d_intersection == pytest.approx(0.5)
        assert f.d_intersection == 1.0

    def test_straight_route_future_headings_zero(self):
        net, route, rp = straight_route()
        f = mf.extract_frame_at(rp, 200.0)
        assert all(abs(h) < 1e-9 for h in f.future_heading)
        assert f.signed_curvature == pytest.approx(0.0, abs=1e-12)

    def test_speed_fields(self):
        net, route, rp = straight_route(600.0, 80)
        f = mf.extract_frame_at(rp, 300.0)
        assert f.speed_limit == 80.0
        assert f.free_flow_speed == 80.0  # straight road: no curvature cap

    def test_four_way_left_turn_headings_and_turn_number(self):
        net = four_way_net()
        rels = {}
        turns = {}
        for name, exit_edge in (("right", 3), ("straight", 1), ("left", 2)):
            route = rw.Route(((0, True), (exit_edge, True)))
            rp = rw.RoutePath(net, route)
            f = mf.extract_frame_at(rp, 60.0)
            rels[name] = f.our_road_heading
            turns[name] = f.turn_number
        assert rels["left"] == pytest.approx(90.0, abs=2.0)
        assert rels["right"] == pytest.approx(-90.0, abs=2.0)
        assert rels["straight"] == pytest.approx(0.0, abs=2.0)
        # counter-clockwise indexing orders right < straight < left
        assert turns["right"] < turns["straight"] < turns["left"]
        assert sorted(turns.values()) == [0, 1, 2]

    def test_other_roads_heading_is_nearest_to_straight(self):
        net = four_way_net()
        route = rw.Route(((0, True), (2, True)))  # turning left
        rp = rw.RoutePath(net, route)
        f = mf.extract_frame_at(rp, 60.0)
        assert f.other_roads_heading == pytest.approx(0.0, abs=2.0)

    def test_public_extract_frame_checks_route_membership(self):
        net = four_way_net()
        route = rw.Route(((0, True), (2, True)))
        f = mf.extract_frame(net, route, (0, 60.0))
        assert f.raw_d_intersection == pytest.approx(40.0)
        with pytest.raises(ValueError):
            mf.extract_frame(net, route, (3, 10.0))  # edge not on route

    def test_curved_route_heading_sign(self):
        R = 80.0
        th = np.linspace(0, math.pi / 2, 120)
        pts = np.column_stack([R * np.sin(th), R * (1 - np.cos(th))])  # left turn
        edge = rw.RoadEdge(0, 0, 1, Polyline(pts), 80)
        net = rw.RoadNetwork({0: tuple(pts[0]), 1: tuple(pts[-1])}, [edge])
        rp = rw.RoutePath(net, rw.Route(((0, True),)))
        f = mf.extract_frame_at(rp, 20.0)
        assert f.signed_curvature > 0.005
        assert f.future_heading[-1] > 20.0  # 50 m ahead on an R=80 left curve
        assert f.curvature == pytest.approx(abs(f.signed_curvature))
        assert f.free_flow_speed <= rw.curvature_speed_cap_kmh(f.curvature) + 1e-9

    def test_frames_respect_ranges_on_generated_world(self):
        net = rw.generate_network(3, 12, 0.5)
        route = rw.random_route(net, 2, 900.0)
        rp = rw.RoutePath(net, route)
        for d in np.linspace(0.0, rp.length, 300):
            f = mf.extract_frame_at(rp, float(d))
            for enc in (f.d_intersection, f.d_light, f.d_crossing, f.d_yield):
                assert 0.0 <= enc <= 1.0
            assert -180.0 <= f.our_road_heading < 180.0
            assert -180.0 <= f.other_roads_heading < 180.0
            assert all(-180.0 <= h < 180.0 for h in f.future_heading)
            assert f.curvature >= 0.0
            assert f.turn_number >= 0
            assert f.speed_limit in (30, 50, 80, 120)


class TestWindows:
    def make_log(self, n=40, rate=10.0):
        t = np.arange(n) / rate
        return rw.DriveLog(rate, t, np.linspace(-5, 5, n), np.linspace(30, 50, n),
                           np.linspace(0, 100, n), np.zeros(n),
                           np.linspace(0, 0.2, n), np.linspace(0, 100, n))

    def frames_for(self, n):
        net, route, rp = straight_route()
        return [mf.extract_frame_at(rp, d) for d in np.linspace(0, 300, n)]

    def test_window_lengths(self):
        frames = self.frames_for(40)
        log = self.make_log(40)
        w = mf.build_window(frames, log, 25)
        assert w.m14.shape == (160,)
        assert w.m56.shape == (7,)
        assert w.ego.shape == (9,)

    def test_constant_world_gives_identical_blocks(self):
        net, route, rp = straight_route()
        frame = mf.extract_frame_at(rp, 150.0)
        frames = [frame] * 40
        w = mf.build_window(frames, self.make_log(40), 30)
        blocks = w.m14.reshape(20, 8)
        assert np.allclose(blocks, blocks[0])

    def test_blocks_are_oldest_first(self):
        net, route, rp = straight_route(600.0, 50, crossings=(400.0,))
        frames = [mf.extract_frame_at(rp, d) for d in np.linspace(300, 396, 40)]
        w = mf.build_window(frames, self.make_log(40), 39)
        blocks = w.m14.reshape(20, 8)
        assert blocks[-1][2] > blocks[0][2]  # crossing closer in the newest block

    def test_ego_vector_matches_hand_computation(self):
        log = rw.DriveLog(10.0, np.arange(3) / 10.0,
                          np.array([10.0, -20.0, 30.0]),
                          np.array([40.0, 50.0, 60.0]),
                          np.zeros(3), np.zeros(3),
                          np.array([0.0, 0.1, 0.25]), np.zeros(3))
        ego = mf.ego_vector(log, 2)
        want = []
        for i, rate in ((0, 0.0), (1, 1.0), (2, 1.5)):
            want.extend([log.speed[i] / 180.0, log.steer[i] / 720.0,
                         rate / math.pi])
        assert np.allclose(ego, want)

    def test_insufficient_history_raises(self):
        frames = self.frames_for(40)
        log = self.make_log(40)
        with pytest.raises(ValueError):
            mf.build_window(frames, log, 10)
        with pytest.raises(ValueError):
            mf.build_window(frames[:5], log, 4)


def test_structural_constants():
    from drivelab import constants as c
    assert c.MAP_HISTORY_LEN == 160
    assert c.HEADING_VEC_LEN == 7
    assert c.DRIVELET_LEN == 5
    assert c.DISC_INPUT_LEN == 10
    assert c.N_CLUSTERS == 75
    assert c.ATTRIBUTE_CAP_M == 250.0
    assert c.NEAR_M == 40.0
    assert c.INTERSECTION_NEAR_M == 20.0
    assert c.STEER_ERR_DEG == 10.0
    assert c.SPEED_ERR_KMH == 5.0

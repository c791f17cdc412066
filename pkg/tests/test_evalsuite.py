import math

import numpy as np
import pytest

from drivelab import evalsuite as ev
from drivelab.mapfeatures import MapFeatureFrame


def make_frame(**kw):
    base = dict(raw_d_intersection=math.inf, raw_d_light=math.inf,
                raw_d_crossing=math.inf, raw_d_yield=math.inf,
                d_intersection=0.0, d_light=0.0, d_crossing=0.0, d_yield=0.0,
                speed_limit=50.0, free_flow_speed=50.0, curvature=0.0,
                signed_curvature=0.0, turn_number=0, our_road_heading=0.0,
                other_roads_heading=0.0, future_heading=(0.0,) * 5,
                dist_to_node=math.inf, dist_from_prev=math.inf)
    base.update(kw)
    return MapFeatureFrame(**base)


class TestAccuracyMetrics:
    def test_identity(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert ev.accuracy_metrics(x, x) == (0.0, 0.0)

    def test_hand_case(self):
        preds = np.array([[3.0, 1.0], [4.0, 0.0]])
        truths = np.zeros((2, 2))
        assert ev.accuracy_metrics(preds, truths) == (3.5, 0.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ev.accuracy_metrics(np.zeros((0, 2)), np.zeros((0, 2)))

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        preds = rng.uniform(-700, 700, size=(1000, 2))
        truths = rng.uniform(-700, 700, size=(1000, 2))
        a_s, a_v = ev.accuracy_metrics(preds, truths)
        s_sum = v_sum = 0.0
        for p, t in zip(preds, truths):
            s_sum += abs(p[0] - t[0])
            v_sum += abs(p[1] - t[1])
        assert a_s == pytest.approx(s_sum / 1000, abs=1e-12)
        assert a_v == pytest.approx(v_sum / 1000, abs=1e-12)


class TestComfortMetrics:
    def test_constant_is_zero(self):
        x = np.tile([3.0, 40.0], (10, 1))
        assert ev.comfort_metrics(x, 10.0) == (0.0, 0.0)

    def test_hand_case(self):
        x = np.array([[0.0, 10.0], [0.0, 12.0], [0.0, 13.0]])
        c_lat, c_lon = ev.comfort_metrics(x, 10.0)
        assert c_lat == 0.0
        assert c_lon == pytest.approx(100.0)

    def test_linear_ramp_is_zero(self):
        x = np.column_stack([np.linspace(0, 10, 8), np.linspace(5, 40, 8)])
        assert ev.comfort_metrics(x, 10.0) == (pytest.approx(0.0, abs=1e-9),
                                               pytest.approx(0.0, abs=1e-9))

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            ev.comfort_metrics(np.zeros((2, 2)), 10.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 100, size=(500, 2))
        c_lat, c_lon = ev.comfort_metrics(x, 10.0)
        lat = [abs(x[i - 1, 0] - 2 * x[i, 0] + x[i + 1, 0]) * 100.0
               for i in range(1, 499)]
        lon = [abs(x[i - 1, 1] - 2 * x[i, 1] + x[i + 1, 1]) * 100.0
               for i in range(1, 499)]
        assert c_lat == pytest.approx(np.mean(lat), abs=1e-9)
        assert c_lon == pytest.approx(np.mean(lon), abs=1e-9)

    def test_consistent_with_drivelet_comfort_loss(self):
        from drivelab.drivemodel import loss_comfort
        rng = np.random.default_rng(2)
        series = rng.uniform(0, 50, size=(40, 2))
        # over non-overlapping 5-step windows, the metric must equal the
        # per-window loss terms averaged the same way
        lat_terms, lon_terms = [], []
        for lo in range(0, 40, 5):
            win = series[lo:lo + 5]
            s_only = loss_comfort(win, 10.0, speed_weight=0.0)[0]
            both = loss_comfort(win, 10.0, speed_weight=1.0)[0]
            c_lat, c_lon = ev.comfort_metrics(win, 10.0)
            assert s_only == pytest.approx(c_lat * 3, abs=1e-9)
            assert both - s_only == pytest.approx(c_lon * 3, abs=1e-9)
            lat_terms.append(c_lat)
            lon_terms.append(c_lon)
        assert np.mean(lat_terms) > 0


class TestClusters:
    def separated_windows(self, k=75, per=6, seed=0):
        rng = np.random.default_rng(seed)
        centers = rng.uniform(-50, 50, size=(k, 10)) * np.array([1] * 5 + [3] * 5)
        windows = []
        for c in centers:
            windows.append(c + rng.normal(0, 0.05, size=(per, 10)))
        return np.concatenate(windows), centers

    def test_recovers_separated_clouds(self):
        windows, centers = self.separated_windows()
        model = ev.fit_clusters(windows, k=75, seed=3)
        assert len(model.centroids) == 75
        labels = ev.assign_clusters(model, windows)
        # every cloud of 6 points must share one label, distinct across clouds
        seen = set()
        for i in range(75):
            cloud = labels[i * 6:(i + 1) * 6]
            assert len(set(cloud.tolist())) == 1
            seen.add(int(cloud[0]))
        assert len(seen) == 75

    def test_same_seed_identical(self):
        windows, _ = self.separated_windows(seed=1)
        a = ev.fit_clusters(windows, k=75, seed=9)
        b = ev.fit_clusters(windows, k=75, seed=9)
        assert np.array_equal(a.centroids, b.centroids)

    def test_k1_is_mean(self):
        rng = np.random.default_rng(4)
        windows = rng.normal(size=(40, 10))
        model = ev.fit_clusters(windows, k=1, seed=0)
        normalized = (windows - model.mean) / model.std
        assert np.allclose(model.centroids[0], normalized.mean(axis=0))

    def test_fewer_windows_than_k_rejected(self):
        with pytest.raises(ValueError):
            ev.fit_clusters(np.zeros((10, 10)), k=75, seed=0)

    def test_no_empty_clusters(self):
        rng = np.random.default_rng(5)
        windows = rng.normal(size=(400, 10))
        model = ev.fit_clusters(windows, k=75, seed=2)
        labels = ev.assign_clusters(model, windows)
        assert len(set(labels.tolist())) == 75


class TestHumanLikeness:
    def test_identical_windows_score_100(self):
        rng = np.random.default_rng(6)
        human = rng.normal(size=(200, 10))
        model = ev.fit_clusters(human, k=20, seed=0)
        assert ev.human_likeness(model, human, human) == 100.0

    def test_forced_disagreement_scores_0(self):
        windows, centers = TestClusters().separated_windows(k=10, per=20)
        model = ev.fit_clusters(windows, k=10, seed=0)
        human = windows
        labels = ev.assign_clusters(model, human)
        # push each model window to the centroid farthest from the human's
        far = model.centroids[
            np.argmax(((model.centroids[labels][:, None, :]
                        - model.centroids[None, :, :]) ** 2).sum(axis=2), axis=1)]
        machine = far * model.std + model.mean
        assert ev.human_likeness(model, machine, human) == 0.0

    def test_matches_assignment_oracle(self):
        rng = np.random.default_rng(7)
        human = rng.normal(size=(500, 10))
        machine = human + rng.normal(0, 0.8, size=(500, 10))
        model = ev.fit_clusters(human, k=40, seed=1)
        h = ev.human_likeness(model, machine, human)
        same = 0
        for mw, hw in zip(machine, human):
            dm = ((model.centroids - (mw - model.mean) / model.std) ** 2).sum(axis=1)
            dh = ((model.centroids - (hw - model.mean) / model.std) ** 2).sum(axis=1)
            same += int(np.argmin(dm) == np.argmin(dh))
        assert h == pytest.approx(100.0 * same / 500, abs=1e-9)

    def test_affine_renormalization_invariance(self):
        rng = np.random.default_rng(8)
        human = rng.normal(size=(300, 10))
        machine = human + rng.normal(0, 0.5, size=(300, 10))
        model = ev.fit_clusters(human, k=25, seed=2)
        h0 = ev.human_likeness(model, machine, human)
        scale = rng.uniform(0.5, 2.0, size=10)
        shift = rng.uniform(-3, 3, size=10)
        folded = ev.ClusterModel(model.centroids,
                                 model.mean * scale + shift, model.std * scale,
                                 model.seed)
        h1 = ev.human_likeness(folded, machine * scale + shift,
                               human * scale + shift)
        assert h1 == pytest.approx(h0, abs=1e-9)

    def test_misaligned_inputs_rejected(self):
        model = ev.fit_clusters(np.random.default_rng(9).normal(size=(50, 10)),
                                k=5, seed=0)
        with pytest.raises(ValueError):
            ev.human_likeness(model, np.zeros((4, 10)), np.zeros((5, 10)))

    def test_maneuver_windows_layout(self):
        series = np.column_stack([np.arange(8.0), 10.0 + np.arange(8.0)])
        w = ev.maneuver_windows(series)
        assert w.shape == (4, 10)
        assert np.allclose(w[0], [0, 1, 2, 3, 4, 10, 11, 12, 13, 14])
        assert np.allclose(w[3], [3, 4, 5, 6, 7, 13, 14, 15, 16, 17])


class TestScenarioFilter:
    def test_lights_or_crossings(self):
        frames = [make_frame(raw_d_light=35.0, speed_limit=50.0),
                  make_frame(raw_d_crossing=39.0, speed_limit=30.0),
                  make_frame(raw_d_light=35.0, speed_limit=80.0),
                  make_frame(raw_d_light=45.0, speed_limit=50.0)]
        mask = ev.scenario_filter(frames, "lights_or_crossings")
        assert mask.tolist() == [True, True, False, False]

    def test_winding_80(self):
        frames = [make_frame(curvature=0.011, speed_limit=80.0,
                             raw_d_intersection=150.0),
                  make_frame(curvature=0.011, speed_limit=80.0,
                             raw_d_intersection=50.0),
                  make_frame(curvature=0.009, speed_limit=80.0,
                             raw_d_intersection=150.0),
                  make_frame(curvature=0.02, speed_limit=120.0,
                             raw_d_intersection=150.0)]
        mask = ev.scenario_filter(frames, "winding_80")
        assert mask.tolist() == [True, False, False, False]

    def test_near_intersection_and_overlap(self):
        frame = make_frame(raw_d_intersection=19.0, raw_d_light=10.0,
                           speed_limit=50.0)
        assert ev.scenario_filter([frame], "near_intersection")[0]
        assert ev.scenario_filter([frame], "lights_or_crossings")[0]

    def test_letter_aliases(self):
        frame = make_frame(raw_d_intersection=10.0)
        assert ev.scenario_filter([frame], "C")[0]
        assert not ev.scenario_filter([frame], "A")[0]
        with pytest.raises(ValueError):
            ev.scenario_filter([frame], "D")

    def test_matches_hand_filter_on_random_frames(self):
        rng = np.random.default_rng(10)
        frames = []
        for _ in range(100):
            frames.append(make_frame(
                raw_d_light=float(rng.uniform(0, 300)),
                raw_d_crossing=float(rng.uniform(0, 300)),
                raw_d_intersection=float(rng.uniform(0, 300)),
                curvature=float(rng.uniform(0, 0.02)),
                speed_limit=float(rng.choice([30, 50, 80, 120]))))
        ma = ev.scenario_filter(frames, "lights_or_crossings")
        mb = ev.scenario_filter(frames, "winding_80")
        mc = ev.scenario_filter(frames, "near_intersection")
        for i, f in enumerate(frames):
            assert ma[i] == ((f.raw_d_light < 40 or f.raw_d_crossing < 40)
                             and f.speed_limit <= 50)
            assert mb[i] == (f.curvature > 0.01 and f.speed_limit == 80
                             and f.raw_d_intersection > 100)
            assert mc[i] == (f.raw_d_intersection < 20)


class TestErrorDiagnosis:
    def test_no_errors_flagged(self):
        frames = [make_frame() for _ in range(10)]
        preds = np.tile([0.0, 50.0], (10, 1))
        report = ev.error_diagnosis(preds, preds, frames)
        for panel in report.values():
            for rec in panel.values():
                assert rec["no_errors"]
                assert all(r == 0.0 for r in rec["relative_error_rate"])

    def test_single_bin_concentration(self):
        frames = [make_frame(speed_limit=float(v))
                  for v in (30, 30, 50, 80, 120)]
        truths = np.tile([0.0, 50.0], (5, 1))
        preds = truths.copy()
        preds[0, 1] += 9.0  # one speed error in the 30 km/h bin
        report = ev.error_diagnosis(preds, truths, frames)
        rec = report["speed"]["speed_limit"]
        assert rec["relative_error_rate"] == [100.0, 0.0, 0.0, 0.0]
        assert not rec["no_errors"]
        assert report["steering"]["speed_limit"]["no_errors"]

    def test_channels_use_their_own_thresholds(self):
        frames = [make_frame(), make_frame()]
        truths = np.tile([0.0, 50.0], (2, 1))
        preds = truths.copy()
        preds[0, 0] += 10.5   # steering error only
        preds[1, 1] += 5.5    # speed error only
        report = ev.error_diagnosis(preds, truths, frames)
        assert sum(report["steering"]["traffic_light"]["errors"]) == 1
        assert sum(report["speed"]["traffic_light"]["errors"]) == 1
        below = truths.copy()
        below[0, 0] += 9.5
        below[1, 1] += 4.5
        report = ev.error_diagnosis(below, truths, frames)
        assert report["steering"]["traffic_light"]["no_errors"]
        assert report["speed"]["traffic_light"]["no_errors"]

    def test_rates_sum_to_100(self):
        rng = np.random.default_rng(11)
        frames = [make_frame(
            speed_limit=float(rng.choice([30, 50, 80, 120])),
            raw_d_light=float(rng.uniform(0, 100)),
            raw_d_crossing=float(rng.uniform(0, 100)),
            raw_d_intersection=float(rng.uniform(0, 60)),
            dist_to_node=float(rng.uniform(0, 60)),
            dist_from_prev=float(rng.uniform(0, 60)),
            signed_curvature=float(rng.uniform(-0.01, 0.01)))
            for _ in range(300)]
        truths = np.column_stack([rng.uniform(-90, 90, 300),
                                  rng.uniform(0, 100, 300)])
        preds = truths + rng.normal(0, 12, size=(300, 2))
        report = ev.error_diagnosis(preds, truths, frames)
        for panel in report.values():
            for rec in panel.values():
                if not rec["no_errors"]:
                    assert sum(rec["relative_error_rate"]) == pytest.approx(
                        100.0, abs=1e-6)

    def test_intersection_phase_binning(self):
        cases = [
            (make_frame(dist_to_node=5.0, raw_d_intersection=5.0), "inside"),
            (make_frame(dist_to_node=15.0, raw_d_intersection=15.0), "approach"),
            (make_frame(dist_to_node=15.0, raw_d_intersection=500.0,
                        dist_from_prev=15.0), "depart"),
            (make_frame(dist_to_node=50.0, raw_d_intersection=500.0,
                        dist_from_prev=50.0), "none"),
        ]
        for frame, want in cases:
            assert ev._attribute_bin(frame, "intersection") == want

    def test_road_type_binning(self):
        assert ev._attribute_bin(make_frame(signed_curvature=0.003),
                                 "road_type") == "left_bend"
        assert ev._attribute_bin(make_frame(signed_curvature=-0.003),
                                 "road_type") == "right_bend"
        assert ev._attribute_bin(make_frame(signed_curvature=0.001),
                                 "road_type") == "straight"


class TestReport:
    def test_evaluate_predictions_pools_routes(self):
        rng = np.random.default_rng(12)
        per_route = []
        human_all = []
        for _ in range(3):
            truths = np.column_stack([rng.uniform(-30, 30, 80),
                                      rng.uniform(20, 60, 80)])
            preds = truths + rng.normal(0, 3, size=(80, 2))
            frames = [make_frame() for _ in range(80)]
            per_route.append((preds, truths, frames))
            human_all.append(ev.maneuver_windows(truths))
        clusters = ev.fit_clusters(np.concatenate(human_all), k=20, seed=0)
        report = ev.evaluate_predictions(per_route, clusters, 10.0)
        assert 0.0 <= report.h <= 100.0
        assert report.n_samples == 240
        all_preds = np.concatenate([p for p, _, _ in per_route])
        all_truths = np.concatenate([t for _, t, _ in per_route])
        want_as, want_av = ev.accuracy_metrics(all_preds, all_truths)
        assert report.a_s == pytest.approx(want_as)
        assert report.a_v == pytest.approx(want_av)

    def test_report_files(self, tmp_path):
        rng = np.random.default_rng(13)
        truths = np.column_stack([rng.uniform(-30, 30, 100),
                                  rng.uniform(20, 60, 100)])
        preds = truths + rng.normal(0, 8, size=(100, 2))
        frames = [make_frame() for _ in range(100)]
        clusters = ev.fit_clusters(ev.maneuver_windows(truths), k=10, seed=0)
        report = ev.evaluate_predictions([(preds, truths, frames)], clusters, 10.0)
        ev.report_to_files(report, tmp_path / "report.json",
                           tables_dir=str(tmp_path),
                           meta={"config_hash": "h"},
                           svg_path=tmp_path / "diag.svg")
        assert (tmp_path / "report.json").exists()
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "diagnosis_steering.csv").exists()
        svg = (tmp_path / "diag.svg").read_text()
        assert svg.startswith("<svg") and "</svg>" in svg

import numpy as np
import pytest

from trellismap.geometry import Pose, Rotation
from trellismap.perception import (
    CameraIntrinsics,
    CameraModel,
    Detection,
    backproject,
    bbox_iou,
    centroid,
    filter_detections,
    make_observation,
    reference_point,
)

K = CameraIntrinsics(fx=380.0, fy=380.0, cx=320.0, cy=240.0, width=640, height=480)


def det(track_id=0, cls="pole", conf=0.9, bbox=(100, 100, 120, 200), samples=None, t=0.0):
    if samples is None:
        samples = np.tile([110.0, 150.0, 3.0], (40, 1))
    return Detection(t=t, track_id=track_id, cls=cls, confidence=conf, bbox=bbox, samples=samples)


class TestFilter:
    def test_confidence_threshold(self):
        kept = filter_detections([det(conf=0.79)], 0.8, {"pole", "trunk"}, 0.5)
        assert kept == []
        kept = filter_detections([det(conf=0.80)], 0.8, {"pole", "trunk"}, 0.5)
        assert len(kept) == 1

    def test_class_gate(self):
        kept = filter_detections([det(cls="trunk")], 0.5, {"pole"}, 0.5)
        assert kept == []

    def test_nms_identical_boxes(self):
        a = det(track_id=1, conf=0.9)
        b = det(track_id=2, conf=0.85)
        kept = filter_detections([b, a], 0.5, {"pole"}, 0.5)
        assert [d.track_id for d in kept] == [1]

    def test_disjoint_boxes_survive(self):
        a = det(track_id=1, bbox=(0, 0, 10, 10))
        b = det(track_id=2, bbox=(100, 100, 110, 110))
        kept = filter_detections([a, b], 0.5, {"pole"}, 0.01)
        assert len(kept) == 2

    def test_cross_class_not_suppressed(self):
        a = det(track_id=1, cls="pole", conf=0.9)
        b = det(track_id=2, cls="trunk", conf=0.85)
        kept = filter_detections([a, b], 0.5, {"pole", "trunk"}, 0.5)
        assert len(kept) == 2

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        dets = []
        for i in range(30):
            x0, y0 = rng.uniform(0, 500, size=2)
            w, h = rng.uniform(20, 120, size=2)
            dets.append(
                det(
                    track_id=i,
                    cls=rng.choice(["pole", "trunk"]),
                    conf=rng.uniform(0.5, 1.0),
                    bbox=(x0, y0, x0 + w, y0 + h),
                )
            )
        once = filter_detections(dets, 0.7, {"pole", "trunk"}, 0.4)
        twice = filter_detections(once, 0.7, {"pole", "trunk"}, 0.4)
        assert [d.track_id for d in once] == [d.track_id for d in twice]

    def test_iou_values(self):
        assert bbox_iou((0, 0, 10, 10), (0, 0, 10, 10)) == pytest.approx(1.0)
        assert bbox_iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0


class TestBackproject:
    def test_principal_point_ray(self):
        d = det(samples=np.tile([K.cx, K.cy, 3.0], (40, 1)))
        cloud = backproject(d, K, 0.3, 8.0, 30)
        assert np.allclose(cloud, [0.0, 0.0, 3.0])

    def test_out_of_range_dropped(self):
        samples = np.tile([K.cx, K.cy, 8.1], (40, 1))
        assert backproject(det(samples=samples), K, 0.3, 8.0, 1) is None

    def test_pinhole_closed_form(self):
        d = det(samples=np.tile([K.cx + K.fx, K.cy, 2.0], (40, 1)))
        cloud = backproject(d, K, 0.3, 8.0, 30)
        assert np.allclose(cloud, [2.0, 0.0, 2.0])

    def test_min_points(self):
        samples = np.tile([K.cx, K.cy, 3.0], (29, 1))
        assert backproject(det(samples=samples), K, 0.3, 8.0, 30) is None

    def test_nonfinite_dropped(self):
        samples = np.tile([K.cx, K.cy, 3.0], (40, 1))
        samples[0, 2] = np.nan
        samples[1, 2] = np.inf
        cloud = backproject(det(samples=samples), K, 0.3, 8.0, 30)
        assert cloud.shape[0] == 38

    def test_project_backproject_identity(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform([-2, -1, 0.5], [2, 1, 7.5], size=(200, 3))
        uvz = K.project(pts)
        d = det(samples=uvz)
        cloud = backproject(d, K, 0.3, 8.0, 1)
        assert np.max(np.abs(K.project(cloud) - uvz)) < 1e-9
        assert np.max(np.abs(cloud - pts)) < 1e-9


class TestReferencePoint:
    def test_hand_computed_quartile(self):
        z = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 4.0]
        cloud = np.array([[0.0, float(i), z[i]] for i in range(8)])
        assert np.allclose(reference_point(cloud), [0.0, 6.5, 3.0])

    def test_degenerate_cloud(self):
        p = np.array([0.3, -0.2, 4.0])
        cloud = np.tile(p, (10, 1))
        assert np.allclose(reference_point(cloud), p)

    def test_base_outlier_median_vs_mean(self):
        # 36 points, base subset of 9; corrupt one base point's x and z.
        y = np.repeat(np.arange(4.0), 9)
        cloud = np.column_stack([np.zeros(36), y, np.full(36, 2.0)])
        ref0 = reference_point(cloud)
        corrupted = cloud.copy()
        base_rows = np.where(y == 3.0)[0]
        corrupted[base_rows[4], 0] += 0.9
        corrupted[base_rows[4], 2] += 50.0
        ref1 = reference_point(corrupted)
        assert ref1[2] == ref0[2]  # median ignores one far depth
        assert ref1[0] - ref0[0] == pytest.approx(0.9 / 9)

    def test_median_invariant_under_minority_corruption(self):
        rng = np.random.default_rng(7)
        cloud = np.column_stack(
            [rng.normal(size=20) * 0.01, np.arange(20.0), np.full(20, 3.0)]
        )
        k = 5  # ceil(20 / 4)
        corrupted = cloud.copy()
        base_rows = np.argsort(cloud[:, 1], kind="stable")[-k:]
        for row in base_rows[: (k - 1) // 2]:
            corrupted[row, 2] = 80.0
        assert reference_point(corrupted)[2] == reference_point(cloud)[2]

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            reference_point(np.zeros((3, 3)))

    def test_centroid_baseline(self):
        cloud = np.array([[0.0, 0.0, 1.0], [2.0, 2.0, 3.0]])
        assert np.allclose(centroid(cloud), [1.0, 1.0, 2.0])


class TestMakeObservation:
    def test_produces_observation(self):
        pts = np.column_stack(
            [np.full(40, 0.2), np.linspace(-1.0, 0.5, 40), np.full(40, 3.0)]
        )
        d = det(samples=K.project(pts), conf=0.93, cls="trunk", track_id=7)
        obs = make_observation(d, K, 0.3, 8.0, 30)
        assert obs is not None
        assert obs.cls == "trunk"
        assert obs.track_id == 7
        assert obs.num_points == 40
        assert abs(obs.point[2] - 3.0) < 1e-9

    def test_rejects_thin_detections(self):
        d = det(samples=np.tile([K.cx, K.cy, 3.0], (10, 1)))
        assert make_observation(d, K, 0.3, 8.0, 30) is None


class TestCameraModel:
    def test_front_mount_sees_forward(self):
        cam = CameraModel.front_mount(K, [0.2, 0.0, 0.5], 0.3, 8.0)
        body = Pose.identity()
        assert cam.sees(body, np.array([4.0, 0.0, 0.5]))
        assert not cam.sees(body, np.array([-2.0, 0.0, 0.5]))  # behind
        assert not cam.sees(body, np.array([9.0, 0.0, 0.5]))  # too far
        assert not cam.sees(body, np.array([4.0, 8.0, 0.5]))  # off image

    def test_yawed_body(self):
        cam = CameraModel.front_mount(K, [0.0, 0.0, 0.5], 0.3, 8.0)
        body = Pose(Rotation.from_yaw(np.pi / 2), np.zeros(3))
        assert cam.sees(body, np.array([0.0, 4.0, 0.5]))
        assert not cam.sees(body, np.array([4.0, 0.0, 0.5]))

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskface.errors import GeometryError, ValidationError
from maskface.landmark import (
    ANCHOR_INDICES,
    Bin,
    FaceAnchors,
    FaceLandmarks,
    LandmarkParseError,
    bin_for_angle,
    dump_landmarks,
    estimate_tilt,
    extract_anchors,
    load_landmarks,
    mean_face_shape,
    parse_landmarks,
    rotation_matrix,
    save_landmarks,
    synthetic_face,
)


def face_with(p27, p8):
    pts = synthetic_face((80.0, 60.0), 40.0).points.copy()
    pts[27], pts[8] = p27, p8
    return FaceLandmarks(pts, bbox=(0, 0, 200, 200))


def two_point_angle(top, chin):
    # independent oracle: angle between (chin - top) and the downward image axis
    v = np.subtract(chin, top)
    cos = v[1] / np.hypot(*v)
    return math.copysign(math.degrees(math.acos(max(-1.0, min(1.0, cos)))), v[0]) if v[0] else (
        0.0 if v[1] > 0 else 180.0
    )


def rotate_points(points, theta_deg, center):
    return (np.c_[points, np.ones(len(points))] @ rotation_matrix(theta_deg, center).T)[:, :2]


class TestFaceLandmarks:
    def test_requires_68_points(self):
        with pytest.raises(ValidationError, match="expected 68"):
            FaceLandmarks(np.zeros((67, 2)))

    def test_rejects_non_finite(self):
        pts = mean_face_shape() * 50 + 100
        pts[3, 0] = np.nan
        with pytest.raises(ValidationError, match="finite"):
            FaceLandmarks(pts)

    def test_bbox_must_have_positive_size(self):
        with pytest.raises(ValidationError, match="positive"):
            FaceLandmarks(mean_face_shape() * 50 + 100, bbox=(0, 0, 0, 10))

    def test_points_within_expanded_bbox(self):
        pts = mean_face_shape() * 50 + 100
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        w, h = hi - lo
        FaceLandmarks(pts, bbox=(lo[0] + 0.3 * w, lo[1], 0.7 * w, h))  # left edge within 50% slack
        with pytest.raises(ValidationError, match="outside"):
            FaceLandmarks(pts, bbox=(lo[0] + 0.6 * w, lo[1], 0.4 * w, h))

    def test_default_bbox_is_point_extent(self):
        pts = mean_face_shape() * 50 + 100
        lm = FaceLandmarks(pts)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        assert lm.bbox == pytest.approx((lo[0], lo[1], hi[0] - lo[0], hi[1] - lo[1]))

    def test_points_are_read_only(self):
        lm = synthetic_face((50, 50), 20)
        with pytest.raises(ValueError):
            lm.points[0, 0] = 1.0


class TestEstimateTilt:
    def test_vertical_is_front(self):
        tilt = estimate_tilt(face_with((50, 20), (50, 80)))
        assert tilt.angle_deg == 0.0
        assert tilt.bin is Bin.FRONT

    def test_diagonal_right(self):
        tilt = estimate_tilt(face_with((50, 20), (110, 80)))
        assert tilt.angle_deg == pytest.approx(45.0, abs=1e-12)
        assert tilt.bin is Bin.RIGHT

    def test_diagonal_left(self):
        tilt = estimate_tilt(face_with((50, 20), (-10, 80)))
        assert tilt.angle_deg == pytest.approx(-45.0, abs=1e-12)
        assert tilt.bin is Bin.LEFT

    def test_coincident_points_raise(self):
        with pytest.raises(GeometryError):
            estimate_tilt(face_with((50, 50), (50, 50)))

    @pytest.mark.parametrize(
        "angle, expected",
        [(-15.0, Bin.FRONT), (15.0, Bin.FRONT), (-15.0001, Bin.LEFT), (15.0001, Bin.RIGHT), (0.0, Bin.FRONT)],
    )
    def test_bin_thresholds_inclusive_front(self, angle, expected):
        assert bin_for_angle(angle) is expected

    def test_perturbed_fixture_matches_two_point_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            face = synthetic_face((120, 110), 45, roll_deg=rng.uniform(-40, 40), jitter=2.0, rng=rng)
            expected = two_point_angle(face.points[27], face.points[8])
            assert estimate_tilt(face).angle_deg == pytest.approx(expected, abs=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(
        roll=st.floats(-60, 60),
        theta=st.floats(-170, 170),
        cx=st.floats(-300, 300),
        cy=st.floats(-300, 300),
    )
    def test_rotation_equivariance(self, roll, theta, cx, cy):
        face = synthetic_face((100, 100), 50, roll_deg=roll)
        rotated = FaceLandmarks(rotate_points(face.points, theta, (cx, cy)))
        delta = estimate_tilt(rotated).angle_deg - estimate_tilt(face).angle_deg
        wrapped = (delta - theta + 180.0) % 360.0 - 180.0
        assert abs(wrapped) < 1e-9


class TestExtractAnchors:
    def test_selects_fixed_indices(self):
        face = synthetic_face((100, 100), 50)
        anchors = extract_anchors(face)
        np.testing.assert_array_equal(anchors.points, face.points[[28, 8, 2, 14, 5, 11]])
        assert ANCHOR_INDICES == (28, 8, 2, 14, 5, 11)
        np.testing.assert_array_equal(anchors.chin_tip, face.points[8])
        np.testing.assert_array_equal(anchors.nose_bridge, face.points[28])

    def test_chin_above_nose_rejected(self):
        pts = synthetic_face((100, 100), 50).points.copy()
        pts[8] = pts[28] - (0, 5)
        with pytest.raises(ValidationError, match="chin"):
            extract_anchors(FaceLandmarks(pts))

    def test_crossed_jaw_rejected(self):
        pts = synthetic_face((100, 100), 50).points.copy()
        pts[[2, 14]] = pts[[14, 2]]
        with pytest.raises(ValidationError, match="jaw"):
            extract_anchors(FaceLandmarks(pts))

    def test_coincident_anchors_rejected(self):
        pts = mean_face_shape() * 50 + 100
        with pytest.raises(ValidationError, match="coincide"):
            FaceAnchors(np.vstack([pts[[28, 8, 2, 14, 5]], pts[5]]))

    def test_rotated_fixture_anchors_equal_rotated_originals(self):
        face = synthetic_face((100, 100), 50)
        rotated = FaceLandmarks(rotate_points(face.points, 30.0, (100, 100)))
        expected = rotate_points(face.points[list(ANCHOR_INDICES)], 30.0, (100, 100))
        np.testing.assert_allclose(extract_anchors(rotated).points, expected, atol=1e-12)

    def test_face_order_does_not_change_anchors(self, tmp_path):
        faces = [synthetic_face((60 + 80 * k, 100), 30, roll_deg=5 * k) for k in range(3)]
        save_landmarks(tmp_path / "a.json", faces)
        save_landmarks(tmp_path / "b.json", faces[::-1])
        a = [extract_anchors(f).points for f in load_landmarks(tmp_path / "a.json")]
        b = [extract_anchors(f).points for f in load_landmarks(tmp_path / "b.json")]
        for x, y in zip(a, b[::-1]):
            np.testing.assert_array_equal(x, y)


class TestLandmarkFiles:
    def test_single_face(self, tmp_path):
        face = synthetic_face((100, 100), 50)
        path = tmp_path / "f.json"
        path.write_text(json.dumps({"image": "f.png", "faces": [{"bbox": list(face.bbox),
                                                                 "points": face.points.tolist()}]}))
        faces = load_landmarks(path)
        assert len(faces) == 1
        assert faces[0].image_id == "f.png"

    def test_zero_faces(self):
        assert parse_landmarks('{"image": "x.png", "faces": []}') == []

    def test_wrong_point_count_names_face(self):
        good = synthetic_face((100, 100), 50).points.tolist()
        doc = {"faces": [{"points": good[:67]}]}
        with pytest.raises(ValidationError, match="face 0: expected 68 points"):
            parse_landmarks(json.dumps(doc))
        doc = {"faces": [{"points": good}, {"points": good[:60]}]}
        with pytest.raises(ValidationError, match="face 1: expected 68 points, got 60"):
            parse_landmarks(json.dumps(doc))

    def test_malformed_json_reports_line(self):
        text = '{\n  "faces": [\n    {"points": [1, 2,]}\n  ]\n}'
        with pytest.raises(LandmarkParseError) as err:
            parse_landmarks(text, "bad.json")
        msg = str(err.value)
        assert msg.startswith("bad.json:3:")
        assert '{"points": [1, 2,]}' in msg

    def test_missing_faces_key(self):
        with pytest.raises(LandmarkParseError):
            parse_landmarks('{"image": "x"}')

    @settings(max_examples=50, deadline=None)
    @given(
        n=st.integers(0, 4),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_round_trip_is_identity(self, n, seed):
        rng = np.random.default_rng(seed)
        faces = [
            synthetic_face(rng.uniform(-50, 500, 2), rng.uniform(5, 80), roll_deg=rng.uniform(-50, 50),
                           image_id="img.png", jitter=rng.uniform(0, 2), rng=rng)
            for _ in range(n)
        ]
        back = parse_landmarks(dump_landmarks(faces, "img.png"))
        assert back == faces

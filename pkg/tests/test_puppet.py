import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpstream.keypoints import (
    FACE_POINT_NAMES,
    POSE_KEYPOINT_NAMES,
    Keypoint2D,
    KeypointFrame,
    PoseFrame,
)
from kpstream.puppet import (
    AnimGate,
    PuppetError,
    animate,
    bind,
    bind_frame,
    bone_transform,
    emit_svg,
    load_puppet,
)

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


def minimal_spec(n_bones=2):
    """Two-bone stick: shoulders bar + left arm, with a few vertices."""
    kp = {name: [100.0 + 10.0 * i, 50.0 + 5.0 * i]
          for i, name in enumerate(POSE_KEYPOINT_NAMES)}
    kp["leftShoulder"] = [100.0, 100.0]
    kp["rightShoulder"] = [200.0, 100.0]
    kp["leftElbow"] = [100.0, 200.0]
    bones = [
        {"name": "bar", "from": "leftShoulder", "to": "rightShoulder", "source": "pose"},
        {"name": "arm", "from": "leftShoulder", "to": "leftElbow", "source": "pose"},
    ][:n_bones]
    return {
        "name": "mini",
        "vertices": [[100.0, 100.0], [150.0, 100.0], [200.0, 100.0],
                     [100.0, 150.0], [100.0, 200.0]],
        "paths": [{"points": [0, 1, 2], "closed": False},
                  {"points": [0, 3, 4], "closed": False}],
        "bones": bones,
        "bind_keypoints": {"pose": kp},
    }


def pose_frame_from_artwork(spec, positions):
    """Build a normalized frame whose mapped positions hit `positions`
    (dict name -> artwork xy), defaulting to the bind pose."""
    vp = spec.viewport
    base = {n: tuple(spec.bind_pose[i]) for i, n in enumerate(POSE_KEYPOINT_NAMES)}
    base.update(positions)
    kps = [Keypoint2D(*vp.to_normalized(*base[n]), 1.0) for n in POSE_KEYPOINT_NAMES]
    return KeypointFrame(0, 0, pose=PoseFrame(kps, 1.0))


class TestLoad:
    def test_minimal_two_bone_fixture(self):
        spec = load_puppet(json.dumps(minimal_spec()))
        assert len(spec.bones) == 2
        assert spec.bones[0].name == "bar"

    def test_unknown_keypoint_name(self):
        doc = minimal_spec()
        doc["bones"][0]["to"] = "leftToe"
        with pytest.raises(PuppetError, match="unknown keypoint 'leftToe'"):
            load_puppet(json.dumps(doc))

    def test_zero_length_bind_bone(self):
        doc = minimal_spec()
        doc["bind_keypoints"]["pose"]["rightShoulder"] = \
            doc["bind_keypoints"]["pose"]["leftShoulder"]
        with pytest.raises(PuppetError, match="zero-length bind bone"):
            load_puppet(json.dumps(doc))

    def test_dangling_vertex_index(self):
        doc = minimal_spec()
        doc["paths"][0]["points"] = [0, 1, 99]
        with pytest.raises(PuppetError, match="dangling vertex index 99"):
            load_puppet(json.dumps(doc))

    def test_missing_bind_keypoints(self):
        doc = minimal_spec()
        del doc["bind_keypoints"]["pose"]["nose"]
        with pytest.raises(PuppetError, match="missing"):
            load_puppet(json.dumps(doc))

    def test_not_json(self):
        with pytest.raises(PuppetError, match="JSON"):
            load_puppet(b"\x00\x01")

    def test_shipped_fixtures_load(self):
        stick = load_puppet((FIXTURES / "stick_figure.json").read_text())
        assert stick.bind_pose is not None and stick.bind_face is None
        mask = load_puppet((FIXTURES / "face_mask.json").read_text())
        assert mask.bind_face is not None and mask.bind_pose is None
        assert len(mask.bind_face) == len(FACE_POINT_NAMES)


class TestBind:
    def test_weights_sum_to_one(self):
        puppet = bind(load_puppet(json.dumps(minimal_spec())))
        np.testing.assert_allclose(puppet.weights.sum(axis=1), 1.0, atol=1e-9)
        assert (puppet.weights >= 0).all()

    def test_on_bone_vertex_dominates(self):
        # vertex 1 lies on the bar, far from the arm
        puppet = bind(load_puppet(json.dumps(minimal_spec())))
        j = puppet.bone_idx[1, 0]
        assert j == 0
        assert puppet.weights[1, 0] >= 0.99

    def test_equidistant_vertex_splits_evenly(self):
        # vertex 0 is the shared joint: distance 0 to both bones
        puppet = bind(load_puppet(json.dumps(minimal_spec())))
        w = sorted(puppet.weights[0][:2])
        assert w[0] == pytest.approx(0.5) and w[1] == pytest.approx(0.5)

    def test_inverse_square_formula_oracle(self):
        spec = load_puppet(json.dumps(minimal_spec()))
        puppet = bind(spec)
        eps = 1e-6 * spec.bbox_diag ** 2
        v = spec.vertices[3]  # on the arm, 50 units from the bar
        d2_bar = 50.0 ** 2
        d2_arm = 0.0
        w_bar = 1 / (d2_bar + eps)
        w_arm = 1 / (d2_arm + eps)
        expected_arm = w_arm / (w_arm + w_bar)
        row = {puppet.bone_idx[3, k]: puppet.weights[3, k] for k in range(2)}
        assert row[1] == pytest.approx(expected_arm, rel=1e-12)


class TestBoneTransform:
    def test_identity(self):
        t = bone_transform((0, 0), (1, 0), (0, 0), (1, 0))
        assert t.scale == pytest.approx(1.0)
        assert t.rotation_rad == pytest.approx(0.0)
        assert t.translation == (0.0, 0.0)

    def test_pure_translation(self):
        t = bone_transform((0, 0), (1, 0), (3, 4), (4, 4))
        assert t.scale == pytest.approx(1.0)
        assert t.rotation_rad == pytest.approx(0.0)
        assert t.translation == (3.0, 4.0)
        assert t.apply(0.5, 0.0) == (3.5, 4.0)

    def test_rotate_90_scale_2(self):
        t = bone_transform((0, 0), (1, 0), (0, 0), (0, 2))
        assert t.scale == pytest.approx(2.0)
        assert t.rotation_rad == pytest.approx(math.pi / 2)
        assert t.translation == (0.0, 0.0)

    def test_maps_endpoints_exactly(self):
        t = bone_transform((1, 2), (3, 5), (10, -4), (7, 0))
        assert t.apply(1, 2) == pytest.approx((10, -4), abs=1e-12)
        assert t.apply(3, 5) == pytest.approx((7, 0), abs=1e-12)

    def test_degenerate_current_segment_floored(self):
        t = bone_transform((0, 0), (1, 0), (5, 5), (5, 5))
        assert t.degenerate
        assert t.scale == pytest.approx(1e-6)
        assert t.apply(0, 0) == pytest.approx((5, 5), abs=1e-9)

    def test_zero_bind_segment_rejected(self):
        with pytest.raises(PuppetError):
            bone_transform((1, 1), (1, 1), (0, 0), (1, 0))


class TestAnimate:
    def load_stick(self):
        spec = load_puppet((FIXTURES / "stick_figure.json").read_text())
        return spec, bind(spec)

    def test_bind_pose_identity(self):
        spec, puppet = self.load_stick()
        geometry = animate(puppet, bind_frame(spec), AnimGate())
        disp = np.linalg.norm(geometry.vertices - spec.vertices, axis=1).max()
        assert disp < 1e-6 * spec.bbox_diag

    def test_translation_equivariance(self):
        spec, puppet = self.load_stick()
        base = bind_frame(spec)
        d_norm = 0.05
        shifted = KeypointFrame(0, 0, pose=PoseFrame(
            [Keypoint2D(k.x + d_norm, k.y + d_norm, 1.0)
             for k in base.pose.keypoints], 1.0))
        a = animate(puppet, base, AnimGate())
        b = animate(puppet, shifted, AnimGate())
        d_art = d_norm * spec.viewport.scale
        np.testing.assert_allclose(b.vertices, a.vertices + d_art, atol=1e-9)

    def test_single_bone_rotation_equivariance(self):
        doc = minimal_spec(n_bones=1)
        spec = load_puppet(json.dumps(doc))
        puppet = bind(spec)
        pivot = np.array([100.0, 100.0])
        theta = math.pi / 2
        rot = np.array([[math.cos(theta), -math.sin(theta)],
                        [math.sin(theta), math.cos(theta)]])

        def rotate(p):
            return pivot + rot @ (np.asarray(p) - pivot)

        frame = pose_frame_from_artwork(spec, {
            "leftShoulder": rotate([100.0, 100.0]),
            "rightShoulder": rotate([200.0, 100.0]),
        })
        got = animate(puppet, frame, AnimGate()).vertices
        want = np.array([rotate(v) for v in spec.vertices])
        np.testing.assert_allclose(got, want, atol=1e-9)

    def test_deterministic(self):
        spec, puppet = self.load_stick()
        frame = bind_frame(spec)
        a = animate(puppet, frame, AnimGate()).vertices
        b = animate(puppet, frame, AnimGate()).vertices
        assert (a == b).all()

    def test_low_confidence_keypoint_freezes(self):
        spec, puppet = self.load_stick()
        base = bind_frame(spec)
        gate = AnimGate()
        animate(puppet, base, gate)
        # move the left wrist but mark it unreliable: geometry must not change
        moved = KeypointFrame(1, 0, pose=PoseFrame(
            [Keypoint2D(k.x, k.y, k.confidence) for k in base.pose.keypoints], 1.0))
        i = POSE_KEYPOINT_NAMES.index("leftWrist")
        moved.pose.keypoints[i] = Keypoint2D(0.99, 0.01, 0.1)
        out = animate(puppet, moved, gate)
        ref = animate(puppet, base, AnimGate())
        np.testing.assert_allclose(out.vertices, ref.vertices, atol=1e-9)

    def test_missing_pose_block_keeps_previous_transforms(self):
        spec, puppet = self.load_stick()
        base = bind_frame(spec)
        shifted = KeypointFrame(0, 0, pose=PoseFrame(
            [Keypoint2D(k.x + 0.05, k.y, 1.0) for k in base.pose.keypoints], 1.0))
        gate = AnimGate()
        moved = animate(puppet, shifted, gate)
        from kpstream.keypoints import FaceFrame
        faceless = KeypointFrame(1, 0, face=FaceFrame([(0.5, 0.5)] * 73, 1.0))
        still = animate(puppet, faceless, gate)
        np.testing.assert_allclose(still.vertices, moved.vertices, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))
    def test_translation_equivariance_property(self, dx, dy):
        spec, puppet = self.load_stick()
        base = bind_frame(spec)
        shifted = KeypointFrame(0, 0, pose=PoseFrame(
            [Keypoint2D(k.x + dx, k.y + dy, 1.0) for k in base.pose.keypoints], 1.0))
        a = animate(puppet, base, AnimGate()).vertices
        b = animate(puppet, shifted, AnimGate()).vertices
        shift = np.array([dx, dy]) * spec.viewport.scale
        np.testing.assert_allclose(b, a + shift, atol=1e-9)


class TestSvg:
    def test_empty_paths_valid_document(self):
        from kpstream.puppet import FrameGeometry
        geometry = FrameGeometry(vertices=np.zeros((0, 2)), paths=[],
                                 viewbox=(0, 0, 10, 10), bone_confidence=[])
        svg = emit_svg(geometry)
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")

    def test_same_geometry_identical_bytes(self):
        spec = load_puppet((FIXTURES / "stick_figure.json").read_text())
        puppet = bind(spec)
        g = animate(puppet, bind_frame(spec), AnimGate())
        assert emit_svg(g) == emit_svg(g)

    def test_bind_pose_matches_golden_file(self):
        for name in ("stick_figure", "face_mask"):
            spec = load_puppet((FIXTURES / f"{name}.json").read_text())
            puppet = bind(spec)
            g = animate(puppet, bind_frame(spec), AnimGate())
            golden = (FIXTURES / "svg" / f"{name}_bind.svg").read_text()
            assert emit_svg(g) == golden

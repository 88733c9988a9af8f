import itertools

import numpy as np
import pytest

from covisflow.covis import (
    CovisResult,
    FlowField,
    RigidObjectsInput,
    SceneFlowInput,
    ThresholdParams,
    covis_fov_only,
    covis_rigid,
    covis_sceneflow,
    covis_static,
    supervision_mask,
    threshold_preset,
)
from covisflow.geometry import DepthMap, Intrinsics, Pose, bilinear_sample

from . import oracles
from .synthetic import (
    apply_homography,
    plane_homography,
    plane_scene,
    random_flow_field,
    random_rigid_scene,
    random_sceneflow_scene,
    random_static_scene,
    small_rotation,
)

THR = ThresholdParams(0.1, 0.01)


def assert_matches_reference(result: CovisResult, ref: dict):
    assert np.array_equal(result.flow.du, ref["du"], equal_nan=True)
    assert np.array_equal(result.flow.dv, ref["dv"], equal_nan=True)
    assert np.array_equal(result.flow.validity, ref["flow_valid"])
    assert np.array_equal(result.covis, ref["covis"])
    assert np.array_equal(result.fov, ref["fov"])
    assert np.array_equal(result.supervision, ref["supervision"])
    assert np.array_equal(result.error_defined, ref["error_defined"])
    assert np.array_equal(result.reproj_error, ref["reproj_error"], equal_nan=True)


def assert_mask_chain(result: CovisResult):
    assert not np.any(result.covis & ~result.fov)
    assert not np.any(result.fov & ~result.flow.validity)


class TestCovisStatic:
    def test_self_pair_identity(self):
        h = w = 24
        intr = Intrinsics(64.0, 64.0, 11.5, 11.5, w, h)
        pose = Pose.identity()
        validity = np.ones((h, w), dtype=bool)
        validity[3, 4] = False
        validity[10, 20] = False
        d = DepthMap(np.full((h, w), 2.0), validity, "z")
        res = covis_static(d, d, pose, pose, intr, intr, THR)
        assert np.array_equal(res.covis, validity)
        assert np.all(res.flow.du[validity] == 0.0)
        assert np.all(res.flow.dv[validity] == 0.0)
        assert np.all(res.reproj_error[res.error_defined] == 0.0)

    def test_plane_flow_matches_homography(self):
        rot = small_rotation(np.random.default_rng(5), 0.08)
        d1, d2, t1, t2, intr1, intr2 = plane_scene(rot=rot)
        res = covis_static(d1, d2, t1, t2, intr1, intr2, ThresholdParams(0.05, 0.01))
        hmat = plane_homography(intr1, intr2, t2, plane_z=4.0)
        us, vs = np.meshgrid(
            np.arange(intr1.width, dtype=np.float64), np.arange(intr1.height, dtype=np.float64)
        )
        hu, hv = apply_homography(hmat, us, vs)
        m = res.covis
        assert np.mean(m) > 0.5
        assert np.max(np.abs(res.flow.du[m] - (hu - us)[m])) < 1e-4
        assert np.max(np.abs(res.flow.dv[m] - (hv - vs)[m])) < 1e-4
        # interior of the overlap should be fully covisible
        inb = (hu >= 1) & (hu <= intr2.width - 2) & (hv >= 1) & (hv <= intr2.height - 2)
        assert np.all(m[inb])

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_reference_bitwise(self, seed):
        d1, d2, t1, t2, intr1, intr2 = random_static_scene(seed)
        res = covis_static(d1, d2, t1, t2, intr1, intr2, THR)
        ref = oracles.covis_static_reference(d1, d2, t1, t2, intr1, intr2, THR)
        assert_matches_reference(res, ref)
        assert_mask_chain(res)

    def test_ray_convention_inputs(self):
        d1, d2, t1, t2, intr1, intr2 = random_static_scene(11)
        ray1 = DepthMap(d1.values * 1.1, d1.validity, "ray")
        res = covis_static(ray1, d2, t1, t2, intr1, intr2, THR)
        ref = oracles.covis_static_reference(ray1, d2, t1, t2, intr1, intr2, THR)
        assert_matches_reference(res, ref)

    def test_dimension_mismatch_rejected(self):
        d1, d2, t1, t2, intr1, intr2 = random_static_scene(0)
        bad = Intrinsics(10, 10, 5, 5, 16, 16)
        with pytest.raises(ValueError):
            covis_static(d1, d2, t1, t2, bad, intr2, THR)

    def test_monotone_in_thresholds(self):
        d1, d2, t1, t2, intr1, intr2 = random_static_scene(3)
        small = covis_static(d1, d2, t1, t2, intr1, intr2, ThresholdParams(0.01, 0.001))
        big = covis_static(d1, d2, t1, t2, intr1, intr2, ThresholdParams(0.2, 0.05))
        assert not np.any(small.covis & ~big.covis)

    def test_cycle_consistency_on_plane(self):
        d1, d2, t1, t2, intr1, intr2 = plane_scene()
        thr = ThresholdParams(0.05, 0.01)
        fwd = covis_static(d1, d2, t1, t2, intr1, intr2, thr)
        bwd = covis_static(d2, d1, t2, t1, intr2, intr1, thr)
        h, w = d1.values.shape
        us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        ut = us + fwd.flow.du
        vt = vs + fwd.flow.dv
        both = fwd.covis.copy()
        # sampled return flow at the landing position
        bdu, ok_u = bilinear_sample(np.nan_to_num(bwd.flow.du), bwd.covis, ut, vt)
        bdv, ok_v = bilinear_sample(np.nan_to_num(bwd.flow.dv), bwd.covis, ut, vt)
        both &= ok_u & ok_v
        assert np.mean(both) > 0.3
        residual = np.hypot(fwd.flow.du + bdu, fwd.flow.dv + bdv)[both]
        assert np.max(residual) <= 0.5

    def test_zero_covisible_is_legal(self):
        # two cameras looking in opposite directions share nothing
        h = w = 8
        intr = Intrinsics(8.0, 8.0, 3.5, 3.5, w, h)
        d = DepthMap.full_valid(np.full((h, w), 2.0))
        flipped = Pose(np.diag([1.0, -1.0, -1.0]), np.array([0.0, 0.0, 5.0]))
        res = covis_static(d, d, Pose.identity(), flipped, intr, intr, THR)
        assert not np.any(res.covis)


class TestCovisSceneflow:
    def test_zero_motion_identity(self):
        h = w = 16
        intr = Intrinsics(32.0, 32.0, 7.5, 7.5, w, h)
        pose = Pose.identity()
        validity = np.ones((h, w), dtype=bool)
        validity[2, 2] = False
        d = DepthMap(np.full((h, w), 2.0), validity, "z")
        sf = SceneFlowInput(FlowField.zeros(h, w), np.zeros((h, w)))
        res = covis_sceneflow(d, d, pose, pose, intr, sf, THR)
        assert np.array_equal(res.covis, validity)
        assert np.all(res.reproj_error[res.error_defined] == 0.0)

    def test_single_translated_pixel_covisible(self):
        h = w = 16
        intr = Intrinsics(16.0, 16.0, 7.5, 7.5, w, h)
        pose = Pose.identity()
        d1 = DepthMap.full_valid(np.full((h, w), 2.0))
        du = np.zeros((h, w))
        du[4, 4] = 5.0
        change = np.zeros((h, w))
        change[4, 4] = 0.5
        d2v = np.full((h, w), 2.0)
        d2v[4, 9] = 2.5  # the moved point now sits here, nearer content gone
        d2 = DepthMap.full_valid(d2v)
        sf = SceneFlowInput(FlowField(du, np.zeros((h, w)), np.ones((h, w), dtype=bool)), change)
        res = covis_sceneflow(d1, d2, pose, pose, intr, sf, ThresholdParams(0.01, 0.001))
        assert res.covis[4, 4]
        # the pixel it displaced no longer matches its old depth
        assert not res.covis[4, 9]

    def test_occluder_hides_background(self):
        h = w = 8
        intr = Intrinsics(8.0, 8.0, 3.5, 3.5, w, h)
        pose = Pose.identity()
        d1 = DepthMap.full_valid(np.full((h, w), 5.0))
        d2v = np.full((h, w), 5.0)
        d2v[3, 3] = 2.0  # an occluder moved in front of this pixel
        d2 = DepthMap.full_valid(d2v)
        sf = SceneFlowInput(FlowField.zeros(h, w), np.zeros((h, w)))
        res = covis_sceneflow(d1, d2, pose, pose, intr, sf, ThresholdParams(0.1, 0.01))
        assert not res.covis[3, 3]
        assert res.covis[0, 0]

    def test_missing_depth_change_rejected(self):
        with pytest.raises(ValueError):
            SceneFlowInput(FlowField.zeros(4, 4), None)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_reference_bitwise(self, seed):
        d1, d2, t1, t2, intr, sf = random_sceneflow_scene(seed)
        res = covis_sceneflow(d1, d2, t1, t2, intr, sf, THR)
        ref = oracles.covis_sceneflow_reference(d1, d2, t1, t2, intr, sf, THR)
        assert_matches_reference(res, ref)
        assert_mask_chain(res)
        assert np.mean(res.covis) > 0.3  # consistent scene: mostly covisible


class TestCovisRigid:
    def test_static_objects_reduce_to_static(self):
        d1, d2, t1, t2, intr1, intr2 = random_static_scene(21, h=16, w=16)
        seg = np.ones((16, 16), dtype=np.int32)
        seg[:, 8:] = 2
        ident = {1: Pose.identity(), 2: Pose.identity()}
        ro = RigidObjectsInput(seg, ident, ident)
        rigid = covis_rigid(d1, d2, t1, t2, intr1, intr2, ro, THR)
        static = covis_static(d1, d2, t1, t2, intr1, intr2, THR)
        assert np.array_equal(rigid.covis, static.covis)
        assert np.array_equal(rigid.flow.du, static.flow.du, equal_nan=True)
        assert np.array_equal(rigid.flow.dv, static.flow.dv, equal_nan=True)
        assert np.array_equal(rigid.supervision, static.supervision)
        assert np.array_equal(rigid.reproj_error, static.reproj_error, equal_nan=True)

    def test_translated_object_flow(self):
        h = w = 16
        intr = Intrinsics(16.0, 16.0, 7.5, 7.5, w, h)
        pose = Pose.identity()
        d1 = DepthMap.full_valid(np.full((h, w), 2.0))
        seg = np.ones((h, w), dtype=np.int32)
        seg[4:8, 4:8] = 2
        shift = np.array([0.25, 0.0, 0.0])
        ro = RigidObjectsInput(
            seg,
            {1: Pose.identity(), 2: Pose.identity()},
            {1: Pose.identity(), 2: Pose(np.eye(3), shift)},
        )
        d2v = np.full((h, w), 2.0)
        d2 = DepthMap.full_valid(d2v)
        res = covis_rigid(d1, d2, pose, pose, intr, intr, ro, ThresholdParams(0.01, 0.001))
        # projected translation: du = fx * dx / z = 16 * 0.25 / 2 = 2 px
        assert np.allclose(res.flow.du[seg == 2], 2.0)
        assert np.allclose(res.flow.dv[seg == 2], 0.0)
        assert np.allclose(res.flow.du[seg == 1], 0.0)
        # background keeps matching its depth; moved object does not (depth map is static)
        assert res.covis[0, 0]

    def test_unknown_object_ids_counted(self):
        d1, d2, t1, t2, intr1, intr2, ro = random_rigid_scene(2)
        seg = ro.segmentation.copy()
        seg[0, :4] = 99  # no pose for this id
        ro2 = RigidObjectsInput(seg, ro.poses_t1, ro.poses_t2)
        res = covis_rigid(d1, d2, t1, t2, intr1, intr2, ro2, THR)
        expected_unknown = int(np.count_nonzero((seg == 99) & d1.validity & (d1.values > 0)))
        assert res.diagnostics["unknown_object_pixels"] == expected_unknown
        assert not np.any(res.flow.validity[(seg == 99)])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_reference_bitwise(self, seed):
        d1, d2, t1, t2, intr1, intr2, ro = random_rigid_scene(seed)
        res = covis_rigid(d1, d2, t1, t2, intr1, intr2, ro, THR)
        ref = oracles.covis_rigid_reference(d1, d2, t1, t2, intr1, intr2, ro, THR)
        assert res.diagnostics["unknown_object_pixels"] == ref["unknown_object_pixels"]
        assert_matches_reference(res, ref)
        assert_mask_chain(res)


class TestCovisFovOnly:
    def test_zero_flow(self):
        res = covis_fov_only(FlowField.zeros(6, 9), 9, 6)
        assert np.all(res.covis)
        assert not np.any(res.supervision)

    def test_border_pushed_out(self):
        h = w = 8
        du = np.zeros((h, w))
        du[:, -1] = 0.5  # push last column past the sampleable edge
        res = covis_fov_only(FlowField(du, np.zeros((h, w)), np.ones((h, w), dtype=bool)), w, h)
        assert not np.any(res.covis[:, -1])
        assert np.all(res.covis[:, :-1])

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_reference(self, seed):
        rng = np.random.default_rng(seed)
        flow = random_flow_field(rng, 8, 8, magnitude=5.0, invalid_frac=0.1)
        res = covis_fov_only(flow, 8, 8)
        ref = oracles.covis_fov_only_reference(flow, 8, 8)
        assert_matches_reference(res, ref)
        assert not np.any(res.supervision)


class TestSupervisionMask:
    def test_truth_table(self):
        expected = {
            # (v1, f1, v_other) -> supervised
            (False, False, False): False,
            (False, False, True): False,
            (False, True, False): False,
            (False, True, True): True,
            (True, False, False): True,
            (True, False, True): True,
            (True, True, False): False,
            (True, True, True): True,
        }
        for (v1, f1, vo), want in expected.items():
            got = supervision_mask(
                np.array([[v1]]), np.array([[f1]]), np.array([[vo]])
            )
            assert bool(got[0, 0]) == want, (v1, f1, vo)

    def test_all_rows_vectorized(self):
        rows = np.array(list(itertools.product([False, True], repeat=3)))
        got = supervision_mask(rows[:, 0:1], rows[:, 1:2], rows[:, 2:3])
        want = (rows[:, 0:1] & ~rows[:, 1:2]) | (rows[:, 1:2] & rows[:, 2:3])
        assert np.array_equal(got, want)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            supervision_mask(np.ones((2, 2), bool), np.ones((2, 3), bool), np.ones((2, 2), bool))


class TestThresholdPresets:
    @pytest.mark.parametrize(
        "name,tau_d,tau_r",
        [
            ("BlendedMVS", 0.1, 0.005),
            ("MegaDepth", 0.1, 0.005),
            ("TartanAirV2", 0.1, 0.01),
            ("ScanNetppV2", 0.1, 0.005),
            ("HabitatCAD", 0.1, 0.005),
            ("FlyingThings", 0.01, 0.001),
            ("Monkaa", 0.01, 0.001),
            ("Kubric4D", 0.1, 0.005),
        ],
    )
    def test_published_values(self, name, tau_d, tau_r):
        thr = threshold_preset(name)
        assert thr.tau_d == tau_d and thr.tau_r == tau_r

    def test_loose_spellings(self):
        assert threshold_preset("ScanNet++ V2") == threshold_preset("scannetppv2")
        assert threshold_preset("TartanAir V2") == threshold_preset("TartanAirV2")

    def test_unknown_name_lists_known(self):
        with pytest.raises(KeyError, match="BlendedMVS"):
            threshold_preset("NotADataset")

    def test_relative_term_scales_linearly(self):
        thr = ThresholdParams(0.0, 0.01)
        r = 7.3
        assert thr.bound(2 * r) == 2 * thr.bound(r)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            ThresholdParams(-0.1, 0.0)

import numpy as np
import pytest

from pmsfm.errors import ValidationError
from pmsfm.geometry import change_frame, compose, geodesic_deg, inverse
from pmsfm.relative_pose import estimate_focal, make_intrinsics, pnp_ransac
from pmsfm.synth import SceneSpec, generate, make_pair_pointmaps


def bundle_bytes(bundle):
    chunks = []
    for v in bundle.views:
        chunks += [v.depth.depth.tobytes(), v.depth.mask.tobytes(),
                   v.point_ids.tobytes(), v.pose.rotation.tobytes(),
                   v.pose.translation.tobytes()]
    chunks.append(bundle.points.tobytes())
    return b"".join(chunks)


class TestGenerate:
    def test_two_view_orbit_consistency(self):
        # 2 views, orbit 180 degrees apart: pixels showing the same scene
        # point agree exactly after a frame change
        spec = SceneSpec(n_views=2, rng_seed=7)
        b = generate(spec)
        pm1, pm2 = b.exact_pointmap(0), b.exact_pointmap(1)
        pm1_in_2 = change_frame(pm1, b.views[0].pose, b.views[1].pose)
        ids1, ids2 = b.views[0].point_ids, b.views[1].point_ids
        where2 = {}
        for j, i in zip(*np.nonzero(pm2.mask)):
            where2[int(ids2[j, i])] = (j, i)
        matched = 0
        for j, i in zip(*np.nonzero(pm1.mask)):
            pid = int(ids1[j, i])
            if pid in where2:
                matched += 1
                q = where2[pid]
                assert np.linalg.norm(pm1_in_2.points[j, i] - pm2.points[q]) <= 1e-9
        assert matched > 50  # covisibility is substantial by construction

    def test_seed_determinism(self):
        spec = SceneSpec(n_views=4, rng_seed=11, depth_noise_sigma=0.005,
                         occlusion_fraction=0.05)
        assert bundle_bytes(generate(spec)) == bundle_bytes(generate(spec))

    def test_depth_noise_std(self):
        # empirical noise std within 10% of sigma * scale over >= 1e4 px
        spec_clean = SceneSpec(n_views=20, rng_seed=3)
        spec_noisy = SceneSpec(n_views=20, rng_seed=3, depth_noise_sigma=0.01)
        clean = generate(spec_clean)
        noisy = generate(spec_noisy)
        devs = []
        for vc, vn in zip(clean.views, noisy.views):
            assert np.array_equal(vc.depth.mask, vn.depth.mask)
            devs.append(vn.depth.depth[vn.depth.mask] - vc.depth.depth[vc.depth.mask])
        devs = np.concatenate(devs)
        assert len(devs) >= 10_000
        assert abs(float(devs.std()) - 0.01) <= 0.001

    def test_coverage_default_spec(self):
        b = generate(SceneSpec())
        vis = b.point_visibility()
        assert float(np.mean(vis >= 2)) == 1.0

    def test_cameras_face_centroid(self):
        b = generate(SceneSpec(n_views=5, rng_seed=2))
        for v in b.views:
            # the scene centroid (origin) projects near the image center
            z = v.pose.apply(np.zeros(3))[2]
            assert z > 0

    def test_every_shape_and_trajectory(self):
        for shape in ("sphere-cluster", "box-cluster", "blob"):
            for traj in ("orbit", "random-hemisphere"):
                b = generate(SceneSpec(n_views=3, object_shape=shape,
                                       trajectory=traj, rng_seed=1))
                assert all(v.depth.mask.sum() > 50 for v in b.views)

    def test_occlusion_reduces_mask(self):
        base = generate(SceneSpec(n_views=2, rng_seed=5))
        occluded = generate(SceneSpec(n_views=2, rng_seed=5, occlusion_fraction=0.3))
        assert occluded.views[0].depth.mask.sum() <= base.views[0].depth.mask.sum()

    def test_infeasible_specs_rejected(self):
        with pytest.raises(ValidationError):
            SceneSpec(occlusion_fraction=1.0)
        with pytest.raises(ValidationError):
            SceneSpec(n_views=1)
        with pytest.raises(ValidationError):
            SceneSpec(object_shape="torus")
        with pytest.raises(ValidationError):
            SceneSpec(outlier_fraction=1.5)


class TestMakePairPointmaps:
    def test_noiseless_closes_pnp_loop(self):
        spec = SceneSpec(n_views=4, rng_seed=9)
        b = generate(spec)
        pair = make_pair_pointmaps(b, 0, 2)
        k = make_intrinsics(pair.view2.width, pair.view2.height,
                            estimate_focal(pair.view1))
        res = pnp_ransac(pair.view2, k)
        gt = compose(b.views[2].pose, inverse(b.views[0].pose))
        assert geodesic_deg(res.transform.rotation, gt.rotation) <= 1e-4
        t_err = np.linalg.norm(res.transform.translation - gt.translation)
        assert t_err <= 1e-6 * max(np.linalg.norm(gt.translation), 1.0)

    def test_same_view_pair_identical(self):
        b = generate(SceneSpec(n_views=3, rng_seed=4, outlier_fraction=0.2,
                               point_noise_sigma=0.01))
        pair = make_pair_pointmaps(b, 1, 1)
        assert np.array_equal(pair.view1.points, pair.view2.points)
        assert np.array_equal(pair.view1.confidence, pair.view2.confidence)
        assert np.array_equal(pair.view1.mask, pair.view2.mask)

    def test_corrupted_pixels_lowest_confidence(self):
        b = generate(SceneSpec(n_views=3, rng_seed=8, outlier_fraction=0.1))
        pair = make_pair_pointmaps(b, 0, 1)
        for pm, out in ((pair.view1, pair.outlier_mask1),
                        (pair.view2, pair.outlier_mask2)):
            assert out.sum() > 0
            clean = pm.mask & ~out
            assert pm.confidence[out].max() < pm.confidence[clean].min()
            # corrupted pixels occupy the lowest confidence decile
            frac = out.sum() / pm.mask.sum()
            decile = np.quantile(pm.confidence[pm.mask], frac)
            assert np.all(pm.confidence[out] <= decile)

    def test_outliers_reproject_far(self):
        b = generate(SceneSpec(n_views=3, rng_seed=8, outlier_fraction=0.15))
        pair = make_pair_pointmaps(b, 0, 1)
        rel = compose(b.views[1].pose, inverse(b.views[0].pose))
        k = b.views[1].intrinsics
        pts = pair.view2.points[pair.outlier_mask2]
        jj, ii = np.nonzero(pair.outlier_mask2)
        cam = rel.apply(pts)
        z = cam[:, 2]
        front = z > 0
        u = k.f * cam[front, 0] / z[front] + k.c_x
        v = k.f * cam[front, 1] / z[front] + k.c_y
        err = np.hypot(u - ii[front], v - jj[front])
        assert np.all(err > 15.0)

    def test_pair_determinism(self):
        b = generate(SceneSpec(n_views=3, rng_seed=6, outlier_fraction=0.2))
        p1 = make_pair_pointmaps(b, 0, 2)
        p2 = make_pair_pointmaps(b, 0, 2)
        assert np.array_equal(p1.view2.points, p2.view2.points)
        assert np.array_equal(p1.view2.confidence, p2.view2.confidence)

    def test_point_noise_applied(self):
        clean = make_pair_pointmaps(generate(SceneSpec(n_views=2, rng_seed=3)), 0, 1)
        noisy = make_pair_pointmaps(
            generate(SceneSpec(n_views=2, rng_seed=3, point_noise_sigma=0.01)), 0, 1)
        dev = np.linalg.norm(
            noisy.view1.points[noisy.view1.mask] - clean.view1.points[clean.view1.mask],
            axis=1)
        # isotropic 3-sigma: mean |dev| ~ sigma * sqrt(8/pi)
        assert 0.005 <= float(dev.mean()) <= 0.05

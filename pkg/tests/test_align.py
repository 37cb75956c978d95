import cv2
import numpy as np
import pytest

from layoutkit import align, geom, synth
from layoutkit.align import LineSegment, VanishingBasis, detect_segments, estimate_vanishing_basis
from layoutkit.errors import NoConsensus


def psnr(a, b, peak=1.0):
    mse = np.mean((np.asarray(a) - np.asarray(b)) ** 2)
    return float("inf") if mse == 0 else 10.0 * np.log10(peak**2 / mse)


def make_view(image):
    return geom.PerspectiveView(image=image, basis=np.eye(3), fov=np.pi / 2)


def sphere_segment(direction, rng, length=0.4, strength=10.0, avoid=()):
    """Random great-circle segment running along ``direction``.

    ``avoid`` lists other axes the segment's circle must stay clearly off,
    so synthetic families never alias each other.
    """
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    while True:
        helper = rng.standard_normal(3)
        n = np.cross(d, helper)
        norm = np.linalg.norm(n)
        if norm < 1e-6:
            continue
        n /= norm
        if all(abs(float(n @ a)) > np.sin(np.deg2rad(6.0)) for a in avoid):
            break
    p = np.cross(n, d)  # point on the circle, perpendicular to n
    t0 = rng.uniform(-0.5, 0.5)
    p0 = np.cos(t0) * p + np.sin(t0) * d
    p1 = np.cos(t0 + length) * p + np.sin(t0 + length) * d
    return LineSegment(p0=p0, p1=p1, normal=n, length=length, strength=strength)


class TestDetectSegments:
    def test_single_line(self):
        img = np.ones((256, 256))
        cv2.line(img, (40, 60), (84, 90), 0.0, 2)
        segs = detect_segments(make_view(img), min_length=16)
        assert len(segs) == 1
        # endpoints within 2 px of truth, compared in view pixel space
        view = make_view(img)
        truth = [view.pix_to_ray(40, 60), view.pix_to_ray(84, 90)]
        ends = [segs[0].p0, segs[0].p1]
        best = min(
            max(np.arccos(np.clip(t @ e, -1, 1)) for t, e in zip(truth, order))
            for order in (ends, ends[::-1])
        )
        # 2 px at focal 128 is about 0.9 degrees of arc
        assert np.rad2deg(best) < 0.9

    def test_constant_image_gives_nothing(self):
        segs = detect_segments(make_view(np.full((128, 128), 0.5)), min_length=16)
        assert segs == []

    def test_min_length_validated(self):
        with pytest.raises(ValueError):
            detect_segments(make_view(np.ones((64, 64))), min_length=4)

    def test_wireframe_room_segments_match_axes(self):
        spec, layout = synth.gen_room(11, 4)
        pano = synth.render_wireframe_pano(layout, 512)
        gray = geom.EquirectImage(pano.data.mean(axis=2)) if pano.channels > 1 else pano
        mismatches = 0
        total = 0
        for k in range(6):
            yaw = 2 * np.pi * k / 6
            center = np.array([np.sin(yaw), 0.0, np.cos(yaw)])
            view = geom.extract_perspective_view(gray, center, np.pi / 2, 256)
            for seg in detect_segments(view, min_length=32):
                total += 1
                # the great-circle normal must be orthogonal (within 2 deg)
                # to one of the three Manhattan axes
                res = np.min(np.abs(seg.normal @ np.eye(3)))
                if np.rad2deg(np.arcsin(res)) > 2.0:
                    mismatches += 1
        assert total > 20
        assert mismatches <= 0.05 * total


class TestEstimateBasis:
    def test_known_rotation_recovered(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            r = geom.rot_x(rng.uniform(-0.3, 0.3)) @ geom.rot_z(rng.uniform(-0.3, 0.3))
            axes = [r @ a for a in np.eye(3)]
            segments = []
            for i, axis in enumerate(axes):
                others = [axes[j] for j in range(3) if j != i]
                for _ in range(12):
                    segments.append(sphere_segment(axis, rng, avoid=others))
            basis = estimate_vanishing_basis(segments)
            err = geom.rotation_angle(basis.rotation @ r)
            assert np.rad2deg(err) < 1.0

    def test_axis_aligned_gives_identity(self):
        rng = np.random.default_rng(4)
        axes = list(np.eye(3))
        segments = []
        for i, axis in enumerate(axes):
            others = [axes[j] for j in range(3) if j != i]
            for _ in range(10):
                segments.append(sphere_segment(axis, rng, avoid=others))
        basis = estimate_vanishing_basis(segments)
        assert geom.rotation_angle(basis.rotation) < 1e-3

    def test_parallel_segments_no_consensus(self):
        rng = np.random.default_rng(5)
        # six segments all running along the same direction: their circles
        # share that direction but nothing supports a third axis
        d = np.array([0.3, 0.9, 0.1])
        d /= np.linalg.norm(d)
        n = np.cross(d, [0.0, 0.0, 1.0])
        n /= np.linalg.norm(n)
        p = np.cross(n, d)
        segments = []
        for i in range(6):
            t0 = -0.4 + 0.13 * i
            p0 = np.cos(t0) * p + np.sin(t0) * d
            p1 = np.cos(t0 + 0.1) * p + np.sin(t0 + 0.1) * d
            segments.append(LineSegment(p0=p0, p1=p1, normal=n, length=0.1, strength=5.0))
        with pytest.raises(NoConsensus) as exc:
            estimate_vanishing_basis(segments)
        assert isinstance(exc.value.partial_axes, list)

    def test_too_few_segments_rejected(self):
        rng = np.random.default_rng(6)
        segments = [sphere_segment([1, 0, 0], rng) for _ in range(5)]
        with pytest.raises(ValueError):
            estimate_vanishing_basis(segments)

    def test_order_invariance(self):
        rng = np.random.default_rng(7)
        axes = list(np.eye(3))
        segments = []
        for i, axis in enumerate(axes):
            others = [axes[j] for j in range(3) if j != i]
            for _ in range(8):
                segments.append(sphere_segment(axis, rng, avoid=others))
        b1 = estimate_vanishing_basis(segments)
        b2 = estimate_vanishing_basis(segments[::-1])
        np.testing.assert_allclose(b1.axes, b2.axes, atol=1e-6)

    def test_basis_invariants(self):
        rng = np.random.default_rng(8)
        axes = list(np.eye(3))
        segments = []
        for i, axis in enumerate(axes):
            others = [axes[j] for j in range(3) if j != i]
            for _ in range(8):
                segments.append(sphere_segment(axis, rng, avoid=others))
        basis = estimate_vanishing_basis(segments)
        # columns orthonormal, vertical points up
        np.testing.assert_allclose(basis.axes.T @ basis.axes, np.eye(3), atol=1e-9)
        assert basis.vertical[1] > 0
        assert basis.vote_scores.shape == (3,)

    def test_vote_scores_stable_under_permutation(self):
        # the winning triplet's total cannot be beaten by relabeling axes
        rng = np.random.default_rng(9)
        axes = list(np.eye(3))
        segments = []
        for i, axis in enumerate(axes):
            others = [axes[j] for j in range(3) if j != i]
            for _ in range(8):
                segments.append(sphere_segment(axis, rng, avoid=others))
        basis = estimate_vanishing_basis(segments)
        assert basis.vote_scores.sum() >= max(basis.vote_scores)


class TestAlignPanorama:
    def test_already_aligned_is_fixed_point(self):
        spec, layout = synth.gen_room(2, 4)
        pano = synth.render_wireframe_pano(layout, 512)
        aligned, basis, line_map = align.align_panorama(pano)
        assert np.rad2deg(geom.rotation_angle(basis.rotation)) < 0.5

    def test_known_pitch_recovered_and_round_trips(self):
        spec, layout = synth.gen_room(4, 4)
        base = synth.render_wireframe_pano(layout, 1024, blur_sigma=4.0)
        r = geom.rot_x(np.deg2rad(10.0))
        pre_rotated = geom.rotate_equirect(base, r)
        aligned, basis, _ = align.align_panorama(pre_rotated)
        assert np.rad2deg(geom.rotation_angle(basis.rotation @ r)) < 0.5
        assert psnr(aligned.data, base.data) > 35.0

    def test_line_map_is_binary_three_channel(self):
        spec, layout = synth.gen_room(3, 4)
        pano = synth.render_wireframe_pano(layout, 512)
        _, _, line_map = align.align_panorama(pano)
        assert line_map.channels == 3
        values = np.unique(line_map.data)
        assert set(values.tolist()) <= {0.0, 1.0}
        assert line_map.data.sum() > 0

    def test_second_alignment_smaller_than_first(self):
        spec, layout = synth.gen_room(9, 4)
        pano = synth.render_wireframe_pano(layout, 512, rotation=geom.rot_x(0.15))
        once, b1, _ = align.align_panorama(pano)
        _, b2, _ = align.align_panorama(once)
        assert geom.rotation_angle(b2.rotation) < geom.rotation_angle(b1.rotation)

    def test_rotated_room_recovered(self):
        rng = np.random.default_rng(10)
        spec, layout = synth.gen_room(12, 4)
        r_true = geom.rot_x(np.deg2rad(8.0)) @ geom.rot_z(np.deg2rad(-6.0))
        pano = synth.render_wireframe_pano(layout, 512, rotation=r_true)
        aligned, basis, _ = align.align_panorama(pano)
        assert np.rad2deg(geom.rotation_angle(basis.rotation @ r_true)) < 1.0

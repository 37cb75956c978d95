import numpy as np
import pytest
from scipy.ndimage import maximum_filter

from layoutkit import maps, project, synth
from layoutkit.errors import InsufficientCorners
from layoutkit.geom import EquirectImage
from layoutkit.maps import CornerSet, LossWeights, ProbMaps
from layoutkit.solver import ManhattanLayout

WIDTH = 1024
HEIGHT = 512


def square_room(ceiling=2.5, camera_height=1.0):
    return ManhattanLayout(
        vertices=np.array([[-1, -1], [-1, 1], [1, 1], [1, -1]], dtype=float),
        camera_xz=np.zeros(2),
        camera_height=camera_height,
        floor_y=0.0,
        ceiling_y=ceiling,
    )


def gaussian_blob_map(centers, sigma=4.0, width=WIDTH, height=HEIGHT, amplitudes=None):
    """Corner map with unit-height Gaussian bumps at (col, row) centers."""
    data = np.zeros((height, width))
    vv, uu = np.mgrid[0:height, 0:width]
    if amplitudes is None:
        amplitudes = [1.0] * len(centers)
    for (cu, cv), amp in zip(centers, amplitudes):
        du = np.minimum(np.abs(uu - cu), width - np.abs(uu - cu))
        data += amp * np.exp(-(du**2 + (vv - cv) ** 2) / (2 * sigma**2))
    return np.clip(data, 0.0, 1.0)


class TestRenderGroundTruth:
    def test_square_room_corner_peaks(self):
        pm = maps.render_ground_truth(square_room(), WIDTH)
        corner = pm.corner_2d()
        peaks = (corner == maximum_filter(corner, size=9)) & (corner > 0.5)
        rows, cols = np.where(peaks)
        # 8 maxima: a top and bottom corner at each of the 4 columns
        assert len(cols) == 8
        expected = {WIDTH // 8, 3 * WIDTH // 8, 5 * WIDTH // 8, 7 * WIDTH // 8}
        assert {int(c) for c in cols} == expected

    def test_values_in_unit_interval(self):
        pm = maps.render_ground_truth(square_room(), WIDTH)
        for img in (pm.boundary.data, pm.corner.data):
            assert img.min() >= 0.0 and img.max() <= 1.0
        assert pm.corner.data.max() == 1.0

    def test_wall_wall_channel_has_four_bands(self):
        pm = maps.render_ground_truth(square_room(), WIDTH)
        ww = pm.boundary.data[:, :, 0]
        nonzero = np.where(ww.sum(axis=0) > 0)[0]
        runs = np.split(nonzero, np.where(np.diff(nonzero) > 1)[0] + 1)
        assert len(runs) == 4

    def test_camera_outside_rejected(self):
        bad = ManhattanLayout(
            vertices=square_room().vertices,
            camera_xz=np.array([5.0, 5.0]),
            camera_height=1.0,
            floor_y=0.0,
            ceiling_y=2.5,
        )
        with pytest.raises(ValueError):
            maps.render_ground_truth(bad, WIDTH)

    def test_extract_recovers_rendered_corners(self):
        worst = 0.0
        for seed in range(20):
            wall_count = 4 if seed % 2 == 0 else 6
            _, layout = synth.gen_room(seed, wall_count)
            pm = maps.render_ground_truth(layout, WIDTH)
            corners = maps.extract_corners(pm)
            assert len(corners) == wall_count
            u, v_top, v_bot = project.corner_pixels(layout, WIDTH)
            order = np.argsort(np.mod(u, WIDTH), kind="stable")
            worst = max(
                worst,
                float(np.abs(np.sort(np.mod(u, WIDTH)) - corners.columns).max()),
                float(np.abs(v_top[order] - corners.v_top).max()),
                float(np.abs(v_bot[order] - corners.v_bot).max()),
            )
        assert worst <= 1.0


class TestAugment:
    def test_roll_full_width_is_identity(self):
        pm = maps.render_ground_truth(square_room(), 256)
        rolled = maps.augment(pm, "roll", 256)
        np.testing.assert_array_equal(rolled.corner.data, pm.corner.data)

    def test_double_flip_is_identity(self):
        pm = maps.render_ground_truth(square_room(), 256)
        back = maps.augment(maps.augment(pm, "flip"), "flip")
        np.testing.assert_array_equal(back.boundary.data, pm.boundary.data)

    def test_gamma_one_is_identity(self):
        img = EquirectImage(np.random.default_rng(0).uniform(0, 1, (64, 128)))
        out = maps.augment(img, "gamma", 1.0)
        np.testing.assert_allclose(out.data, img.data, atol=1e-15)

    def test_gamma_on_probability_maps_rejected(self):
        pm = maps.render_ground_truth(square_room(), 256)
        with pytest.raises(ValueError):
            maps.augment(pm, "gamma", 1.5)

    def test_gamma_range_enforced(self):
        img = EquirectImage(np.full((64, 128), 0.5))
        with pytest.raises(ValueError):
            maps.augment(img, "gamma", 3.0)

    def test_extraction_commutes_with_roll(self):
        _, layout = synth.gen_room(5, 4)
        pm = maps.render_ground_truth(layout, WIDTH)
        k = 217
        rolled = maps.augment(pm, "roll", k)
        direct = maps.extract_corners(rolled)
        shifted = maps.extract_corners(pm).roll(k)
        np.testing.assert_allclose(direct.columns, shifted.columns, atol=1e-9)
        np.testing.assert_allclose(direct.v_top, shifted.v_top, atol=1e-9)


class TestEvalLoss:
    def binary_maps(self):
        _, layout = synth.gen_room(1, 4)
        pm = maps.render_ground_truth(layout, 256)
        boundary = (pm.boundary.data > 0.5).astype(float)
        corner = (pm.corner.data > 0.5).astype(float)
        return ProbMaps.from_arrays(boundary, corner)

    def test_identical_binary_maps_near_zero(self):
        gt = self.binary_maps()
        loss = maps.eval_loss(gt, gt, np.zeros(6), np.zeros(6))
        assert 0.0 <= loss < 1e-5

    def test_uniform_half_closed_form(self):
        gt = self.binary_maps()
        h, w = gt.height, gt.width
        pred = ProbMaps.from_arrays(np.full((h, w, 3), 0.5), np.full((h, w, 1), 0.5))
        lw = LossWeights()
        n = h * w
        exp_e = np.log(2) * np.where(gt.boundary.data < 0.01, lw.background_reweight, 1.0).sum() / n
        exp_c = np.log(2) * np.where(gt.corner.data < 0.01, lw.background_reweight, 1.0).sum() / n
        loss = maps.eval_loss(pred, gt, weights=lw)
        np.testing.assert_allclose(loss, exp_e + exp_c, rtol=1e-12)

    def test_parameter_term_contributes_tau(self):
        gt = self.binary_maps()
        base = maps.eval_loss(gt, gt)
        d_gt = np.array([2.0, 3.0, 1.5, 0.2, -0.1, 0.1])
        d_pred = d_gt + np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])  # s_h + 1
        with_d = maps.eval_loss(gt, gt, d_pred, d_gt)
        np.testing.assert_allclose(with_d - base, 0.01, atol=1e-15)

    def test_dimension_mismatch_rejected(self):
        gt = self.binary_maps()
        other = maps.render_ground_truth(square_room(), 512)
        with pytest.raises(ValueError):
            maps.eval_loss(other, gt)

    def test_loss_nonnegative_and_argument_order_matters(self):
        gt = self.binary_maps()
        h, w = gt.height, gt.width
        rng = np.random.default_rng(2)
        pred = ProbMaps.from_arrays(
            rng.uniform(0.1, 0.9, (h, w, 3)), rng.uniform(0.1, 0.9, (h, w, 1))
        )
        forward = maps.eval_loss(pred, gt)
        backward = maps.eval_loss(gt, pred)
        assert forward >= 0 and backward >= 0
        assert forward != backward


class TestExtractCorners:
    def test_synthetic_gaussians_recovered(self):
        centers = [(100, 80), (100, 176), (300, 80), (300, 176), (600, 80), (600, 176), (900, 80), (900, 176)]
        m = gaussian_blob_map(centers)
        corners = maps.extract_corners(m)
        np.testing.assert_allclose(np.sort(corners.columns), [100, 300, 600, 900], atol=1.0)
        np.testing.assert_allclose(corners.v_top, 80, atol=1.0)
        np.testing.assert_allclose(corners.v_bot, 176, atol=1.0)

    def test_close_columns_merge(self):
        # columns 100 and 112 are closer than the 20 px separation: one peak
        centers = []
        for u in (100, 112, 300, 600, 900):
            centers.extend([(u, 80), (u, 176)])
        amps = [1.0, 1.0, 0.8, 0.8] + [1.0] * 6
        m = gaussian_blob_map(centers, amplitudes=amps)
        corners = maps.extract_corners(m)
        assert len(corners) == 4
        near = corners.columns[(corners.columns > 80) & (corners.columns < 130)]
        assert len(near) == 1

    def test_all_zero_map_raises(self):
        with pytest.raises(InsufficientCorners):
            maps.extract_corners(np.zeros((HEIGHT, WIDTH)))

    def test_insufficient_columns_carries_found(self):
        centers = [(100, 80), (100, 176), (300, 80), (300, 176)]
        m = gaussian_blob_map(centers)
        with pytest.raises(InsufficientCorners) as exc:
            maps.extract_corners(m)
        assert len(exc.value.found_columns) == 2

    def test_corner_set_validation(self):
        with pytest.raises(ValueError):
            CornerSet(
                columns=np.array([100.0, 110.0, 300.0, 600.0]),  # gap 10 < 20
                v_top=np.full(4, 80.0),
                v_bot=np.full(4, 176.0),
                conf=np.ones(4),
                width=WIDTH,
            )
        with pytest.raises(ValueError):
            CornerSet(
                columns=np.array([100.0, 300.0]),
                v_top=np.array([200.0, 80.0]),
                v_bot=np.array([100.0, 176.0]),  # top below bottom
                conf=np.ones(2),
                width=WIDTH,
            )

    def test_json_round_trip(self, tmp_path):
        _, layout = synth.gen_room(3, 4)
        pm = maps.render_ground_truth(layout, WIDTH)
        corners = maps.extract_corners(pm)
        d = corners.to_json_dict()
        back = CornerSet.from_json_dict(d, WIDTH)
        np.testing.assert_array_equal(back.columns, corners.columns)
        np.testing.assert_array_equal(back.conf, corners.conf)


class TestDecideWallCount:
    def six_column_map(self, sixth_scale):
        centers, amps = [], []
        cols = [80, 260, 440, 620, 800, 980]
        for i, u in enumerate(cols):
            amp = sixth_scale if i == 5 else 1.0
            centers.extend([(u, 100), (u, 200)])
            amps.extend([amp, amp])
        return gaussian_blob_map(centers, amplitudes=amps)

    def test_six_strong_columns(self):
        assert maps.decide_wall_count(self.six_column_map(0.30)) == 6

    def test_negligible_sixth_column(self):
        assert maps.decide_wall_count(self.six_column_map(0.01)) == 4

    def test_threshold_boundary_inclusive(self):
        # quarter-strength sixth column with the threshold raised to match:
        # scaling by a power of two keeps the response ratio exact
        m = self.six_column_map(0.25)
        assert maps.decide_wall_count(m, threshold=0.25) == 6
        assert maps.decide_wall_count(m, threshold=0.2500001) == 4

    def test_rendered_rooms(self):
        for seed in (0, 1, 2, 3):
            _, cuboid = synth.gen_room(seed, 4)
            _, lroom = synth.gen_room(seed, 6)
            assert maps.decide_wall_count(maps.render_ground_truth(cuboid, WIDTH)) == 4
            assert maps.decide_wall_count(maps.render_ground_truth(lroom, WIDTH)) == 6

    def test_empty_map_gives_four(self):
        assert maps.decide_wall_count(np.zeros((HEIGHT, WIDTH))) == 4


class TestProbMaps:
    def test_value_range_enforced(self):
        with pytest.raises(ValueError):
            ProbMaps.from_arrays(np.full((64, 128, 3), 1.5), np.zeros((64, 128, 1)))

    def test_dimension_match_enforced(self):
        with pytest.raises(ValueError):
            ProbMaps.from_arrays(np.zeros((64, 128, 3)), np.zeros((128, 256, 1)))

    def test_eqmp_round_trip(self, tmp_path):
        _, layout = synth.gen_room(8, 4)
        pm = maps.render_ground_truth(layout, 256)
        path = tmp_path / "maps.eqmp"
        pm.save_eqmp(path)
        back = ProbMaps.load_eqmp(path)
        np.testing.assert_allclose(back.corner.data, pm.corner.data, atol=1e-6)
        np.testing.assert_allclose(back.boundary.data, pm.boundary.data, atol=1e-6)

    def test_loss_weights_validated(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1.0)

import numpy as np
import pytest

from layoutkit import geom


def psnr(a, b, peak=1.0):
    mse = np.mean((np.asarray(a) - np.asarray(b)) ** 2)
    return float("inf") if mse == 0 else 10.0 * np.log10(peak**2 / mse)


def smooth_pano(width):
    """Low-frequency test pattern that is smooth across the seam."""
    h = width // 2
    vv, uu = np.mgrid[0:h, 0:width]
    d = geom.pix_to_dir(uu, vv, width)
    val = 0.5 + 0.2 * d[..., 0] + 0.15 * d[..., 1] * d[..., 2] + 0.1 * np.sin(3.0 * d[..., 2])
    return geom.EquirectImage(val)


class TestPixDir:
    def test_forward_convention(self):
        np.testing.assert_allclose(geom.pix_to_dir(511.5, 255.5, 1024), [0.0, 0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(geom.pix_to_dir(255.5, 255.5, 1024), [-1.0, 0.0, 0.0], atol=1e-12)

    def test_round_trip_random_pixels(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(0, 1024, size=1000)
        v = rng.uniform(0, 512, size=1000)
        ru, rv = geom.dir_to_pix(geom.pix_to_dir(u, v, 1024), 1024)
        assert np.max(np.abs(ru - u)) < 1e-9
        assert np.max(np.abs(rv - v)) < 1e-9

    def test_unit_norm(self):
        rng = np.random.default_rng(1)
        d = geom.pix_to_dir(rng.uniform(0, 256, 500), rng.uniform(0, 128, 500), 256)
        assert np.max(np.abs(np.linalg.norm(d, axis=-1) - 1.0)) <= 1e-12

    @pytest.mark.parametrize("u,v", [(-0.1, 10.0), (1024.0, 10.0), (5.0, -1.0), (5.0, 512.0)])
    def test_out_of_range_rejected(self, u, v):
        with pytest.raises(ValueError):
            geom.pix_to_dir(u, v, 1024)


class TestEquirectImage:
    def test_rejects_bad_aspect(self):
        with pytest.raises(ValueError):
            geom.EquirectImage(np.zeros((100, 128)))

    def test_rejects_small_width(self):
        with pytest.raises(ValueError):
            geom.EquirectImage(np.zeros((16, 32)))

    def test_rejects_nonfinite(self):
        bad = np.zeros((64, 128))
        bad[3, 4] = np.nan
        with pytest.raises(ValueError):
            geom.EquirectImage(bad)


class TestRotateEquirect:
    def test_identity_is_exact(self):
        img = smooth_pano(128)
        out = geom.rotate_equirect(img, np.eye(3))
        np.testing.assert_allclose(out.data, img.data, atol=1e-12)

    def test_yaw_by_whole_columns_is_a_roll(self):
        img = smooth_pano(128)
        k = 9
        out = geom.rotate_equirect(img, geom.rot_y(k * 2.0 * np.pi / 128))
        np.testing.assert_allclose(out.data, np.roll(img.data, k, axis=1), atol=1e-6)

    def test_round_trip_psnr(self):
        img = smooth_pano(256)
        r = geom.rot_x(0.2) @ geom.rot_y(0.7) @ geom.rot_z(-0.1)
        back = geom.rotate_equirect(geom.rotate_equirect(img, r), r.T)
        assert psnr(back.data, img.data) > 40.0

    def test_value_range_preserved(self):
        rng = np.random.default_rng(2)
        img = geom.EquirectImage(rng.uniform(0.25, 0.75, size=(64, 128)))
        out = geom.rotate_equirect(img, geom.rot_y(0.3) @ geom.rot_x(0.1))
        assert out.data.min() >= 0.25 - 1e-12
        assert out.data.max() <= 0.75 + 1e-12

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            geom.rotate_equirect(smooth_pano(128), np.diag([1.0, 1.0, 2.0]))


class TestPerspectiveView:
    def test_center_pixel_looks_forward(self):
        img = smooth_pano(256)
        view = geom.extract_perspective_view(img, np.array([0.0, 0.0, 1.0]), np.pi / 2, 65)
        ray = view.pix_to_ray(32.0, 32.0)
        np.testing.assert_allclose(ray, [0.0, 0.0, 1.0], atol=1e-12)
        expected = geom.bilinear_sample(img.data, *geom.dir_to_pix(ray, 256))
        np.testing.assert_allclose(view.image[32, 32], expected, atol=1e-12)

    def test_corner_ray_closed_form(self):
        # fov pi/2, size n: focal = n/2; corner pixel (0, 0) has camera-frame
        # coordinates ((0.5 - n/2)/f, (n/2 - 0.5)/f, 1).
        n = 64
        view = geom.extract_perspective_view(smooth_pano(256), np.array([0.0, 0.0, 1.0]), np.pi / 2, n)
        f = n / 2.0
        expect = np.array([(0.5 - n / 2) / f, (n / 2 - 0.5) / f, 1.0])
        expect /= np.linalg.norm(expect)
        np.testing.assert_allclose(view.pix_to_ray(0.0, 0.0), expect, atol=1e-12)
        # off-axis azimuth/elevation of that ray, by closed form
        theta = np.arctan2(expect[0], expect[2])
        phi = np.arcsin(expect[1])
        u, v = geom.angles_to_pix(theta, phi, 256)
        ru, rv = geom.dir_to_pix(expect, 256)
        np.testing.assert_allclose([u, v], [ru, rv], atol=1e-9)

    def test_constant_panorama_gives_constant_view(self):
        img = geom.EquirectImage(np.full((64, 128), 0.37))
        view = geom.extract_perspective_view(img, np.array([0.3, 0.2, 0.9]), 1.2, 48)
        np.testing.assert_allclose(view.image, 0.37, atol=1e-12)

    def test_pole_center_uses_z_up(self):
        view = geom.extract_perspective_view(smooth_pano(128), np.array([0.0, 1.0, 0.0]), 1.0, 32)
        # up vector of the basis must be world z
        np.testing.assert_allclose(view.basis[:, 1], [0.0, 0.0, 1.0], atol=1e-12)

    def test_bad_fov_rejected(self):
        with pytest.raises(ValueError):
            geom.extract_perspective_view(smooth_pano(128), np.array([0.0, 0.0, 1.0]), np.pi, 32)


class TestWraparound:
    def test_seam_columns_are_neighbors(self):
        img = smooth_pano(128)
        # sampling just past the last column wraps to column 0
        val = geom.bilinear_sample(img.data, 127.5, 10.0)
        expected = 0.5 * (img.data[10, 127] + img.data[10, 0])
        np.testing.assert_allclose(val, expected, atol=1e-12)

    def test_vertical_clamp(self):
        img = smooth_pano(128)
        top = geom.bilinear_sample(img.data, 5.0, -0.4)
        np.testing.assert_allclose(top, img.data[0, 5], atol=1e-12)


class TestRasterIO:
    def test_eqmp_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((32, 64, 4)).astype(np.float32)
        path = tmp_path / "maps.eqmp"
        geom.write_eqmp(path, data)
        back = geom.read_eqmp(path)
        assert back.shape == (32, 64, 4)
        np.testing.assert_array_equal(back.astype(np.float32), data)

    def test_eqmp_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.eqmp"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(ValueError):
            geom.read_eqmp(path)

    @pytest.mark.parametrize("bit_depth,tol", [(8, 1 / 255.0), (16, 1 / 65535.0)])
    @pytest.mark.parametrize("channels", [1, 3])
    def test_png_round_trip(self, tmp_path, bit_depth, tol, channels):
        rng = np.random.default_rng(4)
        shape = (20, 30) if channels == 1 else (20, 30, 3)
        data = rng.uniform(0, 1, size=shape)
        path = tmp_path / "img.png"
        geom.write_png(path, data, bit_depth=bit_depth)
        back = geom.read_png(path)
        assert back.shape == shape
        assert np.max(np.abs(back - data)) <= tol

import numpy as np
import pytest
from scipy.special import logit

from slimsplat.cloud import GaussianCloud, PARAM_FIELDS
from slimsplat.errors import ContractViolationError
from slimsplat.rasterizer import (
    RenderSettings,
    bin_tiles,
    render_backward,
    render_forward,
    sh_rest_update_step,
)

from conftest import (
    project_for_oracle,
    random_cloud,
    reference_render,
    ring_cameras,
    make_camera,
)


def single_gaussian_cloud(color=(1.0, 0.0, 0.0), alpha=0.9, z=0.0, scale=0.4):
    c = GaussianCloud.zeros(1)
    c.positions = np.array([[0.0, 0.0, z]])
    c.log_scales = np.full((1, 3), np.log(scale))
    c.opacity_logits = np.array([logit(alpha)])
    c.sh_dc = (np.array([color]) - 0.5) / 0.28209479177387814
    return c


class TestForward:
    def test_empty_cloud_renders_background(self):
        cam = make_camera(16)
        out = render_forward(GaussianCloud.zeros(0), cam, RenderSettings(background=(0.2, 0.4, 0.6)))
        np.testing.assert_allclose(out.image, np.broadcast_to([0.2, 0.4, 0.6], (16, 16, 3)))
        np.testing.assert_allclose(out.transmittance, 1.0)

    def test_single_opaque_gaussian_at_center(self):
        # alpha chosen so the clamp produces exactly 0.99 at the peak
        cam = make_camera(17, dist=3.0)
        cloud = single_gaussian_cloud(alpha=0.999, scale=1.2)
        out = render_forward(cloud, cam, RenderSettings(background=(0.0, 0.0, 0.0)))
        cy, cx = int(cam.cy), int(cam.cx)
        assert out.image[cy, cx, 0] == pytest.approx(0.99, abs=1e-3)
        assert out.image[cy, cx, 1] == pytest.approx(0.0, abs=1e-3)

    def test_two_coincident_gaussians_blend_in_depth_order(self):
        # derived by walking the blending sum term by term:
        # front a=0.5 red, back a=0.99 blue -> (0.5, 0, 0.5*0.99) + 0.005*bg
        cam = make_camera(17, dist=3.0)
        axis = -cam.center / np.linalg.norm(cam.center)  # toward the origin
        front = single_gaussian_cloud(color=(1.0, 0.0, 0.0), alpha=0.5, scale=2.0)
        back = single_gaussian_cloud(color=(0.0, 0.0, 1.0), alpha=0.9999, scale=2.0)
        front.positions[0] = cam.center + 2.7 * axis
        back.positions[0] = cam.center + 3.3 * axis
        cloud = front.concat(back)
        bg = (0.25, 0.5, 0.75)
        out = render_forward(cloud, cam, RenderSettings(background=bg))
        cy, cx = int(cam.cy), int(cam.cx)
        # both means project exactly onto the center pixel, so the blended
        # alphas at that pixel are 0.5 and the 0.99 clamp
        resid = 0.5 * (1 - 0.99)
        expected = np.array([0.5, 0.0, 0.5 * 0.99]) + resid * np.array(bg)
        np.testing.assert_allclose(out.image[cy, cx], expected, atol=1e-6)

    def test_matches_reference_loop(self, rng):
        # oracle: untiled per-pixel loop over the same projected quantities
        cam = make_camera(24)
        cloud = random_cloud(rng, 30, alpha_range=(0.2, 0.9))
        settings = RenderSettings(background=(0.1, 0.2, 0.3))
        out = render_forward(cloud, cam, settings)
        p = project_for_oracle(cloud, cam, settings)
        image, transmit, wsum, _, _ = reference_render(
            p["means2d"], p["conics"], p["depths"], p["alphas"], p["colors"],
            cam.height, cam.width, settings.background,
            n_total=len(cloud), indices=p["indices"],
        )
        np.testing.assert_allclose(out.image, image, atol=1e-12)
        np.testing.assert_allclose(out.transmittance, transmit, atol=1e-12)
        np.testing.assert_allclose(out.weight_sum, wsum, atol=1e-12)

    def test_blend_weights_plus_transmittance_conserve(self, rng):
        for trial in range(5):
            cam = make_camera(16)
            cloud = random_cloud(rng, 40, alpha_range=(0.3, 0.95))
            out = render_forward(cloud, cam, RenderSettings())
            np.testing.assert_allclose(out.weight_sum + out.transmittance, 1.0, atol=1e-5)

    def test_order_invariance_bitwise(self, rng):
        cam = make_camera(24)
        cloud = random_cloud(rng, 25, alpha_range=(0.2, 0.9))
        perm = rng.permutation(25)
        out1 = render_forward(cloud, cam, RenderSettings())
        out2 = render_forward(cloud.take(perm), cam, RenderSettings())
        assert np.array_equal(out1.image, out2.image)

    def test_hit_records_match_reference(self, rng):
        cam = make_camera(16)
        cloud = random_cloud(rng, 20, alpha_range=(0.2, 0.9))
        settings = RenderSettings(record_hits=True, record_full=True)
        out = render_forward(cloud, cam, settings)
        p = project_for_oracle(cloud, cam, settings)
        _, _, _, hits, records = reference_render(
            p["means2d"], p["conics"], p["depths"], p["alphas"], p["colors"],
            cam.height, cam.width, settings.background,
            n_total=len(cloud), indices=p["indices"],
        )
        assert np.array_equal(out.hit_counts, hits)
        got_pairs = [[(g, round(w, 12)) for g, w in pix] for pix in out.hit_records]
        ref_pairs = [[(g, round(w, 12)) for g, w in pix] for pix in records]
        assert got_pairs == ref_pairs


class TestBinTiles:
    def test_extent_inside_one_tile(self):
        bins = bin_tiles(np.array([[8.0, 8.0]]), np.array([3.0]), np.array([1.0]), 32, 32, 16)
        counts = np.diff(bins.offsets)
        assert counts[0] == 1 and counts.sum() == 1

    def test_extent_spanning_four_tiles(self):
        bins = bin_tiles(np.array([[16.0, 16.0]]), np.array([4.0]), np.array([1.0]), 32, 32, 16)
        counts = np.diff(bins.offsets)
        assert counts.sum() == 4
        assert np.flatnonzero(counts).tolist() == [0, 1, 2, 3]

    def test_matches_rectangle_overlap_oracle(self, rng):
        # oracle: O(N * tiles) interval-overlap test; tiles are the half-open
        # regions [tx*ts, (tx+1)*ts) clipped to the grid, with off-screen
        # Gaussians (box missing every pixel center) excluded entirely
        width, height = 48, 40
        tile = 16
        n = 60
        means = rng.uniform(-10, 58, (n, 2))
        radii = rng.uniform(0.5, 20.0, n)
        depths = rng.uniform(0.1, 5.0, n)
        bins = bin_tiles(means, radii, depths, width, height, tile)
        got = {
            t: set(bins.indices[bins.offsets[t] : bins.offsets[t + 1]].tolist())
            for t in range(len(bins.offsets) - 1)
        }

        def overlaps(lo, hi, t_lo, t_hi, grid_lo, grid_hi):
            lo = max(lo, grid_lo)
            hi = min(hi, grid_hi)
            return lo < t_hi and hi >= t_lo

        for t in range(len(bins.offsets) - 1):
            ty, tx = divmod(t, bins.tiles_x)
            expected = set()
            for g in range(n):
                x0, x1 = means[g, 0] - radii[g], means[g, 0] + radii[g]
                y0, y1 = means[g, 1] - radii[g], means[g, 1] + radii[g]
                on_screen = x1 >= 0 and x0 <= width - 1 and y1 >= 0 and y0 <= height - 1
                if not on_screen:
                    continue
                if overlaps(x0, x1, tx * tile, (tx + 1) * tile, 0, width - 1) and overlaps(
                    y0, y1, ty * tile, (ty + 1) * tile, 0, height - 1
                ):
                    expected.add(g)
            assert got[t] == expected

    def test_sorted_by_depth_then_index(self, rng):
        n = 30
        means = np.full((n, 2), 8.0)
        radii = np.full(n, 2.0)
        depths = rng.integers(1, 4, n).astype(np.float64)  # force ties
        bins = bin_tiles(means, radii, depths, 16, 16, 16)
        lst = bins.indices[bins.offsets[0] : bins.offsets[1]]
        keys = [(depths[g], g) for g in lst]
        assert keys == sorted(keys)


class TestBackward:
    def test_zero_upstream_gradient(self, rng):
        cam = make_camera(16)
        cloud = random_cloud(rng, 10)
        settings = RenderSettings()
        out = render_forward(cloud, cam, settings)
        grads = render_backward(cloud, cam, settings, np.zeros((16, 16, 3)), out)
        for f in PARAM_FIELDS:
            assert np.all(getattr(grads, f) == 0.0)

    def test_occluded_gaussian_gets_zero_gradient(self):
        cam = make_camera(17, dist=3.0)
        # huge opaque front wall: T drops below 1e-4 after ~5 layers
        walls = [single_gaussian_cloud(alpha=0.999, z=0.5 - 0.05 * k, scale=3.0) for k in range(6)]
        cloud = walls[0]
        for wall in walls[1:]:
            cloud = cloud.concat(wall)
        hidden = single_gaussian_cloud(color=(0.0, 1.0, 0.0), alpha=0.5, z=-1.5, scale=0.5)
        cloud = cloud.concat(hidden)
        settings = RenderSettings()
        out = render_forward(cloud, cam, settings)
        grads = render_backward(cloud, cam, settings, np.ones((17, 17, 3)), out)
        assert np.all(grads.positions[-1] == 0.0)
        assert np.all(grads.sh_dc[-1] == 0.0)
        assert grads.opacity_logits[-1] == 0.0

    def test_missing_auxiliaries_rejected(self, rng):
        cam = make_camera(16)
        cloud = random_cloud(rng, 5)
        settings = RenderSettings()
        out = render_forward(cloud, cam, settings)
        out.last_pos = None
        with pytest.raises(ContractViolationError):
            render_backward(cloud, cam, settings, np.zeros((16, 16, 3)), out)

    def test_gradients_match_finite_differences(self, rng):
        cam = make_camera(16, dist=3.5)
        cloud = random_cloud(rng, 10)
        settings = RenderSettings(background=(0.1, 0.2, 0.3))
        dimg = rng.standard_normal((16, 16, 3))

        out = render_forward(cloud, cam, settings)
        grads = render_backward(cloud, cam, settings, dimg, out)

        def loss():
            return float((render_forward(cloud, cam, settings).image * dimg).sum())

        h = 1e-4
        render_fields = ("positions", "log_scales", "rotations", "opacity_logits", "sh_dc", "sh_rest")
        for fname in render_fields:
            arr = getattr(cloud, fname)
            analytic = getattr(grads, fname)
            flat = arr.reshape(-1)
            picks = rng.choice(flat.size, size=min(10, flat.size), replace=False)
            for j in picks:
                orig = flat[j]
                flat[j] = orig + h
                lp = loss()
                flat[j] = orig - h
                lm = loss()
                flat[j] = orig
                fd = (lp - lm) / (2 * h)
                an = analytic.reshape(-1)[j]
                assert abs(fd - an) / max(abs(fd), abs(an), 1e-6) < 1e-3, (fname, j)

    def test_decimation_skips_higher_band_gradients(self, rng):
        cam = make_camera(16)
        cloud = random_cloud(rng, 8)
        settings = RenderSettings(compute_sh_rest_grads=False)
        out = render_forward(cloud, cam, settings)
        grads = render_backward(cloud, cam, settings, rng.standard_normal((16, 16, 3)), out)
        assert np.all(grads.sh_rest == 0.0)
        assert np.any(grads.sh_dc != 0.0)


class TestShCadence:
    def test_cadence_16_fires_on_multiples(self):
        assert sh_rest_update_step(16, 16) is True
        assert sh_rest_update_step(17, 16) is False
        assert sh_rest_update_step(0, 16) is True

    def test_cadence_one_always_fires(self):
        assert all(sh_rest_update_step(i, 1) for i in range(40))

    def test_invalid_cadence(self):
        with pytest.raises(ContractViolationError):
            sh_rest_update_step(3, 0)

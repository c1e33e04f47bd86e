import numpy as np
import pytest

from slimsplat.errors import ContractViolationError
from slimsplat.metrics import (
    PSNR_IDENTICAL,
    SsimParams,
    gaussian_taps,
    psnr,
    ssim_fast,
    ssim_reference,
)


def naive_ssim(a, b, params=SsimParams()):
    """Literal double-loop SSIM over symmetric-padded windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    r = params.window // 2
    taps = gaussian_taps(params.window, params.sigma)
    w2 = np.outer(taps, taps)
    h, wid, channels = a.shape
    total = 0.0
    for c in range(channels):
        ap = np.pad(a[:, :, c], r, mode="symmetric")
        bp = np.pad(b[:, :, c], r, mode="symmetric")
        for i in range(h):
            for j in range(wid):
                wa = ap[i : i + params.window, j : j + params.window]
                wb = bp[i : i + params.window, j : j + params.window]
                mu_a = (w2 * wa).sum()
                mu_b = (w2 * wb).sum()
                var_a = (w2 * wa * wa).sum() - mu_a**2
                var_b = (w2 * wb * wb).sum() - mu_b**2
                cov = (w2 * wa * wb).sum() - mu_a * mu_b
                num = (2 * mu_a * mu_b + params.c1) * (2 * cov + params.c2)
                den = (mu_a**2 + mu_b**2 + params.c1) * (var_a + var_b + params.c2)
                total += num / den
    return total / (h * wid * channels)


class TestPsnr:
    def test_identical_sentinel(self, rng):
        img = rng.random((8, 8, 3))
        assert psnr(img, img) == PSNR_IDENTICAL

    def test_uniform_offset_is_20db(self):
        a = np.zeros((16, 16))
        b = np.full((16, 16), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)

    def test_matches_mse_oracle(self, rng):
        a = rng.random((12, 9, 3))
        b = rng.random((12, 9, 3))
        mse = float(((a - b) ** 2).sum()) / a.size
        assert psnr(a, b) == pytest.approx(10 * np.log10(1.0 / mse), abs=1e-9)

    def test_strictly_decreasing_in_perturbation(self, rng):
        a = rng.random((16, 16, 3))
        noise = rng.standard_normal(a.shape)
        values = [psnr(a, a + eps * noise) for eps in (1e-4, 1e-3, 1e-2, 1e-1)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ContractViolationError):
            psnr(np.zeros((4, 4)), np.zeros((5, 4)))


class TestSsimReference:
    def test_identical_images(self, rng):
        img = rng.random((16, 16, 3))
        assert ssim_reference(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_structure_below_one(self, rng):
        a = rng.random((16, 16))
        assert ssim_reference(a, 1.0 - a) < 1.0

    def test_matches_naive_double_loop(self, rng):
        a = rng.random((14, 17, 3))
        b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
        assert ssim_reference(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-7)

    def test_too_small_rejected(self, rng):
        with pytest.raises(ContractViolationError):
            ssim_reference(np.zeros((8, 8)), np.zeros((8, 8)))


class TestSsimFast:
    def test_identical_images_unit_value_zero_grad(self, rng):
        img = rng.random((16, 16, 3))
        value, grad = ssim_fast(img, img)
        assert value == pytest.approx(1.0, abs=1e-12)
        assert np.abs(grad).max() < 1e-9

    def test_equals_reference(self, rng):
        for _ in range(10):
            a = rng.random((20, 15, 3))
            b = rng.random((20, 15, 3))
            value, _ = ssim_fast(a, b, compute_grad=False)
            assert abs(value - ssim_reference(a, b)) < 1e-6

    def test_symmetry_of_value(self, rng):
        a = rng.random((16, 16))
        b = rng.random((16, 16))
        va, _ = ssim_fast(a, b, compute_grad=False)
        vb, _ = ssim_fast(b, a, compute_grad=False)
        assert va == pytest.approx(vb, abs=1e-9)

    def test_gradient_matches_finite_differences(self, rng):
        a = rng.random((16, 16, 3))
        b = rng.random((16, 16, 3))
        _, grad = ssim_fast(a, b)
        h = 1e-6
        picks = [(rng.integers(16), rng.integers(16), rng.integers(3)) for _ in range(24)]
        for i, j, c in picks:
            ap = a.copy()
            ap[i, j, c] += h
            am = a.copy()
            am[i, j, c] -= h
            fd = (ssim_fast(ap, b, compute_grad=False)[0] - ssim_fast(am, b, compute_grad=False)[0]) / (2 * h)
            assert abs(fd - grad[i, j, c]) / max(abs(fd), abs(grad[i, j, c]), 1e-9) < 1e-3

    def test_gradient_shape_follows_input(self, rng):
        a = rng.random((16, 16))
        b = rng.random((16, 16))
        _, grad = ssim_fast(a, b)
        assert grad.shape == (16, 16)

    def test_faster_than_reference_on_large_images(self, rng):
        import time

        a = rng.random((512, 512, 3))
        b = rng.random((512, 512, 3))
        ssim_fast(a, b, compute_grad=False)  # warm any caches
        t0 = time.perf_counter()
        ssim_reference(a, b)
        t_ref = time.perf_counter() - t0
        t0 = time.perf_counter()
        ssim_fast(a, b, compute_grad=False)
        t_fast = time.perf_counter() - t0
        assert t_fast < t_ref

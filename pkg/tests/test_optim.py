import numpy as np
import pytest

from slimsplat.errors import ContractViolationError
from slimsplat.optim import Adam, exponential_lr


def test_single_step_matches_adam_formula():
    opt = Adam(eps=1e-8)
    opt.add_group("w", (3,), lr=0.1)
    w = np.array([1.0, 2.0, 3.0])
    g = np.array([0.5, -0.5, 0.0])
    opt.update("w", w, g)
    # bias-corrected first step: m_hat = g, v_hat = g^2
    expected = np.array([1.0, 2.0, 3.0]) - 0.1 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(w, expected, rtol=1e-9)


def test_moments_accumulate_like_reference(rng):
    beta1, beta2, eps = 0.9, 0.999, 1e-15
    opt = Adam(beta1=beta1, beta2=beta2, eps=eps)
    opt.add_group("w", (4,), lr=0.05)
    w = rng.normal(size=4)
    w_ref = w.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    for t in range(1, 8):
        g = rng.normal(size=4)
        opt.update("w", w, g)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        w_ref -= 0.05 * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
        np.testing.assert_allclose(w, w_ref, rtol=1e-12)


def test_compact_and_extend_keep_rows_aligned(rng):
    opt = Adam()
    opt.add_group("a", (6, 3), lr=0.1)
    opt.add_group("b", (6,), lr=0.1)
    a = rng.normal(size=(6, 3))
    opt.update("a", a, rng.normal(size=(6, 3)))
    keep = np.array([0, 2, 5])
    m_expected = opt.groups["a"].m[keep].copy()
    opt.compact(keep)
    opt.extend(2)
    assert opt.rows() == 5
    np.testing.assert_allclose(opt.groups["a"].m[:3], m_expected)
    assert np.all(opt.groups["a"].m[3:] == 0.0)
    assert np.all(opt.groups["a"].v[3:] == 0.0)


def test_shape_mismatch_rejected(rng):
    opt = Adam()
    opt.add_group("w", (3,), lr=0.1)
    with pytest.raises(ContractViolationError):
        opt.update("w", np.zeros(4), np.zeros(4))


def test_exponential_lr_endpoints_and_monotone():
    assert exponential_lr(0, 1e-2, 1e-4, 100) == pytest.approx(1e-2)
    assert exponential_lr(100, 1e-2, 1e-4, 100) == pytest.approx(1e-4)
    assert exponential_lr(250, 1e-2, 1e-4, 100) == pytest.approx(1e-4)
    assert exponential_lr(50, 1e-2, 1e-4, 100) == pytest.approx(1e-3, rel=1e-9)
    values = [exponential_lr(t, 1e-2, 1e-4, 100) for t in range(101)]
    assert all(x >= y for x, y in zip(values, values[1:]))

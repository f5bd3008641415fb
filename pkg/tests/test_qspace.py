import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qsopt.qspace import SHCoefficients, SignalVector, fit_matrix, fit_sh, \
    resample, resample_grad, subsample_batch
from qsopt.shbasis import BasisSpec, basis_matrix, index_to_lm
from qsopt.sphere import protocol_from_angles, random_protocol


@pytest.fixture(scope="module")
def full_B(full_protocol, spec_l4):
    return basis_matrix(full_protocol, spec_l4)


def test_fit_constant_signal(full_protocol, full_B, spec_l4):
    k = 0.37
    s = SignalVector(np.full(90, k), full_protocol)
    C = fit_sh(s, full_B)
    assert C.values[0] == pytest.approx(2 * math.sqrt(math.pi) * k, abs=1e-12)
    assert np.max(np.abs(C.values[1:])) < 1e-10


def test_fit_roundtrip_band_limited(full_protocol, full_B, spec_l4, rng):
    C_true = rng.normal(size=15)
    s = SignalVector(full_B.values @ C_true, full_protocol)
    C = fit_sh(s, full_B)
    assert np.max(np.abs(C.values - C_true)) < 1e-10


def test_fit_zero_signal(full_protocol, full_B):
    C = fit_sh(SignalVector(np.zeros(90), full_protocol), full_B)
    assert np.all(C.values == 0.0)


def test_fit_protocol_mismatch(full_B):
    other = random_protocol(5, seed=1)
    with pytest.raises(ValueError, match="protocol"):
        fit_sh(SignalVector(np.zeros(5), other), full_B)


def test_resample_reproduces_band_limited(full_protocol, full_B, rng):
    C_true = rng.normal(size=15)
    s = SignalVector(full_B.values @ C_true, full_protocol)
    C = fit_sh(s, full_B)
    back = resample(C, full_protocol)
    assert np.max(np.abs(back.values - s.values)) < 1e-10


def test_resample_constant_coefficient(spec_l4):
    k = 2.5
    C = SHCoefficients(np.eye(15)[0] * k, spec_l4)
    q = random_protocol(7, seed=3)
    out = resample(C, q)
    assert np.allclose(out.values, 0.2820947918 * k, atol=1e-9)


def test_resample_antipodal_agreement(spec_l4, rng):
    C = SHCoefficients(rng.normal(size=15), spec_l4)
    thetas = rng.uniform(0.2, math.pi - 0.2, 6)
    phis = rng.uniform(0.0, 2 * math.pi, 6)
    a = resample(C, protocol_from_angles(thetas, phis))
    b = resample(C, protocol_from_angles(math.pi - thetas, phis + math.pi))
    assert np.max(np.abs(a.values - b.values)) < 1e-12


def test_resample_grad_zero_for_constant(spec_l4):
    C = SHCoefficients(np.eye(15)[0], spec_l4)
    q = random_protocol(4, seed=2)
    gt, gp = resample_grad(C, q)
    assert np.all(gt == 0.0)
    assert np.all(gp == 0.0)


def test_resample_grad_finite_differences(spec_l4, rng):
    C = SHCoefficients(rng.normal(size=15), spec_l4)
    thetas = rng.uniform(0.2, math.pi - 0.2, 30)
    phis = rng.uniform(0.0, 2 * math.pi, 30)
    q = protocol_from_angles(thetas, phis)
    gt, gp = resample_grad(C, q)
    h = 1e-6
    fd_t = (resample(C, protocol_from_angles(thetas + h, phis)).values
            - resample(C, protocol_from_angles(thetas - h, phis)).values) / (2 * h)
    fd_p = (resample(C, protocol_from_angles(thetas, phis + h)).values
            - resample(C, protocol_from_angles(thetas, phis - h)).values) / (2 * h)
    assert np.max(np.abs(gt - fd_t) / np.maximum(np.abs(fd_t), 1e-4)) < 1e-5
    assert np.max(np.abs(gp - fd_p) / np.maximum(np.abs(fd_p), 1e-4)) < 1e-5


def test_resample_grad_m0_support_has_zero_phi_grad(spec_l4, rng):
    values = np.zeros(15)
    for j in range(1, 16):
        _, m = index_to_lm(j)
        if m == 0:
            values[j - 1] = rng.normal()
    C = SHCoefficients(values, spec_l4)
    q = random_protocol(6, seed=4)
    _, gp = resample_grad(C, q)
    assert np.max(np.abs(gp)) < 1e-14


def test_subsample_identity_on_band_limited(full_protocol, full_B, rng):
    batch = rng.normal(size=(5, 15)) @ full_B.values.T
    out = subsample_batch(batch, full_B, full_protocol)
    assert np.max(np.abs(out - batch)) < 1e-10


def test_subsample_zero_batch(full_protocol, full_B):
    q = random_protocol(3, seed=1)
    out = subsample_batch(np.zeros((4, 90)), full_B, q)
    assert out.shape == (4, 3)
    assert np.all(out == 0.0)


def test_subsample_empty_batch(full_protocol, full_B):
    q = random_protocol(3, seed=1)
    assert subsample_batch(np.zeros((0, 90)), full_B, q).shape == (0, 3)


@given(st.floats(-10, 10, allow_nan=False))
def test_subsample_homogeneity(alpha):
    rng = np.random.default_rng(0)
    thetas = rng.uniform(0.1, math.pi - 0.1, 20)
    phis = rng.uniform(0, 2 * math.pi, 20)
    p = protocol_from_angles(thetas, phis)
    B = basis_matrix(p, BasisSpec(2))
    q = random_protocol(3, seed=5)
    x = rng.normal(size=(2, 20))
    a = subsample_batch(alpha * x, B, q)
    b = alpha * subsample_batch(x, B, q)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, abs(alpha)) * np.max(np.abs(b) + 1)


def test_subsample_additivity(full_protocol, full_B, rng):
    q = random_protocol(4, seed=6)
    x = rng.normal(size=(3, 90))
    y = rng.normal(size=(3, 90))
    lhs = subsample_batch(x + y, full_B, q)
    rhs = subsample_batch(x, full_B, q) + subsample_batch(y, full_B, q)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_ridge_fit_keeps_constant(full_protocol, full_B):
    s = np.full(90, 1.0)
    F = fit_matrix(full_B, ridge=1e-2)
    C = F @ s
    # Laplace-Beltrami weighting leaves the l=0 term untouched
    assert C[0] == pytest.approx(2 * math.sqrt(math.pi), rel=1e-10)

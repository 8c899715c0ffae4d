"""Diophantine certification and small-divisor inverse operators."""

import math

import numpy as np
import pytest

from paratorus import (
    FrequencyVector,
    NonzeroMeanError,
    ResonantModeError,
    RotationAngle,
    SpectralField,
    TorusGrid,
    VectorField,
    certify_diophantine,
    certify_rotation_angle,
    delta_alpha,
    delta_alpha_inverse,
    fundamental_solution_partial,
    omega_directional_inverse,
    remove_mean,
)

from test_spectral import random_field

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def mean_zero_random(grid, rng, band=None):
    return remove_mean(random_field(grid, rng, band=band))


# --- certification -----------------------------------------------------------


def test_resonant_vector_rejected():
    with pytest.raises(ResonantModeError) as err:
        certify_diophantine([1.0, 0.0], sigma=1.0, K=8)
    assert 0 in err.value.mode  # k = (0, +-1) witnesses the resonance


def test_golden_pair_certifies_and_is_constant_type():
    g16 = certify_diophantine([1.0, GOLDEN], sigma=1.0, K=16)
    g64 = certify_diophantine([1.0, GOLDEN], sigma=1.0, K=64)
    assert np.isfinite(g64) and g64 > 0
    assert g64 >= g16  # monotone nondecreasing in K
    assert g64 <= 4.0 * g16  # constant type: no blow-up under refinement


def test_certify_exhaustive_scan_oracle():
    # independent brute-force scan over the same mode box
    omega = np.array([1.0, GOLDEN])
    sigma, K = 1.0, 12
    worst = 0.0
    for k1 in range(-K, K + 1):
        for k2 in range(-K, K + 1):
            if k1 == 0 and k2 == 0:
                continue
            d = abs(k1 * omega[0] + k2 * omega[1])
            worst = max(worst, 1.0 / (d * math.hypot(k1, k2) ** sigma))
    assert abs(certify_diophantine(omega, sigma, K) - worst) < 1e-12 * worst


def test_certify_scaling_homogeneity():
    omega = np.array([1.0, GOLDEN])
    base = certify_diophantine(omega, 1.0, 16)
    scaled = certify_diophantine(3.0 * omega, 1.0, 16)
    assert abs(scaled - base / 3.0) < 1e-12 * base


def test_rotation_angle_certification_and_rational_rejection():
    alpha = math.pi * (math.sqrt(5.0) - 1.0)
    ra = RotationAngle.certify(alpha, sigma=1.0, K=256)
    assert np.isfinite(ra.gamma) and ra.gamma > 0
    with pytest.raises(ResonantModeError) as err:
        certify_rotation_angle(2.0 * math.pi * 3.0 / 7.0, sigma=1.0, K=32)
    assert err.value.mode == (7,)


# --- delta_alpha and its inverse ----------------------------------------------


def circle_setup(K=64):
    g = TorusGrid.create(1, K)
    alpha = RotationAngle.certify(math.pi * (math.sqrt(5.0) - 1.0), 1.0, K)
    return g, alpha


def test_delta_alpha_basics():
    g, alpha = circle_setup()
    c = SpectralField.constant(g, 3.0)
    assert delta_alpha(c, alpha).l2_norm() == 0.0
    u = SpectralField.from_modes(g, {2: 1.0 + 0.5j})
    got = delta_alpha(u, alpha)
    factor = np.exp(2j * alpha.alpha) - 1.0
    assert abs(got.coeffs[g.max_mode + 2] - factor * (1.0 + 0.5j)) < 1e-13


def test_delta_alpha_inverse_single_mode_formula():
    g, alpha = circle_setup()
    f = SpectralField.from_modes(g, {1: 1.0})
    v = delta_alpha_inverse(f, alpha)
    expect = 1.0 / (np.exp(1j * alpha.alpha) - 1.0)
    assert abs(v.coeffs[g.max_mode + 1] - expect) < 1e-13


def test_delta_alpha_inverse_rejects_nonzero_mean():
    g, alpha = circle_setup()
    f = SpectralField.from_modes(g, {1: 1.0}) + 0.5
    with pytest.raises(NonzeroMeanError):
        delta_alpha_inverse(f, alpha)


def test_delta_alpha_round_trip():
    g, alpha = circle_setup()
    rng = np.random.default_rng(2)
    f = mean_zero_random(g, rng, band=g.max_mode)
    v = delta_alpha_inverse(f, alpha)
    back = delta_alpha(v, alpha)
    assert (back - f).l2_norm() < 1e-11 * f.l2_norm()
    assert abs(v.mean()) < 1e-14


def test_delta_alpha_inverse_norm_bound():
    g, alpha = circle_setup(K=128)
    rng = np.random.default_rng(3)
    s, sigma = 2.0, alpha.sigma
    for _ in range(100):
        f = mean_zero_random(g, rng, band=g.max_mode)
        v = delta_alpha_inverse(f, alpha)
        assert v.sobolev_norm(s) <= 2.0 * alpha.gamma * f.sobolev_norm(s + sigma)


def test_inverses_commute_with_translate():
    g, alpha = circle_setup()
    rng = np.random.default_rng(4)
    f = mean_zero_random(g, rng)
    shift = [0.9]
    lhs = delta_alpha_inverse(f, alpha).translate(shift)
    rhs = delta_alpha_inverse(f.translate(shift), alpha)
    assert (lhs - rhs).l2_norm() < 1e-13


# --- directional inverse -------------------------------------------------------


def torus_setup(K=16):
    g = TorusGrid.create(2, K)
    omega = FrequencyVector.certify([1.0, GOLDEN], 1.0, K)
    return g, omega


def test_omega_inverse_cosine_formula():
    g, omega = torus_setup()
    f = SpectralField.from_modes(g, {(1, 1): 0.5})  # cos(k.theta), k = (1,1)
    v = omega_directional_inverse(f, omega)
    kw = omega.omega[0] + omega.omega[1]
    # expected sin(k.theta)/(k.omega)
    expect = SpectralField.from_modes(g, {(1, 1): -0.5j / kw})
    assert np.max(np.abs(v.coeffs - expect.coeffs)) < 1e-14


def test_omega_inverse_mean_policy():
    g, omega = torus_setup()
    f = SpectralField.from_modes(g, {(1, 0): 0.5}) + 0.3
    with pytest.raises(NonzeroMeanError):
        omega_directional_inverse(f, omega)
    # roundoff-scale mean is silently projected out
    tiny = SpectralField.from_modes(g, {(1, 0): 0.5}) + 1e-14
    v = omega_directional_inverse(tiny, omega)
    assert abs(v.mean()) == 0.0


def test_omega_inverse_round_trip_and_norm_bound():
    g, omega = torus_setup()
    rng = np.random.default_rng(5)
    s = 1.5
    for _ in range(100):
        f = mean_zero_random(g, rng, band=g.max_mode)
        v = omega_directional_inverse(f, omega)
        back = v.omega_derivative(omega.array)
        assert (back - f).l2_norm() < 1e-11 * f.l2_norm()
        assert v.sobolev_norm(s) <= omega.gamma * f.sobolev_norm(s + omega.sigma)


def test_omega_inverse_componentwise_on_vectors():
    g, omega = torus_setup()
    rng = np.random.default_rng(6)
    v = VectorField([mean_zero_random(g, rng), mean_zero_random(g, rng)])
    out = omega_directional_inverse(v, omega)
    for i in range(2):
        single = omega_directional_inverse(v[i], omega)
        assert (out[i] - single).l2_norm() == 0.0


# --- remove_mean ---------------------------------------------------------------


def test_remove_mean():
    g, _ = circle_setup()
    c = SpectralField.constant(g, 5.0)
    assert remove_mean(c).l2_norm() == 0.0
    rng = np.random.default_rng(7)
    f = mean_zero_random(g, rng)
    assert (remove_mean(f) - f).l2_norm() == 0.0
    assert remove_mean(f + 2.0).mean() == 0.0


# --- fundamental solution -------------------------------------------------------


def test_fundamental_solution_rejects_small_tau():
    _, omega = torus_setup()
    with pytest.raises(ValueError):
        fundamental_solution_partial(omega, tau=omega.sigma + 0.5, K=8, theta=[0.3, 0.7])


def test_fundamental_solution_cauchy_property():
    omega = FrequencyVector.certify([1.0, GOLDEN], 1.0, 64)
    tau = omega.sigma + 2.0 + 1.5  # > sigma + n, so the tail bound is finite
    theta = [0.4, 1.1]
    v16, tail16 = fundamental_solution_partial(omega, tau, 16, theta)
    v32, tail32 = fundamental_solution_partial(omega, tau, 32, theta)
    v64, tail64 = fundamental_solution_partial(omega, tau, 64, theta)
    assert np.isfinite(tail16) and tail32 < tail16
    assert abs(v32 - v16) <= tail16
    assert abs(v64 - v32) <= tail32


def test_fundamental_solution_odd_symmetry():
    omega = FrequencyVector.certify([1.0, GOLDEN], 1.0, 16)
    tau = omega.sigma + 4.0
    theta = np.array([0.8, 0.25])
    vp, _ = fundamental_solution_partial(omega, tau, 16, theta)
    vm, _ = fundamental_solution_partial(omega, tau, 16, -theta)
    assert abs(vp + vm) < 1e-12 * max(1.0, abs(vp))


def test_omega_inverse_commutes_with_translate():
    g, omega = torus_setup()
    rng = np.random.default_rng(8)
    f = mean_zero_random(g, rng)
    shift = [0.4, 1.3]
    lhs = omega_directional_inverse(f, omega).translate(shift)
    rhs = omega_directional_inverse(f.translate(shift), omega)
    assert (lhs - rhs).l2_norm() < 1e-13

"""Fourier-calculus layer: transforms, exact linear ops, dealiased products."""

import json

import numpy as np
import pytest

from paratorus import (
    GridMismatchError,
    SerializationError,
    SpectralField,
    TorusGrid,
    VectorField,
    analyze,
    compose_warped,
    field_from_json,
    field_to_json,
    synthesize,
)


def grid1d(K=16, N=None):
    return TorusGrid.create(1, K, N)


def random_field(grid, rng, band=None, amp=1.0):
    """Random real field band-limited to |k_i| <= band (default K//2)."""
    band = band or grid.max_mode // 2
    f = SpectralField.zero(grid)
    K = grid.max_mode
    n_modes = 12
    for _ in range(n_modes):
        k = tuple(int(rng.integers(-band, band + 1)) for _ in range(grid.dim))
        val = amp * (rng.standard_normal() + 1j * rng.standard_normal()) / n_modes
        idx = tuple(c + K for c in k)
        ridx = tuple(-c + K for c in k)
        f.coeffs[idx] += val
        f.coeffs[ridx] += np.conj(val)
    return f


# --- grid validation -------------------------------------------------------


def test_grid_rejects_bad_dim():
    with pytest.raises(ValueError):
        TorusGrid.create(4, 8)
    with pytest.raises(ValueError):
        TorusGrid.create(0, 8)


def test_grid_rejects_insufficient_padding():
    with pytest.raises(ValueError):
        TorusGrid(1, 16, 63)
    TorusGrid(1, 16, 64)  # exactly 4K is allowed


# --- analyze ----------------------------------------------------------------


def test_analyze_cosine_single_mode():
    g = TorusGrid.create(1, 2, 8)
    x = g.point_axis
    f = analyze(g, np.cos(x))
    assert abs(f.coeffs[g.max_mode + 1] - 0.5) < 1e-14
    assert abs(f.coeffs[g.max_mode - 1] - 0.5) < 1e-14
    rest = f.coeffs.copy()
    rest[g.max_mode + 1] = rest[g.max_mode - 1] = 0.0
    assert np.max(np.abs(rest)) < 1e-14


def test_analyze_constant():
    g = grid1d()
    f = analyze(g, np.full(g.point_shape, 2.75))
    assert abs(f.mean() - 2.75) < 1e-14


def test_analyze_cos_squared_against_dft_oracle():
    g = TorusGrid.create(1, 4, 16)
    x = g.point_axis
    samples = np.cos(x) ** 2
    f = analyze(g, samples)
    # independent oracle: plain DFT sum per retained mode
    N = g.points_per_dim
    for k in range(-g.max_mode, g.max_mode + 1):
        oracle = np.sum(samples * np.exp(-1j * k * x)) / N
        assert abs(f.coeffs[k + g.max_mode] - oracle) < 1e-13
    # trig identity: cos^2 = 1/2 + cos(2x)/2
    assert abs(f.mean() - 0.5) < 1e-14
    assert abs(f.coeffs[g.max_mode + 2] - 0.25) < 1e-14


def test_analyze_shape_mismatch():
    g = grid1d()
    with pytest.raises(ValueError):
        analyze(g, np.zeros(g.points_per_dim + 1))


def test_round_trip_band_limited():
    rng = np.random.default_rng(7)
    for dim in (1, 2):
        g = TorusGrid.create(dim, 6)
        f = random_field(g, rng)
        back = analyze(g, f.samples())
        assert np.max(np.abs(back.coeffs - f.coeffs)) < 1e-12


# --- synthesize ------------------------------------------------------------


def test_synthesize_single_mode_at_zero():
    g = grid1d(4)
    f = SpectralField.from_modes(g, {1: 0.5})
    assert abs(synthesize(f, np.array([0.0])) [0] - 1.0) < 1e-14


def test_synthesize_matches_grid_samples():
    rng = np.random.default_rng(3)
    g = grid1d(8)
    f = random_field(g, rng)
    pts = g.point_axis
    vals = synthesize(f, pts)
    assert np.max(np.abs(vals - f.samples())) < 1e-12


def test_synthesize_against_term_sum_oracle():
    rng = np.random.default_rng(11)
    g = TorusGrid.create(2, 5)
    f = random_field(g, rng, band=2)
    pts = rng.uniform(0, 2 * np.pi, size=(100, 2))
    vals = synthesize(f, pts)
    K = g.max_mode
    for p, v in zip(pts, vals):
        acc = 0.0 + 0.0j
        for k1 in range(-K, K + 1):
            for k2 in range(-K, K + 1):
                acc += f.coeffs[k1 + K, k2 + K] * np.exp(1j * (k1 * p[0] + k2 * p[1]))
        assert abs(v - acc.real) < 1e-12


# --- derivative / translate / mean ------------------------------------------


def test_derivative_sin_to_cos():
    g = grid1d(4)
    f = SpectralField.from_modes(g, {1: -0.5j})  # sin(x)
    d = f.derivative(0)
    cosx = SpectralField.from_modes(g, {1: 0.5})
    assert np.max(np.abs(d.coeffs - cosx.coeffs)) < 1e-15


def test_derivative_constant_is_zero_and_mean_exact():
    g = grid1d()
    c = SpectralField.constant(g, 4.2)
    assert c.derivative(0).l2_norm() == 0.0
    rng = np.random.default_rng(0)
    f = random_field(g, rng)
    assert f.derivative(0).mean() == 0.0


def test_derivative_leibniz_oracle():
    rng = np.random.default_rng(5)
    g = grid1d(16)
    f = random_field(g, rng, band=6)
    h = random_field(g, rng, band=6)
    lhs = f.product(h).derivative(0)
    rhs = f.derivative(0).product(h) + f.product(h.derivative(0))
    assert np.max(np.abs(lhs.coeffs - rhs.coeffs)) < 1e-11


def test_mean_against_quadrature_oracle():
    rng = np.random.default_rng(9)
    g = TorusGrid.create(2, 6)
    f = random_field(g, rng)
    assert abs(f.mean() - float(np.mean(f.samples()))) < 1e-12


def test_translate_identity_and_quarter_period():
    g = grid1d(4)
    sinx = SpectralField.from_modes(g, {1: -0.5j})
    cosx = SpectralField.from_modes(g, {1: 0.5})
    assert np.max(np.abs(sinx.translate([0.0]).coeffs - sinx.coeffs)) == 0.0
    shifted = sinx.translate([np.pi / 2])
    assert np.max(np.abs(shifted.coeffs - cosx.coeffs)) < 1e-15


def test_translate_group_law():
    rng = np.random.default_rng(13)
    g = grid1d(12)
    f = random_field(g, rng)
    a = 0.7321
    twice = f.translate([a]).translate([a])
    once = f.translate([2 * a])
    assert np.max(np.abs(twice.coeffs - once.coeffs)) < 1e-13


def test_derivative_translate_commute():
    rng = np.random.default_rng(17)
    g = grid1d(12)
    f = random_field(g, rng)
    a = [1.234]
    lhs = f.translate(a).derivative(0)
    rhs = f.derivative(0).translate(a)
    assert np.max(np.abs(lhs.coeffs - rhs.coeffs)) < 1e-14


# --- product ---------------------------------------------------------------


def test_product_identity_and_cos_squared():
    g = grid1d(4)
    one = SpectralField.constant(g, 1.0)
    cosx = SpectralField.from_modes(g, {1: 0.5})
    assert np.max(np.abs(cosx.product(one).coeffs - cosx.coeffs)) == 0.0
    sq = cosx.product(cosx)
    expect = SpectralField.from_modes(g, {2: 0.25}) + 0.5
    assert np.max(np.abs(sq.coeffs - expect.coeffs)) < 1e-14


def test_product_against_convolution_oracle():
    rng = np.random.default_rng(23)
    g = grid1d(16)
    f = random_field(g, rng, band=7)
    h = random_field(g, rng, band=7)
    got = f.product(h)
    conv = np.convolve(f.coeffs, h.coeffs)  # indices shift by 2K
    K = g.max_mode
    center = len(conv) // 2
    oracle = conv[center - K : center + K + 1]
    assert np.max(np.abs(got.coeffs - oracle)) < 1e-11


def test_product_commutative_and_associative():
    rng = np.random.default_rng(29)
    g = grid1d(16)
    f = random_field(g, rng, band=4)
    h = random_field(g, rng, band=4)
    w = random_field(g, rng, band=4)
    assert np.max(np.abs(f.product(h).coeffs - h.product(f).coeffs)) < 1e-13
    lhs = f.product(h).product(w)
    rhs = f.product(h.product(w))
    assert np.max(np.abs(lhs.coeffs - rhs.coeffs)) < 1e-11


def test_product_grid_mismatch():
    f = SpectralField.constant(grid1d(8), 1.0)
    h = SpectralField.constant(grid1d(16), 1.0)
    with pytest.raises(GridMismatchError):
        f.product(h)


# --- compose_warped ---------------------------------------------------------


def test_compose_warped_zero_and_constant_warp():
    rng = np.random.default_rng(31)
    g = grid1d(12)
    f = random_field(g, rng)
    zero_w = VectorField([SpectralField.zero(g)])
    assert np.max(np.abs(compose_warped(f, zero_w).coeffs - f.coeffs)) < 1e-12
    c = 0.8127
    const_w = VectorField([SpectralField.constant(g, c)])
    got = compose_warped(f, const_w)
    assert np.max(np.abs(got.coeffs - f.translate([c]).coeffs)) < 1e-12


def test_compose_warped_pointwise_oracle():
    g = grid1d(32)
    f = SpectralField.from_modes(g, {3: 0.5})  # cos(3x)
    w = SpectralField.from_modes(g, {1: -0.05j})  # 0.1 sin -> eps sin with eps=0.1
    comp = compose_warped(f, VectorField([w]))
    rng = np.random.default_rng(37)
    pts = rng.uniform(0, 2 * np.pi, 200)
    got = synthesize(comp, pts)
    warped = pts + synthesize(w, pts)
    oracle = np.cos(3 * warped)
    assert np.max(np.abs(got - oracle)) < 1e-10


# --- norms -------------------------------------------------------------------


def test_sobolev_norm_examples():
    g = grid1d(8)
    c = SpectralField.constant(g, -3.5)
    for s in (0.0, 1.5, 3.0):
        assert abs(c.sobolev_norm(s) - 3.5) < 1e-14
    two_cos = SpectralField.from_modes(g, {1: 1.0})  # e^{ix} + e^{-ix}
    assert abs(two_cos.sobolev_norm(0.0) - np.sqrt(2.0)) < 1e-14


def test_sobolev_monotone_in_s():
    rng = np.random.default_rng(41)
    g = grid1d(16)
    f = random_field(g, rng)
    assert f.sobolev_norm(1.0) <= f.sobolev_norm(2.0) <= f.sobolev_norm(3.5)


def test_sup_norm_examples():
    g = grid1d(8)
    cosx = SpectralField.from_modes(g, {1: 0.5})
    assert abs(cosx.sup_norm() - 1.0) < 1e-12
    assert abs(SpectralField.constant(g, -2.0).sup_norm() - 2.0) < 1e-14
    rng = np.random.default_rng(43)
    f = random_field(g, rng)
    assert f.sup_norm() <= np.sum(np.abs(f.coeffs)) + 1e-12


def test_hermitian_symmetry_preserved():
    rng = np.random.default_rng(47)
    g = TorusGrid.create(2, 6)
    f = random_field(g, rng)
    ops = [f.derivative(1), f.translate([0.3, 0.4]), f.product(f)]
    for out in ops:
        assert out.hermitian_defect() < 1e-12


# --- serialization -----------------------------------------------------------


def test_serialization_round_trip():
    rng = np.random.default_rng(53)
    g = TorusGrid.create(2, 5)
    f = random_field(g, rng)
    doc = field_to_json(f)
    back = field_from_json(json.loads(json.dumps(doc)))
    assert back.grid.dim == 2 and back.grid.max_mode == 5
    assert np.max(np.abs(back.coeffs - f.coeffs)) < 1e-15


def test_serialization_drops_tiny_modes():
    g = grid1d(4)
    f = SpectralField.from_modes(g, {1: 1e-20})
    assert field_to_json(f)["coeffs"] == []


def test_serialization_rejects_hermitian_violation():
    doc = {
        "dim": 1,
        "K": 4,
        "coeffs": [
            {"k": [1], "re": 1.0, "im": 0.0},
            {"k": [-1], "re": 0.5, "im": 0.0},
        ],
    }
    with pytest.raises(SerializationError):
        field_from_json(doc)


def test_serialization_mirrors_one_sided_modes():
    doc = {"dim": 1, "K": 4, "coeffs": [{"k": [2], "re": 0.25, "im": -0.1}]}
    f = field_from_json(doc)
    assert abs(f.coeffs[f.grid.max_mode - 2] - np.conj(0.25 - 0.1j)) < 1e-15
    assert f.hermitian_defect() == 0.0


def test_matrix_transpose_involution():
    from paratorus import MatrixField

    rng = np.random.default_rng(59)
    g = TorusGrid.create(1, 8)
    M = MatrixField([[random_field(g, rng) for _ in range(3)] for _ in range(2)])
    back = M.T.T
    assert back.shape == M.shape
    for i in range(2):
        for j in range(3):
            assert back[i, j] is M[i, j]

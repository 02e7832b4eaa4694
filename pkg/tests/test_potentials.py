import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from inertial_langevin import potentials as P


def _ball_points(rng, n, d, radius=5.0):
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius * rng.uniform(size=(n, 1)) ** (1 / d)


def _fd_gradient(value, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (value(x + e) - value(x - e)) / (2 * h)
    return g


def laplace_preset_params():
    return P.SmoothLaplaceParams((math.sqrt(2) / 2) * np.array([[3.0, -3.0], [7.0, 7.0]]), np.zeros(2), 0.05)


SMOOTH = {
    "gaussian": lambda: P.gaussian_potential(np.array([1.0, -2.0, 0.5]), np.array([0.5, 2.0, 1.0])),
    "laplace": lambda: P.smooth_laplace_potential(laplace_preset_params()),
    "laplace_penalised": lambda: P.smooth_laplace_potential(laplace_preset_params(), penalty_radius=1.0),
    "gmm": lambda: P.gmm_potential(P.grid_gmm_params()),
}


@pytest.mark.parametrize("name", sorted(SMOOTH))
def test_gradient_matches_central_differences(name):
    pot = SMOOTH[name]()
    rng = np.random.default_rng(0)
    for x in _ball_points(rng, 100, pot.dim):
        fd = _fd_gradient(pot.value, x)
        np.testing.assert_allclose(pot.gradient(x), fd, atol=1e-4)


@pytest.mark.parametrize("name", ["gaussian", "laplace"])
def test_gradient_vanishes_at_minimizer(name):
    pot = SMOOTH[name]()
    assert np.linalg.norm(pot.gradient(pot.minimizer)) <= 1e-8


def test_gaussian_examples():
    mean = np.full(100, 5.0)
    var = np.linspace(5e-3, 1.0, 100)
    pot = P.gaussian_potential(mean, var)
    assert pot.lipschitz == pytest.approx(200.0)
    assert pot.strong_convexity == pytest.approx(1.0)
    assert pot.kappa == pytest.approx(200.0)
    val, grad = P.eval_gaussian(mean, mean, var)
    assert val == 0 and np.all(grad == 0)
    i = 17
    e = np.zeros(100)
    e[i] = 1.0
    _, grad = P.eval_gaussian(mean + e, mean, var)
    np.testing.assert_array_equal(grad, e / var)


def test_gaussian_rejects_nonpositive_variance():
    with pytest.raises(P.InvalidParameterError):
        P.eval_gaussian(np.zeros(2), np.zeros(2), np.array([1.0, 0.0]))
    with pytest.raises(P.InvalidParameterError):
        P.gaussian_potential(np.zeros(2), np.array([1.0, -1.0]))


def test_laplace_single_atom_value():
    p = P.SmoothLaplaceParams(np.array([[1.0]]), np.zeros(1), 0.05)
    val, _ = P.eval_smooth_laplace(np.array([1.0]), p)
    assert val == pytest.approx(math.sqrt(1.0025) - 0.05, rel=1e-14)
    assert val == pytest.approx(0.951249, abs=5e-7)


def test_laplace_single_atom_in_plane():
    p = P.SmoothLaplaceParams(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2), 0.05)
    val, _ = P.eval_smooth_laplace(np.array([1.0, 0.0]), p)
    assert val == pytest.approx(math.sqrt(1.0025) - 0.05, rel=1e-14)


def test_laplace_preset_atoms_and_lipschitz():
    p = laplace_preset_params()
    np.testing.assert_allclose(np.linalg.norm(p.atoms, axis=1), [3.0, 7.0])
    assert p.formula_lipschitz == pytest.approx(1160.0)
    pot = P.smooth_laplace_potential(p)
    assert pot.lipschitz == pytest.approx(1160.0) and not pot.lipschitz_assumed
    override = P.smooth_laplace_potential(p, lipschitz=200.0)
    assert override.lipschitz == 200.0 and override.lipschitz_assumed
    val, grad = P.eval_smooth_laplace(np.zeros(2), p)
    assert val == 0 and np.all(grad == 0)


def test_laplace_parameter_errors():
    with pytest.raises(P.InvalidParameterError):
        P.SmoothLaplaceParams(np.eye(2), np.zeros(2), 0.0)
    with pytest.raises(P.InvalidParameterError):
        P.SmoothLaplaceParams(np.ones((1, 2)), np.zeros(1), 0.1)
    with pytest.raises(P.InvalidParameterError):
        P.SmoothLaplaceParams(np.eye(2), np.zeros(3), 0.1)


@given(arrays(float, 2, elements=st.floats(-10, 10)))
def test_laplace_value_nonnegative_and_zero_only_at_zero_residual(x):
    p = laplace_preset_params()
    val, _ = P.eval_smooth_laplace(x, p)
    assert val >= 0
    if np.any(np.abs(x @ p.atoms.T) > 1e-3):
        assert val > 0


def test_gmm_examples():
    single = P.GmmParams(np.array([1.0]), np.array([[0.3, -1.0]]), 0.5)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20, 2))
    _, g = P.eval_gmm(x, single)
    _, g_gauss = P.eval_gaussian(x, np.array([0.3, -1.0]), np.full(2, 0.25))
    np.testing.assert_allclose(g, g_gauss, rtol=1e-13, atol=1e-13)
    _, g0 = P.eval_gmm(np.zeros(2), P.grid_gmm_params())
    np.testing.assert_allclose(g0, 0, atol=1e-14)


def test_gmm_gradient_against_finite_differences_tight():
    p = P.grid_gmm_params()
    rng = np.random.default_rng(2)
    for x in rng.uniform(-4, 4, size=(20, 2)):
        fd = _fd_gradient(lambda z: P.eval_gmm(z, p)[0], x, h=1e-6)
        np.testing.assert_allclose(P.eval_gmm(x, p)[1], fd, atol=1e-6, rtol=1e-6)


def test_gmm_value_is_stable_far_from_components():
    val, grad = P.eval_gmm(np.array([1e3, -1e3]), P.grid_gmm_params())
    assert np.isfinite(val) and np.all(np.isfinite(grad))


def test_gmm_weights_must_sum_to_one():
    with pytest.raises(P.InvalidParameterError):
        P.GmmParams(np.array([0.5, 0.4]), np.zeros((2, 2)), 1.0)


def test_gmm_default_lipschitz_is_flagged_assumed():
    pot = P.gmm_potential(P.grid_gmm_params())
    assert pot.lipschitz == 32.0 and pot.lipschitz_assumed


# --------------------------------------------------------------------------
# TV


def _dense_tv_oracle(x, y, sigma, lam):
    """Subgradient with padding and difference operators materialised as matrices."""
    d1, d2 = y.shape
    n, npad = d1 * d2, (d1 + 2) * (d2 + 2)
    pad = np.zeros((npad, n))
    for i in range(d1 + 2):
        for j in range(d2 + 2):
            pad[i * (d2 + 2) + j, ((i - 1) % d1) * d2 + (j - 1) % d2] = 1.0
    dh = np.zeros((n, npad))
    dv = np.zeros((n, npad))
    for i in range(d1):
        for j in range(d2):
            r = i * d2 + j
            # cross-correlation with [0, -1, 1] centred on padded pixel (i+1, j+1)
            dh[r, (i + 1) * (d2 + 2) + (j + 1)] = -1.0
            dh[r, (i + 1) * (d2 + 2) + (j + 2)] = 1.0
            dv[r, (i + 1) * (d2 + 2) + (j + 1)] = -1.0
            dv[r, (i + 2) * (d2 + 2) + (j + 1)] = 1.0
    xf, yf = x.ravel(), y.ravel()
    z = pad @ xf
    g = (xf - yf) / sigma**2 + lam * pad.T @ (dh.T @ np.sign(dh @ z) + dv.T @ np.sign(dv @ z))
    return g.reshape(d1, d2)


def test_tv_subgradient_matches_dense_oracle():
    rng = np.random.default_rng(3)
    y = rng.uniform(size=(4, 4))
    x = rng.uniform(size=(4, 4))
    p = P.TvDenoiseParams(y, 0.1, 12.58714)
    np.testing.assert_allclose(P.tv_subgradient(x, p), _dense_tv_oracle(x, y, 0.1, 12.58714), atol=1e-10)
    # rectangular images exercise the axis conventions
    y = rng.uniform(size=(3, 5))
    x = rng.uniform(size=(3, 5))
    p = P.TvDenoiseParams(y, 0.2, 1.5)
    np.testing.assert_allclose(P.tv_subgradient(x, p), _dense_tv_oracle(x, y, 0.2, 1.5), atol=1e-10)


def test_tv_constant_image_has_zero_subgradient():
    y = np.full((5, 5), 0.3)
    p = P.TvDenoiseParams(y, 0.1, 12.58714)
    assert np.all(P.tv_subgradient(y, p) == 0)


@given(arrays(float, (3, 4), elements=st.floats(-2, 2)), arrays(float, (3, 4), elements=st.floats(-2, 2)))
def test_tv_without_regulariser_is_data_gradient_exactly(x, y):
    p = P.TvDenoiseParams(y, 0.3, 0.0)
    np.testing.assert_array_equal(P.tv_subgradient(x, p), (x - y) / 0.3**2)


def test_tv_flat_and_image_layouts_agree():
    rng = np.random.default_rng(4)
    y = rng.uniform(size=(4, 6))
    p = P.TvDenoiseParams(y, 0.1, 2.0)
    x = rng.uniform(size=(7, 4, 6))
    g_img = P.tv_subgradient(x, p)
    g_flat = P.tv_subgradient(x.reshape(7, 24), p)
    np.testing.assert_array_equal(g_img.reshape(7, 24), g_flat)
    np.testing.assert_array_equal(P.tv_value(x, p), P.tv_value(x.reshape(7, 24), p))


def test_tv_subgradient_is_a_subgradient():
    # convexity: U(z) >= U(x) + <g(x), z - x>
    rng = np.random.default_rng(5)
    y = rng.uniform(size=(4, 4))
    p = P.TvDenoiseParams(y, 0.1, 3.0)
    for _ in range(50):
        x, z = rng.uniform(size=(2, 4, 4))
        g = P.tv_subgradient(x, p)
        assert P.tv_value(z, p) >= P.tv_value(x, p) + np.sum(g * (z - x)) - 1e-9


def test_tv_shape_errors():
    p = P.TvDenoiseParams(np.zeros((4, 4)), 0.1, 1.0)
    with pytest.raises(P.InvalidParameterError):
        P.tv_subgradient(np.zeros((3, 4)), p)
    with pytest.raises(P.InvalidParameterError):
        P.TvDenoiseParams(np.zeros((1, 4)), 0.1, 1.0)


def test_tv_potential_metadata():
    p = P.TvDenoiseParams(np.zeros((16, 16)), 0.1, 12.58714)
    pot = P.tv_potential(p)
    assert pot.dim == 256 and not pot.smooth and pot.lipschitz_assumed
    assert pot.lipschitz == 400.0 and pot.strong_convexity == pytest.approx(100.0)


def test_image_io_round_trip(tmp_path):
    img = np.random.default_rng(6).standard_normal((5, 7))
    P.save_image(tmp_path / "img.bin", img)
    assert (tmp_path / "img.bin.shape").read_text().split() == ["5", "7"]
    assert (tmp_path / "img.bin").stat().st_size == 35 * 8
    np.testing.assert_array_equal(P.load_image(tmp_path / "img.bin"), img)
    P.save_image_csv(tmp_path / "img.csv", img)
    np.testing.assert_array_equal(P.load_image_csv(tmp_path / "img.csv"), img)


def test_potential_spec_invariants():
    with pytest.raises(P.InvalidParameterError):
        P.PotentialSpec(2, None, None, lipschitz=1.0, strong_convexity=2.0)
    with pytest.raises(P.InvalidParameterError):
        P.PotentialSpec(0, None, None, lipschitz=1.0)
    spec = P.PotentialSpec(2, None, None, lipschitz=1.0)
    assert spec.kappa == math.inf

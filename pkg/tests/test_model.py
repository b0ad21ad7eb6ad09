import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onebitcal.errors import CalibrationError, ModelDomainError
from onebitcal.model import (ArrayGeometry, ArrayScene, CalibrationOffsets, arcsine_law,
                             clean_covariance, full_covariance, hermitian_toeplitz,
                             model_covariance_from_theta, normalize_covariance,
                             normalize_scene, normalized_model_covariance, pack_theta,
                             steering_matrix, theta_size, true_theta, unpack_theta)

from conftest import reference_offsets, reference_scene


def assert_hermitian(a, tol=1e-12):
    assert np.max(np.abs(a - a.conj().T)) <= tol
    assert np.all(a.diagonal().imag == 0)


def assert_toeplitz(a, tol=1e-12):
    n = a.shape[0]
    for k in range(-n + 1, n):
        d = np.diagonal(a, k)
        assert np.max(np.abs(d - d[0])) <= tol


# -- steering / geometry -----------------------------------------------------

def test_geometry_rejects_small_arrays():
    with pytest.raises(CalibrationError):
        ArrayGeometry(3)
    with pytest.raises(CalibrationError):
        ArrayGeometry(5, 0.0)


def test_steering_broadside_is_all_ones():
    # geometry needs N >= 4; the first three rows are the N=3 example
    a = steering_matrix(ArrayGeometry(4), [np.pi / 2])
    np.testing.assert_allclose(a[:3, 0], [1, 1, 1], atol=1e-15)


def test_steering_endfire_alternates():
    a = steering_matrix(ArrayGeometry(4), [0.0])
    np.testing.assert_allclose(a[:2, 0], [1, -1], atol=1e-15)


def test_steering_matches_scalar_formula():
    alpha = np.deg2rad(45)
    a = steering_matrix(ArrayGeometry(7), [alpha])
    for n in range(7):
        expected = complex(np.cos(np.pi * n * np.cos(alpha)), np.sin(np.pi * n * np.cos(alpha)))
        assert abs(a[n, 0] - expected) < 1e-14
    assert np.all(a[0] == 1)


def test_steering_needs_sources():
    with pytest.raises(CalibrationError, match="no sources"):
        steering_matrix(ArrayGeometry(4), [])


# -- clean covariance --------------------------------------------------------

def test_clean_covariance_no_sources():
    scene = ArrayScene(ArrayGeometry(5), [0.3, 1.0], [0.0, 0.0], 0.7, 1.0)
    np.testing.assert_allclose(clean_covariance(scene), 0.7 * np.eye(5), atol=1e-15)


def test_clean_covariance_broadside_source():
    scene = ArrayScene(ArrayGeometry(4), [np.pi / 2], [2.5], 0.1, 1.0)
    np.testing.assert_allclose(clean_covariance(scene), 2.5 * np.ones((4, 4)) + 0.1 * np.eye(4),
                               atol=1e-14)


def test_reference_scene_normalization():
    scene = reference_scene()
    assert scene.sigma_v2 == pytest.approx(1 / 41, abs=1e-15)
    np.testing.assert_allclose(scene.source_powers, 10 / 41, atol=1e-15)
    c = clean_covariance(scene)
    assert c[0, 0].real == pytest.approx(1.0, abs=1e-14)
    assert_toeplitz(c)
    assert_hermitian(c)


def test_clean_covariance_matches_matrix_product():
    scene = reference_scene()
    a = steering_matrix(scene.geometry, scene.angles_rad)
    direct = a @ np.diag(scene.source_powers) @ a.conj().T + scene.sigma_v2 * np.eye(7)
    np.testing.assert_allclose(clean_covariance(scene), direct, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(direct)) > 0


def test_normalize_scene_examples():
    geom = ArrayGeometry(7)
    done = ArrayScene(geom, [0.1, 0.2, 0.3, 0.4], [40 / 41 / 4] * 4, 1 / 41, 1.0)
    again = normalize_scene(done)
    np.testing.assert_allclose(again.source_powers, done.source_powers, rtol=1e-15)
    assert np.sum(again.source_powers) + again.sigma_v2 == pytest.approx(1.0, abs=1e-15)

    raw = ArrayScene(geom, [0.1, 0.2, 0.3, 0.4], [10.0] * 4, 1.0, 1.0)
    out = normalize_scene(raw)
    np.testing.assert_allclose(out.source_powers, [10 / 41] * 4, rtol=1e-15)
    assert out.sigma_v2 == pytest.approx(1 / 41, rel=1e-15)
    np.testing.assert_allclose(out.source_powers / out.sigma_v2, 10.0, rtol=1e-14)

    with pytest.raises(CalibrationError):
        normalize_scene(ArrayScene(geom, [0.1], [0.0], 0.0, 1.0))


# -- full / normalized covariance --------------------------------------------

def test_full_covariance_identity_offsets():
    c = clean_covariance(reference_scene())
    np.testing.assert_allclose(full_covariance(c, CalibrationOffsets.identity(7), 0.0), c,
                               atol=1e-15)


def test_full_covariance_elementwise_example():
    r = full_covariance(np.eye(2), CalibrationOffsets([2.0, 1.0], [0.0, 0.0]), 1.0)
    np.testing.assert_allclose(r, np.diag([5.0, 2.0]))


def test_full_covariance_matches_matrix_product():
    c = clean_covariance(reference_scene())
    off = reference_offsets()
    psi = np.diag(off.gains)
    phi = np.diag(np.exp(1j * off.phases_rad))
    direct = psi @ phi @ c @ phi.conj() @ psi + np.eye(7)
    r = full_covariance(c, off, 1.0)
    np.testing.assert_allclose(r, direct, atol=1e-12)
    assert_hermitian(r)
    assert np.min(np.linalg.eigvalsh(r)) > 0


def test_full_covariance_rejects_bad_gain():
    off = CalibrationOffsets([1.0, 1.0, 1.0, 1.0])
    object.__setattr__(off, "gains", np.array([1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(CalibrationError):
        full_covariance(np.eye(4), off, 1.0)


def test_normalize_covariance_examples():
    np.testing.assert_allclose(normalize_covariance(np.diag([3.0, 2.0, 7.0])), np.eye(3))
    np.testing.assert_allclose(normalize_covariance(np.array([[4.0, 2.0], [2.0, 1.0]])),
                               np.ones((2, 2)), atol=1e-15)
    rbar = normalize_covariance(full_covariance(clean_covariance(reference_scene()),
                                                reference_offsets(), 1.0))
    assert np.max(np.abs(rbar.diagonal() - 1)) <= 1e-12
    assert np.max(np.abs(rbar)) <= 1 + 1e-12
    with pytest.raises(CalibrationError, match="degenerate sensor power"):
        normalize_covariance(np.diag([1.0, 0.0]))


# -- arcsine law ---------------------------------------------------------------

def test_arcsine_law_examples():
    np.testing.assert_allclose(arcsine_law(np.eye(3)), np.eye(3))
    half = np.array([[1, 0.5], [0.5, 1]])
    assert arcsine_law(half)[1, 0] == pytest.approx(1 / 3, abs=1e-15)
    ry = arcsine_law(np.array([[1, -1j], [1j, 1]]))
    assert ry[1, 0] == pytest.approx(1j, abs=1e-15)
    assert ry[0, 1] == pytest.approx(-1j, abs=1e-15)


def test_arcsine_law_fixed_points():
    vals = [0.0, 1.0, -1.0, 0.5, -0.5]
    expected = [0.0, 1.0, -1.0, 1 / 3, -1 / 3]
    for v, e in zip(vals, expected):
        for z, ez in ((complex(v, 0), complex(e, 0)), (complex(0, v), complex(0, e))):
            m = np.array([[1, np.conj(z)], [z, 1]])
            assert abs(arcsine_law(m)[1, 0] - ez) < 1e-15


def test_arcsine_law_domain():
    # within tolerance: clamped
    m = np.array([[1, 1 + 5e-13], [1 + 5e-13, 1]])
    assert arcsine_law(m)[1, 0] == 1.0
    with pytest.raises(ModelDomainError, match="invalid correlation"):
        arcsine_law(np.array([[1, 1.01], [1.01, 1]]))


# -- theta -------------------------------------------------------------------

def test_theta_length_reference():
    assert theta_size(7) == 23
    assert true_theta(reference_scene(), reference_offsets()).size == 23


def test_pack_unpack_reference_theta():
    off = CalibrationOffsets.identity(6)
    c = np.zeros(6, complex)
    c[0] = 1
    theta = pack_theta(off, c)
    np.testing.assert_array_equal(theta, np.concatenate([np.ones(5), np.zeros(4 + 10)]))
    gains, phases, c2 = unpack_theta(theta)
    np.testing.assert_array_equal(gains, off.gains)
    np.testing.assert_array_equal(phases, off.phases_rad)
    np.testing.assert_array_equal(c2, c)


def test_pack_rejects_broken_references():
    c = np.array([1, 0.2, 0.1, 0.0], complex)
    with pytest.raises(CalibrationError):
        pack_theta(CalibrationOffsets([1.1, 1, 1, 1]), c)
    with pytest.raises(CalibrationError):
        pack_theta(CalibrationOffsets([1, 1, 1, 1], [0, 0.1, 0, 0]), c)
    with pytest.raises(CalibrationError):
        pack_theta(CalibrationOffsets.identity(4), 2 * c)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(4, 10), seed=st.integers(0, 2 ** 32 - 1))
def test_pack_unpack_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    theta = np.concatenate([rng.uniform(0.1, 3, n - 1), rng.uniform(-np.pi, np.pi, n - 2),
                            rng.standard_normal(2 * n - 2)])
    gains, phases, c = unpack_theta(theta)
    again = pack_theta(CalibrationOffsets(gains, phases), c)
    np.testing.assert_array_equal(again, theta)


# -- model covariance from theta ----------------------------------------------

def test_model_covariance_reference_theta_is_identity():
    off = CalibrationOffsets.identity(5)
    c = np.zeros(5, complex)
    c[0] = 1
    np.testing.assert_allclose(model_covariance_from_theta(pack_theta(off, c), 1.0), np.eye(5),
                               atol=1e-15)


def test_model_covariance_matches_pipeline():
    scene, off = reference_scene(), reference_offsets()
    theta = true_theta(scene, off)
    pipeline = arcsine_law(normalize_covariance(full_covariance(clean_covariance(scene), off, 1.0)))
    ry = model_covariance_from_theta(theta, 1.0)
    np.testing.assert_allclose(ry, pipeline, atol=1e-12, rtol=0)
    assert np.all(ry.diagonal() == 1)
    assert_hermitian(ry)


def test_model_covariance_scale_invariance():
    scene, off = reference_scene(), reference_offsets()
    c = clean_covariance(scene)
    gamma = 2.0
    scaled = CalibrationOffsets(np.sqrt(gamma) * off.gains, off.phases_rad)
    # sigma_w2 scales with the gains so that only the c/psi trade-off is tested
    a = normalize_covariance(full_covariance(c, off, 1.0))
    b = normalize_covariance(full_covariance(c / gamma, scaled, 1.0))
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)
    ry = arcsine_law(b)
    np.testing.assert_allclose(ry, model_covariance_from_theta(true_theta(scene, off), 1.0),
                               atol=1e-12, rtol=0)


def test_model_covariance_out_of_domain():
    theta = true_theta(reference_scene(), reference_offsets())
    theta[-12] = 5.0  # Re(c_2) far above 1
    with pytest.raises(ModelDomainError, match="model out of arcsine domain"):
        model_covariance_from_theta(theta, 1.0)
    theta = true_theta(reference_scene(), reference_offsets())
    theta[0] = -0.5
    with pytest.raises(ModelDomainError):
        model_covariance_from_theta(theta, 1.0)


def test_hermitian_toeplitz_convention():
    c = np.array([1, 0.3 + 0.2j, -0.1 + 0.4j, 0.05j])
    t = hermitian_toeplitz(c)
    for m in range(4):
        for n in range(4):
            expected = c[m - n] if m >= n else np.conj(c[n - m])
            assert t[m, n] == expected
    np.testing.assert_array_equal(t[:, 0], c)


# -- invariants ----------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(4, 9), m=st.integers(1, 4),
       sigma_w2=st.floats(0.01, 10))
def test_structural_invariants_random_scenes(seed, n, m, sigma_w2):
    rng = np.random.default_rng(seed)
    scene = normalize_scene(ArrayScene(ArrayGeometry(n, rng.uniform(0.2, 0.5)),
                                       rng.uniform(0, np.pi, m), rng.uniform(0.1, 20, m),
                                       rng.uniform(0.05, 2), sigma_w2))
    off = CalibrationOffsets(np.concatenate([[1], rng.uniform(0.3, 2, n - 1)]),
                             np.concatenate([[0, 0], rng.uniform(-np.pi, np.pi, n - 2)]))
    c = clean_covariance(scene)
    assert_hermitian(c)
    assert_toeplitz(c)
    r = full_covariance(c, off, sigma_w2)
    assert_hermitian(r)
    rbar = normalize_covariance(r)
    assert_hermitian(rbar)
    assert np.max(np.abs(rbar.diagonal() - 1)) <= 1e-12
    ry = arcsine_law(rbar)
    assert_hermitian(ry)
    assert np.max(np.abs(ry.diagonal() - 1)) <= 1e-12
    ry_theta = model_covariance_from_theta(true_theta(scene, off), sigma_w2)
    np.testing.assert_allclose(ry_theta, ry, atol=1e-12, rtol=0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), gamma=st.floats(0.01, 100))
def test_joint_rescaling_invariance(seed, gamma):
    rng = np.random.default_rng(seed)
    scene = reference_scene()
    c = clean_covariance(scene)
    gains = rng.uniform(0.3, 2, 7)
    off = CalibrationOffsets(gains, rng.uniform(-1, 1, 7))
    scaled = CalibrationOffsets(np.sqrt(gamma) * gains, off.phases_rad)
    a = normalize_covariance(full_covariance(c, off, 0.8))
    b = normalize_covariance(full_covariance(c / gamma, scaled, 0.8))
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def test_high_snr_gain_blindness():
    theta_a = true_theta(reference_scene(), reference_offsets())
    theta_b = theta_a.copy()
    theta_b[:6] = [1.9, 0.2, 3.0, 0.5, 1.1, 2.2]
    a = normalized_model_covariance(theta_a, 1e-12)
    b = normalized_model_covariance(theta_b, 1e-12)
    assert np.max(np.abs(a - b)) <= 1e-5
    # and the gains do matter at finite SNR
    assert np.max(np.abs(normalized_model_covariance(theta_a, 1.0)
                         - normalized_model_covariance(theta_b, 1.0))) > 1e-2

"""Forward second-order statistics of a one-bit ULA with gain/phase offsets.

Covariance matrices are plain ``(N, N)`` complex numpy arrays. The free
parameter vector ``theta`` is a real array of length ``4N - 5`` laid out as

    [gains[1:], phases[2:], Re(c[1:]), Im(c[1:])]

where ``c`` is the first column of the (Hermitian Toeplitz) clean covariance
with ``c[0] = 1``, and the references ``gains[0] = 1``,
``phases[0] = phases[1] = 0`` are implied.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CalibrationError, ModelDomainError

DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class ArrayGeometry:
    n_sensors: int
    spacing_wavelengths: float = 0.5

    def __post_init__(self):
        if int(self.n_sensors) != self.n_sensors or self.n_sensors < 4:
            raise CalibrationError(f"need at least 4 sensors, got {self.n_sensors}")
        if not self.spacing_wavelengths > 0:
            raise CalibrationError("spacing must be positive")


@dataclass(frozen=True)
class ArrayScene:
    """Array geometry plus the (diagonal) source and interference statistics."""

    geometry: ArrayGeometry
    angles_rad: np.ndarray
    source_powers: np.ndarray
    sigma_v2: float
    sigma_w2: float

    def __post_init__(self):
        angles = np.atleast_1d(np.asarray(self.angles_rad, dtype=float))
        powers = np.atleast_1d(np.asarray(self.source_powers, dtype=float))
        if angles.shape != powers.shape:
            raise CalibrationError("one power per source angle required")
        if np.any(powers < 0) or self.sigma_v2 < 0 or self.sigma_w2 < 0:
            raise CalibrationError("powers must be non-negative")
        object.__setattr__(self, "angles_rad", angles)
        object.__setattr__(self, "source_powers", powers)

    @property
    def n_sensors(self):
        return self.geometry.n_sensors

    @property
    def n_sources(self):
        return self.angles_rad.size


@dataclass(frozen=True)
class CalibrationOffsets:
    gains: np.ndarray
    phases_rad: np.ndarray = field(default=None)

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float)
        phases = (np.zeros_like(gains) if self.phases_rad is None
                  else np.asarray(self.phases_rad, dtype=float))
        if gains.ndim != 1 or gains.shape != phases.shape:
            raise CalibrationError("gains and phases must be 1-D of equal length")
        if np.any(gains <= 0):
            raise CalibrationError("gains must be strictly positive")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "phases_rad", phases)

    @classmethod
    def identity(cls, n_sensors):
        return cls(np.ones(n_sensors), np.zeros(n_sensors))

    @property
    def is_referenced(self):
        """True when ``gains[0] == 1`` and ``phases[0] == phases[1] == 0``."""
        return (self.gains[0] == 1.0 and self.phases_rad[0] == 0.0
                and self.phases_rad[1] == 0.0)


def hermitize_lower(a):
    """Return the Hermitian matrix defined by the lower triangle of ``a``.

    The diagonal keeps only its real part.
    """
    a = np.asarray(a, dtype=complex)
    low = np.tril(a, -1)
    return low + low.conj().T + np.diag(a.diagonal().real)


def hermitian_toeplitz(c):
    """Hermitian Toeplitz matrix with first column ``c``.

    ``C[m, n] = c[m - n]`` for ``m >= n`` and ``conj(c[n - m])`` above.
    """
    c = np.asarray(c, dtype=complex)
    n = c.size
    idx = np.arange(n)
    lag = idx[:, None] - idx[None, :]
    out = np.where(lag >= 0, c[np.abs(lag)], c[np.abs(lag)].conj())
    out[idx, idx] = c[0].real
    return out


def steering_matrix(geom, angles_rad):
    """Nominal ULA manifold, one column ``a(alpha_m)`` per source.

    The phase progression is ``2*pi*(d/lambda)*n*cos(alpha)``.
    """
    angles = np.atleast_1d(np.asarray(angles_rad, dtype=float))
    if angles.size == 0:
        raise CalibrationError("no sources")
    if not np.all(np.isfinite(angles)):
        raise CalibrationError("angles must be finite")
    n = np.arange(geom.n_sensors)[:, None]
    return np.exp(2j * np.pi * geom.spacing_wavelengths * n * np.cos(angles)[None, :])


def clean_covariance(scene):
    a = steering_matrix(scene.geometry, scene.angles_rad)
    c = (a * scene.source_powers) @ a.conj().T
    c += scene.sigma_v2 * np.eye(scene.n_sensors)
    # exact Toeplitz/Hermitian: a Vandermonde manifold gives constant diagonals
    return hermitian_toeplitz(c[:, 0])


def normalize_scene(scene):
    """Rescale source and interference powers so that ``C[0, 0] == 1``."""
    total = float(np.sum(scene.source_powers) + scene.sigma_v2)
    if total <= 0:
        raise CalibrationError("all powers are zero; cannot normalize")
    if total == 1.0:
        return scene
    return replace(scene, source_powers=scene.source_powers / total,
                   sigma_v2=scene.sigma_v2 / total)


def full_covariance(c, offsets, sigma_w2):
    c = np.asarray(c, dtype=complex)
    if c.shape != (offsets.gains.size,) * 2:
        raise CalibrationError("covariance and offsets dimensions differ")
    if np.any(offsets.gains <= 0):
        raise CalibrationError("gains must be strictly positive")
    g = offsets.gains * np.exp(1j * offsets.phases_rad)
    r = g[:, None] * c * g.conj()[None, :]
    r += sigma_w2 * np.eye(c.shape[0])
    return hermitize_lower(r)


def normalize_covariance(r):
    r = np.asarray(r, dtype=complex)
    d = r.diagonal().real
    if np.any(d <= 0):
        raise CalibrationError("degenerate sensor power")
    s = 1.0 / np.sqrt(d)
    rbar = hermitize_lower(s[:, None] * r * s[None, :])
    np.fill_diagonal(rbar, 1.0)
    return rbar


def _check_arcsine_domain(rbar, message):
    worst = max(np.max(np.abs(rbar.real)), np.max(np.abs(rbar.imag)))
    if not worst <= 1.0 + DOMAIN_TOL:
        raise ModelDomainError(f"{message} (max component {worst:.17g})")


def arcsine_law(rbar):
    """Covariance of the one-bit quantized signal, ``(2/pi) * arcsin(Rbar)``.

    The arcsine acts separately on real and imaginary parts. Components
    within ``1e-12`` outside ``[-1, 1]`` are clamped.
    """
    rbar = np.asarray(rbar, dtype=complex)
    _check_arcsine_domain(rbar, "invalid correlation")
    re = np.clip(rbar.real, -1.0, 1.0)
    im = np.clip(rbar.imag, -1.0, 1.0)
    ry = (2 / np.pi) * (np.arcsin(re) + 1j * np.arcsin(im))
    return hermitize_lower(ry)


def theta_size(n_sensors):
    return 4 * n_sensors - 5


def sensors_from_theta(theta):
    k = np.asarray(theta).size
    if (k + 5) % 4 or k < theta_size(4):
        raise CalibrationError(f"theta length {k} is not 4N-5 for any N >= 4")
    return (k + 5) // 4


def theta_slices(n_sensors):
    """Slices of ``theta`` holding gains, phases, Re(c) and Im(c) tails."""
    n = n_sensors
    return (slice(0, n - 1), slice(n - 1, 2 * n - 3),
            slice(2 * n - 3, 3 * n - 4), slice(3 * n - 4, 4 * n - 5))


def pack_theta(offsets, c):
    c = np.asarray(c, dtype=complex)
    if not offsets.is_referenced:
        raise CalibrationError("offsets violate the references gains[0]=1, phases[0]=phases[1]=0")
    if c[0] != 1:
        raise CalibrationError("c[0] must equal 1")
    if c.size != offsets.gains.size:
        raise CalibrationError("c and offsets dimensions differ")
    return np.concatenate([offsets.gains[1:], offsets.phases_rad[2:],
                           c.real[1:], c.imag[1:]])


def unpack_theta(theta):
    """Split ``theta`` into full-length ``(gains, phases, c)`` with references."""
    theta = np.asarray(theta, dtype=float)
    n = sensors_from_theta(theta)
    sg, sp, sr, si = theta_slices(n)
    gains = np.concatenate([[1.0], theta[sg]])
    phases = np.concatenate([[0.0, 0.0], theta[sp]])
    c = np.concatenate([[1.0 + 0j], theta[sr] + 1j * theta[si]])
    return gains, phases, c


def unpack_offsets(theta):
    gains, phases, c = unpack_theta(theta)
    if np.any(gains <= 0):
        raise ModelDomainError("non-positive gain in theta")
    return CalibrationOffsets(gains, phases), c


def true_theta(scene, offsets):
    """Parameter vector of a scene after the ``c[0] = 1`` normalization."""
    c = clean_covariance(normalize_scene(scene))[:, 0]
    c[0] = 1.0
    return pack_theta(offsets, c)


def normalized_model_covariance(theta, sigma_w2):
    """``Rbar(theta)``: the normalized covariance implied by ``theta``."""
    gains, phases, c = unpack_theta(theta)
    if np.any(gains <= 0):
        raise ModelDomainError("non-positive gain in theta")
    g = gains / np.sqrt(gains ** 2 + sigma_w2)
    rbar = (g[:, None] * g[None, :]) * hermitian_toeplitz(c) \
        * np.exp(1j * (phases[:, None] - phases[None, :]))
    rbar = hermitize_lower(rbar)
    np.fill_diagonal(rbar, 1.0)
    return rbar


def model_covariance_from_theta(theta, sigma_w2):
    rbar = normalized_model_covariance(theta, sigma_w2)
    _check_arcsine_domain(rbar, "model out of arcsine domain")
    return arcsine_law(rbar)

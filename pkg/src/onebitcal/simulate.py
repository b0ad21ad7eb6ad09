"""Synthetic snapshots, the complex one-bit quantizer and sample covariances."""

from dataclasses import dataclass

import numpy as np

from .model import full_covariance, clean_covariance, hermitize_lower, steering_matrix

_INV_SQRT2 = np.sqrt(0.5)


@dataclass(frozen=True)
class SnapshotBatch:
    """``values`` is ``(T, N)``: one row per time index."""

    values: np.ndarray
    quantized: bool = False

    @property
    def n_snapshots(self):
        return self.values.shape[0]

    @property
    def n_sensors(self):
        return self.values.shape[1]


def make_rng(seed):
    return np.random.default_rng(seed)


def _circular_normal(rng, shape, power=1.0):
    scale = np.sqrt(np.asarray(power, dtype=float) / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_snapshots(scene, offsets, n_snapshots, rng):
    """Draw ``r(t) = Psi Phi (A s(t) + v(t)) + w(t)`` for ``t = 1..T``.

    Sources, interference and receiver noise are independent circular
    complex normals, drawn in that order from ``rng``.
    """
    if n_snapshots < 1:
        raise ValueError("need at least one snapshot")
    t, n, m = n_snapshots, scene.n_sensors, scene.n_sources
    a = steering_matrix(scene.geometry, scene.angles_rad)
    s = _circular_normal(rng, (t, m), scene.source_powers[None, :])
    v = _circular_normal(rng, (t, n), scene.sigma_v2)
    w = _circular_normal(rng, (t, n), scene.sigma_w2)
    g = offsets.gains * np.exp(1j * offsets.phases_rad)
    r = (s @ a.T + v) * g[None, :] + w
    return SnapshotBatch(r)


def draw_gaussian(cov, n_snapshots, rng):
    """Rows i.i.d. circular complex normal with covariance ``cov`` (Cholesky route)."""
    l = np.linalg.cholesky(cov)
    n = cov.shape[0]
    z = _circular_normal(rng, (n_snapshots, n))
    return SnapshotBatch(z @ l.T)


def quantize(z):
    """Complex one-bit quantizer ``(sgn(Re z) + j sgn(Im z)) / sqrt(2)``, sgn(0) = +1."""
    z = np.asarray(z)
    re = np.where(np.real(z) >= 0, 1.0, -1.0)
    im = np.where(np.imag(z) >= 0, 1.0, -1.0)
    out = _INV_SQRT2 * (re + 1j * im)
    return out[()] if out.ndim == 0 else out


def quantize_batch(batch):
    return SnapshotBatch(quantize(batch.values), quantized=True)


def _signs(values):
    # integer-valued +-1 +- 1j; products and sums of these are exact in float64
    return np.where(values.real >= 0, 1.0, -1.0) + 1j * np.where(values.imag >= 0, 1.0, -1.0)


def sample_covariance(batch):
    """``(1/T) sum_t y(t) y(t)^H``.

    Quantized batches are accumulated on their exact sign pattern, so the
    diagonal is exactly one.
    """
    t = batch.n_snapshots
    if t < 1:
        raise ValueError("need at least one snapshot")
    if batch.quantized:
        s = _signs(batch.values)
        acc = s.T @ s.conj()
        return hermitize_lower(acc / (2 * t))
    y = batch.values
    return hermitize_lower(y.T @ y.conj() / t)


def quantized_sample_covariance(scene, offsets, n_snapshots, rng, chunk=8192):
    """Draw, quantize and accumulate ``R^y_hat`` without keeping the snapshots.

    Snapshots are generated ``chunk`` rows at a time; the sign-product sums
    are exact, so the result does not depend on floating-point order.
    """
    n = scene.n_sensors
    acc = np.zeros((n, n), dtype=complex)
    done = 0
    while done < n_snapshots:
        k = min(chunk, n_snapshots - done)
        s = _signs(draw_snapshots(scene, offsets, k, rng).values)
        acc += s.T @ s.conj()
        done += k
    return hermitize_lower(acc / (2 * n_snapshots))


def corrected_correlation(ry_hat):
    """Invert the arcsine law: ``sin(pi/2 Re) + j sin(pi/2 Im)`` elementwise."""
    ry_hat = np.asarray(ry_hat, dtype=complex)
    x = np.pi / 2 * ry_hat
    return hermitize_lower(np.sin(x.real) + 1j * np.sin(x.imag))


def analog_covariance(scene, offsets):
    """``R`` for a scene as given (no power normalization)."""
    return full_covariance(clean_covariance(scene), offsets, scene.sigma_w2)

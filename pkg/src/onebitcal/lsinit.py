"""Closed-form least-squares blind calibration from the Toeplitz structure.

Gains come from log-magnitudes, phases from arguments of the sine-corrected
one-bit correlation matrix; both are linear LS problems over the per-sensor
unknowns plus one nuisance unknown per lag. The clean covariance then
follows by undoing the estimated offsets.
"""

from dataclasses import dataclass
import logging

import numpy as np

from .errors import InsufficientSupportError
from .model import CalibrationOffsets, hermitian_toeplitz, pack_theta
from .simulate import corrected_correlation

log = logging.getLogger(__name__)

MAGNITUDE_FLOOR = 1e-10
BETA_CLAMP = -1e-6


@dataclass(frozen=True)
class LsEstimate:
    """LS offsets, clean-covariance estimates and the packed initial point.

    ``c_matrix`` is the un-projected clean covariance estimate; ``c_hat`` its
    per-subdiagonal mean.
    """

    gains: np.ndarray
    phases_rad: np.ndarray
    c_hat: np.ndarray
    theta0: np.ndarray
    c_matrix: np.ndarray
    gain_clamped: bool = False
    weak_support: bool = False

    @property
    def flagged(self):
        return self.gain_clamped or self.weak_support

    @property
    def c_toeplitz(self):
        """Hermitian Toeplitz matrix built from ``c_hat``."""
        return hermitian_toeplitz(self.c_hat)


def _lower_pairs(n):
    """Row, column and lag of every strictly-lower-triangle entry."""
    rows, cols = np.tril_indices(n, -1)
    return rows, cols, rows - cols


def _solve(a, b, what):
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < a.shape[1]:
        raise InsufficientSupportError(f"insufficient correlation support for {what}")
    return sol


def gain_ls(rbar_hat, sigma_w2, return_flags=False):
    """Gain estimates from ``log|Rbar_mn| = beta_m + beta_n + g_{m-n}``.

    ``beta_n = log(psi_n / sqrt(psi_n^2 + sigma_w2))`` with ``beta_0`` fixed by
    ``psi_0 = 1``. Entries below the magnitude floor are floored rather than
    dropped; ``beta`` estimates at or above zero are clamped to ``-1e-6``.
    """
    rbar_hat = np.asarray(rbar_hat)
    n = rbar_hat.shape[0]
    rows, cols, lag = _lower_pairs(n)
    mag = np.abs(rbar_hat[rows, cols])
    weak = bool(np.any(mag < MAGNITUDE_FLOOR))
    y = np.log(np.maximum(mag, MAGNITUDE_FLOOR))

    beta0 = -0.5 * np.log1p(sigma_w2)
    n_eq = rows.size
    a = np.zeros((n_eq, 2 * (n - 1)))
    eq = np.arange(n_eq)
    for idx in (rows, cols):
        free = idx > 0
        a[eq[free], idx[free] - 1] += 1.0
        y = y - np.where(free, 0.0, beta0)
    a[eq, n - 1 + lag - 1] = 1.0
    sol = _solve(a, y, "gains")

    beta = np.concatenate([[beta0], sol[: n - 1]])
    clamped = bool(np.any(beta[1:] > BETA_CLAMP))
    if clamped:
        log.debug("clamping beta estimates %s", beta[beta > BETA_CLAMP])
        beta[1:] = np.minimum(beta[1:], BETA_CLAMP)
    e2 = np.exp(2 * beta)
    gains = np.sqrt(e2 * sigma_w2 / -np.expm1(2 * beta))
    gains[0] = 1.0
    if return_flags:
        return gains, clamped, weak
    return gains


def phase_ls(rbar_hat):
    """Phase estimates from ``arg Rbar_mn = phi_m - phi_n + eta_{m-n}``, ``m > n``.

    ``phi_0 = phi_1 = 0`` are the references. Within each lag the arguments
    are re-centred on the first equation of that lag before solving, so a
    common lag phase near +-pi does not split across the branch cut.
    """
    rbar_hat = np.asarray(rbar_hat)
    n = rbar_hat.shape[0]
    rows, cols, lag = _lower_pairs(n)
    ang = np.angle(rbar_hat[rows, cols])
    for k in range(1, n):
        sel = lag == k
        ref = ang[sel][0]
        ang[sel] = ref + _wrap(ang[sel] - ref)

    n_eq = rows.size
    a = np.zeros((n_eq, (n - 2) + (n - 1)))
    eq = np.arange(n_eq)
    free = rows > 1
    a[eq[free], rows[free] - 2] += 1.0
    free = cols > 1
    a[eq[free], cols[free] - 2] -= 1.0
    a[eq, n - 2 + lag - 1] = 1.0
    sol = _solve(a, ang, "phases")
    return np.concatenate([[0.0, 0.0], _wrap(sol[: n - 2])])


def _wrap(x):
    """Map angles to ``[-pi, pi)``."""
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def clean_covariance_ls(rbar_hat, gains, phases_rad, sigma_w2, return_matrix=False):
    """First column ``c_hat`` of the clean covariance implied by the LS offsets.

    ``C_hat = Phi^* Psi^-1 (D^1/2 Rbar D^1/2 - sigma_w2 I) Psi^-1 Phi`` with
    ``D = psi^2 + sigma_w2``; ``c_hat[k]`` is the mean of the k-th lower
    subdiagonal and ``c_hat[0] = 1``.
    """
    rbar_hat = np.asarray(rbar_hat, dtype=complex)
    gains = np.asarray(gains, dtype=float)
    if np.any(gains <= 0):
        raise ValueError("gains must be strictly positive")
    n = gains.size
    d_half = np.sqrt(gains ** 2 + sigma_w2)
    r_ls = d_half[:, None] * rbar_hat * d_half[None, :] - sigma_w2 * np.eye(n)
    u = np.exp(1j * np.asarray(phases_rad)) / gains
    c_mat = u.conj()[:, None] * r_ls * u[None, :]
    c_hat = np.array([np.mean(np.diagonal(c_mat, -k)) for k in range(n)])
    c_hat[0] = 1.0
    if return_matrix:
        return c_hat, c_mat
    return c_hat


def build_theta_ls(ry_hat, sigma_w2):
    """Full LS initialization from the one-bit sample covariance."""
    rbar_hat = corrected_correlation(ry_hat)
    gains, clamped, weak = gain_ls(rbar_hat, sigma_w2, return_flags=True)
    phases = phase_ls(rbar_hat)
    c_hat, c_mat = clean_covariance_ls(rbar_hat, gains, phases, sigma_w2, return_matrix=True)
    theta0 = pack_theta(CalibrationOffsets(gains, phases), c_hat)
    return LsEstimate(gains, phases, c_hat, theta0, c_mat, clamped, weak)

"""KLD covariance fitting by safeguarded Fisher scoring.

The one-bit sample covariance is fitted by the arcsine-law model ``R^y(theta)``
under a surrogate circular complex normal likelihood
``L(theta) = -T * KLD(R^y_hat, R^y(theta))``.
"""

from dataclasses import dataclass, field
import enum
import logging

import numpy as np
from scipy import linalg

from .errors import (CalibrationError, DerivativeSingularityError,
                     NotPositiveDefiniteError)
from .model import (hermitian_toeplitz, normalized_model_covariance, arcsine_law,
                    sensors_from_theta, theta_slices, unpack_theta,
                    CalibrationOffsets)

log = logging.getLogger(__name__)

SINGULARITY_MARGIN = 1e-9


@dataclass(frozen=True)
class FsaOptions:
    epsilon: float = 1e-7
    max_iters: int = 100
    max_backtracks: int = 20
    fim_ridge: float = 1e-10

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 0 or self.max_backtracks < 1 or self.fim_ridge < 0:
            raise ValueError("invalid solver options")


class Termination(str, enum.Enum):
    STEP_NORM = "StepNorm"
    MAX_ITERS = "MaxIters"
    BACKTRACK_FAIL = "BacktrackFail"


@dataclass
class FsaReport:
    theta_hat: np.ndarray
    converged: bool
    n_iters: int
    termination: Termination
    objective_trace: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)


def _cholesky(a, what):
    try:
        return linalg.cho_factor(a, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(f"{what} is not positive definite") from exc


def kld(sigma_hat, sigma):
    """Complex-normal KLD ``log(det S / det S_hat) + tr(S_hat S^-1) - N``."""
    sigma_hat = np.asarray(sigma_hat, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    cf = _cholesky(sigma, "model covariance")
    cf_hat = _cholesky(sigma_hat, "sample covariance")
    logdet = 2 * np.sum(np.log(cf[0].diagonal().real))
    logdet_hat = 2 * np.sum(np.log(cf_hat[0].diagonal().real))
    tr = np.trace(linalg.cho_solve(cf, sigma_hat)).real
    return float(logdet - logdet_hat + tr - sigma.shape[0])


def rbar_derivatives(theta, sigma_w2):
    """Partials of ``Rbar(theta)``, shape ``(K, N, N)``, zero on the diagonal."""
    theta = np.asarray(theta, dtype=float)
    n = sensors_from_theta(theta)
    gains, phases, c = unpack_theta(theta)
    sg, sp, sr, si = theta_slices(n)
    rbar = normalized_model_covariance(theta, sigma_w2)
    np.fill_diagonal(rbar, 0.0)

    f = gains / np.sqrt(gains ** 2 + sigma_w2)
    unit = (f[:, None] * f[None, :]) * np.exp(1j * (phases[:, None] - phases[None, :]))
    lag = np.subtract.outer(np.arange(n), np.arange(n))
    eye = np.eye(n)

    d = np.zeros((theta.size, n, n), dtype=complex)
    # gains: d f_k / d psi_k = f_k * sigma_w2 / (psi_k * D_k)
    h = sigma_w2 / (gains * (gains ** 2 + sigma_w2))
    for k in range(1, n):
        sel = eye[k][:, None] + eye[k][None, :]
        d[sg.start + k - 1] = rbar * h[k] * sel
    for k in range(2, n):
        sel = eye[k][:, None] - eye[k][None, :]
        d[sp.start + k - 2] = 1j * rbar * sel
    for k in range(1, n):
        lower = lag == k
        upper = lag == -k
        d[sr.start + k - 1] = unit * (lower | upper)
        d[si.start + k - 1] = 1j * unit * (lower.astype(float) - upper)
    return d


def covariance_derivatives(theta, sigma_w2):
    """Partials of ``R^y(theta)`` through the componentwise arcsine.

    Returns a ``(K, N, N)`` array of Hermitian matrices with zero diagonal.
    """
    rbar = normalized_model_covariance(theta, sigma_w2)
    off = ~np.eye(rbar.shape[0], dtype=bool)
    worst = max(np.max(np.abs(rbar.real[off])), np.max(np.abs(rbar.imag[off])))
    if worst >= 1.0 - SINGULARITY_MARGIN:
        raise DerivativeSingularityError(f"derivative singularity (|component| = {worst:.17g})")
    # d/dx (2/pi) asin(x) on the off-diagonal, zero on the fixed unit diagonal
    wr = np.zeros(rbar.shape)
    wi = np.zeros(rbar.shape)
    wr[off] = (2 / np.pi) / np.sqrt(1 - rbar.real[off] ** 2)
    wi[off] = (2 / np.pi) / np.sqrt(1 - rbar.imag[off] ** 2)
    drbar = rbar_derivatives(theta, sigma_w2)
    return wr * drbar.real + 1j * wi * drbar.imag


def _model(theta, sigma_w2):
    ry = arcsine_law(normalized_model_covariance(theta, sigma_w2))
    return ry, _cholesky(ry, "model covariance")


def _check_real(values, limit, what):
    residue = np.max(np.abs(values.imag)) if values.size else 0.0
    if residue > limit:
        raise CalibrationError(f"{what} has imaginary residue {residue:.3g}")
    return values.real


def score(theta, ry_hat, sigma_w2, n_snapshots=1):
    """Gradient of ``-T * KLD(R^y_hat, R^y(theta))`` w.r.t. ``theta``."""
    ry, cf = _model(theta, sigma_w2)
    ry_inv = linalg.cho_solve(cf, np.eye(ry.shape[0], dtype=complex))
    w = ry_inv - ry_inv @ np.asarray(ry_hat) @ ry_inv
    dry = covariance_derivatives(theta, sigma_w2)
    g = -n_snapshots * np.einsum("ab,kba->k", w, dry)
    return _check_real(g, 1e-9 * n_snapshots, "score")


def fim(theta, n_snapshots, sigma_w2):
    """``J_ij = T tr(R^-1 dR_i R^-1 dR_j)`` with ``R = R^y(theta)``."""
    ry, cf = _model(theta, sigma_w2)
    dry = covariance_derivatives(theta, sigma_w2)
    a = np.stack([linalg.cho_solve(cf, dk) for dk in dry])
    j = n_snapshots * np.einsum("iab,jba->ij", a, a)
    return _check_real(j, 1e-9 * n_snapshots, "FIM")


def _objective(theta, ry_hat, sigma_w2):
    """KLD at ``theta``, or ``None`` when ``theta`` is infeasible."""
    gains = unpack_theta(theta)[0]
    if np.any(gains <= 0) or not np.all(np.isfinite(theta)):
        return None
    try:
        return kld(ry_hat, arcsine_law(normalized_model_covariance(theta, sigma_w2)))
    except CalibrationError:
        return None


def fsa_solve(ry_hat, theta0, opts=None, sigma_w2=1.0, n_snapshots=1):
    """Fisher scoring from ``theta0`` with a step-halving safeguard.

    Each step solves ``(J + ridge) delta = grad L``. A trial point is
    rejected if it leaves the feasible set (positive gains, arcsine domain,
    positive definite model) or increases the KLD; the step is then halved,
    at most ``opts.max_backtracks`` times. Iteration stops once the accepted
    step has Euclidean norm below ``opts.epsilon``.
    """
    opts = opts or FsaOptions()
    theta = np.array(theta0, dtype=float)
    obj = _objective(theta, ry_hat, sigma_w2)
    report = FsaReport(theta.copy(), False, 0, Termination.MAX_ITERS)
    if obj is None:
        report.termination = Termination.BACKTRACK_FAIL
        return report
    report.objective_trace.append(obj)

    for it in range(1, opts.max_iters + 1):
        try:
            g = score(theta, ry_hat, sigma_w2, n_snapshots)
            j = fim(theta, n_snapshots, sigma_w2)
            j = 0.5 * (j + j.T)
            ridge = opts.fim_ridge * max(np.trace(j) / j.shape[0], np.finfo(float).tiny)
            delta = linalg.solve(j + ridge * np.eye(j.shape[0]), g, assume_a="sym")
        except (CalibrationError, linalg.LinAlgError) as exc:
            log.debug("iteration %d: cannot form step: %s", it, exc)
            report.termination = Termination.BACKTRACK_FAIL
            break

        step = 1.0
        # objective changes below this are rounding noise
        slack = 1e-12 * max(1.0, abs(obj))
        for _ in range(opts.max_backtracks):
            cand = theta + step * delta
            cand_obj = _objective(cand, ry_hat, sigma_w2)
            if cand_obj is not None and cand_obj <= obj + slack:
                break
            step *= 0.5
        else:
            report.termination = Termination.BACKTRACK_FAIL
            break

        norm = float(np.linalg.norm(step * delta))
        theta, obj = cand, cand_obj
        report.n_iters = it
        report.objective_trace.append(obj)
        report.step_norms.append(norm)
        if norm < opts.epsilon:
            report.converged = True
            report.termination = Termination.STEP_NORM
            break

    report.theta_hat = theta
    return report


def extract_estimates(report):
    """Gains, phases and the Hermitian Toeplitz clean covariance from a report."""
    gains, phases, c = unpack_theta(report.theta_hat)
    return gains, phases, hermitian_toeplitz(c)


def offsets_from_theta(theta):
    gains, phases, _ = unpack_theta(theta)
    return CalibrationOffsets(gains, phases)

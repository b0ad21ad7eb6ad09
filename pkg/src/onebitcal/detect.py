"""Source counting from covariance eigenvalues (SORTE)."""

import numpy as np


def hermitian_eigenvalues(a):
    """Real eigenvalues of a Hermitian matrix, largest first."""
    return np.linalg.eigvalsh(np.asarray(a))[::-1]


def _gap_variance(gaps):
    return float(np.var(gaps, ddof=1)) if gaps.size > 1 else 0.0


def sorte_statistic(eigenvalues):
    """``SORTE(k) = var(gaps[k:]) / var(gaps[k-1:])`` for ``k = 1..N-3``.

    ``gaps`` are the successive differences of the descending eigenvalues;
    variances are unbiased. A zero denominator gives ``inf``, or ``0`` when
    the numerator is zero as well.
    """
    lam = np.sort(np.asarray(eigenvalues, dtype=float))[::-1]
    n = lam.size
    if n < 4:
        raise ValueError("spectrum too short: SORTE needs at least 4 eigenvalues")
    gaps = lam[:-1] - lam[1:]
    var = [_gap_variance(gaps[i:]) for i in range(n - 1)]
    stat = np.empty(n - 3)
    for k in range(1, n - 2):
        num, den = var[k], var[k - 1]
        if den == 0:
            stat[k - 1] = 0.0 if num == 0 else np.inf
        else:
            stat[k - 1] = num / den
    return stat


def sorte(eigenvalues):
    """Estimated number of sources; ties go to the smallest count."""
    return int(np.argmin(sorte_statistic(eigenvalues))) + 1


def count_sources(cov):
    return sorte(hermitian_eigenvalues(cov))

"""Experiment configuration, single calibration trials and Monte Carlo sweeps."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
import csv
import io
import logging
import math

import numpy as np

from .detect import count_sources
from .errors import CalibrationError, ConfigError
from .kldfit import FsaOptions, fsa_solve, extract_estimates
from .lsinit import build_theta_ls
from .model import (ArrayGeometry, ArrayScene, CalibrationOffsets, clean_covariance,
                    normalize_scene, true_theta)
from .simulate import make_rng, quantized_sample_covariance

log = logging.getLogger(__name__)

DEFAULT_GRID = tuple(2 ** k for k in range(10, 18))
REQUIRED_KEYS = ("n_sensors", "angles_deg", "gains", "phases_deg")

TRIAL_HEADER = ("trial", "T", "converged", "n_iters", "mse_gain_ls", "mse_phase_ls",
                "mse_gain_kld", "mse_phase_kld", "m_hat_ls", "m_hat_kld")
AGGREGATE_HEADER = ("T", "conv_pct", "mean_iters", "mse_gain_ls_db", "mse_phase_ls_db",
                    "mse_gain_kld_db", "mse_phase_kld_db", "perr_ls", "perr_kld")


@dataclass(frozen=True)
class ExperimentConfig:
    n_sensors: int
    angles_deg: tuple
    gains: tuple
    phases_deg: tuple
    spacing_wavelengths: float = 0.5
    sir: tuple = (10.0,)
    sigma_w2: float = 1.0
    epsilon: float = 1e-7
    max_iters: int = 100
    max_backtracks: int = 20
    trials: int = 100
    snapshot_grid: tuple = DEFAULT_GRID
    base_seed: int = 0

    @property
    def n_sources(self):
        return len(self.angles_deg)

    def source_sirs(self):
        return self.sir * self.n_sources if len(self.sir) == 1 else self.sir

    def scene(self):
        """Scene normalized so that the clean covariance has ``C[0, 0] = 1``."""
        # with sigma_v2 = 1 the source powers equal the SIRs before normalizing
        geom = ArrayGeometry(self.n_sensors, self.spacing_wavelengths)
        raw = ArrayScene(geom, np.deg2rad(self.angles_deg), np.array(self.source_sirs()),
                         1.0, self.sigma_w2)
        return normalize_scene(raw)

    def offsets(self):
        return CalibrationOffsets(np.array(self.gains), np.deg2rad(self.phases_deg))

    def theta_true(self):
        return true_theta(self.scene(), self.offsets())

    def fsa_options(self):
        return FsaOptions(epsilon=self.epsilon, max_iters=self.max_iters,
                          max_backtracks=self.max_backtracks)


_FIELD_TYPES = {
    "n_sensors": int, "spacing_wavelengths": float, "sigma_w2": float,
    "epsilon": float, "max_iters": int, "max_backtracks": int,
    "trials": int, "base_seed": int,
    "angles_deg": [float], "gains": [float], "phases_deg": [float],
    "sir": [float], "snapshot_grid": [int],
}


def _convert(kind, text):
    if isinstance(kind, list):
        items = [item.strip() for item in text.split(",")]
        if not items or any(not item for item in items):
            raise ValueError("empty list element")
        return tuple(kind[0](item) for item in items)
    if kind is int:
        value = float(text)
        if not value.is_integer():
            raise ValueError(f"{text!r} is not an integer")
        return int(value)
    return kind(text)


def parse_config(text):
    """Parse ``key = value`` lines (``#`` comments, comma-separated lists)."""
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = _convert(_FIELD_TYPES[key], value)
        except ValueError as exc:
            raise ConfigError(f"malformed value for {key!r}: {exc}", lineno) from None
        lines[key] = lineno

    missing = [key for key in REQUIRED_KEYS if key not in values]
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))
    _validate(values, lines)
    return ExperimentConfig(**values)


def _validate(values, lines):
    n = values["n_sensors"]
    if n < 4:
        raise ConfigError("n_sensors must be at least 4", lines["n_sensors"])
    for key in ("gains", "phases_deg"):
        if len(values[key]) != n:
            raise ConfigError(f"{key} has {len(values[key])} entries, expected {n}", lines[key])
    m = len(values["angles_deg"])
    if "sir" in values and len(values["sir"]) not in (1, m):
        raise ConfigError(f"sir needs 1 or {m} entries", lines["sir"])
    if any(s <= 0 for s in values.get("sir", (1.0,))):
        raise ConfigError("sir entries must be positive", lines["sir"])
    if any(g <= 0 for g in values["gains"]):
        raise ConfigError("gains must be positive", lines["gains"])
    if values["gains"][0] != 1.0:
        raise ConfigError("gains[0] is the reference and must be 1", lines["gains"])
    if values["phases_deg"][0] != 0.0 or values["phases_deg"][1] != 0.0:
        raise ConfigError("phases_deg[0] and phases_deg[1] are references and must be 0",
                          lines["phases_deg"])
    grid = values.get("snapshot_grid")
    if grid is not None and (any(t < 1 for t in grid) or list(grid) != sorted(set(grid))):
        raise ConfigError("snapshot_grid must be positive and strictly ascending",
                          lines["snapshot_grid"])
    for key in ("spacing_wavelengths", "sigma_w2", "epsilon"):
        if key in values and not values[key] > 0:
            raise ConfigError(f"{key} must be positive", lines[key])
    for key in ("max_iters", "trials", "base_seed"):
        if key in values and values[key] < 0:
            raise ConfigError(f"{key} must be non-negative", lines[key])
    if "max_backtracks" in values and values["max_backtracks"] < 1:
        raise ConfigError("max_backtracks must be positive", lines["max_backtracks"])


def format_config(config):
    """Inverse of :func:`parse_config`."""
    out = []
    for f in fields(config):
        value = getattr(config, f.name)
        text = ",".join(map(repr, value)) if isinstance(value, tuple) else repr(value)
        out.append(f"{f.name} = {text}")
    return "\n".join(out) + "\n"


@dataclass
class TrialRecord:
    trial: int
    T: int
    converged: bool
    n_iters: int
    mse_gain_ls: float
    mse_phase_ls: float
    mse_gain_kld: float
    mse_phase_kld: float
    m_hat_ls: int
    m_hat_kld: int

    def row(self):
        return [_fmt(getattr(self, name)) for name in TRIAL_HEADER]


@dataclass
class Calibration:
    """Everything the algorithm produces from one sample covariance."""

    ls: object
    report: object
    gains: np.ndarray
    phases_rad: np.ndarray
    c_matrix: np.ndarray


def calibrate(ry_hat, sigma_w2, n_snapshots, opts=None):
    """LS initialization followed by Fisher scoring.

    When scoring does not converge the LS offsets and the un-projected LS
    clean covariance are returned instead.
    """
    ls = build_theta_ls(ry_hat, sigma_w2)
    report = fsa_solve(ry_hat, ls.theta0, opts, sigma_w2, n_snapshots)
    if report.converged:
        gains, phases, c_mat = extract_estimates(report)
    else:
        gains, phases, c_mat = ls.gains, ls.phases_rad, ls.c_matrix
    return Calibration(ls, report, gains, phases, c_mat)


def _wrap(x):
    return (x + np.pi) % (2 * np.pi) - np.pi


def offset_mse(gains_hat, phases_hat, offsets):
    """Per-element MSE of the free gains and phases (phases in rad^2)."""
    mse_gain = float(np.mean((np.asarray(gains_hat)[1:] - offsets.gains[1:]) ** 2))
    dphi = _wrap(np.asarray(phases_hat)[2:] - offsets.phases_rad[2:])
    return mse_gain, float(np.mean(dphi ** 2))


def run_trial(config, n_snapshots, seed, trial_index=0, return_calibration=False):
    scene, offsets = config.scene(), config.offsets()
    ry_hat = quantized_sample_covariance(scene, offsets, n_snapshots, make_rng(seed))
    cal = calibrate(ry_hat, config.sigma_w2, n_snapshots, config.fsa_options())
    mg_ls, mp_ls = offset_mse(cal.ls.gains, cal.ls.phases_rad, offsets)
    mg_kld, mp_kld = offset_mse(cal.gains, cal.phases_rad, offsets)
    record = TrialRecord(
        trial_index, n_snapshots, cal.report.converged, cal.report.n_iters,
        mg_ls, mp_ls, mg_kld, mp_kld,
        count_sources(cal.ls.c_matrix), count_sources(cal.c_matrix))
    if return_calibration:
        return record, cal
    return record


def _failed_record(trial_index, n_snapshots):
    nan = float("nan")
    return TrialRecord(trial_index, n_snapshots, False, 0, nan, nan, nan, nan, -1, -1)


def _trial_job(args):
    config, n_snapshots, seed, trial_index = args
    try:
        return run_trial(config, n_snapshots, seed, trial_index)
    except (CalibrationError, np.linalg.LinAlgError) as exc:
        log.warning("trial %d at T=%d failed: %s", trial_index, n_snapshots, exc)
        return _failed_record(trial_index, n_snapshots)


def run_mc(config, jobs=1, progress=None):
    """Run ``config.trials`` trials for every ``T`` in the grid.

    Trial ``k`` uses seed ``base_seed + k``. Returns ``(records, aggregates)``
    with records ordered by ``(T, trial)`` whatever the value of ``jobs``.
    """
    tasks = [(config, t, config.base_seed + k, k)
             for t in config.snapshot_grid for k in range(config.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_trial_job, tasks, chunksize=4))
    else:
        records = []
        for task in tasks:
            records.append(_trial_job(task))
            if progress is not None:
                progress(records[-1])
    aggregates = [aggregate([r for r in records if r.T == t], config.n_sources)
                  for t in config.snapshot_grid]
    return records, aggregates


def _db(values):
    if not values:
        return float("nan")
    return 10 * math.log10(math.fsum(values) / len(values))


def aggregate(records, n_sources):
    """Aggregate statistics for trials sharing one ``T``.

    LS MSEs average all completed trials; KLD MSEs and iteration counts
    average convergent trials only. Detection errors count every trial.
    """
    t = records[0].T
    ok = [r for r in records if r.m_hat_ls >= 0]
    conv = [r for r in ok if r.converged]
    n = len(records)
    return {
        "T": t,
        "conv_pct": 100.0 * len(conv) / n,
        "mean_iters": math.fsum(r.n_iters for r in conv) / len(conv) if conv else float("nan"),
        "mse_gain_ls_db": _db([r.mse_gain_ls for r in ok]),
        "mse_phase_ls_db": _db([r.mse_phase_ls for r in ok]),
        "mse_gain_kld_db": _db([r.mse_gain_kld for r in conv]),
        "mse_phase_kld_db": _db([r.mse_phase_kld for r in conv]),
        "perr_ls": sum(r.m_hat_ls != n_sources for r in records) / n,
        "perr_kld": sum(r.m_hat_kld != n_sources for r in records) / n,
    }


def _fmt(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def trial_csv(records):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRIAL_HEADER)
    writer.writerows(r.row() for r in records)
    return buf.getvalue()


def aggregate_csv(aggregates):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(AGGREGATE_HEADER)
    for agg in aggregates:
        writer.writerow(_fmt(agg[k]) for k in AGGREGATE_HEADER)
    return buf.getvalue()


def read_trial_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    conv = {"trial": int, "T": int, "converged": lambda s: s == "1", "n_iters": int,
            "m_hat_ls": int, "m_hat_kld": int}
    return [TrialRecord(**{k: conv.get(k, float)(v) for k, v in row.items()}) for row in rows]


def format_covariance(a):
    """Full matrix as ``i,j,re,im`` lines (0-based, round-trip precision)."""
    a = np.asarray(a, dtype=complex)
    lines = [f"{i},{j},{float(a[i, j].real)!r},{float(a[i, j].imag)!r}"
             for i in range(a.shape[0]) for j in range(a.shape[1])]
    return "\n".join(lines) + "\n"


def parse_covariance(text):
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            i, j, re, im = line.split(",")
            entries[int(i), int(j)] = complex(float(re), float(im))
        except ValueError:
            raise ConfigError(f"expected 'i,j,re,im', got {line!r}", lineno) from None
    if not entries:
        raise ConfigError("empty covariance file")
    n = 1 + max(max(k) for k in entries)
    if len(entries) != n * n or min(min(k) for k in entries) < 0:
        raise ConfigError(f"covariance file must list all {n * n} entries of an {n}x{n} matrix")
    a = np.empty((n, n), dtype=complex)
    for (i, j), v in entries.items():
        a[i, j] = v
    return a


def scene_report(config):
    """Human-readable summary of the simulated scene."""
    scene, offsets = config.scene(), config.offsets()
    c = clean_covariance(scene)
    snr = offsets.gains ** 2 / config.sigma_w2
    sir = scene.source_powers / scene.sigma_v2
    return {
        "sigma_v2": scene.sigma_v2,
        "source_powers": scene.source_powers.tolist(),
        "sir_db": (10 * np.log10(sir)).tolist(),
        "snr_db": (10 * np.log10(snr)).tolist(),
        "c11": float(c[0, 0].real),
    }

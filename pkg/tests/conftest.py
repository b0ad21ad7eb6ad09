from dataclasses import replace
from pathlib import Path
import time

import numpy as np
import pytest

from onebitcal.experiment import parse_config, run_mc
from onebitcal.model import (ArrayGeometry, ArrayScene, CalibrationOffsets, normalize_scene,
                             true_theta)

REFERENCE_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "reference.cfg"

REFERENCE_GAINS = [1, 0.7, 0.9, 1.1, 1.2, 0.8, 1.3]
REFERENCE_PHASES_DEG = [0, 0, 5, 11, -8, 4, 10]
REFERENCE_ANGLES_DEG = [45, 52, 9, 78]

SWEEP_GRID = (2 ** 12, 2 ** 14, 2 ** 16)
SWEEP_TRIALS = 200

_acceptance_lines = []


def reference_scene():
    geom = ArrayGeometry(7, 0.5)
    raw = ArrayScene(geom, np.deg2rad(REFERENCE_ANGLES_DEG), [10.0] * 4, 1.0, 1.0)
    return normalize_scene(raw)


def reference_offsets():
    return CalibrationOffsets(REFERENCE_GAINS, np.deg2rad(REFERENCE_PHASES_DEG))


@pytest.fixture
def scene():
    return reference_scene()


@pytest.fixture
def offsets():
    return reference_offsets()


@pytest.fixture
def theta_true():
    return true_theta(reference_scene(), reference_offsets())


@pytest.fixture(scope="session")
def reference_config():
    return parse_config(REFERENCE_CONFIG.read_text())


@pytest.fixture(scope="session")
def sweep(reference_config):
    """Trial records of the reference scene, ``SWEEP_TRIALS`` seeds per ``T``.

    Returns ``(records by T, aggregates by T, wall seconds)``.
    """
    config = replace(reference_config, trials=SWEEP_TRIALS, snapshot_grid=SWEEP_GRID)
    start = time.perf_counter()
    records, aggregates = run_mc(config)
    elapsed = time.perf_counter() - start
    by_t = {t: [r for r in records if r.T == t] for t in SWEEP_GRID}
    return by_t, {a["T"]: a for a in aggregates}, elapsed


@pytest.fixture
def acceptance_log():
    def log(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
        _acceptance_lines.append(line)
        print(line)
        return passed
    return log


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)

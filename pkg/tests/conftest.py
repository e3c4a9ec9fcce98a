import math

import numpy as np
import pytest

from urapprox.config import from_mapping
from urapprox.geometry import AmbientBox, flat_plane
from urapprox.grid import build_dyadic_grid
from urapprox.harmonic import BoundaryData, solve_harmonic
from urapprox.pipeline import build_core, solve_core

# PASS/FAIL lines of the acceptance criteria, repeated in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def segment_grid():
    """Segment [0, 1] x {0} with generations 0..6 (127 cubes)."""
    return build_dyadic_grid(flat_plane(0.0, 1.0, 2, 2.0 ** -10), 0, 6)


@pytest.fixture(scope="session")
def halfplane_field():
    E = flat_plane(-2.0, 2.0, 2, 2.0 ** -11)
    data = BoundaryData("halfplane_indicator", {"x0": 0.0})
    return solve_harmonic(E, (-1.0, 0.0), (1.0, 1.0), data, 2.0 ** -9)


def small_flat_config(**over):
    raw = {"boundary": "flat_plane", "boundary_params": "lo=-2; hi=2", "spacing": "2^-11",
           "k_min": "4", "k_max": "6", "eta": "2^-4", "K": "2^6",
           "data": "coordinate", "data_params": "scale=0.03",
           "box": "-0.625, -0.625, 1.25", "q0": "4; 0, 0", "eps": "0.5, 0.25",
           "stability": "false", "adr_trials": "40", "nta_trials": "8", "families": "3",
           "extrapolation_samples": "10"}
    for k, v in over.items():
        if v is None:
            raw.pop(k, None)
        else:
            raw[k] = str(v)
    return from_mapping(raw, name=raw.pop("name", "small_flat"))


@pytest.fixture(scope="session")
def small_core():
    return build_core(small_flat_config())


@pytest.fixture(scope="session")
def gentle_field(small_core):
    return solve_core(small_core, small_core.cfg.solver_h)

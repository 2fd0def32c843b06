import numpy as np
import pytest

from glenoid.phantom import PhantomSpec, generate, random_specs


@pytest.fixture(scope="session")
def seed42_cases():
    """The 100-phantom acceptance batch (seed 42, 0.5 mm, defects in [0, 35] %)."""
    return [generate(s) for s in random_specs(100, seed=42)]


@pytest.fixture(scope="session")
def phantom25():
    return generate(PhantomSpec(radius_mm=12.0, defect_pct=25.0, plate_thickness_mm=2.0,
                                orientation=np.eye(3), spacing_mm=0.5, rng_seed=3))


def rotation(axis, deg):
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    a = np.radians(deg)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * k + (1 - np.cos(a)) * k @ k


ACCEPTANCE_LINES = []


def record(line: str) -> None:
    """Keep one acceptance line for the end-of-run summary (and echo it for -s runs)."""
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

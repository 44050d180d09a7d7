import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def random_convex_polygon(rng, nmin=3, nmax=8):
    """Random convex polygon: sorted angles on a jittered ellipse, then shifted and scaled."""
    while True:
        m = int(rng.integers(nmin, nmax + 1))
        ang = np.sort(rng.uniform(0, 2 * np.pi, m))
        if np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]])).min() < 0.15:
            continue
        a, b = rng.uniform(0.5, 1.5, 2)
        pts = np.stack([a * np.cos(ang), b * np.sin(ang)], axis=1)
        rot = rng.uniform(0, np.pi)
        R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
        return pts @ R.T * rng.uniform(0.05, 2.0) + rng.uniform(-3, 3, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

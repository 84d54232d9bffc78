import numpy as np
import pytest

from freetalk.mesh import Mesh


def grid_mesh(nx=5, ny=4, jitter=0.0, seed=0):
    """Planar triangulated grid in z = 0, optionally with interior jitter."""
    xs, ys = np.meshgrid(np.linspace(0, 1, nx), np.linspace(0, 1, ny), indexing="xy")
    v = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)
    if jitter:
        rng = np.random.default_rng(seed)
        interior = (xs.ravel() > 0) & (xs.ravel() < 1) & (ys.ravel() > 0) & (ys.ravel() < 1)
        v[interior, :2] += rng.uniform(-jitter, jitter, (interior.sum(), 2)) / max(nx, ny)
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            faces += [[a, a + 1, a + nx + 1], [a, a + nx + 1, a + nx]]
    return Mesh(v, np.array(faces))


@pytest.fixture(autouse=True)
def _no_cache(monkeypatch):
    # tests that exercise the disk cache opt in explicitly
    monkeypatch.delenv("FREETALK_CACHE", raising=False)


@pytest.fixture
def equilateral():
    return Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]]), np.array([[0, 1, 2]]))


@pytest.fixture
def grid():
    return grid_mesh(6, 5, jitter=0.3)


@pytest.fixture(scope="session")
def sphere():
    from freetalk.pipeline.synth import icosphere

    return icosphere(2)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE = {}


@pytest.fixture
def record():
    """Record one acceptance criterion: ``record("A1", passed, "detail")``."""
    def _record(criterion, passed, detail, soft=False):
        status = "PASS" if passed else ("FAIL (soft)" if soft else "FAIL")
        line = f"{criterion} {status}: {detail}"
        ACCEPTANCE[criterion] = line
        print(line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])

import numpy as np
import pytest

from tangentflow.geometry import Ellipsoid, Sphere, Torus
from tangentflow.mesh import build_mesh


@pytest.fixture(scope="session")
def unit_sphere():
    return Sphere()


@pytest.fixture(scope="session")
def sphere_meshes(unit_sphere):
    return {lvl: build_mesh(unit_sphere, lvl) for lvl in range(0, 4)}


@pytest.fixture(scope="session")
def analytic_surfaces():
    return {
        "sphere": Sphere(),
        "ellipsoid": Ellipsoid((1.0, 1.2, 0.8)),
        "torus": Torus(2.0, 1.0),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_surface_points(surface, n, rng):
    """Closest points of random points in a box around the surface."""
    x = rng.normal(size=(n, 3)) * 2.0
    return surface.closest_point(x)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance line; returns ``ok`` so the test can assert on it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
        print(line)
        lines.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

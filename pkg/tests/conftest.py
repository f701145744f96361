import numpy as np
import pytest

from dynbc.mesh import Mesh2D, create_lshape, create_unit_square, trace_gamma


def two_triangle_square():
    """Unit square split by the diagonal (0,0)-(1,1), which is the refinement edge of both."""
    vertices = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    triangles = [(1, 2, 0), (3, 0, 2)]
    boundary = [(0, 1), (1, 2), (2, 3), (3, 0)]
    return Mesh2D(vertices, triangles, boundary, [0, 1, 2, 3])


@pytest.fixture
def square1():
    return create_unit_square(1)


@pytest.fixture
def square2():
    return create_unit_square(2)


@pytest.fixture(params=["square", "lshape"])
def domain(request):
    bulk = create_unit_square(2) if request.param == "square" else create_lshape(1)
    return bulk, trace_gamma(bulk)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


# -- acceptance summary -------------------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def acceptance(request):
    """Record the pass/fail line of one acceptance criterion: ``acceptance(k, ok, detail)``."""

    def record(number, ok, detail):
        ACCEPTANCE[number] = (ok, detail)
        print(f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")

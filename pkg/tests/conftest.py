import numpy as np
import pytest

import lamestab.boundary
import lamestab.cli
import lamestab.inverse
import lamestab.probes
from lamestab.boundary import assemble_h_half_gram, build_sigma_basis
from lamestab.forward import ElementCache
from lamestab.geometry import build_layered_partition, generate_mesh
from lamestab.material import LameParams

WAVY = "0.5 + 0.05*sin(2*pi*x1)"
SYMMETRY_LIMIT = 1e-8

# Every DtN matrix assembled anywhere in the suite is checked for symmetry.
# The wrapper is installed before test modules import the function.
DTN_ASYMMETRIES = []
ACCEPTANCE_LINES = []  # filled by tests/test_acceptance.py
_assemble_dtn = lamestab.boundary.assemble_dtn


def _checked_assemble_dtn(*args, **kwargs):
    dtn = _assemble_dtn(*args, **kwargs)
    DTN_ASYMMETRIES.append(dtn.asymmetry())
    assert DTN_ASYMMETRIES[-1] < SYMMETRY_LIMIT, f"assembled DtN asymmetry {DTN_ASYMMETRIES[-1]:.3g}"
    return dtn


for _mod in (lamestab.boundary, lamestab.cli, lamestab.inverse, lamestab.probes):
    _mod.assemble_dtn = _checked_assemble_dtn


def pytest_terminal_summary(terminalreporter):
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
    if DTN_ASYMMETRIES:
        worst = max(DTN_ASYMMETRIES)
        verdict = "PASS" if worst < SYMMETRY_LIMIT else "FAIL"
        terminalreporter.write_line(f"{verdict} DtN self-adjointness over the whole suite: "
                                    f"{len(DTN_ASYMMETRIES)} matrices, max asymmetry {worst:.3g}")


def two_layer_domain(L=2.5):
    return build_layered_partition(interfaces=[WAVY], L=L, alpha=1.0)


@pytest.fixture(scope="session")
def bench_domain():
    return two_layer_domain()


@pytest.fixture(scope="session")
def bench6(bench_domain):
    """Wavy two-layer cube at n=6 with basis, Gram and element cache."""
    mesh = generate_mesh(bench_domain, 6)
    basis = build_sigma_basis(mesh)
    gram = assemble_h_half_gram(mesh, basis)
    return mesh, basis, gram, ElementCache(mesh)


@pytest.fixture(scope="session")
def cube_domain():
    return build_layered_partition()


@pytest.fixture(scope="session")
def cube4(cube_domain):
    return generate_mesh(cube_domain, 4)


@pytest.fixture(scope="session")
def flat_domain():
    return build_layered_partition(interfaces=["0.5"], A=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def bench_truth():
    return LameParams.from_layers([1.0, 2.0], [1.0, 1.5])

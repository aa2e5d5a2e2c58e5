import numpy as np
import pytest

from dprom.basis import build_reduction_basis
from dprom.defects import arch_sine
from dprom.full_model import linear_stiffness, mass_matrix, rayleigh_from_Q
from dprom.mesh import build_rect_beam_mesh
from dprom.models import probe_at
from dprom.tensors import assemble_dprom

# desk-scale clamped beam used across the suite
BEAM = dict(lx=2.0, ty=0.05, nx=20, ny=2, thickness=0.2)

_ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        for passed, detail in _ACCEPTANCE[k]:
            terminalreporter.write_line(
                f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def _report(criterion: int, passed: bool, detail: str):
        _ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")

    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def beam():
    return build_rect_beam_mesh(BEAM["lx"], BEAM["ty"], BEAM["nx"], BEAM["ny"],
                                thickness=BEAM["thickness"])


@pytest.fixture(scope="session")
def small_beam():
    return build_rect_beam_mesh(1.0, 0.05, 6, 1, thickness=0.1)


@pytest.fixture(scope="session")
def arch(beam):
    return arch_sine(beam)


@pytest.fixture(scope="session")
def mid_probe(beam):
    return probe_at(beam, "mid_v", (1.0, 0.025), 1)


@pytest.fixture(scope="session")
def damping(beam):
    return rayleigh_from_Q(mass_matrix(beam), linear_stiffness(beam), 100, 100)


@pytest.fixture(scope="session")
def beam_basis(beam, arch):
    return build_reduction_basis(beam, arch, n_vm=5)


@pytest.fixture(scope="session")
def beam_tensors(beam, arch, beam_basis):
    """DpROM tensors of the arch beam, built lazily per variant."""
    cache = {}

    def get(variant):
        if variant not in cache:
            cache[variant] = assemble_dprom(beam, beam_basis, arch, variant)
        return cache[variant]

    return get

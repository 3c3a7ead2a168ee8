import numpy as np
import pytest

from starflow.fields import make_field
from starflow.flow import attractor_point, sample_orbit
from starflow.measures import ExperimentConfig, reference_run, theorem_a_experiment, theorem_b_experiment

TWO_PI = 2.0 * np.pi


@pytest.fixture(scope="session")
def lin():
    return make_field("LIN")


@pytest.fixture(scope="session")
def cyc():
    return make_field("CYC")


@pytest.fixture(scope="session")
def lor():
    return make_field("LOR")


@pytest.fixture(scope="session")
def lor_x(lor):
    return attractor_point(lor, (1.0, 1.0, 1.0), 50.0)


@pytest.fixture(scope="session")
def cycle_segment(cyc):
    """Ten turns of the unit cycle sampled at 2*pi/500."""
    return sample_orbit(cyc, (1.0, 0.0, 0.0), 10 * TWO_PI, TWO_PI / 500)


@pytest.fixture(scope="session")
def lor_ref(lor):
    """1500 time units of the Lorenz attractor with exponents and splitting at T = 1."""
    return reference_run(lor, ExperimentConfig(total_time=1500.0))


@pytest.fixture(scope="session")
def lor_config():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def lor_theorem_a(lor, lor_config):
    return theorem_a_experiment(lor, lor_config)


@pytest.fixture(scope="session")
def lor_theorem_b(lor, lor_config, lor_theorem_a):
    return theorem_b_experiment(lor, lor_config, forward=lor_theorem_a)


@pytest.fixture(scope="session")
def lor_exponents(lor, lor_x):
    """Tangent, scaled-LPF and LPF reports over 2000 time units from one attractor point."""
    from starflow.oseledec import lyapunov_exponents_lpf, lyapunov_exponents_tangent

    return {
        "tangent": lyapunov_exponents_tangent(lor, lor_x, 2000.0, 0.1),
        "scaled": lyapunov_exponents_lpf(lor, lor_x, 2000.0, 1.0, scaled=True),
        "unscaled": lyapunov_exponents_lpf(lor, lor_x, 2000.0, 1.0, scaled=False),
    }


# one summary line per acceptance criterion

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    key = int(name.split("_")[2])
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev_ok, prev_name = _ACCEPTANCE.get(key, (True, name))
        ok = report.outcome == "passed"
        _ACCEPTANCE[key] = (prev_ok and ok, name if prev_ok and not ok else prev_name)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        ok, name = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if ok else 'FAIL'}  ({name})")

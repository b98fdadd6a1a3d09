import numpy as np
import pytest

from dysdiff.diffusion import NoiseSchedule, integrated_beta


@pytest.fixture
def sched():
    return NoiseSchedule(0.05, 20.0)


def gaussian_transport(sched, x_T, mu, m, var, t_min):
    """Closed-form solution of the probability-flow ODE for N(m, var) data."""

    def moments(t):
        b = integrated_beta(sched, t)
        return mu + (m - mu) * np.exp(-b / 2), 1 - np.exp(-b) + var * np.exp(-b)

    m_lo, v_lo = moments(t_min)
    m_hi, v_hi = moments(sched.T)
    return m_lo + np.sqrt(v_lo / v_hi) * (x_T - m_hi)


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        if report.when == "call" or report.failed:
            _ACCEPTANCE.append(report)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for rep in _ACCEPTANCE:
        name = rep.nodeid.split("::")[-1]
        num, _, title = name[len("test_c"):].partition("_")
        status = "PASS" if rep.passed else "FAIL"
        extra = "; ".join(str(v) for k, v in rep.user_properties if k == "report")
        line = f"criterion {int(num):2d} {title.replace('_', ' ')}: {status} ({rep.duration:.1f}s)"
        terminalreporter.write_line(line + (f"  [{extra}]" if extra else ""))

import numpy as np
import pytest

from pvfcure import BaselineParams, FrailtyParams, ObservedData, ParamVector


def central_difference(f, t, h):
    return (f(t + h) - f(t - h)) / (2.0 * h)


def kaplan_meier(times, events):
    """Product-limit estimate evaluated just after each distinct event time."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    order = np.argsort(times, kind="stable")
    times, events = times[order], events[order]
    uniq = np.unique(times[events])
    surv, s = [], 1.0
    for u in uniq:
        at_risk = np.sum(times >= u)
        d = np.sum((times == u) & events)
        s *= 1.0 - d / at_risk
        surv.append(s)
    return uniq, np.array(surv)


@pytest.fixture
def truth():
    return ParamVector(BaselineParams(0.0, 1.0), FrailtyParams(0.5, 1.0), 0.5, np.array([-0.5, 0.7]))


@pytest.fixture
def small_data():
    """Five observations, mixed censoring, one binary covariate."""
    return ObservedData.from_covariates(
        times=[0.3, 1.2, 2.5, 0.7, 4.0],
        events=[1, 0, 1, 1, 0],
        x=[0.0, 1.0, 1.0, 0.0, 1.0],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_criteria = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or report.failed:
        if report.nodeid not in _criteria or report.failed:
            _criteria[report.nodeid] = (props["criterion"], report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome in sorted(_criteria.values(), key=lambda c: int(c[0].split()[0])):
        terminalreporter.write_line(f"criterion {label}: {'PASS' if outcome == 'passed' else 'FAIL'}")

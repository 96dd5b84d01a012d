"""Shared oracles and the acceptance-criterion report."""

from __future__ import annotations

import itertools

import mpmath
import numpy as np
import pytest

mpmath.mp.dps = 60


def erf_series(x) -> mpmath.mpf:
    """erf(x) from its Maclaurin series, summed until terms drop below 1e-45."""
    x = mpmath.mpf(x)
    total = mpmath.mpf(0)
    term = x
    n = 0
    while True:
        add = term / (2 * n + 1)
        total += add
        n += 1
        term = -term * x * x / n
        if n >= 30 and abs(add) < mpmath.mpf("1e-45"):
            break
    return 2 * total / mpmath.sqrt(mpmath.pi)


def cdf_oracle(x) -> float:
    return float((1 + erf_series(mpmath.mpf(x) / mpmath.sqrt(2))) / 2)


def quantile_oracle(p: float) -> float:
    """Bisection on the series CDF to about 1e-15."""
    p = mpmath.mpf(p)
    lo, hi = mpmath.mpf(-10), mpmath.mpf(10)
    for _ in range(80):
        mid = (lo + hi) / 2
        if (1 + erf_series(mid / mpmath.sqrt(2))) / 2 < p:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def closed_testing(p, local_pvalue, alpha):
    """Independent closed-testing reference: enumerate every subset directly."""
    m = len(p)
    rejected_subsets = {}
    for r in range(1, m + 1):
        for subset in itertools.combinations(range(m), r):
            rejected_subsets[subset] = local_pvalue([p[i] for i in subset]) < alpha
    return {i for i in range(m) if all(ok for s, ok in rejected_subsets.items() if i in s)}


def bonferroni_local(ps):
    return len(ps) * min(ps)


def simes_local(ps):
    s = sorted(ps)
    k = len(s)
    return min(k * v / (i + 1) for i, v in enumerate(s))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report --------------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
    _CRITERIA[marker.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def central_diff(fun, x0, retract, dim, h=1e-6):
    """Numerical Jacobian of ``fun(retract(x0, d))`` at ``d = 0``."""
    cols = []
    for k in range(dim):
        d = np.zeros(dim)
        d[k] = h
        cols.append((fun(retract(x0, d)) - fun(retract(x0, -d))) / (2 * h))
    return np.column_stack(cols)


def rel_err(A, B):
    return float(np.abs(A - B).max() / max(1.0, np.abs(B).max()))


def random_unit(rng, max_angle=None):
    """Uniform direction, optionally restricted to within ``max_angle`` of e3."""
    if max_angle is None:
        v = rng.standard_normal(3)
        return v / np.linalg.norm(v)
    z = rng.uniform(np.cos(max_angle), 1.0)
    phi = rng.uniform(0, 2 * np.pi)
    r = np.sqrt(1 - z * z)
    return np.array([r * np.cos(phi), r * np.sin(phi), z])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    failed = rep.failed
    if rep.when == "call" or failed:
        detail = dict(item.user_properties).get("detail", "")
        prev = item.config._criteria.get(n)
        ok = not failed and (prev is None or prev[0])
        item.config._criteria[n] = (ok, title, detail or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(crit):
        ok, title, detail = crit[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)

import time
from importlib import resources

import numpy as np
import pytest

from fgplan.backups import BackupRule
from fgplan.engine import steady_state
from fgplan.model import build_grid_model, load_map, random_model

REFERENCE_RULES = ("max-product", "sum-max:3", "sum-product", "dp", "softdp:0.2",
               "softdp:0.6", "max-rew-ent:0.2", "max-rew-ent:1", "max-rew-ent:6")


def bundled(name):
    return load_map((resources.files("fgplan") / "maps" / f"{name}.map").read_text())


def run_rules(model, specs=REFERENCE_RULES):
    out = {}
    for spec in specs:
        rule = BackupRule.parse(spec)
        t0 = time.perf_counter()
        q, v, rep = steady_state(model, rule)
        out[spec] = (rule, q, v, rep, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="session")
def grid6():
    return bundled("grid6x6")


@pytest.fixture(scope="session")
def model6(grid6):
    return build_grid_model(grid6)


@pytest.fixture(scope="session")
def runs6(model6):
    return run_rules(model6)


@pytest.fixture(scope="session")
def grid17():
    return bundled("semantic17x23")


@pytest.fixture(scope="session")
def model17(grid17):
    return build_grid_model(grid17)


@pytest.fixture(scope="session")
def runs17(model17):
    return run_rules(model17)


def tiny_instances(n=50, seed=0, max_s=4, max_a=3, max_t=3):
    """Random ``(model, T, initial)`` triples inside the enumeration budget."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        S = int(rng.integers(2, max_s + 1))
        A = int(rng.integers(1, max_a + 1))
        T = int(rng.integers(1, max_t + 1))
        m = random_model(rng, S, A, sparsity=0.25 * rng.integers(0, 2))
        init = np.log(rng.random(S) + 0.1)
        out.append((m, T, init))
    return out


# -- acceptance summary ---------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    n, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or n not in _CRITERIA:
        _CRITERIA[n] = (rep.outcome, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        outcome, title, detail = _CRITERIA[n]
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {n:2d}: {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))

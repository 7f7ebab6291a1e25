import numpy as np
import pytest

from voisynth import hiv_model as hm
from voisynth import sampler as sp


@pytest.fixture(scope="session")
def hiv_data():
    return hm.load_data()


@pytest.fixture(scope="session")
def small_posterior(hiv_data):
    """A short base-case run, enough for wiring tests (not for accuracy)."""
    cfg = sp.ChainConfig(chains=2, iterations=3000, burnin=2000, seed=11)
    table, diag = sp.run_chains(hiv_data, "base", cfg)
    return table, diag


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


DECOMPOSITION_CHECKS = {"calls": 0}
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _check_variance_decomposition(monkeypatch):
    """Every regression VoI estimate in the suite must satisfy
    var(y) = var(fitted) + residual mean square, and var(fitted) <= var(y)."""
    from voisynth import voi

    inner = voi.regression_voi

    def checked(*args, **kwargs):
        est = inner(*args, **kwargs)
        if "decomposition_rel_err" in est.meta:
            assert est.meta["decomposition_rel_err"] < 1e-8
            assert est.meta["fitted_var_le_baseline"]
            DECOMPOSITION_CHECKS["calls"] += 1
        return est

    monkeypatch.setattr(voi, "regression_voi", checked)

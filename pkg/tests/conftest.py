import time

import numpy as np
import pytest

import fermikinetics as fk

# acceptance results gathered by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE = {}

CANONICAL = dict(dim=2, n=16, eta=0.3, seed=0, low=0.05, high=0.95, dt=0.01, T=50.0)


def record(key: str, ok: bool, detail: str):
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} {key}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[1].rstrip(":"))):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {key}: {detail}")


@pytest.fixture(scope="session")
def canonical():
    """The reference 2D relaxation run, computed once per session."""
    c = CANONICAL
    start = time.perf_counter()
    grid = fk.build_grid(c["dim"], c["n"])
    eps = fk.nearest_neighbor_band(grid)
    v = fk.cosine_potential(grid)
    table = fk.build_table(grid, eps, v, fk.ScalingParameters(eta=c["eta"]))
    w0 = np.random.default_rng(c["seed"]).uniform(c["low"], c["high"], grid.size)
    traj = fk.evolve(w0, table, c["T"], c["dt"], monitor_every=100, eps=eps)
    seconds = time.perf_counter() - start
    return dict(grid=grid, eps=eps, v=v, table=table, w0=w0, traj=traj, seconds=seconds)


@pytest.fixture(scope="session")
def fd256():
    grid = fk.build_grid(1, 256)
    eps = fk.nearest_neighbor_band(grid)
    return fk.QuasifreeState(grid, fk.fermi_dirac(grid, eps, 1.0, 0.0).w)

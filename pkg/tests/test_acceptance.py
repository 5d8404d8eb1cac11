"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line through ``record``; the lines are
repeated in an "acceptance criteria" section at the end of the session.
"""

import time

import numpy as np
import pytest

import fermikinetics as fk
from fermikinetics import fockoracle as fo
from conftest import CANONICAL, record

pytestmark = pytest.mark.slow


def check(key, ok, detail):
    record(key, ok, detail)
    assert ok, detail


def test_criterion_1_h_theorem(canonical):
    traj = canonical["traj"]
    ds = np.diff(traj.step_s)
    ok = ds.min() >= -1e-10 and canonical["seconds"] < 300
    check("criterion 1", ok, f"min entropy increment {ds.min():.3e} over {ds.size} steps, "
                             f"build+evolve {canonical['seconds']:.0f} s")


def test_criterion_2_particle_conservation(canonical):
    traj = canonical["traj"]
    drho = np.max(np.abs(traj.step_rho - traj.step_rho[0]))
    check("criterion 2", drho <= 1e-11, f"max |rho(t) - rho(0)| = {drho:.3e}")


ETAS = (0.6, 0.3, 0.15, 0.075)
SHORT_T, SHORT_DT = 2.0, 0.02


@pytest.fixture(scope="module")
def eta_sweep():
    """Energy drift rate and Fermi-Dirac residual of the canonical model for several eta."""
    c = CANONICAL
    g = fk.build_grid(c["dim"], c["n"])
    e = fk.nearest_neighbor_band(g)
    v = fk.cosine_potential(g)
    w0 = np.random.default_rng(c["seed"]).uniform(c["low"], c["high"], g.size)
    fd = fk.fermi_dirac(g, e, 1.0, 0.0).w
    out = {}
    for eta in ETAS:
        table = fk.build_table(g, e, v, fk.ScalingParameters(eta=eta))
        traj = fk.evolve(w0, table, SHORT_T, SHORT_DT, monitor_every=50, eps=e)
        rate = abs(traj.step_e[-1] - traj.step_e[0]) / SHORT_T
        out[eta] = (rate, np.max(np.abs(fk.collision_rhs(table, fd))))
        del table
    exact = fk.build_table(g, e, v, fk.ScalingParameters(eta=c["eta"]), mode=fk.EXACT_SHELL)
    traj = fk.evolve(w0, exact, SHORT_T, SHORT_DT, eps=e)
    out["exact"] = (np.max(np.abs(traj.step_e - traj.step_e[0])),
                    np.max(np.abs(fk.collision_rhs(exact, fd))))
    return out


def test_criterion_3_energy_drift(eta_sweep):
    eta = CANONICAL["eta"]
    ratio = eta_sweep[eta / 2][0] / eta_sweep[eta][0]
    coarse = eta_sweep[0.3][0] / eta_sweep[0.6][0]
    exact = eta_sweep["exact"][0]
    ok = 0.3 <= ratio <= 0.8 and exact <= 1e-10
    rates = ", ".join(f"{k}: {eta_sweep[k][0]:.3e}" for k in ETAS)
    check("criterion 3", ok, f"drift ratio eta {eta}->{eta / 2} = {ratio:.3f} "
                             f"(0.6->0.3: {coarse:.3f}; rates {rates}); exact-shell drift {exact:.2e}")


def test_criterion_4_fixed_points(eta_sweep):
    exact = eta_sweep["exact"][1]
    res = np.array([eta_sweep[k][1] for k in ETAS])
    slope = np.polyfit(np.log(ETAS), np.log(res), 1)[0]
    ok = exact <= 1e-14 and slope >= 0.9
    check("criterion 4", ok, f"exact-shell residual {exact:.2e}; mollified residual "
                             f"{', '.join(f'{r:.3e}' for r in res)} for eta {ETAS}, "
                             f"log-log slope {slope:.3f} (linear needs >= 0.9)")


def test_criterion_5_relaxation(canonical):
    traj = canonical["traj"]
    d = traj.column("dist_fd")
    t = traj.column("t")
    tail = d[t >= 0.75 * t[-1]]
    ok = d[-1] < 1e-3 and np.all(np.diff(tail) <= 0)
    check("criterion 5", ok, f"final sup-distance {d[-1]:.3e}; final-quarter nonincreasing "
                             f"{bool(np.all(np.diff(tail) <= 0))}")


def test_criterion_6_wick_oracle():
    L = 6
    g = fk.build_grid(1, L)
    rep = fo.car_ops(L)
    rng = np.random.default_rng(6)
    worst = 0.0
    for case in range(20):
        r = 1 + case % 3
        w = rng.uniform(size=L)
        state = fk.QuasifreeState(g, w)
        rho = fo.gaussian_state(rep, w)
        fs = [rng.normal(size=L) + 1j * rng.normal(size=L) for _ in range(r)]
        gs = [rng.normal(size=L) + 1j * rng.normal(size=L) for _ in range(r)]
        op = rep.identity
        for f in fs:
            op = op @ fo.creator(rep, f)
        for h in reversed(gs):
            op = op @ fo.annihilator(rep, h)
        worst = max(worst, abs(fo.exact_expect(rho, op) - fk.wick_expect(state, fs, gs)))
    check("criterion 6", worst <= 1e-10, f"20 cases r in 1..3, max error {worst:.2e}")


def test_criterion_7_block_variance(fd256):
    g = fk.build_grid(1, 64)
    A64 = fk.number_observable(g)
    prod = max(abs(fk.block_variance(fk.QuasifreeState(g, np.full(64, rho)), A64, K)
                   - 4 * rho * (1 - rho)) for rho in (0.1, 0.3, 0.5) for K in (1, 4, 16, 32))
    A = fk.number_observable(fd256.grid)
    S = fk.covariance_momentum(fd256, A, A)
    gap = abs(fk.block_variance(fd256, A, 64) - S)
    ok = prod <= 1e-14 and gap <= 1e-6
    check("criterion 7", ok, f"product-state deviation {prod:.1e}; |V_64 - S| = {gap:.3e} (S = {S:.12f})")


def test_criterion_8_ccr_positivity():
    g = fk.build_grid(1, 12)
    rng = np.random.default_rng(8)
    worst_ratio, worst_mod, largest_sigma = 0.0, 0.0, 0.0

    def draw():
        return fk.observable(g, {x: complex(*rng.normal(size=2)) for x in range(3)},
                             {x: complex(*rng.normal(size=2)) for x in range(3)})

    for _ in range(100):
        state = fk.QuasifreeState(g, rng.uniform(size=12))
        A, B = draw(), draw()
        sigma = fk.symplectic(state, A, B)
        bound = fk.covariance(state, A, A) * fk.covariance(state, B, B)
        worst_ratio = max(worst_ratio, (sigma / 2) ** 2 / bound)
        worst_mod = max(worst_mod, abs(abs(fk.ccr_phase(state, A, B)) - 1))
        largest_sigma = max(largest_sigma, abs(sigma))
    ok = worst_ratio <= 1 and worst_mod <= 1e-12
    check("criterion 8", ok, f"max (sigma/2)^2/(S_AA S_BB) = {worst_ratio:.2e} "
                             f"(largest |sigma| {largest_sigma:.1e}); max phase modulus defect {worst_mod:.1e}")


def test_criterion_9_first_order_vanishing():
    start = time.perf_counter()
    g = fk.build_grid(1, 32)
    e = fk.nearest_neighbor_band(g)
    v = fk.cosine_potential(g)
    state = fk.density_wave(fk.QuasifreeState(g, fk.fermi_dirac(g, e, 1.0, 0.0).w), 1, 1e-3)
    Ns = 16 * 2 ** np.arange(7)
    I = fk.first_order_probe(state, v, 1.0, fk.number_observable(g), Ns, e)
    slope = np.polyfit(np.log(Ns), np.log(np.abs(I)), 1)[0]
    secs = time.perf_counter() - start
    check("criterion 9", abs(slope + 0.5) <= 0.1 and secs < 120,
          f"slope {slope:.4f} over N = 16..1024, {secs:.2f} s")


KN = [8, 16, 32, 64, 128]


@pytest.fixture(scope="module")
def scans():
    g = fk.build_grid(1, 16)
    e = fk.nearest_neighbor_band(g)
    v = fk.cosine_potential(g)
    fd = fk.QuasifreeState(g, fk.fermi_dirac(g, e, 1.0, 0.0).w)
    A = fk.number_observable(g)
    var1 = fk.regime_scan(fd, v, 1.0, KN, KN, "variance", A, e, threads=1)
    var4 = fk.regime_scan(fd, v, 1.0, KN, KN, "variance", A, e, threads=4)
    mean = fk.regime_scan(fd, v, 1.0, KN, KN, "mean", A, e, threads=2)
    return var1, var4, mean


def test_criterion_10_kn_law(scans):
    var, _, mean = scans
    cells = [c for c in var.cells if 1 / 8 <= c.ratio <= 8 and c.value > 0]
    x = np.log([c.ratio for c in cells])
    exponent = np.polyfit(x, np.log([c.value for c in cells]), 1)[0]
    worst = max(c.value for c in mean.cells)
    ok = abs(exponent - 1.0) <= 0.15 and worst <= 1e-12
    check("criterion 10", ok, f"fitted exponent {exponent:.4f} over K/N in [1/8, 8] "
                              f"(all cells {var.exponent:.4f}); mean-level max {worst:.1e}")


def test_criterion_11_regime_labels(scans):
    var1, var4, _ = scans
    want = {(8, 128): fk.REGULAR, (64, 64): fk.SHIFTED, (128, 8): fk.DIVERGENT_CELL}
    got = {kn: var1.label(*kn) for kn in want}
    stable = [(c.K, c.N, c.value, c.label) for c in var1.cells] == \
        [(c.K, c.N, c.value, c.label) for c in var4.cells]
    ok = got == want and stable
    detail = ", ".join(f"{kn}: {got[kn]} (dV {var1.value(*kn):.4g})" for kn in want)
    check("criterion 11", ok, f"{detail}; thresholds {var1.thresholds['theta_r']:.4g}/"
                              f"{var1.thresholds['theta_d']:.4g}; threads 1 vs 4 identical {stable}")


def test_criterion_12_clustering_dichotomy(fd256):
    g = fd256.grid
    e = fk.nearest_neighbor_band(g)
    A = fk.number_observable(g)
    sea = fk.QuasifreeState(g, (e.values < 0).astype(float))
    # FD: log|C| is linear in d (geometric), the power law is not
    d = np.arange(1, 12, 2)
    c_fd = np.log(np.abs(fk.correlation_profile(fd256, A, A).real[d]))
    lin = np.polyfit(d, c_fd, 1, full=True)
    pw = np.polyfit(np.log(d), c_fd, 1, full=True)
    geometric = lin[1][0] < 1e-3 * pw[1][0]
    d = np.arange(1, 40, 2)
    c_sea = np.abs(fk.correlation_profile(sea, A, A).real[d])
    power = np.polyfit(np.log(d), np.log(c_sea), 1)[0]
    cls = fk.variance_limit(sea, A, [4, 8, 16, 32, 64]).classification
    ok = geometric and abs(power + 2) <= 0.3 and cls != fk.CONVERGENT
    check("criterion 12", ok, f"FD decay rate {-lin[0][0] / 2:.4f} per site, residuals "
                              f"exp {lin[1][0]:.1e} vs power {pw[1][0]:.1e}; "
                              f"sea exponent {power:.3f}, classified {cls}")


def test_criterion_13_weyl_drift_oracle():
    L = 8
    g = fk.build_grid(1, L)
    e = fk.nearest_neighbor_band(g)
    v = fk.cosine_potential(g)
    rep = fo.car_ops(L)
    state = fk.random_correlated_state(g, np.random.default_rng(13))
    rho = fo.gaussian_state_from_correlation(rep, state.position_correlation(), "position")
    A = fk.observable(g, {0: 1.0, 1: 0.5j}, {0: 0.3, 1: 1.0})
    ours = fk.weyl_drift(state, v, 1.0, A, 1.0, e)
    exact = fo.exact_drift(rho, rep, e, v, 1.0, A, 1.0)
    rel = abs(ours - exact) / abs(exact)
    zero_n = fk.weyl_drift(state, v, 1.0, fk.total_number_matrix(g), 1.0, e)
    zero_v = fk.weyl_drift(state, fk.constant_potential(g), 1.0, A, 1.0, e)
    ok = rel <= 1e-6 and abs(zero_n) <= 1e-15 and zero_v == 0
    check("criterion 13", ok, f"relative error {rel:.2e} (|drift| {abs(exact):.3e}); "
                              f"total number {abs(zero_n):.1e}; constant potential {abs(zero_v):.1e}")

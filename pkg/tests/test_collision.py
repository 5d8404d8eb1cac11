import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fermikinetics as fk
from fermikinetics.collision import matrix_element, mollifier
from fermikinetics.errors import ConfigError, ContractError, ResourceError

# plain-Python triple loop over (k, l, m) on nu=2, n=8, v = cos q1 + cos q2, eta=0.5, cut 1e-12
ORACLE_COUNT = 192704
ORACLE_WEIGHT_SUM = 479425.19261016254


def setup(dim, n, coeffs=(1.0,)):
    g = fk.build_grid(dim, n)
    return g, fk.nearest_neighbor_band(g), fk.cosine_potential(g, coeffs)


@pytest.fixture(scope="module")
def table28():
    g, e, v = setup(2, 8)
    return fk.build_table(g, e, v, fk.ScalingParameters(eta=0.5), threshold=1e-12)


def random_on_shell(grid, rng, count):
    k, l, m = rng.integers(0, grid.size, size=(3, count))
    return k, l, m, grid.combine(k, l, m)


class TestMatrixElement:
    def test_constant_potential(self):
        g = fk.build_grid(2, 8)
        v = fk.constant_potential(g, 2.5)
        k, l, m, p = random_on_shell(g, np.random.default_rng(0), 200)
        assert np.all(matrix_element(v, k, l, m, p) == 0)

    def test_direct_value(self):
        g = fk.build_grid(1, 4)
        v = fk.cosine_potential(g)
        k, m, p = g.locate(0.0), g.locate(np.pi / 2), g.locate(np.pi)
        l = g.locate(-np.pi / 2)
        assert matrix_element(v, k, l, m, p) == pytest.approx(-1.0)

    def test_antisymmetry_random_even_potential(self):
        g = fk.build_grid(1, 8)
        rng = np.random.default_rng(4)
        raw = rng.normal(size=8)
        vals = 0.5 * (raw + raw[g.neg(np.arange(8))])
        v = fk.PairPotential(g, vals)
        k, l, m, p = random_on_shell(g, rng, 100)
        M = matrix_element(v, k, l, m, p)
        np.testing.assert_allclose(matrix_element(v, l, k, m, p), -M, atol=1e-15)
        np.testing.assert_allclose(matrix_element(v, k, l, p, m), -M, atol=1e-15)
        np.testing.assert_allclose(matrix_element(v, m, p, k, l), M, atol=1e-15)

    def test_off_shell(self):
        g, _, v = setup(1, 8)
        with pytest.raises(ContractError):
            matrix_element(v, 0, 1, 2, 0)


class TestMollifier:
    def test_values(self):
        assert mollifier(0.3, 0.0) == pytest.approx(1 / (0.3 * np.sqrt(np.pi)))
        assert mollifier(0.3, 0.3) == pytest.approx(np.exp(-1) / (0.3 * np.sqrt(np.pi)), rel=1e-15)
        assert mollifier(0.7, 0.4) == mollifier(0.7, -0.4)

    def test_normalized(self):
        x = np.linspace(-10, 10, 200001)
        assert np.trapezoid(mollifier(0.4, x), x) == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("eta", [0.0, -1.0])
    def test_invalid(self, eta):
        with pytest.raises(ConfigError):
            mollifier(eta, 0.1)


class TestBuildTable:
    def test_constant_potential_empty(self):
        g = fk.build_grid(2, 8)
        t = fk.build_table(g, fk.nearest_neighbor_band(g), fk.constant_potential(g),
                           fk.ScalingParameters(eta=0.5))
        assert len(t) == 0

    def test_against_direct_enumeration(self, table28):
        assert len(table28) == ORACLE_COUNT
        assert table28.weight.sum() == pytest.approx(ORACLE_WEIGHT_SUM, rel=1e-12)

    def test_momentum_conservation(self, table28):
        g = table28.grid
        assert np.all(g.combine(table28.k, table28.l, table28.m) == table28.p)

    def test_lexicographic(self, table28):
        key = (table28.k.astype(np.int64) * 64 + table28.l) * 64 + table28.m
        assert np.all(np.diff(key) > 0)

    def test_kernel_symmetry(self, table28):
        t = table28
        lookup = {(a, b, c): w for a, b, c, w in zip(t.k, t.l, t.m, t.weight)}
        for perm in [(t.l, t.k, t.m), (t.k, t.l, t.p), (t.m, t.p, t.k)]:
            other = np.array([lookup[q] for q in zip(*perm)])
            np.testing.assert_array_equal(other, t.weight)

    def test_exact_shell(self):
        g, e, v = setup(2, 8)
        t = fk.build_table(g, e, v, fk.ScalingParameters(eta=0.5), mode=fk.EXACT_SHELL)
        dE = e.values[t.k] + e.values[t.l] - e.values[t.m] - e.values[t.p]
        assert np.max(np.abs(dE)) < 1e-12
        # component exchange family k=(a,b), l=(c,d), m=(a,d), p=(c,b)
        entries = set(zip(t.k, t.l, t.m))
        found = 0
        rng = np.random.default_rng(2)
        for a, b, c, d in rng.integers(0, 8, size=(200, 4)):
            k, l, m = g.flat([a, b]), g.flat([c, d]), g.flat([a, d])
            if matrix_element(v, k, l, m, g.flat([c, b])) != 0:
                assert (k, l, m) in entries
                found += 1
        assert found > 50

    def test_default_eta_recorded(self):
        g, e, v = setup(1, 16)
        t = fk.build_table(g, e, v, fk.ScalingParameters())
        assert t.eta == pytest.approx(fk.default_eta(g, e)) and t.meta["eta_default"]

    def test_resource_cap(self):
        g, e, v = setup(2, 8)
        with pytest.raises(ResourceError, match="max_entries=1000"):
            fk.build_table(g, e, v, fk.ScalingParameters(eta=0.5), max_entries=1000)


class TestCollisionRHS:
    def test_constant(self, table28):
        np.testing.assert_allclose(fk.collision_rhs(table28, np.full(64, 0.37)), 0, atol=1e-15)

    def test_against_direct(self, table28):
        g, e, v = setup(2, 8)
        w = np.random.default_rng(7).uniform(size=g.size)
        direct = fk.collision_rhs_direct(g, e, v, fk.ScalingParameters(eta=0.5), w)
        for backend in (None, "dense", "sparse", "entries"):
            np.testing.assert_allclose(fk.collision_rhs(table28, w, backend), direct, atol=1e-12)

    def test_direct_trivial(self):
        g, e, v = setup(1, 16)
        p = fk.ScalingParameters(eta=0.5)
        for c in (0.0, 1.0):
            assert np.all(fk.collision_rhs_direct(g, e, v, p, np.full(16, c)) == 0)

    def test_direct_agreement_1d(self):
        g, e, v = setup(1, 16, (1.0, 0.4))
        p = fk.ScalingParameters(eta=0.3)
        t = fk.build_table(g, e, v, p, threshold=0.0)
        rng = np.random.default_rng(3)
        worst = max(np.max(np.abs(fk.collision_rhs(t, w) - fk.collision_rhs_direct(g, e, v, p, w)))
                    for w in rng.uniform(size=(20, 16)))
        assert worst <= 1e-12

    def test_direct_budget(self):
        g, e, v = setup(2, 16)
        with pytest.raises(ResourceError):
            fk.collision_rhs_direct(g, e, v, fk.ScalingParameters(eta=0.3), np.zeros(256), budget=1e6)

    def test_fd_exact_shell(self):
        g, e, v = setup(2, 8)
        t = fk.build_table(g, e, v, fk.ScalingParameters(eta=0.5), mode=fk.EXACT_SHELL)
        w = fk.fermi_dirac(g, e, 1.3, -0.2).w
        assert np.max(np.abs(fk.collision_rhs(t, w))) <= 1e-14

    def test_grid_mismatch(self, table28):
        with pytest.raises(ContractError):
            fk.collision_rhs(table28, np.zeros(16))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_conservation_and_boundary(self, table28, seed):
        rng = np.random.default_rng(seed)
        w = rng.uniform(size=64)
        w[rng.integers(0, 64, 5)] = 0.0
        w[rng.integers(0, 64, 5)] = 1.0
        r = fk.collision_rhs(table28, w)
        assert abs(r.sum()) <= 1e-13 * np.abs(r).sum()
        assert np.all(r[w == 0.0] >= 0) and np.all(r[w == 1.0] <= 0)

    def test_lambda_scaling(self):
        g, e, v = setup(2, 8)
        w = np.random.default_rng(1).uniform(size=64)
        r1 = fk.collision_rhs(fk.build_table(g, e, v, fk.ScalingParameters(lam=1.0, eta=0.5), 0.0), w)
        r2 = fk.collision_rhs(fk.build_table(g, e, v, fk.ScalingParameters(lam=2.0, eta=0.5), 0.0), w)
        np.testing.assert_allclose(r2, 4 * r1, rtol=1e-13, atol=1e-16)

    def test_energy_flux_bound(self, table28):
        w = np.random.default_rng(5).uniform(size=64)
        e = table28.eps.values
        flux = abs(fk.energy_flux(table28, w))
        F = (w[table28.k] * w[table28.l] * (1 - w[table28.m]) * (1 - w[table28.p])
             - w[table28.m] * w[table28.p] * (1 - w[table28.k]) * (1 - w[table28.l]))
        dE = e[table28.k] + e[table28.l] - e[table28.m] - e[table28.p]
        bound = table28.eta * np.sum(table28.weight * np.abs(F)) / 64 ** 3
        assert flux <= bound
        # the flux is carried by the off-shell part: |sum weight F dE| / 4
        assert flux == pytest.approx(abs(np.sum(table28.weight * F * dE)) / 4 / 64 ** 3, rel=1e-9)

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fermikinetics as fk
from fermikinetics.errors import ConfigError, ContractError, DomainError

# independent high-precision direct sums (mpmath, 40 digits)
FD_ENTROPY_2D16 = 0.59509714205392013166
FD_ENERGY_2D16 = -0.21310049794561830828
# |w(x)| of FD(1,0), nu=1, n=256 at odd x; decay exponent per site fitted on x = 5..21
FD_PROFILE_ABS = {1: 0.11778570696201, 3: 0.00231004586763518, 5: 5.49199194110587e-5,
                  7: 1.32285306430269e-6, 9: 3.19057989984206e-8, 11: 7.6964738091056e-10}
FD_DECAY_PER_SITE = 1.8623569095479628


def band(dim, n):
    g = fk.build_grid(dim, n)
    return g, fk.nearest_neighbor_band(g)


class TestGrid:
    def test_small_grid_momenta(self):
        g = fk.build_grid(1, 4)
        np.testing.assert_allclose(g.momenta[:, 0], [-np.pi, -np.pi / 2, 0, np.pi / 2])

    def test_closure_example(self):
        g = fk.build_grid(1, 4)
        k = g.locate(-np.pi / 2)
        m = g.locate(np.pi / 2)
        assert g.momenta[g.combine(k, k, m)][0] == pytest.approx(np.pi / 2)

    def test_2d_size(self):
        g = fk.build_grid(2, 16)
        assert g.size == 256 and g.cell_weight == 1 / 256

    @pytest.mark.parametrize("dim,n", [(1, 4), (1, 32), (2, 8)])
    def test_exhaustive_closure(self, dim, n):
        g = fk.build_grid(dim, n)
        idx = np.arange(g.size)
        i, j = np.meshgrid(idx, idx, indexing="ij")
        s = g.add(i, j)
        q = g.momenta[i] + g.momenta[j]
        q = np.mod(q + np.pi, 2 * np.pi) - np.pi
        np.testing.assert_allclose(g.momenta[s], q, atol=1e-12)

    def test_zero_and_pi_on_grid(self):
        g = fk.build_grid(2, 8)
        assert g.locate([0.0, 0.0]) >= 0
        assert g.locate([np.pi, -np.pi]) == g.locate([-np.pi, -np.pi])

    @pytest.mark.parametrize("dim,n", [(1, 7), (1, 2), (1, 2048), (3, 8), (0, 8)])
    def test_invalid(self, dim, n):
        with pytest.raises(ConfigError):
            fk.build_grid(dim, n)


class TestFermiDirac:
    def test_beta_zero(self):
        g, e = band(2, 8)
        assert np.all(fk.fermi_dirac(g, e, 0.0, 0.0).w == 0.5)

    def test_step_limit(self):
        g, e = band(1, 16)
        w = fk.fermi_dirac(g, e, 1e6, 0.1).w
        np.testing.assert_array_equal(w, (e.values < 0.1).astype(float))

    def test_half_filling(self):
        g, e = band(2, 16)
        rho, _ = fk.density_energy(fk.fermi_dirac(g, e, 1.0, 0.0), e)
        assert rho == pytest.approx(0.5, abs=1e-15)

    @given(st.floats(-5, 5), st.floats(-2, 2))
    @settings(max_examples=50, deadline=None)
    def test_detailed_balance(self, beta, mu):
        g, e = band(2, 8)
        w = fk.fermi_dirac(g, e, beta, mu).w
        np.testing.assert_allclose(np.log(w / (1 - w)), -beta * (e.values - mu), atol=1e-12)


class TestPosition:
    def test_constant(self):
        g = fk.build_grid(2, 8)
        prof = fk.to_position(fk.QuasifreeState(g, np.full(g.size, 0.3)))
        expect = np.zeros(g.shape)
        expect[0, 0] = 0.3
        np.testing.assert_allclose(prof, expect, atol=1e-15)

    def test_zero(self):
        g = fk.build_grid(1, 8)
        assert np.all(fk.to_position(fk.QuasifreeState(g, np.zeros(8))) == 0)

    def test_fd_decay(self, fd256):
        prof = np.abs(fk.to_position(fd256))
        for x, val in FD_PROFILE_ABS.items():
            assert prof[x] == pytest.approx(val, rel=1e-9)
        xs = np.arange(5, 16, 2)
        rate = -np.polyfit(xs, np.log(prof[xs]), 1)[0]
        assert rate == pytest.approx(FD_DECAY_PER_SITE, rel=1e-3)

    def test_against_direct_sum(self):
        g = fk.build_grid(2, 6)
        w = np.random.default_rng(1).uniform(size=g.size)
        prof = fk.to_position(fk.QuasifreeState(g, w))
        for x in itertools.product(range(6), repeat=2):
            direct = np.mean(w * np.exp(1j * g.momenta @ np.array(x)))
            assert prof[x] == pytest.approx(direct, abs=1e-14)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_and_hermitian(self, seed):
        g = fk.build_grid(2, 8)
        w = np.random.default_rng(seed).uniform(size=g.size)
        prof = fk.to_position(fk.QuasifreeState(g, w))
        np.testing.assert_allclose(fk.from_position(g, prof), w, atol=1e-12)
        mirrored = np.roll(prof[::-1, ::-1], 1, axis=(0, 1))
        np.testing.assert_allclose(mirrored, prof.conj(), atol=1e-14)
        assert prof[0, 0].real == pytest.approx(w.mean())


class TestFunctionals:
    def test_entropy_trivial(self):
        assert fk.entropy_density(np.full(8, 0.5)) == pytest.approx(np.log(2))
        assert fk.entropy_density(np.zeros(8)) == 0.0
        assert fk.entropy_density(np.ones(8)) == 0.0

    def test_entropy_fd(self):
        g, e = band(2, 16)
        s = fk.entropy_density(fk.fermi_dirac(g, e, 1.0, 0.0))
        assert s == pytest.approx(FD_ENTROPY_2D16, rel=1e-13)

    @given(st.lists(st.floats(-0.5, 0.5), min_size=16, max_size=16))
    @settings(max_examples=50, deadline=None)
    def test_entropy_maximal_at_half(self, delta):
        w = 0.5 + np.array(delta)
        assert fk.entropy_density(w) <= np.log(2) + 1e-15
        assert 0 <= fk.entropy_density(w)

    @given(st.integers(0, 2**32 - 1), st.floats(0, 1))
    @settings(max_examples=30, deadline=None)
    def test_entropy_concave(self, seed, t):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(size=(2, 32))
        mix = fk.entropy_density(t * a + (1 - t) * b)
        assert mix >= t * fk.entropy_density(a) + (1 - t) * fk.entropy_density(b) - 1e-14

    def test_density_energy_trivial(self):
        g, e = band(2, 8)
        rho, en = fk.density_energy(np.ones(g.size), e)
        assert rho == 1.0 and en == pytest.approx(0.0, abs=1e-15)
        assert fk.density_energy(np.zeros(g.size), e) == (0.0, 0.0)

    def test_density_energy_fd(self):
        g, e = band(2, 16)
        rho, en = fk.density_energy(fk.fermi_dirac(g, e, 1.0, 0.0), e)
        assert rho == pytest.approx(0.5, abs=1e-15)
        assert en == pytest.approx(FD_ENERGY_2D16, rel=1e-13)

    def test_grid_mismatch(self):
        g, e = band(2, 8)
        g2 = fk.build_grid(2, 4)
        with pytest.raises(ContractError):
            fk.density_energy(fk.Occupation(g2, np.zeros(16)), e)


class TestMatchEquilibrium:
    @pytest.mark.parametrize("beta,mu", [(1.0, 0.0), (-0.7, 0.2)])
    def test_round_trip(self, beta, mu):
        g, e = band(2, 16)
        rho, en = fk.density_energy(fk.fermi_dirac(g, e, beta, mu), e)
        p = fk.match_equilibrium(rho, en, g, e)
        assert p.beta == pytest.approx(beta, abs=1e-8)
        assert p.mu == pytest.approx(mu, abs=1e-8)

    def test_degenerate(self):
        g, e = band(2, 16)
        p = fk.match_equilibrium(0.5, 0.0, g, e)
        assert p.degenerate and p.beta == 0.0 and p.c == pytest.approx(0.0)

    @given(st.floats(-5, 5).filter(lambda b: abs(b) > 1e-3), st.floats(-1.5, 1.5))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, beta, mu):
        g, e = band(2, 8)
        rho, en = fk.density_energy(fk.fermi_dirac(g, e, beta, mu), e)
        p = fk.match_equilibrium(rho, en, g, e)
        assert p.beta == pytest.approx(beta, abs=1e-8)
        assert p.mu == pytest.approx(mu, abs=1e-8)

    def test_unattainable(self):
        g, e = band(2, 8)
        with pytest.raises(DomainError):
            fk.match_equilibrium(0.5, -5.0, g, e)
        with pytest.raises(DomainError):
            fk.match_equilibrium(1.2, 0.0, g, e)

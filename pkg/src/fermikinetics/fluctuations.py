"""Fluctuation observables: block variances, Weyl characteristics and interaction corrections.

The interacting pieces use the quartic interaction

    V = sum_{k,l,m} M(k,l,m,p) b_k^* b_l^* b_m b_p,   p = k + l - m,

with ``M = v(k-p) - v(k-m)`` and the Heisenberg picture
``V(s) = exp(i H0 s) V exp(-i H0 s)`` of the free Hamiltonian
``H0 = sum_j eps_j b_j^* b_j``. Each quartic monomial then oscillates with
``exp(i D s)``, ``D = eps_k + eps_l - eps_m - eps_p``, and time integrals
reduce to ``I(D, t) = (exp(i D t) - 1) / (i D)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DomainError, NumericalError, ResourceError
from .lattice import PairPotential, QuasifreeState, nearest_neighbor_band, _as_values
from .quasifree import (QuadraticObservable, correlation_matrix, correlation_profile, covariance,
                        covariance_momentum, mean, number_observable, observable_matrix, symplectic)

__all__ = [
    "WeylElement",
    "VarianceLimit",
    "RegimeCell",
    "RegimeReport",
    "block_variance",
    "variance_limit",
    "weyl_char",
    "weyl_element",
    "ccr_phase",
    "time_integral",
    "drift_spectrum",
    "weyl_drift",
    "first_order_probe",
    "stationary_weight",
    "block_sum_matrix",
    "scaling_correction",
    "regime_scan",
    "CONVERGENT",
    "DIVERGENT",
    "REGULAR",
    "SHIFTED",
    "DIVERGENT_CELL",
]

CONVERGENT = "convergent"
DIVERGENT = "marginal/divergent"
REGULAR = "regular"
SHIFTED = "finite-shifted"
DIVERGENT_CELL = "divergent"
RESONANCE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class WeylElement:
    """Limit Weyl operator of a centered observable in the Gaussian fluctuation state."""

    observable: QuadraticObservable
    mean: float
    S: float

    @property
    def char(self) -> float:
        return float(np.exp(-0.5 * self.S))


@dataclass(frozen=True)
class VarianceLimit:
    """Result of :func:`variance_limit`; unpacks as ``(limit, classification)``."""

    limit: float | None
    classification: str
    K: tuple
    V: tuple
    defect: tuple
    decay_ratio: float | None
    growth_slope: float
    defect_slope: float | None

    def __iter__(self):
        return iter((self.limit, self.classification))


@dataclass(frozen=True)
class RegimeCell:
    K: int
    N: float
    value: float
    label: str | None

    @property
    def ratio(self) -> float:
        return self.K / self.N


@dataclass(frozen=True)
class RegimeReport:
    moment: str
    cells: tuple
    exponent: float | None
    thresholds: dict = field(default_factory=dict)
    v_inf: float | None = None

    def value(self, K, N) -> float:
        return self._cell(K, N).value

    def label(self, K, N) -> str | None:
        return self._cell(K, N).label

    def _cell(self, K, N):
        for c in self.cells:
            if c.K == K and c.N == N:
                return c
        raise KeyError((K, N))


def _minimal_image(n: int) -> np.ndarray:
    i = np.arange(n)
    return np.where(i < n // 2, i, i - n)


def block_variance(state, A: QuadraticObservable, K: int) -> float:
    """Fejer-weighted sum ``sum_{|d_a| < K} prod_a (1 - |d_a|/K) Re C(d)``.

    This is the variance of ``K^{-dim/2} sum_{x in block} (alpha_x A - <A>)``.
    Requires ``2K <= n``.
    """
    n = state.grid.n
    if K < 1 or 2 * K > n:
        raise ConfigError(f"block size K={K} must satisfy 1 <= K and 2K <= n={n}")
    prof = correlation_profile(state, A, A).real
    fejer = np.clip(1.0 - np.abs(_minimal_image(n)) / K, 0.0, None)
    weight = fejer
    for _ in range(state.grid.dim - 1):
        weight = np.multiply.outer(weight, fejer)
    return float(np.sum(weight * prof))


def variance_limit(state, A: QuadraticObservable, K_list) -> VarianceLimit:
    """Classify the block variances ``V_K`` and extrapolate their limit.

    The Fejer weights give ``V_K = S - D_K / K`` with a defect ``D_K`` that
    settles at a constant when the correlations are summable. From successive
    block sizes the defect is estimated as
    ``K1 K2 (V_K2 - V_K1) / (K2 - K1)``.

    * ``"convergent"``: the defect increments shrink geometrically (or sit
      at round-off level); the limit is the Richardson value
      ``(K2 V_K2 - K1 V_K1)/(K2 - K1)`` of the last pair.
    * ``"marginal/divergent"``: ``V_K`` grows (log-log slope > 0.1), or the
      defect grows (log-log slope of ``|D|`` > 0.1), or the increments fail to
      decay geometrically. No limit is returned.
    """
    Ks = [int(k) for k in K_list]
    if len(Ks) < 4:
        raise ConfigError("variance_limit needs at least 4 block sizes")
    if any(b <= a for a, b in zip(Ks, Ks[1:])):
        raise ConfigError("block sizes must be strictly increasing")
    V = np.array([block_variance(state, A, K) for K in Ks])
    K = np.array(Ks, dtype=float)
    D = K[:-1] * K[1:] * np.diff(V) / np.diff(K)
    rich = (K[1:] * V[1:] - K[:-1] * V[:-1]) / np.diff(K)
    noise = 1e-12 * max(1.0, float(np.max(np.abs(V)))) * K[-1]

    pos = V > 0
    growth = float(np.polyfit(np.log(K[pos]), np.log(V[pos]), 1)[0]) if pos.sum() >= 2 else 0.0
    Kmid = np.sqrt(K[:-1] * K[1:])
    big = np.abs(D) > noise
    dslope = None
    if big.sum() >= 3:
        dslope = float(np.polyfit(np.log(Kmid[big]), np.log(np.abs(D[big])), 1)[0])
    inc = np.abs(np.diff(D))
    ratio = None
    if np.all(inc <= noise):
        geometric = True
    else:
        live = inc > noise
        x = Kmid[1:][live]
        if live.sum() >= 2:
            slope = np.polyfit(x, np.log(inc[live]), 1)[0]
            ratio = float(np.exp(slope))
            # geometric decay per unit K, and the last increment is at most a small
            # fraction of the first: power-law tails fail the second test
            geometric = ratio < 1.0 and inc[-1] <= max(noise, 0.05 * inc[0])
        else:
            # one live increment followed by noise: effectively converged
            geometric = not live[-1]
    diverging = growth > 0.1 or (dslope is not None and dslope > 0.1)
    if geometric and not diverging:
        return VarianceLimit(float(rich[-1]), CONVERGENT, tuple(Ks), tuple(V), tuple(D),
                             ratio, growth, dslope)
    return VarianceLimit(None, DIVERGENT, tuple(Ks), tuple(V), tuple(D), ratio, growth, dslope)


def _default_blocks(n: int) -> list:
    Ks = [1 << i for i in range(0, 12) if 2 * (1 << i) <= n]
    if len(Ks) < 4:
        Ks = list(range(1, n // 2 + 1))
    return Ks


def weyl_element(state, A: QuadraticObservable) -> WeylElement:
    return WeylElement(A, mean(state, A), covariance(state, A, A))


def weyl_char(state, A: QuadraticObservable, K_list=None) -> float:
    """``exp(-S(A,A)/2)``, the Gaussian expectation of the limit Weyl operator.

    :raises DomainError: when the block variances of ``A`` do not converge.
    """
    K_list = _default_blocks(state.grid.n) if K_list is None else K_list
    lim = variance_limit(state, A, K_list)
    if lim.classification != CONVERGENT:
        raise DomainError("fluctuation algebra does not exist for A: block variances do not converge")
    return weyl_element(state, A).char


def ccr_phase(state, A: QuadraticObservable, B: QuadraticObservable) -> complex:
    """``exp(i sigma(A, B))``."""
    return complex(np.exp(1j * symplectic(state, A, B)))


def time_integral(omega, t):
    """``I(omega, t) = (exp(i omega t) - 1)/(i omega)``, equal to ``t`` at ``omega = 0``.

    Written as ``t exp(i omega t/2) sinc`` so that small frequencies lose no
    precision.
    """
    omega = np.asarray(omega, dtype=float)
    return t * np.exp(0.5j * omega * t) * np.sinc(omega * t / (2 * np.pi))


def _eps_values(state, eps):
    if eps is None:
        eps = nearest_neighbor_band(state.grid)
    e = _as_values(eps)
    if e.size != state.grid.size:
        raise ContractError("dispersion does not match the state's grid")
    return e


def drift_spectrum(state, v: PairPotential, A, eps=None, chunk: int = 1 << 20):
    """Frequency-resolved weight of ``<[V(s), A]>``.

    Returns ``(D, W)`` such that ``<[V(s), A]> = sum_u W_u exp(i D_u s)`` in
    the quasifree state. The Wick contraction of the quartic-quadratic
    commutator gives, with ``Z = Gamma A^T - A^T Gamma``,

        <[b_k^* b_l^* b_m b_p, A]> = G_lm Z_kp - G_lp Z_km + G_kp Z_lm - G_km Z_lp.

    Frequencies are merged after rounding to 12 decimals.
    """
    grid = state.grid
    grid.check_same(v.grid, "state and potential")
    e = _eps_values(state, eps)
    G = correlation_matrix(state)
    Am = observable_matrix(A)
    if Am.shape != G.shape:
        raise ContractError("observable does not match the state's grid")
    Z = G @ Am.T - Am.T @ G
    size = grid.size
    per_k = size * size
    kstep = max(1, chunk // per_k)
    lm_l = np.repeat(np.arange(size), size)
    lm_m = np.tile(np.arange(size), size)
    keys, wts = [], []
    for k0 in range(0, size, kstep):
        ks = np.arange(k0, min(size, k0 + kstep))
        k = np.repeat(ks, per_k)
        l = np.tile(lm_l, ks.size)
        m = np.tile(lm_m, ks.size)
        p = grid.combine(k, l, m)
        M = v.values[grid.sub(k, p)] - v.values[grid.sub(k, m)]
        nz = M != 0.0
        k, l, m, p, M = k[nz], l[nz], m[nz], p[nz], M[nz]
        E = G[l, m] * Z[k, p] - G[l, p] * Z[k, m] + G[k, p] * Z[l, m] - G[k, m] * Z[l, p]
        keys.append(np.round(e[k] + e[l] - e[m] - e[p], 12))
        wts.append(M * E)
    if not keys:
        return np.zeros(0), np.zeros(0, dtype=complex)
    keys = np.concatenate(keys)
    wts = np.concatenate(wts)
    D, inv = np.unique(keys, return_inverse=True)
    W = np.bincount(inv, wts.real, D.size) + 1j * np.bincount(inv, wts.imag, D.size)
    return D, W


def weyl_drift(state, v: PairPotential, lam: float, A, t: float, eps=None) -> complex:
    """``int_0^t <[lam V(s), A]> ds`` evaluated with analytic time integrals.

    Purely imaginary for self-adjoint ``A`` and linear in ``lam``.
    Translation-invariant states give exactly zero.
    """
    D, W = drift_spectrum(state, v, A, eps)
    return complex(lam * np.sum(W * time_integral(D, t)))


def stationary_weight(state, v: PairPotential, A, eps=None) -> complex:
    """Total weight of the resonant (``D = 0``) part of ``<[V(s), A]>``."""
    D, W = drift_spectrum(state, v, A, eps)
    return complex(np.sum(W[np.abs(D) < RESONANCE_TOL]))


def first_order_probe(state, v: PairPotential, lam: float, A, N, eps=None):
    """``I_1(N) = lam N^{-1/2} sum W_u I(D_u, N)``, the first-order term at time scale N.

    ``N`` may be a scalar or a sequence (the spectrum is computed once).
    """
    D, W = drift_spectrum(state, v, A, eps)
    Ns = np.atleast_1d(np.asarray(N, dtype=float))
    if np.any(Ns <= 0):
        raise ConfigError("N must be positive")
    out = np.array([lam / np.sqrt(x) * np.sum(W * time_integral(D, x)) for x in Ns])
    return complex(out[0]) if np.ndim(N) == 0 else out


def block_sum_matrix(A, grid, K: int) -> np.ndarray:
    """Mode matrix of ``sum_{x in [0, K)^dim} alpha_x A``."""
    Am = observable_matrix(A)
    p = grid.momenta
    dirichlet = np.ones((grid.size, grid.size), dtype=complex)
    x = np.arange(K)
    for a in range(grid.dim):
        dp = p[:, a][:, None] - p[:, a][None, :]
        dirichlet *= np.exp(1j * np.multiply.outer(dp, x)).sum(axis=-1)
    return Am * dirichlet


def _observable_weights(A: QuadraticObservable | None, grid):
    if A is None:
        A = number_observable(grid)
    return 0.5 * (A.fhat + A.ghat)


def _block_multiplicity(grid, K: int) -> np.ndarray:
    """How often each torus site occurs in ``[0, K)^dim`` reduced mod n."""
    n = grid.n
    i = np.arange(n)
    per_axis = np.where(i < K, (K - 1 - i) // n + 1, 0).astype(float)
    out = per_axis
    for _ in range(grid.dim - 1):
        out = np.multiply.outer(out, per_axis)
    return out


class _CorrectionKernel:
    """Precomputed pieces of the second-order block-variance correction.

    For fixed ``N`` the kernel evaluates

        g_N(x) = sum_{l,m} w_l (1 - w_m) |a_lm(x)|^2,
        a_lm(x) = n^-dim sum_k phi_k M(k,l,m,k+l-m) I(eps_l - eps_m + eps_k, N) exp(i p_k x),

    on the torus; the block sum over ``x in [0, K)^dim`` follows by
    multiplicities.
    """

    def __init__(self, state, v, A, eps, exclude_resonant, budget):
        if not isinstance(state, QuasifreeState):
            raise ContractError("the correction kernel needs a translation-invariant state")
        grid = state.grid
        grid.check_same(v.grid, "state and potential")
        size = grid.size
        if float(size) ** 3 > budget:
            raise ResourceError(f"correction kernel needs {size ** 3} terms, budget {budget:g}")
        e = _eps_values(state, eps)
        self.grid = grid
        k, l, m = np.meshgrid(np.arange(size), np.arange(size), np.arange(size), indexing="ij")
        p = grid.combine(k, l, m)
        self.M = (v.values[grid.sub(k, p)] - v.values[grid.sub(k, m)]) * \
            _observable_weights(A, grid)[:, None, None]
        self.omega = e[k] + e[l] - e[m]
        if exclude_resonant:
            self.M = np.where(np.abs(self.omega) < RESONANCE_TOL, 0.0, self.M)
        w = state.w
        self.occ = w[:, None] * (1.0 - w[None, :])

    def profile(self, N: float) -> np.ndarray:
        grid = self.grid
        amp = self.M * time_integral(self.omega, N)
        # sum_k c_k exp(i p_k x): shifted inverse FFT along k
        amp = amp.reshape(grid.shape + (grid.size, grid.size))
        axes = tuple(range(grid.dim))
        sign = _checker(grid).reshape(grid.shape + (1, 1))
        a = sign * np.fft.ifftn(amp, axes=axes)  # n^-dim already included
        g = np.einsum("lm,...lm->...", self.occ, np.abs(a) ** 2)
        return g / grid.size ** 2

    def value(self, g: np.ndarray, K: int, N: float) -> float:
        mult = _block_multiplicity(self.grid, K)
        return float(np.sum(mult * g) / (K ** self.grid.dim * N))


def _checker(grid):
    x = np.indices(grid.shape).sum(axis=0)
    return np.where(x % 2 == 0, 1.0, -1.0)


def scaling_correction(state, v: PairPotential, lam: float, K: int, N: float,
                       A: QuadraticObservable | None = None, eps=None,
                       exclude_resonant: bool = True, budget: float = 2e8) -> float:
    """Second-order correction ``dV(K, N)`` to the block variance.

    ``dV = lam^2 / (K^dim N) sum_{x in [0,K)^dim} sum_{l,m} w_l (1 - w_m) |a_lm(x)|^2``
    with ``a_lm`` as in :class:`_CorrectionKernel` (grid sums carry the cell
    weight ``n^-dim`` each). The observable enters through
    ``phi = (f_hat + g_hat)/2``; the default observable is ``2 n_0``.
    Resonant terms (``eps_l - eps_m + eps_k = 0``) grow like ``N`` and belong
    to the kinetic evolution of the mean; they are dropped unless
    ``exclude_resonant`` is False.
    """
    if K < 1 or not N > 0:
        raise ConfigError("need K >= 1 and N > 0")
    if lam == 0:
        return 0.0
    kern = _CorrectionKernel(state, v, A, eps, exclude_resonant, budget)
    return lam ** 2 * kern.value(kern.profile(N), int(K), float(N))


def regime_scan(state, v: PairPotential, lam: float, K_values, N_values, moment: str = "variance",
                A: QuadraticObservable | None = None, eps=None, theta_r: float | None = None,
                theta_d: float | None = None, threads: int = 1,
                exclude_resonant: bool = True) -> RegimeReport:
    """Tabulate the interaction correction over a grid of block sizes and time scales.

    ``moment="variance"`` tabulates :func:`scaling_correction`, fits
    ``log dV`` against ``log(K/N)`` and labels every cell: regular below
    ``theta_r``, divergent above ``theta_d`` when ``dV`` also grows with ``K``
    at fixed ``N``, finite-shifted otherwise. Thresholds default to
    ``0.05 V_inf`` and ``V_inf``, where ``V_inf = S(A, A)`` of the
    unperturbed state.

    ``moment="mean"`` tabulates the block-averaged first-order correction
    ``K^{-dim/2} I_1`` of the mean; for translation-invariant states every
    entry must vanish to 1e-12.

    Cells are evaluated on ``threads`` workers; results do not depend on the
    worker count.
    """
    Ks = sorted({int(k) for k in K_values})
    Ns = sorted({float(x) for x in N_values})
    if not Ks or not Ns:
        raise ConfigError("K and N grids must be nonempty")
    grid = state.grid
    A = number_observable(grid) if A is None else A
    threads = max(1, int(threads))

    if moment == "mean":
        def mean_cell(K):
            Am = block_sum_matrix(A, grid, K)
            vals = first_order_probe(state, v, lam, Am, Ns, eps)
            return np.abs(vals) / K ** (grid.dim / 2)

        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(mean_cell, Ks))
        cells = tuple(RegimeCell(K, N, float(rows[i][j]), None)
                      for i, K in enumerate(Ks) for j, N in enumerate(Ns))
        worst = max(c.value for c in cells)
        if isinstance(state, QuasifreeState) and worst > 1e-12:
            raise NumericalError(f"mean-level correction {worst:.3e} exceeds 1e-12 for a "
                                 "translation-invariant state")
        return RegimeReport("mean", cells, None, {"tolerance": 1e-12}, None)

    if moment != "variance":
        raise ConfigError(f"moment must be 'mean' or 'variance', got {moment!r}")
    ratios = {K / N for K in Ks for N in Ns}
    if len(ratios) < 3:
        raise ConfigError("regime scan needs at least 3 distinct K/N ratios")
    v_inf = covariance_momentum(state, A, A) if isinstance(state, QuasifreeState) \
        else covariance(state, A, A)
    theta_r = 0.05 * v_inf if theta_r is None else float(theta_r)
    theta_d = v_inf if theta_d is None else float(theta_d)
    if lam == 0:
        table = {(K, N): 0.0 for K in Ks for N in Ns}
    else:
        kern = _CorrectionKernel(state, v, A, eps, exclude_resonant, 2e8)

        def column(N):
            g = kern.profile(N)
            return [lam ** 2 * kern.value(g, K, N) for K in Ks]

        with ThreadPoolExecutor(threads) as pool:
            cols = list(pool.map(column, Ns))
        table = {(K, N): cols[j][i] for j, N in enumerate(Ns) for i, K in enumerate(Ks)}

    def increasing(K, N):
        i = Ks.index(K)
        if i > 0:
            return table[(K, N)] >= table[(Ks[i - 1], N)]
        if len(Ks) > 1:
            return table[(Ks[1], N)] >= table[(K, N)]
        return True

    cells = []
    for K in Ks:
        for N in Ns:
            val = table[(K, N)]
            if val < theta_r:
                label = REGULAR
            elif val > theta_d and increasing(K, N):
                label = DIVERGENT_CELL
            else:
                label = SHIFTED
            cells.append(RegimeCell(K, N, float(val), label))
    pos = [c for c in cells if c.value > 0]
    exponent = None
    if len({c.ratio for c in pos}) >= 3:
        x = np.log([c.ratio for c in pos])
        y = np.log([c.value for c in pos])
        exponent = float(np.polyfit(x, y, 1)[0])
    return RegimeReport("variance", tuple(cells), exponent,
                        {"theta_r": theta_r, "theta_d": theta_d}, v_inf)

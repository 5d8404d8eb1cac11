"""Wick calculus for gauge-invariant quasifree states.

Conventions
-----------
Smeared operators are ``a(g) = sum_x g(x) a_x`` and ``a*(f) = a(f)^*``.
Momentum transforms are ``f_hat(p) = sum_x f(x) exp(-i p x)`` and the mode
operators ``b_j = n^{-dim/2} sum_x exp(i p_j x) a_x`` satisfy
``a(g) = n^{-dim/2} sum_j g_hat(p_j) b_j``.

A translation-invariant state (:class:`~fermikinetics.lattice.QuasifreeState`)
has ``<b_i^* b_j> = delta_ij w_j``. A :class:`CorrelatedState` carries an
arbitrary momentum correlation matrix ``Gamma_ij = <b_i^* b_j>`` with
``0 <= Gamma <= 1``; it is used for states that break translation invariance.

Observables are ``A = a*(f) a(g) + a*(g) a(f)``. The single-site number
observable ``f = g = delta_0`` is therefore ``A = 2 n_0``, so a product state
of density ``rho`` gives ``<A> = 2 rho`` and ``S(A, A) = 4 rho (1 - rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError
from .lattice import MomentumGrid, QuasifreeState, _checkerboard, from_position

__all__ = [
    "QuadraticObservable",
    "CorrelatedState",
    "observable",
    "number_observable",
    "total_number_matrix",
    "two_point",
    "wick_expect",
    "translate",
    "free_evolve_obs",
    "mean",
    "truncated_corr",
    "correlation_profile",
    "commutator_expect",
    "symplectic",
    "covariance",
    "covariance_momentum",
    "observable_matrix",
    "correlation_matrix",
    "density_wave",
    "from_position_correlation",
    "random_correlated_state",
    "is_translation_invariant",
]


def _profile_from_hat(grid: MomentumGrid, hat) -> np.ndarray:
    """Inverse momentum transform: ``f(x) = n^-dim sum_j f_hat_j exp(i p_j x)``."""
    return _checkerboard(grid) * np.fft.ifftn(np.asarray(hat).reshape(grid.shape))


def _support_diameter(grid: MomentumGrid, profile) -> int:
    """Largest per-axis extent of the support, measured on the torus."""
    nz = np.argwhere(np.abs(profile) > 0)
    if nz.size == 0:
        return 0
    worst = 0
    for a in range(grid.dim):
        pts = np.unique(nz[:, a])
        gaps = np.diff(np.concatenate([pts, [pts[0] + grid.n]]))
        worst = max(worst, int(grid.n - gaps.max()))
    return worst


@dataclass(frozen=True, eq=False)
class QuadraticObservable:
    """Self-adjoint ``a*(f) a(g) + a*(g) a(f)`` for profiles on the torus.

    ``f`` and ``g`` are complex arrays of shape ``grid.shape`` indexed by
    ``x mod n``. The support of each profile must fit in ``n/4`` sites per axis
    unless ``check_support`` is disabled (evolved observables spread over
    the whole torus).
    """

    grid: MomentumGrid
    f: np.ndarray
    g: np.ndarray
    check_support: bool = True
    fhat: np.ndarray = field(init=False, repr=False)
    ghat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        f = np.asarray(self.f, dtype=complex)
        g = np.asarray(self.g, dtype=complex)
        for name, prof in (("f", f), ("g", g)):
            if prof.shape != self.grid.shape:
                raise ContractError(
                    f"profile {name} has shape {prof.shape}, torus is {self.grid.shape}")
            if self.check_support:
                diam = _support_diameter(self.grid, prof)
                if diam > self.grid.n // 4:
                    raise DomainError(
                        f"support diameter {diam} of {name} exceeds n/4 = {self.grid.n // 4}")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "fhat", from_position(self.grid, f))
        object.__setattr__(self, "ghat", from_position(self.grid, g))

    @property
    def terms(self):
        """``(creator profile, annihilator profile)`` transforms of the two bilinears."""
        return ((self.fhat, self.ghat), (self.ghat, self.fhat))

    def scaled(self, c: float) -> "QuadraticObservable":
        """The observable ``c A`` for real ``c`` (profile ``f`` scaled by ``c``)."""
        return QuadraticObservable(self.grid, c * self.f, self.g, self.check_support)


def observable(grid: MomentumGrid, f, g=None, check_support=True) -> QuadraticObservable:
    """Build ``a*(f)a(g) + a*(g)a(f)``; ``g`` defaults to ``f``.

    Profiles may be given as full torus arrays or as ``{site: value}`` dicts
    with integer (1D) or tuple (2D) sites.
    """

    def dense(prof):
        if isinstance(prof, dict):
            arr = np.zeros(grid.shape, dtype=complex)
            for site, val in prof.items():
                idx = tuple(np.mod(np.atleast_1d(site), grid.n))
                arr[idx] += val
            return arr
        return np.asarray(prof, dtype=complex)

    f = dense(f)
    g = f if g is None else dense(g)
    return QuadraticObservable(grid, f, g, check_support)


def number_observable(grid: MomentumGrid, site=0) -> QuadraticObservable:
    """``A = 2 n_site`` (both profiles equal to the site indicator)."""
    site = tuple(int(s) for s in np.broadcast_to(np.atleast_1d(site), (grid.dim,)))
    return observable(grid, {site: 1.0})


def total_number_matrix(grid: MomentumGrid) -> np.ndarray:
    """Mode matrix of ``2 N_tot = sum_x 2 n_x``, i.e. twice the identity.

    The total number is not a single bilinear ``a*(f)a(g) + h.c.``; routines
    working in the mode basis accept this matrix in place of an observable.
    """
    return 2.0 * np.eye(grid.size, dtype=complex)


@dataclass(frozen=True, eq=False)
class CorrelatedState:
    """Gauge-invariant quasifree state with momentum correlation ``Gamma_ij = <b_i^* b_j>``."""

    grid: MomentumGrid
    gamma: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.gamma, dtype=complex)
        size = self.grid.size
        if G.shape != (size, size):
            raise ContractError(f"correlation matrix must be {size}x{size}, got {G.shape}")
        if np.max(np.abs(G - G.conj().T)) > 1e-12:
            raise DomainError("correlation matrix is not hermitian")
        G = 0.5 * (G + G.conj().T)
        ev = np.linalg.eigvalsh(G)
        if ev[0] < -1e-12 or ev[-1] > 1 + 1e-12:
            raise DomainError(f"correlation spectrum outside [0, 1]: [{ev[0]}, {ev[-1]}]")
        object.__setattr__(self, "gamma", G)

    @property
    def correlation(self) -> np.ndarray:
        return self.gamma

    def position_correlation(self) -> np.ndarray:
        """``C_xy = <a_x^* a_y>`` over flat torus sites."""
        U = _mode_matrix(self.grid)
        return U @ self.gamma @ U.conj().T


def _mode_matrix(grid: MomentumGrid) -> np.ndarray:
    """``U[x, j] = exp(i p_j x) / sqrt(|grid|)`` so that ``b_j = sum_x U[x, j] a_x``."""
    x = np.indices(grid.shape).reshape(grid.dim, -1).T
    return np.exp(1j * x @ grid.momenta.T) / np.sqrt(grid.size)


def correlation_matrix(state) -> np.ndarray:
    """Momentum correlation matrix of either state type."""
    if isinstance(state, QuasifreeState):
        return np.diag(state.w).astype(complex)
    return state.gamma


def is_translation_invariant(state) -> bool:
    return isinstance(state, QuasifreeState)


def from_position_correlation(grid: MomentumGrid, C) -> CorrelatedState:
    """State with ``<a_x^* a_y> = C[x, y]`` (flat torus sites)."""
    U = _mode_matrix(grid)
    C = np.asarray(C, dtype=complex)
    return CorrelatedState(grid, U.conj().T @ C @ U)


def density_wave(state: QuasifreeState, q, amplitude: float) -> CorrelatedState:
    """Translation-invariant state plus a real density modulation at wave vector ``q``.

    Adds ``amplitude/2`` to ``Gamma[j, j+q]`` and to its hermitian mirror.
    ``q`` is a flat grid offset (integer coordinates for 2D).
    """
    grid = state.grid
    G = np.diag(state.w).astype(complex)
    j = np.arange(grid.size)
    shift = grid.flat(grid.coords + np.atleast_1d(q))
    D = np.zeros_like(G)
    D[j, shift] += amplitude
    G = G + 0.5 * (D + D.conj().T)
    return CorrelatedState(grid, G)


def random_correlated_state(grid: MomentumGrid, rng, spread: float = 1.0) -> CorrelatedState:
    """Random Gaussian state: Haar-like unitary rotation of random occupations."""
    size = grid.size
    Z = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    Q, R = np.linalg.qr(Z)
    Q = Q * (np.diag(R) / np.abs(np.diag(R)))
    lam = 0.5 + spread * (rng.uniform(size=size) - 0.5)
    return CorrelatedState(grid, (Q * lam) @ Q.conj().T)


def _check_grid(state, grid):
    state.grid.check_same(grid, "state and observable")


def _hat(state, prof) -> np.ndarray:
    prof = np.asarray(prof, dtype=complex)
    if prof.shape != state.grid.shape:
        raise ContractError(f"profile shape {prof.shape} does not match torus {state.grid.shape}")
    return from_position(state.grid, prof)


def _pair(state, fh, gh) -> complex:
    """``<a*(f) a(g)>`` from momentum transforms."""
    if isinstance(state, QuasifreeState):
        return complex(np.sum(state.w * np.conj(fh) * gh)) / state.grid.size
    return complex(np.conj(fh) @ state.gamma @ gh) / state.grid.size


def _hole(state, gh, fh) -> complex:
    """``<a(g) a*(f)>`` from momentum transforms."""
    if isinstance(state, QuasifreeState):
        return complex(np.sum((1.0 - state.w) * np.conj(fh) * gh)) / state.grid.size
    return complex(np.conj(fh) @ gh - np.conj(fh) @ state.gamma @ gh) / state.grid.size


def two_point(state, f, g) -> complex:
    """``<a*(f) a(g)> = n^-dim sum_j w_j conj(f_hat_j) g_hat_j`` for position profiles."""
    return _pair(state, _hat(state, f), _hat(state, g))


def wick_expect(state, creators, annihilators) -> complex:
    """``<a*(f_1)...a*(f_r) a(g_r)...a(g_1)>`` as ``det[<a*(f_i) a(g_j)>]``.

    Unequal numbers of creators and annihilators give 0 by gauge invariance.
    """
    if len(creators) != len(annihilators):
        return 0.0 + 0.0j
    r = len(creators)
    if r == 0:
        return 1.0 + 0.0j
    fh = [_hat(state, f) for f in creators]
    gh = [_hat(state, g) for g in annihilators]
    M = np.array([[_pair(state, fi, gj) for gj in gh] for fi in fh])
    return complex(np.linalg.det(M))


def translate(A: QuadraticObservable, x) -> QuadraticObservable:
    """``alpha_x A``: profiles shifted by the lattice vector ``x`` with wraparound."""
    shift = tuple(int(s) for s in np.atleast_1d(x))
    if len(shift) != A.grid.dim:
        raise ContractError(f"translation must have {A.grid.dim} components")
    axes = tuple(range(A.grid.dim))
    return QuadraticObservable(A.grid, np.roll(A.f, shift, axes), np.roll(A.g, shift, axes),
                               check_support=False)


def free_evolve_obs(A: QuadraticObservable, eps, t: float) -> QuadraticObservable:
    """Free evolution of the profiles: ``f_hat -> exp(i eps t) f_hat``, same for ``g``."""
    e = np.asarray(getattr(eps, "values", eps), dtype=float).reshape(-1)
    phase = np.exp(1j * e * t)
    grid = A.grid
    return QuadraticObservable(grid, _profile_from_hat(grid, phase * A.fhat),
                               _profile_from_hat(grid, phase * A.ghat), check_support=False)


def mean(state, A: QuadraticObservable) -> float:
    """``<A> = 2 Re <a*(f) a(g)>``."""
    _check_grid(state, A.grid)
    return 2.0 * _pair(state, A.fhat, A.ghat).real


def _tc(state, A: QuadraticObservable, B: QuadraticObservable) -> complex:
    """``<A B> - <A><B>``: the single cross contraction of the Wick expansion."""
    total = 0.0 + 0.0j
    for f1, g1 in A.terms:
        for f2, g2 in B.terms:
            total += _pair(state, f1, g2) * _hole(state, g1, f2)
    return total


def truncated_corr(state, A: QuadraticObservable, B: QuadraticObservable, d) -> complex:
    """``<A alpha_d(B)> - <A><alpha_d(B)>`` for a lattice vector ``d``."""
    _check_grid(state, A.grid)
    _check_grid(state, B.grid)
    return _tc(state, A, translate(B, d))


def correlation_profile(state, A: QuadraticObservable, B: QuadraticObservable) -> np.ndarray:
    """``truncated_corr(A, B, d)`` for every ``d`` on the torus (array of torus shape).

    Translation-invariant states use FFTs; general states are summed directly.
    """
    _check_grid(state, A.grid)
    _check_grid(state, B.grid)
    grid = state.grid
    if isinstance(state, QuasifreeState):
        w = state.w
        out = np.zeros(grid.shape, dtype=complex)
        for f1, g1 in A.terms:
            for f2, g2 in B.terms:
                c1 = (w * np.conj(f1) * g2).reshape(grid.shape)
                c2 = ((1.0 - w) * np.conj(f2) * g1).reshape(grid.shape)
                out += np.fft.fftn(c1) / grid.size * np.fft.ifftn(c2)
        return out
    out = np.empty(grid.shape, dtype=complex)
    for d in np.ndindex(*grid.shape):
        out[d] = _tc(state, A, translate(B, d))
    return out


def commutator_expect(state, A: QuadraticObservable, B: QuadraticObservable) -> complex:
    """``<[A, B]>`` from the bilinear commutator identity.

    ``[a*(f)a(g), a*(f')a(g')] = <f', g> a*(f)a(g') - <f, g'> a*(f')a(g)``
    where ``<u, v> = sum_x conj(u(x)) v(x)``.
    """
    size = state.grid.size
    total = 0.0 + 0.0j
    for f1, g1 in A.terms:
        for f2, g2 in B.terms:
            # Parseval: sum_x conj(u) v = n^-dim sum_p conj(u_hat) v_hat
            c1 = np.vdot(f2, g1) / size
            c2 = np.vdot(f1, g2) / size
            total += c1 * _pair(state, f1, g2) - c2 * _pair(state, f2, g1)
    return total


def symplectic(state, A: QuadraticObservable, B: QuadraticObservable) -> float:
    """``sigma(A, B) = -i sum_x <[A, alpha_x B]>`` summed over the torus."""
    _check_grid(state, A.grid)
    _check_grid(state, B.grid)
    total = 0.0 + 0.0j
    for x in np.ndindex(*state.grid.shape):
        total += commutator_expect(state, A, translate(B, x))
    return float((-1j * total).real)


def covariance(state, A: QuadraticObservable, B: QuadraticObservable) -> float:
    """``S(A, B) = sum_x (1/2) <{A - <A>, alpha_x B - <alpha_x B>}>`` by direct summation over x.

    For translation-invariant states this equals
    ``sum_x (1/2)[tc(A, B, x) + tc(B, A, -x)]``.
    """
    if isinstance(state, QuasifreeState):
        s = 0.5 * (correlation_profile(state, A, B).sum() + correlation_profile(state, B, A).sum())
        return float(s.real)
    total = 0.0 + 0.0j
    for x in np.ndindex(*state.grid.shape):
        Bx = translate(B, x)
        total += 0.5 * (_tc(state, A, Bx) + _tc(state, Bx, A))
    return float(total.real)


def covariance_momentum(state: QuasifreeState, A: QuadraticObservable,
                        B: QuadraticObservable) -> float:
    """Closed-form ``S(A, B) = n^-dim sum_p w(1-w) a_p b_p`` with ``a_p = 2 Re(conj f_hat g_hat)``.

    Only defined for translation-invariant states.
    """
    if not isinstance(state, QuasifreeState):
        raise ContractError("the momentum formula needs a translation-invariant state")
    a = 2.0 * np.real(np.conj(A.fhat) * A.ghat)
    b = 2.0 * np.real(np.conj(B.fhat) * B.ghat)
    w = state.w
    return float(np.sum(w * (1.0 - w) * a * b) / state.grid.size)


def observable_matrix(A) -> np.ndarray:
    """Coefficients ``A_ij`` with ``A = sum_ij A_ij b_i^* b_j``.

    A square array is returned unchanged (already a mode matrix).
    """
    if isinstance(A, np.ndarray):
        return A
    size = A.grid.size
    return (np.outer(np.conj(A.fhat), A.ghat) + np.outer(np.conj(A.ghat), A.fhat)) / size

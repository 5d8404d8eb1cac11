"""Exact finite-lattice fermion Fock space used as ground truth.

Site operators come from the Jordan-Wigner construction on a ring of ``L``
sites. Momentum modes are ``b_j = L^{-1/2} sum_x exp(i p_j x) a_x`` with
``p_j = -pi + 2 pi j / L``, matching the lattice grid convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from .errors import ConfigError, ContractError, ConvergenceError
from .lattice import PairPotential

__all__ = [
    "FockRep",
    "car_ops",
    "annihilator",
    "creator",
    "number_operator",
    "quadratic_operator",
    "gaussian_state",
    "gaussian_state_from_correlation",
    "interaction_operator",
    "build_hamiltonian",
    "exact_expect",
    "exact_evolve_expect",
    "exact_drift",
    "car_defect",
]

MAX_SITES = 12


@dataclass(frozen=True, eq=False)
class FockRep:
    """CAR operators on the ``2**L`` dimensional Fock space (sparse CSR matrices)."""

    L: int
    a: tuple
    b: tuple
    momenta: np.ndarray

    @property
    def dim(self) -> int:
        return 2 ** self.L

    @property
    def identity(self):
        return sparse.identity(self.dim, dtype=complex, format="csr")


def _jw_site(L, x):
    lower = sparse.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex))
    z = sparse.diags([1.0, -1.0]).astype(complex)
    eye = sparse.identity(2, dtype=complex)
    op = sparse.identity(1, dtype=complex, format="csr")
    for y in range(L):
        op = sparse.kron(op, z if y < x else lower if y == x else eye, format="csr")
    return op


def car_defect(ops) -> float:
    """Largest deviation from the canonical anticommutation relations."""
    dim = ops[0].shape[0]
    eye = sparse.identity(dim, dtype=complex, format="csr")
    worst = 0.0
    for i, ai in enumerate(ops):
        for j, aj in enumerate(ops):
            anti = ai @ aj.conj().T + aj.conj().T @ ai
            if i == j:
                anti = anti - eye
            worst = max(worst, _max_abs(anti), _max_abs(ai @ aj + aj @ ai))
    return worst


def _max_abs(m) -> float:
    if sparse.issparse(m):
        return float(np.max(np.abs(m.data), initial=0.0))
    return float(np.max(np.abs(m), initial=0.0))


def car_ops(L: int, verify: bool = True) -> FockRep:
    """Jordan-Wigner site operators and momentum modes on a ring of ``L`` sites."""
    if not isinstance(L, (int, np.integer)) or not 2 <= L <= MAX_SITES:
        raise ConfigError(f"site count must be an integer in [2, {MAX_SITES}], got {L!r}")
    a = tuple(_jw_site(L, x) for x in range(L))
    p = -np.pi + 2 * np.pi * np.arange(L) / L
    b = tuple(sum(np.exp(1j * p[j] * x) * a[x] for x in range(L)).tocsr() / np.sqrt(L)
              for j in range(L))
    if verify:
        err = car_defect(a)
        if err > 1e-13:
            raise ConvergenceError(f"CAR relations violated by {err:.2e}")
    return FockRep(L, a, b, p)


def annihilator(rep: FockRep, g):
    """``a(g) = sum_x g(x) a_x``."""
    g = np.asarray(g, dtype=complex).reshape(-1)
    if g.size != rep.L:
        raise ContractError(f"profile has {g.size} sites, Fock space has {rep.L}")
    out = sparse.csr_matrix((rep.dim, rep.dim), dtype=complex)
    for x in np.flatnonzero(g):
        out = out + g[x] * rep.a[x]
    return out


def creator(rep: FockRep, f):
    """``a*(f) = a(f)^*``."""
    return annihilator(rep, f).conj().T.tocsr()


def number_operator(rep: FockRep):
    return sum(op.conj().T @ op for op in rep.a).tocsr()


def quadratic_operator(rep: FockRep, A):
    """Fock matrix of ``a*(f)a(g) + a*(g)a(f)`` built from site operators.

    ``A`` may also be a mode matrix ``A_ij`` meaning ``sum_ij A_ij b_i^* b_j``.
    """
    if isinstance(A, np.ndarray):
        out = sparse.csr_matrix((rep.dim, rep.dim), dtype=complex)
        for i, j in zip(*np.nonzero(A)):
            out = out + A[i, j] * (rep.b[i].conj().T @ rep.b[j])
        return out.tocsr()
    f = np.asarray(A.f).reshape(-1)
    g = np.asarray(A.g).reshape(-1)
    return (creator(rep, f) @ annihilator(rep, g) + creator(rep, g) @ annihilator(rep, f)).tocsr()


def _product_state(rep: FockRep, modes, occ) -> np.ndarray:
    rho = sparse.identity(rep.dim, dtype=complex, format="csr")
    eye = rep.identity
    for c, lam in zip(modes, occ):
        n = (c.conj().T @ c).tocsr()
        rho = rho @ (lam * n + (1.0 - lam) * (eye - n))
    return rho.toarray()


def gaussian_state(rep: FockRep, w) -> np.ndarray:
    """Density matrix of the quasifree state with momentum occupations ``w``.

    Built as the product of commuting factors ``w n_j + (1 - w)(1 - n_j)``,
    so occupations of exactly 0 or 1 are handled without logarithms.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size != rep.L:
        raise ContractError(f"{w.size} occupations for {rep.L} modes")
    if np.any((w < 0) | (w > 1)):
        raise ContractError("occupations must lie in [0, 1]")
    return _product_state(rep, rep.b, w)


def gaussian_state_from_correlation(rep: FockRep, gamma, basis: str = "momentum") -> np.ndarray:
    """Density matrix of the quasifree state with ``<c_i^* c_j> = gamma_ij``.

    ``c`` are the momentum modes (``basis="momentum"``) or the site operators
    (``basis="position"``).
    """
    gamma = np.asarray(gamma, dtype=complex)
    ops = rep.b if basis == "momentum" else rep.a if basis == "position" else None
    if ops is None:
        raise ConfigError(f"unknown basis {basis!r}")
    lam, V = np.linalg.eigh(0.5 * (gamma + gamma.conj().T))
    lam = np.clip(lam, 0.0, 1.0)
    modes = []
    for k in range(rep.L):
        c = sparse.csr_matrix((rep.dim, rep.dim), dtype=complex)
        for j in range(rep.L):
            if V[j, k] != 0:
                c = c + V[j, k] * ops[j]
        modes.append(c.tocsr())
    return _product_state(rep, modes, lam)


def _potential_values(rep: FockRep, v) -> np.ndarray:
    if isinstance(v, PairPotential):
        if v.grid.size != rep.L or v.grid.dim != 1:
            raise ContractError("potential grid does not match the Fock space")
        return v.values
    vals = np.asarray(v, dtype=float).reshape(-1)
    if vals.size != rep.L:
        raise ContractError("potential must have one value per momentum")
    return vals


def interaction_operator(rep: FockRep, v):
    """``V = sum_{k,l,m} [v(k-p) - v(k-m)] b_k^* b_l^* b_m b_p`` with ``p = k + l - m``."""
    L = rep.L
    vals = _potential_values(rep, v)

    def vdiff(i, j):  # v(p_i - p_j), momentum index of a difference is i - j + L/2
        return vals[(i - j + L // 2) % L]

    if L % 2:
        raise ConfigError("the interaction needs an even number of sites")
    bd = [op.conj().T.tocsr() for op in rep.b]
    out = sparse.csr_matrix((rep.dim, rep.dim), dtype=complex)
    for k in range(L):
        for l in range(L):
            left = bd[k] @ bd[l]
            if left.nnz == 0:
                continue
            for m in range(L):
                p = (k + l - m) % L
                M = vdiff(k, p) - vdiff(k, m)
                if M != 0.0:
                    out = out + M * (left @ rep.b[m] @ rep.b[p])
    return out.tocsr()


def free_hamiltonian(rep: FockRep, eps):
    e = np.asarray(getattr(eps, "values", eps), dtype=float).reshape(-1)
    return sum(e[j] * (rep.b[j].conj().T @ rep.b[j]) for j in range(rep.L)).tocsr()


def build_hamiltonian(rep: FockRep, eps, v, lam: float, N: float):
    """``H = sum_j eps_j b_j^* b_j + lam N^{-1/2} V`` as a sparse matrix."""
    if not N > 0:
        raise ConfigError("N must be positive")
    return (free_hamiltonian(rep, eps) + (lam / np.sqrt(N)) * interaction_operator(rep, v)).tocsr()


def exact_expect(rho, op) -> complex:
    """``trace(rho op)``."""
    if rho.shape != op.shape:
        raise ContractError(f"dimension mismatch: {rho.shape} vs {op.shape}")
    if sparse.issparse(op):
        op = op.toarray()
    if sparse.issparse(rho):
        rho = rho.toarray()
    return complex(np.einsum("ij,ji->", rho, op))


def exact_evolve_expect(rho, H, A, T: float) -> complex:
    """``trace(rho e^{iHT} A e^{-iHT})`` with a dense matrix exponential."""
    Hd = H.toarray() if sparse.issparse(H) else np.asarray(H)
    Ad = A.toarray() if sparse.issparse(A) else np.asarray(A)
    U = linalg.expm(-1j * T * Hd)
    if not np.all(np.isfinite(U)):
        raise ConvergenceError("matrix exponential produced non-finite entries")
    drift = np.max(np.abs(U @ U.conj().T - np.eye(U.shape[0])))
    if drift > 1e-10:
        raise ConvergenceError(f"propagator not unitary (deviation {drift:.2e})")
    return exact_expect(rho, U.conj().T @ Ad @ U)


def exact_drift(rho, rep: FockRep, eps, v, lam: float, A, t: float) -> complex:
    """``int_0^t <[V(s), A]> ds`` with ``V(s) = e^{i H0 s} lam V e^{-i H0 s}``.

    The time integral is done analytically in the eigenbasis of the free
    Hamiltonian ``H0``.
    """
    H0 = free_hamiltonian(rep, eps).toarray()
    E, U = np.linalg.eigh(H0)
    V = lam * interaction_operator(rep, v).toarray()
    Vt = U.conj().T @ V @ U
    omega = E[:, None] - E[None, :]
    small = np.abs(omega) < 1e-12
    safe = np.where(small, 1.0, omega)
    phi = np.where(small, t, (np.exp(1j * safe * t) - 1.0) / (1j * safe))
    Vint = U @ (Vt * phi) @ U.conj().T
    Aop = quadratic_operator(rep, A) if not sparse.issparse(A) else A
    Ad = Aop.toarray()
    return exact_expect(rho, Vint @ Ad - Ad @ Vint)

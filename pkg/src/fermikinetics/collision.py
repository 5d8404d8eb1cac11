"""Matrix elements, the energy mollifier, collision tables and the collision operator.

A collision table lists every quadruple ``(k, l, m, p)`` with
``p_k + p_l = p_m + p_p`` (mod 2 pi) whose weight
``pi * lam**2 * M**2 * delta_eta(dE)`` exceeds the pruning threshold.
The collision operator reads

    dw_p/dt = |grid|^-2 * sum_{entries with p} weight * F(k, l, m, p)

with ``F = w_k w_l (1-w_m)(1-w_p) - w_p w_m (1-w_k)(1-w_l)``.

For fast evaluation the table is repacked into blocks of unordered pairs that
share a total momentum; each block is a small dense matrix and the whole
operator becomes one batched matrix product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ConfigError, ContractError, ResourceError
from .lattice import Dispersion, MomentumGrid, PairPotential, _as_values

__all__ = [
    "ScalingParameters",
    "CollisionTable",
    "matrix_element",
    "mollifier",
    "default_eta",
    "build_table",
    "collision_rhs",
    "collision_rhs_direct",
    "energy_flux",
    "MOLLIFIED",
    "EXACT_SHELL",
]

MOLLIFIED = "mollified"
EXACT_SHELL = "exact-shell"
SHELL_TOL = 1e-12
DEFAULT_MAX_ENTRIES = 50_000_000
# largest dense pair-block kernel (number of float64 entries) before falling back to sparse
DENSE_KERNEL_LIMIT = 30_000_000


@dataclass(frozen=True)
class ScalingParameters:
    """Coupling ``lam``, van Hove time scale ``N``, block size ``K`` and mollifier width ``eta``.

    ``eta=None`` selects the data-driven default of :func:`default_eta`.
    """

    lam: float = 1.0
    N: float = 1.0
    K: int = 1
    eta: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.lam):
            raise ConfigError("coupling must be finite")
        if not self.N > 0:
            raise ConfigError(f"N must be positive, got {self.N}")
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K}")
        if self.eta is not None and not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")


def matrix_element(v: PairPotential, k, l, m, p):
    """Antisymmetrized matrix element ``v(k-p) - v(k-m)`` for flat grid indices.

    Accepts scalars or broadcastable integer arrays. Every quadruple must
    conserve momentum.
    """
    grid = v.grid
    k, l, m, p = (np.asarray(a) for a in (k, l, m, p))
    if np.any(grid.combine(k, l, m) != p):
        raise ContractError("matrix element requested off the momentum shell")
    out = v.at_difference(k, p) - v.at_difference(k, m)
    return float(out) if out.ndim == 0 else out


def mollifier(eta: float, dE):
    """Gaussian approximation ``exp(-(dE/eta)^2) / (eta sqrt(pi))`` of the energy delta."""
    if not eta > 0:
        raise ConfigError(f"mollifier width must be positive, got {eta}")
    x = np.asarray(dE, dtype=float) / eta
    out = np.exp(-x * x) / (eta * np.sqrt(np.pi))
    return float(out) if out.ndim == 0 else out


def _shell_chunks(grid: MomentumGrid, chunk: int = 1 << 21):
    """Yield (k, l, m, p) index arrays covering all momentum-conserving quadruples.

    Order is lexicographic in (k, l, m); p is determined by conservation.
    """
    size = grid.size
    per_k = size * size
    kstep = max(1, chunk // per_k)
    lm_l = np.repeat(np.arange(size), size)
    lm_m = np.tile(np.arange(size), size)
    for k0 in range(0, size, kstep):
        ks = np.arange(k0, min(size, k0 + kstep))
        k = np.repeat(ks, per_k)
        l = np.tile(lm_l, ks.size)
        m = np.tile(lm_m, ks.size)
        yield k, l, m, grid.combine(k, l, m)


def default_eta(grid: MomentumGrid, eps) -> float:
    """Three times the median gap between distinct ``|dE|`` values on the momentum shell."""
    e = _as_values(eps)
    distinct = []
    for k, l, m, p in _shell_chunks(grid):
        dE = np.abs((e[k] + e[l]) - (e[m] + e[p]))
        distinct.append(np.unique(np.round(dE, 12)))
    vals = np.unique(np.concatenate(distinct))
    gaps = np.diff(vals)
    gaps = gaps[gaps > 0]
    if gaps.size == 0:
        raise ConfigError("cannot derive a default eta: energy shell is degenerate")
    return float(3.0 * np.median(gaps))


@dataclass(eq=False)
class CollisionTable:
    """Precomputed collision quadruples and their weights.

    ``k, l, m, p`` are flat grid indices (int32) in lexicographic order;
    ``weight`` holds ``pi lam^2 M^2 delta`` for each entry.
    """

    grid: MomentumGrid
    k: np.ndarray
    l: np.ndarray
    m: np.ndarray
    p: np.ndarray
    weight: np.ndarray
    mode: str = MOLLIFIED
    eta: float = float("nan")
    threshold: float = 0.0
    lam: float = 1.0
    eps: Dispersion | None = None
    meta: dict = field(default_factory=dict)
    _kernel: object = field(default=None, repr=False)

    def __len__(self):
        return int(self.weight.size)

    @property
    def count(self) -> int:
        return len(self)

    def kernel(self, backend=None):
        if self._kernel is None or (backend is not None and self._kernel.backend != backend):
            self._kernel = _PairKernel.from_table(self, backend)
        return self._kernel


def build_table(grid: MomentumGrid, eps, v: PairPotential, params: ScalingParameters,
                threshold: float | None = None, mode: str = MOLLIFIED,
                max_entries: int = DEFAULT_MAX_ENTRIES) -> CollisionTable:
    """Enumerate the collision kernel on the grid.

    ``threshold`` is an absolute weight cut; ``None`` means ``1e-14`` times the
    largest weight. In exact-shell mode only quadruples with
    ``|dE| < 1e-12`` are kept, with weight ``pi lam^2 M^2 / eta_ref`` where
    ``eta_ref`` is ``params.eta`` (or the default width).
    """
    if mode not in (MOLLIFIED, EXACT_SHELL):
        raise ConfigError(f"unknown collision mode {mode!r}")
    grid.check_same(v.grid, "grid and potential")
    e = _as_values(eps)
    if e.size != grid.size:
        raise ContractError("dispersion does not match the grid")
    if threshold is not None and threshold < 0:
        raise ConfigError("threshold must be non-negative")
    eta = params.eta if params.eta is not None else default_eta(grid, e)
    pref = np.pi * params.lam ** 2

    def weights(k, l, m, p):
        M = v.values[grid.sub(k, p)] - v.values[grid.sub(k, m)]
        dE = (e[k] + e[l]) - (e[m] + e[p])  # grouped so the weight is bitwise symmetric
        if mode == MOLLIFIED:
            return pref * M * M * mollifier(eta, dE)
        return np.where(np.abs(dE) < SHELL_TOL, pref * M * M / eta, 0.0)

    wmax = 0.0
    if threshold is None:
        for quad in _shell_chunks(grid):
            wmax = max(wmax, float(weights(*quad).max(initial=0.0)))
        cut = 1e-14 * wmax
    else:
        cut = float(threshold)

    parts = []
    total = 0
    for quad in _shell_chunks(grid):
        wt = weights(*quad)
        keep = wt > cut
        total += int(keep.sum())
        if total > max_entries:
            raise ResourceError(
                f"collision table exceeds the entry cap max_entries={max_entries}")
        parts.append(tuple(a[keep].astype(np.int32) for a in quad) + (wt[keep],))
    cols = [np.concatenate([pt[i] for pt in parts]) for i in range(5)]
    eps_obj = eps if isinstance(eps, Dispersion) else Dispersion(grid, e)
    meta = {"eta": eta, "eta_default": params.eta is None, "threshold": cut,
            "threshold_relative": threshold is None, "max_weight": wmax}
    return CollisionTable(grid, *cols, mode=mode, eta=eta, threshold=cut, lam=params.lam,
                          eps=eps_obj, meta=meta)


class _PairKernel:
    """Collision operator repacked over unordered pairs grouped by total momentum.

    For pairs P = {m, p} and Q = {k, l} (m < p, k < l) with equal total
    momentum, ``S[P, Q]`` is the weight of the entry (k, l, m, p). The four
    orderings of each quadruple carry the same weight, so

        dw_p = dw_m += 2/|grid|^2 * sum_Q S[P, Q] (A_Q B_P - A_P B_Q)

    with ``A = w_a w_b`` and ``B = (1-w_a)(1-w_b)``.
    """

    def __init__(self, backend, size, pa, pb, valid, S):
        self.backend = backend
        self.size = size
        self.pa, self.pb, self.valid, self.S = pa, pb, valid, S

    @classmethod
    def from_table(cls, table: CollisionTable, backend=None):
        grid = table.grid
        size = grid.size
        k, l, m, p, wt = table.k, table.l, table.m, table.p, table.weight
        if backend == "entries" or not _is_symmetric_closure(table):
            return cls("entries", size, None, None, None, None)

        a, b = np.triu_indices(size, 1)
        q = grid.add(a, b)
        order = np.lexsort((b, a, q))
        a, b, q = a[order], b[order], q[order]
        counts = np.bincount(q, minlength=size)
        start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        pos = np.arange(a.size) - start[q]
        width = int(counts.max(initial=0))
        pair_pos = np.full((size, size), -1, dtype=np.int64)
        pair_pos[a, b] = pos

        sel = (k < l) & (m < p)
        qk = grid.add(k[sel], l[sel])
        row = pair_pos[m[sel], p[sel]]
        col = pair_pos[k[sel], l[sel]]
        factor = 2.0 / size ** 2

        if backend is None:
            backend = "dense" if size * width * width <= DENSE_KERNEL_LIMIT else "sparse"
        if backend == "dense":
            S = np.zeros((size, width, width))
            S[qk, row, col] = wt[sel] * factor
            pa = np.zeros((size, width), dtype=np.int64)
            pb = np.zeros((size, width), dtype=np.int64)
            valid = np.zeros((size, width))
            pa[q, pos] = a
            pb[q, pos] = b
            valid[q, pos] = 1.0
            return cls("dense", size, pa, pb, valid, S)
        if backend == "sparse":
            gidx = start[q] + pos  # global pair index in sorted order
            glob = np.full((size, size), -1, dtype=np.int64)
            glob[a, b] = gidx
            S = sparse.csr_matrix(
                (wt[sel] * factor, (glob[m[sel], p[sel]], glob[k[sel], l[sel]])),
                shape=(a.size, a.size))
            pa = np.empty(a.size, dtype=np.int64)
            pb = np.empty(a.size, dtype=np.int64)
            pa[gidx] = a
            pb[gidx] = b
            return cls("sparse", size, pa, pb, None, S)
        raise ConfigError(f"unknown collision backend {backend!r}")

    def apply(self, w, table):
        if self.backend == "entries":
            return _rhs_entries(table, w)
        wa, wb = w[self.pa], w[self.pb]
        A = wa * wb
        B = (1.0 - wa) * (1.0 - wb)
        if self.backend == "dense":
            A = A * self.valid
            B = B * self.valid
            Y = np.matmul(self.S, np.stack([A, B], axis=-1))
            R = B * Y[..., 0] - A * Y[..., 1]
        else:
            R = B * (self.S @ A) - A * (self.S @ B)
        R = R.ravel()
        return (np.bincount(self.pa.ravel(), R, self.size)
                + np.bincount(self.pb.ravel(), R, self.size))


def _is_symmetric_closure(table: CollisionTable) -> bool:
    """Cheap necessary check that the table holds all four index orderings."""
    k, l, m, p, wt = table.k, table.l, table.m, table.p, table.weight
    if np.any((k == l) | (m == p)):
        return False
    sums = []
    for s1 in (k < l, k > l):
        for s2 in (m < p, m > p):
            sel = s1 & s2
            sums.append((int(sel.sum()), float(wt[sel].sum())))
    n0, w0 = sums[0]
    return all(c == n0 and abs(ws - w0) <= 1e-12 * max(1.0, abs(w0)) for c, ws in sums)


def _gain_loss(w, k, l, m, p):
    return w[k] * w[l] * (1 - w[m]) * (1 - w[p]) - w[p] * w[m] * (1 - w[k]) * (1 - w[l])


def _rhs_entries(table: CollisionTable, w):
    F = _gain_loss(w, table.k, table.l, table.m, table.p)
    return np.bincount(table.p, table.weight * F, table.grid.size) / table.grid.size ** 2


def collision_rhs(table: CollisionTable, w, backend: str | None = None) -> np.ndarray:
    """Time derivative of the occupation under the collision operator.

    ``backend`` may force ``"dense"``, ``"sparse"`` or ``"entries"`` (plain
    per-entry summation); by default the pair-block kernel is used.
    """
    grid = getattr(w, "grid", None)
    if grid is not None:
        grid.check_same(table.grid, "occupation and collision table")
    wv = _as_values(w)
    if wv.size != table.grid.size:
        raise ContractError(
            f"occupation has {wv.size} values, table grid has {table.grid.size} points")
    return table.kernel(backend).apply(wv, table)


def energy_flux(table: CollisionTable, w) -> float:
    """Rate of change of the energy density, ``|grid|^-1 sum eps_p dw_p``."""
    return float(np.mean(table.eps.values * collision_rhs(table, w)))


def collision_rhs_direct(grid: MomentumGrid, eps, v: PairPotential, params: ScalingParameters,
                         w, mode: str = MOLLIFIED, budget: float = 1e9) -> np.ndarray:
    """Table-free evaluation of the collision operator by direct summation.

    Loops over the output momentum and sums all (k, l) with ``m = k + l - p``.
    Intended as an independent check of :func:`collision_rhs`.
    """
    size = grid.size
    if float(size) ** 3 > budget:
        raise ResourceError(f"direct collision sum needs {size ** 3} terms, budget {budget:g}")
    e = _as_values(eps)
    wv = _as_values(w)
    eta = params.eta if params.eta is not None else default_eta(grid, e)
    pref = np.pi * params.lam ** 2
    kk, ll = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    kk, ll = kk.ravel(), ll.ravel()
    out = np.empty(size)
    for p in range(size):
        pp = np.full_like(kk, p)
        mm = grid.combine(kk, ll, pp)  # k + l - p
        M = v.at_difference(kk, pp) - v.at_difference(kk, mm)
        dE = (e[kk] + e[ll]) - (e[mm] + e[p])
        if mode == MOLLIFIED:
            delta = np.exp(-(dE / eta) ** 2) / (eta * np.sqrt(np.pi))
        else:
            delta = np.where(np.abs(dE) < SHELL_TOL, 1.0 / eta, 0.0)
        F = _gain_loss(wv, kk, ll, mm, pp)
        out[p] = np.sum(pref * M * M * delta * F)
    return out / size ** 2

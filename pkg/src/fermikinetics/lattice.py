"""Momentum grids, band structure, pair potentials and Fermi-Dirac states.

Grid points are stored in flat C order. For ``dim == 2`` the flat index of
the coordinate pair ``(j1, j2)`` is ``j1 * n + j2`` and the momentum is
``p = (-pi + 2 pi j1 / n, -pi + 2 pi j2 / n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import optimize, special

from .errors import ConfigError, ContractError, ConvergenceError, DomainError

__all__ = [
    "MomentumGrid",
    "Dispersion",
    "PairPotential",
    "Occupation",
    "QuasifreeState",
    "EquilibriumParams",
    "build_grid",
    "nearest_neighbor_band",
    "cosine_potential",
    "constant_potential",
    "fermi_dirac",
    "fermi_dirac_from_params",
    "to_position",
    "from_position",
    "entropy_density",
    "density_energy",
    "match_equilibrium",
]


@dataclass(frozen=True)
class MomentumGrid:
    """Discretized Brillouin zone ``[-pi, pi)^dim`` with ``n`` points per axis."""

    dim: int
    n: int

    @property
    def size(self) -> int:
        return self.n ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def cell_weight(self) -> float:
        return 1.0 / self.size

    @cached_property
    def coords(self) -> np.ndarray:
        """Integer coordinates ``j`` of every grid point, shape (size, dim)."""
        axes = np.meshgrid(*[np.arange(self.n)] * self.dim, indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    @cached_property
    def momenta(self) -> np.ndarray:
        return -np.pi + 2 * np.pi * self.coords / self.n

    def flat(self, coords) -> np.ndarray:
        """Flat index of integer coordinates (reduced mod n)."""
        c = np.mod(np.asarray(coords), self.n)
        out = c[..., 0]
        for a in range(1, self.dim):
            out = out * self.n + c[..., a]
        return out

    def combine(self, k, l, m) -> np.ndarray:
        """Flat index of the momentum ``k + l - m`` (mod 2 pi)."""
        c = self.coords
        return self.flat(c[k] + c[l] - c[m])

    def add(self, i, j) -> np.ndarray:
        """Flat index of ``p_i + p_j``."""
        c = self.coords
        return self.flat(c[i] + c[j] - self.n // 2)

    def sub(self, i, j) -> np.ndarray:
        """Flat index of ``p_i - p_j``."""
        c = self.coords
        return self.flat(c[i] - c[j] + self.n // 2)

    def neg(self, i) -> np.ndarray:
        """Flat index of ``-p_i``."""
        return self.flat(self.n - self.coords[i])

    def locate(self, momentum) -> int:
        """Flat index of a momentum vector given in radians (reduced mod 2 pi)."""
        q = np.atleast_1d(np.asarray(momentum, dtype=float))
        if q.shape != (self.dim,):
            raise ContractError(f"momentum must have {self.dim} components")
        j = (q + np.pi) * self.n / (2 * np.pi)
        jr = np.rint(j)
        if np.max(np.abs(j - jr)) > 1e-9:
            raise ContractError(f"momentum {q} is not a grid point")
        return int(self.flat(jr.astype(int)))

    def check_same(self, other: "MomentumGrid", what="operands"):
        if (self.dim, self.n) != (other.dim, other.n):
            raise ContractError(
                f"grid mismatch between {what}: ({self.dim}, {self.n}) vs ({other.dim}, {other.n})")


def build_grid(dim: int, n: int) -> MomentumGrid:
    """Construct the momentum grid, validating dimension and size."""
    problems = []
    if dim not in (1, 2):
        problems.append(f"dimension must be 1 or 2, got {dim}")
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        problems.append(f"points per axis must be an integer, got {n!r}")
    else:
        if n % 2:
            problems.append(f"points per axis must be even, got {n}")
        if not 4 <= n <= 1024:
            problems.append(f"points per axis must lie in [4, 1024], got {n}")
    if problems:
        raise ConfigError("; ".join(problems))
    return MomentumGrid(int(dim), int(n))


def _grid_values(grid: MomentumGrid, values, name) -> np.ndarray:
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.size != grid.size:
        raise ContractError(f"{name} has {arr.size} values, grid has {grid.size} points")
    return arr


@dataclass(frozen=True, eq=False)
class Dispersion:
    """Band energy on the grid points."""

    grid: MomentumGrid
    values: np.ndarray

    def __post_init__(self):
        vals = _grid_values(self.grid, self.values, "dispersion")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("dispersion must be finite")
        object.__setattr__(self, "values", vals)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True, eq=False)
class PairPotential:
    """Fourier profile ``v(q)`` stored on the grid (index = momentum ``q``).

    The profile must be even; it is symmetrized on construction so that
    ``v(q) == v(-q)`` holds bit for bit.
    """

    grid: MomentumGrid
    values: np.ndarray

    def __post_init__(self):
        vals = _grid_values(self.grid, self.values, "potential")
        mirrored = vals[self.grid.neg(np.arange(self.grid.size))]
        if not np.all(np.isfinite(vals)):
            raise ConfigError("potential must be finite")
        if np.max(np.abs(vals - mirrored), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(vals))):
            raise ConfigError("potential must be even, v(q) = v(-q)")
        object.__setattr__(self, "values", 0.5 * (vals + mirrored))

    def at_difference(self, i, j) -> np.ndarray:
        """``v(p_i - p_j)`` for flat indices i, j (broadcasting)."""
        return self.values[self.grid.sub(i, j)]

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))


def nearest_neighbor_band(grid: MomentumGrid) -> Dispersion:
    """Default band ``eps(p) = -sum_a cos p_a``."""
    return Dispersion(grid, -np.cos(grid.momenta).sum(axis=1))


def cosine_potential(grid: MomentumGrid, coeffs=(1.0,)) -> PairPotential:
    """Short-range potential ``v(q) = sum_r c_r sum_a cos(r q_a)``, r = 1, 2, ...

    With the default coefficients this is ``sum_a cos q_a``.
    """
    q = grid.momenta
    v = np.zeros(grid.size)
    for r, c in enumerate(coeffs, start=1):
        v += c * np.cos(r * q).sum(axis=1)
    return PairPotential(grid, v)


def constant_potential(grid: MomentumGrid, value: float = 1.0) -> PairPotential:
    return PairPotential(grid, np.full(grid.size, float(value)))


@dataclass(frozen=True, eq=False)
class Occupation:
    """Momentum occupation numbers ``w_j`` in [0, 1], optionally time stamped."""

    grid: MomentumGrid
    w: np.ndarray
    t: float | None = None

    def __post_init__(self):
        w = _grid_values(self.grid, self.w, "occupation")
        if not np.all(np.isfinite(w)):
            raise DomainError("occupation contains non-finite values")
        if w.size and (w.min() < 0.0 or w.max() > 1.0):
            raise DomainError(f"occupation outside [0, 1]: range [{w.min()}, {w.max()}]")
        object.__setattr__(self, "w", w)

    def __array__(self, dtype=None, copy=None):
        return self.w if dtype is None else self.w.astype(dtype)


@dataclass(frozen=True, eq=False)
class QuasifreeState:
    """Translation- and gauge-invariant quasifree state fixed by its occupation."""

    grid: MomentumGrid
    w: np.ndarray

    def __post_init__(self):
        occ = Occupation(self.grid, self.w)
        object.__setattr__(self, "w", occ.w)

    @classmethod
    def from_occupation(cls, occ: Occupation) -> "QuasifreeState":
        return cls(occ.grid, occ.w)

    @property
    def occupation(self) -> Occupation:
        return Occupation(self.grid, self.w)

    @property
    def correlation(self) -> np.ndarray:
        """Momentum-space correlation matrix ``<b_i^* b_j>`` (diagonal)."""
        return np.diag(self.w).astype(complex)


@dataclass(frozen=True)
class EquilibriumParams:
    """Fermi-Dirac parameters in the form ``w = 1 / (1 + exp(beta*eps - c))``.

    For ``beta != 0`` the chemical potential is ``mu = c / beta``. The
    ``degenerate`` branch (``beta == 0``) has constant occupation and ``mu``
    is reported as 0.
    """

    beta: float
    mu: float
    c: float = field(default=None)
    degenerate: bool = False

    def __post_init__(self):
        if self.c is None:
            object.__setattr__(self, "c", self.beta * self.mu)


def _as_values(x):
    if isinstance(x, (Occupation, QuasifreeState)):
        return x.w
    if isinstance(x, Dispersion):
        return x.values
    return np.asarray(x, dtype=float).reshape(-1)


def _grid_of(x):
    return getattr(x, "grid", None)


def fermi_dirac(grid: MomentumGrid, eps, beta: float, mu: float) -> Occupation:
    """Fermi-Dirac occupation ``1/(1 + exp(beta (eps - mu)))``.

    Exponentials saturate instead of overflowing, so very large ``|beta|``
    returns occupations of exactly 0 or 1.
    """
    if not (np.isfinite(beta) and np.isfinite(mu)):
        raise DomainError("beta and mu must be finite")
    e = _grid_values(grid, _as_values(eps), "dispersion")
    return Occupation(grid, special.expit(-beta * (e - mu)))


def fermi_dirac_from_params(grid: MomentumGrid, eps, params: EquilibriumParams) -> Occupation:
    e = _grid_values(grid, _as_values(eps), "dispersion")
    return Occupation(grid, special.expit(params.c - params.beta * e))


def to_position(state) -> np.ndarray:
    """Position profile ``w(x) = n^-dim sum_j w_j exp(i p_j x)`` on the torus.

    Returns a complex array of shape ``(n,)*dim`` indexed by ``x mod n``.
    """
    grid = state.grid
    w = _as_values(state).reshape(grid.shape)
    sign = _checkerboard(grid)
    return sign * np.fft.ifftn(w)


def from_position(grid: MomentumGrid, profile) -> np.ndarray:
    """Inverse of :func:`to_position`; returns the (complex) momentum values."""
    prof = np.asarray(profile, dtype=complex).reshape(grid.shape)
    return np.fft.fftn(_checkerboard(grid) * prof).reshape(-1)


def _checkerboard(grid: MomentumGrid) -> np.ndarray:
    # exp(-i pi x) factor from the shifted momentum origin
    x = np.indices(grid.shape).sum(axis=0)
    return np.where(x % 2 == 0, 1.0, -1.0)


def entropy_density(w) -> float:
    """``-(1/|grid|) sum [w ln w + (1-w) ln(1-w)]`` with ``0 ln 0 = 0``."""
    w = _as_values(w)
    return float(np.mean(special.entr(w) + special.entr(1.0 - w)))


def density_energy(w, eps) -> tuple[float, float]:
    """Density and energy density of an occupation."""
    gw, ge = _grid_of(w), _grid_of(eps)
    if gw is not None and ge is not None:
        gw.check_same(ge, "occupation and dispersion")
    wv, ev = _as_values(w), _as_values(eps)
    if wv.shape != ev.shape:
        raise ContractError(f"occupation has {wv.size} values, dispersion has {ev.size}")
    return float(np.mean(wv)), float(np.mean(ev * wv))


def _energy_bounds(rho: float, e: np.ndarray) -> tuple[float, float]:
    # extreme energies at density rho: fill the lowest (highest) levels
    es = np.sort(e)
    size = es.size
    filled = rho * size
    whole = int(np.floor(filled))
    frac = filled - whole

    def fill(levels):
        total = levels[:whole].sum()
        if whole < size:
            total += frac * levels[whole]
        return total / size

    return fill(es), fill(es[::-1])


def match_equilibrium(rho: float, e: float, grid: MomentumGrid, eps, tol: float = 1e-10,
                      max_iter: int = 200) -> EquilibriumParams:
    """Fermi-Dirac parameters reproducing the density ``rho`` and energy ``e``.

    Solves for ``(beta, c)`` in ``w = 1/(1 + exp(beta*eps - c))`` with an
    analytic Jacobian. Negative ``beta`` (population inversion) is allowed.

    :raises DomainError: if ``rho`` is not in (0, 1) or ``e`` is not strictly
        between the extreme energies attainable at that density.
    :raises ConvergenceError: if the root finder does not reach ``tol``.
    """
    ev = _grid_values(grid, _as_values(eps), "dispersion")
    if not (0.0 < rho < 1.0):
        raise DomainError(f"density must lie in (0, 1), got {rho}")
    mean_e = ev.mean()
    var_e = ev.var()
    e0 = rho * mean_e
    scale = max(1.0, np.max(np.abs(ev)))
    if abs(e - e0) <= tol * scale or var_e == 0.0:
        if abs(e - e0) > tol * scale:
            raise DomainError("flat band: energy is fixed by the density")
        c = float(np.log(rho / (1.0 - rho)))
        return EquilibriumParams(beta=0.0, mu=0.0, c=c, degenerate=True)
    lo, hi = _energy_bounds(rho, ev)
    if not (lo < e < hi):
        raise DomainError(f"energy {e} not attainable at density {rho}: need {lo} < e < {hi}")

    def residual(x):
        beta, c = x
        w = special.expit(c - beta * ev)
        dw = w * (1.0 - w)
        f = np.array([w.mean() - rho, (ev * w).mean() - e])
        jac = np.array([[-(ev * dw).mean(), dw.mean()],
                        [-(ev * ev * dw).mean(), (ev * dw).mean()]])
        return f, jac

    beta0 = -(e - e0) / (rho * (1.0 - rho) * var_e)
    x0 = np.array([beta0, np.log(rho / (1.0 - rho)) + beta0 * mean_e])
    best = None
    for method in ("hybr", "lm"):
        sol = optimize.root(residual, x0, jac=True, method=method,
                            options={"xtol": 1e-14} if method == "hybr" else {"xtol": 1e-14, "ftol": 1e-15})
        x = sol.x
        # a few Newton polish steps on the final iterate
        for _ in range(max_iter):
            f, jac = residual(x)
            if np.max(np.abs(f)) <= 1e-3 * tol:
                break
            try:
                step = np.linalg.solve(jac, f)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)):
                break
            x = x - step
        f, _ = residual(x)
        err = float(np.max(np.abs(f)))
        if best is None or err < best[1]:
            best = (x, err)
        if err <= tol:
            break
        x0 = best[0]
    x, err = best
    if not np.isfinite(err) or err > tol:
        raise ConvergenceError(
            f"equilibrium matching did not converge (residual {err:.3e})", last=x)
    beta, c = float(x[0]), float(x[1])
    return EquilibriumParams(beta=beta, mu=c / beta if beta != 0.0 else 0.0, c=c)

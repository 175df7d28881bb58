"""Finite-difference spectral decomposition of ``d^2/dx^2 + c(x)`` on (0, L).

Homogeneous Dirichlet conditions at both ends. All quadratures use the
trapezoid rule on the same uniform grid, so the discrete eigenvectors are
exactly orthonormal for the inner product used in the projections.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .errors import ConfigError, NumericalError, SpectralWarning

ZERO_TOL = 1e-9


@dataclass(frozen=True)
class Potential:
    """Reaction coefficient ``c(x)`` on ``[0, L]``.

    ``kind`` is ``"constant"`` (uses ``value``) or ``"sampled"`` (piecewise
    linear through ``samples``, a sequence of ``(x, c)`` pairs).
    """

    L: float
    kind: str = "constant"
    value: float = 0.0
    samples: tuple = ()

    def __post_init__(self):
        problems = []
        if not (np.isfinite(self.L) and self.L > 0):
            problems.append(f"L must be a positive finite number, got {self.L!r}")
        if self.kind == "constant":
            if not np.isfinite(self.value):
                problems.append(f"constant potential must be finite, got {self.value!r}")
        elif self.kind == "sampled":
            pts = np.asarray(self.samples, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
                problems.append("sampled potential needs at least two (x, c) pairs")
            else:
                xs, cs = pts[:, 0], pts[:, 1]
                if not np.all(np.isfinite(pts)):
                    problems.append("sampled potential has non-finite entries")
                if np.any(np.diff(xs) <= 0):
                    problems.append("sample abscissae must be strictly increasing")
                if xs[0] != 0.0 or not np.isclose(xs[-1], self.L, rtol=1e-12, atol=0):
                    problems.append(f"samples must span [0, L] = [0, {self.L}]")
            object.__setattr__(self, "samples", tuple(map(tuple, pts.tolist())))
        else:
            problems.append(f"unknown potential kind {self.kind!r}")
        if problems:
            raise ConfigError("invalid potential", problems)

    @classmethod
    def constant(cls, value, L):
        return cls(L=float(L), kind="constant", value=float(value))

    @classmethod
    def sampled(cls, xs, cs, L):
        return cls(L=float(L), kind="sampled", samples=tuple(zip(xs, cs)))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full_like(x, self.value)
        pts = np.asarray(self.samples)
        return np.interp(x, pts[:, 0], pts[:, 1])

    def sup_norm(self):
        if self.kind == "constant":
            return abs(self.value)
        return float(np.max(np.abs(np.asarray(self.samples)[:, 1])))


@dataclass(frozen=True)
class Grid:
    N: int
    L: float

    def __post_init__(self):
        problems = []
        if int(self.N) != self.N or self.N < 16:
            problems.append(f"grid N must be an integer >= 16, got {self.N!r}")
        if not (np.isfinite(self.L) and self.L > 0):
            problems.append(f"grid L must be positive, got {self.L!r}")
        if problems:
            raise ConfigError("invalid grid", problems)
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self):
        return self.L / self.N

    @property
    def nodes(self):
        # linspace pins the last node to L exactly
        return np.linspace(0.0, self.L, self.N + 1)

    @property
    def weights(self):
        """Trapezoid weights (already multiplied by ``h``)."""
        w = np.full(self.N + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def integrate(self, values):
        return float(np.dot(self.weights, values))


@dataclass(frozen=True)
class SymTridiagonal:
    diag: np.ndarray
    off: np.ndarray

    @property
    def size(self):
        return self.diag.size

    def dense(self):
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def matvec(self, v):
        out = self.diag * v
        out[:-1] += self.off * v[1:]
        out[1:] += self.off * v[:-1]
        return out


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray          # (J,) strictly decreasing
    eigenfunctions: np.ndarray       # (J, N+1), zero at both ends
    n: int                           # number of eigenvalues >= 0
    eta: float
    grid: Grid
    near_zero: tuple = field(default=())

    @property
    def J(self):
        return self.eigenvalues.size

    def orthonormality_defect(self):
        E = self.eigenfunctions
        gram = (E * self.grid.weights) @ E.T
        return float(np.max(np.abs(gram - np.eye(self.J))))


@dataclass(frozen=True)
class ModalCoefficients:
    a: np.ndarray
    b: np.ndarray
    boundary_slopes: np.ndarray

    def boundary_identity_defect(self, eigenvalues):
        """``|a_j + lambda_j b_j + e_j'(L)|`` for every retained mode."""
        return np.abs(self.a + eigenvalues * self.b + self.boundary_slopes)


def _check_consistent(pot, grid):
    if not np.isclose(pot.L, grid.L, rtol=1e-12, atol=0.0):
        raise ConfigError("grid and potential disagree on the domain length",
                          [f"potential.L = {pot.L}, grid.L = {grid.L}"])


def discretize_operator(pot, grid):
    """Second-order centered differences on the N-1 interior nodes."""
    _check_consistent(pot, grid)
    h = grid.h
    x = grid.nodes[1:-1]
    diag = -2.0 / h**2 + pot(x)
    off = np.full(grid.N - 2, 1.0 / h**2)
    return SymTridiagonal(diag, off)


def discretization_bound(j, L, h):
    """A-priori O(h^2) error of the j-th centered-difference eigenvalue."""
    mu = (j * np.pi / L) ** 2
    return h**2 * mu**2 / 12.0


def solve_eigen(M, J, grid, eta=None, zero_tol=ZERO_TOL):
    """Top ``J`` eigenpairs of the discretized operator.

    Eigenvectors are padded with the Dirichlet zeros, scaled to unit discrete
    L^2 norm and signed so that their first nonzero interior sample is
    positive. ``eta`` defaults to ``-lambda_{n+1} / 2``.
    """
    m = M.size
    if not 1 <= J <= m:
        raise ConfigError("invalid number of retained modes",
                          [f"J = {J} must lie in [1, N-1 = {m}]"])
    try:
        vals, vecs = eigh_tridiagonal(M.diag, M.off, select="i",
                                      select_range=(m - J, m - 1),
                                      lapack_driver="stemr")
    except LinAlgError as exc:
        raise NumericalError(f"tridiagonal eigensolver failed: {exc}") from exc
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1]
    if np.any(np.diff(vals) >= 0):
        raise NumericalError("eigenvalues are not simple; refine the grid")

    E = np.zeros((J, grid.N + 1))
    E[:, 1:-1] = vecs.T / np.sqrt(grid.h)
    for row in E:
        nz = np.flatnonzero(np.abs(row) > 1e-12 * np.max(np.abs(row)))
        if row[nz[0]] < 0:
            row *= -1.0

    n = int(np.count_nonzero(vals >= 0.0))
    near_zero = tuple(
        j + 1 for j, lam in enumerate(vals)
        if abs(lam) <= max(zero_tol, 2.0 * discretization_bound(j + 1, grid.L, grid.h)))
    if near_zero:
        warnings.warn(
            f"eigenvalue(s) {list(near_zero)} are indistinguishable from zero at "
            f"h = {grid.h:.3g}; the unstable count n = {n} is grid-sensitive",
            SpectralWarning, stacklevel=2)
    if n >= J:
        raise ConfigError("too few retained modes",
                          [f"J = {J} must exceed the unstable count n = {n}"])
    gap = vals[n]
    if eta is None:
        if abs(gap) <= zero_tol:
            raise NumericalError(
                f"degenerate spectral margin: lambda_{n + 1} = {gap:.3e}; "
                "refine the grid or supply eta explicitly")
        eta = -gap / 2.0
    if not (eta > 0 and np.all(vals[n:] < -eta)):
        raise ConfigError("invalid spectral margin",
                          [f"eta = {eta} must satisfy 0 < eta < -lambda_{n + 1} = {-gap}"])
    return SpectralDecomposition(vals, E, n, float(eta), grid, near_zero)


def modal_coefficients(dec, pot, grid):
    """Projections of ``x c(x) / L`` and ``-x / L`` plus ``e_j'(L)``."""
    _check_consistent(pot, grid)
    x = grid.nodes
    w = grid.weights
    E = dec.eigenfunctions
    a = E @ (w * x * pot(x)) / grid.L
    b = -(E @ (w * x)) / grid.L
    # one-sided second-order difference, e_j(L) = 0
    slopes = (-4.0 * E[:, -2] + E[:, -3]) / (2.0 * grid.h)
    return ModalCoefficients(a, b, slopes)


def default_mode_count(n):
    return max(2 * n + 8, 15)


def eigen_residual(M, dec):
    """``max_j ||M e_j - lambda_j e_j||_inf / max(1, |lambda_j|)``."""
    worst = 0.0
    for lam, e in zip(dec.eigenvalues, dec.eigenfunctions):
        v = e[1:-1]
        r = np.max(np.abs(M.matvec(v) - lam * v)) / max(1.0, abs(lam))
        worst = max(worst, float(r))
    return worst


def spectral_report(dec, coeffs):
    return {
        "eigenvalues": dec.eigenvalues.tolist(),
        "n": dec.n,
        "eta": dec.eta,
        "a": coeffs.a.tolist(),
        "b": coeffs.b.tolist(),
        "boundary_slopes": coeffs.boundary_slopes.tolist(),
        "grid": {"N": dec.grid.N, "L": dec.grid.L},
    }


def decompose(pot, grid, J=None, eta=None):
    """Convenience pipeline: operator, eigenpairs and modal coefficients.

    When ``J`` is None a first pass over a few modes finds ``n`` and the
    default retained count ``max(2n + 8, 15)`` is used.
    """
    M = discretize_operator(pot, grid)
    if J is None:
        probe = min(M.size, 32)
        vals = eigh_tridiagonal(M.diag, M.off, eigvals_only=True, select="i",
                                select_range=(M.size - probe, M.size - 1))
        n = int(np.count_nonzero(vals >= 0.0))
        J = min(default_mode_count(n), M.size)
    dec = solve_eigen(M, J, grid, eta=eta)
    return M, dec, modal_coefficients(dec, pot, grid)

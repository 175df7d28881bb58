"""Predictor feedback for ``X1' = A1 X1 + B1 alpha(t - D)``.

The Artstein variable

    Z1(t) = X1(t) + int_{t-D}^{t} exp((t - s - D) A1) B1 alpha(s) ds

obeys the delay-free system ``Z1' = A1 Z1 + exp(-D A1) B1 alpha``, so a gain
placed on the pair ``(A1, exp(-D A1) B1)`` stabilizes the delayed system.
The feedback is ``alpha(t) = K1 Z1(t)`` for ``t >= D`` and zero before.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConditioningWarning, ConfigError, ConvergenceWarning, DesignError, NumericalError
from .expm import matrix_exponential
from .quadrature import gregory_weight, gregory_weights
from .reduction import controllability_matrix, kalman_rank

SERIES_TOL = 1e-10
SERIES_MAX_TERMS = 50
COND_LIMIT = 1e12


def delay_steps(D, dt):
    """Number of steps ``m`` with ``m * dt == D``; rejects non-integer ratios."""
    if dt <= 0:
        raise ConfigError("invalid time step", [f"dt = {dt} must be positive"])
    ratio = D / dt
    m = int(round(ratio))
    if abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise ConfigError("delay is not a whole number of steps",
                          [f"D / dt = {D} / {dt} = {ratio!r} is not an integer"])
    return m


def validate_targets(targets, dim):
    poles = np.asarray(targets, dtype=complex).ravel()
    problems = []
    if poles.size != dim:
        problems.append(f"need {dim} target poles, got {poles.size}")
    if np.any(poles.real >= 0):
        problems.append(f"target poles must have negative real parts: {poles.tolist()}")
    if poles.size:
        cost = np.abs(poles[:, None] - np.conj(poles)[None, :])
        rows, cols = linear_sum_assignment(cost)
        if cost[rows, cols].max() > 1e-12 * max(1.0, np.abs(poles).max()):
            problems.append("target poles are not closed under complex conjugation")
    if problems:
        raise DesignError("invalid pole targets: " + "; ".join(problems))
    return poles


def _pole_mismatch(computed, targets):
    cost = np.abs(computed[:, None] - targets[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


@dataclass(frozen=True)
class GainDesign:
    D: float
    K1: np.ndarray                  # (n+1,)
    P: np.ndarray                   # (n+1, n+1)
    A_cl: np.ndarray
    target_poles: np.ndarray
    Bd: np.ndarray                  # exp(-D A1) B1
    A1: np.ndarray
    B1: np.ndarray
    condition: float = float("nan")
    pole_error: float = float("nan")
    lyapunov_residual: float = float("nan")
    extras: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.K1.size

    def closed_loop_eigenvalues(self):
        return np.linalg.eigvals(self.A_cl)

    def lambda_min_P(self):
        return float(np.linalg.eigvalsh(self.P)[0])

    def report(self, series_terms_used=None):
        eig = np.sort_complex(self.closed_loop_eigenvalues())
        return {
            "D": self.D,
            "target_poles": [[p.real, p.imag] for p in self.target_poles],
            "K1": self.K1.tolist(),
            "P": self.P.tolist(),
            "eig_A_cl": [[e.real, e.imag] for e in eig],
            "lyapunov_residual": self.lyapunov_residual,
            "pole_error": self.pole_error,
            "controllability_condition": self.condition,
            "series_terms_used": series_terms_used,
        }


def _horner(coeffs, A):
    out = np.zeros_like(A)
    ident = np.eye(A.shape[0])
    for c in coeffs:
        out = out @ A + c * ident
    return out


def place_poles(sys, D, targets=None):
    """Single-input Ackermann placement on ``(A1, exp(-D A1) B1)``.

    ``targets`` defaults to ``-1`` with multiplicity ``n + 1``. The
    characteristic polynomial is built from the targets directly, so repeated
    poles need no eigenvector computations.
    """
    dim = sys.dim
    if targets is None:
        targets = -np.ones(dim)
    poles = validate_targets(targets, dim)
    if not kalman_rank(sys, D)["controllable"]:
        raise DesignError(
            f"pair (A1, exp(-D A1) B1) fails the Kalman rank condition at D = {D}; "
            "no stabilizing gain exists")

    A1 = sys.A1
    Bd = matrix_exponential(A1, -D) @ sys.B1
    C = controllability_matrix(A1, Bd)
    cond = float(np.linalg.cond(C))
    if cond > COND_LIMIT:
        warnings.warn(f"controllability matrix is ill-conditioned (cond = {cond:.3e})",
                      ConditioningWarning, stacklevel=2)
    coeffs = np.real_if_close(np.poly(poles), tol=1e6)
    coeffs = np.real(coeffs)
    last = np.zeros(dim)
    last[-1] = 1.0
    q = np.linalg.solve(C.T, last)
    K1 = -(q @ _horner(coeffs, A1))
    A_cl = A1 + np.outer(Bd, K1)

    char = _horner(coeffs, A_cl)
    scale = max(1.0, float(np.sum(np.abs(coeffs))) * max(1.0, np.linalg.norm(A_cl, 2)) ** dim)
    if np.max(np.abs(char)) > 1e-8 * scale:
        raise DesignError("pole placement failed: closed loop does not match the "
                          "target characteristic polynomial")
    pole_error = _pole_mismatch(np.linalg.eigvals(A_cl), poles)
    P, residual = solve_lyapunov(A_cl, return_residual=True)
    return GainDesign(D=float(D), K1=K1, P=P, A_cl=A_cl, target_poles=poles,
                      Bd=Bd, A1=A1, B1=sys.B1, condition=cond,
                      pole_error=pole_error, lyapunov_residual=residual)


def solve_lyapunov(A_cl, return_residual=False):
    """Solve ``P A + A^T P = -I`` by the vectorized (Kronecker) linear system."""
    A = np.asarray(A_cl, dtype=float)
    dim = A.shape[0]
    eig = np.linalg.eigvals(A)
    if np.any(eig.real >= 0):
        raise DesignError(
            f"closed-loop matrix is not Hurwitz (max real part {eig.real.max():.3e}); "
            "the Lyapunov equation has no positive definite solution")
    ident = np.eye(dim)
    # row-major vec: vec(X Y Z) = (X kron Z^T) vec(Y)
    op = np.kron(A.T, ident) + np.kron(ident, A.T)
    try:
        p = np.linalg.solve(op, -ident.ravel())
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular Lyapunov system: {exc}") from exc
    P = p.reshape(dim, dim)
    P = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Lyapunov solution is not positive definite") from exc
    residual = float(np.linalg.norm(P @ A + A.T @ P + ident, np.inf))
    if return_residual:
        return P, residual
    return P


def feedback(t, Z1, design):
    if t < design.D:
        return 0.0
    return float(design.K1 @ np.asarray(Z1, dtype=float))


def artstein_window(t, D):
    """``(t - D, t) ∩ (D, inf)`` as ``(lo, hi)``; None when it is empty."""
    if t <= D or D == 0:
        return None
    if t < 2 * D:
        return (D, t)
    return (t - D, t)


def window_lags(step, m):
    """Number of history intervals covered by the Artstein window at ``step``.

    Index form of :func:`artstein_window` on the grid ``t = step * dt``,
    ``D = m * dt``: zero (empty) for ``t <= D``, ``step - m`` lags back to
    ``D`` while ``t < 2D`` and the full ``m`` lags afterwards.
    """
    if step <= m:
        return 0
    return min(m, step - m)


class ArtsteinQuadrature:
    """Quadrature of the Artstein integral on the control-history grid.

    ``phi[k] = exp((k dt - D) A1) B1`` is the integrand weight at lag ``k``.
    Weights are the fourth-order Gregory rule on the ``K + 1`` window nodes
    (closed Newton-Cotes for windows of at most four intervals).
    """

    def __init__(self, design, dt):
        self.design = design
        self.dt = float(dt)
        self.m = delay_steps(design.D, dt)
        lags = np.arange(self.m + 1) * self.dt
        self.phi = np.array([matrix_exponential(design.A1, lag - design.D) @ design.B1
                             for lag in lags])
        self.g = self.phi @ design.K1

    def weights(self, K):
        return self.dt * gregory_weights(K)

    def integral(self, alpha_lags, step):
        """``alpha_lags[k]`` is alpha at time ``(step - k) dt``."""
        K = window_lags(step, self.m)
        if K == 0:
            return np.zeros(self.design.dim)
        return self.weights(K) @ (self.phi[:K + 1] * alpha_lags[:K + 1, None])


class ControlHistory:
    """Ring buffer of the last ``depth + 1`` values of alpha and Z1.

    Entry at lag ``k`` holds the value at time ``t - k dt`` where ``t`` is the
    most recent push. Before the first push the buffer holds zeros, which is
    the ``alpha = 0`` startup convention.
    """

    def __init__(self, dt, D, dim, origin_time=0.0):
        self.dt = float(dt)
        self.depth = delay_steps(D, dt)
        self.D = float(D)
        self.origin_time = float(origin_time)
        self._alpha = np.zeros(self.depth + 1)
        self._z1 = np.zeros((self.depth + 1, dim))
        self._head = -1
        self.count = 0

    @property
    def step(self):
        return self.count - 1

    @property
    def time(self):
        return self.origin_time + self.step * self.dt

    def push(self, alpha, z1):
        self._head = (self._head + 1) % (self.depth + 1)
        self._alpha[self._head] = alpha
        self._z1[self._head] = z1
        self.count += 1

    def _index(self, lag):
        if not 0 <= lag <= self.depth:
            raise IndexError(f"lag {lag} outside [0, {self.depth}]")
        return (self._head - lag) % (self.depth + 1)

    def alpha_at_lag(self, lag):
        return float(self._alpha[self._index(lag)])

    def z1_at_lag(self, lag):
        return self._z1[self._index(lag)].copy()

    def alpha_lags(self):
        """Alpha at lags ``0..depth``, newest first."""
        idx = (self._head - np.arange(self.depth + 1)) % (self.depth + 1)
        return self._alpha[idx]


def artstein_state(X1, hist, design, quad=None):
    """``Z1 = X1 + int exp((t - s - D) A1) B1 alpha(s) ds`` over the window.

    The window is ``(t - D, t) ∩ (D, inf)``: alpha vanishes before ``D`` and
    its jump at ``D`` stays on an interval endpoint.
    """
    X1 = np.asarray(X1, dtype=float)
    if hist.count == 0:
        raise NumericalError("control history is empty")
    if quad is None:
        quad = ArtsteinQuadrature(design, hist.dt)
    if quad.m != hist.depth:
        raise NumericalError("history depth does not match the design delay")
    step = hist.step
    if hist.count < window_lags(step, quad.m) + 1:
        raise NumericalError("control history does not cover the Artstein window")
    return X1 + quad.integral(hist.alpha_lags(), step)


@dataclass
class SeriesResult:
    alpha: np.ndarray
    terms: int                      # most terms used by any chunk
    last_norm: float
    converged: bool
    method: str = "chunked"
    peak_term: float = 0.0          # largest term sup-norm seen


def _window_weights(i, m, dt, k):
    """Quadrature weights at lag ``k`` for the window ending at index ``i``."""
    return dt * gregory_weight(k, window_lags(i, m))


def _window_apply(f, g, m, dt):
    """``(T f)_i = sum_k w_{i,k} g_k f_{i-k}`` over the Artstein window.

    Weights are the fourth-order Gregory rule on the ``K_i + 1`` window
    nodes. ``f`` must already vanish for indices below ``m``.
    """
    N = f.size
    out = np.zeros(N)
    if m == 0 or N <= m + 1:
        return out
    full = dt * gregory_weights(m) * g
    conv = np.convolve(f, full)[:N]
    out[2 * m:] = conv[2 * m:]
    for i in range(m + 1, min(2 * m, N)):
        K = i - m
        k = np.arange(K + 1)
        out[i] = dt * np.sum(gregory_weights(K) * g[k] * f[i - k])
    return out


def _series_global(forcing, g, m, dt, tol, max_terms):
    term = forcing.copy()
    alpha = term.copy()
    norm = float(np.max(np.abs(term))) if term.size else 0.0
    peak, terms = norm, 1
    while norm > tol and terms < max_terms:
        term = _window_apply(term, g, m, dt)
        alpha += term
        terms += 1
        norm = float(np.max(np.abs(term)))
        peak = max(peak, norm)
    return alpha, terms, norm, peak


def _series_chunked(forcing, g, m, dt, tol, max_terms, chunk):
    """Neumann series evaluated on successive chunks (method of steps).

    On a chunk the window integral splits into a part over earlier, already
    summed chunks, which joins the forcing, and a part over the chunk itself.
    The series of the latter is summed to ``tol``. Chunks are short enough
    that the restricted operator has norm about one, so terms never grow and
    no cancellation occurs.
    """
    N = forcing.size
    alpha = np.zeros(N)
    alpha[:m + 1] = forcing[:m + 1]
    worst_terms, worst_norm, peak = 1, 0.0, float(np.max(np.abs(forcing[:m + 1]), initial=0.0))
    c0 = m + 1
    while c0 < N:
        c1 = min(c0 + chunk, N)
        rows = np.arange(c0, c1)
        F = forcing[rows].copy()
        for p, i in enumerate(rows):
            K = window_lags(i, m)
            k = np.arange(i - c0 + 1, K + 1)
            if k.size:
                F[p] += np.sum(_window_weights(i, m, dt, k) * g[k] * alpha[i - k])
        C = rows.size
        p_idx, q_idx = np.meshgrid(np.arange(C), np.arange(C), indexing="ij")
        lag = p_idx - q_idx
        K_rows = np.array([window_lags(i, m) for i in rows])[:, None]
        valid = (lag >= 0) & (lag <= K_rows)
        lag_c = np.where(valid, lag, 0)
        T = np.where(valid, dt * gregory_weight(lag_c, np.broadcast_to(K_rows, lag.shape))
                     * g[lag_c], 0.0)
        term = F
        total = F.copy()
        norm = float(np.max(np.abs(term)))
        peak = max(peak, norm)
        terms = 1
        while norm > tol and terms < max_terms:
            term = T @ term
            total += term
            terms += 1
            norm = float(np.max(np.abs(term)))
            peak = max(peak, norm)
        alpha[rows] = total
        if terms > worst_terms or (terms == worst_terms and norm > worst_norm):
            worst_terms = terms
        worst_norm = max(worst_norm, norm)
        c0 = c1
    return alpha, worst_terms, worst_norm, peak


def predictor_series_alpha(times, X1, design, tol=SERIES_TOL, max_terms=SERIES_MAX_TERMS,
                           quad=None, method="chunked", chunk=None):
    """Alpha as the Neumann series ``sum_j T_D^j (K1 X1)`` on a uniform grid.

    ``(T_D f)(t) = K1 int_{max(t-D, D)}^{t} exp((t - D - s) A1) B1 f(s) ds``.
    ``times`` must start at 0 with uniform spacing that divides ``D``.

    ``method="global"`` sums the series on the whole horizon at once, stopping
    when the newest term has sup-norm ``<= tol``. Its terms grow roughly like
    ``(|g| T)^j / j!`` before decaying, so over long horizons the partial sums
    cancel catastrophically in double precision (``peak_term`` reports how
    badly). ``method="chunked"`` sums the same series chunk by chunk (chunks
    of ``chunk`` steps, chosen automatically by default) and stays accurate.
    The reported term count is the largest used by any chunk.
    """
    times = np.asarray(times, dtype=float)
    X1 = np.asarray(X1, dtype=float)
    if times[0] != 0.0 or times.size < 2:
        raise ValueError("times must start at 0 and hold at least two samples")
    dt = times[1] - times[0]
    if not np.allclose(np.diff(times), dt, rtol=1e-9, atol=0):
        raise ValueError("times must be uniformly spaced")
    if quad is None:
        quad = ArtsteinQuadrature(design, dt)
    m = quad.m
    g = quad.g

    forcing = X1 @ design.K1
    forcing[:m] = 0.0
    if method == "global":
        alpha, terms, norm, peak = _series_global(forcing, g, m, dt, tol, max_terms)
    elif method == "chunked":
        if chunk is None:
            gmax = float(np.max(np.abs(g))) if g.size else 0.0
            chunk = max(1, int(1.0 / (gmax * dt))) if gmax > 0 else forcing.size
            chunk = min(chunk, max(m, 1))
        if chunk < 1:
            raise ValueError(f"chunk must be a positive number of steps, got {chunk}")
        alpha, terms, norm, peak = _series_chunked(forcing, g, m, dt, tol, max_terms,
                                                   int(chunk))
    else:
        raise ValueError(f"unknown series method {method!r}")
    converged = norm <= tol
    if not converged:
        warnings.warn(f"predictor series did not reach tol = {tol:g} after {terms} "
                      f"terms (last term norm {norm:.3e})", ConvergenceWarning, stacklevel=2)
    return SeriesResult(alpha, terms, norm, converged, method, peak)


@dataclass
class KernelTable:
    r: np.ndarray                   # (K+1,) nodes 0..horizon
    f: np.ndarray                   # (K+1, n+1, n+1)
    terms: int
    last_norm: float
    converged: bool

    @property
    def step(self):
        return self.r[1] - self.r[0] if self.r.size > 1 else 0.0


def _matrix_volterra(F0, F, h):
    """``(T F)_i = h * sum_{k<=i} w_{i,k} F0_{i-k} @ F_k`` with Gregory weights."""
    K, d, _ = F.shape
    out = np.zeros_like(F)
    for a in range(d):
        for b in range(d):
            acc = np.zeros(K)
            for c in range(d):
                acc += np.convolve(F0[:, a, c], F[:, c, b])[:K]
            out[:, a, b] = acc
    # replace the unit weights by the rule's weights near both ends
    for i in range(1, K):
        k = np.unique(np.clip(np.r_[0:3, i - 2:i + 1], 0, i)) if i >= 5 else np.arange(i + 1)
        corr = gregory_weight(k, i) - 1.0
        out[i] += np.einsum("k,kac,kcb->ab", corr, F0[i - k], F[k])
    out[0] = 0.0
    return h * out


def kernel_table(design, horizon, step, tol=SERIES_TOL, max_terms=SERIES_MAX_TERMS):
    """Tabulate the inversion kernel ``f`` on ``[0, horizon]``.

    ``f = sum_j T^j f0`` with ``f0(r) = exp((r - D) A1) B1 K1`` and
    ``(T f)(r) = int_0^r exp((r - tau - D) A1) B1 K1 f(tau) dtau``.
    """
    count = max(1, int(np.ceil(horizon / step - 1e-9))) if horizon > 0 else 0
    r = np.linspace(0.0, horizon, count + 1)
    h = r[1] - r[0] if count else 0.0
    G = np.outer(design.B1, design.K1)
    F0 = np.array([matrix_exponential(design.A1, rr - design.D) @ G for rr in r])
    total = F0.copy()
    term = F0
    terms = 1
    norm = float(np.max(np.abs(term)))
    while norm > tol and terms < max_terms and count:
        term = _matrix_volterra(F0, term, h)
        total += term
        terms += 1
        norm = float(np.max(np.abs(term)))
    if count == 0:
        norm = 0.0
    converged = norm <= tol
    if not converged:
        warnings.warn(f"inversion kernel series did not reach tol = {tol:g} after "
                      f"{terms} terms (last term norm {norm:.3e})",
                      ConvergenceWarning, stacklevel=2)
    return KernelTable(r, total, terms, norm, converged)


def inversion_kernel_f(r, design, tol=SERIES_TOL, step=1e-3, max_terms=SERIES_MAX_TERMS):
    """Value of the inversion kernel at ``r >= 0``."""
    if r < 0:
        raise ValueError(f"r must be nonnegative, got {r}")
    return kernel_table(design, r, step, tol, max_terms).f[-1]


def reconstruct_x1(Z1, X1, table, design, dt):
    """``Z1(t) - int_{(t-D, t) ∩ (D, inf)} f(t - s) X1(s) ds`` on the run grid.

    ``Z1`` and ``X1`` are sampled at ``t_i = i dt`` from ``t = 0``; the kernel
    table must use the same step and cover ``[0, D]``.
    """
    Z1 = np.asarray(Z1, dtype=float)
    X1 = np.asarray(X1, dtype=float)
    m = delay_steps(design.D, dt)
    if m and (table.f.shape[0] < m + 1 or not np.isclose(table.step, dt)):
        raise ValueError("kernel table must be tabulated on [0, D] with the run step")
    N = Z1.shape[0]
    steps = np.arange(N)
    K = np.array([window_lags(i, m) for i in steps])
    acc = np.zeros_like(Z1)
    for k in range(m + 1):
        rows = steps[K >= k]
        rows = rows[K[rows] > 0]
        if rows.size == 0:
            continue
        w = dt * gregory_weight(np.full(rows.size, k), K[rows])
        acc[rows] += w[:, None] * (X1[rows - k] @ table.f[k].T)
    return Z1 - acc

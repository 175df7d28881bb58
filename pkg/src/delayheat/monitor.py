"""Lyapunov weights, the composite functional V_D and norm diagnostics."""

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import NumericalError, SpectralWarning
from .predictor import artstein_window

SAFETY_FACTOR = 1.1


@dataclass(frozen=True)
class LyapunovWeights:
    M: float
    rhs: float
    C3: float
    norm_a: float               # ||a||^2 in L^2, a(x) = x c(x) / L
    norm_b: float               # ||b||^2 in L^2, b(x) = -x / L
    norm_K1: float              # ||K1||^2
    norm_B1: float              # ||B1||^2
    norm_A1: float              # induced 2-norm
    lambda_min_P: float
    lambda_max_unstable: float
    safety_factor: float
    empty_max: bool = False

    def sufficiency_margins(self):
        """Both coefficients of the decay estimate; each must be positive."""
        return (self.M - self.norm_b * self.norm_K1 - self.norm_a * self.C3,
                self.M - self.norm_a * self.C3)

    def as_dict(self):
        return asdict(self)


def big_m(sys, design, pot, grid, safety_factor=SAFETY_FACTOR):
    """Weight ``M(D)`` exceeding the sufficient lower bound by ``safety_factor``.

    The bound is ``||b||^2 ||K1||^2 + max(2||a||^2, max_j lambda_j /
    lambda_min(P)) * max(1, D exp(2D ||A1||) ||B1||^2 ||K1||^2)``. With no
    unstable modes the inner ``max_j lambda_j`` is taken as 0 and flagged.
    """
    if not safety_factor > 1.0:
        raise ValueError(f"safety factor must exceed 1, got {safety_factor}")
    x = grid.nodes
    norm_a = grid.integrate((x * pot(x) / grid.L) ** 2)
    norm_b = grid.integrate((x / grid.L) ** 2)
    K1, B1 = design.K1, sys.B1
    norm_K1 = float(K1 @ K1)
    norm_B1 = float(B1 @ B1)
    norm_A1 = float(np.linalg.norm(sys.A1, 2))
    lam_min = design.lambda_min_P()
    empty = sys.n == 0
    if empty:
        warnings.warn("no unstable modes: max over an empty set of eigenvalues taken as 0",
                      SpectralWarning, stacklevel=2)
        lam_max = 0.0
    else:
        lam_max = float(np.max(sys.lambda_unstable))
    D = design.D
    growth = D * np.exp(2 * D * norm_A1) * norm_B1 * norm_K1
    rhs = norm_b * norm_K1 + max(2 * norm_a, lam_max / lam_min) * max(1.0, growth)
    C3 = max(2.0, 2.0 * growth)
    return LyapunovWeights(
        M=safety_factor * rhs, rhs=rhs, C3=C3, norm_a=norm_a, norm_b=norm_b,
        norm_K1=norm_K1, norm_B1=norm_B1, norm_A1=norm_A1, lambda_min_P=lam_min,
        lambda_max_unstable=lam_max, safety_factor=safety_factor, empty_max=empty)


def reconstruct_w(w_modal, dec):
    w_modal = np.asarray(w_modal, dtype=float)
    return w_modal @ dec.eigenfunctions[:w_modal.size]


def gradient_energy(values, grid):
    """``int (v')^2`` with forward differences (exact for piecewise-linear v)."""
    return float(np.sum(np.diff(values) ** 2) / grid.h)


def h1_norm(w_modal, dec, pot, grid, check_tol=1e-3):
    """H^1_0 norm of ``w = sum_j w_j e_j`` via ``int c w^2 - sum lambda_j w_j^2``.

    Cross-checked against the finite-difference gradient energy.
    """
    w_modal = np.asarray(w_modal, dtype=float)
    lam = dec.eigenvalues[:w_modal.size]
    w = reconstruct_w(w_modal, dec)
    value = grid.integrate(pot(grid.nodes) * w**2) - float(lam @ w_modal**2)
    if value < -1e-9 * max(1.0, float(w_modal @ w_modal)):
        raise NumericalError(f"negative H1 energy {value:.3e}: inconsistent decomposition")
    value = max(value, 0.0)
    direct = gradient_energy(w, grid)
    if abs(value - direct) > check_tol * (1.0 + value):
        raise NumericalError(f"H1 identity mismatch: spectral {value:.6e} vs "
                             f"finite-difference {direct:.6e}")
    return float(np.sqrt(value))


class NormEvaluator:
    """Fast norms of ``y = sum_j w_j e_j + (x/L) u_D`` from modal data.

    Gram matrices are trapezoid sums on the grid, so the results coincide
    with reconstructing ``y`` and integrating it there.
    """

    def __init__(self, dec, pot, grid):
        x = grid.nodes
        E = dec.eigenfunctions
        wts = grid.weights
        self.lam = dec.eigenvalues.copy()
        self.c_gram = (E * (wts * pot(x))) @ E.T
        self.lift = E @ (wts * x) / grid.L           # <e_j, x/L> = -b_j
        self.lift_sq = grid.integrate((x / grid.L) ** 2)
        self.L = grid.L

    def h1_0_sq(self, w):
        return float(w @ self.c_gram @ w - self.lam @ w**2)

    def h1_0_sq_many(self, W):
        """Row-wise ``|w|_{H^1_0}^2`` for a ``(samples, J)`` array."""
        W = np.asarray(W, dtype=float)
        return np.einsum("ij,jk,ik->i", W, self.c_gram, W) - W**2 @ self.lam

    def l2_sq(self, u, w):
        return float(w @ w + 2 * u * (self.lift @ w) + u * u * self.lift_sq)

    def norms(self, u, w):
        """Return ``(||y||_{H^1}, ||y||_{L^2})``; ``int y_x^2 = |w|_{H^1_0}^2 + u^2/L``."""
        l2 = max(self.l2_sq(u, w), 0.0)
        h1 = l2 + max(self.h1_0_sq(w), 0.0) + u * u / self.L
        return np.sqrt(h1), np.sqrt(l2)


@dataclass(frozen=True)
class LyapunovSample:
    t: float
    V1: float
    integral_term: float
    modal_term: float
    VD: float


def v_d(t, Z1_history, w_modal, weights, design, eigenvalues):
    """Composite functional at time ``t``.

    ``Z1_history`` is ``(times, Z1)`` with uniform spacing, the last sample at
    ``t``. The middle term integrates ``V1`` over ``(t-D, t) ∩ (D, inf)``.
    """
    times, Z = (np.asarray(a, dtype=float) for a in Z1_history)
    if times.size == 0 or not np.isclose(times[-1], t):
        raise NumericalError("Z1 history must end at the evaluation time")
    P = design.P
    V1_all = 0.5 * np.einsum("ij,jk,ik->i", Z, P, Z)
    window = artstein_window(t, design.D)
    integral = 0.0
    if window is not None:
        lo, _ = window
        if times[0] > lo + 1e-9 * max(1.0, abs(lo)):
            raise NumericalError(f"Z1 history starts at {times[0]} but the window "
                                 f"needs samples from {lo}")
        sel = times >= lo - 1e-9 * max(1.0, abs(lo))
        integral = float(np.trapezoid(V1_all[sel], times[sel])) if sel.sum() > 1 else 0.0
    w_modal = np.asarray(w_modal, dtype=float)
    modal = -0.5 * float(eigenvalues[:w_modal.size] @ w_modal**2)
    V1 = float(V1_all[-1])
    VD = weights.M * V1 + weights.M * integral + modal
    return LyapunovSample(float(t), V1, integral, modal, VD)


def decay_rate_fit(times, values, window=None):
    """Least-squares slope of ``log(values)`` against time.

    Returns ``{"slope", "intercept", "r2", "count"}``. Needs at least 10
    positive samples in the window.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is not None:
        lo, hi = window
        sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
        t, v = t[sel], v[sel]
    if t.size < 10:
        raise ValueError(f"need at least 10 samples to fit a decay rate, got {t.size}")
    if np.any(~(v > 0)):
        raise NumericalError("nonpositive samples in the fit window; the signal has "
                             "hit the floating-point floor, shorten the window")
    y = np.log(v)
    A = np.column_stack([t, np.ones_like(t)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * t + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2,
            "count": int(t.size)}


def lyapunov_diagnostics(traj, evaluator, tol=1e-9):
    """Empirical checks of the functional ``V_D`` along a closed-loop run.

    Reports positivity, the empirical lower constant ``min V_D / E`` and (for
    ``t < D``) upper constant ``max V_D / E`` with ``E = u_D^2 + |w|_{H^1_0}^2``,
    step-wise monotonicity after ``2D``, the fitted decay slope of ``V_D`` and
    the relative defect of the dissipation identity after ``D`` (centered
    differences). ``v1_dissipation_defect`` compares ``dV1/dt`` with
    ``-|Z1|^2 / 2``, which is what the Lyapunov equation implies for
    ``V1 = Z1^T P Z1 / 2``; ``v1_dissipation_defect_unit`` compares it with
    ``-|Z1|^2``.
    """
    t, VD, D, dt = traj.t, traj.VD, traj.D, traj.dt
    energy = traj.u_D**2 + np.maximum(evaluator.h1_0_sq_many(traj.w), 0.0)
    live = energy > 1e-300
    ratio = np.where(live, VD / np.where(live, energy, 1.0), np.inf)
    out = {"vd_min": float(np.min(VD)), "vd_positive": bool(np.all(VD > 0))}
    out["c_lower"] = float(np.min(ratio[live])) if np.any(live) else float("nan")
    early = live & (t < D)
    out["C_upper_before_D"] = float(np.max(ratio[early])) if np.any(early) else float("nan")

    after = t[:-1] > 2 * D + 1e-12 if D > 0 else t[:-1] >= 0
    increase = (VD[1:] - VD[:-1] * (1 + tol))[after]
    rel = (VD[1:] / VD[:-1] - 1.0)[after]
    out["vd_monotone"] = bool(np.all(increase <= 0)) if increase.size else True
    out["vd_max_relative_increase"] = float(np.max(rel)) if rel.size else 0.0
    out["vd_increases"] = int(np.count_nonzero(increase > 0))
    try:
        fit = decay_rate_fit(t, VD, (2 * D, t[-1]))
        out["vd_slope"], out["vd_r2"] = fit["slope"], fit["r2"]
    except (ValueError, NumericalError):
        out["vd_slope"], out["vd_r2"] = float("nan"), float("nan")

    Z = traj.Z1
    z2 = np.einsum("ij,ij->i", Z, Z)
    dV1 = (traj.V1[2:] - traj.V1[:-2]) / (2 * dt)
    mid = slice(1, -1)
    sel = t[mid] > D + dt * 1.5
    # V1 = Z^T P Z / 2 with P A_cl + A_cl^T P = -I gives dV1/dt = -|Z1|^2 / 2
    for key, factor in (("v1_dissipation_defect", 0.5), ("v1_dissipation_defect_unit", 1.0)):
        defect = np.abs(dV1 + factor * z2[mid]) / (1.0 + z2[mid])
        out[key] = float(np.max(defect[sel])) if np.any(sel) else 0.0
    return out

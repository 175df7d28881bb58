"""Closed- and open-loop simulation in modal coordinates.

The modal block ``u_D' = alpha_D``, ``w_j' = lambda_j w_j + a_j u_D + b_j alpha_D``
is advanced with RK4. For ``D > 0`` the delayed input over a step is
``alpha(s) = K1 exp((s - s0) A_cl) Z1(s0)``, read exactly from the Z1 history,
so the stage values need no interpolation.

At every node the controller recomputes ``Z1`` from the simulated ``X1`` and
the stored controls (Artstein quadrature, implicit in the newest control
``alpha(t) = K1 Z1(t)``), so the feedback acts on the actual state. The exact
propagator ``exp(A_cl dt)`` gives a second, independent representation of
``Z1``; the one-step discrepancy is checked during the run and the drift of
the globally propagated ``Z1`` is recorded. Feeding back the propagated value
alone would leave discretization errors in the unstable modes uncorrected,
where they grow like ``exp(lambda_1 t)``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, NumericalError
from .expm import matrix_exponential
from .monitor import NormEvaluator
from .predictor import ArtsteinQuadrature, ControlHistory, delay_steps, window_lags

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12


@dataclass
class SimConfig:
    dt: float
    t_final: float
    D: float
    y0: object = None               # {"mode": k, "amplitude": a} or grid samples
    open_loop: bool = False
    consistency_cadence: int = 1
    consistency_tol: float = 1e-6
    snapshot_times: tuple = ()
    check_dt_guard: bool = True

    def validate(self, dec=None):
        problems = []
        if not self.dt > 0:
            problems.append(f"simulation.dt must be positive, got {self.dt}")
        if not self.t_final > 0:
            problems.append(f"simulation.t_final must be positive, got {self.t_final}")
        if not self.D >= 0:
            problems.append(f"delay D must be nonnegative, got {self.D}")
        if self.dt > 0 and self.D >= 0:
            ratio = self.D / self.dt
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                problems.append(f"delay / simulation.dt = {self.D} / {self.dt} "
                                "must be an integer")
            if self.check_dt_guard and self.D > 0 and self.dt > self.D / 4 + 1e-15:
                problems.append(f"simulation.dt = {self.dt} exceeds D/4 = {self.D / 4}")
        if self.t_final > 0 and self.dt > 0:
            steps = self.t_final / self.dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                problems.append(f"simulation.t_final / dt = {steps!r} must be an integer")
        if dec is not None and self.check_dt_guard and self.dt > 0:
            limit = 0.5 / abs(dec.eigenvalues[-1])
            if self.dt > limit:
                problems.append(f"simulation.dt = {self.dt} exceeds 0.5/|lambda_J| = "
                                f"{limit:.4g} for the retained modes")
        if self.consistency_cadence < 0:
            problems.append("simulation.consistency_cadence must be >= 0")
        if problems:
            raise ConfigError("invalid simulation settings", problems)

    @property
    def steps(self):
        return int(round(self.t_final / self.dt))


@dataclass
class SimState:
    step: int
    t: float
    u_D: float
    w: np.ndarray
    Z1: np.ndarray
    alpha: float
    history: ControlHistory = field(repr=False)
    Z1_prop: np.ndarray = None      # exp(A_cl (t - D)) Z1(D), propagated globally
    Z1_step: np.ndarray = None      # exp(A_cl dt) Z1(t - dt), one step

    def X1(self, n):
        return np.concatenate(([self.u_D], self.w[:n]))


@dataclass
class Trajectory:
    t: np.ndarray
    u_D: np.ndarray
    alpha: np.ndarray               # alpha(t), the undelayed feedback
    alpha_D: np.ndarray             # alpha(t - D), the input acting at t
    w: np.ndarray                   # (steps+1, J)
    Z1: np.ndarray                  # (steps+1, n+1)
    h1_norm: np.ndarray             # ||y(t)||_{H^1}
    l2_norm: np.ndarray
    V1: np.ndarray
    VD: np.ndarray
    integral_term: np.ndarray
    modal_term: np.ndarray
    artstein_defect: np.ndarray     # one-step |propagated - quadrature|, NaN if unchecked
    D: float
    dt: float
    n: int
    open_loop: bool = False
    snapshots: dict = field(default_factory=dict)
    artstein_drift: np.ndarray = None   # |globally propagated Z1 - Z1|

    @property
    def X1(self):
        return np.column_stack([self.u_D, self.w[:, :self.n]])

    @property
    def J(self):
        return self.w.shape[1]


def project_initial(y0, dec, grid):
    """Modal coefficients ``w_j(0) = <y0, e_j>``.

    ``y0`` is either a mapping ``{"mode": k, "amplitude": a}`` (1-based mode
    index) or an array of ``N + 1`` grid samples with ``y0(0) = 0``.
    """
    J = dec.J
    if y0 is None:
        return np.zeros(J)
    if isinstance(y0, dict):
        k = int(y0.get("mode", 1))
        if not 1 <= k <= J:
            raise ConfigError("invalid initial mode", [f"mode {k} not in [1, {J}]"])
        w = np.zeros(J)
        w[k - 1] = float(y0.get("amplitude", 1.0))
        return w
    y = np.asarray(y0, dtype=float)
    if y.shape != (grid.N + 1,):
        raise ConfigError("initial condition does not match the grid",
                          [f"expected {grid.N + 1} samples, got shape {y.shape}"])
    if abs(y[0]) > 1e-8 * max(1.0, np.max(np.abs(y))):
        raise ConfigError("initial condition violates y0(0) = 0",
                          [f"y0(0) = {y[0]}"])
    return dec.eigenfunctions @ (grid.weights * y)


def reconstruct_y(state, dec, grid):
    """``y = sum_j w_j e_j + (x / L) u_D`` on the grid nodes."""
    x = grid.nodes
    y = state.w @ dec.eigenfunctions[:state.w.size] + (x / grid.L) * state.u_D
    y[0] = 0.0
    y[-1] = state.u_D
    return y


class Simulator:
    """Holds the precomputed propagators for one (design, dt) pair."""

    def __init__(self, dec, coeffs, sys, design, cfg):
        cfg.validate(dec)
        self.cfg = cfg
        self.dec = dec
        self.lam = dec.eigenvalues.copy()
        self.a = coeffs.a.copy()
        self.b = coeffs.b.copy()
        self.n = sys.n
        self.dim = sys.dim
        self.dt = cfg.dt
        self.open_loop = cfg.open_loop or design is None
        self.design = None if self.open_loop else design
        D = cfg.D if self.design is None else self.design.D
        if self.design is not None and not np.isclose(D, cfg.D):
            raise ConfigError("design delay differs from the simulation delay",
                              [f"design D = {design.D}, simulation D = {cfg.D}"])
        self.D = D
        self.m = delay_steps(D, cfg.dt)
        if self.design is not None:
            self.K1 = self.design.K1
            self.E_cl = matrix_exponential(self.design.A_cl, cfg.dt)
            self.K1_half = self.K1 @ matrix_exponential(self.design.A_cl, 0.5 * cfg.dt)
            self.quad = ArtsteinQuadrature(self.design, cfg.dt) if self.m else None
            self._implicit = {}

    def rhs(self, u, w, alpha_D):
        return alpha_D, self.lam * w + self.a * u + self.b * alpha_D

    def initial_state(self, w0):
        w0 = np.asarray(w0, dtype=float)
        hist = ControlHistory(self.dt, self.D, self.dim)
        X1 = np.concatenate(([0.0], w0[:self.n]))
        alpha = 0.0
        if self.design is not None and self.m == 0:
            alpha = float(self.K1 @ X1)
        hist.push(alpha, X1)
        return SimState(0, 0.0, 0.0, w0.copy(), X1, alpha, hist)

    def delayed_inputs(self, state):
        """``alpha(t - D)`` at the start, midpoint and end of the next step."""
        lagged = state.step - self.m
        if self.design is None or self.m == 0 or lagged < self.m:
            return 0.0, 0.0, 0.0
        z = state.history.z1_at_lag(self.m)
        return (float(self.K1 @ z), float(self.K1_half @ z),
                state.history.alpha_at_lag(self.m - 1))

    def _rk4(self, u, w, inputs):
        h = self.dt
        a0, am, a1 = inputs
        k1u, k1w = self.rhs(u, w, a0)
        k2u, k2w = self.rhs(u + 0.5 * h * k1u, w + 0.5 * h * k1w, am)
        k3u, k3w = self.rhs(u + 0.5 * h * k2u, w + 0.5 * h * k2w, am)
        k4u, k4w = self.rhs(u + h * k3u, w + h * k3w, a1)
        return (u + h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u),
                w + h / 6 * (k1w + 2 * k2w + 2 * k3w + k4w))

    def _rk4_undelayed(self, u, w):
        # D = 0: alpha_D = K1 X1 evaluated inside each stage
        K1, n, h = self.K1, self.n, self.dt

        def f(u, w):
            return self.rhs(u, w, float(K1[0] * u + K1[1:] @ w[:n]))

        k1u, k1w = f(u, w)
        k2u, k2w = f(u + 0.5 * h * k1u, w + 0.5 * h * k1w)
        k3u, k3w = f(u + 0.5 * h * k2u, w + 0.5 * h * k2w)
        k4u, k4w = f(u + h * k3u, w + h * k3w)
        return (u + h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u),
                w + h / 6 * (k1w + 2 * k2w + 2 * k3w + k4w))

    def step(self, state):
        if self.design is not None and self.m == 0:
            u, w = self._rk4_undelayed(state.u_D, state.w)
        else:
            u, w = self._rk4(state.u_D, state.w, self.delayed_inputs(state))
        k = state.step + 1
        t = k * self.dt
        X1 = np.concatenate(([u], w[:self.n]))
        Z1_prop = Z1_step = None
        if self.design is None or k <= self.m or self.m == 0:
            Z1 = X1
        else:
            Z1 = self.measured_z1(X1, state.history, k)
            Z1_step = self.E_cl @ state.Z1
            Z1_prop = self.E_cl @ (state.Z1 if state.Z1_prop is None else state.Z1_prop)
        if self.design is not None and k >= self.m:
            alpha = float(self.K1 @ Z1)
        else:
            alpha = 0.0
        self._check_finite(t, u, w, Z1, state)
        state.history.push(alpha, Z1)
        return SimState(k, t, float(u), w, Z1, alpha, state.history, Z1_prop, Z1_step)

    def measured_z1(self, X1, hist, k):
        """Artstein quadrature at step ``k`` before alpha(t_k) is stored.

        The newest node carries ``alpha(t_k) = K1 Z1(t_k)``, so the rule is
        solved as ``(I - w_0 phi_0 K1) Z1 = X1 + sum_{j >= 1} w_j phi_j alpha_{k-j}``.
        """
        K = window_lags(k, self.m)
        if K == 0:
            return X1.copy()
        wts = self.quad.weights(K)
        known = (wts[1:] * hist.alpha_lags()[:K]) @ self.quad.phi[1:K + 1]
        key = min(K, 5)
        inv = self._implicit.get(key)
        if inv is None:
            mat = np.eye(self.dim) - wts[0] * np.outer(self.quad.phi[0], self.K1)
            inv = self._implicit[key] = np.linalg.inv(mat)
        return inv @ (X1 + known)

    def _check_finite(self, t, u, w, Z1, prev):
        size = max(abs(u), float(np.max(np.abs(w))), float(np.max(np.abs(Z1))))
        if not np.isfinite(size) or size > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"simulation diverged at t = {t:.6g}: last finite state at "
                f"t = {prev.t:.6g} had |u_D| = {abs(prev.u_D):.3e}, "
                f"max|w| = {np.max(np.abs(prev.w)):.3e}, "
                f"max|Z1| = {np.max(np.abs(prev.Z1)):.3e}")

    def artstein_defect(self, state):
        """``|exp(A_cl dt) Z1(t - dt) - Z1 (quadrature of X1 and the history)|``."""
        if self.design is None or self.m == 0 or state.Z1_step is None:
            return 0.0
        X1 = state.X1(self.n)
        integral = self.quad.integral(state.history.alpha_lags(), state.step)
        return float(np.max(np.abs(state.Z1_step - X1 - integral)))

    def artstein_drift(self, state):
        """``|exp(A_cl (t - D)) Z1(D) - Z1|``, zero before ``D``."""
        if state.Z1_prop is None:
            return 0.0
        return float(np.max(np.abs(state.Z1_prop - state.Z1)))

    def consistency_tolerance(self, state):
        """``tol + dt^2`` bound scaled by the control magnitude in the window."""
        scale = 1.0 + float(np.max(np.abs(state.history.alpha_lags())))
        return self.cfg.consistency_tol + 10.0 * self.D * self.dt**2 * scale


def simulate(cfg, dec, coeffs, sys, design, pot, grid, weights=None):
    """Run to ``cfg.t_final`` and return the enriched trajectory."""
    sim = Simulator(dec, coeffs, sys, design, cfg)
    steps = cfg.steps
    J, dim = dec.J, sys.dim
    norms = NormEvaluator(dec, pot, grid)

    t = np.arange(steps + 1) * cfg.dt
    u_D = np.zeros(steps + 1)
    alpha = np.zeros(steps + 1)
    alpha_D = np.zeros(steps + 1)
    W = np.zeros((steps + 1, J))
    Z = np.zeros((steps + 1, dim))
    h1 = np.zeros(steps + 1)
    l2 = np.zeros(steps + 1)
    defect = np.full(steps + 1, np.nan)
    drift = np.zeros(steps + 1)

    snap_steps = {int(round(ts / cfg.dt)): ts for ts in cfg.snapshot_times
                  if 0 <= ts <= cfg.t_final + 1e-12}
    snapshots = {}

    state = sim.initial_state(project_initial(cfg.y0, dec, grid))
    cadence = cfg.consistency_cadence
    while True:
        k = state.step
        u_D[k] = state.u_D
        alpha[k] = state.alpha
        W[k] = state.w
        Z[k] = state.Z1
        h1[k], l2[k] = norms.norms(state.u_D, state.w)
        drift[k] = sim.artstein_drift(state)
        if cadence and k % cadence == 0 and not sim.open_loop and sim.m:
            defect[k] = sim.artstein_defect(state)
            if defect[k] > sim.consistency_tolerance(state):
                raise NumericalError(
                    f"predictor representations disagree at t = {state.t:.6g}: "
                    f"|Z1 - artstein(X1, history)| = {defect[k]:.3e}")
        if k in snap_steps:
            snapshots[snap_steps[k]] = reconstruct_y(state, dec, grid)
        if k == steps:
            break
        inputs = sim.delayed_inputs(state)
        alpha_D[k] = inputs[0]
        state = sim.step(state)
    if sim.design is not None and sim.m == 0:
        alpha_D[:] = alpha
    else:
        alpha_D[-1] = sim.delayed_inputs(state)[0]

    traj = Trajectory(t=t, u_D=u_D, alpha=alpha, alpha_D=alpha_D, w=W, Z1=Z,
                      h1_norm=h1, l2_norm=l2, V1=np.full(steps + 1, np.nan),
                      VD=np.full(steps + 1, np.nan),
                      integral_term=np.full(steps + 1, np.nan),
                      modal_term=-0.5 * (W**2 @ dec.eigenvalues),
                      artstein_defect=defect, D=sim.D, dt=cfg.dt, n=sys.n,
                      open_loop=sim.open_loop, snapshots=snapshots,
                      artstein_drift=drift)
    if sim.design is not None and weights is not None:
        attach_lyapunov(traj, sim.design, weights)
    log.info("simulated %d steps (D = %g, dt = %g, open_loop = %s)",
             steps, sim.D, cfg.dt, sim.open_loop)
    return traj


def attach_lyapunov(traj, design, weights):
    """Fill V1, the windowed integral of V1 and VD along a trajectory."""
    Z = traj.Z1
    V1 = 0.5 * np.einsum("ij,jk,ik->i", Z, design.P, Z)
    dt = traj.dt
    m = delay_steps(design.D, dt)
    cum = np.zeros_like(V1)
    if m:
        # cumulative trapezoid of V1 from t = D
        seg = 0.5 * dt * (V1[m + 1:] + V1[m:-1])
        cum[m + 1:] = np.cumsum(seg)
    steps = np.arange(V1.size)
    K = np.array([window_lags(i, m) for i in steps])
    integral = cum - cum[steps - K]
    traj.V1 = V1
    traj.integral_term = integral
    traj.VD = weights.M * V1 + weights.M * integral + traj.modal_term
    return traj

"""Gain-only Picard iteration, Kaniel-Shinbrot sandwich and uniqueness residual.

Trajectories are arrays of shape ``(n_t, nx1, nx2, nx3, N_v, N_v, N_v)``
holding the solution at the Duhamel nodes of a :class:`TimeGrid`.  Both
schemes advance through :func:`ks_linear_step`, so the first KS upper
iterate reproduces the Picard fixed point by construction.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .collision import CollisionKernel, SphereRule, gain_direct, loss_rate
from .grid import DistributionField, PhaseGrid, integrate_xv, weighted_norm
from .transport import TimeGrid, stream_values

log = logging.getLogger(__name__)


class SmallnessWarning(UserWarning):
    """Initial datum exceeds the configured smallness threshold."""


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls.

    ``eta`` is only compared against the critical norm of the datum and
    triggers a warning; convergence is judged by measured increments.
    """

    T: float = 1.0
    dt: float = 0.25
    max_iters: int = 60
    iter_tol: float = 1e-8
    eta: float = 0.1
    quadrature: str = "trapezoid"
    gain_method: str = "conservative"
    singularity: str = "zero"
    eps_nn: float = 1e-12

    def __post_init__(self):
        if not (self.T > 0 and self.dt > 0 and self.iter_tol > 0 and self.max_iters > 0):
            raise ValueError("T, dt, iter_tol and max_iters must be positive")

    def time_grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.T, self.dt, self.quadrature)

    def with_dt(self, dt: float) -> "SolverConfig":
        d = dict(self.__dict__)
        d["dt"] = dt
        return SolverConfig(**d)


@dataclass
class Trajectory:
    grid: PhaseGrid
    times: np.ndarray
    values: np.ndarray

    def at(self, n: int) -> DistributionField:
        return DistributionField(self.grid, self.values[n], float(self.times[n]))

    def subsample(self, step: int) -> "Trajectory":
        return Trajectory(self.grid, self.times[::step], self.values[::step])


@dataclass
class PicardReport:
    trajectory: Trajectory
    iterations: int
    converged: bool
    increments: list = field(default_factory=list)
    contraction: list = field(default_factory=list)
    monotone: bool = True
    critical_norm: float = 0.0

    def manifest(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "increments": [float(x) for x in self.increments],
            "contraction_factors": [float(x) for x in self.contraction],
            "monotone": self.monotone,
            "critical_norm": self.critical_norm,
        }


@dataclass
class SandwichState:
    """Kaniel-Shinbrot pair with per-iteration certificates."""

    h: Trajectory
    g: Trajectory
    n: int
    gap: np.ndarray
    monotonicity_certificate: float
    gap_history: list = field(default_factory=list)
    certificate_history: list = field(default_factory=list)
    g2_minus_g1: float = float("nan")
    beginning_condition: bool = False
    converged: bool = False

    def manifest(self) -> dict:
        return {
            "iterations": self.n,
            "converged": self.converged,
            "gap_history": [float(x) for x in self.gap_history],
            "gap_ratios": [float(b / a) if a > 0 else 0.0 for a, b in zip(self.gap_history, self.gap_history[1:])],
            "certificate_history": [float(x) for x in self.certificate_history],
            "worst_certificate": float(self.monotonicity_certificate),
            "g2_minus_g1": float(self.g2_minus_g1),
            "beginning_condition": self.beginning_condition,
        }


# ---------------------------------------------------------------------------
# operators on trajectories


def _gain_traj(a: np.ndarray, b: np.ndarray, grid, k, rule, cfg: SolverConfig) -> np.ndarray:
    return np.stack(
        [
            gain_direct(
                DistributionField(grid, a[n]), DistributionField(grid, b[n]), k, rule,
                method=cfg.gain_method, singularity=cfg.singularity,
            ).values
            for n in range(a.shape[0])
        ]
    )


def _loss_traj(a: np.ndarray, grid, k, rule, cfg: SolverConfig) -> np.ndarray:
    return np.stack(
        [loss_rate(DistributionField(grid, a[n]), k, rule, singularity=cfg.singularity).values for n in range(a.shape[0])]
    )


def ks_linear_step(
    f0: DistributionField,
    absorb: np.ndarray | None,
    src: np.ndarray | None,
    tg: TimeGrid,
) -> Trajectory:
    """Solve ``u_t + v . grad_x u + a u = s`` by an integrating factor along characteristics.

    With pulled-back absorption ``I_n(tau_j) = int_{tau_j}^{t_n} S(t_n - t) a(t) dt``
    (trapezoid on the nodes ``j..n``) the solution at node ``n`` is

        u_n = S(t_n) f0 exp(-I_n(0)) + sum_j w_j exp(-I_n(tau_j)) S(t_n - tau_j) s_j.

    ``absorb`` and ``src`` are node-sampled trajectories (or ``None`` for 0).
    """
    if tg.quadrature != "trapezoid":
        raise ValueError("ks_linear_step uses trapezoid quadrature")
    grid = f0.grid
    t = tg.times()
    nt = t.size
    dt = tg.dt
    shapes = [f0.values.shape]
    if absorb is not None:
        if np.any(absorb < 0):
            raise ValueError("absorption must be non-negative")
        shapes.append(absorb.shape[1:])
    if src is not None:
        shapes.append(src.shape[1:])
    shape = np.broadcast_shapes(*shapes)
    f0v = np.broadcast_to(f0.values, shape)
    out = np.empty((nt,) + shape)
    for n in range(nt):
        # cumulative pulled-back absorption, accumulated from tau = t_n backwards
        expo = np.zeros(shape)
        terms = np.zeros(shape)
        moved_a = None
        for j in range(n, -1, -1):
            if absorb is not None:
                a_j = stream_values(np.broadcast_to(absorb[j], shape), grid, t[n] - t[j])
                if moved_a is not None:
                    expo = expo + dt / 2 * (moved_a + a_j)
                moved_a = a_j
            if src is not None and n > 0:
                wj = dt / 2 if j in (0, n) else dt
                s_j = stream_values(np.broadcast_to(src[j], shape), grid, t[n] - t[j])
                terms = terms + wj * np.exp(-expo) * s_j
        out[n] = stream_values(f0v, grid, t[n]) * np.exp(-expo) + terms
    return Trajectory(grid, t, out)


def critical_norm(f0: DistributionField, k: CollisionKernel) -> float:
    """``|| <grad_x>^{1/2} <v>^{1/2 + gamma} f0 ||_{L^2}``."""
    return weighted_norm(f0, 0.5, 0.5 + k.gamma, "L2")


def picard_gain_only(
    f0: DistributionField,
    k: CollisionKernel,
    rule: SphereRule | None,
    cfg: SolverConfig,
    *,
    keep_iterates: bool = False,
) -> PicardReport:
    """Fixed point of ``f -> S(t) f0 + int S(t - tau) Q+(f, f)(tau) dtau``.

    Iterates from ``f = 0``; the first iterate is ``S(t) f0``.  Stops when
    the relative L2 increment drops below ``iter_tol`` or stops shrinking
    (round-off floor).  Divergence is reported, not raised.
    """
    if not f0.nonnegative():
        raise ValueError("initial datum must be non-negative")
    rule = rule or SphereRule()
    tg = cfg.time_grid()
    grid = f0.grid
    cn = critical_norm(f0, k)
    if cn > cfg.eta:
        warnings.warn(f"critical norm {cn:.3g} exceeds eta={cfg.eta}", SmallnessWarning, stacklevel=2)
    cur = ks_linear_step(f0, None, None, tg).values
    report = PicardReport(Trajectory(grid, tg.times(), cur), 1, False, critical_norm=cn)
    if not np.any(cur):
        report.converged = True
        return report
    iterates = [cur] if keep_iterates else None
    prev_inc = None
    for it in range(2, cfg.max_iters + 1):
        src = _gain_traj(cur, cur, grid, k, rule, cfg)
        new = ks_linear_step(f0, None, src, tg).values
        with np.errstate(over="ignore", invalid="ignore"):
            scale = np.linalg.norm(new)
            inc = np.linalg.norm(new - cur) / scale if scale > 0 else 0.0
        if np.any(new < cur - cfg.eps_nn * np.abs(new).max()):
            report.monotone = False
        report.increments.append(inc)
        if prev_inc:
            report.contraction.append(inc / prev_inc)
        cur = new
        if keep_iterates:
            iterates.append(cur)
        report.iterations = it
        if inc <= cfg.iter_tol or (prev_inc is not None and inc >= prev_inc and inc < 1e-13):
            report.converged = True
            break
        if not np.isfinite(inc) or inc > 1e6:
            break
        prev_inc = inc
    report.trajectory = Trajectory(grid, tg.times(), cur)
    if keep_iterates:
        report.iterates = iterates
    log.info("picard: %d iterations, converged=%s", report.iterations, report.converged)
    return report


def _violation(lo: np.ndarray, hi: np.ndarray, scale: float) -> float:
    """Largest relative amount by which ``lo <= hi`` fails (negative if it holds)."""
    return float(np.max(lo - hi)) / scale if scale > 0 else 0.0


def kaniel_shinbrot(
    f0: DistributionField,
    k: CollisionKernel,
    rule: SphereRule | None,
    cfg: SolverConfig,
    *,
    gain_only: PicardReport | None = None,
    picard_cfg: SolverConfig | None = None,
) -> tuple[Trajectory, SandwichState]:
    """Monotone sandwich ``h_n <= f <= g_n`` for the full equation.

    ``h_1 = 0`` and ``g_1`` is the gain-only solution.  Each iteration solves

        g_{n+1}:  u_t + v . grad_x u + u A[h_n] = Q+(g_n, g_n)
        h_{n+1}:  u_t + v . grad_x u + u A[g_n] = Q+(h_n, h_n)

    and certifies ``h_n <= h_{n+1} <= g_{n+1} <= g_n`` within ``eps_nn``
    relative to ``max g_1``.
    """
    rule = rule or SphereRule()
    tg = cfg.time_grid()
    grid = f0.grid
    if gain_only is None:
        pc = picard_cfg or SolverConfig(**{**cfg.__dict__, "iter_tol": 1e-15, "max_iters": 200})
        gain_only = picard_gain_only(f0, k, rule, pc)
    g = gain_only.trajectory.values
    h = np.zeros_like(g)
    scale = float(np.abs(g).max())
    times = tg.times()
    state = SandwichState(Trajectory(grid, times, h), Trajectory(grid, times, g), 1, (g - h).max(axis=tuple(range(1, g.ndim))), -np.inf)
    if scale == 0:
        state.converged = True
        state.g2_minus_g1 = 0.0
        state.beginning_condition = True
        return Trajectory(grid, times, g), state
    gap = float((g - h).max())
    state.gap_history.append(gap)
    for it in range(2, cfg.max_iters + 1):
        g_new = ks_linear_step(f0, _loss_traj(h, grid, k, rule, cfg), _gain_traj(g, g, grid, k, rule, cfg), tg).values
        h_new = ks_linear_step(f0, _loss_traj(g, grid, k, rule, cfg), _gain_traj(h, h, grid, k, rule, cfg), tg).values
        cert = max(
            _violation(-h_new, np.zeros_like(h_new), scale),
            _violation(h, h_new, scale),
            _violation(h_new, g_new, scale),
            _violation(g_new, g, scale),
        )
        if it == 2:
            state.g2_minus_g1 = float(np.abs(g_new - g).max()) / scale
            state.beginning_condition = cert <= cfg.eps_nn
        state.certificate_history.append(cert)
        state.monotonicity_certificate = max(state.monotonicity_certificate, cert)
        h, g = h_new, g_new
        gap = float((g - h).max())
        state.gap_history.append(gap)
        state.n = it
        if cert > cfg.eps_nn:
            log.warning("sandwich certificate failed at iteration %d: %.3e", it, cert)
        if gap <= cfg.iter_tol * scale:
            state.converged = True
            break
        if len(state.gap_history) > 3 and gap >= state.gap_history[-2] >= state.gap_history[-3]:
            log.warning("gap stagnated at %.3e", gap)
            break
    state.h = Trajectory(grid, times, h)
    state.g = Trajectory(grid, times, g)
    state.gap = (g - h).max(axis=tuple(range(1, g.ndim)))
    f = Trajectory(grid, times, 0.5 * (g + h))
    return f, state


# ---------------------------------------------------------------------------
# residuals


def collision_traj(f: np.ndarray, grid, k, rule, cfg: SolverConfig) -> np.ndarray:
    return _gain_traj(f, f, grid, k, rule, cfg) - f * _loss_traj(f, grid, k, rule, cfg)


def duhamel_integral(src: np.ndarray, grid: PhaseGrid, tg: TimeGrid) -> np.ndarray:
    """``int_0^{t_n} S(t_n - tau) s(tau) dtau`` at every node by the trapezoid rule."""
    from .transport import duhamel_trajectory

    return duhamel_trajectory(np.zeros(src.shape[1:]), src, grid, tg)


def duhamel_residual(f: Trajectory, f0: DistributionField, k, rule, cfg: SolverConfig) -> dict:
    """Relative residual of the mild form and a Richardson quadrature tolerance.

    ``tol_quad`` compares the Duhamel integral on the node grid with the one
    on every second node; for the trapezoid rule the difference over 3
    estimates the fine-grid error.
    """
    tg = cfg.time_grid()
    grid = f.grid
    Q = collision_traj(f.values, grid, k, rule, cfg)
    I = duhamel_integral(Q, grid, tg)
    free = np.stack([stream_values(np.broadcast_to(f0.values, f.values.shape[1:]), grid, t) for t in tg.times()])
    scale = float(np.linalg.norm(f.values))
    res = float(np.linalg.norm(f.values - free - I)) / scale
    tol_quad = float("nan")
    if tg.n_steps % 2 == 0 and tg.n_steps >= 2:
        I2 = duhamel_integral(Q[::2], grid, tg.coarsen())
        tol_quad = float(np.linalg.norm(I[::2] - I2)) / 3.0 / scale
    return {"residual": res, "tol_quad": tol_quad}


def uniqueness_residual(
    f: Trajectory,
    g: Trajectory,
    k: CollisionKernel,
    rule: SphereRule | None,
    cfg: SolverConfig,
    s: float = 0.5,
) -> float:
    """``sup_t ||w||_{L^{2, s+gamma}_v L^2_x} + int ||N[w]||_{L^{2, s+gamma}_v L^2_x} dt`` for ``w = f - g``.

    ``N[w] = Q+(w, f) + Q+(g, w) - w A[f] - g A[w]``.
    """
    if f.values.shape != g.values.shape or not np.allclose(f.times, g.times):
        raise ValueError("trajectories must share grid and time nodes")
    grid = f.grid
    rule = rule or SphereRule()
    w = f.values - g.values
    r = s + k.gamma
    sup = max(weighted_norm(DistributionField(grid, w[n]), 0.0, r, "L2") for n in range(w.shape[0]))
    if not np.any(w):
        return float(sup)
    N = (
        _gain_traj(w, f.values, grid, k, rule, cfg)
        + _gain_traj(g.values, w, grid, k, rule, cfg)
        - w * _loss_traj(f.values, grid, k, rule, cfg)
        - g.values * _loss_traj(w, grid, k, rule, cfg)
    )
    norms = np.array([weighted_norm(DistributionField(grid, N[n]), 0.0, r, "L2") for n in range(N.shape[0])])
    t = f.times
    integral = float(np.sum((norms[1:] + norms[:-1]) / 2 * np.diff(t))) if t.size > 1 else 0.0
    return float(sup + integral)


def l1_history(f: Trajectory) -> np.ndarray:
    """``||f(t)||_{L^1_{x,v}}`` at each stored time."""
    return np.array([integrate_xv(f.grid, np.abs(f.values[n])) for n in range(f.values.shape[0])])

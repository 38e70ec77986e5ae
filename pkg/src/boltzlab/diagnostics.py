"""Monitors over stored trajectories: conservation, positivity, integrability and regularity functionals.

Sup norms in ``x`` and ``v`` are grid maxima and hence lower bounds on the
continuum supremum.  Scattering verdicts are trend flags over a finite
window, not statements about ``t -> infinity``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .collision import CollisionKernel, SphereRule
from .grid import DistributionField, integrate_xv, weighted_norm
from .littlewood_paley import chi
from .solvers import SolverConfig, Trajectory, _gain_traj, _loss_traj, kaniel_shinbrot
from .transport import stream_values

# ---------------------------------------------------------------------------
# report


@dataclass
class TrajectoryReport:
    times: np.ndarray
    mass: np.ndarray
    l1: np.ndarray
    minimum: np.ndarray
    weighted: dict = field(default_factory=dict)
    M_r: np.ndarray | None = None
    E_sr: np.ndarray | None = None
    scattering_increments: list = field(default_factory=list)
    lifespan: float | None = None
    verdicts: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, float)
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("time stamps must be strictly increasing")

    def rows(self) -> list[dict]:
        out = []
        for n, t in enumerate(self.times):
            row = {"t": float(t), "mass": float(self.mass[n]), "l1": float(self.l1[n]), "min": float(self.minimum[n])}
            for key, series in self.weighted.items():
                row[key] = float(series[n])
            if self.M_r is not None:
                row["M_r"] = float(self.M_r[n])
            if self.E_sr is not None:
                row["E_sr"] = float(self.E_sr[n])
            out.append(row)
        return out

    def to_csv(self) -> str:
        rows = self.rows()
        buf = io.StringIO()
        if rows:
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(list(rows[0]))
            for row in rows:
                w.writerow([repr(v) for v in row.values()])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "params": self.params,
            "final_time": float(self.times[-1]) if len(self.times) else 0.0,
            "M_r": float(self.M_r[-1]) if self.M_r is not None and len(self.M_r) else None,
            "E_sr": float(self.E_sr[-1]) if self.E_sr is not None and len(self.E_sr) else None,
            "scattering_increments": [float(x) for x in self.scattering_increments],
            "lifespan_bound": self.lifespan,
            "verdicts": self.verdicts,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# helpers


def _as_traj(f) -> Trajectory:
    if isinstance(f, Trajectory):
        return f
    raise TypeError("expected a Trajectory")


def _field_norms(grid, arr: np.ndarray, s: float, r: float, mix) -> np.ndarray:
    return np.array([weighted_norm(DistributionField(grid, a), s, r, mix) for a in arr])


def _cum_trapz(times: np.ndarray, y: np.ndarray) -> np.ndarray:
    if times.size < 2:
        return np.zeros_like(y)
    return np.concatenate([[0.0], np.cumsum((y[1:] + y[:-1]) / 2 * np.diff(times))])


def _running_max(y: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(y) if y.size else y


def _collision_parts(tr: Trajectory, k, rule, cfg):
    if k is None:
        z = np.zeros_like(tr.values)
        return z, z, z
    gain = _gain_traj(tr.values, tr.values, tr.grid, k, rule, cfg)
    A = _loss_traj(tr.values, tr.grid, k, rule, cfg)
    return gain, tr.values * A, A


# ---------------------------------------------------------------------------
# operations


def monitor(
    f: Trajectory,
    k: CollisionKernel | None,
    rule: SphereRule | None = None,
    s: float = 0.5,
    r: float | None = None,
    *,
    cfg: SolverConfig | None = None,
    drift_tol: float = 1e-6,
) -> TrajectoryReport:
    """Conservation, positivity, ``M_r`` and ``E_{s,r}`` along a stored trajectory.

    ``k = None`` switches collisions off.  ``M_r`` and ``E_{s,r}`` are
    reported as series over the window endpoint; the ``Q^{+-}`` term adds
    the gain and loss norms.  Time integrals use the trapezoid rule on the
    stored nodes.
    """
    tr = _as_traj(f)
    grid = tr.grid
    cfg = cfg or SolverConfig()
    rule = rule or SphereRule()
    gamma = k.gamma if k is not None else 0.0
    r = s + gamma if r is None else r
    t = np.asarray(tr.times, float)
    vals = tr.values
    mass = np.array([integrate_xv(grid, a) for a in vals])
    l1 = np.array([integrate_xv(grid, np.abs(a)) for a in vals])
    mins = vals.reshape(vals.shape[0], -1).min(axis=1) if vals.size else np.zeros(0)

    gain, loss, A = _collision_parts(tr, k, rule, cfg)
    f_int = _field_norms(grid, vals, 0.0, r, ("Lv2Lxp", 6))
    A_sup = np.abs(A).reshape(A.shape[0], -1).max(axis=1)
    q_int = _field_norms(grid, gain, 0.0, r, ("Lv2Lxp", 6)) + _field_norms(grid, loss, 0.0, r, ("Lv2Lxp", 6))
    M_r = _running_max(f_int) + np.sqrt(_cum_trapz(t, A_sup**2)) + _cum_trapz(t, q_int)

    f_reg = _field_norms(grid, vals, s, r, "L2")
    q_reg = _field_norms(grid, gain, s, r, "L2") + _field_norms(grid, loss, s, r, "L2")
    E_sr = _running_max(f_reg) + _cum_trapz(t, q_reg)

    m0 = abs(mass[0]) if mass.size else 0.0
    l10 = l1[0] if l1.size else 0.0
    verdicts = {
        "mass_drift": float(np.max(np.abs(mass - mass[0])) / m0) if m0 > 0 else 0.0,
        "l1_excess": float(np.max(l1 - l10) / l10) if l10 > 0 else 0.0,
    }
    verdicts["mass_conserved"] = verdicts["mass_drift"] <= drift_tol
    verdicts["l1_bound"] = verdicts["l1_excess"] <= drift_tol
    if np.all(mins >= 0):
        verdicts["l1_equals_mass"] = bool(np.all(np.abs(l1 - mass) <= 1e-12 * np.maximum(np.abs(mass), 1e-300)))
    return TrajectoryReport(
        t, mass, l1, mins,
        weighted={"f_Lv2Lx6": f_int, "f_reg": f_reg, "A_sup": A_sup},
        M_r=M_r, E_sr=E_sr, verdicts=verdicts,
        params={"s": s, "r": r, "gamma": gamma, "collisions": k is not None},
    )


def scattering_profile(
    f: Trajectory,
    k: CollisionKernel | None,
    rule: SphereRule | None = None,
    *,
    cfg: SolverConfig | None = None,
    r: float = 0.0,
    p_values=(2, 6),
) -> tuple[DistributionField, dict]:
    """Pulled-back profile ``f0 + int_0^T S(-tau) Q(f, f) dtau`` and dyadic Cauchy increments.

    Increments are ``|| S(-t2) f(t2) - S(-t1) f(t1) ||_{L^2_v L^p_x}`` over
    node pairs ``(t_m, t_2m)`` for ``m = 1, 2, 4, ...``.
    """
    tr = _as_traj(f)
    grid = tr.grid
    cfg = cfg or SolverConfig()
    rule = rule or SphereRule()
    t = np.asarray(tr.times, float)
    if grid.N_x > 1 and t[-1] * grid.L_v * np.sqrt(3) > 2 * grid.L_x:
        raise ValueError("characteristics wrap the spatial torus inside the window")
    gain, loss, _ = _collision_parts(tr, k, rule, cfg)
    Q = gain - loss
    f0 = tr.values[0]
    acc = f0.copy()
    for n in range(t.size):
        if t.size < 2:
            break
        w = (t[1] - t[0]) / 2 if n == 0 else ((t[-1] - t[-2]) / 2 if n == t.size - 1 else (t[n + 1] - t[n - 1]) / 2)
        if np.any(Q[n]):
            acc = acc + w * stream_values(Q[n], grid, -(t[n] - t[0]))
    pulled = {n: stream_values(tr.values[n], grid, -(t[n] - t[0])) for n in range(t.size)}
    pairs = []
    m = 1
    while 2 * m < t.size:
        pairs.append((m, 2 * m))
        m *= 2
    inc = {}
    for p in p_values:
        inc[f"p={p}"] = [weighted_norm(DistributionField(grid, pulled[b] - pulled[a]), 0.0, r, ("Lv2Lxp", p)) for a, b in pairs]
    series = inc.get("p=2", next(iter(inc.values()), []))
    ratios = [b / a for a, b in zip(series, series[1:]) if a > 0]
    info = {
        "pairs": [(float(t[a]), float(t[b])) for a, b in pairs],
        "increments": inc,
        "ratios": ratios,
        "decreasing": bool(all(x < 1 for x in ratios)),
        "accumulated_gain": float(_cum_trapz(t, np.array([weighted_norm(DistributionField(grid, g), 0, r, "L2") for g in gain]))[-1]) if t.size > 1 else 0.0,
    }
    return DistributionField(grid, acc, float(t[-1])), info


def lifespan_bound(f0: DistributionField, s: float, r: float, c_cfg: float = 1.0) -> float:
    """``c_cfg / ||f0||^2`` in ``L^{2,r}_v H^s_x``; ``inf`` for the zero datum.

    Only a scheduling heuristic: the constant is configured, not derived.
    """
    n = weighted_norm(f0, s, r, "L2")
    if n == 0:
        return float("inf")
    return float(c_cfg / n**2)


def velocity_cutoff(f0: DistributionField, N: float) -> DistributionField:
    """``chi(|v| / N) f0``."""
    speed = np.sqrt((f0.grid.v_mesh() ** 2).sum(-1))
    return f0.with_values(f0.values * chi(speed / N))


def l1_approximation_run(
    f0: DistributionField,
    levels,
    k: CollisionKernel,
    rule: SphereRule | None = None,
    cfg: SolverConfig | None = None,
    *,
    tol: float = 1e-6,
) -> dict:
    """Run the sandwich solver on ``chi(v/N) f0`` for each cutoff level ``N``.

    Checks mass conservation of each run and that the cut-off masses
    increase towards the mass of ``f0``.
    """
    if not f0.nonnegative(0.0):
        raise ValueError("f0 must be non-negative")
    cfg = cfg or SolverConfig()
    rule = rule or SphereRule()
    levels = sorted(float(N) for N in levels)
    full = f0.mass()
    out = {"levels": levels, "mass_f0": full, "mass0": [], "mass_drift": [], "conserved": [], "runs": []}
    for N in levels:
        fN = velocity_cutoff(f0, N)
        traj, state = kaniel_shinbrot(fN, k, rule, cfg)
        rep = monitor(traj, k, rule, cfg=cfg, drift_tol=tol)
        out["mass0"].append(fN.mass())
        out["mass_drift"].append(rep.verdicts["mass_drift"])
        out["conserved"].append(rep.verdicts["mass_conserved"])
        out["runs"].append(state.manifest())
    m = np.asarray(out["mass0"])
    out["monotone"] = bool(np.all(np.diff(m) >= -1e-15 * full) and np.all(m <= full * (1 + 1e-15)))
    return out

"""Dyadic projectors in ``x`` and ``xi``, support-constraint checks and p-variation.

Dyadic variables are measured in lattice units: ``|k| / dk`` for the
spatial frequency and ``|v| / h_v`` for the frequency dual to ``xi``
(which is the velocity itself).  ``P^xi_M`` is therefore the multiplier
``phi_M(|v| / h_v)`` applied on the velocity side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .collision import CollisionKernel, SphereRule, gain_bobylev, gain_direct
from .grid import X_AXES, DistributionField, PhaseGrid, SpectralField, fourier_v, inverse_fourier_v


def _psi(t):
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def chi(y) -> np.ndarray:
    """Smooth radial cutoff: 1 on ``|y| <= 1``, 0 on ``|y| >= 2``."""
    a = np.abs(np.asarray(y, float))
    p = _psi(2.0 - a)
    q = _psi(a - 1.0)
    return p / (p + q)


def phi(y, N: float) -> np.ndarray:
    """``phi_N(y) = chi(y / 2N) - chi(y / N)``, supported on ``N <= |y| <= 4N``."""
    return chi(np.asarray(y, float) / (2 * N)) - chi(np.asarray(y, float) / N)


@dataclass(frozen=True)
class DyadicCutoff:
    """Dyadic levels ``1, 2, 4, ..., N_max`` with the ``exp(-1/t)`` bump."""

    N_max: int

    def __post_init__(self):
        if self.N_max < 1 or self.N_max & (self.N_max - 1):
            raise ValueError("N_max must be a power of two")

    @property
    def levels(self) -> list[int]:
        return [2**j for j in range(int(np.log2(self.N_max)) + 1)]

    def header(self) -> dict:
        return {"chi": "psi(2-|y|)/(psi(2-|y|)+psi(|y|-1)), psi(t)=exp(-1/t)", "levels": self.levels}


def resolvable_range(n_grid: int) -> tuple[int, int]:
    return 1, max(1, n_grid // 4)


def _check_level(N: int, n_grid: int) -> None:
    lo, hi = resolvable_range(n_grid)
    if N < lo or N > hi or (N & (N - 1)):
        raise ValueError(f"dyadic level {N} outside [{lo}, {hi}] or not a power of two")


def _x_radius(grid: PhaseGrid, shape) -> np.ndarray:
    ks = [grid.k_axis(n) / grid.d_k for n in shape[:3]]
    return np.sqrt(ks[0][:, None, None] ** 2 + ks[1][None, :, None] ** 2 + ks[2][None, None, :] ** 2)


def _v_radius(grid: PhaseGrid) -> np.ndarray:
    return np.sqrt((grid.v_mesh() ** 2).sum(-1)) / grid.h_v


def x_multiplier(values: np.ndarray, grid: PhaseGrid, mult: Callable) -> np.ndarray:
    axes = [a for a in X_AXES if values.shape[a] > 1]
    m = mult(_x_radius(grid, values.shape))[..., None, None, None]
    if not axes:
        return values * m
    out = np.fft.ifftn(np.fft.fftn(values, axes=axes) * m, axes=axes)
    return out.real if np.isrealobj(values) else out


def project(field, axis: str, N: int, *, check: bool = True):
    """Littlewood-Paley projector ``P_N`` on the ``"x"`` or ``"xi"`` variable.

    Works on :class:`DistributionField` and :class:`SpectralField`; the
    ``xi`` projector multiplies by ``phi_N(|v| / h_v)`` on the velocity side.
    """
    return apply_multiplier(field, axis, lambda y: phi(y, N), N if check else None)


def project_low(field, axis: str):
    """``P_{<1}``: multiplier ``chi(y)``; with the ``P_N`` it telescopes to identity."""
    return apply_multiplier(field, axis, chi, None)


def apply_multiplier(field, axis: str, mult: Callable, level: int | None = None):
    grid = field.grid
    if axis == "x":
        if level is not None:
            _check_level(level, grid.N_x)
        vals = x_multiplier(field.values, grid, mult)
        return type(field)(grid, vals, field.time_stamp)
    if axis == "xi":
        if level is not None:
            _check_level(level, grid.N_v)
        m = mult(_v_radius(grid))
        if isinstance(field, SpectralField):
            f = inverse_fourier_v(field, real=False)
            return SpectralField(grid, fourier_v_complex(f * m, grid), field.time_stamp)
        return DistributionField(grid, field.values * m, field.time_stamp)
    raise ValueError("axis must be 'x' or 'xi'")


def fourier_v_complex(values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    from .grid import fft_v

    return fft_v(values, grid)


def frequency_support_check(
    f: DistributionField,
    g: DistributionField,
    M: int,
    M1: int,
    M2: int,
    k: CollisionKernel,
    rule: SphereRule | None = None,
    *,
    method: str = "conservative",
) -> float:
    """``||P_M Q+(P_M1 f, P_M2 g)||_2 / ||Q+(P_M1 f, P_M2 g)||_2`` on the ``xi`` side.

    By Plancherel the ratio is evaluated on the velocity side, where
    ``P^xi`` is a pointwise multiplier.  The collision kernel conserves
    energy, so the numerator vanishes identically once ``M >= 10 max(M1, M2)``;
    the conservative route deposits within one cell of ``v*`` and keeps that
    support bound.
    """
    if M < 10 * max(M1, M2):
        raise ValueError("need M >= 10 max(M1, M2)")
    grid = f.grid
    _check_level(M, grid.N_v)
    fp = project(f, "xi", M1)
    gp = project(g, "xi", M2)
    if not np.any(fp.values) or not np.any(gp.values):
        return 0.0
    q = gain_direct(fp, gp, k, rule, method=method)
    den = np.linalg.norm(q.values)
    if den == 0:
        return 0.0
    return float(np.linalg.norm(project(q, "xi", M).values) / den)


def vanishing_threshold(
    f: DistributionField,
    g: DistributionField,
    M1: int,
    M2: int,
    k: CollisionKernel,
    rule: SphereRule | None = None,
    *,
    floor: float = 1e-6,
    method: str = "conservative",
) -> dict:
    """Smallest dyadic ``M / max(M1, M2)`` at which the output ratio drops below ``floor``.

    Scans every resolvable ``M > max(M1, M2)``; the factor 10 in the
    support rule is sufficient, and this reports what the grid measures.
    """
    grid = f.grid
    base = max(M1, M2)
    q = gain_direct(project(f, "xi", M1), project(g, "xi", M2), k, rule, method=method)
    den = np.linalg.norm(q.values)
    ratios = {}
    M = 2 * base
    while M <= resolvable_range(grid.N_v)[1]:
        ratios[M] = 0.0 if den == 0 else float(np.linalg.norm(project(q, "xi", M).values) / den)
        M *= 2
    hit = [M for M, r in ratios.items() if r <= floor and all(ratios[m] <= floor for m in ratios if m >= M)]
    return {"ratios": ratios, "smallest_ratio": (min(hit) / base) if hit else None}


def x_support_check(f: DistributionField, g: DistributionField, N: int, N1: int, N2: int) -> float:
    """``||P_N(P_N1 f P_N2 g)||_2 / ||P_N1 f P_N2 g||_2`` on the ``x`` side."""
    if N < 10 * max(N1, N2):
        raise ValueError("need N >= 10 max(N1, N2)")
    prod = project(f, "x", N1).values * project(g, "x", N2).values
    den = np.linalg.norm(prod)
    if den == 0:
        return 0.0
    p = project(DistributionField(f.grid, prod), "x", N)
    return float(np.linalg.norm(p.values) / den)


def spectral_support_check(ft: SpectralField, gt: SpectralField, M: int, M1: int, M2: int, k, rule=None) -> float:
    """Same ratio as :func:`frequency_support_check` through the spectral gain route."""
    grid = ft.grid
    fp, gp = project(ft, "xi", M1), project(gt, "xi", M2)
    q = gain_bobylev(fp, gp, k, rule)
    den = np.linalg.norm(q.values)
    return 0.0 if den == 0 else float(np.linalg.norm(project(q, "xi", M).values) / den)


# ---------------------------------------------------------------------------
# p-variation


def _distances(samples: Sequence, norm: Callable | None) -> np.ndarray:
    arr = [np.asarray(s) for s in samples]
    n = len(arr)
    nf = norm or (lambda d: float(np.linalg.norm(np.ravel(d))))
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = nf(arr[j] - arr[i])
    return D


def p_variation(samples: Sequence, p: float, norm: Callable | None = None) -> float:
    """``sup`` over increasing subsequences of ``(sum ||u_{k+1} - u_k||^p)^{1/p}``.

    Dynamic programming over the last chosen index: ``best[j] = max(0,
    max_{i<j} best[i] + d(i, j)^p)``.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    D = _distances(samples, norm) ** p
    n = D.shape[0]
    best = np.zeros(n)
    for j in range(1, n):
        best[j] = max(0.0, float(np.max(best[:j] + D[:j, j])))
    return float(best.max() ** (1.0 / p))


def p_variation_bruteforce(samples: Sequence, p: float, norm: Callable | None = None) -> float:
    """Exhaustive search over all subsequences; exponential, for testing."""
    D = _distances(samples, norm) ** p
    n = D.shape[0]
    top = 0.0
    for mask in range(1, 1 << n):
        idx = [i for i in range(n) if mask >> i & 1]
        tot = sum(D[a, b] for a, b in zip(idx, idx[1:]))
        top = max(top, tot)
    return float(top ** (1.0 / p))

"""Free streaming ``S(t)``, its velocity-Fourier conjugate ``U(t)`` and Duhamel sums.

``S(t) f (x, v) = f(x - t v, v)`` is applied as the spatial Fourier
multiplier ``exp(-i t k . v)``.  When every displacement ``t v`` is a whole
number of spatial cells the multiplier is an exact node permutation, and
that case is executed as one (so positivity is preserved bit for bit).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import X_AXES, DistributionField, PhaseGrid, SpectralField

_COMMENSURATE_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time nodes ``t0, t0 + dt, ..., T`` with a Duhamel rule."""

    t0: float
    T: float
    dt: float
    quadrature: str = "trapezoid"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        n = (self.T - self.t0) / self.dt
        if n < 0 or abs(n - round(n)) > 1e-9:
            raise ValueError("(T - t0) / dt must be a non-negative integer")
        if self.quadrature not in ("trapezoid", "midpoint"):
            raise ValueError(f"unknown quadrature {self.quadrature!r}")

    @property
    def n_steps(self) -> int:
        return int(round((self.T - self.t0) / self.dt))

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def nodes_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes and weights for ``int_{t0}^{T}``."""
        n = self.n_steps
        if self.quadrature == "midpoint":
            return self.t0 + self.dt * (np.arange(n) + 0.5), np.full(n, self.dt)
        w = np.full(n + 1, self.dt)
        if n == 0:
            return self.times(), np.zeros(1)
        w[0] = w[-1] = self.dt / 2
        return self.times(), w

    def coarsen(self) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, 2 * self.dt, self.quadrature)

    def refine(self) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.dt / 2, self.quadrature)


def _shifts(grid: PhaseGrid, t: float) -> np.ndarray | None:
    """Integer cell displacements ``t v / h_x`` when all are whole numbers."""
    d = t * grid.v1 / grid.h_x
    r = np.round(d)
    if np.all(np.abs(d - r) <= _COMMENSURATE_TOL):
        return r.astype(np.int64)
    return None


def _roll_stream(values: np.ndarray, shifts: np.ndarray, N_x: int) -> np.ndarray:
    out = values
    for ax in X_AXES:
        n = out.shape[ax]
        if n == 1:
            continue
        idx = (np.arange(n)[:, None] - shifts[None, :]) % n
        shape = [1] * 6
        shape[ax] = n
        shape[3 + ax] = len(shifts)
        out = np.take_along_axis(out, idx.reshape(shape), axis=ax)
    return out


def _phase(grid: PhaseGrid, shape, t: float) -> np.ndarray:
    ks = [grid.k_axis(n) for n in shape[:3]]
    v = grid.v1
    ph = np.ones(tuple(shape[:3]) + (grid.N_v,) * 3, complex)
    for ax in range(3):
        kv = np.multiply.outer(ks[ax], v)  # (n_ax, N_v)
        sh = [1] * 6
        sh[ax] = kv.shape[0]
        sh[3 + ax] = kv.shape[1]
        ph = ph * np.exp(-1j * t * kv).reshape(sh)
    return ph


def stream_values(values: np.ndarray, grid: PhaseGrid, t: float, *, exact_shift: bool = True) -> np.ndarray:
    """Apply ``S(t)`` to a raw real array of field shape."""
    if t == 0:
        return values.copy()
    axes = [a for a in X_AXES if values.shape[a] > 1]
    if not axes:
        return values.copy()
    if exact_shift:
        sh = _shifts(grid, t)
        if sh is not None:
            return _roll_stream(values, sh, grid.N_x)
    fh = np.fft.fftn(values, axes=axes)
    out = np.fft.ifftn(fh * _phase(grid, values.shape, t), axes=axes)
    return out.real if np.isrealobj(values) else out


def free_stream(f: DistributionField, t: float, *, exact_shift: bool = True) -> DistributionField:
    """``(S(t) f)(x, v) = f(x - t v, v)`` on the periodic spatial torus.

    For real fields the Nyquist mode is kept real by taking the real part,
    so the group law is exact only for fields without Nyquist content when
    displacements are not whole cells.
    """
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    return DistributionField(f.grid, stream_values(f.values, f.grid, t, exact_shift=exact_shift), f.time_stamp + t)


def xi_propagate(ft: SpectralField, t: float) -> SpectralField:
    """``U(t) f~``: the conjugate of ``S(t)`` under the velocity transform.

    On the spatial Fourier side ``U(t)`` translates ``xi`` by ``t k``; the
    translation is applied as a phase in the variable conjugate to ``xi``,
    keeping the complex field (no real part taken), so ``U(t)`` is an exact
    isometry.
    """
    grid = ft.grid
    vals = ft.values
    axes = [a for a in X_AXES if vals.shape[a] > 1]
    if t == 0 or not axes:
        return SpectralField(grid, vals.copy(), ft.time_stamp + t)
    vax = (3, 4, 5)
    a = np.fft.fftn(vals, axes=axes)
    # xi grid is centered; move to the conjugate (velocity) variable
    a = np.fft.ifftn(np.fft.ifftshift(a, axes=vax), axes=vax)
    a = np.fft.fftshift(a, axes=vax)
    a = a * _phase(grid, vals.shape, t)
    a = np.fft.fftn(np.fft.ifftshift(a, axes=vax), axes=vax)
    a = np.fft.fftshift(a, axes=vax)
    return SpectralField(grid, np.fft.ifftn(a, axes=axes), ft.time_stamp + t)


Source = Callable[[float], np.ndarray]


def _as_array(x) -> np.ndarray:
    return x.values if isinstance(x, DistributionField) else np.asarray(x)


def duhamel(f0: DistributionField, source: Source, tg: TimeGrid) -> DistributionField:
    """``S(T - t0) f0 + sum_j w_j S(T - tau_j) source(tau_j)``."""
    grid = f0.grid
    tau, w = tg.nodes_weights()
    span = tg.T - tg.t0
    out = stream_values(f0.values, grid, span)
    for tj, wj in zip(tau, w):
        if wj == 0:
            continue
        try:
            s = _as_array(source(float(tj)))
        except Exception as exc:  # pragma: no cover - re-raised with context
            raise RuntimeError(f"source evaluation failed at tau={tj}") from exc
        out = out + wj * stream_values(np.broadcast_to(s, np.broadcast_shapes(s.shape, out.shape)), grid, tg.T - tj)
    return DistributionField(grid, out, tg.T)


def duhamel_trajectory(f0: np.ndarray, sources: np.ndarray, grid: PhaseGrid, tg: TimeGrid) -> np.ndarray:
    """Trapezoid Duhamel solution at every node, given the source at every node.

    ``u_n = S(dt) u_{n-1} + dt / 2 (S(dt) s_{n-1} + s_n)``, which equals the
    cumulative trapezoid sum because ``S`` is a group.
    """
    if tg.quadrature != "trapezoid":
        raise ValueError("trajectory recursion needs trapezoid quadrature")
    dt = tg.dt
    out = np.empty((tg.n_steps + 1,) + np.broadcast_shapes(f0.shape, sources.shape[1:]))
    out[0] = f0
    for n in range(1, tg.n_steps + 1):
        out[n] = stream_values(out[n - 1] + dt / 2 * sources[n - 1], grid, dt) + dt / 2 * sources[n]
    return out

"""Cutoff collision kernel, post-collision map and gain/loss operators.

Velocity integrals over the relative velocity ``z = u - v`` run over grid
nodes inside the box (no periodic wrap), so the loss rate and every gain
route integrate exactly the same pairs ``(v, u)``.  That makes mass
cancellation between gain and loss hold to round-off for the
``"conservative"`` and ``"weak"`` gain routes.

Gain routes
-----------
``"trilinear"`` / ``"cubic"``
    Gather ``f(v*) g(u*)`` by periodic Lagrange interpolation.
``"conservative"``
    Scatter ``f(v) g(u) B`` onto ``v*`` with trilinear weights (the adjoint
    of trilinear gather).  Positive and exactly mass conserving.
``"weak"``
    Velocity transform of the gain term evaluated in weak form.  The
    angular integral is done in closed form up to a 1D Gauss rule, so the
    only discretization errors are the velocity sums.

:func:`gain_bobylev` evaluates the same operator on the Fourier side at
the split frequencies; it shares no code with the direct routes.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable

import numba as nb
import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammaincc, j0, roots_jacobi

from .grid import (
    V_AXES,
    DistributionField,
    GridMismatchError,
    PhaseGrid,
    SpectralField,
    fft_v,
    ifft_v,
    same_grid,
)

_BTAB_SIZE = 4097


class UnsupportedKernelError(ValueError):
    """Kernel outside the soft-potential cutoff range handled here."""


def abs_cos(c):
    return np.abs(c)


@dataclass(frozen=True)
class CollisionKernel:
    """``B(z, w) = |z|^gamma b(cos theta)`` with ``cos theta = w . z / |z|``.

    Parameters
    ----------
    gamma : float
        Potential exponent in ``[-1/2, 0]``.
    b : callable
        Angular factor on ``[-1, 1]``, vectorized.  Defaults to ``|c|``.
    C_cut : float
        Cutoff constant; ``0 <= b(c) <= C_cut |c|`` is checked on 20001
        sample points.
    """

    gamma: float = 0.0
    b: Callable = abs_cos
    C_cut: float = 1.0
    name: str = "abs_cos"
    _tab: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.gamma > 0:
            raise UnsupportedKernelError("hard potentials are not supported")
        if not -0.5 <= self.gamma <= 0:
            raise UnsupportedKernelError("gamma must lie in [-1/2, 0]")
        c = np.linspace(-1.0, 1.0, 20001)
        bc = np.asarray(self.b(c), dtype=float)
        if np.any(bc < -1e-15) or np.any(bc > self.C_cut * np.abs(c) + 1e-12):
            raise UnsupportedKernelError("angular factor violates 0 <= b <= C_cut |cos|")
        t = np.linspace(0.0, 1.0, _BTAB_SIZE)
        even = np.asarray(self.b(t), float) + np.asarray(self.b(-t), float)
        object.__setattr__(self, "_tab", even)

    @classmethod
    def from_config(cls, cfg: dict) -> "CollisionKernel":
        b = cfg.get("b", "abs_cos")
        C = float(cfg.get("C_cut", 1.0))
        if b == "abs_cos":
            return cls(float(cfg.get("gamma", 0.0)), abs_cos, C, "abs_cos")
        if isinstance(b, dict) and "table" in b:
            tab = np.asarray(b["table"], float)
            nodes = np.linspace(-1.0, 1.0, tab.size)
            return cls(float(cfg.get("gamma", 0.0)), lambda c: np.interp(c, nodes, tab), C, "tabulated")
        raise ValueError(f"unknown angular factor {b!r}")

    @property
    def b_even_table(self) -> np.ndarray:
        """``b(c) + b(-c)`` sampled on ``c in [0, 1]`` with 4097 points."""
        return self._tab

    def kappa(self) -> float:
        """``int_{S^2} b(w . e) dw`` for any unit vector ``e``."""
        x, w = np.polynomial.legendre.leggauss(64)
        c = (x + 1) / 2
        return float(2.0 * np.pi * np.sum(w / 2 * (self.b(c) + self.b(-c))))

    def b_sigma(self, t):
        """Angular factor in the ``sigma`` parametrization of the gain term.

        With ``sigma = 2 (w . e) w - e`` and ``c = sqrt((1 + t) / 2)`` the
        change of variables gives ``(b(c) + b(-c)) / (4 c)``.
        """
        t = np.asarray(t, float)
        c = np.sqrt(np.clip((1 + t) / 2, 0, 1))
        safe = np.where(c > 1e-8, c, 1e-8)
        return (self.b(safe) + self.b(-safe)) / (4 * safe)

    def sigma_factor_constant(self) -> float | None:
        """Return ``b_sigma`` if it is constant on ``[-1, 1]``, else ``None``."""
        vals = self.b_sigma(np.linspace(-1 + 1e-6, 1, 2001))
        if np.ptp(vals) <= 1e-10 * max(abs(vals).max(), 1e-300):
            return float(vals.mean())
        return None

    def header(self) -> dict:
        return {"gamma": float(self.gamma), "b": self.name, "C_cut": float(self.C_cut)}


@dataclass(frozen=True)
class SphereRule:
    """Gauss-Legendre in ``cos theta`` times offset trapezoid in azimuth.

    The ``cos theta`` rule is composite on ``[-1, 0]`` and ``[0, 1]`` so it
    is exact on the kink of ``|cos theta|``.  The half-step azimuth offset
    makes the node set symmetric under ``w -> -w``.
    """

    n_theta: int = 16
    n_phi: int = 32
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_theta < 2 or self.n_theta % 2 or self.n_phi < 2 or self.n_phi % 2:
            raise ValueError("n_theta and n_phi must be even and at least 2")
        x, w = np.polynomial.legendre.leggauss(self.n_theta // 2)
        ct = np.concatenate([(x - 1) / 2, (x + 1) / 2])
        wt = np.concatenate([w / 2, w / 2])
        ph = 2 * np.pi * (np.arange(self.n_phi) + 0.5) / self.n_phi
        st = np.sqrt(1 - ct**2)
        nodes = np.stack(
            [np.outer(st, np.cos(ph)), np.outer(st, np.sin(ph)), np.outer(ct, np.ones(self.n_phi))], -1
        ).reshape(-1, 3)
        nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
        weights = np.outer(wt, np.full(self.n_phi, 2 * np.pi / self.n_phi)).reshape(-1)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_config(cls, cfg: dict) -> "SphereRule":
        return cls(int(cfg.get("n_theta", 16)), int(cfg.get("n_phi", 32)))

    def antipode(self) -> np.ndarray:
        """Index map ``i -> j`` with ``nodes[j] = -nodes[i]``."""
        nt, nph = self.n_theta, self.n_phi
        it, ip = np.divmod(np.arange(nt * nph), nph)
        return (nt - 1 - it) * nph + (ip + nph // 2) % nph

    def upper(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights with ``cos theta > 0``."""
        half = self.n_theta // 2 * self.n_phi
        return self.nodes[half:], self.weights[half:]

    def refine(self) -> "SphereRule":
        return SphereRule(2 * self.n_theta, 2 * self.n_phi)


# ---------------------------------------------------------------------------
# post-collision map


def post_collision(u, v, omega, *, atol: float = 1e-12):
    """Post-collision velocities ``(u*, v*)`` for deflection direction ``omega``.

    Accepts arrays with trailing dimension 3; broadcasting applies.
    """
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    omega = np.asarray(omega, float)
    if np.any(np.abs(np.linalg.norm(omega, axis=-1) - 1.0) > atol):
        raise ValueError("omega must be a unit vector")
    s = np.sum(omega * (v - u), axis=-1, keepdims=True)
    return u + s * omega, v - s * omega


# ---------------------------------------------------------------------------
# singular lattice sums


@functools.lru_cache(maxsize=None)
def epstein_zeta(s: float, cutoff: int = 6) -> float:
    """Analytically continued ``sum_{n != 0} |n|^{-s}`` over the cubic lattice.

    Ewald splitting, valid for ``0 < s < 3``; the neglected tail is below
    ``exp(-pi cutoff^2)``.
    """
    if not 0 < s < 3:
        raise ValueError("Ewald formula implemented for 0 < s < 3")
    n = np.arange(-cutoff, cutoff + 1)
    r2 = (np.stack(np.meshgrid(n, n, n, indexing="ij"), -1) ** 2).sum(-1).ravel()
    x = np.pi * r2[r2 > 0].astype(float)
    a, b = s / 2, (3 - s) / 2
    tail = gammaincc(a, x) * gamma_fn(a) * x**-a + gammaincc(b, x) * gamma_fn(b) * x**-b
    lam = -1 / a - 1 / b + tail.sum()
    return float(lam * np.pi**a / gamma_fn(a))


def _origin_weight(gamma: float, h: float, singularity: str) -> float:
    """Weight of the ``z = 0`` node in ``h^3 sum_z |z|^gamma F(z)``, divided by ``h^3``."""
    if singularity == "zero" or gamma == 0:
        return 1.0 if gamma == 0 else 0.0
    if singularity == "epstein":
        return -epstein_zeta(-gamma) * h**gamma
    raise ValueError(f"unknown singularity treatment {singularity!r}")


def _relative_weights(grid: PhaseGrid, gamma: float, singularity: str) -> np.ndarray:
    """``|h n|^gamma`` on ``n in [-N, N)^3`` in FFT order, origin per ``singularity``."""
    N, h = grid.N_v, grid.h_v
    n = np.fft.fftfreq(2 * N, 1.0 / (2 * N))
    r2 = (n[:, None, None] ** 2 + n[None, :, None] ** 2 + n[None, None, :] ** 2) * h * h
    with np.errstate(divide="ignore"):
        K = np.where(r2 > 0, r2 ** (gamma / 2), 0.0)
    K[0, 0, 0] = _origin_weight(gamma, h, singularity)
    return K


def loss_rate(
    g: DistributionField,
    k: CollisionKernel,
    rule: SphereRule | None = None,
    *,
    singularity: str = "zero",
) -> DistributionField:
    """Collision frequency ``A[g](x, v) = kappa_b int |u - v|^gamma g(x, u) du``.

    ``kappa_b`` comes from ``rule`` when given, otherwise from a 1D Gauss
    rule.  The convolution is a zero-padded FFT over the velocity box.
    """
    grid = g.grid
    kappa = _rule_kappa(k, rule)
    N = grid.N_v
    K = _relative_weights(grid, k.gamma, singularity)
    Khat = np.fft.rfftn(K)
    pad = np.zeros(g.values.shape[:3] + (2 * N,) * 3)
    pad[..., :N, :N, :N] = g.values
    conv = np.fft.irfftn(np.fft.rfftn(pad, axes=V_AXES) * Khat, s=(2 * N,) * 3, axes=V_AXES)
    out = kappa * grid.h_v**3 * conv[..., :N, :N, :N]
    if np.all(g.values >= 0):
        out = np.maximum(out, 0.0)
    return DistributionField(grid, out, g.time_stamp)


def _rule_kappa(k: CollisionKernel, rule: SphereRule | None) -> float:
    if rule is None:
        return k.kappa()
    return float(np.sum(rule.weights * k.b(rule.nodes[:, 2])))


def loss_term(f: DistributionField, g: DistributionField, k, rule=None, **kw) -> DistributionField:
    """``Q^-(f, g) = f A[g]``."""
    same_grid(f, g)
    return f.with_values(f.values * loss_rate(g, k, rule, **kw).values)


# ---------------------------------------------------------------------------
# direct gain: gather and scatter kernels


@nb.njit(cache=True, inline="always")
def _btab_eval(tab, c):
    x = c * (tab.size - 1)
    i = int(x)
    if i >= tab.size - 1:
        return tab[tab.size - 1]
    t = x - i
    return tab[i] * (1 - t) + tab[i + 1] * t


@nb.njit(cache=True, inline="always")
def _lagrange_weights(x, order, w):
    i0 = int(np.floor(x)) - order // 2 + 1
    for kk in range(order):
        num = 1.0
        for j in range(order):
            if j != kk:
                num *= (x - (i0 + j)) / (kk - j)
        w[kk] = num
    return i0


@nb.njit(cache=True)
def _gather_kernel(f, g, L, h, om, wom, btab, zfac, gamma, w0, order, out):
    # f, g, out: (N, N, N, nx) with x innermost; om: upper-hemisphere nodes
    N = f.shape[0]
    nx = f.shape[3]
    wa = np.empty(order)
    wb = np.empty(order)
    wc = np.empty(order)
    ua = np.empty(order)
    ub = np.empty(order)
    uc = np.empty(order)
    acc = np.empty(nx)
    fi = np.empty(nx)
    gi = np.empty(nx)
    kap = 0.0
    for q in range(om.shape[0]):
        kap += wom[q] * _btab_eval(btab, om[q, 2])
    zc = (zfac.shape[0] - 1) // 2
    for i in range(N):
        for j in range(N):
            for k in range(N):
                for p in range(nx):
                    acc[p] = 0.0
                for a in range(N):
                    for b in range(N):
                        for c in range(N):
                            z0 = (a - i) * h
                            z1 = (b - j) * h
                            z2 = (c - k) * h
                            r = np.sqrt(z0 * z0 + z1 * z1 + z2 * z2)
                            if r == 0.0:
                                if w0 != 0.0:
                                    for p in range(nx):
                                        acc[p] += w0 * kap * f[i, j, k, p] * g[a, b, c, p]
                                continue
                            rg = r**gamma * zfac[a - i + zc, b - j + zc, c - k + zc]
                            for q in range(om.shape[0]):
                                s = om[q, 0] * z0 + om[q, 1] * z1 + om[q, 2] * z2
                                B = rg * wom[q] * _btab_eval(btab, abs(s) / r)
                                if B == 0.0:
                                    continue
                                # node coordinates of v* and u*
                                xa = i + s * om[q, 0] / h
                                xb = j + s * om[q, 1] / h
                                xc = k + s * om[q, 2] / h
                                ya = a - s * om[q, 0] / h
                                yb = b - s * om[q, 1] / h
                                yc = c - s * om[q, 2] / h
                                ia = _lagrange_weights(xa, order, wa)
                                ib = _lagrange_weights(xb, order, wb)
                                ic = _lagrange_weights(xc, order, wc)
                                ja = _lagrange_weights(ya, order, ua)
                                jb = _lagrange_weights(yb, order, ub)
                                jc = _lagrange_weights(yc, order, uc)
                                for p in range(nx):
                                    fi[p] = 0.0
                                    gi[p] = 0.0
                                for l in range(order):
                                    for m in range(order):
                                        for n in range(order):
                                            wf = wa[l] * wb[m] * wc[n]
                                            wg = ua[l] * ub[m] * uc[n]
                                            fa = (ia + l) % N
                                            fb = (ib + m) % N
                                            fc = (ic + n) % N
                                            ga = (ja + l) % N
                                            gb = (jb + m) % N
                                            gc = (jc + n) % N
                                            for p in range(nx):
                                                fi[p] += wf * f[fa, fb, fc, p]
                                                gi[p] += wg * g[ga, gb, gc, p]
                                for p in range(nx):
                                    acc[p] += B * fi[p] * gi[p]
                for p in range(nx):
                    out[i, j, k, p] = acc[p] * h**3


@nb.njit(cache=True)
def _scatter_kernel(f, g, h, iv, iu, om, wom, btab, zfac, gamma, w0, out):
    # iv, iu: node indices where f (resp. g) is nonzero at some x
    N = f.shape[0]
    nx = f.shape[3]
    kap = 0.0
    for q in range(om.shape[0]):
        kap += wom[q] * _btab_eval(btab, om[q, 2])
    zc = (zfac.shape[0] - 1) // 2
    fg = np.empty(nx)
    for pv in range(iv.shape[0]):
        i, j, k = iv[pv, 0], iv[pv, 1], iv[pv, 2]
        for pu in range(iu.shape[0]):
            a, b, c = iu[pu, 0], iu[pu, 1], iu[pu, 2]
            for p in range(nx):
                fg[p] = f[i, j, k, p] * g[a, b, c, p]
            z0 = (a - i) * h
            z1 = (b - j) * h
            z2 = (c - k) * h
            r = np.sqrt(z0 * z0 + z1 * z1 + z2 * z2)
            if r == 0.0:
                if w0 != 0.0:
                    for p in range(nx):
                        out[i, j, k, p] += w0 * kap * h**3 * fg[p]
                continue
            rg = r**gamma * h**3 * zfac[a - i + zc, b - j + zc, c - k + zc]
            for q in range(om.shape[0]):
                s = om[q, 0] * z0 + om[q, 1] * z1 + om[q, 2] * z2
                B = rg * wom[q] * _btab_eval(btab, abs(s) / r)
                if B == 0.0:
                    continue
                xa = i + s * om[q, 0] / h
                xb = j + s * om[q, 1] / h
                xc = k + s * om[q, 2] / h
                ia = int(np.floor(xa))
                ib = int(np.floor(xb))
                ic = int(np.floor(xc))
                ta = xa - ia
                tb = xb - ib
                tc = xc - ic
                for l in range(2):
                    wl = ta if l else 1.0 - ta
                    for m in range(2):
                        wm = tb if m else 1.0 - tb
                        for n in range(2):
                            wn = tc if n else 1.0 - tc
                            ww = B * wl * wm * wn
                            if ww == 0.0:
                                continue
                            oa = (ia + l) % N
                            ob = (ib + m) % N
                            oc = (ic + n) % N
                            for p in range(nx):
                                out[oa, ob, oc, p] += ww * fg[p]


def _active(a: np.ndarray) -> np.ndarray:
    """Velocity node indices where ``a`` (x innermost) is nonzero at some x."""
    return np.ascontiguousarray(np.argwhere(np.any(a != 0, axis=3)).astype(np.int64))


def _direction_factors(span: int, om: np.ndarray, wom: np.ndarray, k: CollisionKernel) -> np.ndarray:
    """Per-direction rescaling so the angular rule integrates ``b(w . z^)`` to ``kappa_b``.

    The sphere rule is exact only for ``z`` along its polar axis; without
    this factor gain and loss would integrate different angular masses.
    """
    n = np.arange(-span, span + 1)
    z = np.stack(np.meshgrid(n, n, n, indexing="ij"), -1).reshape(-1, 3).astype(float)
    r = np.linalg.norm(z, axis=1)
    r[r == 0] = 1.0
    tab = k.b_even_table
    nodes = np.linspace(0, 1, tab.size)
    approx = np.empty(len(z))
    for a in range(0, len(z), 16384):
        c = np.abs(z[a : a + 16384] @ om.T) / r[a : a + 16384, None]
        approx[a : a + 16384] = (np.interp(c, nodes, tab) * wom).sum(1)
    kap = float((np.interp(om[:, 2], nodes, tab) * wom).sum())
    fac = np.ones_like(approx)
    ok = approx > 0
    fac[ok] = kap / approx[ok]
    return np.ascontiguousarray(fac.reshape((2 * span + 1,) * 3))


def _x_last(values: np.ndarray) -> np.ndarray:
    s = values.shape
    return np.ascontiguousarray(values.reshape(s[0] * s[1] * s[2], -1).T.reshape(s[3:] + (-1,)))


def _x_first(values: np.ndarray, shape) -> np.ndarray:
    return np.ascontiguousarray(values.reshape(-1, values.shape[-1]).T.reshape(shape))


def _broadcast_pair(f: DistributionField, g: DistributionField):
    same_grid(f, g)
    shape = np.broadcast_shapes(f.values.shape, g.values.shape)
    return np.broadcast_to(f.values, shape), np.broadcast_to(g.values, shape), shape


GAIN_METHODS = ("trilinear", "cubic", "conservative", "weak")


def gain_direct(
    f: DistributionField,
    g: DistributionField,
    k: CollisionKernel,
    rule: SphereRule | None = None,
    *,
    method: str = "trilinear",
    singularity: str = "zero",
) -> DistributionField:
    """Gain term ``Q+(f, g)(x, v)`` by direct velocity quadrature.

    Parameters
    ----------
    method : {"trilinear", "cubic", "conservative", "weak"}
        See the module docstring.
    singularity : {"zero", "epstein"}
        Treatment of the ``u = v`` node for ``gamma < 0``; must match the
        choice passed to :func:`loss_rate` for exact mass cancellation.
    """
    if method not in GAIN_METHODS:
        raise ValueError(f"unknown gain method {method!r}")
    fv, gv, shape = _broadcast_pair(f, g)
    grid = f.grid
    rule = rule or SphereRule()
    if method == "weak":
        out = _gain_weak(fv, gv, grid, k, singularity)
        return DistributionField(grid, out, f.time_stamp)
    om, wom = rule.upper()
    om = np.ascontiguousarray(om)
    w0 = _origin_weight(k.gamma, grid.h_v, singularity)
    fl, gl = _x_last(fv), _x_last(gv)
    out = np.zeros_like(fl)
    if method == "conservative":
        iv, iu = _active(fl), _active(gl)
        if len(iv) == 0 or len(iu) == 0:
            return DistributionField(grid, np.zeros(shape), f.time_stamp)
        span = int(max((iu.max(0) - iv.min(0)).max(), (iv.max(0) - iu.min(0)).max()))
        zfac = _direction_factors(max(span, 1), om, wom, k)
        _scatter_kernel(fl, gl, grid.h_v, iv, iu, om, wom, k.b_even_table, zfac, float(k.gamma), w0, out)
    else:
        zfac = _direction_factors(grid.N_v - 1, om, wom, k)
        order = 2 if method == "trilinear" else 4
        _gather_kernel(fl, gl, grid.L_v, grid.h_v, om, wom, k.b_even_table, zfac, float(k.gamma), w0, order, out)
    return DistributionField(grid, _x_first(out, shape), f.time_stamp)


def collision_full(f: DistributionField, k: CollisionKernel, rule: SphereRule | None = None, **kw) -> DistributionField:
    """``Q(f, f) = Q+(f, f) - f A[f]``; keyword arguments go to :func:`gain_direct`."""
    gain = gain_direct(f, f, k, rule, **kw)
    loss = loss_rate(f, k, rule, singularity=kw.get("singularity", "zero"))
    return f.with_values(gain.values - f.values * loss.values)


# ---------------------------------------------------------------------------
# weak-form gain


class _WeakTable:
    """Angular factor ``H(z, xi) = int b(w . z^) exp(-i (xi . w)(z . w)) dw``.

    On grid pairs ``z = h n``, ``xi = (pi / L) m`` it only depends on
    ``P = |n|^2 |m|^2`` and ``D = n . m``; values are tabulated on the
    unique keys ``P * 4096 + D + 2048``.
    """

    def __init__(self, N: int, k: CollisionKernel, n_mu: int):
        self.N = N
        n = np.arange(-(N - 1), N)
        m1 = np.arange(-N // 2, N // 2)
        self.nn = np.stack(np.meshgrid(n, n, n, indexing="ij"), -1).reshape(-1, 3)
        self.mm = np.stack(np.meshgrid(m1, m1, m1, indexing="ij"), -1).reshape(-1, 3)
        self.n2 = (self.nn**2).sum(1).astype(np.int64)
        self.m2 = (self.mm**2).sum(1).astype(np.int64)
        keys = []
        for a in range(0, len(self.nn), 2000):
            D = self.nn[a : a + 2000] @ self.mm.T
            P = self.n2[a : a + 2000, None] * self.m2[None, :]
            keys.append(np.unique(P * 4096 + (D + 2048)))
        self.keys = np.unique(np.concatenate(keys))
        P = self.keys // 4096
        D = self.keys % 4096 - 2048
        x, w = np.polynomial.legendre.leggauss(n_mu)
        mu = (x + 1) / 2
        wb = w / 2 * (k.b(mu) + k.b(-mu)) * 2 * np.pi
        c = 2 * np.pi / N
        vals = np.empty(len(self.keys), complex)
        for s in range(0, len(self.keys), 8192):
            rc = c * D[s : s + 8192]
            rp = c * np.sqrt(np.maximum(P[s : s + 8192] - D[s : s + 8192] ** 2, 0))
            ph = np.exp(-1j * np.outer(rc, mu**2)) * j0(np.outer(rp, mu * np.sqrt(1 - mu**2)))
            vals[s : s + 8192] = ph @ wb
        # dense rows over D for each P, so lookups are a single gather
        Pu, start = np.unique(P, return_index=True)
        dmin = np.minimum.reduceat(D, start)
        width = np.maximum.reduceat(D, start) - dmin + 1
        base = np.concatenate([[0], np.cumsum(width)[:-1]])
        self.rowoff = np.zeros(int(P.max()) + 1, np.int64)
        self.rowoff[Pu] = base - dmin
        self.dense = np.zeros(int(width.sum()), complex)
        self.dense[self.rowoff[P] + D] = vals
        del self.keys

    def lookup(self, sl: slice) -> np.ndarray:
        idx = self.rowoff[self.n2[sl, None] * self.m2[None, :]] + self.nn[sl] @ self.mm.T
        return self.dense[idx]


@functools.lru_cache(maxsize=4)
def _weak_table(N: int, k: CollisionKernel, n_mu: int) -> _WeakTable:
    return _WeakTable(N, k, n_mu)


def _gain_weak(fv, gv, grid: PhaseGrid, k: CollisionKernel, singularity: str, n_mu: int = 160, batch: int = 256):
    N, h = grid.N_v, grid.h_v
    tab = _weak_table(N, k, n_mu)
    r = h * np.sqrt(tab.n2)
    with np.errstate(divide="ignore"):
        wz = np.where(r > 0, np.where(r > 0, r, 1.0) ** k.gamma, _origin_weight(k.gamma, h, singularity))
    xs = fv.reshape((-1,) + (N,) * 3)
    gs = gv.reshape((-1,) + (N,) * 3)
    outs = np.zeros((xs.shape[0], N**3), complex)
    gp = np.zeros((xs.shape[0],) + (3 * N,) * 3)
    gp[:, N : 2 * N, N : 2 * N, N : 2 * N] = gs
    nn = tab.nn
    for a0 in range(0, len(nn), batch):
        sl = slice(a0, min(a0 + batch, len(nn)))
        H = tab.lookup(sl) * wz[sl, None]
        for p in range(xs.shape[0]):
            psi = np.stack(
                [
                    xs[p] * gp[p, N + a : 2 * N + a, N + b : 2 * N + b, N + c : 2 * N + c]
                    for a, b, c in nn[sl]
                ]
            )
            ps = fft_v(psi, grid).reshape(len(psi), -1)
            outs[p] += np.einsum("ij,ij->j", H, ps)
    outs *= h**3
    qt = outs.reshape(fv.shape)
    return ifft_v(qt, grid).real


def gain_weak_batch(fs: np.ndarray, gs: np.ndarray, grid: PhaseGrid, k: CollisionKernel, *, singularity: str = "zero") -> np.ndarray:
    """Weak-form gain for a stack of homogeneous pairs, shape ``(P, N_v, N_v, N_v)``.

    Pairs share the angular-table lookups, so a batch costs far less than
    separate :func:`gain_direct` calls.
    """
    fs = np.asarray(fs, float)
    gs = np.asarray(gs, float)
    if fs.shape != gs.shape or fs.shape[1:] != (grid.N_v,) * 3:
        raise GridMismatchError("batched pairs must share shape (P, N_v, N_v, N_v)")
    return _gain_weak(fs, gs, grid, k, singularity)


# ---------------------------------------------------------------------------
# Bobylev route


@nb.njit(cache=True)
def _lag_eval_pair(tab, d0, n0, x0, x1, x2, order, ny):
    """Lagrange interpolation of two tabulated fields at one point; 0 outside the box."""
    if abs(x0) > ny or abs(x1) > ny or abs(x2) > ny:
        return 0j, 0j
    M = tab.shape[0]
    half = order // 2
    wx = np.empty(order)
    wy = np.empty(order)
    wz = np.empty(order)
    xs = (x0 / d0 + n0, x1 / d0 + n0, x2 / d0 + n0)
    i0 = int(np.floor(xs[0])) - half + 1
    j0_ = int(np.floor(xs[1])) - half + 1
    k0 = int(np.floor(xs[2])) - half + 1
    if i0 < 0 or j0_ < 0 or k0 < 0 or i0 + order > M or j0_ + order > M or k0 + order > M:
        return 0j, 0j
    for kk in range(order):
        a = 1.0
        b = 1.0
        c = 1.0
        for j in range(order):
            if j != kk:
                a *= (xs[0] - (i0 + j)) / (kk - j)
                b *= (xs[1] - (j0_ + j)) / (kk - j)
                c *= (xs[2] - (k0 + j)) / (kk - j)
        wx[kk] = a
        wy[kk] = b
        wz[kk] = c
    s0 = 0j
    s1 = 0j
    for i in range(order):
        for j in range(order):
            wij = wx[i] * wy[j]
            for kk in range(order):
                ww = wij * wz[kk]
                s0 += ww * tab[i0 + i, j0_ + j, k0 + kk, 0]
                s1 += ww * tab[i0 + i, j0_ + j, k0 + kk, 1]
    return s0, s1


@nb.njit(cache=True)
def _shell_avg(tab, d0, n0, cx, cy, cz, rho, S, W, order, ny, fvals, gvals):
    """``sum_sigma W f(c + rho sigma) g(c - rho sigma)``; ``W`` may vary per node."""
    ns = S.shape[0]
    for q in range(ns):
        fa, gb = _lag_eval_pair(tab, d0, n0, cx + rho * S[q, 0], cy + rho * S[q, 1], cz + rho * S[q, 2], order, ny)
        fvals[q] = fa
        gvals[q] = gb
    # g is needed at c - rho sigma, which is the antipodal node's second field
    acc = 0j
    for q in range(ns):
        acc += W[q] * fvals[q] * gvals[ns - 1 - q]
    return acc


@nb.njit(cache=True)
def _bobylev_kernel(tab, d0, n0, xis, S, Wt, bsig_tab, gamma, cg, xin, win, xout, wout, order, ny, out):
    ns = S.shape[0]
    fvals = np.empty(ns, np.complex128)
    gvals = np.empty(ns, np.complex128)
    W = np.empty(ns)
    s_ = 3.0 + gamma
    beta = 5.0 - 2.0 * s_
    rmax2 = 3.0 * ny * ny
    for p in range(xis.shape[0]):
        x0, x1, x2 = xis[p, 0], xis[p, 1], xis[p, 2]
        R = 0.5 * np.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
        cx, cy, cz = 0.5 * x0, 0.5 * x1, 0.5 * x2
        if gamma == 0.0:
            for q in range(ns):
                t = 1.0 if R == 0.0 else (S[q, 0] * x0 + S[q, 1] * x1 + S[q, 2] * x2) / (2 * R)
                W[q] = Wt[q] * _btab_eval(bsig_tab, 0.5 * (t + 1.0))
            out[p] = _shell_avg(tab, d0, n0, cx, cy, cz, R, S, W, order, ny, fvals, gvals)
            continue
        for q in range(ns):
            W[q] = Wt[q]
        K0 = cg * np.pi / (1.0 - s_ / 2.0)
        tot = 0j
        if R > 0:
            T = np.sqrt(R)
            for a in range(xin.size):
                t = T * (1 + xin[a]) / 2
                w = win[a] * (T / 2) ** (1 + beta)
                rho = R - t * t
                core = 2 * K0 * (rho / R) * (t ** (2 * s_ - 4) * (rho + R) ** (2 - s_) - 1.0)
                tot += w * core * _shell_avg(tab, d0, n0, cx, cy, cz, rho, S, W, order, ny, fvals, gvals)
        rm2 = rmax2 - R * R
        rm = np.sqrt(rm2) if rm2 > 0 else 0.0
        if rm > R:
            T = np.sqrt(rm - R)
            for a in range(xout.size):
                t = T * (1 + xout[a]) / 2
                w = wout[a] * (T / 2) ** (1 + beta)
                rho = R + t * t
                if R > 0:
                    core = 2 * K0 * (rho / R) * (t ** (2 * s_ - 4) * (rho + R) ** (2 - s_) - 1.0)
                else:
                    core = 2 * cg * 4 * np.pi
                tot += w * core * _shell_avg(tab, d0, n0, cx, cy, cz, rho, S, W, order, ny, fvals, gvals)
        out[p] = tot / (2 * np.pi) ** 3


def riesz_constant(gamma: float) -> float:
    """``c`` in ``F[|z|^gamma](xi) = c |xi|^{-3-gamma}`` for ``F = int e^{-i xi z} dz``."""
    return float(2 ** (3 + gamma) * np.pi**1.5 * gamma_fn((3 + gamma) / 2) / gamma_fn(-gamma / 2))


def split_frequencies(xi, sigma):
    """``xi+-(xi, sigma) = (xi +- |xi| sigma) / 2``."""
    xi = np.asarray(xi, float)
    sigma = np.asarray(sigma, float)
    r = np.linalg.norm(xi, axis=-1, keepdims=True)
    return (xi + r * sigma) / 2, (xi - r * sigma) / 2


@dataclass(frozen=True)
class BobylevConfig:
    """Resolution of the spectral gain evaluation.

    ``upsample`` sets the zero-padding factor of the fine frequency table,
    ``order`` the Lagrange stencil width, ``n_in`` / ``n_out`` the radial
    Jacobi nodes inside and outside the shell radius ``|xi| / 2``.
    """

    upsample: int = 8
    order: int = 4
    n_in: int = 8
    n_out: int = 16


def _fine_table(fv: np.ndarray, gv: np.ndarray, grid: PhaseGrid, cfg: BobylevConfig):
    N, h = grid.N_v, grid.h_v
    Nf = cfg.upsample * N
    pad = cfg.order
    tab = np.zeros((Nf + 2 * pad,) * 3 + (2,), complex)
    s0 = (Nf - N) // 2
    for q, a in enumerate((fv, gv)):
        fp = np.zeros((Nf,) * 3, complex)
        fp[s0 : s0 + N, s0 : s0 + N, s0 : s0 + N] = a
        F = np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(fp))) * h**3
        tab[..., q] = np.pad(F, pad, mode="wrap")
    return tab, grid.d_xi / cfg.upsample, Nf // 2 + pad


def gain_bobylev(
    ft: SpectralField,
    gt: SpectralField,
    k: CollisionKernel,
    rule: SphereRule | None = None,
    cfg: BobylevConfig | None = None,
) -> SpectralField:
    """Gain term on the velocity-Fourier side at the split frequencies.

    For ``gamma = 0`` this is ``(2 pi)^{3/2} int b_sigma f~(xi+) g~(xi-) dsigma``.
    For ``gamma < 0`` the Riesz factor of the relative velocity is folded
    into a radial weight around ``xi / 2`` and integrated with Jacobi rules
    adapted to its endpoint singularity; this path needs a constant
    ``b_sigma`` (true for the default ``b = |cos|``).

    Off-grid samples of ``f~`` come from a zero-padded FFT table plus local
    Lagrange interpolation; frequencies outside the Nyquist box count as 0.
    """
    if k.gamma > 0:
        raise UnsupportedKernelError("hard potentials are not supported")
    grid = same_grid(ft, gt)
    rule = rule or SphereRule()
    cfg = cfg or BobylevConfig()
    bconst = k.sigma_factor_constant()
    if k.gamma < 0 and bconst is None:
        raise UnsupportedKernelError("soft-potential spectral gain needs a constant sigma factor")
    anti = rule.antipode()
    # the kernel pairs node q with node ns-1-q; reorder so that is the antipode
    order_idx = _antipodal_order(anti)
    S = np.ascontiguousarray(rule.nodes[order_idx])
    Wt = rule.weights[order_idx].copy()
    tgrid = np.linspace(-1.0, 1.0, _BTAB_SIZE)
    bsig = k.b_sigma(tgrid)
    if k.gamma < 0:
        Wt = Wt * bconst
        cg = riesz_constant(k.gamma)
        beta = 5.0 - 2.0 * (3.0 + k.gamma)
        xin, win = roots_jacobi(cfg.n_in, 0.0, beta)
        xout, wout = roots_jacobi(cfg.n_out, 0.0, beta)
    else:
        cg = 0.0
        xin = win = xout = wout = np.zeros(1)
    xis = grid.xi_mesh().reshape(-1, 3)
    fv = ifft_v(np.broadcast_to(ft.values, np.broadcast_shapes(ft.values.shape, gt.values.shape)), grid)
    gv = ifft_v(np.broadcast_to(gt.values, fv.shape), grid)
    N = grid.N_v
    fx = fv.reshape((-1,) + (N,) * 3)
    gx = gv.reshape((-1,) + (N,) * 3)
    out = np.empty((fx.shape[0], N**3), complex)
    for p in range(fx.shape[0]):
        tab, d0, n0 = _fine_table(fx[p], gx[p], grid, cfg)
        _bobylev_kernel(
            tab, d0, float(n0), xis, S, Wt, bsig, float(k.gamma), cg,
            xin, win, xout, wout, cfg.order, np.pi / grid.h_v, out[p],
        )
    qhat = out.reshape(fv.shape)
    return SpectralField(grid, (2 * np.pi) ** -1.5 * qhat, ft.time_stamp)


def _antipodal_order(anti: np.ndarray) -> np.ndarray:
    """Permutation ``P`` with ``P[ns - 1 - q] = anti[P[q]]``."""
    ns = anti.size
    order = np.empty(ns, int)
    seen = np.zeros(ns, bool)
    lo = 0
    for i in range(ns):
        if seen[i]:
            continue
        j = anti[i]
        order[lo] = i
        order[ns - 1 - lo] = j
        seen[i] = seen[j] = True
        lo += 1
    return order


def fit_bobylev_constant(grid: PhaseGrid, k: CollisionKernel, rule: SphereRule | None = None, **kw) -> float:
    """Least-squares factor mapping the spectral gain onto the weak direct gain for ``M = exp(-|v|^2)``."""
    v = grid.v_mesh()
    M = DistributionField(grid, np.exp(-(v**2).sum(-1)))
    from .grid import fourier_v

    direct = fourier_v(gain_direct(M, M, k, rule, method="weak", **kw)).values.ravel()
    Mt = fourier_v(M)
    spec = gain_bobylev(Mt, Mt, k, rule).values.ravel()
    return float(np.real(np.vdot(spec, direct)) / np.real(np.vdot(spec, spec)))

"""Phase-space grid, velocity Fourier transforms and weighted norms.

Fields are stored as arrays of shape ``(nx1, nx2, nx3, N_v, N_v, N_v)``.
Each spatial extent ``nx_i`` is either ``N_x`` or 1; an extent of 1 means
the field is constant along that spatial axis.  ``(1, 1, 1)`` is the
spatially homogeneous mode.

The velocity transform uses the unitary convention

    f~(xi) = (2 pi)^{-3/2} int f(v) exp(-i xi . v) dv

discretized by the trapezoid rule on the periodic velocity box, so that
continuum formulas hold without stray factors of 2 pi.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

V_AXES = (-3, -2, -1)
X_AXES = (0, 1, 2)


class GridMismatchError(ValueError):
    """Raised when fields defined on different grids are combined."""


class SupportOverflowError(ValueError):
    """Raised when a rescaled field does not fit the grid."""


class TruncationWarning(UserWarning):
    """Field does not decay inside the outer shell of the velocity box."""


def _is_pow2(n: int) -> bool:
    return n >= 4 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform periodic grid on ``[-L_x, L_x)^3 x [-L_v, L_v)^3``.

    Parameters
    ----------
    L_x, N_x : float, int
        Spatial half-period and points per spatial dimension.
    L_v, N_v : float, int
        Velocity half-extent and points per velocity dimension.
    """

    L_x: float
    N_x: int
    L_v: float
    N_v: int

    def __post_init__(self):
        if not (_is_pow2(int(self.N_x)) and _is_pow2(int(self.N_v))):
            raise ValueError("N_x and N_v must be powers of two and at least 4")
        if self.L_x <= 0 or self.L_v <= 0:
            raise ValueError("box sizes must be positive")

    # spacings -------------------------------------------------------------
    @property
    def h_x(self) -> float:
        return 2.0 * self.L_x / self.N_x

    @property
    def h_v(self) -> float:
        return 2.0 * self.L_v / self.N_v

    @property
    def d_xi(self) -> float:
        return np.pi / self.L_v

    @property
    def d_k(self) -> float:
        return np.pi / self.L_x

    # nodes ----------------------------------------------------------------
    @property
    def x1(self) -> np.ndarray:
        return -self.L_x + self.h_x * np.arange(self.N_x)

    @property
    def v1(self) -> np.ndarray:
        return -self.L_v + self.h_v * np.arange(self.N_v)

    @property
    def xi1(self) -> np.ndarray:
        """Centered velocity-dual nodes, ``(pi / L_v) * m`` for ``m in [-N/2, N/2)``."""
        return self.d_xi * np.arange(-self.N_v // 2, self.N_v // 2)

    @property
    def k1(self) -> np.ndarray:
        """Spatial wavenumbers in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.N_x, d=self.h_x)

    def v_mesh(self) -> np.ndarray:
        """Velocity nodes as an array of shape ``(N_v, N_v, N_v, 3)``."""
        return np.stack(np.meshgrid(self.v1, self.v1, self.v1, indexing="ij"), axis=-1)

    def xi_mesh(self) -> np.ndarray:
        return np.stack(np.meshgrid(self.xi1, self.xi1, self.xi1, indexing="ij"), axis=-1)

    def x_mesh(self) -> np.ndarray:
        return np.stack(np.meshgrid(self.x1, self.x1, self.x1, indexing="ij"), axis=-1)

    def k_axis(self, n: int) -> np.ndarray:
        """Wavenumbers for a spatial axis of extent ``n`` (1 or ``N_x``)."""
        return np.zeros(1) if n == 1 else self.k1

    def x_axis(self, n: int) -> np.ndarray:
        return np.zeros(1) if n == 1 else self.x1

    def header(self) -> dict:
        """JSON-serializable descriptor embedded in every output file."""
        return {
            "L_x": float(self.L_x),
            "N_x": int(self.N_x),
            "L_v": float(self.L_v),
            "N_v": int(self.N_v),
            "fourier_convention": "unitary",
        }

    def header_json(self) -> str:
        return json.dumps(self.header(), sort_keys=True)

    def check_shape(self, values: np.ndarray) -> None:
        if values.ndim != 6 or values.shape[3:] != (self.N_v,) * 3:
            raise GridMismatchError(f"field shape {values.shape} does not match velocity grid")
        for n in values.shape[:3]:
            if n not in (1, self.N_x):
                raise GridMismatchError(f"spatial extent {n} must be 1 or {self.N_x}")


@dataclass(frozen=True)
class DistributionField:
    """Real samples ``f(x, v)`` on a :class:`PhaseGrid`."""

    grid: PhaseGrid
    values: np.ndarray
    time_stamp: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values)
        if np.iscomplexobj(vals):
            raise TypeError("DistributionField values must be real")
        vals = vals.astype(np.float64, copy=False)
        if vals.ndim == 3:
            vals = vals.reshape((1, 1, 1) + vals.shape)
        object.__setattr__(self, "values", vals)
        self.grid.check_shape(vals)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field has non-finite entries")

    def nonnegative(self, eps_rel: float = 1e-12) -> bool:
        """Certify ``min(values) >= -eps_rel * max|values|``."""
        scale = float(np.max(np.abs(self.values))) if self.values.size else 0.0
        return float(self.values.min()) >= -eps_rel * scale

    def with_values(self, values: np.ndarray, time_stamp: float | None = None) -> "DistributionField":
        t = self.time_stamp if time_stamp is None else time_stamp
        return DistributionField(self.grid, values, t)

    def mass(self) -> float:
        return integrate_xv(self.grid, self.values)


@dataclass(frozen=True)
class SpectralField:
    """Complex samples ``f~(x, xi)`` on the velocity-dual grid."""

    grid: PhaseGrid
    values: np.ndarray
    time_stamp: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.ndim == 3:
            vals = vals.reshape((1, 1, 1) + vals.shape)
        object.__setattr__(self, "values", vals)
        self.grid.check_shape(vals)

    def is_conjugate_symmetric(self, rtol: float = 1e-12) -> bool:
        """True when ``f~(-xi) = conj f~(xi)`` on the symmetric part of the grid."""
        a = self.values[..., 1:, 1:, 1:]
        b = np.conj(a[..., ::-1, ::-1, ::-1])
        scale = max(float(np.max(np.abs(self.values))), 1e-300)
        return float(np.max(np.abs(a - b))) <= rtol * scale


# ---------------------------------------------------------------------------
# transforms


def _v_phase_factor(grid: PhaseGrid) -> float:
    return (2.0 * np.pi) ** -1.5 * grid.h_v**3


def fft_v(values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Unitary transform of the trailing three velocity axes of an array."""
    a = np.fft.ifftshift(values, axes=V_AXES)
    a = np.fft.fftn(a, axes=V_AXES)
    return np.fft.fftshift(a, axes=V_AXES) * _v_phase_factor(grid)


def ifft_v(values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    a = np.fft.ifftshift(values, axes=V_AXES)
    a = np.fft.ifftn(a, axes=V_AXES)
    return np.fft.fftshift(a, axes=V_AXES) / _v_phase_factor(grid)


def fourier_v(f: DistributionField) -> SpectralField:
    """Velocity transform ``v -> xi`` in the unitary convention."""
    return SpectralField(f.grid, fft_v(f.values, f.grid), f.time_stamp)


def inverse_fourier_v(ft: SpectralField, *, real: bool = True) -> DistributionField:
    """Inverse of :func:`fourier_v`; the imaginary part is dropped when ``real``."""
    vals = ifft_v(ft.values, ft.grid)
    if not real:
        return vals
    return DistributionField(ft.grid, vals.real.copy(), ft.time_stamp)


def same_grid(*fields) -> PhaseGrid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError("fields live on different grids")
    return g


# ---------------------------------------------------------------------------
# quadrature helpers


def x_mean(values: np.ndarray) -> np.ndarray:
    """Average over the three spatial axes (constant axes have extent 1)."""
    return values.mean(axis=X_AXES)


def integrate_x(grid: PhaseGrid, values: np.ndarray) -> np.ndarray:
    """Integral over the spatial torus, axes 0-2."""
    return (2.0 * grid.L_x) ** 3 * x_mean(values)


def integrate_v(grid: PhaseGrid, values: np.ndarray) -> np.ndarray:
    return grid.h_v**3 * values.sum(axis=V_AXES)


def integrate_xv(grid: PhaseGrid, values: np.ndarray) -> float:
    return float(integrate_x(grid, integrate_v(grid, values)[..., None, None, None]).sum())


def check_truncation(f: DistributionField, level: float = 1e-10) -> bool:
    """Warn when ``f`` exceeds ``level * max|f|`` in the outer 10% velocity shell."""
    grid = f.grid
    v = np.abs(grid.v1)
    shell = v >= 0.9 * grid.L_v
    mask = shell[:, None, None] | shell[None, :, None] | shell[None, None, :]
    amp = np.abs(f.values)
    top = float(amp.max()) if amp.size else 0.0
    if top == 0.0:
        return True
    outer = float(amp[..., mask].max())
    if outer > level * top:
        warnings.warn(
            f"field reaches {outer / top:.2e} of its maximum in the outer velocity shell",
            TruncationWarning,
            stacklevel=2,
        )
        return False
    return True


# ---------------------------------------------------------------------------
# weighted norms

_MIXES = ("L2", "Lv2Lxp", "LxpLvq", "sup")


def x_multiplier(values: np.ndarray, grid: PhaseGrid, s: float, homogeneous: bool = False) -> np.ndarray:
    """Apply ``<grad_x>^s`` (or ``|grad_x|^s`` when ``homogeneous``) as a Fourier multiplier."""
    if s == 0:
        return values
    shape = values.shape[:3]
    ks = [grid.k_axis(n) for n in shape]
    k2 = ks[0][:, None, None] ** 2 + ks[1][None, :, None] ** 2 + ks[2][None, None, :] ** 2
    if homogeneous:
        with np.errstate(divide="ignore"):
            mult = np.where(k2 > 0, k2 ** (s / 2.0), 0.0)
    else:
        mult = (1.0 + k2) ** (s / 2.0)
    axes = [a for a in X_AXES if shape[a] > 1]
    if not axes:
        return values * mult.reshape(1, 1, 1, 1, 1, 1)
    out = np.fft.ifftn(np.fft.fftn(values, axes=axes) * mult[..., None, None, None], axes=axes)
    return out.real if np.isrealobj(values) else out


def velocity_weight(grid: PhaseGrid, r: float, spectral: bool = False, homogeneous: bool = False) -> np.ndarray:
    """``<v>^r`` on the velocity (or dual) nodes; ``|v|^r`` when ``homogeneous``."""
    mesh = grid.xi_mesh() if spectral else grid.v_mesh()
    sq = (mesh**2).sum(-1)
    if homogeneous:
        with np.errstate(divide="ignore"):
            return np.where(sq > 0, sq ** (r / 2.0), 0.0)
    return (1.0 + sq) ** (r / 2.0)


def _lp_x(grid: PhaseGrid, a: np.ndarray, p: float) -> np.ndarray:
    """Spatial ``L^p`` norm over axes 0-2, keeping velocity axes."""
    if np.isinf(p):
        return a.max(axis=X_AXES)
    return integrate_x(grid, a**p) ** (1.0 / p)


def weighted_norm(
    f,
    s: float = 0.0,
    r: float = 0.0,
    mix="L2",
    *,
    homogeneous: bool = False,
) -> float:
    """Weighted mixed Lebesgue norm of a distribution or spectral field.

    Parameters
    ----------
    f : DistributionField or SpectralField
    s : float
        Spatial regularity, applied as ``<grad_x>^s``.
    r : float
        Velocity weight exponent, applied as ``<v>^r`` (``<xi>^r`` on
        spectral fields).
    mix : str or tuple
        ``"L2"``; ``("Lv2Lxp", p)`` for ``L^2_v L^p_x``; ``("LxpLvq", p, q)``
        for ``L^p_x L^q_v``; ``"sup"`` for the grid maximum.
    homogeneous : bool
        Use the power weights ``|grad_x|^s`` and ``|v|^r`` instead.
    """
    if s < -2 or r < -2:
        raise ValueError("s and r must be at least -2")
    name = mix if isinstance(mix, str) else mix[0]
    if name not in _MIXES:
        raise ValueError(f"unsupported norm descriptor {mix!r}")
    grid = f.grid
    spectral = isinstance(f, SpectralField)
    a = x_multiplier(f.values, grid, s, homogeneous)
    if r != 0:
        a = a * velocity_weight(grid, r, spectral, homogeneous)
    a = np.abs(a)
    # every mix is 1-homogeneous; normalizing keeps squares clear of underflow and overflow
    m = float(a.max()) if a.size else 0.0
    if m == 0.0 or not np.isfinite(m):
        return m
    a = a / m
    dv = grid.d_xi**3 if spectral else grid.h_v**3
    if name == "L2":
        return m * float(np.sqrt(integrate_x(grid, (a**2).sum(axis=V_AXES) * dv)))
    if name == "sup":
        return m
    if name == "Lv2Lxp":
        p = float(mix[1])
        inner = _lp_x(grid, a, p)
        return m * float(np.sqrt((inner**2).sum() * dv))
    p, q = float(mix[1]), float(mix[2])
    if np.isinf(q):
        inner = a.max(axis=V_AXES)
    else:
        inner = ((a**q).sum(axis=V_AXES) * dv) ** (1.0 / q)
    if np.isinf(p):
        return m * float(inner.max())
    return m * float(integrate_x(grid, inner**p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class ScalingParams:
    """Parameters of ``f_lam = lam^(a + (2+g) b) f(lam^(a-b) t, lam^a x, lam^b v)``."""

    lam: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    def amplitude(self, gamma: float) -> float:
        return self.lam ** (self.alpha + (2.0 + gamma) * self.beta)

    def norm_exponent(self, gamma: float, s: float = 0.0, r: float = 0.0) -> float:
        """Exponent of ``lam`` picked up by the homogeneous ``|grad_x|^s |v|^r`` L2 norm."""
        a, b = self.alpha, self.beta
        return a + (2.0 + gamma) * b + a * s - b * r - 1.5 * a - 1.5 * b


def _resample_matrix(nodes: np.ndarray, targets: np.ndarray, half: float, periodic: bool) -> np.ndarray:
    """Trigonometric interpolation from ``nodes`` to ``targets``.

    Returns a matrix ``E`` with ``f(targets) = E @ f(nodes)``.  Targets
    landing on nodes reproduce samples exactly.  When not ``periodic``
    targets outside the box evaluate to 0.
    """
    n = nodes.size
    h = 2.0 * half / n
    d = (targets[:, None] - nodes[None, :]) / h
    near = np.abs(d - np.round(d)) < 1e-12
    dd = np.where(near, 0.5, d)
    # periodic Dirichlet kernel for even n, Nyquist mode split symmetrically
    ker = np.sin(np.pi * dd) / (n * np.tan(np.pi * dd / n))
    hit = near & (np.mod(np.round(d), n) == 0)
    ker = np.where(near, hit.astype(float), ker)
    if not periodic:
        outside = (targets < -half) | (targets >= half)
        ker[outside] = 0.0
    return ker


def _apply_axis(values: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, -1)
    out = moved @ mat.T
    return np.moveaxis(out, -1, axis)


def apply_scaling(
    f: DistributionField,
    p: ScalingParams,
    gamma: float = 0.0,
    *,
    allow_resample: bool = True,
    tol: float = 1e-10,
) -> DistributionField:
    """Rescale a field by the equation's scaling family.

    Returns ``f_lam`` at time ``t_f * lam^(b - a)``; samples at scaled
    nodes come from trigonometric interpolation (exact when a scaled node
    lands on a grid node).  The result's ``meta['resampled']`` records
    whether any off-node evaluation happened.

    Raises
    ------
    SupportOverflowError
        If mass outside the part of the box that maps into the grid
        exceeds ``tol * max|f|``, or when resampling is needed but not
        permitted.
    """
    grid = f.grid
    if p.lam == 1.0 or (p.alpha == 0 and p.beta == 0):
        return DistributionField(grid, f.values.copy(), f.time_stamp, {"resampled": False})
    sx = p.lam**p.alpha
    sv = p.lam**p.beta
    vals = f.values
    top = float(np.max(np.abs(vals))) or 1.0
    resampled = False

    def axis_matrix(nodes, half, scale):
        tgt = scale * nodes
        on = np.abs((tgt + half) / (2 * half / nodes.size) - np.round((tgt + half) / (2 * half / nodes.size))) < 1e-12
        return _resample_matrix(nodes, tgt, half, periodic=False), not bool(on.all())

    # expanding (scale < 1) pushes samples at |y| > half * scale out of the box
    def overflow(axis_nodes, half, scale, axis):
        if scale >= 1.0:
            return
        lost = np.abs(axis_nodes) > half * scale
        if not lost.any():
            return
        sl = [slice(None)] * 6
        sl[axis] = lost
        if np.max(np.abs(vals[tuple(sl)]), initial=0.0) > tol * top:
            raise SupportOverflowError("rescaled field does not fit the grid")

    out = vals
    if sx != 1.0:
        for ax in X_AXES:
            if vals.shape[ax] == 1:
                continue
            overflow(grid.x1, grid.L_x, sx, ax)
            m, off = axis_matrix(grid.x1, grid.L_x, sx)
            resampled |= off
            out = _apply_axis(out, m, ax)
    if sv != 1.0:
        for ax in (3, 4, 5):
            overflow(grid.v1, grid.L_v, sv, ax)
            m, off = axis_matrix(grid.v1, grid.L_v, sv)
            resampled |= off
            out = _apply_axis(out, m, ax)
    if resampled and not allow_resample:
        raise SupportOverflowError("off-node evaluation required but resampling not permitted")
    t_new = f.time_stamp * p.lam ** (p.beta - p.alpha)
    return DistributionField(grid, p.amplitude(gamma) * out, t_new, {"resampled": resampled})

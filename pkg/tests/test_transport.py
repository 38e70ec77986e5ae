import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boltzlab.grid import DistributionField, PhaseGrid, SpectralField, fourier_v, inverse_fourier_v
from boltzlab.transport import TimeGrid, duhamel, duhamel_trajectory, free_stream, stream_values, xi_propagate


@pytest.fixture(scope="module")
def grid():
    return PhaseGrid(1.0, 8, 2.0, 4)


def no_nyquist(vals, grid):
    """Zero the spatial Nyquist modes so the real part of S(t) is a group."""
    fh = np.fft.fftn(vals, axes=(0, 1, 2))
    n = grid.N_x // 2
    fh[n] = 0
    fh[:, n] = 0
    fh[:, :, n] = 0
    return np.fft.ifftn(fh, axes=(0, 1, 2)).real


def random_field(grid, seed):
    rng = np.random.default_rng(seed)
    return DistributionField(grid, no_nyquist(rng.normal(size=(grid.N_x,) * 3 + (grid.N_v,) * 3), grid))


def test_timegrid_basic():
    tg = TimeGrid(0.0, 1.0, 0.25)
    assert tg.n_steps == 4
    assert np.allclose(tg.times(), [0, 0.25, 0.5, 0.75, 1.0])
    tau, w = tg.nodes_weights()
    assert np.isclose(w.sum(), 1.0) and w[0] == w[-1] == 0.125
    tau, w = TimeGrid(0.0, 1.0, 0.25, "midpoint").nodes_weights()
    assert np.allclose(tau, [0.125, 0.375, 0.625, 0.875]) and np.isclose(w.sum(), 1.0)
    assert tg.refine().dt == 0.125 and tg.coarsen().dt == 0.5


@pytest.mark.parametrize("args", [(0.0, 1.0, 0.0), (0.0, 1.0, -0.1), (0.0, 1.0, 0.3), (1.0, 0.0, 0.5), (0.0, 1.0, 0.5, "simpson")])
def test_timegrid_rejects(args):
    with pytest.raises(ValueError):
        TimeGrid(*args)


def test_stream_identity_at_zero(grid):
    f = random_field(grid, 0)
    assert np.array_equal(free_stream(f, 0.0).values, f.values)


def test_stream_rejects_nonfinite(grid):
    with pytest.raises(ValueError):
        free_stream(random_field(grid, 0), np.inf)


@pytest.mark.parametrize("t", [0.13, 0.5, 1.7, -0.9])
def test_stream_plane_wave(grid, t):
    X, V = grid.x_mesh(), grid.v_mesh()
    kvec = np.array([1, -2, 3]) * np.pi / grid.L_x
    G = np.exp(-(V**2).sum(-1))
    f0 = np.cos(X @ kvec)[..., None, None, None] * G
    out = free_stream(DistributionField(grid, f0), t).values
    phase = (X @ kvec)[..., None, None, None] - t * (V @ kvec)[None, None, None]
    assert np.abs(out - np.cos(phase) * G).max() <= 1e-12


def test_stream_commensurate_is_permutation(grid):
    rng = np.random.default_rng(1)
    f = DistributionField(grid, rng.random((8, 8, 8, 4, 4, 4)))
    # h_v = 1 and h_x = 1/4, so t = 1/4 shifts every v by a whole cell
    out = free_stream(f, 0.25).values
    assert np.array_equal(np.sort(out.ravel()), np.sort(f.values.ravel()))
    assert out.min() >= 0
    assert np.allclose(out, free_stream(f, 0.25, exact_shift=False).values, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**16))
def test_stream_group_law(t, s, seed):
    g = PhaseGrid(1.0, 8, 2.0, 4)
    f = random_field(g, seed)
    a = free_stream(free_stream(f, s), t).values
    b = free_stream(f, t + s).values
    assert np.abs(a - b).max() <= 1e-12 * np.abs(f.values).max()


@pytest.mark.parametrize("seed", range(3))
def test_stream_roundtrip(grid, seed):
    f = random_field(grid, seed)
    back = free_stream(free_stream(f, 0.77), -0.77)
    assert np.abs(back.values - f.values).max() <= 1e-12 * np.abs(f.values).max()


def test_stream_preserves_integral_and_l2(grid):
    f = random_field(grid, 4)
    out = free_stream(f, 0.61)
    assert abs(out.values.sum() - f.values.sum()) <= 1e-12 * np.abs(f.values).sum()
    assert abs(np.linalg.norm(out.values) - np.linalg.norm(f.values)) <= 1e-12 * np.linalg.norm(f.values)


def test_xi_propagate_identity(grid):
    ft = fourier_v(random_field(grid, 2))
    assert np.array_equal(xi_propagate(ft, 0.0).values, ft.values)


@pytest.mark.parametrize("seed,t", [(0, 0.3), (1, -1.1), (2, 2.5)])
def test_xi_propagate_conjugation(grid, seed, t):
    f = random_field(grid, seed)
    ft = fourier_v(f)
    lhs = xi_propagate(ft, t).values
    rhs = fourier_v(free_stream(inverse_fourier_v(ft), t)).values
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) <= 1e-11


@settings(max_examples=10, deadline=None)
@given(st.floats(-4, 4), st.integers(0, 2**16))
def test_xi_propagate_isometry_and_group(t, seed):
    g = PhaseGrid(1.0, 8, 2.0, 4)
    rng = np.random.default_rng(seed)
    ft = SpectralField(g, rng.normal(size=(8,) * 3 + (4,) * 3) + 1j * rng.normal(size=(8,) * 3 + (4,) * 3))
    out = xi_propagate(ft, t)
    n = np.linalg.norm(ft.values)
    assert abs(np.linalg.norm(out.values) - n) <= 1e-12 * n
    a = xi_propagate(xi_propagate(ft, t), 0.5).values
    b = xi_propagate(ft, t + 0.5).values
    assert np.linalg.norm(a - b) <= 1e-12 * n


def test_duhamel_zero_source(grid):
    f = random_field(grid, 0)
    out = duhamel(f, lambda t: np.zeros_like(f.values), TimeGrid(0.0, 0.8, 0.1))
    assert np.abs(out.values - free_stream(f, 0.8).values).max() <= 1e-12


@pytest.mark.parametrize("quad", ["trapezoid", "midpoint"])
def test_duhamel_pulled_back_constant(grid, quad):
    f, h = random_field(grid, 0), random_field(grid, 1)
    out = duhamel(f, lambda t: free_stream(h, t), TimeGrid(0.0, 0.9, 0.3, quad))
    exact = free_stream(f, 0.9).values + 0.9 * free_stream(h, 0.9).values
    assert np.abs(out.values - exact).max() <= 1e-12 * np.abs(exact).max()


def _manufactured_error(grid, dt):
    f, h = random_field(grid, 0), random_field(grid, 1)
    T = 1.0
    out = duhamel(f, lambda t: np.cos(t) * free_stream(h, t).values, TimeGrid(0.0, T, dt))
    exact = free_stream(f, T).values + np.sin(T) * free_stream(h, T).values
    return np.abs(out.values - exact).max()


def test_duhamel_second_order(grid):
    errs = [_manufactured_error(grid, dt) for dt in (0.1, 0.05, 0.025)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 2) <= 0.05)


def test_duhamel_source_error_has_time(grid):
    f = random_field(grid, 0)

    def bad(t):
        raise KeyError("missing")

    with pytest.raises(RuntimeError, match="tau=0.0"):
        duhamel(f, bad, TimeGrid(0.0, 0.5, 0.25))


def test_duhamel_trajectory_matches_sum(grid):
    f, h = random_field(grid, 0), random_field(grid, 3)
    tg = TimeGrid(0.0, 0.6, 0.2)
    srcs = np.stack([np.sin(t) * h.values for t in tg.times()])
    traj = duhamel_trajectory(f.values, srcs, grid, tg)
    end = duhamel(f, lambda t: np.sin(t) * h.values, tg).values
    assert np.abs(traj[-1] - end).max() <= 1e-12 * np.abs(end).max()
    with pytest.raises(ValueError):
        duhamel_trajectory(f.values, srcs, grid, TimeGrid(0.0, 0.6, 0.2, "midpoint"))


def test_stream_values_broadcast_homogeneous(grid):
    vals = np.ones((1, 1, 1, 4, 4, 4))
    assert np.array_equal(stream_values(vals, grid, 0.3), vals)

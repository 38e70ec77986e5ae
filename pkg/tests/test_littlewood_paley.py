import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boltzlab.collision import CollisionKernel, SphereRule
from boltzlab.grid import DistributionField, PhaseGrid, fourier_v
from boltzlab.littlewood_paley import (
    DyadicCutoff,
    chi,
    frequency_support_check,
    p_variation,
    p_variation_bruteforce,
    phi,
    project,
    project_low,
    resolvable_range,
    spectral_support_check,
    vanishing_threshold,
    x_support_check,
)
from boltzlab.transport import xi_propagate


def test_chi_profile():
    y = np.linspace(-3, 3, 6001)
    c = chi(y)
    assert np.all(c[np.abs(y) <= 1] == 1) and np.all(c[np.abs(y) >= 2] == 0)
    assert np.all((c >= 0) & (c <= 1))
    assert np.all(np.diff(c[y >= 0]) <= 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_phi_telescopes(y):
    levels = DyadicCutoff(2**12).levels
    total = chi(y) + sum(phi(y, N) for N in levels)
    assert abs(total - 1) <= 1e-12
    assert all(phi(y, N) >= 0 for N in levels)


def test_phi_support():
    N = 4
    y = np.linspace(0, 40, 4001)
    p = phi(y, N)
    assert np.all(p[(y <= N) | (y >= 4 * N)] == 0)


def test_dyadic_cutoff():
    assert DyadicCutoff(8).levels == [1, 2, 4, 8]
    assert "chi" in DyadicCutoff(8).header()
    with pytest.raises(ValueError):
        DyadicCutoff(6)


def test_resolvable_range():
    assert resolvable_range(64) == (1, 16)


@pytest.fixture(scope="module")
def xgrid():
    return PhaseGrid(1.0, 16, 2.0, 4)


def band_limited(grid, radius, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(grid.N_x,) * 3 + (grid.N_v,) * 3)
    fh = np.fft.fftn(vals, axes=(0, 1, 2))
    k = np.fft.fftfreq(grid.N_x, 1.0 / grid.N_x)
    r = np.sqrt(k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2)
    fh[r > radius] = 0
    return DistributionField(grid, np.fft.ifftn(fh, axes=(0, 1, 2)).real)


def test_project_rejects_levels(xgrid):
    f = band_limited(xgrid, 4, 0)
    for N in (0, 3, 8):
        with pytest.raises(ValueError):
            project(f, "x", N)
    with pytest.raises(ValueError):
        project(f, "t", 1)


def test_project_kills_low_band(xgrid):
    f = band_limited(xgrid, 1.9, 1)
    assert np.abs(project(f, "x", 2).values).max() <= 1e-10 * np.abs(f.values).max()


def test_partition_of_unity_x(xgrid):
    f = band_limited(xgrid, 8, 2)
    total = project_low(f, "x").values + sum(project(f, "x", N).values for N in (1, 2, 4))
    assert np.abs(total - f.values).max() <= 1e-10 * np.abs(f.values).max()


@pytest.mark.parametrize("N", [2, 4])
def test_single_mode_weight(xgrid, N):
    X, V = xgrid.x_mesh(), xgrid.v_mesh()
    m = 1.5 * N
    f = np.cos(m * xgrid.d_k * X[..., 0])[..., None, None, None] * np.exp(-(V**2).sum(-1))
    out = project(DistributionField(xgrid, f), "x", N).values
    w = 1.0 - chi(m / N)  # chi(1.5N / 2N) = 1
    assert np.abs(out - w * f).max() <= 1e-12
    assert np.isclose(w, float(phi(m, N)))


@pytest.mark.parametrize("N,M", [(1, 4), (1, 8), (2, 8)])
def test_disjoint_projectors(N, M):
    f = band_limited(PhaseGrid(1.0, 32, 2.0, 4), 40, 3)
    both = project(project(f, "x", N), "x", M).values
    assert np.abs(both).max() <= 1e-12 * np.abs(f.values).max()


@pytest.mark.parametrize("N", [1, 2, 4])
def test_projector_bounded(xgrid, N):
    f = band_limited(xgrid, 20, 4)
    assert np.linalg.norm(project(f, "x", N).values) <= np.linalg.norm(f.values)


def test_xi_projector_partition():
    g = PhaseGrid(1.0, 4, 4.0, 32)
    rng = np.random.default_rng(0)
    V = g.v_mesh()
    # velocity-side support inside |v| / h_v <= 16 = 2 N_max
    f = DistributionField(g, rng.random((32, 32, 32)) * ((V**2).sum(-1) <= (16 * g.h_v) ** 2))
    total = project_low(f, "xi").values + sum(project(f, "xi", N).values for N in (1, 2, 4, 8))
    assert np.abs(total - f.values).max() <= 1e-12
    ft = fourier_v(f)
    assert np.allclose(fourier_v(project(f, "xi", 2)).values, project(ft, "xi", 2).values, atol=1e-12)


def test_x_support_vanishing():
    g = PhaseGrid(1.0, 64, 2.0, 4)
    rng = np.random.default_rng(5)
    f = DistributionField(g, rng.normal(size=(64, 1, 1, 4, 4, 4)))
    h = DistributionField(g, rng.normal(size=(64, 1, 1, 4, 4, 4)))
    assert x_support_check(f, h, 16, 1, 1) <= 1e-10
    with pytest.raises(ValueError):
        x_support_check(f, h, 8, 1, 1)


@pytest.fixture(scope="module")
def vgrid():
    return PhaseGrid(1.0, 4, 32.0, 64)


def v_pair(grid, seed):
    rng = np.random.default_rng(seed)
    V = grid.v_mesh()
    c = rng.normal(size=(2, 3)) * 2
    w = rng.uniform(4, 9, 2)
    return [DistributionField(grid, np.exp(-((V - c[i]) ** 2).sum(-1) / w[i] ** 2)) for i in range(2)]


def test_frequency_support_vanishing(vgrid):
    f, g = v_pair(vgrid, 0)
    assert frequency_support_check(f, g, 16, 1, 1, CollisionKernel(-0.5), SphereRule(4, 8)) <= 1e-6


def test_frequency_support_usage(vgrid):
    f, g = v_pair(vgrid, 1)
    k = CollisionKernel(0.0)
    with pytest.raises(ValueError):
        frequency_support_check(f, g, 8, 1, 1, k)
    z = f.with_values(np.zeros_like(f.values))
    assert frequency_support_check(z, g, 16, 1, 1, k) == 0.0


def test_vanishing_threshold_reports(vgrid):
    f, g = v_pair(vgrid, 2)
    out = vanishing_threshold(f, g, 1, 1, CollisionKernel(0.0), SphereRule(4, 8))
    assert set(out["ratios"]) == {2, 4, 8, 16}
    assert out["ratios"][16] <= 1e-6
    assert out["smallest_ratio"] is not None and out["smallest_ratio"] <= 16


def test_spectral_support_zero():
    g = PhaseGrid(1.0, 4, 4.0, 16)
    z = fourier_v(DistributionField(g, np.zeros((16, 16, 16))))
    assert spectral_support_check(z, z, 4, 1, 1, CollisionKernel(0.0), SphereRule(4, 8)) == 0.0


def test_p_variation_examples():
    assert p_variation([3.0, 3.0, 3.0], 2) == 0.0
    assert np.isclose(p_variation([0.0, 1.0, 0.0], 2), np.sqrt(2))
    assert np.isclose(p_variation([0.0, 0.5, 1.5, 4.0], 1), 4.0)


def test_p_variation_domain():
    with pytest.raises(ValueError):
        p_variation([0.0, 1.0], 0.5)
    with pytest.raises(ValueError):
        p_variation([0.0], 2)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=10), st.sampled_from([1.0, 1.5, 2.0, 3.0]))
def test_p_variation_matches_bruteforce(xs, p):
    assert p_variation(xs, p) == p_variation_bruteforce(xs, p)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=9))
def test_p_variation_nonincreasing_in_p(xs):
    vals = [p_variation(xs, p) for p in (1.0, 1.5, 2.0, 4.0)]
    assert all(b <= a * (1 + 1e-12) + 1e-300 for a, b in zip(vals, vals[1:]))


def test_p_variation_vector_samples():
    rng = np.random.default_rng(0)
    xs = [rng.normal(size=(3, 2)) for _ in range(7)]
    assert p_variation(xs, 2) == p_variation_bruteforce(xs, 2)
    l1 = lambda d: float(np.abs(d).sum())  # noqa: E731
    assert p_variation(xs, 2, l1) == p_variation_bruteforce(xs, 2, l1)


def test_pulled_back_variation_vanishes():
    g = PhaseGrid(1.0, 8, 2.0, 4)
    rng = np.random.default_rng(1)
    ft = fourier_v(DistributionField(g, rng.normal(size=(8,) * 3 + (4,) * 3)))
    times = np.linspace(0, 2, 9)
    pulled = [xi_propagate(xi_propagate(ft, t), -t).values for t in times]
    assert p_variation(pulled, 2) <= 1e-10 * np.linalg.norm(ft.values)


def test_bruteforce_enumerates_all():
    # the brute force sees every subsequence of a 3-point path
    xs = [0.0, 1.0, 0.0]
    subs = [c for r in range(2, 4) for c in itertools.combinations(range(3), r)]
    best = max(sum(abs(xs[b] - xs[a]) ** 2 for a, b in zip(s, s[1:])) for s in subs)
    assert np.isclose(p_variation_bruteforce(xs, 2), np.sqrt(best))

import numpy as np
import pytest

from curvedks.domain import AnnulusSpec, make_cartesian_grid, make_sphere_grid
from curvedks.profiles import ScaledCauchyProfile


def test_spacing_forced_by_definition():
    g = make_cartesian_grid((0, 0), 1.0, 8)
    assert g.h == 0.25


def test_constant_integrates_to_square_area():
    g = make_cartesian_grid((0, 0), 5.0, 32)
    assert g.integrate(np.ones((32, 32))) == pytest.approx(100.0, rel=1e-14)


def test_cell_areas_sum_exactly():
    g = make_cartesian_grid((1.0, -2.0), 3.0, 16)
    assert g.cell_area * g.n**2 == pytest.approx((2 * 3.0) ** 2, rel=1e-14)


@pytest.mark.parametrize("bad", [7, 6, 9, 0, -8])
def test_rejects_odd_or_tiny_n(bad):
    with pytest.raises(ValueError):
        make_cartesian_grid((0, 0), 1.0, bad)


def test_rejects_nonpositive_half_width():
    with pytest.raises(ValueError):
        make_cartesian_grid((0, 0), 0.0, 16)


def test_unit_mass_profile_integral():
    # truncation tail of the unit-mass profile is lam^2/(pi R^2)-order;
    # at half_width 200 that is ~8e-6, far below the 1e-3 target
    g = make_cartesian_grid((0, 0), 200.0, 2048)
    mu = ScaledCauchyProfile(lam=1.0, normalization="mu")
    total = g.integrate(mu.on_grid(g))
    assert total == pytest.approx(1.0, abs=1e-3)


def test_midpoint_refinement_order_on_gaussian():
    # order-2 midpoint convergence: refining by 2x gains >= 3.5x on a Gaussian.
    # The square is cut where the Gaussian is still visible so the h^2
    # boundary terms dominate; the reference is the erf closed form.
    from scipy.special import erf
    exact = np.pi * erf(3.0) ** 2
    errs = []
    for n in [32, 64, 128]:
        g = make_cartesian_grid((0, 0), 3.0, n)
        X, Y = g.meshes()
        val = g.integrate(np.exp(-(X**2 + Y**2)))
        errs.append(abs(val - exact))
    assert errs[0] / errs[1] >= 3.5
    assert errs[1] / errs[2] >= 3.5


def test_grid_weights_positive():
    g = make_cartesian_grid((0, 0), 2.0, 16)
    assert g.cell_area > 0


def test_sphere_weights_sum_to_4pi():
    sg = make_sphere_grid(8, 16)
    assert sg.integrate(np.ones((8, 16))) == pytest.approx(4 * np.pi, rel=1e-12)


def test_sphere_odd_harmonic_integrates_to_zero():
    sg = make_sphere_grid(16, 32)
    T, _ = sg.meshes()
    assert abs(sg.integrate(np.sin(T))) <= 1e-12


def test_sphere_sin_squared():
    sg = make_sphere_grid(16, 32)
    T, _ = sg.meshes()
    assert sg.integrate(np.sin(T) ** 2) == pytest.approx(4 * np.pi / 3, abs=1e-10)


@pytest.mark.parametrize("n_lat,n_lon", [(3, 16), (8, 7), (8, 9)])
def test_sphere_rejects_undersized_or_odd(n_lat, n_lon):
    with pytest.raises(ValueError):
        make_sphere_grid(n_lat, n_lon)


def test_annulus_validation_and_mask():
    with pytest.raises(ValueError):
        AnnulusSpec(R=-1.0)
    with pytest.raises(ValueError):
        AnnulusSpec(R=1.0, ratio=0.5)
    g = make_cartesian_grid((0, 0), 10.0, 64)
    ann = AnnulusSpec(R=3.0)
    mask = ann.mask(g)
    r = g.radius()
    assert np.all(r[mask] >= 3.0) and np.all(r[mask] <= 6.0)
    with pytest.raises(ValueError):
        AnnulusSpec(R=6.0).mask(g)  # outer radius 12 leaves the grid

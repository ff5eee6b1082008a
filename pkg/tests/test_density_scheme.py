import numpy as np
import pytest

from hjjunction import density_scheme as ds
from hjjunction.hamiltonian import FundamentalDiagram
from hjjunction.hj_scheme import CFLViolation
from hjjunction.junction import DensityPiece, GridSpec, InitialData

from conftest import biparabolic_oracle, make_junction


def riemann_flux(f, rho_c, left, right):
    """Osher's formula for a concave flux: min over [l, r] or max over [r, l]."""
    if left <= right:
        return min(f(left), f(right))
    return f(rho_c) if right <= rho_c <= left else max(f(left), f(right))


def straight_road(rho, inflow, f, rho_c, lam, steps):
    """Plain Godunov on one road, upstream end fed at ``inflow``, free outflow."""
    rho = np.array(rho, dtype=float)
    for _ in range(steps):
        fl = [riemann_flux(f, rho_c, inflow, rho[0])]
        fl += [riemann_flux(f, rho_c, a, b) for a, b in zip(rho[:-1], rho[1:])]
        fl.append(f(rho[-1]))
        rho = rho + lam * (np.array(fl[:-1]) - np.array(fl[1:]))
    return rho


@pytest.mark.parametrize("seed", range(50))
def test_riemann_problems_against_straight_road(diagram, seed):
    rng = np.random.default_rng(seed)
    left, right = rng.uniform(0, 160, 2)
    j = make_junction(diagram, (1.0,), (1.0,), length_m=100)
    grid = GridSpec(5, 1)
    init = InitialData.uniform(j, [left, right])
    rho0, inflow = ds.initial_densities(j, grid, init)
    dt_h = 0.9 * grid.dx_km / 75.0
    rho = rho0
    for _ in range(30):
        rho, _ = ds.density_step(j, grid.dx_km, dt_h, rho, inflow)
    f = lambda r: float(biparabolic_oracle(r))
    want = straight_road(np.concatenate([rho0[0][::-1], rho0[1]]), left, f, 20.0, dt_h / grid.dx_km, 30)
    got = np.concatenate([rho[0][::-1], rho[1]])
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)


@pytest.mark.parametrize("left,right", [(15, 90), (90, 15), (30, 30), (0, 160), (160, 0)])
def test_godunov_flux_matches_osher(diagram, left, right):
    f = lambda r: float(biparabolic_oracle(r))
    assert ds.godunov_flux(diagram, left, right) == pytest.approx(riemann_flux(f, 20, left, right), abs=1e-9)


def test_junction_flux_values(table1):
    jf = ds.junction_flux(table1.junction, [15, 15], [30, 5])
    assert jf.F0 == pytest.approx(1687.5)
    np.testing.assert_allclose(jf.per_branch, 843.75)
    jf = ds.junction_flux(table1.junction, [90, 90], [90, 10])
    assert jf.F0 == pytest.approx(1250)


def test_fixed_run_history(table1_density):
    F0 = table1_density.junction_flux
    assert F0[0] == pytest.approx(1687.5)
    assert F0[-1] == pytest.approx(1250, abs=1)


def test_conservation(table1_density):
    mass = np.array(table1_density.mass)
    net = (np.array(table1_density.influx) - np.array(table1_density.outflux)) * table1_density.dt_s / 3600
    err = np.abs(np.diff(mass) - net) / mass.max()
    assert err.max() <= 1e-10


def test_physical_range(table1_density):
    cfl = table1_density.cfl
    lo = np.array(table1_density.rho_min)
    hi = np.array(table1_density.rho_max)
    assert np.all(lo >= np.array(cfl.rho_lo) - 1e-9)
    assert np.all(hi <= np.array(cfl.rho_hi) + 1e-9)
    np.testing.assert_allclose(cfl.rho_lo, 5.0)
    np.testing.assert_allclose(cfl.rho_hi, 125.0)
    assert cfl.dt_max_s == pytest.approx(0.288)


def test_equivalence_with_labels(table1_hj, table1_density):
    assert ds.verify_equivalence(table1_hj, table1_density) <= 1e-8


def test_equivalence_needs_same_grid(table1, table1_hj):
    rho0, inflow = ds.initial_densities(table1.junction, table1.grid, table1.initial)
    other = ds.run_density(table1.junction, GridSpec(5, 1, 0.1), rho0, inflow)
    with pytest.raises(ValueError):
        ds.verify_equivalence(table1_hj, other)


def test_cfl_violation(table1):
    rho0, inflow = ds.initial_densities(table1.junction, table1.grid, table1.initial)
    with pytest.raises(CFLViolation):
        ds.run_density(table1.junction, GridSpec(5, 10, 0.5), rho0, inflow)


def test_singleton_maximize_is_fixed(table1):
    rho0, inflow = ds.initial_densities(table1.junction, table1.grid, table1.initial)
    grid = GridSpec(5, 30, 0.2)
    fixed = ds.run_density(table1.junction, grid, rho0, inflow, snapshot_times=[30])
    pol = ds.GammaPolicy(ds.GammaMode.MAXIMIZE, candidates=(table1.junction.gammas,))
    maxed = ds.run_density(table1.junction, grid, rho0, inflow, pol, snapshot_times=[30])
    n = fixed.n_steps
    for a, b in zip(fixed.snapshots[n].values, maxed.snapshots[n].values):
        assert np.array_equal(a, b)


def test_maximize_never_below_fixed(table1):
    pol = ds.GammaPolicy(ds.GammaMode.MAXIMIZE, resolution=16)
    for up, down in [([15, 15], [30, 5]), ([15, 5], [90, 10]), ([60, 10], [120, 25])]:
        best = ds.junction_flux(table1.junction, up, down, pol)
        fixed = ds.junction_flux(table1.junction, up, down)
        assert best.F0 >= fixed.F0 - 1e-9
        assert sum(best.gamma_used[:2]) == pytest.approx(1)
        assert sum(best.per_branch[:2]) == pytest.approx(best.F0)


def test_tie_break_prefers_largest_first_share(table1):
    # symmetric demand: every split through equal capacities ties
    pol = ds.GammaPolicy(ds.GammaMode.MAXIMIZE, candidates=((0.25, 0.75, 0.5, 0.5), (0.75, 0.25, 0.5, 0.5)))
    jf = ds.junction_flux(table1.junction, [0, 0], [0, 0], pol)
    assert jf.gamma_used[0] == 0.75


def test_admissible_set(table1):
    pol = ds.GammaPolicy(ds.GammaMode.MAXIMIZE, resolution=4, lower_bounds=(0.5, 0.0, 0.0, 0.5))
    cands = pol.admissible_set(table1.junction)
    assert np.all(cands > 0)
    assert np.all(cands[:, 0] >= 0.5) and np.all(cands[:, 3] >= 0.5)
    np.testing.assert_allclose(cands[:, :2].sum(axis=1), 1)
    with pytest.raises(ValueError, match="empty"):
        ds.GammaPolicy(ds.GammaMode.MAXIMIZE, candidates=((0.0, 1.0, 0.5, 0.5),)).admissible_set(table1.junction)


def test_maximize_cfl_uses_full_range(table1):
    rho0, inflow = ds.initial_densities(table1.junction, table1.grid, table1.initial)
    cfl = ds.compute_cfl_density(table1.junction, 5, rho0, inflow, ds.GammaPolicy(ds.GammaMode.MAXIMIZE))
    assert cfl.dt_max_s == pytest.approx(0.005 / 75 * 3600)


def test_unaligned_pieces_conserve(diagram):
    j = make_junction(diagram, (0.3, 0.7), (0.4, 0.6), length_m=100)
    prof = (DensityPiece(0, 33.3, 40), DensityPiece(33.3, 100, 100))
    init = InitialData((prof,) * 4)
    grid = GridSpec(5, 5)
    rho0, inflow = ds.initial_densities(j, grid, init)
    run = ds.run_density(j, grid, rho0, inflow, record_every=1)
    net = (np.array(run.influx) - np.array(run.outflux)) * run.dt_s / 3600
    assert np.max(np.abs(np.diff(run.mass) - net)) <= 1e-10 * max(run.mass)


def test_piecewise_diagram_runs():
    d = FundamentalDiagram.piecewise([(0, 0), (25, 1500), (150, 0)])
    j = make_junction(d, (1.0,), (1.0,), length_m=50)
    init = InitialData.uniform(j, [20, 120])
    grid = GridSpec(5, 10)
    rho0, inflow = ds.initial_densities(j, grid, init)
    run = ds.run_density(j, grid, rho0, inflow, snapshot_times=[10])
    assert all(np.all((r >= 0) & (r <= 150)) for r in run.snapshots[run.n_steps].values)

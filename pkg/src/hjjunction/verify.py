"""Checks of the scheme's provable properties on concrete runs.

Used by the ``verify`` command and by the acceptance tests. Every check
returns plain numbers; callers decide what to assert.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import density_scheme as ds
from . import hj_scheme as hj
from .hamiltonian import FundamentalDiagram, Orientation
from .junction import Branch, DensityPiece, GridSpec, InitialData, JunctionSpec, S_PER_H

MONO_TOL = 1e-12
BRACKET_TOL = 1e-9


def random_gammas(rng: np.random.Generator, n: int) -> list[float]:
    if n == 1:
        return [1.0]
    g = rng.dirichlet(np.full(n, 2.0))
    g = np.maximum(g, 0.05)
    g /= g.sum()
    g = [float(x) for x in g]
    g[-1] = 1.0 - sum(g[:-1])
    return g


def random_diagram(rng: np.random.Generator) -> FundamentalDiagram:
    rho_c = float(rng.uniform(15, 40))
    return FundamentalDiagram.biparabolic(
        rho_c, float(rng.uniform(rho_c + 60, 220)), float(rng.uniform(800, 2500)), float(rng.uniform(0.5, 2.0))
    )


def random_profile(rng: np.random.Generator, rho_max: float, n_cells: int, dx_m: float,
                   max_pieces: int = 3) -> tuple[DensityPiece, ...]:
    k = int(rng.integers(1, max_pieces + 1))
    cuts = sorted(rng.choice(np.arange(1, n_cells), size=k - 1, replace=False)) if k > 1 else []
    edges = [0] + [int(c) for c in cuts] + [n_cells]
    return tuple(
        DensityPiece(a * dx_m, b * dx_m, float(rng.uniform(0, rho_max)))
        for a, b in zip(edges, edges[1:])
    )


def random_scenario(rng: np.random.Generator, *, n_in: int | None = None, n_out: int | None = None,
                    length_m: float = 200.0, dx_m: float = 5.0, horizon_s: float = 60.0):
    """A random physical junction with grid-aligned piecewise-constant densities."""
    n_in = n_in or int(rng.integers(1, 4))
    n_out = n_out or int(rng.integers(1, 4))
    branches = []
    for orient, n in ((Orientation.INCOMING, n_in), (Orientation.OUTGOING, n_out)):
        for g in random_gammas(rng, n):
            branches.append(Branch(random_diagram(rng), g, orient, length_m, str(len(branches) + 1)))
    junction = JunctionSpec(tuple(branches))
    grid = GridSpec(dx_m, horizon_s)
    n_cells = grid.n_cells(branches[0])
    init = InitialData(tuple(random_profile(rng, b.diagram.rho_max, n_cells, dx_m) for b in branches))
    return junction, grid, init


def grid_for_steps(junction: JunctionSpec, grid: GridSpec, init: InitialData, n_steps: int) -> GridSpec:
    """Grid with the automatic step and a horizon of exactly ``n_steps`` steps."""
    labels0, ghosts = hj.initial_state(junction, grid, init)
    cfl = hj.compute_cfl_restrictive(junction, grid.with_dt(None), labels0, ghosts)
    dt = hj.resolve_dt(cfl, grid.dt_s)
    return GridSpec(grid.dx_m, n_steps * dt, dt)


@dataclass
class PairedRun:
    hj: hj.HJRun
    density: ds.DensityRun
    discrepancy: float


def paired_runs(junction: JunctionSpec, grid: GridSpec, init: InitialData, *, strict: bool = True) -> PairedRun:
    """Label run and direct density run on the same grid, every step recorded."""
    labels0, ghosts = hj.initial_state(junction, grid, init)
    run = hj.run(junction, grid, labels0, ghosts, record_every=1, strict=strict)
    rho0, inflow = ds.initial_densities(junction, grid, init)
    dens = ds.run_density(junction, run.grid, rho0, inflow, record_every=1)
    return PairedRun(run, dens, ds.verify_equivalence(run, dens))


def conservation_defect(run: ds.DensityRun) -> float:
    """Worst per-step ``|d(mass) - dt * (in - out)|`` relative to the largest mass."""
    mass = np.array(run.mass)
    net = (np.array(run.influx) - np.array(run.outflux)) * run.dt_s / S_PER_H
    scale = max(float(np.max(np.abs(mass))), 1.0)
    if len(net) == 0:
        return 0.0
    return float(np.max(np.abs(np.diff(mass) - net))) / scale


def hj_conservation_defect(run: hj.HJRun) -> float:
    """Same balance computed from labels: mass of each branch is a label difference."""
    from .junction import densities_from_labels

    steps = sorted(run.snapshots)
    masses = []
    for n in steps:
        rho = densities_from_labels(run.junction, run.grid, run.snapshots[n].values)
        masses.append(sum(float(np.sum(r)) for r in rho) * run.grid.dx_km)
    return float(np.max(np.abs(np.diff(masses)))) if len(masses) > 1 else 0.0


@dataclass(frozen=True)
class BracketCheck:
    m00: float
    m0: float
    M0: float
    M00: float
    p_lo0: tuple[float, ...]
    p_lo: tuple[float, ...]
    p_hi: tuple[float, ...]
    p_hi0: tuple[float, ...]

    @property
    def ok(self) -> bool:
        tol = BRACKET_TOL * max(1.0, abs(self.m0), abs(self.M0))
        if not (self.m00 <= self.m0 + tol and self.M0 <= self.M00 + tol):
            return False
        for lo0, lo, hi, hi0 in zip(self.p_lo0, self.p_lo, self.p_hi, self.p_hi0):
            ptol = BRACKET_TOL * max(1.0, abs(lo0), abs(hi0))
            if not (lo0 <= lo + ptol and lo <= hi + ptol and hi <= hi0 + ptol):
                return False
        return True


def bracket_check(junction: JunctionSpec, grid: GridSpec, init: InitialData) -> BracketCheck:
    labels0, ghosts = hj.initial_state(junction, grid, init)
    cfl = hj.compute_cfl_restrictive(junction, grid.with_dt(None), labels0, ghosts)
    cb = hj.continuous_bounds(junction, init)
    return BracketCheck(cb.m00, cfl.m0, cfl.M0, cb.M00, cb.p_lo0, cfl.p_lo, cfl.p_hi, cb.p_hi0)


@dataclass(frozen=True)
class MonotonicityResult:
    pairs: int
    steps: int
    violations: int
    boundary_layer_violations: int
    worst_excess: float


def ordered_label_pair(rng: np.random.Generator, junction: JunctionSpec, grid: GridSpec):
    """Two label fields ``U <= V`` built from independent random densities.

    ``U`` is shifted down by a constant until it touches ``V``, which keeps
    the junction point single-valued.
    """
    n_cells = [grid.n_cells(b) for b in junction.branches]
    fields = []
    for _ in range(2):
        init = InitialData(tuple(
            random_profile(rng, b.diagram.rho_max, n, grid.dx_m, max_pieces=6)
            for b, n in zip(junction.branches, n_cells)
        ))
        fields.append(hj.initial_state(junction, grid, init))
    (u, gu), (v, gv) = fields
    shift = min(float(np.min(b - a)) for a, b in zip(u, v))
    u = [a + shift for a in u]
    return (u, gu), (v, gv)


def monotonicity_trials(rng: np.random.Generator, *, pairs: int = 200, steps: int = 100,
                        length_m: float = 1000.0, dx_m: float = 5.0,
                        junction: JunctionSpec | None = None) -> MonotonicityResult:
    """Order preservation for random ordered pairs on 2-in/2-out junctions.

    The truncated branches end in a boundary closure that is not part of the
    half-line scheme, so at step ``n`` only points ``i <= N_b - n`` (outside
    the closure's domain of influence) are held to the order. Violations
    inside that boundary layer are counted separately for information.

    With ``junction`` given, its branches (and their lengths) are reused for
    every pair instead of drawing a random 2-in/2-out junction.
    """
    violations = layer = 0
    worst = 0.0
    fixed = junction
    for _ in range(pairs):
        if fixed is None:
            junction, grid, _ = random_scenario(rng, n_in=2, n_out=2, length_m=length_m, dx_m=dx_m)
        else:
            junction, grid = fixed, GridSpec(dx_m, 0.0)
        (u0, gu), (v0, gv) = ordered_label_pair(rng, junction, grid)
        g0 = grid.with_dt(None)
        dt = hj.AUTO_DT_FACTOR * min(
            hj.compute_cfl_restrictive(junction, g0, u0, gu).dt_max_s,
            hj.compute_cfl_restrictive(junction, g0, v0, gv).dt_max_s,
        )
        g = GridSpec(dx_m, steps * dt, dt)
        ru = hj.run(junction, g, u0, gu, record_every=1, strict=False)
        rv = hj.run(junction, g, v0, gv, record_every=1, strict=False)
        for n in range(ru.n_steps + 1):
            for a, b in zip(ru.snapshots[n].values, rv.snapshots[n].values):
                excess = a - b - MONO_TOL * np.maximum(1.0, np.abs(b))
                nb = len(a) - 1
                inner = excess[: max(nb - n + 1, 0)]
                bad = int(np.count_nonzero(inner > 0))
                violations += bad
                layer += int(np.count_nonzero(excess[max(nb - n + 1, 0):] > 0))
                if bad:
                    worst = max(worst, float(np.max(inner)))
    return MonotonicityResult(pairs, steps, violations, layer, worst)


@dataclass(frozen=True)
class EstimateCheck:
    m_nondecreasing: bool
    M_nonincreasing: bool
    gradients_in_bounds: bool
    worst_m_drop: float
    worst_M_rise: float
    worst_gradient_excess: float


def estimate_check(run: hj.HJRun) -> EstimateCheck:
    """Re-examine a finished run's estimate history (independent of the live tripwire)."""
    tr = run.tracker
    m = np.array([tr.m0] + tr.m_hist)
    M = np.array([tr.M0] + tr.M_hist)
    tol = hj.RATE_TOL * max(1.0, abs(tr.m0), abs(tr.M0))
    drop = float(np.max(m[:-1] - m[1:])) if len(m) > 1 else 0.0
    rise = float(np.max(M[1:] - M[:-1])) if len(M) > 1 else 0.0
    lo = np.array(tr.grad_min) - np.array(tr.p_lo)
    hi = np.array(tr.p_hi) - np.array(tr.grad_max)
    excess = float(max(-lo.min(), -hi.min()))
    return EstimateCheck(drop <= tol, rise <= tol, excess <= hj.GRAD_TOL, drop, rise, excess)

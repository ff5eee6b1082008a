"""Godunov scheme for the road densities, derived from the label scheme.

Cell storage follows :mod:`hjjunction.junction`: index 0 is the cell touching
the junction on every branch. Vehicles move from high to low index on
incoming branches and from low to high index on outgoing ones.
"""
from __future__ import annotations

import enum
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import FundamentalDiagram, Orientation
from .hj_scheme import (
    CFLViolation,
    HJRun,
    ScenarioRejected,
    count_steps,
    resolve_dt,
    snapshot_steps,
)
from .junction import (
    GridSpec,
    InitialData,
    JunctionSpec,
    S_PER_H,
    densities_from_labels,
    inflow_densities,
    labels_from_densities,
)

SIMPLEX_RESOLUTION = 64
TIE_RTOL = 1e-12


class GammaMode(enum.Enum):
    FIXED = "fixed"
    MAXIMIZE = "maximize"


@dataclass(frozen=True)
class GammaPolicy:
    """How the junction split coefficients are chosen at each step.

    In ``MAXIMIZE`` mode the admissible set is either an explicit list of
    candidate vectors (``candidates``) or, when that is empty, the product
    of the incoming and outgoing simplices sampled at ``1/resolution``,
    restricted by the optional per-branch ``lower_bounds``. Ties in the
    junction flux go to the lexicographically largest candidate.
    """

    mode: GammaMode = GammaMode.FIXED
    candidates: tuple[tuple[float, ...], ...] = ()
    lower_bounds: tuple[float, ...] = ()
    resolution: int = SIMPLEX_RESOLUTION

    def admissible_set(self, junction: JunctionSpec) -> np.ndarray:
        if self.mode is GammaMode.FIXED:
            return np.array([junction.gammas])
        if self.candidates:
            cands = np.array(self.candidates, dtype=float)
            if cands.shape[1] != junction.n:
                raise ValueError(f"gamma candidates need {junction.n} entries")
        else:
            cands = _simplex_product(junction.n_in, junction.n_out, self.resolution)
        # zero shares make (1/gamma) f undefined
        cands = cands[np.all(cands > 0, axis=1)]
        if self.lower_bounds:
            cands = cands[np.all(cands >= np.array(self.lower_bounds) - 1e-15, axis=1)]
        if len(cands) == 0:
            raise ValueError("admissible gamma set is empty")
        return cands


def _simplex(n: int, res: int) -> np.ndarray:
    if n == 1:
        return np.ones((1, 1))
    pts = [c for c in itertools.product(range(1, res), repeat=n - 1) if sum(c) < res]
    pts = np.array(pts, dtype=float)
    return np.column_stack([pts, res - pts.sum(axis=1)]) / res


def _simplex_product(n_in: int, n_out: int, res: int) -> np.ndarray:
    a, b = _simplex(n_in, res), _simplex(n_out, res)
    return np.column_stack([np.repeat(a, len(b), axis=0), np.tile(b, (len(a), 1))])


@dataclass
class DensityField:
    values: list[np.ndarray]
    step: int
    time_s: float


def godunov_flux(d: FundamentalDiagram, rho_left, rho_right):
    """Interface flow ``min(demand upstream, supply downstream)``."""
    out = np.minimum(d.demand(rho_left), d.supply(rho_right))
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class JunctionFlux:
    F0: float
    per_branch: tuple[float, ...]
    gamma_used: tuple[float, ...]


def _f0(junction: JunctionSpec, upstream, downstream, gammas: np.ndarray) -> np.ndarray:
    """Junction flux for each row of ``gammas``."""
    capacities = [junction.branches[a].diagram.demand(upstream[k]) for k, a in enumerate(junction.incoming)]
    capacities += [junction.branches[a].diagram.supply(downstream[k]) for k, a in enumerate(junction.outgoing)]
    caps = np.array(capacities, dtype=float)
    return np.min(caps / gammas, axis=1)


def junction_flux(junction: JunctionSpec, upstream, downstream,
                  policy: GammaPolicy = GammaPolicy()) -> JunctionFlux:
    """Passing flux at the junction.

    ``upstream`` holds the densities of the incoming cells touching the
    junction, ``downstream`` those of the outgoing ones.
    """
    cands = policy.admissible_set(junction)
    f0 = _f0(junction, upstream, downstream, cands)
    if len(cands) == 1:
        best = 0
    else:
        top = f0.max()
        ties = np.flatnonzero(f0 >= top - TIE_RTOL * max(1.0, abs(top)))
        # lexicographic priority: largest gamma^1, then gamma^2, ...
        best = max(ties, key=lambda j: tuple(cands[j]))
    g = cands[best]
    F0 = float(f0[best])
    return JunctionFlux(F0, tuple(float(x) * F0 for x in g), tuple(float(x) for x in g))


@dataclass
class StepFluxes:
    junction: JunctionFlux
    influx: float
    outflux: float
    rate_min: float
    rate_max: float


def density_step(junction: JunctionSpec, dx_km: float, dt_h: float, rho, inflow,
                 policy: GammaPolicy = GammaPolicy()) -> tuple[list[np.ndarray], StepFluxes]:
    """One conservative update of all branches.

    ``inflow`` gives the fixed upstream density feeding each incoming
    branch (``None`` on outgoing ones). Outgoing branches release
    ``min(demand, supply)`` of their last cell.
    """
    up = [rho[a][0] for a in junction.incoming]
    down = [rho[a][0] for a in junction.outgoing]
    jf = junction_flux(junction, up, down, policy)
    lam = dt_h / dx_km
    out = []
    influx = outflux = 0.0
    rate_min, rate_max = math.inf, -math.inf
    for a, (b, r) in enumerate(zip(junction.branches, rho)):
        d = b.diagram
        if b.orientation is Orientation.INCOMING:
            # flux[j] enters cell j from cell j+1; flux[N] comes from outside
            inner = godunov_flux(d, r[1:], r[:-1])
            f_in = godunov_flux(d, inflow[a], r[-1])
            into = np.append(inner, f_in)
            leave = np.concatenate(([jf.per_branch[a]], inner))
            influx += f_in
        else:
            inner = godunov_flux(d, r[:-1], r[1:])
            f_out = godunov_flux(d, r[-1], r[-1])
            into = np.concatenate(([jf.per_branch[a]], inner))
            leave = np.append(inner, f_out)
            outflux += f_out
        out.append(r + lam * (into - leave))
        # label time derivative at each point = interface flux / gamma
        g = jf.gamma_used[a]
        rate_min = min(rate_min, float(min(into.min(), leave.min())) / g)
        rate_max = max(rate_max, float(max(into.max(), leave.max())) / g)
    return out, StepFluxes(jf, float(influx), float(outflux), rate_min, rate_max)


@dataclass(frozen=True)
class DensityCFL:
    m0: float
    rho_lo: tuple[float, ...]
    rho_hi: tuple[float, ...]
    speeds: tuple[float, ...]
    dt_max_s: float
    binding_branch: int


def compute_cfl_density(junction: JunctionSpec, dx_m: float, rho0, inflow,
                        policy: GammaPolicy = GammaPolicy()) -> DensityCFL:
    """Step limit written for densities.

    With fixed split coefficients, ``m0`` is the smallest initial
    interface flux divided by its branch coefficient, and the densities
    stay inside ``[rho^-, rho^+]``. Under ``MAXIMIZE`` the coefficients
    change at every step, so the full physical range ``[0, rho_max]`` is
    used instead.
    """
    branches = junction.branches
    if policy.mode is GammaMode.FIXED:
        up = [rho0[a][0] for a in junction.incoming]
        down = [rho0[a][0] for a in junction.outgoing]
        rates = [junction_flux(junction, up, down).F0]
        for a, (b, r) in enumerate(zip(branches, rho0)):
            d = b.diagram
            if b.orientation is Orientation.INCOMING:
                fl = np.append(godunov_flux(d, r[1:], r[:-1]), godunov_flux(d, inflow[a], r[-1]))
            else:
                fl = np.append(godunov_flux(d, r[:-1], r[1:]), godunov_flux(d, r[-1], r[-1]))
            rates.append(float(np.min(fl)) / b.gamma)
        m0 = min(rates)
        rho_lo = tuple(b.diagram.inverse_demand(b.gamma * m0) for b in branches)
        rho_hi = tuple(b.diagram.inverse_supply(b.gamma * m0) for b in branches)
    else:
        m0 = math.nan
        rho_lo = tuple(0.0 for _ in branches)
        rho_hi = tuple(b.diagram.rho_max for b in branches)
    speeds = tuple(b.diagram.max_abs_slope(lo, hi) for b, lo, hi in zip(branches, rho_lo, rho_hi))
    binding = max(range(len(speeds)), key=lambda a: speeds[a])
    dt_max_s = dx_m / 1000.0 / speeds[binding] * S_PER_H if speeds[binding] > 0 else math.inf
    return DensityCFL(m0, rho_lo, rho_hi, speeds, dt_max_s, binding)


@dataclass
class DensityRun:
    junction: JunctionSpec
    grid: GridSpec
    cfl: DensityCFL
    snapshots: dict[int, DensityField]
    n_steps: int
    mass: list[float] = field(default_factory=list)
    influx: list[float] = field(default_factory=list)
    outflux: list[float] = field(default_factory=list)
    junction_flux: list[float] = field(default_factory=list)
    gammas: list[tuple[float, ...]] = field(default_factory=list)
    rate_min: list[float] = field(default_factory=list)
    rate_max: list[float] = field(default_factory=list)
    rho_min: list[tuple[float, ...]] = field(default_factory=list)
    rho_max: list[tuple[float, ...]] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def dt_s(self) -> float:
        return self.grid.dt_s


def total_vehicles(junction: JunctionSpec, dx_km: float, rho) -> float:
    return math.fsum(float(np.sum(r)) * dx_km for r in rho)


def run_density(junction: JunctionSpec, grid: GridSpec, rho0, inflow,
                policy: GammaPolicy = GammaPolicy(), *, snapshot_times=(),
                record_every: int | None = None) -> DensityRun:
    """Advance the density scheme to the grid horizon, recording fluxes and mass."""
    t_start = time.perf_counter()
    cfl = compute_cfl_density(junction, grid.dx_m, rho0, inflow, policy)
    if grid.dt_s is not None and grid.dt_s > cfl.dt_max_s:
        raise CFLViolation(
            f"dt={grid.dt_s:g} s exceeds the density CFL limit {cfl.dt_max_s:.6g} s "
            f"(binding branch {junction.branches[cfl.binding_branch].name or cfl.binding_branch})",
            branch=cfl.binding_branch,
        )
    dt_s = resolve_dt(cfl, grid.dt_s)
    grid = grid.with_dt(dt_s)
    dt_h, dx_km = dt_s / S_PER_H, grid.dx_km
    n_steps = count_steps(grid.horizon_s, dt_s)
    keep = snapshot_steps(snapshot_times, dt_s, n_steps)
    if record_every:
        keep.update(range(0, n_steps + 1, record_every))
    res = DensityRun(junction, grid, cfl, {}, n_steps)
    rho = [np.array(r, dtype=float) for r in rho0]
    for n in range(n_steps + 1):
        if n in keep:
            res.snapshots[n] = DensityField([r.copy() for r in rho], n, n * dt_s)
        res.mass.append(total_vehicles(junction, dx_km, rho))
        res.rho_min.append(tuple(float(r.min()) for r in rho))
        res.rho_max.append(tuple(float(r.max()) for r in rho))
        if n == n_steps:
            break
        rho, fl = density_step(junction, dx_km, dt_h, rho, inflow, policy)
        res.influx.append(fl.influx)
        res.outflux.append(fl.outflux)
        res.junction_flux.append(fl.junction.F0)
        res.gammas.append(fl.junction.gamma_used)
        res.rate_min.append(fl.rate_min)
        res.rate_max.append(fl.rate_max)
    res.wall_time_s = time.perf_counter() - t_start
    return res


def initial_densities(junction: JunctionSpec, grid: GridSpec, init: InitialData):
    """Cell averages of the initial profile and the fixed upstream densities."""
    rho0 = densities_from_labels(junction, grid, labels_from_densities(junction, grid, init))
    return rho0, inflow_densities(junction, grid, init)


def verify_equivalence(hj: HJRun, dens: DensityRun) -> float:
    """Largest ``|rho(labels) - rho(direct)|`` over the snapshots both runs kept."""
    if hj.grid.dx_m != dens.grid.dx_m or hj.grid.dt_s != dens.grid.dt_s:
        raise ValueError("runs use different grids")
    common = sorted(set(hj.snapshots) & set(dens.snapshots))
    if not common:
        raise ValueError("runs share no snapshot steps")
    worst = 0.0
    for n in common:
        derived = densities_from_labels(hj.junction, hj.grid, hj.snapshots[n].values)
        for a, b in zip(derived, dens.snapshots[n].values):
            if a.shape != b.shape:
                raise ValueError("runs use different grids")
            worst = max(worst, float(np.max(np.abs(a - b))))
    return worst

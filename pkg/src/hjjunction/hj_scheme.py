"""Monotone finite-difference scheme for HJ equations on a junction.

Time is carried in hours and space in kilometres inside the stepper so that
rates come out in labels/h; the public inputs (``GridSpec``) are in seconds
and metres.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import BranchHamiltonian, Orientation
from .junction import (
    GridSpec,
    InitialData,
    JunctionSpec,
    S_PER_H,
    inflow_densities,
    labels_from_densities,
)

log = logging.getLogger(__name__)

AUTO_DT_FACTOR = 0.95
RATE_TOL = 1e-9
GRAD_TOL = 1e-9


class CFLViolation(ValueError):
    def __init__(self, message: str, branch: int | None = None):
        super().__init__(message)
        self.branch = branch


class EstimateViolation(AssertionError):
    pass


class ScenarioRejected(ValueError):
    pass


@dataclass
class LabelField:
    values: list[np.ndarray]
    step: int
    time_s: float

    def copy(self) -> "LabelField":
        return LabelField([v.copy() for v in self.values], self.step, self.time_s)


# -- local operators ---------------------------------------------------------

def discrete_gradients(u: np.ndarray, i: int, dx_km: float) -> tuple[float | None, float | None]:
    """``(p_-, p_+)`` at point ``i``; a side that leaves the grid is ``None``."""
    nb = len(u) - 1
    if not 0 <= i <= nb:
        raise IndexError(f"point {i} outside 0..{nb}")
    p_minus = (u[i] - u[i - 1]) / dx_km if i >= 1 else None
    p_plus = (u[i + 1] - u[i]) / dx_km if i < nb else None
    return p_minus, p_plus


def _rate(h: BranchHamiltonian, p_minus, p_plus):
    return -np.maximum(h.H_plus(p_minus), h.H_minus(p_plus))


def step_interior(h: BranchHamiltonian, u: np.ndarray, dx_km: float, dt_h: float) -> np.ndarray:
    """Updated values at the interior points ``1..N_b-1``."""
    p = np.diff(u) / dx_km
    return u[1:-1] + dt_h * _rate(h, p[:-1], p[1:])


def junction_rate(junction: JunctionSpec, labels, dx_km: float) -> float:
    """``-max_b H^-_b(p^b_{0,+})``: the label passing rate at the junction."""
    return -max(
        float(h.H_minus((u[1] - u[0]) / dx_km))
        for h, u in zip(junction.hamiltonians, labels)
    )


def step_junction(junction: JunctionSpec, labels, dx_km: float, dt_h: float) -> float:
    u0 = labels[0][0]
    if any(u[0] != u0 for u in labels):
        raise ValueError("labels disagree at the junction point")
    return u0 + dt_h * junction_rate(junction, labels, dx_km)


def boundary_rate(h: BranchHamiltonian, u: np.ndarray, dx_km: float, ghost: float | None) -> float:
    p_minus = (u[-1] - u[-2]) / dx_km
    p_plus = p_minus if ghost is None else ghost
    return float(_rate(h, p_minus, p_plus))


def apply_boundary(h: BranchHamiltonian, u: np.ndarray, dx_km: float, dt_h: float,
                   ghost: float | None) -> float:
    """Update of the last point ``N_b``.

    ``ghost`` is the frozen outer gradient of an incoming branch (its inflow
    density over gamma); ``None`` selects the free-outflow closure
    ``p_+ = p_-`` used on outgoing branches.
    """
    return u[-1] + dt_h * boundary_rate(h, u, dx_km, ghost)


def node_rates(junction: JunctionSpec, labels, dx_km: float, ghosts) -> list[np.ndarray]:
    """Discrete time derivatives ``W_i`` at every point of every branch."""
    w0 = junction_rate(junction, labels, dx_km)
    out = []
    for h, u, g in zip(junction.hamiltonians, labels, ghosts):
        p = np.diff(u) / dx_km
        p_plus = np.append(p, p[-1] if g is None else g)
        w = np.empty_like(u)
        w[0] = w0
        w[1:] = _rate(h, p, p_plus[1:])
        out.append(w)
    return out


def ghost_gradients(junction: JunctionSpec, inflow) -> list[float | None]:
    return [
        b.sign * r / b.gamma if b.orientation is Orientation.INCOMING else None
        for b, r in zip(junction.branches, inflow)
    ]


def initial_state(junction: JunctionSpec, grid: GridSpec, init: InitialData):
    """Initial labels and the boundary ghost gradients they imply."""
    labels = labels_from_densities(junction, grid, init)
    return labels, ghost_gradients(junction, inflow_densities(junction, grid, init))


# -- a priori bounds and CFL --------------------------------------------------

@dataclass(frozen=True)
class CFLReport:
    m0: float
    M0: float
    p_lo: tuple[float, ...]
    p_hi: tuple[float, ...]
    speeds: tuple[float, ...]
    dt_max_s: float
    binding_branch: int


def compute_cfl_restrictive(junction: JunctionSpec, grid: GridSpec, labels0, ghosts) -> CFLReport:
    """Bounds from one dry application of the scheme and the resulting step limit.

    Raises :class:`CFLViolation` when ``grid.dt_s`` exceeds the limit.
    """
    w = node_rates(junction, labels0, grid.dx_km, ghosts)
    m0 = min(float(np.min(x)) for x in w)
    M0 = max(float(np.max(x)) for x in w)
    if not (math.isfinite(m0) and math.isfinite(M0)):
        raise ScenarioRejected("initial time derivative is unbounded")
    hams = junction.hamiltonians
    p_lo = tuple(h.inverse_H_minus(-m0) for h in hams)
    p_hi = tuple(h.inverse_H_plus(-m0) for h in hams)
    speeds = tuple(h.lipschitz_bound(lo, hi) for h, lo, hi in zip(hams, p_lo, p_hi))
    binding = max(range(len(speeds)), key=lambda a: speeds[a])
    vmax = speeds[binding]
    dt_max_s = math.inf if vmax == 0 else grid.dx_km / vmax * S_PER_H
    report = CFLReport(m0, M0, p_lo, p_hi, speeds, dt_max_s, binding)
    if grid.dt_s is not None:
        check_dt(junction, report, grid.dt_s)
    return report


def check_dt(junction: JunctionSpec, report: CFLReport, dt_s: float):
    if dt_s > report.dt_max_s:
        b = report.binding_branch
        raise CFLViolation(
            f"dt={dt_s:g} s exceeds the CFL limit {report.dt_max_s:.6g} s "
            f"(binding branch {junction.branches[b].name or b}, speed {report.speeds[b]:.6g} km/h)",
            branch=b,
        )


def resolve_dt(report: CFLReport, dt_s: float | None) -> float:
    return AUTO_DT_FACTOR * report.dt_max_s if dt_s is None else dt_s


@dataclass(frozen=True)
class ContinuousBounds:
    L_minus: tuple[float, ...]
    L_plus: tuple[float, ...]
    m00: float
    M00: float
    p_lo0: tuple[float, ...]
    p_hi0: tuple[float, ...]


def continuous_bounds(junction: JunctionSpec, init: InitialData) -> ContinuousBounds:
    """Grid-independent bounds built from the best Lipschitz constants of ``u0``.

    For piecewise-constant densities the best constants are the extreme
    gradients ``s * rho / gamma`` over the profile.
    """
    hams = junction.hamiltonians
    L_minus, L_plus = [], []
    for b, prof in zip(junction.branches, init.profiles):
        grads = [b.sign * q.rho / b.gamma for q in prof]
        L_minus.append(min(grads))
        L_plus.append(max(grads))
    # -H is unimodal, so its infimum over an interval sits at an endpoint
    m00 = min(min(-float(h.H(lo)), -float(h.H(hi))) for h, lo, hi in zip(hams, L_minus, L_plus))
    per_branch = max(
        min(-float(h.H_minus(hi)), -float(h.H_plus(lo)))
        for h, lo, hi in zip(hams, L_minus, L_plus)
    )
    at_junction = min(-float(h.H_minus(hi)) for h, hi in zip(hams, L_plus))
    M00 = max(per_branch, at_junction)
    p_lo0 = tuple(h.inverse_H_minus(-m00) for h in hams)
    p_hi0 = tuple(h.inverse_H_plus(-m00) for h in hams)
    return ContinuousBounds(tuple(L_minus), tuple(L_plus), m00, M00, p_lo0, p_hi0)


# -- running estimates ----------------------------------------------------------

@dataclass
class EstimateTracker:
    """Running extrema of the time derivative and per-branch gradient ranges."""

    m0: float
    M0: float
    p_lo: tuple[float, ...]
    p_hi: tuple[float, ...]
    strict: bool = True
    m_hist: list[float] = field(default_factory=list)
    M_hist: list[float] = field(default_factory=list)
    grad_min: list[tuple[float, ...]] = field(default_factory=list)
    grad_max: list[tuple[float, ...]] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    @property
    def rate_tol(self) -> float:
        return RATE_TOL * max(1.0, abs(self.m0), abs(self.M0))

    @property
    def m(self) -> float:
        return self.m_hist[-1] if self.m_hist else self.m0

    @property
    def M(self) -> float:
        return self.M_hist[-1] if self.M_hist else self.M0

    def _fail(self, msg: str):
        self.violations.append(msg)
        if self.strict:
            raise EstimateViolation(msg)
        log.warning(msg)

    def observe_gradients(self, step: int, labels, dx_km: float):
        lo, hi = [], []
        for a, u in enumerate(labels):
            p = np.diff(u) / dx_km
            i_lo, i_hi = int(np.argmin(p)), int(np.argmax(p))
            lo.append(float(p[i_lo]))
            hi.append(float(p[i_hi]))
            if p[i_lo] < self.p_lo[a] - GRAD_TOL:
                self._fail(f"step {step}, branch {a}, index {i_lo}: gradient {p[i_lo]!r} < lower bound {self.p_lo[a]!r}")
            if p[i_hi] > self.p_hi[a] + GRAD_TOL:
                self._fail(f"step {step}, branch {a}, index {i_hi}: gradient {p[i_hi]!r} > upper bound {self.p_hi[a]!r}")
        self.grad_min.append(tuple(lo))
        self.grad_max.append(tuple(hi))

    def observe_rates(self, step: int, rates):
        m = min(float(np.min(w)) for w in rates)
        M = max(float(np.max(w)) for w in rates)
        tol = self.rate_tol
        if m < self.m - tol:
            a = min(range(len(rates)), key=lambda b: np.min(rates[b]))
            self._fail(f"step {step}, branch {a}, index {int(np.argmin(rates[a]))}: m^n decreased {self.m!r} -> {m!r}")
        if M > self.M + tol:
            a = max(range(len(rates)), key=lambda b: np.max(rates[b]))
            self._fail(f"step {step}, branch {a}, index {int(np.argmax(rates[a]))}: M^n increased {self.M!r} -> {M!r}")
        self.m_hist.append(m)
        self.M_hist.append(M)


# -- driver -------------------------------------------------------------------------

@dataclass
class HJRun:
    junction: JunctionSpec
    grid: GridSpec
    cfl: CFLReport
    tracker: EstimateTracker
    snapshots: dict[int, LabelField]
    n_steps: int
    wall_time_s: float

    @property
    def dt_s(self) -> float:
        return self.grid.dt_s

    def snapshot_at(self, t_s: float) -> LabelField:
        return self.snapshots[nearest_step(t_s, self.dt_s, self.n_steps)]


def nearest_step(t_s: float, dt_s: float, n_steps: int) -> int:
    return min(max(int(round(t_s / dt_s)), 0), n_steps)


def snapshot_steps(times, dt_s: float, n_steps: int, bracket: bool = False) -> set[int]:
    steps = set()
    for t in times:
        steps.add(nearest_step(t, dt_s, n_steps))
        if bracket:
            lo = min(int(math.floor(t / dt_s + 1e-9)), n_steps)
            steps.update({lo, min(lo + 1, n_steps)})
    return steps


def count_steps(horizon_s: float, dt_s: float) -> int:
    return int(math.floor(horizon_s / dt_s + 1e-9))


def run(junction: JunctionSpec, grid: GridSpec, labels0, ghosts, *, snapshot_times=(),
        record_every: int | None = None, bracket: bool = False, strict: bool = True) -> HJRun:
    """Advance the scheme from ``labels0`` to the grid horizon.

    Snapshots are kept at the steps nearest to ``snapshot_times`` (plus the
    two steps bracketing each time when ``bracket``), and every
    ``record_every`` steps if given. The time-derivative and gradient estimates are checked
    after every step; with ``strict`` a violation raises
    :class:`EstimateViolation`.
    """
    t_start = time.perf_counter()
    for b, u in zip(junction.branches, labels0):
        if len(u) < 3:
            raise ScenarioRejected(f"branch {b.name!r} needs at least two segments")
    cfl = compute_cfl_restrictive(junction, grid, labels0, ghosts)
    dt_s = resolve_dt(cfl, grid.dt_s)
    grid = grid.with_dt(dt_s)
    dt_h, dx_km = dt_s / S_PER_H, grid.dx_km
    n_steps = count_steps(grid.horizon_s, dt_s)
    keep = snapshot_steps(snapshot_times, dt_s, n_steps, bracket)
    if record_every:
        keep.update(range(0, n_steps + 1, record_every))

    tracker = EstimateTracker(cfl.m0, cfl.M0, cfl.p_lo, cfl.p_hi, strict=strict)
    u = [np.array(x, dtype=float) for x in labels0]
    snaps: dict[int, LabelField] = {}
    for n in range(n_steps + 1):
        if n in keep:
            snaps[n] = LabelField([x.copy() for x in u], n, n * dt_s)
        tracker.observe_gradients(n, u, dx_km)
        if n == n_steps:
            break
        w = node_rates(junction, u, dx_km, ghosts)
        tracker.observe_rates(n, w)
        u = [x + dt_h * y for x, y in zip(u, w)]
        u0 = u[0][0]
        for x in u:
            x[0] = u0
    return HJRun(junction, grid, cfl, tracker, snaps, n_steps, time.perf_counter() - t_start)

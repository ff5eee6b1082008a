"""Post-processing: shock tracking, Q1 interpolation, refinement, trajectories."""
from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from . import hj_scheme as hj
from .hamiltonian import Orientation
from .hj_scheme import CFLViolation
from .junction import GridSpec, InitialData, JunctionSpec, densities_from_labels

MPS_TO_KMH = 3.6


@dataclass(frozen=True)
class ShockTrace:
    branch: int
    times_s: np.ndarray
    positions_m: np.ndarray
    speed_kmh: float
    residual_m: float


def _crossing(rho: np.ndarray, dx_m: float, threshold: float) -> float | None:
    """Position of the steepest threshold crossing between cell centres."""
    above = rho >= threshold
    idx = np.flatnonzero(above[1:] != above[:-1])
    if len(idx) == 0:
        return None
    j = int(idx[np.argmax(np.abs(rho[idx + 1] - rho[idx]))])
    frac = (threshold - rho[j]) / (rho[j + 1] - rho[j])
    return (j + 0.5 + frac) * dx_m


def track_shock(snapshots, junction: JunctionSpec, dx_m: float, branch: int, *,
                threshold: float | None = None, states: tuple[float, float] | None = None,
                window: tuple[float, float] | None = None) -> ShockTrace:
    """Fit the speed of a density front on one branch.

    ``snapshots`` is an iterable of density fields (``.values``, ``.time_s``).
    The threshold defaults to the midpoint of ``states``. The speed is
    reported in the direction of traffic (negative = moving upstream).
    """
    if threshold is None:
        if states is None:
            raise ValueError("give either a threshold or the two Riemann states")
        threshold = 0.5 * (states[0] + states[1])
    ts, xs = [], []
    for s in snapshots:
        if window and not (window[0] <= s.time_s <= window[1]):
            continue
        x = _crossing(np.asarray(s.values[branch]), dx_m, threshold)
        if x is not None:
            ts.append(s.time_s)
            xs.append(x)
    if len(ts) < 2:
        raise ValueError(f"front found in only {len(ts)} snapshot(s) on branch {branch}")
    t, x = np.array(ts), np.array(xs)
    slope, icpt = np.polyfit(t, x, 1)
    resid = float(np.sqrt(np.mean((x - (slope * t + icpt)) ** 2)))
    sign = junction.branches[branch].sign
    # branch-local x grows away from the junction: upstream on incoming roads
    speed = -sign * slope * MPS_TO_KMH
    return ShockTrace(branch, t, x, float(speed) + 0.0, resid)


def q1_interpolate(snapshots, t_s: float, x_m, branch: int, dx_m: float):
    """Bilinear (Q1) interpolation of the labels in time and space.

    ``snapshots`` is a sequence of :class:`LabelField` sorted by time; the
    two stored fields bracketing ``t_s`` are used.
    """
    snaps = sorted(snapshots, key=lambda s: s.time_s)
    times = [s.time_s for s in snaps]
    if not snaps or not (times[0] - 1e-12 <= t_s <= times[-1] + 1e-12):
        raise ValueError(f"time {t_s} outside the stored span")
    k = min(max(bisect.bisect_right(times, t_s) - 1, 0), len(snaps) - 1)
    lo = snaps[k]
    hi = snaps[k + 1] if k + 1 < len(snaps) else lo
    tau = 0.0 if hi is lo else (t_s - lo.time_s) / (hi.time_s - lo.time_s)
    u_lo, u_hi = lo.values[branch], hi.values[branch]
    nb = len(u_lo) - 1
    x = np.asarray(x_m, dtype=float)
    if np.any(x < -1e-9) or np.any(x > nb * dx_m + 1e-9):
        raise ValueError(f"position outside [0, {nb * dx_m}] m")
    i = np.clip(np.floor(x / dx_m).astype(int), 0, nb - 1)
    xi = x / dx_m - i
    a, b = u_lo[i], u_lo[i + 1]
    d, c = u_hi[i], u_hi[i + 1]
    out = (a + xi * (b - a)) * (1 - tau) + (d + xi * (c - d)) * tau
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RefinementLevel:
    dx_m: float
    dt_s: float
    label_diff: tuple[float, ...]
    density_diff: tuple[float, ...]


@dataclass(frozen=True)
class RefinementReport:
    times_s: tuple[float, ...]
    levels: tuple[RefinementLevel, ...]

    def diffs_at(self, k: int) -> list[float]:
        """Label sup-norm differences at ``times_s[k]``, coarse to fine."""
        return [lv.label_diff[k] for lv in self.levels[:-1]]


def refinement_study(junction: JunctionSpec, init: InitialData, dx_levels, times_s,
                     dt_s: float | None = None) -> RefinementReport:
    """Run the label scheme at each ``dx`` and compare consecutive levels.

    Labels are compared on the nodes of the coarsest grid at the given
    physical times with :func:`q1_interpolate`; the last level carries empty
    difference tuples.
    """
    dx_levels = [float(d) for d in dx_levels]
    if len(dx_levels) < 2:
        raise ValueError("need at least two refinement levels")
    if any(b > a for a, b in zip(dx_levels, dx_levels[1:])):
        raise ValueError("dx levels must be non-increasing")
    horizon = max(times_s)
    runs = []
    for dx in dx_levels:
        grid = GridSpec(dx, horizon, dt_s)
        labels0, ghosts = hj.initial_state(junction, grid, init)
        try:
            step = hj.resolve_dt(hj.compute_cfl_restrictive(junction, grid, labels0, ghosts), dt_s)
            # one extra step so the last comparison time is bracketed by stored fields
            grid = GridSpec(dx, horizon + step, dt_s)
            runs.append(hj.run(junction, grid, labels0, ghosts, snapshot_times=times_s, bracket=True))
        except CFLViolation as exc:
            raise CFLViolation(f"level dx={dx:g} m: {exc}", exc.branch) from exc
    coarse = dx_levels[0]
    nodes = [coarse * np.arange(GridSpec(coarse, horizon).n_cells(b) + 1) for b in junction.branches]
    centres = [x[:-1] + 0.5 * coarse for x in nodes]
    levels = []
    for k, run in enumerate(runs):
        if k + 1 == len(runs):
            levels.append(RefinementLevel(run.grid.dx_m, run.dt_s, (), ()))
            break
        finer = runs[k + 1]
        lab, den = [], []
        for t in times_s:
            worst_u = worst_r = 0.0
            for a in range(junction.n):
                ua = q1_interpolate(run.snapshots.values(), t, nodes[a], a, run.grid.dx_m)
                ub = q1_interpolate(finer.snapshots.values(), t, nodes[a], a, finer.grid.dx_m)
                worst_u = max(worst_u, float(np.max(np.abs(ua - ub))))
                ra = _density_at(run, t, a, centres[a])
                rb = _density_at(finer, t, a, centres[a])
                worst_r = max(worst_r, float(np.max(np.abs(ra - rb))))
            lab.append(worst_u)
            den.append(worst_r)
        levels.append(RefinementLevel(run.grid.dx_m, run.dt_s, tuple(lab), tuple(den)))
    return RefinementReport(tuple(times_s), tuple(levels))


def _density_at(run: hj.HJRun, t_s: float, branch: int, x_m: np.ndarray) -> np.ndarray:
    snap = run.snapshot_at(t_s)
    rho = densities_from_labels(run.junction, run.grid, snap.values)[branch]
    j = np.clip((x_m / run.grid.dx_m).astype(int), 0, len(rho) - 1)
    return rho[j]


@dataclass(frozen=True)
class VehiclePath:
    """Trajectory of the vehicle carrying ``label``; ``x_m`` is signed
    (negative upstream of the junction)."""

    label: float
    branch_in: int | None
    branch_out: int | None
    times_s: np.ndarray
    x_m: np.ndarray


def _locate(u: np.ndarray, label: float, dx_m: float, increasing: bool) -> float | None:
    v = u if increasing else -u
    target = label if increasing else -label
    if not (v[0] <= target <= v[-1]):
        return None
    j = int(np.searchsorted(v, target, side="left"))
    if j == 0:
        return 0.0
    lo, hi = v[j - 1], v[j]
    frac = 0.0 if hi == lo else (target - lo) / (hi - lo)
    return (j - 1 + frac) * dx_m


def vehicle_trajectories(snapshots, junction: JunctionSpec, dx_m: float, labels) -> list[VehiclePath]:
    """Iso-label curves of the label surface, joined through the junction.

    A vehicle sits on an incoming branch while its label is above the
    junction label and on the outgoing branches once below it. One path is
    returned per (label, incoming branch, outgoing branch) combination that
    the vehicle visits inside the stored time span.
    """
    snaps = sorted(snapshots, key=lambda s: s.time_s)
    paths = []
    for lab in labels:
        pieces: dict[int, list[tuple[float, float]]] = {a: [] for a in range(junction.n)}
        for s in snaps:
            for a, (b, u) in enumerate(zip(junction.branches, s.values)):
                incoming = b.orientation is Orientation.INCOMING
                x = _locate(u, lab, dx_m, increasing=incoming)
                if x is not None:
                    pieces[a].append((s.time_s, -x if incoming else x))
        ins = [a for a in junction.incoming if pieces[a]] or [None]
        outs = [a for a in junction.outgoing if pieces[a]] or [None]
        for a in ins:
            for c in outs:
                pts = (pieces[a] if a is not None else []) + (pieces[c] if c is not None else [])
                # the junction instant appears on both sides; keep it once
                pts = sorted(dict(pts).items())
                if not pts:
                    continue
                t, x = np.array(pts).T
                paths.append(VehiclePath(float(lab), a, c, t, x))
    return paths


def junction_passing_time(snapshots, label: float) -> float | None:
    """First stored time at which the junction label reaches ``label``."""
    for s in sorted(snapshots, key=lambda s: s.time_s):
        if s.values[0][0] >= label:
            return s.time_s
    return None


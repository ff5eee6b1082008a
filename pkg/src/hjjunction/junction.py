"""Junction topology, grids, initial data and the label/density maps.

Storage convention: on every branch, labels live on the points
``i = 0..N_b`` counted outward from the junction, and densities live on the
``N_b`` segments between them (segment ``j`` joins points ``j`` and ``j+1``).
In a signed numbering, incoming segment ``j`` is cell ``-(j+1)``; outgoing segment
``j`` is cell ``j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hamiltonian import BranchHamiltonian, FundamentalDiagram, Orientation

GAMMA_SUM_TOL = 1e-12
M_PER_KM = 1000.0
S_PER_H = 3600.0


@dataclass(frozen=True)
class Branch:
    diagram: FundamentalDiagram
    gamma: float
    orientation: Orientation
    length_m: float
    name: str = ""

    def __post_init__(self):
        if not self.length_m > 0:
            raise ValueError(f"branch {self.name!r}: length must be positive")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"branch {self.name!r}: gamma must lie in (0, 1], got {self.gamma}")

    @property
    def hamiltonian(self) -> BranchHamiltonian:
        return BranchHamiltonian(self.diagram, self.gamma, self.orientation)

    @property
    def sign(self) -> int:
        return self.orientation.sign


@dataclass(frozen=True)
class JunctionSpec:
    """Branches in index order: all incoming first, then all outgoing."""

    branches: tuple[Branch, ...]

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        kinds = [b.orientation for b in self.branches]
        n_in = kinds.count(Orientation.INCOMING)
        if n_in < 1 or len(kinds) - n_in < 1:
            raise ValueError("a junction needs at least one incoming and one outgoing branch")
        if any(k is Orientation.INCOMING for k in kinds[n_in:]):
            raise ValueError("incoming branches must be listed before outgoing branches")
        for label, group in (("incoming", self.incoming), ("outgoing", self.outgoing)):
            total = math.fsum(self.branches[a].gamma for a in group)
            if abs(total - 1.0) > GAMMA_SUM_TOL:
                raise ValueError(f"{label} split coefficients must sum to 1, got {total!r}")

    @property
    def n_in(self) -> int:
        return sum(b.orientation is Orientation.INCOMING for b in self.branches)

    @property
    def n_out(self) -> int:
        return len(self.branches) - self.n_in

    @property
    def n(self) -> int:
        return len(self.branches)

    @property
    def incoming(self) -> range:
        return range(self.n_in)

    @property
    def outgoing(self) -> range:
        return range(self.n_in, self.n)

    @property
    def gammas(self) -> tuple[float, ...]:
        return tuple(b.gamma for b in self.branches)

    @property
    def hamiltonians(self) -> tuple[BranchHamiltonian, ...]:
        return tuple(b.hamiltonian for b in self.branches)

    def with_gammas(self, gammas) -> "JunctionSpec":
        return JunctionSpec(tuple(
            Branch(b.diagram, float(g), b.orientation, b.length_m, b.name)
            for b, g in zip(self.branches, gammas)
        ))


@dataclass(frozen=True)
class GridSpec:
    """Space step and horizon in SI units; ``dt_s=None`` means automatic."""

    dx_m: float
    horizon_s: float
    dt_s: float | None = None

    def __post_init__(self):
        if not self.dx_m > 0:
            raise ValueError(f"dx must be positive, got {self.dx_m}")
        if self.dt_s is not None and not self.dt_s > 0:
            raise ValueError(f"dt must be positive, got {self.dt_s}")
        if not self.horizon_s >= 0:
            raise ValueError(f"horizon must be nonnegative, got {self.horizon_s}")

    @property
    def dx_km(self) -> float:
        return self.dx_m / M_PER_KM

    def n_cells(self, branch: Branch) -> int:
        # tolerate L/dx landing a hair under an integer
        return int(math.floor(branch.length_m / self.dx_m + 1e-9))

    def node_positions_m(self, branch: Branch) -> np.ndarray:
        return self.dx_m * np.arange(self.n_cells(branch) + 1)

    def with_dt(self, dt_s: float | None) -> "GridSpec":
        return GridSpec(self.dx_m, self.horizon_s, dt_s)


@dataclass(frozen=True)
class DensityPiece:
    from_m: float
    to_m: float
    rho: float


@dataclass(frozen=True)
class InitialData:
    """Piecewise-constant density per branch, positions measured from the junction."""

    profiles: tuple[tuple[DensityPiece, ...], ...]
    u0_junction: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(tuple(p) for p in self.profiles))

    def validate(self, junction: JunctionSpec, grid: GridSpec):
        if len(self.profiles) != junction.n:
            raise ValueError(f"expected {junction.n} density profiles, got {len(self.profiles)}")
        for b, prof in zip(junction.branches, self.profiles):
            if not prof:
                raise ValueError(f"branch {b.name!r}: empty density profile")
            pieces = sorted(prof, key=lambda q: q.from_m)
            reach = grid.n_cells(b) * grid.dx_m
            pos = 0.0
            for q in pieces:
                if q.to_m <= q.from_m:
                    raise ValueError(f"branch {b.name!r}: piece [{q.from_m}, {q.to_m}] is empty")
                if abs(q.from_m - pos) > 1e-9:
                    raise ValueError(f"branch {b.name!r}: density profile has a gap or overlap at {pos} m")
                if not (0.0 <= q.rho <= b.diagram.rho_max):
                    raise ValueError(f"branch {b.name!r}: density {q.rho} outside [0, {b.diagram.rho_max}]")
                pos = q.to_m
            if pos < reach - 1e-9:
                raise ValueError(f"branch {b.name!r}: density profile stops at {pos} m, grid reaches {reach} m")

    @classmethod
    def uniform(cls, junction: JunctionSpec, densities, u0_junction: float = 0.0) -> "InitialData":
        return cls(tuple(
            (DensityPiece(0.0, b.length_m, float(r)),) for b, r in zip(junction.branches, densities)
        ), u0_junction)


def _cumulative_vehicles(pieces, x_m: np.ndarray) -> np.ndarray:
    """Exact integral of a piecewise-constant density over ``[0, x]`` (vehicles)."""
    total = np.zeros_like(x_m, dtype=float)
    for q in sorted(pieces, key=lambda q: q.from_m):
        covered = np.clip(x_m - q.from_m, 0.0, q.to_m - q.from_m)
        total += q.rho * covered / M_PER_KM
    return total


def labels_from_densities(junction: JunctionSpec, grid: GridSpec, init: InitialData) -> list[np.ndarray]:
    """Initial labels ``U^{a,0}_i`` from the density profiles.

    Incoming labels grow away from the junction and outgoing ones decrease,
    so that ``rho = gamma * p_+`` upstream and ``rho = -gamma * p_+``
    downstream. The junction point carries ``u0_junction`` on every branch.
    """
    init.validate(junction, grid)
    out = []
    for b, prof in zip(junction.branches, init.profiles):
        x = grid.node_positions_m(b)
        u = init.u0_junction + b.sign * _cumulative_vehicles(prof, x) / b.gamma
        u[0] = init.u0_junction
        out.append(u)
    return out


def densities_from_labels(junction: JunctionSpec, grid: GridSpec, labels) -> list[np.ndarray]:
    """Segment densities ``rho_j = s * gamma * (U_{j+1} - U_j) / dx``."""
    junction_vals = [u[0] for u in labels]
    if any(v != junction_vals[0] for v in junction_vals):
        raise ValueError("labels disagree at the junction point")
    return [
        b.sign * b.gamma * np.diff(u) / grid.dx_km
        for b, u in zip(junction.branches, labels)
    ]


def inflow_densities(junction: JunctionSpec, grid: GridSpec, init: InitialData) -> list[float | None]:
    """Far-end density of each incoming branch, held fixed as upstream demand.

    It is the average of the initial density over the outermost segment,
    i.e. exactly what the label field encodes there. Outgoing entries are
    ``None``.
    """
    rho0 = densities_from_labels(junction, grid, labels_from_densities(junction, grid, init))
    return [
        float(r[-1]) if b.orientation is Orientation.INCOMING else None
        for b, r in zip(junction.branches, rho0)
    ]

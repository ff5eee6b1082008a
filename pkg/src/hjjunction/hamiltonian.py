"""Fundamental diagrams and the branch Hamiltonians built from them.

Units: densities in veh/km, flows in veh/h, speeds in km/h. Label gradients
``p`` are in labels/km and relate to densities through ``rho = s * gamma * p``
with ``s = +1`` on incoming branches and ``s = -1`` on outgoing ones.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

BISECTION_TOL = 1e-12


class Orientation(enum.Enum):
    INCOMING = "incoming"
    OUTGOING = "outgoing"

    @property
    def sign(self) -> int:
        return 1 if self is Orientation.INCOMING else -1


class DiagramKind(enum.Enum):
    BIPARABOLIC = "biparabolic"
    PIECEWISE = "piecewise"


class InfeasibleBound(ValueError):
    """Requested inverse value lies below the minimum of the Hamiltonian."""


def _stable_roots(a: float, b: float, c: float) -> tuple[float, float]:
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        if disc > -1e-9 * max(b * b, 1.0):
            disc = 0.0
        else:
            raise InfeasibleBound("no real root")
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b))
    if q == 0.0:
        return 0.0, 0.0
    return q / a, c / q


@dataclass(frozen=True)
class FundamentalDiagram:
    """A unimodal flux-density relation with its demand/supply split.

    Use :meth:`biparabolic` or :meth:`piecewise` to build one. Outside
    ``[0, rho_max]`` each piece is extended analytically (quadratic pieces
    keep their formula, piecewise-linear data extends its end segments).
    """

    rho_c: float
    rho_max: float
    f_max: float
    k: float | None = None
    kind: DiagramKind = DiagramKind.BIPARABOLIC
    breakpoints: tuple[tuple[float, float], ...] = ()
    _coef: tuple[float, ...] = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.rho_c > 0 and self.rho_c < self.rho_max):
            raise ValueError(f"need 0 < rho_c < rho_max, got rho_c={self.rho_c}, rho_max={self.rho_max}")
        if not self.f_max > 0:
            raise ValueError(f"f_max must be positive, got {self.f_max}")
        if self.kind is DiagramKind.BIPARABOLIC:
            k = self.k
            if k is None or not (0.0 < k <= 2.0):
                raise ValueError(f"shape parameter k must lie in (0, 2], got {k}")
            rc, rm, fm = self.rho_c, self.rho_max, self.f_max
            w2 = (rm - rc) ** 2
            coef = (
                (1.0 - k) * fm / rc**2,
                k * fm / rc,
                (1.0 - k) * fm / w2,
                (k * rc + (k - 2.0) * rm) * fm / w2,
                -rm * (k * rc - rm) * fm / w2,
            )
            object.__setattr__(self, "_coef", coef)
        else:
            pts = self.breakpoints
            if len(pts) < 3:
                raise ValueError("piecewise diagram needs at least 3 breakpoints")
            rho = [p[0] for p in pts]
            flow = [p[1] for p in pts]
            if rho[0] != 0.0 or flow[0] != 0.0:
                raise ValueError("piecewise diagram must start at (0, 0)")
            if any(b <= a for a, b in zip(rho, rho[1:])):
                raise ValueError("breakpoint densities must be strictly increasing")
            ic = rho.index(self.rho_c) if self.rho_c in rho else -1
            if ic < 0 or flow[ic] != self.f_max or rho[-1] != self.rho_max:
                raise ValueError("rho_c/f_max/rho_max must match the breakpoints")
            up, down = flow[: ic + 1], flow[ic:]
            if any(b <= a for a, b in zip(up, up[1:])) or any(b >= a for a, b in zip(down, down[1:])):
                raise ValueError("piecewise diagram must increase strictly up to rho_c and decrease after")

    @classmethod
    def biparabolic(cls, rho_c: float, rho_max: float, f_max: float, k: float) -> "FundamentalDiagram":
        return cls(float(rho_c), float(rho_max), float(f_max), float(k), DiagramKind.BIPARABOLIC)

    @classmethod
    def piecewise(cls, points) -> "FundamentalDiagram":
        pts = tuple((float(r), float(f)) for r, f in points)
        ic = max(range(len(pts)), key=lambda j: pts[j][1])
        return cls(pts[ic][0], pts[-1][0], pts[ic][1], None, DiagramKind.PIECEWISE, pts)

    # -- evaluation -------------------------------------------------------

    def flux(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind is DiagramKind.BIPARABOLIC:
            a1, b1, a2, b2, c2 = self._coef
            out = np.where(
                rho <= self.rho_c,
                (a1 * rho + b1) * rho,
                (a2 * rho + b2) * rho + c2,
            )
        else:
            out = self._piecewise_eval(rho)
        return out if out.ndim else float(out)

    def _piecewise_eval(self, rho):
        r = np.array([p[0] for p in self.breakpoints])
        f = np.array([p[1] for p in self.breakpoints])
        out = np.interp(rho, r, f)
        lo_slope = (f[1] - f[0]) / (r[1] - r[0])
        hi_slope = (f[-1] - f[-2]) / (r[-1] - r[-2])
        out = np.where(rho < r[0], f[0] + lo_slope * (rho - r[0]), out)
        out = np.where(rho > r[-1], f[-1] + hi_slope * (rho - r[-1]), out)
        return out

    def demand(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = np.where(rho <= self.rho_c, self.flux(rho), self.f_max)
        return out if out.ndim else float(out)

    def supply(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = np.where(rho >= self.rho_c, self.flux(rho), self.f_max)
        return out if out.ndim else float(out)

    def slope(self, rho: float, side: int = -1) -> float:
        """One-sided derivative of the flux; ``side=-1`` left, ``+1`` right."""
        if self.kind is DiagramKind.BIPARABOLIC:
            a1, b1, a2, b2, _ = self._coef
            fluid = rho < self.rho_c or (rho == self.rho_c and side < 0)
            return 2 * a1 * rho + b1 if fluid else 2 * a2 * rho + b2
        pts = self.breakpoints
        slopes = [(f1 - f0) / (r1 - r0) for (r0, f0), (r1, f1) in zip(pts, pts[1:])]
        for j, ((r0, _), (r1, _)) in enumerate(zip(pts, pts[1:])):
            if r0 < rho < r1 or (rho == r1 and side < 0) or (rho == r0 and side > 0):
                return slopes[j]
        return slopes[0] if rho <= pts[0][0] else slopes[-1]

    def max_abs_slope(self, lo: float, hi: float) -> float:
        """Essential supremum of ``|f'|`` over the density interval ``[lo, hi]``."""
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        if lo == hi:
            return max(abs(self.slope(lo, -1)), abs(self.slope(lo, +1)))
        if self.kind is DiagramKind.BIPARABOLIC:
            cands = []
            if lo < self.rho_c:
                cands += [self.slope(lo, +1), self.slope(min(hi, self.rho_c), -1)]
            if hi > self.rho_c:
                cands += [self.slope(max(lo, self.rho_c), +1), self.slope(hi, -1)]
            return max(abs(c) for c in cands)
        # piecewise-linear: one slope per segment touching the open interval
        cands = [self.slope(lo, +1), self.slope(hi, -1)]
        cands += [self.slope(r, s) for r, _ in self.breakpoints if lo < r < hi for s in (-1, 1)]
        return max(abs(c) for c in cands)

    # -- inverses on the monotone branches ---------------------------------

    def inverse_demand(self, v: float) -> float:
        """Density on the fluid branch carrying flow ``v`` (``v <= f_max``)."""
        if v > self.f_max:
            raise InfeasibleBound(f"flow {v} exceeds capacity {self.f_max}")
        if v == self.f_max:
            return self.rho_c
        if self.kind is DiagramKind.BIPARABOLIC:
            a1, b1 = self._coef[:2]
            if a1 == 0.0:
                return v / b1
            r1, r2 = _stable_roots(a1, b1, -v)
            # increasing branch: f' = 2 a r + b >= 0
            return max((r1, r2), key=lambda r: 2 * a1 * r + b1)
        return self._bisect(v, increasing=True)

    def inverse_supply(self, v: float) -> float:
        """Density on the congested branch carrying flow ``v`` (``v <= f_max``)."""
        if v > self.f_max:
            raise InfeasibleBound(f"flow {v} exceeds capacity {self.f_max}")
        if v == self.f_max:
            return self.rho_c
        if self.kind is DiagramKind.BIPARABOLIC:
            _, _, a2, b2, c2 = self._coef
            if a2 == 0.0:
                return (v - c2) / b2
            r1, r2 = _stable_roots(a2, b2, c2 - v)
            return min((r1, r2), key=lambda r: 2 * a2 * r + b2)
        return self._bisect(v, increasing=False)

    def _bisect(self, v: float, increasing: bool) -> float:
        # bracket on the requested monotone branch, widening past the ends if needed
        if increasing:
            lo, hi = 0.0, self.rho_c
            while self.flux(lo) > v:
                lo -= max(self.rho_c, hi - lo)
        else:
            lo, hi = self.rho_c, self.rho_max
            while self.flux(hi) > v:
                hi += max(self.rho_max - self.rho_c, hi - lo)
        while hi - lo > BISECTION_TOL:
            mid = 0.5 * (lo + hi)
            above = self.flux(mid) > v
            if above == increasing:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class BranchHamiltonian:
    """``H(p) = -(1/gamma) f(s * gamma * p)`` on one branch."""

    diagram: FundamentalDiagram
    gamma: float
    orientation: Orientation

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")

    @property
    def sign(self) -> int:
        return self.orientation.sign

    @property
    def p0(self) -> float:
        return self.sign * self.diagram.rho_c / self.gamma

    @property
    def minimum(self) -> float:
        return -self.diagram.f_max / self.gamma

    def density(self, p):
        return self.sign * self.gamma * np.asarray(p, dtype=float)

    def gradient(self, rho):
        return self.sign * np.asarray(rho, dtype=float) / self.gamma

    def H(self, p):
        return -self.diagram.flux(self.density(p)) / self.gamma

    def H_minus(self, p):
        rho = self.density(p)
        d = self.diagram
        f = d.demand(rho) if self.sign > 0 else d.supply(rho)
        return -f / self.gamma

    def H_plus(self, p):
        rho = self.density(p)
        d = self.diagram
        f = d.supply(rho) if self.sign > 0 else d.demand(rho)
        return -f / self.gamma

    def inverse_H_minus(self, a: float) -> float:
        """Smallest ``p`` with ``H_minus(p) == a``; the plateau value maps to ``p0``."""
        if a == math.inf:
            return -math.inf
        self._check_level(a)
        if a == self.minimum:
            return self.p0
        v = -self.gamma * a
        d = self.diagram
        rho = d.inverse_demand(v) if self.sign > 0 else d.inverse_supply(v)
        return float(self.gradient(rho))

    def inverse_H_plus(self, a: float) -> float:
        """Largest ``p`` with ``H_plus(p) == a``; the plateau value maps to ``p0``."""
        if a == math.inf:
            return math.inf
        self._check_level(a)
        if a == self.minimum:
            return self.p0
        v = -self.gamma * a
        d = self.diagram
        rho = d.inverse_supply(v) if self.sign > 0 else d.inverse_demand(v)
        return float(self.gradient(rho))

    def _check_level(self, a: float):
        if not a >= self.minimum:
            raise InfeasibleBound(f"level {a} lies below the Hamiltonian minimum {self.minimum}")

    def lipschitz_bound(self, p_lo: float, p_hi: float) -> float:
        """Essential supremum of ``|H'|`` over ``[p_lo, p_hi]`` (km/h)."""
        if p_lo > p_hi:
            raise ValueError(f"p_lo={p_lo} exceeds p_hi={p_hi}")
        r1, r2 = float(self.density(p_lo)), float(self.density(p_hi))
        return self.diagram.max_abs_slope(min(r1, r2), max(r1, r2))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjjunction.hamiltonian import BranchHamiltonian, FundamentalDiagram, InfeasibleBound, Orientation

from conftest import biparabolic_oracle

diagrams = st.builds(
    lambda rc, width, fm, k: FundamentalDiagram.biparabolic(rc, rc + width, fm, k),
    st.floats(5, 60), st.floats(20, 200), st.floats(100, 5000), st.floats(0.05, 2.0),
)
gammas = st.floats(0.05, 1.0)
orients = st.sampled_from(list(Orientation))


def test_reference_flux_values(diagram):
    assert diagram.flux(15) == pytest.approx(843.75, abs=1e-12)
    assert diagram.flux(90) == pytest.approx(625.0, abs=1e-12)
    assert diagram.flux(20) == pytest.approx(1000.0)
    assert diagram.flux(0) == 0.0
    assert diagram.flux(160) == pytest.approx(0.0, abs=1e-9)


def test_matches_symmetric_form(diagram):
    rho = np.linspace(0, 160, 321)
    np.testing.assert_allclose(diagram.flux(rho), biparabolic_oracle(rho), rtol=1e-13, atol=1e-9)


def test_demand_supply_split(diagram):
    assert diagram.demand(90) == 1000.0
    assert diagram.supply(90) == pytest.approx(625.0)
    assert diagram.demand(15) == pytest.approx(843.75)
    assert diagram.supply(15) == 1000.0


@pytest.mark.parametrize("k", [0.0, -1.0, 2.5])
def test_shape_parameter_rejected(k):
    with pytest.raises(ValueError, match="shape parameter"):
        FundamentalDiagram.biparabolic(20, 160, 1000, k)


@pytest.mark.parametrize("args", [(20, 20, 1000, 1), (30, 20, 1000, 1), (20, 160, 0, 1)])
def test_bad_parameters_rejected(args):
    with pytest.raises(ValueError):
        FundamentalDiagram.biparabolic(*args)


def test_slopes(diagram):
    assert diagram.slope(0.0, +1) == pytest.approx(75.0)
    assert diagram.slope(5.0) == pytest.approx(62.5)
    assert diagram.slope(20.0, -1) == pytest.approx(25.0)
    assert diagram.slope(125.0) == pytest.approx(-1750 / 196)
    assert diagram.max_abs_slope(5, 125) == pytest.approx(62.5)
    assert diagram.max_abs_slope(0, 160) == pytest.approx(75.0)
    assert diagram.max_abs_slope(20, 20) == pytest.approx(25.0)


@given(diagrams, st.floats(0, 1))
def test_demand_plus_supply_minus_flux_is_capacity(d, frac):
    rho = frac * d.rho_max
    assert d.demand(rho) + d.supply(rho) - d.flux(rho) == pytest.approx(d.f_max, rel=1e-12, abs=1e-9)
    assert min(d.demand(rho), d.supply(rho)) == pytest.approx(d.flux(rho), rel=1e-12, abs=1e-9)


@given(diagrams, st.floats(0, 1), st.floats(0, 1))
def test_demand_nondecreasing_supply_nonincreasing(d, a, b):
    lo, hi = sorted((a * d.rho_max, b * d.rho_max))
    tol = 1e-9 * d.f_max
    assert d.demand(lo) <= d.demand(hi) + tol
    assert d.supply(lo) >= d.supply(hi) - tol


@given(diagrams, st.floats(0, 1))
def test_inverse_demand_supply_round_trip(d, frac):
    v = frac * d.f_max
    assert d.flux(d.inverse_demand(v)) == pytest.approx(v, rel=1e-9, abs=1e-9 * d.f_max)
    assert d.flux(d.inverse_supply(v)) == pytest.approx(v, rel=1e-9, abs=1e-9 * d.f_max)
    assert d.inverse_demand(v) <= d.rho_c + 1e-9 <= d.inverse_supply(v) + 2e-9


def test_inverse_above_capacity(diagram):
    with pytest.raises(InfeasibleBound):
        diagram.inverse_demand(1000.5)


@pytest.mark.parametrize("orient,sign", [(Orientation.INCOMING, 1), (Orientation.OUTGOING, -1)])
def test_minimizer(diagram, orient, sign):
    h = BranchHamiltonian(diagram, 0.5, orient)
    assert h.p0 == sign * 40.0
    assert h.H(h.p0) == pytest.approx(h.minimum)
    assert h.minimum == -2000.0


def _physical_gradient(h, frac):
    # gradients whose density lies in [0, rho_max]
    return h.gradient(frac * h.diagram.rho_max)


@given(diagrams, gammas, orients, st.floats(0, 1))
def test_envelopes(d, g, o, frac):
    h = BranchHamiltonian(d, g, o)
    p = _physical_gradient(h, frac)
    hm, hp, hh = h.H_minus(p), h.H_plus(p), h.H(p)
    assert max(hm, hp) == pytest.approx(hh, rel=1e-12, abs=1e-9 * abs(h.minimum))
    assert hm >= h.minimum - 1e-9 and hp >= h.minimum - 1e-9


@given(diagrams, gammas, orients, st.floats(0, 1), st.floats(0, 1))
def test_envelope_monotonicity(d, g, o, a, b):
    h = BranchHamiltonian(d, g, o)
    p, q = sorted((_physical_gradient(h, a), _physical_gradient(h, b)))
    tol = 1e-9 * abs(h.minimum)
    assert h.H_minus(p) >= h.H_minus(q) - tol
    assert h.H_plus(p) <= h.H_plus(q) + tol


@given(diagrams, gammas, orients, st.floats(0, 1))
@settings(max_examples=200)
def test_generalized_inverse_round_trip(d, g, o, frac):
    h = BranchHamiltonian(d, g, o)
    a = h.minimum * frac  # levels between the minimum and 0
    lo, hi = h.inverse_H_minus(a), h.inverse_H_plus(a)
    tol = 1e-8 * abs(h.minimum)
    assert h.H_minus(lo) == pytest.approx(a, abs=tol)
    assert h.H_plus(hi) == pytest.approx(a, abs=tol)
    assert lo <= h.p0 + 1e-9 * abs(h.p0) <= hi + 2e-9 * abs(h.p0)


def test_inverse_examples(diagram):
    inc = BranchHamiltonian(diagram, 0.5, Orientation.INCOMING)
    out = BranchHamiltonian(diagram, 0.5, Orientation.OUTGOING)
    assert inc.inverse_H_minus(-687.5) == pytest.approx(10.0)
    assert inc.inverse_H_plus(-687.5) == pytest.approx(250.0)
    assert out.inverse_H_minus(-687.5) == pytest.approx(-250.0)
    assert out.inverse_H_plus(-687.5) == pytest.approx(-10.0)
    assert inc.inverse_H_minus(inc.minimum) == inc.p0
    assert inc.inverse_H_minus(math.inf) == -math.inf
    assert inc.inverse_H_plus(math.inf) == math.inf
    with pytest.raises(InfeasibleBound):
        inc.inverse_H_minus(-2500.0)


def test_lipschitz_bound(diagram):
    h = BranchHamiltonian(diagram, 0.5, Orientation.INCOMING)
    assert h.lipschitz_bound(10, 250) == pytest.approx(62.5)
    o = BranchHamiltonian(diagram, 0.5, Orientation.OUTGOING)
    assert o.lipschitz_bound(-250, -10) == pytest.approx(62.5)
    with pytest.raises(ValueError):
        h.lipschitz_bound(5, 1)


def test_gamma_range(diagram):
    for g in (0.0, 1.5):
        with pytest.raises(ValueError):
            BranchHamiltonian(diagram, g, Orientation.INCOMING)


def test_piecewise_diagram():
    d = FundamentalDiagram.piecewise([(0, 0), (25, 1500), (150, 0)])
    assert d.rho_c == 25 and d.f_max == 1500 and d.rho_max == 150
    assert d.flux(12.5) == pytest.approx(750)
    assert d.inverse_demand(750) == pytest.approx(12.5, abs=1e-10)
    assert d.inverse_supply(750) == pytest.approx(87.5, abs=1e-10)
    assert d.max_abs_slope(0, 150) == pytest.approx(60)
    with pytest.raises(ValueError):
        FundamentalDiagram.piecewise([(0, 0), (25, 1500), (20, 0)])
    with pytest.raises(ValueError):
        FundamentalDiagram.piecewise([(0, 0), (150, 0)])

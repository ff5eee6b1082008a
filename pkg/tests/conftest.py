import numpy as np
import pytest

from hjjunction import density_scheme as ds
from hjjunction import hj_scheme as hj
from hjjunction.hamiltonian import FundamentalDiagram, Orientation
from hjjunction.junction import Branch, JunctionSpec
from hjjunction.scenario import load_scenario


@pytest.fixture(scope="session")
def diagram():
    return FundamentalDiagram.biparabolic(20, 160, 1000, 1.5)


@pytest.fixture(scope="session")
def table1():
    return load_scenario("table1.scenario")


@pytest.fixture(scope="session")
def table1_hj(table1):
    """Full labelled run of the bundled scenario, every step stored."""
    labels0, ghosts = hj.initial_state(table1.junction, table1.grid, table1.initial)
    return hj.run(table1.junction, table1.grid, labels0, ghosts, record_every=1)


@pytest.fixture(scope="session")
def table1_density(table1, table1_hj):
    rho0, inflow = ds.initial_densities(table1.junction, table1.grid, table1.initial)
    return ds.run_density(table1.junction, table1_hj.grid, rho0, inflow, record_every=1)


def make_junction(d, gammas_in=(0.5, 0.5), gammas_out=(0.5, 0.5), length_m=200.0):
    branches = [Branch(d, g, Orientation.INCOMING, length_m, f"in{k}") for k, g in enumerate(gammas_in)]
    branches += [Branch(d, g, Orientation.OUTGOING, length_m, f"out{k}") for k, g in enumerate(gammas_out)]
    return JunctionSpec(tuple(branches))


def biparabolic_oracle(rho, rho_c=20.0, rho_max=160.0, f_max=1000.0, k=1.5):
    """The flux written in its symmetric textbook form, independent of the package."""
    rho = np.asarray(rho, dtype=float)
    x = np.where(rho <= rho_c, rho / rho_c, (rho_max - rho) / (rho_max - rho_c))
    return f_max * (k * x + (1 - k) * x * x)

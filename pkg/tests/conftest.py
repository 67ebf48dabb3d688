import numpy as np
import pytest

from gtbm import flow_solver
from gtbm.geometry import TorusConformalFamily


@pytest.fixture(scope="session")
def nrf_solution_small():
    """Quick single-mode flow solve on a coarse grid (shared, immutable)."""
    u0 = flow_solver.single_mode(32, 0.2, 1, 0)
    return flow_solver.solve_nrf(u0, t_end=0.4, dt=5e-4, n_store=41)


@pytest.fixture(scope="session")
def nrf_solution_fine():
    """Reference-resolution flow solve used by the surface-flow checks."""
    u0 = flow_solver.single_mode(64, 0.2, 1, 0)
    return flow_solver.solve_nrf(u0, t_end=0.4, dt=2e-4, n_store=41)


@pytest.fixture(scope="session")
def nrf_family_small(nrf_solution_small):
    return TorusConformalFamily(nrf_solution_small, kappa=2.0)


@pytest.fixture(scope="session")
def nrf_family_fine(nrf_solution_fine):
    return TorusConformalFamily(nrf_solution_fine, kappa=2.0)

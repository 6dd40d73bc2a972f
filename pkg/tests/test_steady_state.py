import numpy as np
import pytest

from shiftniche.discrete_operator import Grid
from shiftniche.environment import Logistic, OffsetProfile, niche_profile
from shiftniche.errors import ConvergenceError, ValidationError
from shiftniche.kernel import make_kernel
from shiftniche.steady_state import (
    _Problem,
    domain_continuation,
    fat_tail_solve,
    solve_bounded,
    solve_bounded_viscous,
    uniqueness_probe,
    vanishing_viscosity,
)


@pytest.fixture(scope="module")
def grid():
    return Grid.from_spacing(12.0, 0.05)


@pytest.mark.parametrize("c", [0.0, 0.5])
def test_bracket_iteration_is_monotone(uniform1, reference_growth, grid, c):
    res = solve_bounded(grid, uniform1, reference_growth, c, 0.0, tol=1e-9)
    assert res.classification == "nontrivial"
    assert res.order_violation <= 1e-13
    assert res.residual <= 1e-9
    assert np.all(res.u >= 0) and np.all(res.u <= reference_growth.saturation)
    niche = np.abs(grid.x) <= 2.0
    assert res.u[niche].min() > 0
    # independent check of the fixed-point residual
    prob = _Problem(grid, uniform1, reference_growth, c, 0.0)
    assert np.max(np.abs(prob.G(res.u))) <= 1e-9


def test_extinct_regime_gives_zero(uniform1, reference_growth, grid):
    res = solve_bounded(grid, uniform1, reference_growth, 1.06, 0.0, tol=1e-8)
    assert res.lambda_p > 1e-4
    assert res.classification == "trivial"
    assert res.u.max() <= 1e-8


def test_borderline_is_never_silently_classified(uniform1, reference_growth, grid):
    res = solve_bounded(grid, uniform1, reference_growth, 0.0, 0.0, tol=1e-8, band=1.0)
    assert res.classification == "borderline"


def test_newton_matches_monotone_limit(uniform1, reference_growth, grid):
    mono = solve_bounded(grid, uniform1, reference_growth, 0.3, 0.0, tol=1e-10)
    fast = solve_bounded(grid, uniform1, reference_growth, 0.3, 0.0, tol=1e-10, accelerate="newton")
    assert np.max(np.abs(mono.u - fast.u)) <= 1e-8
    assert fast.iterations < mono.iterations


def test_two_seed_uniqueness(uniform1, reference_growth, grid):
    spread, sols = uniqueness_probe(grid, uniform1, reference_growth, 0.4)
    assert set(sols) == {"kappa", "kappa/ratio", "super"}
    assert spread <= 1e-8


def test_order_preserving_in_potential(uniform1, reference_growth, grid):
    lower = solve_bounded(grid, uniform1, reference_growth, 0.3, 0.0, tol=1e-11)
    higher = Logistic(OffsetProfile(reference_growth.profile, 0.1), 1.0)
    upper = solve_bounded(grid, uniform1, higher, 0.3, 0.0, tol=1e-11)
    assert np.all(lower.u <= upper.u + 1e-10)


def test_viscous_solver_needs_viscosity(uniform1, reference_growth, grid):
    with pytest.raises(ValidationError):
        solve_bounded_viscous(grid, uniform1, reference_growth, 0.3, 0.0)
    res = solve_bounded_viscous(grid, uniform1, reference_growth, 0.3, 0.05)
    assert res.u[0] < 1e-6 and res.u[-1] < 1e-6


def test_vanishing_viscosity(uniform1, reference_growth, grid):
    res = vanishing_viscosity(grid, uniform1, reference_growth, 0.4, [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 0.0])
    incs = [d["sup_increment"] for d in res.trace[1:]]
    assert all(b < a for a, b in zip(incs, incs[1:]))
    assert res.epsilon == 0.0 and res.residual <= 1e-8
    M = reference_growth.saturation
    C1 = (M + reference_growth.sup_abs_f()) / 0.4
    assert res.grad_sup <= C1 + 10 * grid.h


def test_vanishing_viscosity_validation(uniform1, reference_growth, grid):
    with pytest.raises(ValidationError, match="c != 0"):
        vanishing_viscosity(grid, uniform1, reference_growth, 0.0, [0.1, 0.0])
    with pytest.raises(ValidationError, match="decreasing"):
        vanishing_viscosity(grid, uniform1, reference_growth, 0.3, [0.1, 0.2])


def test_growing_increments_are_flagged(uniform1, reference_growth, grid):
    with pytest.raises(ConvergenceError, match="non-decreasing"):
        vanishing_viscosity(grid, uniform1, reference_growth, 0.4, [0.1, 0.099, 0.09, 0.0])


def test_domain_continuation(uniform1, reference_growth):
    res = domain_continuation(uniform1, reference_growth, 0.3, 0.0, [5.0, 10.0, 20.0, 40.0], tol=1e-8)
    masses = [d["l1_mass"] for d in res.trace]
    gaps = np.abs(np.diff(masses))
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))
    R = res.domain_R
    edge = np.abs(res.x) >= R - 1.0
    assert res.u[edge].max() < 1e-6


def test_fat_tail_solve_monotone_in_N():
    k = make_kernel("fat_quartic", scale=1.0, sampling_radius=200.0)
    g = Logistic(niche_profile(inner=1.5), 1.0)
    grid = Grid.from_spacing(8.0, 0.1)
    res = fat_tail_solve(k, g, 0.0, [5, 10, 20], grid)
    incs = [d["sup_increment"] for d in res.trace[1:]]
    assert incs[1] < incs[0]
    assert all(d["lambda_p"] <= 1.0 - 1.5 for d in res.trace)
    with pytest.raises(ValidationError, match="sup a > 1"):
        fat_tail_solve(k, Logistic(niche_profile(), 1.0), 0.0, [5, 10], grid)

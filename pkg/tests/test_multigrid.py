import numpy as np
import pytest

from app.core.exceptions import HierarchyError
from app.schemas.schemas import CycleType, MultigridConfig
from app.services.analysis import forcing
from app.services.assembly import assemble_load
from app.services.multigrid import (
    build_algebraic_levels,
    build_levels,
    error_propagation,
    multigrid_solve,
    two_level_solve,
    w_cycle_solve,
)


@pytest.fixture(scope="module")
def same_space_levels(same_space_hierarchy):
    return build_levels(same_space_hierarchy)


@pytest.fixture(scope="module")
def tri8_levels(tri8_hierarchy):
    return build_levels(tri8_hierarchy)


def load(levels):
    return assemble_load(levels[-1].space, forcing)


def test_levels_run_coarse_to_fine(tri8_levels):
    assert [level.n for level in tri8_levels] == sorted(level.n for level in tri8_levels)
    assert tri8_levels[0].coarse_solver is not None
    assert tri8_levels[0].transfer is None
    assert all(level.transfer is not None for level in tri8_levels[1:])
    assert all(level.lam > 0 for level in tri8_levels)


def test_exact_coarse_space_converges_in_one_cycle(same_space_levels):
    config = MultigridConfig(m1=0, m2=0)
    z, report = two_level_solve(same_space_levels, load(same_space_levels), config)
    assert report.converged
    assert report.iterations == 1


def test_zero_rhs_needs_no_cycles(tri8_levels):
    z, report = two_level_solve(tri8_levels, np.zeros(tri8_levels[-1].n), MultigridConfig())
    assert report.iterations == 0
    assert report.converged
    np.testing.assert_array_equal(z, 0.0)


def test_two_level_is_w_cycle_on_two_levels(tri8_levels):
    rhs = load(tri8_levels)
    config = MultigridConfig(m1=3, m2=3, max_iter=30)
    _, tl = two_level_solve(tri8_levels, rhs, config)
    _, w2 = w_cycle_solve(tri8_levels, rhs, config.model_copy(update={"levels": 2}))
    assert tl.residual_history == w2.residual_history


@pytest.mark.parametrize("cycle,n_levels", [(CycleType.TWO_LEVEL, 2), (CycleType.W_CYCLE, 3)])
def test_cycles_converge(tri8_levels, cycle, n_levels):
    rhs = load(tri8_levels)
    config = MultigridConfig(m1=3, m2=3, levels=n_levels, cycle=cycle)
    z, report = multigrid_solve(tri8_levels, rhs, config)
    A = tri8_levels[-1].A
    assert report.converged
    assert report.rho < 1
    assert np.linalg.norm(rhs - A @ z) <= config.tol_rel * np.linalg.norm(rhs) * 1.0001


def test_more_smoothing_needs_fewer_cycles(tri8_levels):
    rhs = load(tri8_levels)
    counts = [two_level_solve(tri8_levels, rhs, MultigridConfig(m1=m, m2=m))[1].iterations for m in (2, 8)]
    assert counts[1] <= counts[0]


def test_initial_guess_is_used(tri8_levels):
    rhs = load(tri8_levels)
    z, _ = two_level_solve(tri8_levels, rhs, MultigridConfig())
    _, report = two_level_solve(tri8_levels, rhs, MultigridConfig(), z0=z)
    assert report.residual_history[0] <= 1e-8 * np.linalg.norm(rhs) * 1.0001


def test_too_many_levels(tri8_levels):
    with pytest.raises(HierarchyError):
        w_cycle_solve(tri8_levels, load(tri8_levels), MultigridConfig(levels=4))


def test_error_propagation_vanishes_for_exact_coarse_space(same_space_levels):
    e = np.random.default_rng(0).standard_normal(same_space_levels[-1].n)
    propagated = error_propagation(same_space_levels, e, MultigridConfig(m1=0, m2=0))
    assert np.linalg.norm(propagated) <= 1e-10 * np.linalg.norm(e)


def test_algebraic_levels_are_galerkin(tri8_levels):
    A = tri8_levels[-1].A
    levels = build_algebraic_levels(A, max_coarse=100)
    assert len(levels) >= 2
    assert levels[-1].A is A or (levels[-1].A != A).nnz == 0
    for coarse, fine in zip(levels, levels[1:]):
        P, R = fine.transfer.prolongation, fine.transfer.restriction
        assert coarse.n == P.shape[1]
        galerkin = (R @ fine.A @ P).toarray()
        np.testing.assert_allclose(coarse.A.toarray(), galerkin, rtol=1e-12, atol=1e-12 * abs(galerkin).max())
        np.testing.assert_array_equal(np.asarray(P.sum(axis=1)).ravel(), 1.0)

import numpy as np
import pytest
from scipy.linalg import eigh

from app.core.exceptions import UsageError
from app.schemas.schemas import CycleType, MultigridConfig, PenaltyParams, StudyConfig
from app.services import analysis
from app.services.assembly import assemble_sipg, dg_norm_gram
from app.services.dgspace import build_space
from app.services.mesh import generate_voronoi_lloyd
from app.services.multigrid import build_levels


@pytest.fixture(scope="module")
def tri4_forms(tri4):
    space = build_space(tri4, 1)
    return assemble_sipg(space).matrix, dg_norm_gram(space).matrix


def test_coercivity_of_scaled_norm(tri4_forms):
    _, G = tri4_forms
    assert analysis.coercivity_constant(G, G) == pytest.approx(1.0, rel=1e-8)
    assert analysis.coercivity_constant(2.0 * G, G) == pytest.approx(2.0, rel=1e-8)


def test_coercivity_of_sipg(tri4_forms):
    A, G = tri4_forms
    value = analysis.coercivity_constant(A, G)
    smallest = np.min(np.real(np.linalg.eigvals(np.linalg.solve(G.toarray(), A.toarray()))))
    assert 0 < value < 1
    assert smallest <= value * (1 + 1e-10)
    assert value == pytest.approx(smallest, rel=1e-2)


def test_coercivity_study_rows():
    frame = analysis.coercivity_study(StudyConfig(sets=["tri:4"], degrees=[1, 2]))
    assert len(frame) == 2
    assert list(frame["p"]) == [1, 2]
    assert (frame["C_coer"] > 0).all()


def test_exact_coarse_space_contracts_to_zero(same_space_hierarchy):
    levels = build_levels(same_space_hierarchy)
    estimate = analysis.contraction_estimate(levels, MultigridConfig(m1=0, m2=0))
    assert estimate.contraction < 1e-8
    assert estimate.sigma_indicator == pytest.approx(same_space_hierarchy.fine.theta ** 2)


def test_two_level_contraction(tri8_hierarchy):
    levels = build_levels(tri8_hierarchy)
    estimate = analysis.contraction_estimate(levels, MultigridConfig(m1=3, m2=3), iterations=30)
    assert 0 < estimate.contraction < 1
    assert estimate.levels == 2
    assert estimate.p == 1
    deeper = analysis.contraction_estimate(
        levels, MultigridConfig(m1=3, m2=3, levels=3, cycle=CycleType.W_CYCLE), iterations=30
    )
    assert deeper.levels == 3
    assert deeper.contraction < 1


def test_contraction_study_rows():
    config = StudyConfig(sets=["tri:8"], degrees=[1], smoothing=[3], levels=[2, 3])
    frame = analysis.contraction_study(config)
    assert list(frame["levels"]) == [2, 3]
    assert (frame["contraction"] < 1).all()


def test_parse_mesh_set():
    assert analysis.parse_mesh_set("voronoi:512") == ("voronoi", 512)
    assert analysis.parse_mesh_set("tri:16") == ("tri", 16)
    assert analysis.parse_mesh_set("1024") == ("voronoi", 1024)
    with pytest.raises(UsageError):
        analysis.parse_mesh_set("hex:3")


def test_solver_levels():
    assert [analysis.solver_levels(s) for s in ("TL", "W3", "W4", "CG", "PCG")] == [2, 3, 4, 1, 1]
    for bad in ("W1", "V3", "tl"):
        with pytest.raises(UsageError):
            analysis.solver_levels(bad)


def test_smoothing_rule():
    config = StudyConfig(smoothing_rule="2p2")
    assert config.steps_for(1) == [2]
    assert config.steps_for(3) == [18]
    assert StudyConfig(smoothing=[3, 5]).steps_for(2) == [3, 5]


def test_iteration_table():
    config = StudyConfig(sets=["tri:8"], degrees=[1], smoothing=[3], solvers=["TL", "W3", "CG", "PCG"])
    frame = analysis.iteration_table(config)
    assert list(frame.columns) == analysis.ITERATION_COLUMNS
    assert list(frame["solver"]) == ["TL", "W3", "CG", "PCG"]
    assert list(frame["levels"]) == [2, 3, 1, 1]
    assert list(frame["m"]) == [3, 3, 0, 0]
    assert frame["converged"].all()
    assert (frame["rho"] < 1).all()

    text = analysis.format_iteration_table(frame)
    assert "TL" in text and "PCG" in text
    assert "(" in text


def test_format_marks_failures():
    import pandas as pd

    frame = pd.DataFrame([
        {"set": "a", "p": 1, "m": 3, "solver": "TL", "levels": 2, "iterations": 12, "rho": 0.2, "converged": True},
        {"set": "a", "p": 1, "m": 3, "solver": "W3", "levels": 3, "iterations": 50, "rho": 0.99, "converged": False},
    ])
    text = analysis.format_iteration_table(frame)
    assert "12 (0.20)" in text
    assert "-" in text
    assert analysis.format_iteration_table(frame.iloc[:0]) == ""


def test_amg_demo_reports_rho(tri8):
    report, n_levels = analysis.amg_failure_demo(tri8, 1, m=2, max_iter=5)
    assert n_levels >= 2
    assert report.iterations <= 5
    assert len(report.residual_history) == report.iterations + 1


def test_amg_study_rows():
    config = StudyConfig(sets=["tri:8"], degrees=[1], levels=[3], max_iter=20)
    frame = analysis.amg_study(config, m=3)
    assert list(frame["solver"]) == ["AMG-MIS", "W3"]
    assert list(frame.columns) == analysis.ITERATION_COLUMNS


def test_errors_decrease_under_refinement():
    errors, slopes = analysis.manufactured_convergence([1], [4, 8])
    assert list(errors["n"]) == [4, 8]
    assert errors["dg_error"].iloc[1] < errors["dg_error"].iloc[0]
    assert errors["l2_error"].iloc[1] < errors["l2_error"].iloc[0]
    assert len(slopes) == 1


@pytest.mark.slow
@pytest.mark.parametrize("p", [1, 2])
def test_optimal_rates(p):
    _, slopes = analysis.manufactured_convergence([p], [8, 16, 32])
    assert slopes["dg_slope"].iloc[0] == pytest.approx(p, abs=0.15)
    assert slopes["l2_slope"].iloc[0] == pytest.approx(p + 1, abs=0.2)


@pytest.mark.slow
def test_largest_eigenvalue_scales_like_inverse_h_squared():
    frame = analysis.eig_scaling_study([1], [8, 16, 32])
    ratios = frame["h_ratio"].dropna()
    assert ((ratios > 3.5) & (ratios < 4.5)).all()


@pytest.mark.slow
def test_coercivity_on_voronoi_hierarchy():
    frame = analysis.coercivity_study(StudyConfig(sets=["voronoi:256"], degrees=[1, 2], coercivity_levels=3))
    assert len(frame) == 6
    assert (frame["C_coer"] < 1).all()


def hexagonal_mesh(columns: int = 16, rows: int = 18):
    """Voronoi mesh of a staggered lattice: regular hexagons away from the boundary"""
    seeds = np.array([
        [(i + 0.25 + 0.5 * (j % 2)) / columns, (j + 0.5) / rows]
        for j in range(rows) for i in range(columns)
    ])
    return generate_voronoi_lloyd(len(seeds), lloyd_iters=0, seeds=seeds)


@pytest.fixture(params=["squares", "hexagons"])
def regular_space(request, square_grid):
    mesh = square_grid(16) if request.param == "squares" else hexagonal_mesh()
    return build_space(mesh, 1)


def test_continuity_constant(tri4_forms):
    A, G = tri4_forms
    assert analysis.continuity_constant(G, G) == pytest.approx(1.0, rel=1e-10)
    largest = eigh(A.toarray(), G.toarray(), eigvals_only=True)[-1]
    value = analysis.continuity_constant(A, G)
    assert value == pytest.approx(largest, rel=1e-10)
    assert analysis.coercivity_constant(A, G) < value <= 10


def test_continuity_constant_on_sparse_path(tri8):
    space = build_space(tri8, 2)
    A, G = assemble_sipg(space).matrix, dg_norm_gram(space).matrix
    assert A.shape[0] > analysis.DENSE_EIG_LIMIT
    largest = eigh(A.toarray(), G.toarray(), eigvals_only=True)[-1]
    assert analysis.continuity_constant(A, G) == pytest.approx(largest, rel=1e-5)


def test_coercivity_upper_bound_on_regular_meshes(regular_space):
    params = PenaltyParams(C_sigma=10.0, p=1)
    A, G = assemble_sipg(regular_space, params), dg_norm_gram(regular_space, params)
    bound = analysis.coercivity_upper_bound(regular_space, A, G)
    assert bound < 0.70
    assert analysis.coercivity_constant(A, G) <= bound * (1 + 1e-8)

    stiffer = PenaltyParams(C_sigma=40.0, p=1)
    stiffer_bound = analysis.coercivity_upper_bound(
        regular_space, assemble_sipg(regular_space, stiffer), dg_norm_gram(regular_space, stiffer)
    )
    assert stiffer_bound > bound + 0.05


def test_transfer_stability(tri8_hierarchy):
    ratios = analysis.transfer_stability(build_levels(tri8_hierarchy))
    assert ratios[0] is None
    assert len(ratios) == 3
    assert all(0 < r <= 10 for r in ratios[1:])


def test_identity_transfer_is_perfectly_stable(same_space_hierarchy):
    ratios = analysis.transfer_stability(build_levels(same_space_hierarchy))
    assert ratios[1] == pytest.approx(1.0, rel=1e-12)


def test_coercivity_study_records_diagnostics():
    frame = analysis.coercivity_study(StudyConfig(sets=["tri:8"], degrees=[1], coercivity_levels=2))
    assert list(frame.columns) == analysis.COERCIVITY_COLUMNS
    assert list(frame["level"]) == [1, 2]
    assert (frame["C_coer"] <= frame["C_coer_bound"] * (1 + 1e-8)).all()
    assert (frame["C_cont"] > frame["C_coer"]).all()
    assert (frame["C_cont"] <= 10).all()
    assert np.isnan(frame["stab_ratio"].iloc[0])
    assert 0 < frame["stab_ratio"].iloc[1] <= 10


def test_failed_mesh_set_becomes_non_converged_rows():
    config = StudyConfig(sets=["voronoi:2", "tri:4"], degrees=[1], smoothing=[3], solvers=["TL", "CG"])
    frame = analysis.iteration_table(config)
    failed = frame[frame["set"] == "voronoi:2"]
    assert list(failed["solver"]) == ["TL", "CG"]
    assert not failed["converged"].any()
    assert frame[frame["set"] == "tri:4"]["converged"].all()


def test_amg_study_survives_failures():
    frame = analysis.amg_study(StudyConfig(sets=["tri:1"], degrees=[1], levels=[3]))
    assert list(frame["solver"]) == ["AMG-MIS", "W3"]
    assert not frame["converged"].any()


def test_malformed_set_label_is_a_usage_error():
    with pytest.raises(UsageError):
        analysis.iteration_table(StudyConfig(sets=["hexagon:4"], degrees=[1], solvers=["CG"]))


@pytest.fixture(scope="module")
def voronoi512_table():
    config = StudyConfig(
        sets=["voronoi:512"], degrees=[1], smoothing=[3, 5, 8, 12, 16, 20], seed=1,
        solvers=["TL", "W3", "W4", "CG", "PCG"],
    )
    return analysis.iteration_table(config)


@pytest.mark.slow
def test_iteration_counts_do_not_grow_with_smoothing(voronoi512_table):
    for solver in ("TL", "W3", "W4"):
        counts = voronoi512_table[voronoi512_table["solver"] == solver]
        assert counts["converged"].all()
        assert counts["iterations"].is_monotonic_decreasing


@pytest.mark.slow
def test_two_level_beats_krylov_on_voronoi512(voronoi512_table):
    iterations = voronoi512_table.set_index(["solver", "m"])["iterations"]
    assert iterations["TL", 3] < iterations["PCG", 0] <= iterations["CG", 0]


@pytest.mark.slow
def test_w_cycle_counts_do_not_depend_on_depth(voronoi512_table):
    iterations = voronoi512_table.set_index(["solver", "m"])["iterations"]
    for m in (8, 20):
        three, four = iterations["W3", m], iterations["W4", m]
        assert abs(three - four) <= max(0.15 * max(three, four), 2)


@pytest.mark.slow
def test_coercivity_on_voronoi512_hierarchy():
    config = StudyConfig(sets=["voronoi:512"], degrees=[1], coercivity_levels=4, seed=1)
    frame = analysis.coercivity_study(config)
    assert len(frame) == 4
    assert ((frame["C_coer"] > 0.5) & (frame["C_coer"] < 0.7)).all()
    assert (frame["C_coer"] <= frame["C_coer_bound"] * (1 + 1e-8)).all()
    assert (frame["stab_ratio"].dropna() <= 10).all()


@pytest.mark.slow
def test_counts_grow_with_degree_at_fixed_smoothing():
    config = StudyConfig(sets=["voronoi:512"], degrees=[1, 2, 3], smoothing=[5], seed=1, solvers=["TL", "CG", "PCG"])
    frame = analysis.iteration_table(config)
    two_level = frame[frame["solver"] == "TL"]["iterations"]
    assert two_level.is_monotonic_increasing
    assert two_level.iloc[-1] > two_level.iloc[0]
    cubic = frame[frame["p"] == 3].set_index("solver")["iterations"]
    assert cubic["PCG"] < cubic["CG"]


@pytest.mark.slow
def test_contraction_with_quadratic_smoothing():
    config = StudyConfig(sets=["voronoi:512"], degrees=[1, 2, 3, 4], levels=[2], smoothing_rule="2p2", seed=1)
    frame = analysis.contraction_study(config)
    assert list(frame["m"]) == [2, 8, 18, 32]
    assert (frame["contraction"] < 1).all()
    assert frame["contraction"].max() <= 2 * frame["contraction"].min()


@pytest.mark.slow
def test_largest_eigenvalue_grows_with_degree():
    frame = analysis.eig_scaling_study([1, 2], [8])
    ratio = frame["p_ratio"].dropna().iloc[0]
    assert 4 < ratio < 24


@pytest.mark.slow
def test_unsmoothed_aggregation_stalls_where_geometric_cycle_converges():
    config = StudyConfig(sets=["voronoi:512"], degrees=[1], levels=[3], seed=1, max_iter=1000)
    frame = analysis.amg_study(config, m=5).set_index("solver")
    algebraic = frame.loc["AMG-MIS"]
    assert not algebraic["converged"] or algebraic["rho"] >= 0.99
    assert frame.loc["W3", "converged"]

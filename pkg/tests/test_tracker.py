"""Tests for per-segment convex tracking: Δv′, guess, problem build, solve.

The module fixture flies the first five-orbit segment of a small
semi-major-axis raise and solves its cone program once; individual tests
probe the pieces (metric anchors, guess construction against synthetic flat
profiles, transition-matrix consistency, solver behavior on degenerate and
randomized problems, cross-checks against an independent cvxpy model).
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltmpc.constants import G0_MS2, MU_EARTH_KM3_S2
from ltmpc.coords import (
    CartesianState,
    EquinoctialElements,
    GEqOEState,
    KeplerianElements,
    cart_to_geqoe,
    cart_to_kep,
    geqoe_to_cart,
    kep_to_cart,
    mean_argument_of_latitude,
    mean_mee_lam_from_cart,
)
from ltmpc.dynamics import (
    ForceModel,
    SpacecraftConfig,
    compute_stm,
    julian_date,
    step_map,
)
from ltmpc.reference import Phase, ReferenceTrajectory, TransferTarget, generate_reference
from ltmpc.tracker import (
    DEFAULT_DVP_WEIGHT,
    SegmentConfig,
    SegmentGuess,
    SegmentProblem,
    SegmentSolution,
    _dvp_terminal_map,
    build_segment_problem,
    delta_v_prime,
    initial_guess_segment,
    solve_segment,
)

cp = pytest.importorskip("cvxpy")

SC = SpacecraftConfig(
    mass_kg=800.0, thrust_n=0.060, isp_s=1300.0, duty_cycle=0.5,
    drag_coeff=2.2, drag_area_m2=0.01,
)
FM = ForceModel(include_j2=True, include_drag=True)
EPOCH_JD = julian_date("2022-03-25T00:00:00Z")
STATE0 = kep_to_cart(KeplerianElements(
    a_km=6728.1363, e=0.004, i_rad=math.radians(98.3),
    raan_rad=math.radians(15.3), argp_rad=0.0, ta_rad=0.0,
))


@pytest.fixture(scope="module")
def small_ref() -> ReferenceTrajectory:
    """Ten-kilometer raise: cheap to generate, realistic gate geometry."""
    return generate_reference(
        STATE0, 800.0, TransferTarget(a_km=6738.1363), SC,
        dc_ref=0.4, epoch_jd=EPOCH_JD, force_model=FM,
    )


@pytest.fixture(scope="module")
def segment_trio(small_ref):
    """Guess, problem and solution of the first five-orbit segment."""
    seg = SegmentConfig(n_orbits=5, nodes_per_orbit=36, n_run=0)
    guess = initial_guess_segment(STATE0, 800.0, small_ref, seg, SC, force_model=FM)
    problem = build_segment_problem(guess, small_ref, seg, SC, force_model=FM)
    solution = solve_segment(problem)
    return guess, problem, solution


def _mean_elements(state: CartesianState) -> EquinoctialElements:
    ym = mean_mee_lam_from_cart(state)
    return EquinoctialElements(
        p_km=float(ym[0]), f=float(ym[1]), g=float(ym[2]),
        h=float(ym[3]), k=float(ym[4]), L_rad=float(ym[5]),
    )


def _flat_reference(
    f_t_kms2: float,
    dc_ref: float,
    *,
    beta_rad: float = 0.0,
    i_dir: float = 0.0,
    n_nodes: int = 25,
    dt_s: float = 240.0,
) -> ReferenceTrajectory:
    """Constant-profile reference on a uniform grid (for guess unit tests)."""
    t = np.arange(n_nodes) * dt_s
    a0 = 6728.1363
    phases: tuple[Phase, ...] = ()
    if i_dir != 0.0:
        phases = (Phase(
            t0_s=0.0, t1_s=float(t[-1]), thrusting=True,
            a0_km=a0, i0_rad=math.radians(98.3),
            a1_km=a0, i1_rad=math.radians(98.3),
            v0_kms=math.sqrt(MU_EARTH_KM3_S2 / a0), beta0_rad=beta_rad,
            dv_leg_ms=1.0, dv_base_ms=0.0, m0_kg=800.0, i_dir=i_dir,
            mdot_kg_s=0.0, ve_ms=SC.isp_s * G0_MS2,
        ),)
    return ReferenceTrajectory(
        t_s=t,
        f_t_kms2=np.full(n_nodes, f_t_kms2),
        beta_rad=np.full(n_nodes, beta_rad),
        a_km=np.full(n_nodes, a0),
        i_rad=np.full(n_nodes, math.radians(98.3)),
        raan_rad=np.full(n_nodes, math.radians(15.3)),
        dv_cum_ms=np.zeros(n_nodes),
        mass_kg=np.full(n_nodes, 800.0),
        thrust_on=np.full(n_nodes, f_t_kms2 > 0.0),
        dv_total_ms=0.0,
        tof_days=float(t[-1]) / 86400.0,
        dc_ref=dc_ref,
        epoch_jd=EPOCH_JD,
        r0_km=STATE0.r_km.copy(),
        v0_kms=STATE0.v_kms.copy(),
        target=TransferTarget(a_km=a0),
        phases=phases,
        switch_t_s=np.array([]),
    )


# ---------------------------------------------------------------------------
# Δv′ metric
# ---------------------------------------------------------------------------

def test_delta_v_prime_semimajor_anchor():
    """A 1 km gap on a circular LEO costs about 0.572 m/s, all in Δv_a."""
    cur = EquinoctialElements(p_km=6728.1363, f=0.0, g=0.0, h=0.0, k=0.0, L_rad=0.0)
    tgt = EquinoctialElements(p_km=6729.1363, f=0.0, g=0.0, h=0.0, k=0.0, L_rad=0.0)
    vec, norm = delta_v_prime(cur, tgt)
    assert vec[1] == 0.0 and vec[2] == 0.0
    assert norm == pytest.approx(0.57200, abs=1e-4)
    assert norm == abs(vec[0])


def test_delta_v_prime_zero_gap():
    """Coincident elements cost nothing."""
    cur = EquinoctialElements(p_km=6900.0, f=0.001, g=-0.002, h=1.1, k=0.3, L_rad=2.0)
    vec, norm = delta_v_prime(cur, cur)
    assert norm == 0.0
    assert np.all(vec == 0.0)


@settings(max_examples=80, deadline=None)
@given(
    a=st.floats(6600.0, 7400.0),
    scale=st.floats(0.01, 100.0),
    da=st.floats(-50.0, 50.0),
    dh=st.floats(-0.01, 0.01),
    dk=st.floats(-0.01, 0.01),
)
def test_delta_v_prime_homogeneous(a, scale, da, dh, dk):
    """The metric is degree-1 homogeneous in the (Δa, Δh, Δk) gaps jointly."""
    cur = EquinoctialElements(p_km=a, f=0.001, g=-0.002, h=1.15, k=0.31, L_rad=0.4)
    a_cur = a / (1.0 - cur.f**2 - cur.g**2)
    one = EquinoctialElements(p_km=a_cur + da, f=0.0, g=0.0,
                              h=cur.h + dh, k=cur.k + dk, L_rad=0.0)
    sca = EquinoctialElements(p_km=a_cur + scale * da, f=0.0, g=0.0,
                              h=cur.h + scale * dh, k=cur.k + scale * dk, L_rad=0.0)
    v1, _ = delta_v_prime(cur, one)
    vs, _ = delta_v_prime(cur, sca)
    assert np.allclose(vs, scale * v1, rtol=1e-6, atol=1e-6)


# ---------------------------------------------------------------------------
# segment configuration
# ---------------------------------------------------------------------------

def test_segment_config_defaults_and_window():
    seg = SegmentConfig()
    assert seg.nodes_per_orbit == 36
    assert seg.n_orbits == 5
    assert seg.dn == 180
    nxt = seg.advanced()
    assert nxt.n_run == 180 and nxt.dn == 180


def test_segment_config_validation():
    with pytest.raises(ValueError):
        SegmentConfig(nodes_per_orbit=7)
    with pytest.raises(ValueError):
        SegmentConfig(n_orbits=0)
    with pytest.raises(ValueError):
        SegmentConfig(n_run=-1)


# ---------------------------------------------------------------------------
# initial guess
# ---------------------------------------------------------------------------

def test_guess_masses_follow_rocket_equation(segment_trio):
    """Stored masses replay the rocket equation on the stored accelerations."""
    guess, _, _ = segment_trio
    ve = SC.isp_s * G0_MS2
    m = 800.0
    for i in range(guess.n_intervals):
        a = float(np.linalg.norm(guess.accels_rtn_kms2[i]))
        dt = float(guess.t_s[i + 1] - guess.t_s[i])
        m /= math.exp(a * dt * 1e3 / ve)
        assert guess.masses_kg[i + 1] == pytest.approx(m, rel=1e-12)
    assert np.all(guess.accels_rtn_kms2[-1] == 0.0)
    assert set(np.unique(guess.eta)) <= {0.0, 1.0}


def test_guess_respects_thrust_bound(segment_trio):
    """No guess node exceeds the instantaneous thrust acceleration bound."""
    guess, _, _ = segment_trio
    norms = np.linalg.norm(guess.accels_rtn_kms2[:-1], axis=1)
    bounds = SC.thrust_n / guess.masses_kg[:-1] * 1e-3
    assert np.all(norms <= bounds)
    assert np.any(norms > 0.0)


def test_guess_is_dynamically_consistent(segment_trio):
    """Each stored node steps to the next under the stored acceleration."""
    guess, _, _ = segment_trio
    k = guess.n_intervals
    for i in (0, 1, k // 2, k - 1):
        nxt = step_map(
            guess.geqoe[i], float(guess.masses_kg[i]),
            float(guess.t_s[i + 1] - guess.t_s[i]),
            guess.accels_rtn_kms2[i], SC, FM,
        )
        scale = np.maximum(np.abs(guess.geqoe[i + 1]), 1e-3)
        assert np.max(np.abs(nxt - guess.geqoe[i + 1]) / scale) < 1e-9


def test_guess_tracks_reference_endpoint(small_ref):
    """The first segment's guess ends near the reference profile."""
    seg = SegmentConfig(n_orbits=5, nodes_per_orbit=36, n_run=0)
    guess = initial_guess_segment(STATE0, 800.0, small_ref, seg, SC, force_model=FM)
    ke = cart_to_kep(CartesianState(guess.cart[-1, :3], guess.cart[-1, 3:]))
    t_end = float(guess.t_s[-1])
    assert abs(ke.a_km - float(small_ref.a_at(t_end))) < 50.0
    assert abs(math.degrees(ke.i_rad - float(small_ref.i_at(t_end)))) < 0.05


def test_guess_on_coasting_profile_is_ballistic():
    """A zero-thrust profile produces zero accels and constant mass."""
    ref = _flat_reference(0.0, 0.4)
    seg = SegmentConfig(n_orbits=1, nodes_per_orbit=8, n_run=0)
    guess = initial_guess_segment(STATE0, 800.0, ref, seg, SC, force_model=FM)
    assert np.all(guess.accels_rtn_kms2 == 0.0)
    assert np.all(guess.masses_kg == 800.0)


def test_guess_reproduces_constant_profile_exactly():
    """With a unit duty reference the sampled magnitude is the profile value."""
    f_small = 1.0e-9
    ref = _flat_reference(f_small, 1.0)
    seg = SegmentConfig(n_orbits=1, nodes_per_orbit=8, n_run=0)
    guess = initial_guess_segment(STATE0, 800.0, ref, seg, SC, force_model=FM)
    assert np.all(guess.eta[:-1] == 1.0)
    assert np.all(guess.accels_rtn_kms2[:-1, 1] == f_small)
    assert np.all(guess.accels_rtn_kms2[:-1, [0, 2]] == 0.0)


def test_guess_caps_profile_at_thrust_bound():
    """A profile beyond the thrust bound saturates just inside the bound."""
    ref = _flat_reference(1.0, 1.0)
    seg = SegmentConfig(n_orbits=1, nodes_per_orbit=8, n_run=0)
    guess = initial_guess_segment(STATE0, 800.0, ref, seg, SC, force_model=FM)
    for i in range(guess.n_intervals):
        cap = (1.0 - 1e-12) * SC.max_accel_kms2(float(guess.masses_kg[i]))
        assert np.linalg.norm(guess.accels_rtn_kms2[i]) == pytest.approx(cap, rel=1e-12)


def test_guess_normal_sign_alternates_by_hemisphere():
    """The out-of-plane sign follows cos(u) in the ascending hemisphere."""
    ref = _flat_reference(1.0e-9, 1.0, beta_rad=0.3, i_dir=1.0)
    seg = SegmentConfig(n_orbits=2, nodes_per_orbit=8, n_run=0)
    guess = initial_guess_segment(STATE0, 800.0, ref, seg, SC, force_model=FM)
    checked = 0
    for i in range(guess.n_intervals):
        ym = mean_mee_lam_from_cart(CartesianState(guess.cart[i, :3], guess.cart[i, 3:]))
        cu = math.cos(mean_argument_of_latitude(ym))
        if abs(cu) < 0.2:
            continue
        assert math.copysign(1.0, guess.accels_rtn_kms2[i, 2]) == math.copysign(1.0, cu)
        checked += 1
    assert checked >= 8


def test_guess_input_validation(small_ref):
    with pytest.raises(ValueError):
        initial_guess_segment(STATE0, -1.0, small_ref, SegmentConfig(), SC,
                              force_model=FM)
    too_far = SegmentConfig(n_run=small_ref.n_nodes)
    with pytest.raises(ValueError):
        initial_guess_segment(STATE0, 800.0, small_ref, too_far, SC, force_model=FM)


# ---------------------------------------------------------------------------
# problem build
# ---------------------------------------------------------------------------

def test_problem_bounds_target_and_offset(segment_trio, small_ref):
    """Bounds, target and terminal offset are exactly their definitions."""
    guess, problem, _ = segment_trio
    assert np.array_equal(problem.bounds_kms2,
                          SC.thrust_n / guess.masses_kg[:-1] * 1e-3)
    assert problem.target == small_ref.target_elements_at(float(guess.t_s[-1]))
    end_state = geqoe_to_cart(GEqOEState.from_array(guess.geqoe[-1]),
                              include_j2=FM.include_j2)
    vec, _ = delta_v_prime(_mean_elements(end_state), problem.target)
    assert np.array_equal(problem.dvp_offset_ms, vec)
    assert problem.dvp_weight == DEFAULT_DVP_WEIGHT


def test_problem_validation_rejects_bad_fields(segment_trio):
    _, problem, _ = segment_trio
    with pytest.raises(ValueError):
        dataclasses.replace(problem, bounds_kms2=-problem.bounds_kms2)
    with pytest.raises(ValueError):
        dataclasses.replace(problem, dvp_weight=0.0)
    with pytest.raises(ValueError):
        dataclasses.replace(problem, dt_s=np.zeros_like(problem.dt_s))
    with pytest.raises(ValueError):
        dataclasses.replace(problem, dvp_jac=np.zeros((2, 6)))


def test_stm_chain_matches_single_node_maps(segment_trio):
    """The batched transition chain agrees with per-node evaluation."""
    guess, problem, _ = segment_trio
    for i in (0, guess.n_intervals // 2, guess.n_intervals - 1):
        a_i, b_i, _ = compute_stm(
            guess.geqoe[i], float(guess.masses_kg[i]),
            float(guess.t_s[i + 1] - guess.t_s[i]),
            guess.accels_rtn_kms2[i], SC, FM,
            bound_kms2=float(problem.bounds_kms2[i]),
        )
        assert np.allclose(a_i, problem.stm_a[i], rtol=1e-3,
                           atol=1e-6 * float(np.abs(a_i).max()))
        assert np.allclose(b_i, problem.stm_b[i], rtol=1e-3,
                           atol=1e-6 * float(np.abs(b_i).max()))


def test_dvp_jacobian_step_insensitive(segment_trio):
    """The terminal-map Jacobian is stable to the finite-difference step."""
    guess, problem, _ = segment_trio
    off6, jac6 = _dvp_terminal_map(guess.geqoe[-1], problem.target,
                                   FM.include_j2, fd_scale=1e-6)
    off7, jac7 = _dvp_terminal_map(guess.geqoe[-1], problem.target,
                                   FM.include_j2, fd_scale=1e-7)
    assert np.array_equal(off6, off7)
    scale = np.maximum(np.abs(jac6), 1e-3 * np.abs(jac6).max())
    assert np.max(np.abs(jac6 - jac7) / scale) < 1e-4


# ---------------------------------------------------------------------------
# solver: degenerate cases
# ---------------------------------------------------------------------------

def _synthetic_problem(
    rng: np.random.Generator,
    k: int,
    *,
    bound: float = 1.0e-7,
    g0: np.ndarray | None = None,
    weight: float = DEFAULT_DVP_WEIGHT,
) -> SegmentProblem:
    """Small hand-built problem with near-identity transition matrices."""
    x0 = cart_to_geqoe(STATE0, include_j2=True).as_array()
    t = np.arange(k + 1) * 150.0
    accels = np.zeros((k + 1, 3))
    guess = SegmentGuess(
        t_s=t,
        cart=np.tile(np.hstack([STATE0.r_km, STATE0.v_kms]), (k + 1, 1)),
        geqoe=np.tile(x0, (k + 1, 1)),
        accels_rtn_kms2=accels,
        masses_kg=np.full(k + 1, 800.0),
        eta=np.zeros(k + 1),
    )
    stm_a = np.tile(np.eye(6), (k, 1, 1)) + rng.normal(size=(k, 6, 6)) * 1e-4
    stm_b = rng.normal(size=(k, 6, 3)) * 1e2
    target = EquinoctialElements(p_km=6728.1363, f=0.0, g=0.0,
                                 h=1.15, k=0.31, L_rad=0.0)
    return SegmentProblem(
        guess=guess, stm_a=stm_a, stm_b=stm_b, x0_geqoe=x0, target=target,
        bounds_kms2=np.full(k, bound), dt_s=np.diff(t),
        dvp_offset_ms=np.zeros(3) if g0 is None else np.asarray(g0, dtype=float),
        dvp_jac=rng.normal(size=(3, 6)) * 1e3,
        dvp_weight=weight,
    )


def test_null_problem_solves_to_zero():
    """Zero terminal gap and zero guess thrust keep the solution at rest."""
    problem = _synthetic_problem(np.random.default_rng(3), k=6)
    sol = solve_segment(problem)
    assert sol.solver_status == "optimal"
    assert np.max(np.abs(sol.accels_rtn_kms2)) < 1e-12
    assert abs(sol.objective_ms) < 1e-5
    assert sol.dv_prime_ms < 1e-5


def test_zero_bound_gives_ballistic_solution():
    """With no thrust authority the solution coasts and Δv′ is the gap."""
    g0 = np.array([0.31, -0.12, 0.05])
    problem = _synthetic_problem(np.random.default_rng(4), k=5, bound=0.0, g0=g0)
    sol = solve_segment(problem)
    assert sol.solver_status == "optimal"
    assert np.all(sol.accels_rtn_kms2 == 0.0)
    assert sol.dv_segment_ms == 0.0
    assert sol.dv_prime_ms == pytest.approx(float(np.linalg.norm(g0)), rel=1e-15)
    assert sol.iterations == 0


def test_single_node_segment_coasts():
    """A one-node window has no intervals; the terminal gap is the answer."""
    x0 = cart_to_geqoe(STATE0, include_j2=True).as_array()
    guess = SegmentGuess(
        t_s=np.array([0.0]),
        cart=np.hstack([STATE0.r_km, STATE0.v_kms])[None, :],
        geqoe=x0[None, :],
        accels_rtn_kms2=np.zeros((1, 3)),
        masses_kg=np.array([800.0]),
        eta=np.zeros(1),
    )
    g0 = np.array([0.2, 0.1, -0.3])
    problem = SegmentProblem(
        guess=guess, stm_a=np.empty((0, 6, 6)), stm_b=np.empty((0, 6, 3)),
        x0_geqoe=x0, target=EquinoctialElements(6728.1363, 0.0, 0.0, 1.1, 0.3, 0.0),
        bounds_kms2=np.empty(0), dt_s=np.empty(0),
        dvp_offset_ms=g0, dvp_jac=np.zeros((3, 6)),
    )
    sol = solve_segment(problem)
    assert sol.solver_status == "optimal"
    assert sol.dv_prime_ms == pytest.approx(float(np.linalg.norm(g0)), rel=1e-15)
    assert np.array_equal(sol.x_end_geqoe, x0)


def test_guess_over_bound_reports_infeasible(segment_trio):
    """A guess that violates its own bounds is rejected, not clipped."""
    _, problem, _ = segment_trio
    squeezed = dataclasses.replace(problem, bounds_kms2=problem.bounds_kms2 * 0.5)
    sol = solve_segment(squeezed)
    assert sol.solver_status == "infeasible"
    zeroed = dataclasses.replace(problem, bounds_kms2=problem.bounds_kms2 * 0.0)
    sol = solve_segment(zeroed)
    assert sol.solver_status == "infeasible"


# ---------------------------------------------------------------------------
# solver: real segment and independent reference
# ---------------------------------------------------------------------------

def test_solution_feasible_and_not_worse_than_guess(segment_trio):
    """Cone feasibility and objective dominance over the feasible guess."""
    _, problem, sol = segment_trio
    assert sol.solver_status == "optimal"
    norms = np.linalg.norm(sol.accels_rtn_kms2[:-1], axis=1)
    assert np.max(norms - problem.bounds_kms2) <= 1e-9 * float(problem.bounds_kms2.max())
    assert sol.objective_ms <= problem.guess_objective_ms + 1e-9
    assert sol.primal_residual <= 1e-8
    assert sol.dual_residual <= 1e-8


def test_solution_improves_terminal_gap(segment_trio):
    """The weighted solve never worsens the terminal Δv′ of the guess."""
    _, problem, sol = segment_trio
    assert sol.dv_prime_ms <= float(np.linalg.norm(problem.dvp_offset_ms)) + 1e-9


def test_linear_prediction_matches_propagation(segment_trio):
    """Propagating the solved controls lands on the affine prediction."""
    guess, problem, sol = segment_trio
    ve = SC.isp_s * G0_MS2
    x = guess.geqoe[0].copy()
    m = float(guess.masses_kg[0])
    for i in range(guess.n_intervals):
        dt = float(guess.t_s[i + 1] - guess.t_s[i])
        x = step_map(x, m, dt, sol.accels_rtn_kms2[i], SC, FM)
        m /= math.exp(float(np.linalg.norm(sol.accels_rtn_kms2[i])) * dt * 1e3 / ve)
    scale = np.maximum(np.abs(sol.x_end_geqoe), 1e-3)
    assert np.max(np.abs(x - sol.x_end_geqoe) / scale) < 1e-4


def test_solver_is_deterministic(segment_trio, small_ref):
    """Identical problems produce bit-identical solutions and rebuilds."""
    guess, problem, sol = segment_trio
    again = solve_segment(problem)
    assert np.array_equal(again.accels_rtn_kms2, sol.accels_rtn_kms2)
    assert again.dv_prime_ms == sol.dv_prime_ms
    assert again.objective_ms == sol.objective_ms
    seg = SegmentConfig(n_orbits=5, nodes_per_orbit=36, n_run=0)
    rebuilt = build_segment_problem(guess, small_ref, seg, SC, force_model=FM)
    assert np.array_equal(rebuilt.stm_a, problem.stm_a)
    assert np.array_equal(rebuilt.stm_b, problem.stm_b)
    assert np.array_equal(rebuilt.dvp_jac, problem.dvp_jac)


def _cvxpy_objective(problem: SegmentProblem) -> float:
    """Independent natural-form model of a segment problem (physical units)."""
    k = problem.n_intervals
    scale = float(problem.bounds_kms2.max())
    a_hat = problem.guess.accels_rtn_kms2[:-1] / scale
    da = [cp.Variable(3) for _ in range(k)]
    atil = cp.Variable(k)
    tv = cp.Variable()
    dx: object = np.zeros(6)
    for i in range(k):
        dx = problem.stm_a[i] @ dx + (problem.stm_b[i] * scale) @ da[i]
    dvp = problem.dvp_offset_ms + problem.dvp_jac @ dx
    cons = [cp.norm(a_hat[i] + da[i]) <= atil[i] for i in range(k)]
    cons.append(atil <= problem.bounds_kms2 / scale)
    cons.append(atil >= 0)
    cons.append(cp.norm(dvp) <= tv)
    cost = (problem.dt_s * scale * 1e3) @ atil + problem.dvp_weight * tv
    ref = cp.Problem(cp.Minimize(cost), cons)
    ref.solve(solver=cp.CLARABEL)
    assert ref.status == "optimal"
    return float(ref.value)


def test_small_segments_match_independent_reference(small_ref):
    """Real twelve-node windows agree with an independent cone model."""
    weights = (2.0, 1.5, 3.0, 2.0, 10.0, 2.0)
    for idx, (n_run, w) in enumerate(zip((0, 300, 700, 1100, 1600, 2300), weights)):
        seg = SegmentConfig(n_orbits=1, nodes_per_orbit=12, n_run=n_run)
        guess = initial_guess_segment(STATE0, 800.0, small_ref, seg, SC,
                                      force_model=FM)
        problem = build_segment_problem(guess, small_ref, seg, SC,
                                        force_model=FM, dvp_weight=w)
        sol = solve_segment(problem)
        assert sol.solver_status == "optimal", f"window {idx}"
        want = _cvxpy_objective(problem)
        assert sol.objective_ms == pytest.approx(want, rel=1e-6, abs=1e-8), (
            f"window {idx}: {sol.objective_ms} vs {want}")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_problem_round_trips_through_json(segment_trio):
    _, problem, _ = segment_trio
    back = SegmentProblem.from_dict(json.loads(json.dumps(problem.to_dict())))
    assert np.array_equal(back.stm_a, problem.stm_a)
    assert np.array_equal(back.stm_b, problem.stm_b)
    assert np.array_equal(back.guess.geqoe, problem.guess.geqoe)
    assert np.array_equal(back.dvp_offset_ms, problem.dvp_offset_ms)
    assert back.target == problem.target
    assert back.dvp_weight == problem.dvp_weight


def test_solution_round_trips_through_json(segment_trio):
    _, _, sol = segment_trio
    back = SegmentSolution.from_dict(json.loads(json.dumps(sol.to_dict())))
    assert np.array_equal(back.accels_rtn_kms2, sol.accels_rtn_kms2)
    assert back.dv_prime_ms == sol.dv_prime_ms
    assert back.objective_ms == sol.objective_ms
    assert back.solver_status == sol.solver_status
    assert np.array_equal(back.x_end_geqoe, sol.x_end_geqoe)

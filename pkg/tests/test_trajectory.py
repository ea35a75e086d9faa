import numpy as np
import pytest

from terrainopt import rotations, trajectory
from terrainopt.stability import default_model
from terrainopt.trajectory import (
    GAIT_NAMES,
    MotionPlan,
    UnknownGaitError,
    base_kinematics,
    basis_row,
    constant_plan,
    eval_plan,
    expand_gait,
    foothold_offset,
    leg_position_schedule,
    pack,
    slack_offset,
    unpack,
    vector_size,
)

MODEL = default_model()


# -- rotation algebra (underpins all task Jacobians) -------------------------


def fd_jac(f, x, eps=1e-7):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        d = np.zeros_like(x)
        d[k] = eps
        cols.append((f(x + d) - f(x - d)) / (2 * eps))
    return np.stack(cols, axis=-1)


def test_rotation_matrix_partials_fd():
    rng = np.random.default_rng(0)
    for _ in range(10):
        eta = rng.uniform(-1.2, 1.2, 3)
        r, dr = rotations.rotation_matrix_partials(eta)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        for k in range(3):
            fd = fd_jac(lambda e: rotations.rotation_matrix(e).ravel(), eta)[:, k]
            np.testing.assert_allclose(dr[k].ravel(), fd, atol=1e-7)


def test_rate_map_partials_fd():
    rng = np.random.default_rng(1)
    for _ in range(10):
        eta = rng.uniform(-1.2, 1.2, 3)
        c, dc, d2c = rotations.rate_map_partials(eta)
        np.testing.assert_allclose(c, rotations.rate_map(eta), atol=1e-14)
        for k in range(3):
            fd = fd_jac(lambda e: rotations.rate_map(e).ravel(), eta)[:, k]
            np.testing.assert_allclose(dc[k].ravel(), fd, atol=1e-7)
            for j in range(3):
                fd2 = fd_jac(lambda e: rotations.rate_map_partials(e)[1][k].ravel(), eta)[:, j]
                np.testing.assert_allclose(d2c[k][j].ravel(), fd2, atol=1e-6)


def test_angular_momentum_rate_partials_fd():
    rng = np.random.default_rng(2)
    inertia = MODEL.inertia
    for _ in range(10):
        eta = rng.uniform(-1.0, 1.0, 3)
        etad = rng.normal(0, 1, 3)
        etadd = rng.normal(0, 2, 3)
        ldot, j_eta, j_etad, j_etadd = rotations.angular_momentum_rate_partials(
            eta, etad, etadd, inertia
        )
        np.testing.assert_allclose(
            ldot,
            rotations.angular_momentum_rate_world(eta, etad, etadd, inertia),
            atol=1e-12,
        )
        fd_eta = fd_jac(
            lambda e: rotations.angular_momentum_rate_world(e, etad, etadd, inertia), eta
        )
        fd_etad = fd_jac(
            lambda v: rotations.angular_momentum_rate_world(eta, v, etadd, inertia), etad
        )
        fd_etadd = fd_jac(
            lambda a: rotations.angular_momentum_rate_world(eta, etad, a, inertia), etadd
        )
        np.testing.assert_allclose(j_eta, fd_eta, atol=1e-5)
        np.testing.assert_allclose(j_etad, fd_etad, atol=1e-6)
        np.testing.assert_allclose(j_etadd, fd_etadd, atol=1e-6)


def test_angular_momentum_partials_fd():
    rng = np.random.default_rng(3)
    inertia = MODEL.inertia
    eta = rng.uniform(-1, 1, 3)
    etad = rng.normal(0, 1, 3)
    l, j_eta, j_etad = rotations.angular_momentum_partials(eta, etad, inertia)
    np.testing.assert_allclose(
        l, rotations.angular_momentum_world(eta, etad, inertia), atol=1e-14
    )
    np.testing.assert_allclose(
        j_eta, fd_jac(lambda e: rotations.angular_momentum_world(e, etad, inertia), eta),
        atol=1e-6,
    )
    np.testing.assert_allclose(
        j_etad, fd_jac(lambda v: rotations.angular_momentum_world(eta, v, inertia), etad),
        atol=1e-6,
    )


# -- gaits --------------------------------------------------------------------


def test_trot_phase_sequence():
    gait = expand_gait("trot", 0.8)
    kinds = []
    for phase in gait.phases:
        n = int(phase.contact.sum())
        if n == 4:
            kinds.append("full")
        else:
            swinging = {trajectory.LEG_NAMES[i] for i in range(4) if not phase.contact[i]}
            kinds.append(frozenset(swinging))
    assert kinds == ["full", frozenset({"LF", "RH"}), "full", frozenset({"RF", "LH"})]
    np.testing.assert_allclose([p.duration for p in gait.phases], [0.1, 0.3, 0.1, 0.3])


def test_crawl_single_swings_between_triple_stances():
    gait = expand_gait("crawl")
    swing_counts = [4 - int(p.contact.sum()) for p in gait.phases]
    assert swing_counts == [0, 1, 0, 1, 0, 1, 0, 1]
    assert all(int(p.contact.sum()) >= 3 for p in gait.phases)


def test_amble_has_no_triple_stance():
    gait = expand_gait("amble")
    assert all(int(p.contact.sum()) == 2 for p in gait.phases)


def test_running_trot_has_flight():
    gait = expand_gait("running-trot")
    assert any(int(p.contact.sum()) == 0 for p in gait.phases)


@pytest.mark.parametrize("name", GAIT_NAMES)
def test_phase_partition_property(name):
    gait = expand_gait(name)
    total = sum(p.duration for p in gait.phases)
    assert total == pytest.approx(gait.stride, abs=1e-12)
    starts = [p.start for p in gait.phases]
    for k in range(len(starts) - 1):
        assert starts[k + 1] == pytest.approx(starts[k] + gait.phases[k].duration, abs=1e-12)
    for p in gait.phases:
        assert 0 <= int(p.contact.sum()) <= 4
    # contact flags constant within each phase
    for p in gait.phases:
        for frac in (0.25, 0.5, 0.75):
            t = p.start + frac * p.duration
            np.testing.assert_array_equal(gait.contact_flags(t), p.contact)


def test_unknown_gait_raises():
    with pytest.raises(UnknownGaitError):
        expand_gait("bound")


def test_stride_scaling():
    gait = expand_gait("trot", 1.6)
    np.testing.assert_allclose([p.duration for p in gait.phases], [0.2, 0.6, 0.2, 0.6])


def test_touchdown_times():
    gait = expand_gait("trot", 0.8)
    events = gait.touchdown_times(0.0, 1.6)
    times = [t for t, _ in events]
    np.testing.assert_allclose(times, [0.4, 0.8, 1.2, 1.6])


def test_phases_from_rotation():
    gait = expand_gait("trot", 0.8)
    seq = gait.phases_from(0.4)
    assert seq[0].start == pytest.approx(0.4)
    assert [p.start for p in seq] == pytest.approx([0.4, 0.5, 0.8 % 0.8, 0.1])


# -- plan evaluation -----------------------------------------------------------


def simple_plan(coeffs, durations=None):
    coeffs = np.asarray(coeffs, dtype=float)
    n_s = coeffs.shape[0]
    durations = np.ones(n_s) * 0.5 if durations is None else durations
    return MotionPlan(
        durations=durations,
        coeffs=coeffs,
        p_meas=np.zeros((4, 3)),
        footholds=np.zeros((4, 3)),
        slacks=np.zeros(n_s),
    )


def test_eval_constant_segment():
    coeffs = np.zeros((1, 6, 5))
    coeffs[0, :, 0] = np.arange(6)
    plan = simple_plan(coeffs)
    np.testing.assert_allclose(eval_plan(plan, 0.3, 0), np.arange(6))
    np.testing.assert_allclose(eval_plan(plan, 0.3, 1), 0.0)


def test_eval_quadratic_acceleration():
    coeffs = np.zeros((1, 6, 5))
    coeffs[0, 0, 2] = 1.0  # x = t^2
    plan = simple_plan(coeffs)
    np.testing.assert_allclose(eval_plan(plan, 0.2, 2)[0], 2.0)


def test_eval_junction_continuity_after_fit():
    # Least-squares fit of sin(t) over two segments with C1 junction
    # equalities (KKT solve) - the junction limits must then agree.
    rng = np.random.default_rng(4)
    tau = 0.5
    ts1 = np.linspace(0, tau, 12)
    ts2 = np.linspace(0, tau, 12)
    a1 = np.stack([ts1**k for k in range(5)], axis=1)
    a2 = np.stack([ts2**k for k in range(5)], axis=1)
    big_a = np.block(
        [[a1, np.zeros_like(a2)], [np.zeros_like(a1), a2]]
    )
    target = np.concatenate([np.sin(ts1), np.sin(tau + ts2)])
    end0 = basis_row(tau, 0)
    end1 = basis_row(tau, 1)
    start0 = basis_row(0.0, 0)
    start1 = basis_row(0.0, 1)
    c_eq = np.stack(
        [
            np.concatenate([end0, -start0]),
            np.concatenate([end1, -start1]),
        ]
    )
    kkt = np.block(
        [
            [big_a.T @ big_a, c_eq.T],
            [c_eq, np.zeros((2, 2))],
        ]
    )
    rhs = np.concatenate([big_a.T @ target, np.zeros(2)])
    sol = np.linalg.solve(kkt, rhs)
    coeffs = np.zeros((2, 6, 5))
    coeffs[0, 0] = sol[:5]
    coeffs[1, 0] = sol[5:10]
    plan = simple_plan(coeffs, durations=np.array([tau, tau]))
    left0 = coeffs[0, 0] @ end0
    right0 = coeffs[1, 0] @ start0
    left1 = coeffs[0, 0] @ end1
    right1 = coeffs[1, 0] @ start1
    assert left0 == pytest.approx(right0, abs=1e-8)
    assert left1 == pytest.approx(right1, abs=1e-8)
    assert eval_plan(plan, tau - 1e-12, 0)[0] == pytest.approx(
        eval_plan(plan, tau + 1e-12, 0)[0], abs=1e-8
    )


def test_eval_derivative_fd_consistency():
    rng = np.random.default_rng(5)
    coeffs = rng.normal(size=(2, 6, 5))
    plan = simple_plan(coeffs, durations=np.array([0.4, 0.6]))
    eps = 1e-6
    for t in (0.13, 0.31, 0.72):
        d1 = eval_plan(plan, t, 1)
        fd1 = (eval_plan(plan, t + eps, 0) - eval_plan(plan, t - eps, 0)) / (2 * eps)
        np.testing.assert_allclose(d1, fd1, rtol=1e-6, atol=1e-6)
        d2 = eval_plan(plan, t, 2)
        fd2 = (eval_plan(plan, t + eps, 1) - eval_plan(plan, t - eps, 1)) / (2 * eps)
        np.testing.assert_allclose(d2, fd2, rtol=1e-6, atol=1e-5)


# -- base kinematics ------------------------------------------------------------


def test_base_kinematics_identity_rotation():
    coeffs = np.zeros((1, 6, 5))
    plan = simple_plan(coeffs)
    kin = base_kinematics(plan, 0.2, MODEL)
    np.testing.assert_allclose(kin["R_B"], np.eye(3), atol=1e-14)


def test_base_kinematics_yaw_rate_only():
    coeffs = np.zeros((1, 6, 5))
    coeffs[0, 3, 1] = 0.7  # yaw rate
    plan = simple_plan(coeffs)
    kin = base_kinematics(plan, 0.25, MODEL)
    np.testing.assert_allclose(kin["omega_body"], [0.0, 0.0, 0.7], atol=1e-12)


def test_base_kinematics_ldot_matches_fd():
    rng = np.random.default_rng(6)
    coeffs = rng.normal(size=(1, 6, 5)) * 0.5
    plan = simple_plan(coeffs)
    t = 0.21
    eps = 1e-6
    kin = base_kinematics(plan, t, MODEL)
    l_plus = base_kinematics(plan, t + eps, MODEL)["L_B"]
    l_minus = base_kinematics(plan, t - eps, MODEL)["L_B"]
    fd = (l_plus - l_minus) / (2 * eps)
    np.testing.assert_allclose(kin["Ldot_B"], fd, rtol=1e-6, atol=1e-6)


# -- pack / unpack ---------------------------------------------------------------


def test_pack_unpack_roundtrip():
    rng = np.random.default_rng(7)
    n_s = 4
    plan = MotionPlan(
        durations=np.array([0.1, 0.3, 0.1, 0.3]),
        coeffs=rng.normal(size=(n_s, 6, 5)),
        p_meas=rng.normal(size=(4, 3)),
        footholds=rng.normal(size=(4, 3)),
        slacks=-rng.random(n_s),
    )
    x = pack(plan)
    assert x.size == vector_size(n_s)
    back = unpack(x, plan.durations)
    np.testing.assert_array_equal(back.coeffs, plan.coeffs)
    np.testing.assert_array_equal(back.p_meas, plan.p_meas)
    np.testing.assert_array_equal(back.footholds, plan.footholds)
    np.testing.assert_array_equal(back.slacks, plan.slacks)
    np.testing.assert_array_equal(pack(back), x)


def test_zero_vector_zero_plan():
    durations = np.array([0.2, 0.2])
    x = np.zeros(vector_size(2))
    with pytest.raises(ValueError):
        unpack(np.zeros(3), durations)
    plan = unpack(x, durations)
    assert not plan.coeffs.any() and not plan.footholds.any() and not plan.slacks.any()


def test_offset_formulas():
    n_s = 4
    assert slack_offset(n_s, 2) == 30 * n_s + 24 + 2
    assert foothold_offset(n_s, 3) == 30 * n_s + 12 + 9
    x = np.zeros(vector_size(n_s))
    x[slack_offset(n_s, 1)] = -0.25
    plan = unpack(x, np.ones(n_s))
    assert plan.slacks[1] == -0.25


def test_leg_position_schedule_trot():
    gait = expand_gait("trot", 0.8)
    phases = gait.phases_from(0.0)
    use_desired = leg_position_schedule(phases)
    # LF/RH land at the start of phase 2 (index 2): desired from then on.
    np.testing.assert_array_equal(use_desired[:, 0], [False, False, True, True])
    np.testing.assert_array_equal(use_desired[:, 3], [False, False, True, True])
    # RF/LH land only at the horizon end: never desired in-horizon.
    np.testing.assert_array_equal(use_desired[:, 1], [False, False, False, False])


def test_constant_plan_initial_guess():
    gait = expand_gait("trot", 0.8)
    phases = gait.phases_from(0.0)
    pose = np.array([0.1, 0.2, 0.5, 0.0, 0.0, 0.0])
    twist = np.array([0.4, 0.0, 0.0, 0.0, 0.0, 0.0])
    feet = np.zeros((4, 3))
    plan = constant_plan(phases, pose, twist, feet)
    np.testing.assert_allclose(eval_plan(plan, 0.0, 0), pose)
    np.testing.assert_allclose(eval_plan(plan, 0.0, 1), twist)
    # consecutive segments chain the constant twist
    np.testing.assert_allclose(eval_plan(plan, 0.35, 0), pose + twist * 0.35, atol=1e-12)

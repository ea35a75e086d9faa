import itertools

import numpy as np
import pytest

from terrainopt.solver import (
    Linearization,
    QPProblem,
    SqpOptions,
    kkt_residual,
    solve_qp,
    sqp_solve,
)


# -- QP ------------------------------------------------------------------------


def test_qp_unconstrained():
    qp = QPProblem(H=np.eye(2), g=np.array([-1.0, -1.0]))
    sol = solve_qp(qp, regularization=0.0)
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-10)


def test_qp_single_bound_active():
    # min 0.5 x^2 s.t. x >= 1  (as -x <= -1)
    qp = QPProblem(
        H=np.array([[1.0]]),
        g=np.array([0.0]),
        C_ineq=np.array([[-1.0]]),
        d_ineq=np.array([-1.0]),
    )
    sol = solve_qp(qp, regularization=0.0)
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [1.0], atol=1e-10)
    np.testing.assert_allclose(sol.ineq_multipliers, [1.0], atol=1e-10)


def test_qp_equality_only():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 5))
    b = rng.normal(size=2)
    h = np.eye(5)
    qp = QPProblem(H=h, g=rng.normal(size=5), A_eq=a, b_eq=b)
    sol = solve_qp(qp, regularization=0.0)
    assert sol.status == "optimal"
    np.testing.assert_allclose(a @ sol.x, b, atol=1e-8)
    # KKT solve oracle
    kkt = np.block([[h, a.T], [a, np.zeros((2, 2))]])
    ref = np.linalg.solve(kkt, np.concatenate([-qp.g, b]))
    np.testing.assert_allclose(sol.x, ref[:5], atol=1e-8)
    np.testing.assert_allclose(sol.eq_multipliers, ref[5:], atol=1e-8)


def enumerate_qp_oracle(qp):
    """Best KKT point over every active-set combination (small problems)."""
    n = qp.n
    m = qp.C_ineq.shape[0]
    best = None
    for r in range(m + 1):
        for combo in itertools.combinations(range(m), r):
            rows = qp.C_ineq[list(combo)]
            a_full = np.vstack([qp.A_eq, rows])
            b_full = np.concatenate([qp.b_eq, qp.d_ineq[list(combo)]])
            k = a_full.shape[0]
            kkt = np.block([[qp.H, a_full.T], [a_full, np.zeros((k, k))]])
            rhs = np.concatenate([-qp.g, b_full])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            mults = sol[n + qp.A_eq.shape[0]:]
            if np.any(qp.C_ineq @ x - qp.d_ineq > 1e-8):
                continue
            if np.any(mults < -1e-8):
                continue
            val = 0.5 * x @ qp.H @ x + qp.g @ x
            if best is None or val < best[0] - 1e-12:
                best = (val, x)
    return best[1]


def test_qp_random_matches_enumeration():
    rng = np.random.default_rng(1)
    for trial in range(30):
        n, m = 6, 8
        a = rng.normal(size=(n, n))
        h = a @ a.T + 0.5 * np.eye(n)
        g = rng.normal(size=n)
        c = rng.normal(size=(m, n))
        # feasible by construction: a known interior point
        x_feas = rng.normal(size=n)
        d = c @ x_feas + rng.uniform(0.05, 1.5, m)
        qp = QPProblem(H=h, g=g, C_ineq=c, d_ineq=d)
        sol = solve_qp(qp, regularization=0.0)
        assert sol.status == "optimal"
        ref = enumerate_qp_oracle(qp)
        np.testing.assert_allclose(sol.x, ref, atol=1e-6)
        assert np.all(c @ sol.x - d <= 1e-8)


def test_qp_infeasibility_agrees_with_lp():
    from scipy.optimize import linprog

    rng = np.random.default_rng(9)
    seen_infeasible = 0
    for _ in range(40):
        n, m = 5, 9
        a = rng.normal(size=(n, n))
        qp = QPProblem(
            H=a @ a.T + 0.3 * np.eye(n),
            g=rng.normal(size=n),
            C_ineq=rng.normal(size=(m, n)),
            d_ineq=rng.normal(size=m) - 0.5,
        )
        sol = solve_qp(qp)
        lp = linprog(
            c=np.zeros(n), A_ub=qp.C_ineq, b_ub=qp.d_ineq, bounds=(None, None),
            method="highs",
        )
        lp_feasible = lp.status == 0
        assert (sol.status == "optimal") == lp_feasible
        seen_infeasible += not lp_feasible
    assert seen_infeasible > 0  # the sweep must exercise both outcomes


def test_qp_ten_var_three_active():
    rng = np.random.default_rng(2)
    n = 10
    a = rng.normal(size=(n, n))
    h = a @ a.T + np.eye(n)
    g = rng.normal(size=n) * 3
    # three constraints passing near the unconstrained optimum, made active
    x_unc = np.linalg.solve(h, -g)
    c = rng.normal(size=(3, n))
    d = c @ x_unc - np.array([0.5, 0.3, 0.4])  # each row violated at x_unc
    qp = QPProblem(H=h, g=g, C_ineq=c, d_ineq=d)
    sol = solve_qp(qp, regularization=0.0)
    assert sol.status == "optimal"
    assert sol.active_set == [0, 1, 2]
    kkt = np.block([[h, c.T], [c, np.zeros((3, 3))]])
    ref = np.linalg.solve(kkt, np.concatenate([-g, d]))
    np.testing.assert_allclose(sol.x, ref[:n], atol=1e-8)
    np.testing.assert_allclose(sol.ineq_multipliers, ref[n:], atol=1e-8)


def test_qp_inconsistent_equalities_infeasible():
    qp = QPProblem(
        H=np.eye(2),
        g=np.zeros(2),
        A_eq=np.array([[1.0, 0.0], [1.0, 0.0]]),
        b_eq=np.array([0.0, 1.0]),
    )
    sol = solve_qp(qp)
    assert sol.status == "infeasible"


def test_qp_infeasible_inequalities():
    qp = QPProblem(
        H=np.eye(1),
        g=np.zeros(1),
        C_ineq=np.array([[1.0], [-1.0]]),
        d_ineq=np.array([-1.0, -1.0]),  # x <= -1 and x >= 1
    )
    sol = solve_qp(qp)
    assert sol.status == "infeasible"


def test_qp_feasibility_tolerances():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n, m = 8, 12
        a = rng.normal(size=(n, n))
        h = a @ a.T + 0.3 * np.eye(n)
        qp = QPProblem(
            H=h,
            g=rng.normal(size=n),
            A_eq=rng.normal(size=(2, n)),
            b_eq=rng.normal(size=2),
            C_ineq=rng.normal(size=(m, n)),
            d_ineq=rng.normal(size=m) + 1.0,
        )
        sol = solve_qp(qp)
        assert sol.status == "optimal"
        np.testing.assert_allclose(qp.A_eq @ sol.x, qp.b_eq, atol=1e-8)
        assert np.all(qp.C_ineq @ sol.x - qp.d_ineq <= 1e-8)


def test_qp_determinism():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(6, 6))
    qp_args = dict(
        H=a @ a.T + np.eye(6),
        g=rng.normal(size=6),
        C_ineq=rng.normal(size=(10, 6)),
        d_ineq=rng.normal(size=10),
    )
    s1 = solve_qp(QPProblem(**qp_args))
    s2 = solve_qp(QPProblem(**qp_args))
    np.testing.assert_array_equal(s1.x, s2.x)
    assert s1.iterations == s2.iterations
    assert s1.active_set == s2.active_set


# -- SQP -------------------------------------------------------------------------


class ResidualNLP:
    """Gauss-Newton NLP from residual callables (analytic Jacobians)."""

    def __init__(self, residuals, weights, jacobians, eq=None, ineq=None, n=2):
        self.residuals = residuals
        self.weights = weights
        self.jacobians = jacobians
        self.eq = eq or []
        self.ineq = ineq or []
        self.n = n

    def eval_terms(self, x):
        f = 0.0
        for g_fn, w in zip(self.residuals, self.weights):
            r = np.atleast_1d(g_fn(x))
            f += 0.5 * w * float(r @ r)
        c_eq = np.array([fn(x) for fn, _ in self.eq]) if self.eq else np.zeros(0)
        c_in = np.array([fn(x) for fn, _ in self.ineq]) if self.ineq else np.zeros(0)
        return f, c_eq, c_in

    def linearize(self, x):
        f, c_eq, c_in = self.eval_terms(x)
        h = np.zeros((self.n, self.n))
        g = np.zeros(self.n)
        for g_fn, w, j_fn in zip(self.residuals, self.weights, self.jacobians):
            r = np.atleast_1d(g_fn(x))
            j = np.atleast_2d(j_fn(x))
            h += w * j.T @ j
            g += w * j.T @ r
        a_eq = (
            np.stack([jac(x) for _, jac in self.eq]) if self.eq else np.zeros((0, self.n))
        )
        c_inj = (
            np.stack([jac(x) for _, jac in self.ineq]) if self.ineq else np.zeros((0, self.n))
        )
        return Linearization(
            f=f, H=h, g=g, A_eq=a_eq, c_eq=c_eq, C_ineq=c_inj, c_ineq=c_in
        )


def quadratic_nlp():
    # residual g = x - (2, -1): minimum at (2, -1)
    target = np.array([2.0, -1.0])
    return ResidualNLP(
        residuals=[lambda x: x - target],
        weights=[1.0],
        jacobians=[lambda x: np.eye(2)],
    )


def rosenbrock_nlp():
    return ResidualNLP(
        residuals=[lambda x: np.array([1.0 - x[0], 10.0 * (x[1] - x[0] ** 2)])],
        weights=[2.0],
        jacobians=[
            lambda x: np.array([[-1.0, 0.0], [-20.0 * x[0], 10.0]])
        ],
    )


def test_sqp_quadratic_one_iteration():
    res = sqp_solve(quadratic_nlp(), np.zeros(2))
    assert res.status == "converged"
    assert res.iterations <= 2
    np.testing.assert_allclose(res.x, [2.0, -1.0], atol=1e-6)


def test_sqp_rosenbrock():
    res = sqp_solve(rosenbrock_nlp(), np.array([-1.2, 1.0]), SqpOptions(max_iterations=60))
    assert res.status == "converged"
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-5)


def test_sqp_warm_start_zero_step():
    nlp = rosenbrock_nlp()
    first = sqp_solve(nlp, np.array([-1.2, 1.0]), SqpOptions(max_iterations=60))
    warm = sqp_solve(nlp, first.x)
    assert warm.status == "converged"
    assert warm.iterations == 1
    assert warm.step_norms == [0.0]
    np.testing.assert_array_equal(warm.x, first.x)


def test_sqp_constrained_problem():
    # min ||x - (2,0)||^2 s.t. x0 + x1 = 1, x0 <= 0.6
    nlp = ResidualNLP(
        residuals=[lambda x: x - np.array([2.0, 0.0])],
        weights=[1.0],
        jacobians=[lambda x: np.eye(2)],
        eq=[(lambda x: x[0] + x[1] - 1.0, lambda x: np.array([1.0, 1.0]))],
        ineq=[(lambda x: x[0] - 0.6, lambda x: np.array([1.0, 0.0]))],
    )
    res = sqp_solve(nlp, np.zeros(2))
    assert res.status == "converged"
    np.testing.assert_allclose(res.x, [0.6, 0.4], atol=1e-6)
    assert res.constraint_violation <= 1e-8


def test_sqp_merit_non_increasing():
    res = sqp_solve(rosenbrock_nlp(), np.array([-1.2, 1.0]), SqpOptions(max_iterations=60))
    merits = res.merit_history
    assert all(b <= a + 1e-9 for a, b in zip(merits, merits[1:]))


def test_sqp_infeasible_linearization_relaxed():
    nlp = ResidualNLP(
        residuals=[lambda x: x],
        weights=[1.0],
        jacobians=[lambda x: np.eye(2)],
        ineq=[
            (lambda x: x[0] - 1.0, lambda x: np.array([1.0, 0.0])),
            (lambda x: -x[0] + 2.0, lambda x: np.array([-1.0, 0.0])),  # x0 >= 2 and <= 1
        ],
    )
    res = sqp_solve(nlp, np.zeros(2))
    assert res.status == "relaxed"


def test_kkt_residual_reports():
    nlp = quadratic_nlp()
    at_opt = kkt_residual(nlp, np.array([2.0, -1.0]), (np.zeros(0), np.zeros(0)))
    assert at_opt == pytest.approx(0.0, abs=1e-12)
    away = kkt_residual(nlp, np.array([0.0, 0.0]), (np.zeros(0), np.zeros(0)))
    assert away > 0.1


def test_kkt_residual_hand_computed():
    # min 0.5 ||x||^2 s.t. x0 = 1: at x=(1,0), lambda=-1 it is exactly zero;
    # with lambda=0 the stationarity gap is |x0| = 1.
    nlp = ResidualNLP(
        residuals=[lambda x: x],
        weights=[1.0],
        jacobians=[lambda x: np.eye(2)],
        eq=[(lambda x: x[0] - 1.0, lambda x: np.array([1.0, 0.0]))],
    )
    x = np.array([1.0, 0.0])
    assert kkt_residual(nlp, x, (np.array([-1.0]), np.zeros(0))) == pytest.approx(0.0, abs=1e-12)
    assert kkt_residual(nlp, x, (np.array([0.0]), np.zeros(0))) == pytest.approx(1.0)


def test_sqp_options_validation():
    with pytest.raises(ValueError):
        SqpOptions(kkt_tol=2.0)
    with pytest.raises(ValueError):
        SqpOptions(max_iterations=0)

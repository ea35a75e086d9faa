"""Dense convex-QP solver (dual active set) and an SQP driver.

``solve_qp`` implements the Goldfarb-Idnani dual method for strictly convex
problems: starting from the unconstrained minimizer it adds violated
constraints one at a time, taking combined primal/dual steps and dropping
blocking constraints, so every iterate stays dual feasible.  Equalities are
added first and never dropped.  Linear algebra is dense (Cholesky of the
regularized Hessian, small KKT re-solves), which is the right trade for the
few-hundred-variable problems produced here.

``sqp_solve`` iterates Gauss-Newton linearizations of a task-based NLP,
globalized by a backtracking line search on an exact l1 penalty of the
constraint violation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr, qr_delete, qr_insert, solve_triangular


@dataclass
class QPProblem:
    """min 0.5 x'Hx + g'x  s.t.  A x = b,  C x <= d."""

    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    C_ineq: np.ndarray | None = None
    d_ineq: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n = self.g.size
        if self.H.shape != (n, n):
            raise ValueError("H/g dimension mismatch")
        if self.A_eq is None:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        if self.C_ineq is None:
            self.C_ineq = np.zeros((0, n))
            self.d_ineq = np.zeros(0)
        self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.C_ineq = np.asarray(self.C_ineq, dtype=float).reshape(-1, n)
        self.d_ineq = np.asarray(self.d_ineq, dtype=float).reshape(-1)
        if self.A_eq.shape[0] != self.b_eq.size or self.C_ineq.shape[0] != self.d_ineq.size:
            raise ValueError("constraint row/rhs mismatch")

    @property
    def n(self) -> int:
        return self.g.size


@dataclass
class QPSolution:
    x: np.ndarray
    status: str  # "optimal" | "infeasible"
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    iterations: int
    active_set: list[int] = field(default_factory=list)


class ActiveSetCycleError(RuntimeError):
    pass


def solve_qp(qp: QPProblem, regularization: float = 1e-8,
             feas_tol: float = 1e-9) -> QPSolution:
    """Goldfarb-Idnani dual active-set solve of a strictly convex QP.

    The Hessian is regularized by ``regularization * I``, then the problem is
    Jacobi-scaled (unit Hessian diagonal, unit-norm constraint rows) before
    the dual iteration; solutions and multipliers are mapped back.
    Deterministic: equalities first, then most-violated selection with
    smallest-index tie-breaks, no randomized pivoting.
    """
    n = qp.n
    g_raw = qp.H + regularization * np.eye(n)
    # symmetric diagonal (Jacobi) scaling for mixed task weights
    dcol = 1.0 / np.sqrt(np.maximum(np.diag(g_raw), 1e-300))
    g_mat = g_raw * dcol[:, None] * dcol[None, :]
    g_vec = qp.g * dcol
    try:
        chol = cho_factor(g_mat, lower=True)
    except np.linalg.LinAlgError as err:
        raise ValueError("Hessian not positive definite after regularization") from err
    l_factor = np.tril(chol[0])

    def ginv(v):
        return cho_solve(chol, v)

    m_eq = qp.A_eq.shape[0]
    m_in = qp.C_ineq.shape[0]
    # GI convention: normals with n_i' x >= b_i; our rows are negated.
    normals = np.vstack([-qp.A_eq, -qp.C_ineq]) if m_eq + m_in else np.zeros((0, n))
    rhs = np.concatenate([-qp.b_eq, -qp.d_ineq])
    is_eq = np.arange(m_eq + m_in) < m_eq
    if normals.size:
        normals = normals * dcol[None, :]
        row_scale = np.linalg.norm(normals, axis=1)
        row_scale = np.where(row_scale > 1e-300, row_scale, 1.0)
        normals = normals / row_scale[:, None]
        rhs = rhs / row_scale
    else:
        row_scale = np.ones(0)

    x = ginv(-g_vec)
    active: list[int] = []
    signs: list[float] = []  # equality normals may enter negated
    u = np.zeros(0)
    pending_eq = list(range(m_eq))
    # QR of W = L^-1 N_active (full mode); kept in sync with `active`
    q_fac: np.ndarray | None = None
    r_fac: np.ndarray | None = None

    scale = max(1.0, float(np.abs(rhs).max()) if rhs.size else 1.0)
    max_iter = 50 * (n + m_eq + m_in + 1)
    iterations = 0

    def infeasible():
        return QPSolution(
            x=dcol * x, status="infeasible",
            eq_multipliers=np.zeros(m_eq), ineq_multipliers=np.zeros(m_in),
            iterations=iterations,
            active_set=sorted(j - m_eq for j in active if not is_eq[j]),
        )

    while True:
        iterations += 1
        if iterations > max_iter:
            raise ActiveSetCycleError("active-set iteration limit exceeded")

        # -- select the next constraint: equalities first, then most violated.
        if pending_eq:
            p = pending_eq.pop(0)
            s_p = float(normals[p] @ x - rhs[p])
            sign = -1.0 if s_p > 0 else 1.0
        else:
            candidates = [i for i in range(m_eq, m_eq + m_in) if i not in active]
            if not candidates:
                break
            slacks = normals[candidates] @ x - rhs[candidates]
            worst = int(np.argmin(slacks))
            if slacks[worst] >= -feas_tol * scale:
                break
            p = candidates[worst]
            sign = 1.0
        n_plus = sign * normals[p]
        b_plus = sign * rhs[p]
        incoming = 0.0

        # -- primal/dual steps until p joins the active set.
        while True:
            iterations += 1
            if iterations > max_iter:
                raise ActiveSetCycleError("active-set iteration limit exceeded")
            s_p = float(n_plus @ x - b_plus)
            if s_p >= -feas_tol * scale and not is_eq[p] and incoming <= 0.0:
                break  # violation vanished numerically; nothing to add
            w_plus = solve_triangular(l_factor, n_plus, lower=True)
            q = len(active)
            if q:
                qt_w = q_fac.T @ w_plus
                w_perp = w_plus - q_fac[:, :q] @ qt_w[:q]
                r = solve_triangular(r_fac[:q, :q], qt_w[:q], lower=False)
            else:
                w_perp = w_plus
                r = np.zeros(0)
            z = solve_triangular(l_factor.T, w_perp, lower=False)

            t1 = np.inf
            k_drop = -1
            for k, j in enumerate(active):
                if not is_eq[j] and r[k] > 1e-13:
                    ratio = u[k] / r[k]
                    if ratio < t1 - 1e-15:
                        t1 = ratio
                        k_drop = k
            # z'n+ = |w_perp|^2; judge "z = 0" against the unprojected |w+|^2.
            denom = float(w_perp @ w_perp)
            curvature = float(w_plus @ w_plus)
            primal_ok = denom > 1e-12 * max(curvature, 1e-300)
            t2 = max(-s_p, 0.0) / denom if primal_ok else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                return infeasible()
            if np.isfinite(t2) and t == t2:
                # full step: move to the constraint and add it
                x = x + t * z
                if active:
                    u = u - t * r
                incoming += t
                if q:
                    q_fac, r_fac = qr_insert(q_fac, r_fac, w_plus, q, which="col")
                else:
                    q_fac, r_fac = qr(w_plus[:, None], mode="full")
                active.append(p)
                signs.append(sign)
                u = np.append(u, incoming)
                break
            # partial step: move as far as the blocking multiplier allows
            if primal_ok:
                x = x + t * z
            if active:
                u = u - t * r
            incoming += t
            q_fac, r_fac = qr_delete(q_fac, r_fac, k_drop, which="col")
            del active[k_drop]
            del signs[k_drop]
            u = np.delete(u, k_drop)

    # Verify every row (including active ones) before reporting success; a
    # numerically corrupted active set must fail loudly, not silently.
    if m_eq + m_in:
        final_slacks = normals @ x - rhs
        errors = np.where(is_eq, np.abs(final_slacks), np.maximum(-final_slacks, 0.0))
        if errors.max() > 1e-6 * scale:
            raise ActiveSetCycleError(
                f"numerical failure: residual violation {errors.max():.3e} at exit"
            )

    eq_mult = np.zeros(m_eq)
    in_mult = np.zeros(m_in)
    for k, j in enumerate(active):
        # stationarity: (H+reg) x + g = sum_k u_k sign_k (-row_j); undo the
        # row normalization when mapping back to original-row multipliers.
        if is_eq[j]:
            eq_mult[j] = signs[k] * u[k] / row_scale[j]
        else:
            in_mult[j - m_eq] = u[k] / row_scale[j]
    return QPSolution(
        x=dcol * x, status="optimal",
        eq_multipliers=eq_mult, ineq_multipliers=in_mult,
        iterations=iterations,
        active_set=sorted(j - m_eq for j in active if not is_eq[j]),
    )


# -- SQP ----------------------------------------------------------------------


@dataclass
class Linearization:
    """Gauss-Newton model of the NLP at a point.

    Constraint semantics for a step d: ``c_eq + A_eq d = 0`` and
    ``c_ineq + C_ineq d <= 0``.
    """

    f: float
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray
    c_eq: np.ndarray
    C_ineq: np.ndarray
    c_ineq: np.ndarray


@dataclass
class SqpOptions:
    max_iterations: int = 20
    kkt_tol: float = 1e-6
    merit_penalty: float = 10.0
    penalty_margin: float = 2.0
    backtrack_factor: float = 0.5
    min_step: float = 2.0**-10
    armijo: float = 1e-4
    regularization: float = 1e-8

    def __post_init__(self):
        if min(
            self.max_iterations, self.kkt_tol, self.merit_penalty,
            self.penalty_margin, self.backtrack_factor, self.min_step,
            self.armijo, self.regularization,
        ) <= 0:
            raise ValueError("all SQP options must be positive")
        if self.kkt_tol >= 1:
            raise ValueError("kkt_tol must be < 1")


@dataclass
class SqpResult:
    x: np.ndarray
    status: str  # "converged" | "max_iterations" | "relaxed"
    iterations: int
    kkt: float
    objective: float
    constraint_violation: float
    timing_ms: float
    merit_history: list[float] = field(default_factory=list)
    step_norms: list[float] = field(default_factory=list)


def constraint_violation(c_eq: np.ndarray, c_ineq: np.ndarray) -> float:
    v = 0.0
    if c_eq.size:
        v = max(v, float(np.abs(c_eq).max()))
    if c_ineq.size:
        v = max(v, float(np.maximum(c_ineq, 0.0).max()))
    return v


def merit_value(f, c_eq, c_ineq, penalty):
    total = float(np.abs(c_eq).sum()) if c_eq.size else 0.0
    total += float(np.maximum(c_ineq, 0.0).sum()) if c_ineq.size else 0.0
    return f + penalty * total


def _kkt_from_linearization(lin: Linearization, lam: np.ndarray, mu: np.ndarray) -> float:
    stat = lin.g.copy()
    if lin.A_eq.size:
        stat = stat + lin.A_eq.T @ lam
    if lin.C_ineq.size:
        stat = stat + lin.C_ineq.T @ mu
    parts = [float(np.abs(stat).max()) if stat.size else 0.0,
             constraint_violation(lin.c_eq, lin.c_ineq)]
    if mu.size:
        parts.append(float(np.abs(mu * lin.c_ineq).max()))
        parts.append(float(np.maximum(-mu, 0.0).max()))
    return max(parts)


def kkt_residual(nlp, x: np.ndarray, multipliers: tuple[np.ndarray, np.ndarray]) -> float:
    """Max-norm KKT error: stationarity, feasibility, complementarity, sign."""
    lin = nlp.linearize(x)
    lam, mu = multipliers
    return _kkt_from_linearization(lin, lam, mu)


def _solve_qp_relaxed(lin: Linearization, regularization: float) -> QPSolution:
    """Elastic fallback: a shared slack on every constraint row restores a
    non-empty feasible set; used only for best-effort diagnosis."""
    n = lin.g.size
    big = 1e6
    h = np.zeros((n + 1, n + 1))
    h[:n, :n] = lin.H
    h[n, n] = big  # keeps the elastic variable well scaled
    g = np.concatenate([lin.g, [big]])
    a_eq = np.zeros((0, n + 1))
    b_eq = np.zeros(0)
    rows = []
    rhs = []
    if lin.A_eq.size:
        rows.append(np.hstack([lin.A_eq, -np.ones((lin.A_eq.shape[0], 1))]))
        rhs.append(-lin.c_eq)
        rows.append(np.hstack([-lin.A_eq, -np.ones((lin.A_eq.shape[0], 1))]))
        rhs.append(lin.c_eq)
    if lin.C_ineq.size:
        rows.append(np.hstack([lin.C_ineq, -np.ones((lin.C_ineq.shape[0], 1))]))
        rhs.append(-lin.c_ineq)
    rows.append(np.concatenate([np.zeros(n), [-1.0]])[None, :])
    rhs.append(np.zeros(1))
    qp = QPProblem(
        H=h, g=g, A_eq=a_eq, b_eq=b_eq,
        C_ineq=np.vstack(rows), d_ineq=np.concatenate(rhs),
    )
    sol = solve_qp(qp, regularization=max(regularization, 1e-8))
    sol.x = sol.x[:n]
    return sol


def sqp_solve(nlp, x0: np.ndarray, opts: SqpOptions | None = None) -> SqpResult:
    """Gauss-Newton SQP with an l1-merit backtracking line search.

    ``nlp`` must provide ``linearize(x) -> Linearization`` and
    ``eval_terms(x) -> (f, c_eq, c_ineq)``.  Warm-startable by passing the
    previous solution as ``x0``.
    """
    opts = opts or SqpOptions()
    x = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    penalty = opts.merit_penalty
    merit_history: list[float] = []
    step_norms: list[float] = []
    status = "max_iterations"
    kkt = np.inf
    t_start = time.perf_counter()
    iterations = 0

    for _ in range(opts.max_iterations):
        iterations += 1
        lin = nlp.linearize(x)
        qp = QPProblem(
            H=lin.H, g=lin.g,
            A_eq=lin.A_eq, b_eq=-lin.c_eq,
            C_ineq=lin.C_ineq, d_ineq=-lin.c_ineq,
        )
        sol = solve_qp(qp, regularization=opts.regularization)
        if sol.status == "infeasible":
            # Empty linearized feasible set: take one elastic-relaxed step as
            # a best-effort diagnosis and stop.
            relaxed = _solve_qp_relaxed(lin, opts.regularization)
            x = x + relaxed.x
            status = "relaxed"
            step_norms.append(float(np.linalg.norm(relaxed.x)))
            break
        d = sol.x

        kkt = _kkt_from_linearization(lin, sol.eq_multipliers, sol.ineq_multipliers)
        if kkt <= opts.kkt_tol:
            status = "converged"
            merit_history.append(merit_value(lin.f, lin.c_eq, lin.c_ineq, penalty))
            step_norms.append(0.0)
            break

        mult_max = max(
            float(np.abs(sol.eq_multipliers).max()) if sol.eq_multipliers.size else 0.0,
            float(np.abs(sol.ineq_multipliers).max()) if sol.ineq_multipliers.size else 0.0,
        )
        penalty = max(penalty, opts.penalty_margin * mult_max)

        phi0 = merit_value(lin.f, lin.c_eq, lin.c_ineq, penalty)
        merit_history.append(phi0)
        l1_now = (float(np.abs(lin.c_eq).sum()) if lin.c_eq.size else 0.0) + (
            float(np.maximum(lin.c_ineq, 0.0).sum()) if lin.c_ineq.size else 0.0
        )
        deriv = float(lin.g @ d) - penalty * l1_now
        alpha = 1.0
        accepted = False
        while alpha >= opts.min_step:
            f_t, ce_t, ci_t = nlp.eval_terms(x + alpha * d)
            phi_t = merit_value(f_t, ce_t, ci_t, penalty)
            if phi_t <= phi0 + opts.armijo * alpha * min(deriv, 0.0):
                accepted = True
                break
            alpha *= opts.backtrack_factor
        if not accepted:
            alpha = opts.min_step
        x = x + alpha * d
        step_norms.append(float(np.linalg.norm(alpha * d)))

    f_final, ce, ci = nlp.eval_terms(x)
    return SqpResult(
        x=x,
        status=status,
        iterations=iterations,
        kkt=float(kkt),
        objective=float(f_final),
        constraint_violation=constraint_violation(ce, ci),
        timing_ms=(time.perf_counter() - t_start) * 1e3,
        merit_history=merit_history,
        step_norms=step_norms,
    )

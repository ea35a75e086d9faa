"""Contact-force-free dynamic stability tests for a floating rigid body.

The support cone criterion bounds the gravito-inertia acceleration
``a_B = g - pdd_B`` by the cone of rays from the base through the grounded
feet, with contact-count-specific determinant conditions, a friction cone on
the net contact force, and a push condition.  An estimated external wrench
``(f_hat, tau_hat)`` enters as ``a_B + f_hat/m`` and ``Ldot_B - tau_hat``
(the contact side of the momentum balance).

A brute-force linear-programming oracle over linearized friction pyramids
provides the independent ground truth for the soundness properties.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

EZ = np.array([0.0, 0.0, 1.0])

LEG_NAMES = ("LF", "RF", "LH", "RH")
# Counterclockwise cycle of the nominal footprint: LF, LH, RH, RF.
CCW_LEG_ORDER = (0, 2, 3, 1)

DEGENERATE_PAIR_DIST = 1e-6


class DegenerateSupportError(ValueError):
    pass


@dataclass(frozen=True)
class RobotModel:
    mass: float
    inertia: np.ndarray
    hip_offsets: np.ndarray  # (4, 3), base frame, leg order LF RF LH RH
    l_min: float
    l_max: float
    friction: float
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        inertia = np.asarray(self.inertia, dtype=float)
        hips = np.asarray(self.hip_offsets, dtype=float)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T):
            raise ValueError("inertia must be symmetric 3x3")
        if np.linalg.eigvalsh(inertia)[0] <= 0:
            raise ValueError("inertia must be positive definite")
        if not (0 < self.l_min < self.l_max):
            raise ValueError("require 0 < l_min < l_max")
        if self.friction < 0:
            raise ValueError("friction must be non-negative")
        if hips.shape != (4, 3):
            raise ValueError("hip_offsets must be (4, 3)")
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "hip_offsets", hips)
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float))


def default_model() -> RobotModel:
    """Desk-scale quadruped: ~30 kg torso, 0.72 x 0.42 m hip rectangle."""
    return RobotModel(
        mass=30.0,
        inertia=np.diag([0.8, 1.6, 1.8]),
        hip_offsets=np.array(
            [
                [0.36, 0.21, 0.0],
                [0.36, -0.21, 0.0],
                [-0.36, 0.21, 0.0],
                [-0.36, -0.21, 0.0],
            ]
        ),
        l_min=0.2,
        l_max=0.62,
        friction=0.7,
    )


@dataclass
class StanceState:
    """Instantaneous base/contact state; the GIA vector is derived, not stored."""

    base_position: np.ndarray
    base_acceleration: np.ndarray
    angular_momentum_rate: np.ndarray
    footholds: np.ndarray  # (4, 3), leg order LF RF LH RH
    contact: np.ndarray  # (4,) bool
    disturbance_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    disturbance_torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.base_position = np.asarray(self.base_position, dtype=float)
        self.base_acceleration = np.asarray(self.base_acceleration, dtype=float)
        self.angular_momentum_rate = np.asarray(self.angular_momentum_rate, dtype=float)
        self.footholds = np.asarray(self.footholds, dtype=float).reshape(4, 3)
        self.contact = np.asarray(self.contact, dtype=bool).reshape(4)
        self.disturbance_force = np.asarray(self.disturbance_force, dtype=float)
        self.disturbance_torque = np.asarray(self.disturbance_torque, dtype=float)

    @property
    def contact_count(self) -> int:
        return int(self.contact.sum())

    def gia(self, model: RobotModel) -> np.ndarray:
        return model.gravity - self.base_acceleration

    def effective_terms(self, model: RobotModel):
        """(a_B + f_hat/m, Ldot - tau_hat): disturbance folded into the balance."""
        a_eff = self.gia(model) + self.disturbance_force / model.mass
        ldot_eff = self.angular_momentum_rate - self.disturbance_torque
        return a_eff, ldot_eff


@dataclass
class ConstraintResiduals:
    """Ordered (tag, value) rows; a row is satisfied iff value <= 0."""

    rows: list[tuple[str, float]]

    def __post_init__(self):
        tags = [t for t, _ in self.rows]
        if len(set(tags)) != len(tags):
            raise ValueError("residual tags must be unique")

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.rows]) if self.rows else np.zeros(0)

    def max_violation(self) -> float:
        vals = self.values()
        return float(vals.max()) if vals.size else 0.0

    def satisfied(self, tol: float = 0.0) -> bool:
        return self.max_violation() <= tol

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)


def det3(a, b, c) -> float:
    """Scalar triple product a . (b x c)."""
    return float(np.dot(a, np.cross(b, c)))


def ccw_hull_indices(points_xy: np.ndarray) -> list[int]:
    """Convex hull (monotone chain), counterclockwise, of up to a few points."""
    order = sorted(range(len(points_xy)), key=lambda k: (points_xy[k][0], points_xy[k][1]))

    def cross(o, a, b):
        return (points_xy[a][0] - points_xy[o][0]) * (points_xy[b][1] - points_xy[o][1]) - (
            points_xy[a][1] - points_xy[o][1]
        ) * (points_xy[b][0] - points_xy[o][0])

    lower: list[int] = []
    for k in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], k) <= 0:
            lower.pop()
        lower.append(k)
    upper: list[int] = []
    for k in reversed(order):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], k) <= 0:
            upper.pop()
        upper.append(k)
    return lower[:-1] + upper[:-1]


def _check_degenerate(feet: np.ndarray) -> None:
    n = len(feet)
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(feet[i] - feet[j]) < DEGENERATE_PAIR_DIST:
                raise DegenerateSupportError("degenerate support")


def friction_residual(state: StanceState, model: RobotModel) -> float:
    """Friction-cone residual on the net contact-force direction c = pdd - g
    (minus the disturbance share); satisfied iff <= 0."""
    a_eff, _ = state.effective_terms(model)
    c = -a_eff
    horizontal = c.copy()
    horizontal[2] = 0.0
    return float(np.linalg.norm(horizontal) - model.friction * c[2])


def push_residual(state: StanceState, model: RobotModel) -> float:
    """Pushing contact: e_z . pdd >= e_z . g (disturbance-adjusted); <= 0 when satisfied."""
    a_eff, _ = state.effective_terms(model)
    return float(a_eff[2])


def giac_residuals(state: StanceState, model: RobotModel,
                   include_friction: bool = True) -> ConstraintResiduals:
    """Stability residuals for the current contact count.

    N>=3: one cone row per counterclockwise hull edge,
    N=2:  the line equality (as a +/- pair) plus both end moment conditions,
    N=1:  the three-axis moment equality (as +/- pairs),
    N=0:  ballistic flight (a_B = 0, Ldot = 0, as +/- pairs).
    Friction and push rows are appended for N > 0 unless disabled.
    """
    feet = state.footholds[state.contact]
    legs = [k for k in range(4) if state.contact[k]]
    n = len(legs)
    _check_degenerate(feet)
    p_b = state.base_position
    a_eff, ldot_eff = state.effective_terms(model)
    m = model.mass
    rows: list[tuple[str, float]] = []

    if n >= 3:
        hull = ccw_hull_indices(feet[:, :2])
        for a, b in zip(hull, np.roll(hull, -1)):
            p_i, p_j = feet[a], feet[b]
            p_ij = p_j - p_i
            res = m * det3(p_ij, p_b - p_i, a_eff) - float(p_ij @ ldot_eff)
            rows.append((f"dyn:cone:{LEG_NAMES[legs[a]]}-{LEG_NAMES[legs[b]]}", res))
    elif n == 2:
        p_i, p_j = feet[0], feet[1]
        p_ij = p_j - p_i
        eq = m * det3(p_ij, p_b - p_i, a_eff) - float(p_ij @ ldot_eff)
        rows.append(("dyn:line:+", eq))
        rows.append(("dyn:line:-", -eq))
        for (pa, pb_), name in (((p_i, p_j), LEG_NAMES[legs[0]]),
                                ((p_j, p_i), LEG_NAMES[legs[1]])):
            moment = np.cross(p_b - pa, a_eff) - ldot_eff / m
            rows.append((f"dyn:moment:{name}", -det3(EZ, pb_ - pa, moment)))
    elif n == 1:
        v = m * np.cross(p_b - feet[0], a_eff) - ldot_eff
        for k, axis in enumerate("xyz"):
            rows.append((f"dyn:point:{axis}+", float(v[k])))
            rows.append((f"dyn:point:{axis}-", float(-v[k])))
    else:
        for k, axis in enumerate("xyz"):
            rows.append((f"dyn:flight:a{axis}+", float(a_eff[k])))
            rows.append((f"dyn:flight:a{axis}-", float(-a_eff[k])))
        for k, axis in enumerate("xyz"):
            rows.append((f"dyn:flight:L{axis}+", float(ldot_eff[k])))
            rows.append((f"dyn:flight:L{axis}-", float(-ldot_eff[k])))

    if include_friction and n > 0:
        rows.append(("friction", friction_residual(state, model)))
        rows.append(("push", push_residual(state, model)))
    return ConstraintResiduals(rows)


def convex_footprint_residuals(footholds: np.ndarray) -> ConstraintResiduals:
    """Convexity of the xy footprint, counterclockwise cycle LF, LH, RH, RF.

    Input is in leg order (LF, RF, LH, RH); four cross-product rows <= 0.
    """
    pts = np.asarray(footholds, dtype=float).reshape(4, 3)
    q = pts[list(CCW_LEG_ORDER), :2]  # q1..q4 counterclockwise

    def crossz(u, v):
        return float(u[0] * v[1] - u[1] * v[0])

    p12, p13, p14 = q[1] - q[0], q[2] - q[0], q[3] - q[0]
    p23, p24, p21 = q[2] - q[1], q[3] - q[1], q[0] - q[1]
    rows = [
        ("footprint:1", crossz(p13, p12)),
        ("footprint:2", crossz(p14, p13)),
        ("footprint:3", crossz(p24, p23)),
        ("footprint:4", crossz(p21, p24)),
    ]
    return ConstraintResiduals(rows)


def zmp(state: StanceState, model: RobotModel | None = None):
    """Ground-plane zero-moment point: ray-plane projection of the base along
    the GIA vector, shifted by the angular-momentum term.  Returns (xy, valid);
    invalid when the GIA vector is horizontal."""
    model = model or default_model()
    a_eff, ldot_eff = state.effective_terms(model)
    az = float(a_eff @ EZ)
    if abs(az) < 1e-12:
        return np.full(2, np.nan), False
    p_b = state.base_position
    point = p_b - a_eff * (p_b[2] / az)
    shift = -np.cross(EZ, ldot_eff) / (model.mass * az)
    return (point + shift)[:2], True


def overhang_ok(state: StanceState) -> bool:
    feet = state.footholds[state.contact]
    if len(feet) == 0:
        return True
    return bool(np.all(state.base_position[2] > feet[:, 2]))


def weak_contact_oracle(state: StanceState, model: RobotModel, facets: int = 8) -> bool:
    """Linear-feasibility search for contact forces balancing the motion.

    Forces are restricted to friction pyramids with ``facets`` edges around
    the vertical contact normal; the pyramid circumscribes the quadratic cone
    so that any exact-cone-feasible force set stays feasible here.  Returns
    True iff forces exist satisfying the force and moment balance, including
    the disturbance wrench.
    """
    legs = [k for k in range(4) if state.contact[k]]
    n = len(legs)
    if n < 1:
        raise ValueError("oracle requires at least one contact")
    m = model.mass
    mu_edge = model.friction / np.cos(np.pi / facets)
    angles = 2.0 * np.pi * np.arange(facets) / facets
    edges = np.stack(
        [mu_edge * np.cos(angles), mu_edge * np.sin(angles), np.ones(facets)], axis=1
    )

    a_eq = np.zeros((6, n * facets))
    for idx, leg in enumerate(legs):
        arm = state.footholds[leg] - state.base_position
        block = slice(idx * facets, (idx + 1) * facets)
        a_eq[:3, block] = edges.T
        a_eq[3:, block] = np.cross(arm[None, :], edges).T

    force_target = m * (state.base_acceleration - model.gravity) - state.disturbance_force
    moment_target = state.angular_momentum_rate - state.disturbance_torque
    b_eq = np.concatenate([force_target, moment_target])

    res = linprog(
        c=np.zeros(n * facets),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
    )
    return bool(res.status == 0)


def inscribed_cone_check(state: StanceState) -> str:
    """Classify the support cone footprint: 'full' when the cyclic footprint
    polygon is convex, 'reduced' when simple but non-convex, 'empty' when the
    ordering self-intersects."""
    legs = [k for k in CCW_LEG_ORDER if state.contact[k]]
    if len(legs) < 3:
        raise ValueError("inscribed cone check requires N >= 3")
    q = state.footholds[legs, :2]
    n = len(q)
    crosses = []
    for k in range(n):
        e1 = q[(k + 1) % n] - q[k]
        e2 = q[(k + 2) % n] - q[(k + 1) % n]
        crosses.append(e1[0] * e2[1] - e1[1] * e2[0])
    tol = 1e-12
    npos = sum(1 for c in crosses if c > tol)
    nneg = sum(1 for c in crosses if c < -tol)
    if npos == 0 or nneg == 0:
        return "full"
    if min(npos, nneg) == 1:
        return "reduced"
    return "empty"

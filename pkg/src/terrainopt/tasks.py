"""Objectives and constraints of the motion NLP as Gauss-Newton blocks.

Every objective is a weighted residual block ``0.5 w |g(x)|^2`` (the
robustness term is the one linear exception), every hard constraint a row
family with analytic Jacobians w.r.t. the stacked decision vector
``[segment coefficients | measured feet | footholds | slacks]``.  Jacobians
are exact derivatives of the implemented residuals (bilinear map patches
included), so central finite differences reproduce them to high accuracy.

Continuous tasks are sampled on the per-phase grid (spacing tau_k/6) and
carry the per-sample weight ``w * T_k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rotations
from .solver import Linearization, QPProblem
from .stability import EZ, LEG_NAMES, CCW_LEG_ORDER, RobotModel
from .terrain import HeightMapSet
from .trajectory import (
    N_COEFFS,
    N_DIMS,
    Phase,
    basis_row,
    coeff_offset,
    foothold_offset,
    leg_position_schedule,
    p_meas_offset,
    phase_sample_offsets,
    slack_offset,
    vector_size,
)

SLACK_FLOOR = -1e3  # inactive lower guard keeping the dual start bounded

# Characteristic scales dividing the dynamic rows so the shared slack reads
# as an angle-like margin (the robustness weight presumes O(1) residuals).
# Signs are untouched: the rows stay positive rescales of the stability
# module's determinant conditions.
GRAV_SCALE = 9.81
LENGTH_SCALE = 0.5


@dataclass(frozen=True)
class WeightConfig:
    """Soft-task weights; sampled tasks are additionally scaled by T_k."""

    robustness: float = 0.007
    foothold_on_ground: float = 1.0e4
    collision: float = 0.001
    nominal_kinematics: float = 7.0
    base_alignment: float = 100.0
    edge_avoidance: float = 3.0
    previous_solution: float = 0.01
    tracking: float = 2.0
    smoothness: float = 0.001

    @classmethod
    def with_overrides(cls, overrides: dict | None) -> "WeightConfig":
        if not overrides:
            return cls()
        unknown = set(overrides) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown weight keys: {sorted(unknown)}")
        return replace(cls(), **overrides)


@dataclass
class ProblemSetup:
    """Static description of one NLP instance over a gait horizon."""

    phases: tuple[Phase, ...]
    maps: HeightMapSet
    model: RobotModel
    initial_pose: np.ndarray
    initial_twist: np.ndarray
    measured_feet: np.ndarray  # (4, 3)
    previous_footholds: np.ndarray  # (4, 3)
    command: np.ndarray = field(default_factory=lambda: np.zeros(3))  # vx, vy, yaw rate
    weights: WeightConfig = field(default_factory=WeightConfig)
    foothold_layer: str = "h"
    edge_layers: tuple[str, str] = ("h", "h_s1")
    disturbance_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    disturbance_torque: np.ndarray = field(default_factory=lambda: np.zeros(3))
    desired_height: float = 0.45
    collision_min_sq: float = 0.12**2  # bound on squared xy distance

    def __post_init__(self):
        self.initial_pose = np.asarray(self.initial_pose, dtype=float).reshape(6)
        self.initial_twist = np.asarray(self.initial_twist, dtype=float).reshape(6)
        self.measured_feet = np.asarray(self.measured_feet, dtype=float).reshape(4, 3)
        self.previous_footholds = np.asarray(self.previous_footholds, dtype=float).reshape(4, 3)
        self.command = np.asarray(self.command, dtype=float).reshape(3)
        self.durations = np.array([p.duration for p in self.phases])
        self.contacts = np.stack([p.contact for p in self.phases])
        self.use_desired = leg_position_schedule(self.phases)
        self.n_segments = len(self.phases)
        self.n = vector_size(self.n_segments)
        # legs landing exactly at the horizon end (cyclic wrap of phase 0)
        self.end_landing_legs = tuple(self.phases[0].touchdown_legs)

    def grounded_position_slot(self, k: int, leg: int) -> int:
        """Variable slot of the position used for a grounded leg in phase k."""
        if self.use_desired[k, leg]:
            return foothold_offset(self.n_segments, leg)
        return p_meas_offset(self.n_segments, leg)

    def stance_midpoints(self):
        """Per leg: (phase index, local time, slot) of each stance midpoint,
        plus a horizon-end anchor for legs landing exactly at the end."""
        n_s = self.n_segments
        starts = np.concatenate([[0.0], np.cumsum(self.durations)])
        out = []
        for leg in range(4):
            runs = []
            k = 0
            while k < n_s:
                if self.contacts[k, leg]:
                    k0 = k
                    while k + 1 < n_s and self.contacts[k + 1, leg]:
                        k += 1
                    runs.append((k0, k))
                k += 1
            for k0, k1 in runs:
                t_mid = 0.5 * (starts[k0] + starts[k1 + 1])
                k_mid = int(np.searchsorted(starts[1:-1], t_mid, side="right"))
                out.append((leg, k_mid, t_mid - starts[k_mid],
                            self.grounded_position_slot(k_mid, leg)))
            if leg in self.end_landing_legs:
                out.append((leg, n_s - 1, self.durations[-1],
                            foothold_offset(n_s, leg)))
        return out

    def footprint_composition(self, k: int):
        """Leg -> slot for phase k's convexity footprint: grounded legs plus
        future touch-downs (including the wrap landing) until four are set."""
        slots = {}
        for leg in range(4):
            if self.contacts[k, leg]:
                slots[leg] = self.grounded_position_slot(k, leg)
        j = k + 1
        n_s = self.n_segments
        while len(slots) < 4 and j < n_s:
            for leg in self.phases[j].touchdown_legs:
                if leg not in slots:
                    slots[leg] = foothold_offset(n_s, leg)
            j += 1
        if len(slots) < 4:
            for leg in self.end_landing_legs:
                if leg not in slots:
                    slots[leg] = foothold_offset(n_s, leg)
        if len(slots) < 4:
            for leg in range(4):  # fall back to measured positions
                if leg not in slots:
                    slots[leg] = p_meas_offset(n_s, leg)
        return slots


class _SampleKinematics:
    """Pose-level quantities and lazy partials at one sample."""

    __slots__ = (
        "pose", "twist", "accel", "eta", "etad", "etadd", "_inertia", "_cache"
    )

    def __init__(self, pose, twist, accel, inertia):
        self.pose = pose
        self.twist = twist
        self.accel = accel
        self.eta = pose[3:]
        self.etad = twist[3:]
        self.etadd = accel[3:]
        self._inertia = inertia
        self._cache = {}

    @property
    def rotation(self):
        if "rot" not in self._cache:
            self._cache["rot"] = rotations.rotation_matrix_partials(self.eta)
        return self._cache["rot"]  # (R, dR)

    @property
    def omega(self):
        if "omega" not in self._cache:
            c, dc, _ = rotations.rate_map_partials(self.eta)
            self._cache["rate_map"] = (c, dc)
            self._cache["omega"] = c @ self.etad
        return self._cache["omega"]

    @property
    def rate_map(self):
        self.omega
        return self._cache["rate_map"]

    @property
    def ldot(self):
        if "ldot" not in self._cache:
            self._cache["ldot"] = rotations.angular_momentum_rate_partials(
                self.eta, self.etad, self.etadd, self._inertia
            )
        return self._cache["ldot"]  # (Ldot, J_eta, J_etad, J_etadd)


class _Workspace:
    """Decision-vector view with per-sample kinematic caches."""

    def __init__(self, setup: ProblemSetup, x: np.ndarray):
        self.setup = setup
        self.x = np.asarray(x, dtype=float)
        n_s = setup.n_segments
        nc = n_s * N_DIMS * N_COEFFS
        self.coeffs = self.x[:nc].reshape(n_s, N_DIMS, N_COEFFS)
        self.p_meas = self.x[nc : nc + 12].reshape(4, 3)
        self.footholds = self.x[nc + 12 : nc + 24].reshape(4, 3)
        self.slacks = self.x[nc + 24 :]
        self._kin: dict[tuple[int, float], _SampleKinematics] = {}

    def kin(self, k: int, t: float) -> _SampleKinematics:
        key = (k, round(t, 12))
        got = self._kin.get(key)
        if got is None:
            b0, b1, b2 = basis_row(t, 0), basis_row(t, 1), basis_row(t, 2)
            block = self.coeffs[k]
            got = _SampleKinematics(
                block @ b0, block @ b1, block @ b2, self.setup.model.inertia
            )
            self._kin[key] = got
        return got

    def position_at(self, slot: int) -> np.ndarray:
        return self.x[slot : slot + 3]


@dataclass
class Block:
    """One evaluated residual/constraint block."""

    tag: str
    values: np.ndarray
    jacobian: np.ndarray | None  # (m, n) when requested


@dataclass
class Task:
    """A named residual family: objective (weighted), equality or inequality."""

    tag: str
    kind: str  # "objective" | "eq" | "ineq" | "linear-objective"
    weight: float
    evaluate: callable  # (workspace, with_jacobian) -> Block

    def __post_init__(self):
        if self.kind not in ("objective", "eq", "ineq", "linear-objective"):
            raise ValueError(f"unknown task kind {self.kind}")
        if self.kind == "objective" and self.weight <= 0:
            raise ValueError("objective weights must be positive")


def _coeff_cols(k: int, dim: int) -> slice:
    base = coeff_offset(k, dim, 0)
    return slice(base, base + N_COEFFS)


# -- objective builders --------------------------------------------------------


def foothold_height_objective(setup: ProblemSetup) -> list[Task]:
    """Soft pin of each desired foothold to the height layer: h(xy) - z."""
    tasks = []
    n_s = setup.n_segments

    def make(leg):
        slot = foothold_offset(n_s, leg)

        def evaluate(ws, with_jac):
            p = ws.position_at(slot)
            value, grad = _clamped_height_gradient(setup.maps, setup.foothold_layer, p[:2])
            g = np.array([value - p[2]])
            jac = None
            if with_jac:
                jac = np.zeros((1, setup.n))
                jac[0, slot] = grad[0]
                jac[0, slot + 1] = grad[1]
                jac[0, slot + 2] = -1.0
            return Block(f"foothold_height:{LEG_NAMES[leg]}", g, jac)

        return evaluate

    for leg in range(4):
        tasks.append(
            Task(
                tag=f"foothold_height:{LEG_NAMES[leg]}",
                kind="objective",
                weight=setup.weights.foothold_on_ground,
                evaluate=make(leg),
            )
        )
    return tasks


def _clamped_height_gradient(maps: HeightMapSet, layer: str, xy):
    """Bilinear height and its exact gradient, with flat extension off-map."""
    clamped, active = _clamp_xy(maps, xy)
    value, grad = maps.sample_with_gradient(layer, clamped)
    return value, grad * active


def _clamp_xy(maps: HeightMapSet, xy):
    gx, gy = maps.grid_coords(xy)
    cgx = min(max(gx, 0.0), maps.cols - 1.0)
    cgy = min(max(gy, 0.0), maps.rows - 1.0)
    clamped = (
        maps.origin_xy[0] + cgx * maps.resolution,
        maps.origin_xy[1] + cgy * maps.resolution,
    )
    active = np.array([1.0 if cgx == gx else 0.0, 1.0 if cgy == gy else 0.0])
    return clamped, active


def collision_objective(setup: ProblemSetup) -> list[Task]:
    """One-sided quadratic barrier on the squared xy distance of foot pairs."""
    tasks = []
    n_s = setup.n_segments
    eps_min = setup.collision_min_sq

    def make(i, j):
        slot_i = foothold_offset(n_s, i)
        slot_j = foothold_offset(n_s, j)

        def evaluate(ws, with_jac):
            d = ws.position_at(slot_i)[:2] - ws.position_at(slot_j)[:2]
            z = float(d @ d)
            g = np.array([max(0.0, eps_min - z)])
            jac = None
            if with_jac:
                jac = np.zeros((1, setup.n))
                if z < eps_min:
                    jac[0, slot_i : slot_i + 2] = -2.0 * d
                    jac[0, slot_j : slot_j + 2] = 2.0 * d
            return Block(f"collision:{LEG_NAMES[i]}-{LEG_NAMES[j]}", g, jac)

        return evaluate

    for i in range(4):
        for j in range(i + 1, 4):
            tasks.append(
                Task(
                    tag=f"collision:{LEG_NAMES[i]}-{LEG_NAMES[j]}",
                    kind="objective",
                    weight=setup.weights.collision,
                    evaluate=make(i, j),
                )
            )
    return tasks


def nominal_kinematics_objective(setup: ProblemSetup) -> list[Task]:
    """Hip-to-foot extension pulled toward (0, 0, desired height), once per
    stance at midstance (plus the horizon-end landing anchor)."""
    tasks = []
    l_des = np.array([0.0, 0.0, setup.desired_height])
    model = setup.model

    def make(leg, k, t_local, slot, tag):
        r_hip = model.hip_offsets[leg]
        b0 = basis_row(t_local, 0)

        def evaluate(ws, with_jac):
            kin = ws.kin(k, t_local)
            r, dr = kin.rotation
            foot = ws.position_at(slot)
            g = kin.pose[:3] + r @ r_hip - foot - l_des
            jac = None
            if with_jac:
                jac = np.zeros((3, setup.n))
                for axis in range(3):
                    jac[axis, _coeff_cols(k, axis)] = b0
                for e_idx in range(3):
                    col = dr[e_idx] @ r_hip
                    for axis in range(3):
                        jac[axis, _coeff_cols(k, 3 + e_idx)] += col[axis] * b0
                jac[:, slot : slot + 3] -= np.eye(3)
            return Block(tag, g, jac)

        return evaluate

    for idx, (leg, k, t_local, slot) in enumerate(setup.stance_midpoints()):
        tag = f"nominal_kin:{LEG_NAMES[leg]}:{idx}"
        tasks.append(
            Task(
                tag=tag,
                kind="objective",
                weight=setup.weights.nominal_kinematics,
                evaluate=make(leg, k, t_local, slot, tag),
            )
        )
    return tasks


def base_alignment_objective(setup: ProblemSetup) -> list[Task]:
    """Vertical gap between each thigh point and the virtual floor under the
    base, sampled along the horizon."""
    tasks = []
    model = setup.model
    h_des = setup.desired_height

    def make(k, s, t_local, t_k):
        b0 = basis_row(t_local, 0)

        def evaluate(ws, with_jac):
            kin = ws.kin(k, t_local)
            r, dr = kin.rotation
            xy = kin.pose[:2]
            height, grad = _clamped_height_gradient(setup.maps, "h_s2", xy)
            g = np.empty(4)
            for leg in range(4):
                g[leg] = kin.pose[2] + float(EZ @ (r @ model.hip_offsets[leg])) - h_des - height
            jac = None
            if with_jac:
                jac = np.zeros((4, setup.n))
                for leg in range(4):
                    jac[leg, _coeff_cols(k, 0)] = -grad[0] * b0
                    jac[leg, _coeff_cols(k, 1)] = -grad[1] * b0
                    jac[leg, _coeff_cols(k, 2)] = b0
                    for e_idx in range(3):
                        dz = float(EZ @ (dr[e_idx] @ model.hip_offsets[leg]))
                        jac[leg, _coeff_cols(k, 3 + e_idx)] += dz * b0
            return Block(f"base_alignment:{k}:{s}", g, jac)

        return evaluate

    for k, phase in enumerate(setup.phases):
        t_k = phase.duration / 6.0
        for s, t_local in enumerate(phase_sample_offsets(phase.duration)):
            tasks.append(
                Task(
                    tag=f"base_alignment:{k}:{s}",
                    kind="objective",
                    weight=setup.weights.base_alignment * t_k,
                    evaluate=make(k, s, t_local, t_k),
                )
            )
    return tasks


def edge_avoidance_objective(setup: ProblemSetup) -> list[Task]:
    """Stacked height gradients of the sharp and blurred layers at each
    desired foothold; pushes feet away from edges."""
    tasks = []
    n_s = setup.n_segments
    layer_a, layer_b = setup.edge_layers

    def make(leg):
        slot = foothold_offset(n_s, leg)

        def evaluate(ws, with_jac):
            xy = ws.position_at(slot)[:2]
            clamped, active = _clamp_xy(setup.maps, xy)
            ga, ja = setup.maps.sample_gradient_with_jacobian(layer_a, clamped)
            gb, jb = setup.maps.sample_gradient_with_jacobian(layer_b, clamped)
            g = np.concatenate([ga, gb])
            jac = None
            if with_jac:
                jac = np.zeros((4, setup.n))
                jac[:2, slot : slot + 2] = ja * active[None, :]
                jac[2:, slot : slot + 2] = jb * active[None, :]
            return Block(f"edge_avoidance:{LEG_NAMES[leg]}", g, jac)

        return evaluate

    for leg in range(4):
        tasks.append(
            Task(
                tag=f"edge_avoidance:{LEG_NAMES[leg]}",
                kind="objective",
                weight=setup.weights.edge_avoidance,
                evaluate=make(leg),
            )
        )
    return tasks


def previous_solution_objective(setup: ProblemSetup) -> list[Task]:
    tasks = []
    n_s = setup.n_segments

    def make(leg):
        slot = foothold_offset(n_s, leg)
        prev = setup.previous_footholds[leg]

        def evaluate(ws, with_jac):
            g = ws.position_at(slot) - prev
            jac = None
            if with_jac:
                jac = np.zeros((3, setup.n))
                jac[:, slot : slot + 3] = np.eye(3)
            return Block(f"previous_solution:{LEG_NAMES[leg]}", g, jac)

        return evaluate

    for leg in range(4):
        tasks.append(
            Task(
                tag=f"previous_solution:{LEG_NAMES[leg]}",
                kind="objective",
                weight=setup.weights.previous_solution,
                evaluate=make(leg),
            )
        )
    return tasks


def tracking_objective(setup: ProblemSetup) -> list[Task]:
    """Base-frame momentum tracking of the commanded twist.

    Residual rows: (P^B - P_des^B)/m stacked over L^B - L_des^B, where the
    desired linear velocity is the command rotated by the current yaw and the
    desired body rate is the commanded yaw rate.
    """
    tasks = []
    model = setup.model
    vx, vy, wz = setup.command
    omega_des = np.array([0.0, 0.0, wz])

    def make(k, s, t_local, t_k):
        b0 = basis_row(t_local, 0)
        b1 = basis_row(t_local, 1)

        def evaluate(ws, with_jac):
            kin = ws.kin(k, t_local)
            r, dr = kin.rotation
            psi = kin.eta[0]
            c_psi, s_psi = np.cos(psi), np.sin(psi)
            v_des = np.array([c_psi * vx - s_psi * vy, s_psi * vx + c_psi * vy, 0.0])
            v_err = kin.twist[:3] - v_des
            g_lin = r.T @ v_err
            c_mat, dc = kin.rate_map
            omega = kin.omega
            g_ang = model.inertia @ (omega - omega_des)
            g = np.concatenate([g_lin, g_ang])
            jac = None
            if with_jac:
                jac = np.zeros((6, setup.n))
                # linear part: d/d pdot = R^T; d/d eta via dR and the yaw of v_des
                for axis in range(3):
                    col = r.T[:, axis]
                    for row in range(3):
                        jac[row, _coeff_cols(k, axis)] += col[row] * b1
                dv_dpsi = np.array([-s_psi * vx - c_psi * vy, c_psi * vx - s_psi * vy, 0.0])
                for e_idx in range(3):
                    dcol = dr[e_idx].T @ v_err
                    if e_idx == 0:
                        dcol = dcol - r.T @ dv_dpsi
                    for row in range(3):
                        jac[row, _coeff_cols(k, 3 + e_idx)] += dcol[row] * b0
                # angular part: I (dC/deta etad) b0 + I C b1
                for e_idx in range(3):
                    col_eta = model.inertia @ (dc[e_idx] @ kin.etad)
                    col_etad = model.inertia @ c_mat[:, e_idx]
                    for row in range(3):
                        jac[3 + row, _coeff_cols(k, 3 + e_idx)] += (
                            col_eta[row] * b0 + col_etad[row] * b1
                        )
            return Block(f"tracking:{k}:{s}", g, jac)

        return evaluate

    for k, phase in enumerate(setup.phases):
        t_k = phase.duration / 6.0
        for s, t_local in enumerate(phase_sample_offsets(phase.duration)):
            tasks.append(
                Task(
                    tag=f"tracking:{k}:{s}",
                    kind="objective",
                    weight=setup.weights.tracking * t_k,
                    evaluate=make(k, s, t_local, t_k),
                )
            )
    return tasks


def smoothness_objective(setup: ProblemSetup) -> list[Task]:
    """Minimize the rate of change of the world-frame angular momentum."""
    tasks = []

    def make(k, s, t_local, t_k):
        b0 = basis_row(t_local, 0)
        b1 = basis_row(t_local, 1)
        b2 = basis_row(t_local, 2)

        def evaluate(ws, with_jac):
            kin = ws.kin(k, t_local)
            ldot, j_eta, j_etad, j_etadd = kin.ldot
            jac = None
            if with_jac:
                jac = np.zeros((3, setup.n))
                for e_idx in range(3):
                    cols = _coeff_cols(k, 3 + e_idx)
                    for row in range(3):
                        jac[row, cols] += (
                            j_eta[row, e_idx] * b0
                            + j_etad[row, e_idx] * b1
                            + j_etadd[row, e_idx] * b2
                        )
            return Block(f"smoothness:{k}:{s}", ldot.copy(), jac)

        return evaluate

    for k, phase in enumerate(setup.phases):
        t_k = phase.duration / 6.0
        for s, t_local in enumerate(phase_sample_offsets(phase.duration)):
            tasks.append(
                Task(
                    tag=f"smoothness:{k}:{s}",
                    kind="objective",
                    weight=setup.weights.smoothness * t_k,
                    evaluate=make(k, s, t_local, t_k),
                )
            )
    return tasks


def robustness_objective(setup: ProblemSetup) -> list[Task]:
    """Linear slack minimization: pushes every phase margin negative."""
    n_s = setup.n_segments

    def evaluate(ws, with_jac):
        jac = None
        if with_jac:
            jac = np.zeros((1, setup.n))
            for k in range(n_s):
                jac[0, slack_offset(n_s, k)] = 1.0
        return Block("robustness", np.array([float(ws.slacks.sum())]), jac)

    return [
        Task(
            tag="robustness",
            kind="linear-objective",
            weight=setup.weights.robustness,
            evaluate=evaluate,
        )
    ]


# -- hard constraint row families ------------------------------------------------


def _ldot_chain(jac, rows, k, grad_ldot, kin, b0, b1, b2, sign=1.0):
    """Scatter (d res / d Ldot) through the angular-momentum-rate partials."""
    _, j_eta, j_etad, j_etadd = kin.ldot
    ge = grad_ldot @ j_eta
    gd = grad_ldot @ j_etad
    ga = grad_ldot @ j_etadd
    for e_idx in range(3):
        cols = _coeff_cols(k, 3 + e_idx)
        jac[rows, cols] += sign * (ge[e_idx] * b0 + gd[e_idx] * b1 + ga[e_idx] * b2)


def _grounded_slots(setup: ProblemSetup, k: int):
    return [
        (leg, setup.grounded_position_slot(k, leg))
        for leg in range(4)
        if setup.contacts[k, leg]
    ]


def dynamic_stability_rows(setup: ProblemSetup) -> list[Task]:
    """Slacked cone constraints per phase sample plus the slack bounds.

    Row layout per sample: N>=3 emits one row per counterclockwise hull edge;
    N=2 the +/- line equality pair and both end moment conditions; N=1 the
    +/- moment equality triplet; N=0 the ballistic +/- rows.  All rows read
    ``residual - slack_k <= 0``.
    """
    from .stability import ccw_hull_indices

    tasks = []
    n_s = setup.n_segments
    m = setup.model.mass
    gravity = setup.model.gravity
    f_hat = setup.disturbance_force
    tau_hat = setup.disturbance_torque

    sc_cone = 1.0 / (m * GRAV_SCALE * LENGTH_SCALE**2)
    sc_moment = 1.0 / (GRAV_SCALE * LENGTH_SCALE**2)
    sc_point = 1.0 / (m * GRAV_SCALE * LENGTH_SCALE)
    sc_accel = 1.0 / GRAV_SCALE

    def make(k, s, t_local):
        legs_slots = _grounded_slots(setup, k)
        n_contacts = len(legs_slots)
        eps_col = slack_offset(n_s, k)
        b0 = basis_row(t_local, 0)
        b1 = basis_row(t_local, 1)
        b2 = basis_row(t_local, 2)

        def evaluate(ws, with_jac):
            kin = ws.kin(k, t_local)
            a_eff = gravity - kin.accel[:3] + f_hat / m
            ldot = kin.ldot[0] - tau_hat
            p_b = kin.pose[:3]
            eps = ws.slacks[k]
            rows_vals = []
            rows_jacs = []

            def new_row():
                if with_jac:
                    row = np.zeros(setup.n)
                    row[eps_col] = -1.0
                    rows_jacs.append(row)
                    return row
                return None

            if n_contacts >= 3:
                feet = np.stack([ws.position_at(slot) for _, slot in legs_slots])
                hull = ccw_hull_indices(feet[:, :2])
                for a, b in zip(hull, np.roll(hull, -1)):
                    p_a, p_b_foot = feet[a], feet[b]
                    slot_a, slot_b = legs_slots[a][1], legs_slots[b][1]
                    p_ab = p_b_foot - p_a
                    w = p_b - p_a
                    res = m * float(p_ab @ np.cross(w, a_eff)) - float(p_ab @ ldot)
                    rows_vals.append(res - eps)
                    if with_jac:
                        row = new_row()
                        d_pb = m * np.cross(a_eff, p_ab)
                        d_acc = -m * np.cross(p_ab, w)
                        for axis in range(3):
                            row[_coeff_cols(k, axis)] += d_pb[axis] * b0
                            row[_coeff_cols(k, axis)] += d_acc[axis] * b2
                        _ldot_chain(
                            np.atleast_2d(row), 0, k, -p_ab, kin, b0, b1, b2
                        )
                        d_pa = m * (-(np.cross(w, a_eff)) - np.cross(a_eff, p_ab)) + ldot
                        d_pb_foot = m * np.cross(w, a_eff) - ldot
                        row[slot_a : slot_a + 3] += d_pa
                        row[slot_b : slot_b + 3] += d_pb_foot
            elif n_contacts == 2:
                (leg_i, slot_i), (leg_j, slot_j) = legs_slots
                p_i = ws.position_at(slot_i)
                p_j = ws.position_at(slot_j)
                p_ij = p_j - p_i
                w = p_b - p_i
                eq = m * float(p_ij @ np.cross(w, a_eff)) - float(p_ij @ ldot)
                for sign in (1.0, -1.0):
                    rows_vals.append(sign * eq - eps)
                    if with_jac:
                        row = new_row()
                        d_pb = sign * m * np.cross(a_eff, p_ij)
                        d_acc = -sign * m * np.cross(p_ij, w)
                        for axis in range(3):
                            row[_coeff_cols(k, axis)] += d_pb[axis] * b0
                            row[_coeff_cols(k, axis)] += d_acc[axis] * b2
                        _ldot_chain(
                            np.atleast_2d(row), 0, k, -sign * p_ij, kin, b0, b1, b2
                        )
                        d_pi = sign * (
                            m * (-(np.cross(w, a_eff)) - np.cross(a_eff, p_ij)) + ldot
                        )
                        d_pj = sign * (m * np.cross(w, a_eff) - ldot)
                        row[slot_i : slot_i + 3] += d_pi
                        row[slot_j : slot_j + 3] += d_pj
                for (pa, slot_a, pb_, slot_b) in (
                    (p_i, slot_i, p_j, slot_j),
                    (p_j, slot_j, p_i, slot_i),
                ):
                    p_ab = pb_ - pa
                    w_a = p_b - pa
                    moment = np.cross(w_a, a_eff) - ldot / m
                    det = float(EZ @ np.cross(p_ab, moment))
                    rows_vals.append(-det - eps)
                    if with_jac:
                        row = new_row()
                        grad_m = np.cross(EZ, p_ab)
                        grad_pab = np.cross(moment, EZ)
                        d_pb = -(np.cross(a_eff, grad_m))
                        d_acc = -(np.cross(w_a, grad_m))
                        # res = -det: d(-det)/dp_B = -(a x grad_m); d/daccel:
                        # ddet/da_eff = -w x grad_m, da_eff/daccel = -I.
                        for axis in range(3):
                            row[_coeff_cols(k, axis)] += d_pb[axis] * b0
                            row[_coeff_cols(k, axis)] += d_acc[axis] * b2
                        _ldot_chain(
                            np.atleast_2d(row), 0, k, grad_m / m, kin, b0, b1, b2
                        )
                        d_pa = np.cross(a_eff, grad_m) + grad_pab
                        d_pbf = -grad_pab
                        row[slot_a : slot_a + 3] += d_pa
                        row[slot_b : slot_b + 3] += d_pbf
            elif n_contacts == 1:
                leg_i, slot_i = legs_slots[0]
                p_i = ws.position_at(slot_i)
                w = p_b - p_i
                v = m * np.cross(w, a_eff) - ldot
                a_skew = rotations.skew(a_eff)
                w_skew = rotations.skew(w)
                for axis in range(3):
                    for sign in (1.0, -1.0):
                        rows_vals.append(sign * v[axis] - eps)
                        if with_jac:
                            row = new_row()
                            d_pb = -sign * m * a_skew[axis]
                            d_acc = -sign * m * w_skew[axis]
                            for ax2 in range(3):
                                row[_coeff_cols(k, ax2)] += d_pb[ax2] * b0
                                row[_coeff_cols(k, ax2)] += d_acc[ax2] * b2
                            grad_ldot = np.zeros(3)
                            grad_ldot[axis] = -sign
                            _ldot_chain(
                                np.atleast_2d(row), 0, k, grad_ldot, kin, b0, b1, b2
                            )
                            row[slot_i : slot_i + 3] += sign * m * a_skew[axis]
            else:
                for axis in range(3):
                    for sign in (1.0, -1.0):
                        rows_vals.append(sign * a_eff[axis] - eps)
                        if with_jac:
                            row = new_row()
                            row[_coeff_cols(k, axis)] += -sign * b2
                for axis in range(3):
                    for sign in (1.0, -1.0):
                        rows_vals.append(sign * ldot[axis] - eps)
                        if with_jac:
                            row = new_row()
                            grad_ldot = np.zeros(3)
                            grad_ldot[axis] = sign
                            _ldot_chain(
                                np.atleast_2d(row), 0, k, grad_ldot, kin, b0, b1, b2
                            )
            jac = np.stack(rows_jacs) if with_jac else None
            return Block(f"dyn:{k}:{s}", np.array(rows_vals), jac)

        return evaluate

    for k, phase in enumerate(setup.phases):
        for s, t_local in enumerate(phase_sample_offsets(phase.duration)):
            tasks.append(
                Task(
                    tag=f"dyn:{k}:{s}", kind="ineq", weight=1.0,
                    evaluate=make(k, s, t_local),
                )
            )

    # slack sign and inactive floor guard
    def make_slack(k):
        col = slack_offset(n_s, k)

        def evaluate(ws, with_jac):
            eps = ws.slacks[k]
            vals = np.array([eps, SLACK_FLOOR - eps])
            jac = None
            if with_jac:
                jac = np.zeros((2, setup.n))
                jac[0, col] = 1.0
                jac[1, col] = -1.0
            return Block(f"slack:{k}", vals, jac)

        return evaluate

    for k in range(n_s):
        tasks.append(
            Task(tag=f"slack:{k}", kind="ineq", weight=1.0, evaluate=make_slack(k))
        )
    return tasks


def friction_push_rows(setup: ProblemSetup) -> list[Task]:
    """Net-contact-force friction cone and push condition on the sample grid
    (contact phases only)."""
    tasks = []
    mu = setup.model.friction
    gravity = setup.model.gravity
    f_hat = setup.disturbance_force
    m = setup.model.mass

    def make(k, s, t_local):
        b2 = basis_row(t_local, 2)

        def evaluate(ws, with_jac):
            kin = ws.kin(k, t_local)
            c = kin.accel[:3] - gravity - f_hat / m
            h = float(np.hypot(c[0], c[1]))
            friction = h - mu * c[2]
            push = -c[2]
            vals = np.array([friction, push])
            jac = None
            if with_jac:
                jac = np.zeros((2, setup.n))
                d_c = np.array([c[0] / h, c[1] / h, -mu]) if h > 1e-12 else np.array(
                    [0.0, 0.0, -mu]
                )
                for axis in range(3):
                    jac[0, _coeff_cols(k, axis)] = d_c[axis] * b2
                jac[1, _coeff_cols(k, 2)] = -b2
            return Block(f"friction:{k}:{s}", vals, jac)

        return evaluate

    for k, phase in enumerate(setup.phases):
        if not phase.contact.any():
            continue
        for s, t_local in enumerate(phase_sample_offsets(phase.duration)):
            tasks.append(
                Task(
                    tag=f"friction:{k}:{s}", kind="ineq", weight=1.0,
                    evaluate=make(k, s, t_local),
                )
            )
    return tasks


def kinematic_ball_rows(setup: ProblemSetup) -> list[Task]:
    """Double-ball limb extension bounds for grounded legs on the sample grid,
    plus a reachability row for footholds landing at the horizon end."""
    tasks = []
    model = setup.model
    l_min_sq = model.l_min**2
    l_max_sq = model.l_max**2
    n_s = setup.n_segments

    def make(k, t_local, pairs, tag):
        b0 = basis_row(t_local, 0)

        def evaluate(ws, with_jac):
            kin = ws.kin(k, t_local)
            r, dr = kin.rotation
            vals = []
            jacs = []
            for leg, slot in pairs:
                e = kin.pose[:3] + r @ model.hip_offsets[leg] - ws.position_at(slot)
                s_sq = float(e @ e)
                vals.extend([l_min_sq - s_sq, s_sq - l_max_sq])
                if with_jac:
                    row_min = np.zeros(setup.n)
                    row_max = np.zeros(setup.n)
                    for axis in range(3):
                        row_max[_coeff_cols(k, axis)] += 2.0 * e[axis] * b0
                    for e_idx in range(3):
                        de = 2.0 * float(e @ (dr[e_idx] @ model.hip_offsets[leg]))
                        row_max[_coeff_cols(k, 3 + e_idx)] += de * b0
                    row_max[slot : slot + 3] += -2.0 * e
                    row_min -= row_max
                    jacs.extend([row_min, row_max])
            jac = np.stack(jacs) if with_jac else None
            return Block(tag, np.array(vals), jac)

        return evaluate

    for k, phase in enumerate(setup.phases):
        pairs = _grounded_slots(setup, k)
        if not pairs:
            continue
        for s, t_local in enumerate(phase_sample_offsets(phase.duration)):
            tag = f"kin_ball:{k}:{s}"
            tasks.append(
                Task(tag=tag, kind="ineq", weight=1.0, evaluate=make(k, t_local, pairs, tag))
            )
    if setup.end_landing_legs:
        pairs = [
            (leg, foothold_offset(n_s, leg)) for leg in setup.end_landing_legs
        ]
        tag = "kin_ball:end"
        tasks.append(
            Task(
                tag=tag, kind="ineq", weight=1.0,
                evaluate=make(n_s - 1, setup.durations[-1], pairs, tag),
            )
        )
    return tasks


def convex_footprint_rows(setup: ProblemSetup) -> list[Task]:
    """Counterclockwise footprint convexity per phase, with future touch-down
    completion; rows are cross products of xy differences."""
    tasks = []

    def make(k, slots_by_leg):
        # counterclockwise cycle LF, LH, RH, RF
        ordered = [slots_by_leg[leg] for leg in CCW_LEG_ORDER]

        def evaluate(ws, with_jac):
            q = [ws.position_at(slot)[:2] for slot in ordered]
            combos = (
                (0, 2, 1),  # (q1: q3, q2)
                (0, 3, 2),  # (q1: q4, q3)
                (1, 3, 2),  # (q2: q4, q3)
                (1, 0, 3),  # (q2: q1, q4)
            )
            vals = []
            jacs = []
            for base, ua, va in combos:
                u = q[ua] - q[base]
                v = q[va] - q[base]
                vals.append(u[0] * v[1] - u[1] * v[0])
                if with_jac:
                    row = np.zeros(setup.n)
                    du = np.array([v[1], -v[0]])
                    dv = np.array([-u[1], u[0]])
                    su, sv, sb = ordered[ua], ordered[va], ordered[base]
                    row[su : su + 2] += du
                    row[sv : sv + 2] += dv
                    row[sb : sb + 2] += -du - dv
                    jacs.append(row)
            jac = np.stack(jacs) if with_jac else None
            return Block(f"footprint:{k}", np.array(vals), jac)

        return evaluate

    for k in range(setup.n_segments):
        slots = setup.footprint_composition(k)
        tasks.append(
            Task(tag=f"footprint:{k}", kind="ineq", weight=1.0, evaluate=make(k, slots))
        )
    return tasks


def initial_and_junction_rows(setup: ProblemSetup) -> list[Task]:
    """Equalities: initial pose/twist, measured-foot pins, C1 junctions."""
    tasks = []
    n_s = setup.n_segments

    def eval_initial(ws, with_jac):
        vals = np.concatenate(
            [
                ws.coeffs[0, :, 0] - setup.initial_pose,
                ws.coeffs[0, :, 1] - setup.initial_twist,
            ]
        )
        jac = None
        if with_jac:
            jac = np.zeros((12, setup.n))
            for dim in range(N_DIMS):
                jac[dim, coeff_offset(0, dim, 0)] = 1.0
                jac[6 + dim, coeff_offset(0, dim, 1)] = 1.0
        return Block("initial", vals, jac)

    tasks.append(Task(tag="initial", kind="eq", weight=1.0, evaluate=eval_initial))

    def eval_pins(ws, with_jac):
        vals = (ws.p_meas - setup.measured_feet).ravel()
        jac = None
        if with_jac:
            jac = np.zeros((12, setup.n))
            base = p_meas_offset(n_s, 0)
            for i in range(12):
                jac[i, base + i] = 1.0
        return Block("p_meas_pin", vals, jac)

    tasks.append(Task(tag="p_meas_pin", kind="eq", weight=1.0, evaluate=eval_pins))

    def make_junction(k):
        tau = setup.durations[k]
        b0_end = basis_row(tau, 0)
        b1_end = basis_row(tau, 1)
        b0_start = basis_row(0.0, 0)
        b1_start = basis_row(0.0, 1)

        def evaluate(ws, with_jac):
            pose_gap = ws.coeffs[k] @ b0_end - ws.coeffs[k + 1] @ b0_start
            twist_gap = ws.coeffs[k] @ b1_end - ws.coeffs[k + 1] @ b1_start
            vals = np.concatenate([pose_gap, twist_gap])
            jac = None
            if with_jac:
                jac = np.zeros((12, setup.n))
                for dim in range(N_DIMS):
                    jac[dim, _coeff_cols(k, dim)] = b0_end
                    jac[dim, _coeff_cols(k + 1, dim)] = -b0_start
                    jac[6 + dim, _coeff_cols(k, dim)] = b1_end
                    jac[6 + dim, _coeff_cols(k + 1, dim)] = -b1_start
            return Block(f"junction:{k}", vals, jac)

        return evaluate

    for k in range(n_s - 1):
        tasks.append(
            Task(tag=f"junction:{k}", kind="eq", weight=1.0, evaluate=make_junction(k))
        )
    return tasks


def hard_constraint_rows(setup: ProblemSetup) -> list[Task]:
    """All hard rows: initial/junction/pin equalities, kinematic balls,
    friction and push, convex footprint."""
    return (
        initial_and_junction_rows(setup)
        + kinematic_ball_rows(setup)
        + friction_push_rows(setup)
        + convex_footprint_rows(setup)
    )


def build_tasks(setup: ProblemSetup) -> list[Task]:
    """The full NLP: every objective family plus all constraint rows."""
    return (
        foothold_height_objective(setup)
        + collision_objective(setup)
        + nominal_kinematics_objective(setup)
        + base_alignment_objective(setup)
        + edge_avoidance_objective(setup)
        + previous_solution_objective(setup)
        + tracking_objective(setup)
        + smoothness_objective(setup)
        + robustness_objective(setup)
        + dynamic_stability_rows(setup)
        + hard_constraint_rows(setup)
    )


class TaskSet:
    """Bundle of tasks bound to one setup; the solver-facing NLP object."""

    def __init__(self, setup: ProblemSetup, tasks: list[Task] | None = None):
        self.setup = setup
        self.tasks = tasks if tasks is not None else build_tasks(setup)
        self.objectives = [t for t in self.tasks if "objective" in t.kind]
        self.equalities = [t for t in self.tasks if t.kind == "eq"]
        self.inequalities = [t for t in self.tasks if t.kind == "ineq"]

    @property
    def n(self) -> int:
        return self.setup.n

    def eval_terms(self, x):
        ws = _Workspace(self.setup, x)
        f = 0.0
        for task in self.objectives:
            block = task.evaluate(ws, False)
            if task.kind == "linear-objective":
                f += task.weight * float(block.values.sum())
            else:
                f += 0.5 * task.weight * float(block.values @ block.values)
        c_eq = [task.evaluate(ws, False).values for task in self.equalities]
        c_in = [task.evaluate(ws, False).values for task in self.inequalities]
        return (
            f,
            np.concatenate(c_eq) if c_eq else np.zeros(0),
            np.concatenate(c_in) if c_in else np.zeros(0),
        )

    def linearize(self, x) -> Linearization:
        ws = _Workspace(self.setup, x)
        n = self.setup.n
        h = np.zeros((n, n))
        g = np.zeros(n)
        f = 0.0
        for task in self.objectives:
            block = task.evaluate(ws, True)
            if task.kind == "linear-objective":
                f += task.weight * float(block.values.sum())
                g += task.weight * block.jacobian.sum(axis=0)
            else:
                f += 0.5 * task.weight * float(block.values @ block.values)
                h += task.weight * block.jacobian.T @ block.jacobian
                g += task.weight * block.jacobian.T @ block.values
        eq_blocks = [task.evaluate(ws, True) for task in self.equalities]
        in_blocks = [task.evaluate(ws, True) for task in self.inequalities]
        a_eq = np.vstack([b.jacobian for b in eq_blocks]) if eq_blocks else np.zeros((0, n))
        c_eq = np.concatenate([b.values for b in eq_blocks]) if eq_blocks else np.zeros(0)
        c_in_j = np.vstack([b.jacobian for b in in_blocks]) if in_blocks else np.zeros((0, n))
        c_in = np.concatenate([b.values for b in in_blocks]) if in_blocks else np.zeros(0)
        return Linearization(f=f, H=h, g=g, A_eq=a_eq, c_eq=c_eq, C_ineq=c_in_j, c_ineq=c_in)

    def row_tags(self):
        ws = _Workspace(self.setup, np.zeros(self.setup.n))
        tags = {"eq": [], "ineq": []}
        for kind, tasks in (("eq", self.equalities), ("ineq", self.inequalities)):
            for task in tasks:
                block = task.evaluate(ws, False)
                tags[kind].extend([task.tag] * block.values.size)
        return tags


class _PlainWorkspace:
    """Minimal workspace for standalone task sets (tests, assemble_gn API)."""

    def __init__(self, x):
        self.x = np.asarray(x, dtype=float)


def assemble_gn(tasks: list[Task], x0, setup: ProblemSetup | None = None) -> QPProblem:
    """Gauss-Newton QP at x0: H = sum w J'J, gradient = sum w J'g, and the
    constraint rows linearized at x0 (b = -c so rows read c + J d (=, <=) 0)."""
    ws = _Workspace(setup, x0) if setup is not None else _PlainWorkspace(x0)
    n = np.asarray(x0).size
    h = np.zeros((n, n))
    g = np.zeros(n)
    a_rows, b_vals, c_rows, d_vals = [], [], [], []
    for task in tasks:
        block = task.evaluate(ws, True)
        if task.kind == "objective":
            h += task.weight * block.jacobian.T @ block.jacobian
            g += task.weight * block.jacobian.T @ block.values
        elif task.kind == "linear-objective":
            g += task.weight * block.jacobian.sum(axis=0)
        elif task.kind == "eq":
            a_rows.append(block.jacobian)
            b_vals.append(-block.values)
        else:
            c_rows.append(block.jacobian)
            d_vals.append(-block.values)
    return QPProblem(
        H=h,
        g=g,
        A_eq=np.vstack(a_rows) if a_rows else None,
        b_eq=np.concatenate(b_vals) if b_vals else None,
        C_ineq=np.vstack(c_rows) if c_rows else None,
        d_ineq=np.concatenate(d_vals) if d_vals else None,
    )

"""Gait schedules and piecewise-polynomial base-pose trajectories.

A gait is a cyclic set of per-leg swing windows over one stride; expanding it
yields a partition of the stride into phases of constant contact.  The base
pose is a 6-D spline (x, y, z, yaw, pitch, roll), one quartic segment per
phase, with pose/twist continuity enforced by the optimizer's junction
constraints.  Decision vectors stack segment coefficients, measured foot
positions, desired footholds, and per-phase slacks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rotations

LEG_NAMES = ("LF", "RF", "LH", "RH")
N_LEGS = 4
N_DIMS = 6
N_COEFFS = 5  # quartic: a0 + a1 t + ... + a4 t^4
SAMPLES_PER_PHASE = 7  # spacing tau_k / 6, both endpoints included


class UnknownGaitError(ValueError):
    pass


# Canonical swing windows (lift-off, touch-down) per leg at the default
# stride; scaled linearly to any requested stride.  Legs: LF, RF, LH, RH.
_GAIT_PRESETS: dict[str, tuple[float, dict[int, tuple[float, float]]]] = {
    # full stances of 0.1 s between 0.3 s diagonal swings
    "trot": (0.8, {0: (0.1, 0.4), 3: (0.1, 0.4), 1: (0.5, 0.8), 2: (0.5, 0.8)}),
    # trot without the full stance phases
    "fast-trot": (0.6, {0: (0.0, 0.3), 3: (0.0, 0.3), 1: (0.3, 0.6), 2: (0.3, 0.6)}),
    # diagonal swings overlap by 0.05 s, producing flight phases
    "running-trot": (0.5, {0: (0.0, 0.3), 3: (0.0, 0.3), 1: (0.25, 0.55), 2: (0.25, 0.55)}),
    # single-leg 0.3 s swings separated by full stances
    "crawl": (2.4, {0: (0.3, 0.6), 3: (0.9, 1.2), 1: (1.5, 1.8), 2: (2.1, 2.4)}),
    # crawl with overlapped swings: double support throughout, no triple stance
    "amble": (1.2, {0: (0.0, 0.6), 3: (0.3, 0.9), 1: (0.6, 1.2), 2: (0.9, 1.5)}),
    # trot timing with lateral leg pairs
    "pace": (0.8, {0: (0.1, 0.4), 2: (0.1, 0.4), 1: (0.5, 0.8), 3: (0.5, 0.8)}),
    "running-pace": (0.5, {0: (0.0, 0.3), 2: (0.0, 0.3), 1: (0.25, 0.55), 3: (0.25, 0.55)}),
}

GAIT_NAMES = tuple(_GAIT_PRESETS)


@dataclass(frozen=True)
class Phase:
    start: float  # within [0, stride)
    duration: float
    contact: np.ndarray  # (4,) bool
    touchdown_legs: tuple[int, ...]  # legs landing at the phase start


@dataclass(frozen=True)
class GaitSchedule:
    name: str
    stride: float
    swing_windows: np.ndarray  # (4, 2) lift-off / touch-down, may exceed stride (wrap)
    phases: tuple[Phase, ...]

    def in_contact(self, leg: int, t: float) -> bool:
        lo, td = self.swing_windows[leg]
        tau = t % self.stride
        if td <= self.stride:
            return not (lo <= tau < td)
        return not (tau >= lo or tau < td - self.stride)

    def contact_flags(self, t: float) -> np.ndarray:
        return np.array([self.in_contact(leg, t) for leg in range(N_LEGS)])

    def phases_from(self, t0: float) -> tuple[Phase, ...]:
        """One stride of phases starting at gait-clock time t0 (an event time)."""
        tau0 = t0 % self.stride
        starts = [p.start for p in self.phases]
        if not any(abs(tau0 - s) < 1e-9 for s in starts):
            raise ValueError(f"t0={t0} is not a phase boundary of gait {self.name}")
        k0 = min(range(len(starts)), key=lambda k: abs(starts[k] - tau0))
        n = len(self.phases)
        return tuple(self.phases[(k0 + k) % n] for k in range(n))

    def touchdown_times(self, t_from: float, t_to: float) -> list[tuple[float, tuple[int, ...]]]:
        """Absolute touch-down events in (t_from, t_to]."""
        events = []
        for phase in self.phases:
            if not phase.touchdown_legs:
                continue
            k = np.floor((t_from - phase.start) / self.stride)
            t = phase.start + k * self.stride
            while t <= t_to + 1e-12:
                if t > t_from + 1e-12:
                    events.append((t, phase.touchdown_legs))
                t += self.stride
        return sorted(events)


def expand_gait(name: str, stride: float | None = None) -> GaitSchedule:
    """Canonical gait timings scaled to the requested stride."""
    key = name.replace("_", "-").lower()
    if key not in _GAIT_PRESETS:
        raise UnknownGaitError(f"unknown gait {name!r}; choose from {GAIT_NAMES}")
    default_stride, windows = _GAIT_PRESETS[key]
    stride = default_stride if stride is None else float(stride)
    if stride <= 0:
        raise ValueError("stride must be positive")
    scale = stride / default_stride
    swing = np.zeros((N_LEGS, 2))
    for leg, (lo, td) in windows.items():
        swing[leg] = (lo * scale, td * scale)

    boundaries = set()
    for lo, td in swing:
        boundaries.add(round(lo % stride, 12))
        boundaries.add(round(td % stride, 12))
    starts = sorted(boundaries)

    def in_contact(leg, tau):
        lo, td = swing[leg]
        if td <= stride:
            return not (lo - 1e-12 <= tau < td - 1e-12)
        return not (tau >= lo - 1e-12 or tau < td - stride - 1e-12)

    phases = []
    for i, s in enumerate(starts):
        end = starts[i + 1] if i + 1 < len(starts) else stride + starts[0]
        duration = end - s
        mid = s + 0.5 * duration
        contact = np.array([in_contact(leg, mid % stride) for leg in range(N_LEGS)])
        tds = tuple(
            leg for leg in range(N_LEGS) if abs(swing[leg][1] % stride - s) < 1e-9
        )
        phases.append(Phase(start=s, duration=duration, contact=contact, touchdown_legs=tds))
    return GaitSchedule(name=key, stride=stride, swing_windows=swing, phases=tuple(phases))


# -- motion plan -------------------------------------------------------------


@dataclass
class MotionPlan:
    """Per-phase quartic 6-D base-pose segments plus footholds and slacks."""

    durations: np.ndarray  # (N_s,)
    coeffs: np.ndarray  # (N_s, 6, 5)
    p_meas: np.ndarray  # (4, 3) measured foot positions
    footholds: np.ndarray  # (4, 3) desired footholds
    slacks: np.ndarray  # (N_s,)
    contacts: np.ndarray | None = None  # (N_s, 4) bool, from the gait
    use_desired: np.ndarray | None = None  # (N_s, 4) bool: desired vs measured foot
    start_time: float = 0.0

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        n_s = len(self.durations)
        if self.coeffs.shape != (n_s, N_DIMS, N_COEFFS):
            raise ValueError("coefficient block must be (N_s, 6, 5)")
        if np.any(self.durations <= 0):
            raise ValueError("segment durations must be positive")
        self.p_meas = np.asarray(self.p_meas, dtype=float).reshape(N_LEGS, 3)
        self.footholds = np.asarray(self.footholds, dtype=float).reshape(N_LEGS, 3)
        self.slacks = np.asarray(self.slacks, dtype=float).reshape(n_s)

    @property
    def n_segments(self) -> int:
        return len(self.durations)

    @property
    def horizon(self) -> float:
        return float(self.durations.sum())

    def segment_index(self, t: float) -> tuple[int, float]:
        """Segment containing plan-local time t and the local offset."""
        if t < -1e-9 or t > self.horizon + 1e-9:
            raise ValueError(f"t={t} outside plan horizon [0, {self.horizon}]")
        acc = 0.0
        for k, tau in enumerate(self.durations):
            if t < acc + tau or k == self.n_segments - 1:
                return k, min(max(t - acc, 0.0), tau)
            acc += tau
        raise AssertionError

    def active_foot_position(self, k: int, leg: int) -> np.ndarray:
        if self.use_desired is not None and self.use_desired[k, leg]:
            return self.footholds[leg]
        return self.p_meas[leg]


def basis_row(t: float, order: int) -> np.ndarray:
    """Row of d^order/dt^order [1, t, t^2, t^3, t^4]."""
    row = np.zeros(N_COEFFS)
    for c in range(order, N_COEFFS):
        fac = 1.0
        for j in range(order):
            fac *= c - j
        row[c] = fac * t ** (c - order)
    return row


def eval_plan(plan: MotionPlan, t: float, order: int = 0) -> np.ndarray:
    """6-vector pose (order 0), Euler-rate twist (1) or acceleration (2)."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    k, tau = plan.segment_index(t)
    return plan.coeffs[k] @ basis_row(tau, order)


def eval_segment(coeffs_k: np.ndarray, tau: float, order: int = 0) -> np.ndarray:
    return coeffs_k @ basis_row(tau, order)


def base_kinematics(plan: MotionPlan, t: float, model) -> dict:
    """Rotation, body rates and momenta at plan-local time t.

    Angular momentum is ``L = R I omega_body`` with the nominal base inertia;
    its rate follows from analytic differentiation along the spline.
    """
    pose = eval_plan(plan, t, 0)
    twist = eval_plan(plan, t, 1)
    accel = eval_plan(plan, t, 2)
    eta, etad, etadd = pose[3:], twist[3:], accel[3:]
    r = rotations.rotation_matrix(eta)
    omega = rotations.body_angular_velocity(eta, etad)
    return {
        "R_B": r,
        "omega_body": omega,
        "P_B": model.mass * twist[:3],
        "L_B": r @ (model.inertia @ omega),
        "Ldot_B": rotations.angular_momentum_rate_world(eta, etad, etadd, model.inertia),
    }


def phase_sample_offsets(duration: float) -> np.ndarray:
    return np.linspace(0.0, duration, SAMPLES_PER_PHASE)


# -- decision vector ----------------------------------------------------------
#
# Layout: [segment coefficients | p_meas | footholds | slacks].  The
# coefficient block is row-major over (segment, dimension, power).


def vector_size(n_segments: int) -> int:
    return n_segments * N_DIMS * N_COEFFS + 2 * N_LEGS * 3 + n_segments


def coeff_offset(k: int, dim: int = 0, power: int = 0) -> int:
    return (k * N_DIMS + dim) * N_COEFFS + power


def p_meas_offset(n_segments: int, leg: int = 0) -> int:
    return n_segments * N_DIMS * N_COEFFS + leg * 3


def foothold_offset(n_segments: int, leg: int = 0) -> int:
    return n_segments * N_DIMS * N_COEFFS + N_LEGS * 3 + leg * 3


def slack_offset(n_segments: int, k: int = 0) -> int:
    return n_segments * N_DIMS * N_COEFFS + 2 * N_LEGS * 3 + k


def pack(plan: MotionPlan) -> np.ndarray:
    return np.concatenate(
        [
            plan.coeffs.ravel(),
            plan.p_meas.ravel(),
            plan.footholds.ravel(),
            plan.slacks,
        ]
    )


def unpack(x: np.ndarray, durations, contacts=None, use_desired=None,
           start_time: float = 0.0) -> MotionPlan:
    durations = np.asarray(durations, dtype=float)
    n_s = len(durations)
    if x.size != vector_size(n_s):
        raise ValueError(f"vector size {x.size} != expected {vector_size(n_s)}")
    nc = n_s * N_DIMS * N_COEFFS
    coeffs = x[:nc].reshape(n_s, N_DIMS, N_COEFFS)
    p_meas = x[nc : nc + 12].reshape(4, 3)
    footholds = x[nc + 12 : nc + 24].reshape(4, 3)
    slacks = x[nc + 24 :]
    return MotionPlan(
        durations=durations,
        coeffs=coeffs.copy(),
        p_meas=p_meas.copy(),
        footholds=footholds.copy(),
        slacks=slacks.copy(),
        contacts=contacts,
        use_desired=use_desired,
        start_time=start_time,
    )


def leg_position_schedule(phases: tuple[Phase, ...]) -> np.ndarray:
    """(N_s, 4) bool: whether a leg's position is the desired foothold.

    A leg switches from its measured position to the desired foothold at its
    first touch-down within the horizon; legs landing exactly at the horizon
    end never switch in-horizon.
    """
    n_s = len(phases)
    use_desired = np.zeros((n_s, N_LEGS), dtype=bool)
    landed = np.zeros(N_LEGS, dtype=bool)
    for k, phase in enumerate(phases):
        for leg in phase.touchdown_legs:
            if k > 0:
                landed[leg] = True
        use_desired[k] = landed
    return use_desired


def constant_plan(phases: tuple[Phase, ...], pose, twist, feet,
                  start_time: float = 0.0) -> MotionPlan:
    """Initial guess: every segment starts from the given pose with the given
    twist; footholds seeded at the measured feet."""
    n_s = len(phases)
    coeffs = np.zeros((n_s, N_DIMS, N_COEFFS))
    t_acc = 0.0
    pose = np.asarray(pose, dtype=float)
    twist = np.asarray(twist, dtype=float)
    for k, phase in enumerate(phases):
        coeffs[k, :, 0] = pose + twist * t_acc
        coeffs[k, :, 1] = twist
        t_acc += phase.duration
    feet = np.asarray(feet, dtype=float).reshape(4, 3)
    return MotionPlan(
        durations=np.array([p.duration for p in phases]),
        coeffs=coeffs,
        p_meas=feet.copy(),
        footholds=feet.copy(),
        slacks=np.zeros(n_s),
        contacts=np.stack([p.contact for p in phases]),
        use_desired=leg_position_schedule(phases),
        start_time=start_time,
    )

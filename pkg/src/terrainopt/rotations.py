"""ZYX-Euler rotation algebra with analytic derivatives.

Angles are stored as ``eta = (psi, theta, phi)`` = (yaw, pitch, roll) and the
rotation matrix is ``R = Rz(psi) @ Ry(theta) @ Rx(phi)``, mapping base-frame
vectors to world frame.  All partials returned here are exact; the task layer
relies on them to satisfy its finite-difference contract.
"""

from __future__ import annotations

import numpy as np


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_matrix(eta: np.ndarray) -> np.ndarray:
    """World-from-base rotation for ZYX Euler angles (yaw, pitch, roll)."""
    psi, theta, phi = eta
    cps, sps = np.cos(psi), np.sin(psi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    rz = np.array([[cps, -sps, 0.0], [sps, cps, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    return rz @ ry @ rx


def rotation_matrix_partials(eta: np.ndarray):
    """Returns (R, dR) with dR[k] = dR/d eta_k."""
    psi, theta, phi = eta
    cps, sps = np.cos(psi), np.sin(psi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    rz = np.array([[cps, -sps, 0.0], [sps, cps, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    drz = np.array([[-sps, -cps, 0.0], [cps, -sps, 0.0], [0.0, 0.0, 0.0]])
    dry = np.array([[-st, 0.0, ct], [0.0, 0.0, 0.0], [-ct, 0.0, -st]])
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -sp, -cp], [0.0, cp, -sp]])
    r = rz @ ry @ rx
    dr = np.stack([drz @ ry @ rx, rz @ dry @ rx, rz @ ry @ drx])
    return r, dr


def rate_map(eta: np.ndarray) -> np.ndarray:
    """C(eta) with omega_body = C @ (psi_dot, theta_dot, phi_dot)."""
    _, theta, phi = eta
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    return np.array(
        [
            [-st, 0.0, 1.0],
            [ct * sp, cp, 0.0],
            [ct * cp, -sp, 0.0],
        ]
    )


def rate_map_partials(eta: np.ndarray):
    """Returns (C, dC, d2C): dC[k] = dC/d eta_k, d2C[k][j] = d2C/(d eta_k d eta_j).

    C depends only on theta (k=1) and phi (k=2); the psi slots are zero.
    """
    _, theta, phi = eta
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    c = np.array([[-st, 0.0, 1.0], [ct * sp, cp, 0.0], [ct * cp, -sp, 0.0]])
    z = np.zeros((3, 3))
    dc_t = np.array([[-ct, 0.0, 0.0], [-st * sp, 0.0, 0.0], [-st * cp, 0.0, 0.0]])
    dc_p = np.array([[0.0, 0.0, 0.0], [ct * cp, -sp, 0.0], [-ct * sp, -cp, 0.0]])
    d2c_tt = np.array([[st, 0.0, 0.0], [-ct * sp, 0.0, 0.0], [-ct * cp, 0.0, 0.0]])
    d2c_tp = np.array([[0.0, 0.0, 0.0], [-st * cp, 0.0, 0.0], [st * sp, 0.0, 0.0]])
    d2c_pp = np.array([[0.0, 0.0, 0.0], [-ct * sp, -cp, 0.0], [-ct * cp, sp, 0.0]])
    dc = np.stack([z, dc_t, dc_p])
    d2c = np.stack(
        [
            np.stack([z, z, z]),
            np.stack([z, d2c_tt, d2c_tp]),
            np.stack([z, d2c_tp, d2c_pp]),
        ]
    )
    return c, dc, d2c


def body_angular_velocity(eta: np.ndarray, etad: np.ndarray) -> np.ndarray:
    return rate_map(eta) @ etad


def angular_momentum_world(eta, etad, inertia) -> np.ndarray:
    """L = R @ (I @ omega_body)."""
    return rotation_matrix(eta) @ (inertia @ body_angular_velocity(eta, etad))


def angular_momentum_rate_world(eta, etad, etadd, inertia) -> np.ndarray:
    """Ldot = R ([omega]x I omega + I omega_dot), omega_dot = Cdot etad + C etadd."""
    r = rotation_matrix(eta)
    c, dc, _ = rate_map_partials(eta)
    omega = c @ etad
    cdot = dc[1] * etad[1] + dc[2] * etad[2]
    omega_dot = cdot @ etad + c @ etadd
    return r @ (skew(omega) @ (inertia @ omega) + inertia @ omega_dot)


def angular_momentum_rate_partials(eta, etad, etadd, inertia):
    """Ldot plus exact Jacobians w.r.t. eta, etad, etadd (each 3x3)."""
    r, dr = rotation_matrix_partials(eta)
    c, dc, d2c = rate_map_partials(eta)
    omega = c @ etad
    cdot = dc[1] * etad[1] + dc[2] * etad[2]
    omega_dot = cdot @ etad + c @ etadd
    i_omega = inertia @ omega
    inner = skew(omega) @ i_omega + inertia @ omega_dot
    ldot = r @ inner

    j_eta = np.empty((3, 3))
    j_etad = np.empty((3, 3))
    j_etadd = r @ inertia @ c

    for k in range(3):
        # d omega / d eta_k and d omega_dot / d eta_k
        w_k = dc[k] @ etad
        dcdot_k = d2c[k][1] * etad[1] + d2c[k][2] * etad[2]
        dw_dot_k = dcdot_k @ etad + dc[k] @ etadd
        d_inner = (
            skew(w_k) @ i_omega
            + skew(omega) @ (inertia @ w_k)
            + inertia @ dw_dot_k
        )
        j_eta[:, k] = dr[k] @ inner + r @ d_inner

        # d omega / d etad_k = c_k; d omega_dot / d etad_k = dC/d eta_k etad + Cdot e_k
        c_k = c[:, k]
        dw_dot_v = dc[k] @ etad + cdot[:, k]
        d_inner_v = (
            skew(c_k) @ i_omega
            + skew(omega) @ (inertia @ c_k)
            + inertia @ dw_dot_v
        )
        j_etad[:, k] = r @ d_inner_v

    return ldot, j_eta, j_etad, j_etadd


def angular_momentum_partials(eta, etad, inertia):
    """L plus exact Jacobians w.r.t. eta and etad."""
    r, dr = rotation_matrix_partials(eta)
    c, dc, _ = rate_map_partials(eta)
    omega = c @ etad
    l = r @ (inertia @ omega)
    j_eta = np.empty((3, 3))
    for k in range(3):
        j_eta[:, k] = dr[k] @ (inertia @ omega) + r @ (inertia @ (dc[k] @ etad))
    j_etad = r @ inertia @ c
    return l, j_eta, j_etad

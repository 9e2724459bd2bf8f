"""Conserved/primitive state handling, convective fluxes, initial states.

States are stored as conserved variables e = (rho, rho*u, rho*v, E) in the
last axis.  Positivity of density and pressure is a hard invariant: a
violation raises rather than being clipped, since it signals loss of
well-posedness, not a situation to paper over.
"""

from __future__ import annotations

import numpy as np

GAMMA = 1.4

__all__ = ["GAMMA", "PositivityError", "conserved", "primitive", "pressure",
           "temperature", "sound_speed", "convective_flux", "mach_flow_state",
           "mach_shock_states", "check_positivity"]


class PositivityError(RuntimeError):
    """Negative density or pressure encountered."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


def conserved(rho, u, v, p, gamma=GAMMA):
    rho, u, v, p = np.broadcast_arrays(*map(np.asarray, (rho, u, v, p)))
    e = np.empty(rho.shape + (4,), dtype=float)
    e[..., 0] = rho
    e[..., 1] = rho * u
    e[..., 2] = rho * v
    e[..., 3] = p / (gamma - 1.0) + 0.5 * rho * (u * u + v * v)
    return e


def primitive(e, gamma=GAMMA):
    rho = e[..., 0]
    u = e[..., 1] / rho
    v = e[..., 2] / rho
    p = (gamma - 1.0) * (e[..., 3] - 0.5 * rho * (u * u + v * v))
    return rho, u, v, p


def pressure(e, gamma=GAMMA):
    rho = e[..., 0]
    ke = 0.5 * (e[..., 1] ** 2 + e[..., 2] ** 2) / rho
    return (gamma - 1.0) * (e[..., 3] - ke)


def temperature(e, gamma=GAMMA):
    return pressure(e, gamma) / e[..., 0]


def sound_speed(rho, p, gamma=GAMMA):
    return np.sqrt(gamma * p / rho)


def check_positivity(rho, p, context=""):
    rho = np.asarray(rho)
    p = np.asarray(p)
    bad = (rho <= 0.0) | (p <= 0.0)
    if bad.any():
        idx = np.argwhere(bad)
        k = tuple(int(t) for t in idx[0])
        raise PositivityError(
            f"nonpositive density/pressure at {len(idx)} points "
            f"({context}); first index {k}: rho={np.asarray(rho)[k]:.6g} "
            f"p={np.asarray(p)[k]:.6g}", where=k)


def convective_flux(e, gamma=GAMMA):
    """Fluxes (f_x, f_y) of the 2D Euler system for conserved state e."""
    rho, u, v, p = primitive(e, gamma)
    check_positivity(rho, p, "flux evaluation")
    E = e[..., 3]
    fx = np.empty_like(e)
    fx[..., 0] = rho * u
    fx[..., 1] = rho * u * u + p
    fx[..., 2] = rho * u * v
    fx[..., 3] = u * (E + p)
    fy = np.empty_like(e)
    fy[..., 0] = rho * v
    fy[..., 1] = rho * u * v
    fy[..., 2] = rho * v * v + p
    fy[..., 3] = v * (E + p)
    return fx, fy


def mach_flow_state(M):
    """Uniform Mach-M stream with unit sound speed."""
    return (1.4, float(M), 0.0, 1.0)


def mach_shock_states(M, gamma=GAMMA):
    """Pre/post states of a Mach-M shock moving into quiescent gas.

    The ambient state (1.4, 0, 0, 1) has unit sound speed, so the shock
    travels at speed M; the post-shock density carries the ambient-density
    factor so the pair satisfies the Rankine-Hugoniot conditions exactly.
    """
    rho_r, u_r, v_r, p_r = 1.4, 0.0, 0.0, 1.0
    zeta = (2.0 * gamma * M * M - gamma + 1.0) / (gamma + 1.0)
    rho_l = rho_r * (gamma + 1.0) * M * M / ((gamma - 1.0) * M * M + 2.0)
    u_l = (zeta - 1.0) / (gamma * M)
    left = (rho_l, u_l, 0.0, zeta * p_r)
    right = (rho_r, u_r, v_r, p_r)
    return left, right

"""Compressible Euler state algebra: EOS, fluxes, wave speeds, Rusanov flux.

Conserved states are arrays whose last axis holds (rho, rho*u, rho*v, rho*E).
All functions broadcast over leading axes, so they work on single states as
well as on whole quadrature-point batches.
"""

import numpy as np

GAMMA_DEFAULT = 1.4

RHO_MIN = 1e-12
P_MIN = 1e-12


class PhysicsError(Exception):
    """Raised when an inadmissible state enters a pointwise operation."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


def conserved(rho, u, v, p, gamma=GAMMA_DEFAULT):
    """Assemble conserved variables from primitives (broadcasting)."""
    rho, u, v, p = np.broadcast_arrays(*map(np.asarray, (rho, u, v, p)))
    E = p / ((gamma - 1.0) * rho) + 0.5 * (u * u + v * v)
    return np.stack([rho, rho * u, rho * v, rho * E], axis=-1)


def primitives(U, gamma=GAMMA_DEFAULT):
    """Return (rho, u, v, p) from conserved variables."""
    rho = U[..., 0]
    inv = 1.0 / rho
    u = U[..., 1] * inv
    v = U[..., 2] * inv
    p = (gamma - 1.0) * (U[..., 3] - 0.5 * rho * (u * u + v * v))
    return rho, u, v, p


def pressure(U, gamma=GAMMA_DEFAULT):
    rho = U[..., 0]
    return (gamma - 1.0) * (U[..., 3] - 0.5 * (U[..., 1] ** 2 + U[..., 2] ** 2) / rho)


def sound_speed(U, gamma=GAMMA_DEFAULT):
    return np.sqrt(gamma * pressure(U, gamma) / U[..., 0])


def is_admissible(U, gamma=GAMMA_DEFAULT, rho_min=RHO_MIN, p_min=P_MIN):
    """Pointwise admissibility predicate: finite, rho > rho_min, p > p_min."""
    finite = np.all(np.isfinite(U), axis=-1)
    rho = U[..., 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        p = pressure(U, gamma)
    return finite & (rho > rho_min) & (p > p_min)


def require_admissible(U, gamma=GAMMA_DEFAULT, context=""):
    ok = is_admissible(U, gamma)
    if not np.all(ok):
        bad = np.asarray(U)[~np.asarray(ok)]
        raise PhysicsError(f"inadmissible state {context}: {bad[:1]}", state=bad[:1])


def flux(U, gamma=GAMMA_DEFAULT, out=None):
    """Flux tensor F(U) with shape U.shape[:-1] + (2, 4).

    Component [..., 0, :] is the x-flux, [..., 1, :] the y-flux.
    """
    U = np.asarray(U)
    if out is None:
        out = np.empty(U.shape[:-1] + (2, 4))
    rho = U[..., 0]
    mx = U[..., 1]
    my = U[..., 2]
    E = U[..., 3]
    inv = 1.0 / rho
    u = mx * inv
    v = my * inv
    p = (gamma - 1.0) * (E - 0.5 * (mx * u + my * v))
    Ep = E + p
    Fx = out[..., 0, :]
    Fy = out[..., 1, :]
    Fx[..., 0] = mx
    Fx[..., 1] = mx * u + p
    Fx[..., 2] = my * u
    Fx[..., 3] = Ep * u
    Fy[..., 0] = my
    Fy[..., 1] = mx * v
    Fy[..., 2] = my * v + p
    Fy[..., 3] = Ep * v
    return out


def normal_flux_and_speed(U, nx, ny, gamma=GAMMA_DEFAULT):
    """Normal flux F(U)·n and the wave speed |u·n| + c, in one pass."""
    rho = U[..., 0]
    mx = U[..., 1]
    my = U[..., 2]
    E = U[..., 3]
    inv = 1.0 / rho
    u = mx * inv
    v = my * inv
    p = (gamma - 1.0) * (E - 0.5 * (mx * u + my * v))
    un = u * nx + v * ny
    F = np.empty_like(U)
    F[..., 0] = rho * un
    F[..., 1] = mx * un + p * nx
    F[..., 2] = my * un + p * ny
    F[..., 3] = (E + p) * un
    c = np.sqrt(gamma * p * inv)
    return F, np.abs(un) + c


def max_wave_speed(U, gamma=GAMMA_DEFAULT):
    """|u| + c, the largest eigenvalue magnitude over all directions."""
    rho, u, v, p = primitives(U, gamma)
    return np.hypot(u, v) + np.sqrt(gamma * p / rho)


def rusanov_flux(UL, UR, nx, ny, gamma=GAMMA_DEFAULT):
    """Rusanov numerical flux 0.5(F(UR)+F(UL))·n - 0.5 s_max (UR - UL).

    s_max is the larger of |u·n| + c evaluated on the two input states.
    Broadcasts over leading axes; the normal components broadcast likewise.
    """
    FL, sL = normal_flux_and_speed(UL, nx, ny, gamma)
    FR, sR = normal_flux_and_speed(UR, nx, ny, gamma)
    s = np.maximum(sL, sR)
    return 0.5 * (FL + FR) - 0.5 * s[..., None] * (UR - UL)


def flux_directional_derivative(U, dUx, dUy, gamma=GAMMA_DEFAULT):
    """Div of the flux by the chain rule: A_x(U) dUx + A_y(U) dUy.

    dUx, dUy are the spatial gradients of the state; the return value is
    the pointwise divergence of F(U(x)), shape U.shape.
    """
    rho = U[..., 0]
    mx = U[..., 1]
    my = U[..., 2]
    E = U[..., 3]
    inv = 1.0 / rho
    u = mx * inv
    v = my * inv
    q2h = 0.5 * (u * u + v * v)
    p = (gamma - 1.0) * (E - rho * q2h)
    Ep = E + p

    def dF(dU, direction):
        drho = dU[..., 0]
        dmx = dU[..., 1]
        dmy = dU[..., 2]
        dE = dU[..., 3]
        du = (dmx - u * drho) * inv
        dv = (dmy - v * drho) * inv
        dp = (gamma - 1.0) * (dE - u * dmx - v * dmy + q2h * drho)
        dEp = dE + dp
        out = np.empty_like(dU)
        if direction == 0:
            out[..., 0] = dmx
            out[..., 1] = dmx * u + mx * du + dp
            out[..., 2] = dmy * u + my * du
            out[..., 3] = dEp * u + Ep * du
        else:
            out[..., 0] = dmy
            out[..., 1] = dmx * v + mx * dv
            out[..., 2] = dmy * v + my * dv + dp
            out[..., 3] = dEp * v + Ep * dv
        return out

    return dF(dUx, 0) + dF(dUy, 1)


def manufactured_source(xy, case="manufactured2d"):
    """Source term of the built-in manufactured steady solution.

    S = (0.4, 0.6, 0.6, 1.8) cos(x + y) for the 2D case.
    """
    if case != "manufactured2d":
        raise ValueError(f"unknown manufactured case {case!r}")
    xy = np.asarray(xy)
    c = np.cos(xy[..., 0] + xy[..., 1])
    return np.stack([0.4 * c, 0.6 * c, 0.6 * c, 1.8 * c], axis=-1)


def riemann_invariants(U, nx, ny, gamma=GAMMA_DEFAULT):
    """(R+, R-) = u·n ± 2c/(gamma-1) for a state and outward normal."""
    rho, u, v, p = primitives(U, gamma)
    un = u * nx + v * ny
    c = np.sqrt(gamma * p / rho)
    return un + 2.0 * c / (gamma - 1.0), un - 2.0 * c / (gamma - 1.0)

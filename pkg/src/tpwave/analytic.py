"""Closed-form reference fields and boundary-data generators.

Time-harmonic quantities use the convention u(t) = Re(u_hat exp(-i omega t)).
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

SH_NORM = math.sqrt(3.0 / (4.0 * math.pi))  # y_1^0 = SH_NORM cos(theta)


def _positive(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("argument must be positive")
    return x


def spherical_j1(x):
    x = _positive(x)
    return np.sin(x) / x**2 - np.cos(x) / x


def spherical_y1(x):
    x = _positive(x)
    return -np.cos(x) / x**2 - np.sin(x) / x


def spherical_hankel_h11(x):
    """h_1^(1)(x) = j_1(x) + i y_1(x) = -exp(ix)(x + i)/x^2."""
    x = _positive(x)
    return -np.exp(1j * x) * (x + 1j) / x**2


def spherical_hankel_h10(x):
    x = _positive(x)
    return -1j * np.exp(1j * x) / x


def spherical_hankel_h11_prime(x):
    x = _positive(x)
    return spherical_hankel_h10(x) - 2.0 * spherical_hankel_h11(x) / x


def _as_points(position):
    p = np.atleast_2d(np.asarray(position, dtype=float))
    if p.shape[1] != 3:
        raise ValueError("positions must be 3-vectors")
    return p


def _maybe_squeeze(out, position):
    return out[0] if np.ndim(position) == 1 else out


def sphere_gradient_y10(position):
    """Y = surface gradient of y_1^0 at xi = x/|x|, in Cartesian form."""
    p = _as_points(position)
    r2 = np.einsum("ij,ij->i", p, p)
    if np.any(r2 == 0):
        raise ValueError("origin has no direction")
    x, y, z = p.T
    out = SH_NORM * np.stack([-x * z, -y * z, x * x + y * y], axis=1) / r2[:, None]
    return _maybe_squeeze(out, position)


def exact_appendix_field(position, omega: float, r_min: float = 1e-12):
    """E = h(omega r) Y(xi) x xi  and  H = (i/omega) curl E.

    Y x xi = SH_NORM (-y, x, 0)/r, so E = g(r) (-y, x, 0) with
    g = SH_NORM h(omega r)/r, and curl E has the closed form used below.
    Returns complex arrays (E, H), each (n, 3) (or (3,) for a single point).
    """
    p = _as_points(position)
    r = np.linalg.norm(p, axis=1)
    if np.any(r < r_min):
        raise ValueError("field is singular at the origin")
    x, y, z = p.T
    h = spherical_hankel_h11(omega * r)
    hp = spherical_hankel_h11_prime(omega * r)
    g = SH_NORM * h / r
    gp = SH_NORM * (omega * hp / r - h / r**2)
    e = np.stack([-y * g, x * g, np.zeros_like(g)], axis=1)
    curl = np.stack([-x * z * gp / r, -y * z * gp / r, 2 * g + (x * x + y * y) * gp / r], axis=1)
    hfield = 1j / omega * curl
    return _maybe_squeeze(e, position), _maybe_squeeze(hfield, position)


def boundary_lambda_appendix(surface_point, omega: float, tol: float = 1e-8):
    """h(omega) Y(xi) on the unit sphere."""
    p = _as_points(surface_point)
    r = np.linalg.norm(p, axis=1)
    if np.any(np.abs(r - 1.0) > tol):
        raise ValueError("point is not on the unit sphere")
    out = spherical_hankel_h11(omega) * sphere_gradient_y10(p)
    return _maybe_squeeze(out, surface_point)


def traveling_wave_1d(x, t, omega: float, c: float, mu: float = 1.0):
    """Right-going wave E = sin(omega (t - x/c)), H = -sin(omega (t - x/c))/(mu c).

    Solves dE/dt = eps^-1 dH/dx, dH/dt = mu^-1 dE/dx with eps = 1/(mu c^2);
    mu = 1 gives the companion H = -(1/c) sin(...).
    """
    if not c > 0:
        raise ValueError("wave speed must be positive")
    phase = omega * (np.asarray(t) - np.asarray(x) / c)
    e = np.sin(phase)
    return e, -e / (mu * c)


def traveling_wave_1d_hat(x, omega: float, c: float, mu: float = 1.0):
    """Complex amplitudes of traveling_wave_1d: E_hat = i exp(i omega x / c)."""
    e = 1j * np.exp(1j * omega * np.asarray(x) / c)
    return e, -e / (mu * c)


class ErrorNorms(NamedTuple):
    l2_rel: float
    max_rel: float
    relative: bool = True


def error_norms(numerical, analytic, weights=None) -> ErrorNorms:
    """Weighted relative L2 error and max error relative to max |analytic|.

    A vanishing reference switches to absolute norms (``relative=False``).
    """
    a = np.asarray(analytic)
    diff = np.asarray(numerical) - a
    w = np.ones(a.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    w = w.reshape((-1,) + (1,) * (a.ndim - 1))
    err2 = float(np.sum(w * np.abs(diff) ** 2))
    ref2 = float(np.sum(w * np.abs(a) ** 2))
    err_max = float(np.max(np.abs(diff))) if diff.size else 0.0
    ref_max = float(np.max(np.abs(a))) if a.size else 0.0
    if ref2 == 0 or ref_max == 0:
        return ErrorNorms(math.sqrt(err2), err_max, relative=False)
    return ErrorNorms(math.sqrt(err2 / ref2), err_max / ref_max)


# boundary amplitude generators -----------------------------------------------
# signature: profile(positions, tangents, omega, wave_speed) -> complex array

def zero_profile():
    def profile(pos, tang, omega, c):
        return np.zeros(len(pos), dtype=complex)
    return profile


def constant_profile(value: complex):
    def profile(pos, tang, omega, c):
        return np.full(len(pos), complex(value))
    return profile


def plane_wave_profile(amplitude: complex = 1.0, direction=(1.0,), polarization=None):
    """amplitude * exp(i k d.x), k = omega/c; for edges times (polarization . t)."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)

    def profile(pos, tang, omega, c):
        phase = np.exp(1j * omega / np.asarray(c) * (pos @ d[:pos.shape[1]]))
        val = complex(amplitude) * phase
        if polarization is not None:
            val = val * (tang @ np.asarray(polarization, dtype=float)[:tang.shape[1]])
        return val
    return profile


def outgoing_dipole_profile(scale: complex = 1.0):
    """Tangential component of the exact outgoing dipole field along each edge."""
    def profile(pos, tang, omega, c):
        e, _ = exact_appendix_field(pos, omega)
        return complex(scale) * np.einsum("ij,ij->i", e, tang)
    return profile

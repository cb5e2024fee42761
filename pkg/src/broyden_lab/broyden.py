"""Convex Broyden-class quasi-Newton updates.

The family interpolates between BFGS (tau = 0) and DFP (tau = 1); tau weights
the DFP component of the *inverse* update.  Alongside the updated operator we
always produce its inverse from the closed-form rank-two inverse formula
rather than by numerical inversion, and the determinant ratio of the update
from its closed form, so both can be cross-checked against factorizations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .operators import (
    DimensionMismatch,
    Role,
    PrimalVector,
    SpdOperator,
    ZeroDirectionError,
)

__all__ = [
    "UpdateResult",
    "check_tau",
    "phi_tau",
    "broyd",
    "broyd_inverse",
    "broyd_det_ratio",
    "nu",
]

# Steps at or below this Euclidean length are treated as the zero direction:
# the update degenerates to the identity map on G.
ZERO_DIRECTION_NORM = 1e-300

# Defensive ceiling on the disagreement between the two equivalent closeness
# formulas (combined absolute/relative); the tests pin the tight 1e-10 bound.
_NU_GUARD = 1e-8


def check_tau(tau: float) -> float:
    """Validate a convex-class parameter, rejecting values outside [0, 1]."""
    tau = float(tau)
    if not (0.0 <= tau <= 1.0) or math.isnan(tau):
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return tau


@dataclass(frozen=True)
class UpdateResult:
    """One convex Broyden-class update.

    ``g_plus`` is the updated operator, ``g_plus_inv`` its inverse built
    independently from the closed-form inverse update, ``phi`` the weight of
    the DFP component in the primal formula, and ``det_ratio`` the closed-form
    value of Det(g_plus^{-1} G).  The identities ``g_plus @ g_plus_inv = I``
    and ``det_ratio = Det(g_plus^{-1}, G)`` are exercised by the test suite
    rather than re-verified on every call.
    """

    g_plus: SpdOperator
    g_plus_inv: SpdOperator
    phi: float
    det_ratio: float


def _direction(a: SpdOperator, g: SpdOperator, u: PrimalVector):
    if a.dim != g.dim:
        raise DimensionMismatch(f"dimension mismatch: {a.dim} vs {g.dim}")
    if not isinstance(u, PrimalVector):
        raise TypeError("update direction must be a PrimalVector")
    if u.dim != a.dim:
        raise DimensionMismatch(f"dimension mismatch: {u.dim} vs {a.dim}")
    return u.coords


def _scalars(a_mat, g_mat, h_mat, u):
    """Shared update scalars: Au, Gu, G^{-1}Au and the three pairings."""
    au = a_mat @ u
    gu = g_mat @ u
    au_u = float(au @ u)
    gu_u = float(gu @ u)
    z = h_mat @ au
    aha = float(au @ z)
    if au_u <= 0.0 or gu_u <= 0.0 or aha <= 0.0:
        raise ArithmeticError(
            "update pairings must be positive for SPD inputs; "
            f"got <Au,u>={au_u}, <Gu,u>={gu_u}, <AG^-1Au,u>={aha}"
        )
    return au, gu, au_u, gu_u, z, aha


def _phi_det(tau, au_u, gu_u, aha):
    t_dfp = au_u / aha
    t_bfgs = gu_u / au_u
    denom = tau * t_dfp + (1.0 - tau) * t_bfgs
    phi = tau * t_dfp / denom
    return phi, denom


def update_arrays(a_mat, g_mat, h_mat, u, tau):
    """Raw-array fast path for one update.

    Takes the target, the current approximation and its inverse, and returns
    ``(g_plus, h_plus, phi, det_ratio)`` as plain arrays/floats.  The caller
    owns validation; this is what the solver drives once per iteration at
    O(n^2) cost, with the inverse maintained by the rank-two inverse formula
    instead of refactorizing.
    """
    au, gu, au_u, gu_u, z, aha = _scalars(a_mat, g_mat, h_mat, u)
    phi, det_ratio = _phi_det(tau, au_u, gu_u, aha)

    dfp = (g_mat
           - (np.outer(au, gu) + np.outer(gu, au)) / au_u
           + (gu_u / au_u + 1.0) * np.outer(au, au) / au_u)
    bfgs = (g_mat
            - np.outer(gu, gu) / gu_u
            + np.outer(au, au) / au_u)
    g_plus = phi * dfp + (1.0 - phi) * bfgs
    g_plus = 0.5 * (g_plus + g_plus.T)

    inv_dfp = (h_mat
               - np.outer(z, z) / aha
               + np.outer(u, u) / au_u)
    inv_bfgs = (h_mat
                - (np.outer(z, u) + np.outer(u, z)) / au_u
                + (aha / au_u + 1.0) * np.outer(u, u) / au_u)
    h_plus = tau * inv_dfp + (1.0 - tau) * inv_bfgs
    h_plus = 0.5 * (h_plus + h_plus.T)
    return g_plus, h_plus, phi, det_ratio


def phi_tau(a: SpdOperator, g: SpdOperator, u: PrimalVector, tau: float) -> float:
    """Weight of the DFP component in the primal update formula.

    Always in [0, 1] for tau in [0, 1]; equals tau when G = A.
    """
    tau = check_tau(tau)
    uc = _direction(a, g, u)
    if float(np.linalg.norm(uc)) <= ZERO_DIRECTION_NORM:
        raise ZeroDirectionError("phi is undefined for the zero direction")
    au = a.matvec(uc)
    au_u = float(au @ uc)
    gu_u = g.quad_form(uc)
    aha = float(au @ g.solve_vec(au))
    phi, _ = _phi_det(tau, au_u, gu_u, aha)
    return phi


def broyd(a: SpdOperator, g: SpdOperator, u: PrimalVector, tau: float) -> UpdateResult:
    """Update the approximation G toward the target A along direction u.

    The zero direction returns G unchanged (with ``det_ratio`` 1 and ``phi``
    reported as tau by convention, since the formula leaves it undefined).
    """
    tau = check_tau(tau)
    uc = _direction(a, g, u)
    if float(np.linalg.norm(uc)) <= ZERO_DIRECTION_NORM:
        return UpdateResult(g_plus=g, g_plus_inv=g.inverse(), phi=tau, det_ratio=1.0)
    h_mat = g.inverse().entries
    g_plus, h_plus, phi, det_ratio = update_arrays(
        a.entries, g.entries, h_mat, uc, tau
    )
    return UpdateResult(
        g_plus=SpdOperator(g_plus, Role.PRIMAL_TO_DUAL),
        g_plus_inv=SpdOperator(h_plus, Role.DUAL_TO_PRIMAL),
        phi=phi,
        det_ratio=det_ratio,
    )


def broyd_inverse(a: SpdOperator, g: SpdOperator, u: PrimalVector,
                  tau: float) -> SpdOperator:
    """Inverse of the updated operator, straight from the rank-two formula."""
    tau = check_tau(tau)
    uc = _direction(a, g, u)
    if float(np.linalg.norm(uc)) <= ZERO_DIRECTION_NORM:
        raise ZeroDirectionError("inverse update needs a nonzero direction")
    h_mat = g.inverse().entries
    au = a.matvec(uc)
    au_u = float(au @ uc)
    z = h_mat @ au
    aha = float(au @ z)
    inv_dfp = h_mat - np.outer(z, z) / aha + np.outer(uc, uc) / au_u
    inv_bfgs = (h_mat
                - (np.outer(z, uc) + np.outer(uc, z)) / au_u
                + (aha / au_u + 1.0) * np.outer(uc, uc) / au_u)
    h_plus = tau * inv_dfp + (1.0 - tau) * inv_bfgs
    h_plus = 0.5 * (h_plus + h_plus.T)
    return SpdOperator(h_plus, Role.DUAL_TO_PRIMAL)


def broyd_det_ratio(a: SpdOperator, g: SpdOperator, u: PrimalVector,
                    tau: float) -> float:
    """Closed-form Det(G_plus^{-1} G) of the update."""
    tau = check_tau(tau)
    uc = _direction(a, g, u)
    if float(np.linalg.norm(uc)) <= ZERO_DIRECTION_NORM:
        raise ZeroDirectionError("determinant ratio needs a nonzero direction")
    au = a.matvec(uc)
    au_u = float(au @ uc)
    gu_u = g.quad_form(uc)
    aha = float(au @ g.solve_vec(au))
    _, det_ratio = _phi_det(tau, au_u, gu_u, aha)
    return det_ratio


def nu(a: SpdOperator, g: SpdOperator, u: PrimalVector) -> float:
    """Closeness of G to A along u: ||(G - A)u||*_G / ||u||_A.

    Evaluates both equivalent forms (the explicit quadratic form
    <(G-A)G^{-1}(G-A)u, u> / <Au, u> and the norm ratio) and returns the
    quadratic-form value after checking they agree.
    """
    uc = _direction(a, g, u)
    if float(np.linalg.norm(uc)) <= ZERO_DIRECTION_NORM:
        raise ZeroDirectionError("closeness measure needs a nonzero direction")
    diff = g.entries - a.entries
    mid = diff @ g.solve_mat(diff)
    num_sq = float(uc @ (mid @ uc))
    au_u = a.quad_form(uc)
    val_quad = math.sqrt(max(num_sq, 0.0) / au_u)

    w = diff @ uc
    val_norm = math.sqrt(max(g.inv_quad_form(w), 0.0) / au_u)
    if abs(val_quad - val_norm) > _NU_GUARD * (1.0 + max(val_quad, val_norm)):
        raise ArithmeticError(
            f"closeness formulas disagree: {val_quad} vs {val_norm}"
        )
    return val_quad

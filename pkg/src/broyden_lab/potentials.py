"""Log-determinant potentials and the per-update progress inequalities.

Two potentials measure how far an approximation G sits from a target A: the
log-det barrier ln Det(A^{-1}G) (meaningful when A is below G in the
semidefinite order) and the augmented barrier, which subtracts the trace
correction <G^{-1}, G - A> and is a Bregman divergence of -logdet centered
at G, hence nonnegative without any ordering assumption.

Each inequality used by the convergence analysis is exposed as a function
returning the bound (or both sides), so measured trajectories can be checked
against it with explicit slacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .broyden import broyd, check_tau, nu
from .operators import PrimalVector, SpdOperator, rel_eigen_range

__all__ = [
    "PotentialSnapshot",
    "SCALAR_GAP_MIDDLE_CONST",
    "SCALAR_GAP_CONST",
    "logdet_barrier",
    "augmented_barrier",
    "potential_snapshot",
    "progress_lb_v",
    "progress_lb_psi",
    "scalar_gap",
    "metric_change_lb",
]

# Constants of the scalar gap inequality: the sharp sqrt(3)/(2 + sqrt(3))
# and its rational relaxation 6/13 used by the augmented-barrier bound.
SCALAR_GAP_MIDDLE_CONST = math.sqrt(3.0) / (2.0 + math.sqrt(3.0))
SCALAR_GAP_CONST = 6.0 / 13.0

_PSI_FLOOR = -1e-9


@dataclass(frozen=True)
class PotentialSnapshot:
    """Potential values of one (target, approximation, direction) triple."""

    v: float
    psi: float
    nu: float

    def __post_init__(self):
        if self.psi < _PSI_FLOOR:
            raise ValueError(f"augmented barrier must be nonnegative, got {self.psi}")
        if self.nu < 0.0:
            raise ValueError(f"closeness measure must be nonnegative, got {self.nu}")


def logdet_barrier(a: SpdOperator, g: SpdOperator) -> float:
    """ln Det(A^{-1}G), via a log-determinant difference.

    Nonnegative when A is below G in the semidefinite order; unbounded below
    otherwise, so no sign is asserted here.
    """
    if a.dim != g.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {g.dim}")
    return g.logdet - a.logdet


def augmented_barrier(g: SpdOperator, a: SpdOperator) -> float:
    """ln Det(A^{-1}G) - <G^{-1}, G - A>; nonnegative for any SPD pair."""
    if a.dim != g.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {g.dim}")
    # <G^{-1}, G - A> = n - Tr(G^{-1} A), with the trace via a factorized solve.
    trace_inv_a = float(np.trace(g.solve_mat(a.entries)))
    return logdet_barrier(a, g) - (g.dim - trace_inv_a)


def potential_snapshot(a: SpdOperator, g: SpdOperator,
                       u: PrimalVector) -> PotentialSnapshot:
    """Measure both potentials and the directional closeness in one shot."""
    return PotentialSnapshot(
        v=logdet_barrier(a, g),
        psi=augmented_barrier(g, a),
        nu=nu(a, g, u),
    )


def progress_lb_v(eta: float, tau: float, nu_val: float) -> float:
    """Guaranteed decrease of the log-det barrier after one update.

    Valid when A <= G <= eta*A: the barrier drops by at least
    ln(1 + (tau/eta + 1 - tau) * nu^2).
    """
    tau = check_tau(tau)
    if eta < 1.0:
        raise ValueError(f"eta must be >= 1, got {eta}")
    return math.log1p((tau / eta + 1.0 - tau) * nu_val * nu_val)


def progress_lb_psi(xi: float, eta: float, tau: float, nu_val: float) -> float:
    """Guaranteed decrease of the augmented barrier after one update.

    Valid when (1/xi)*A <= G <= eta*A with xi, eta >= 1: the barrier drops by
    at least (6/13) * ln(1 + (tau/(xi*eta) + 1 - tau) * nu^2).
    """
    tau = check_tau(tau)
    if xi < 1.0 or eta < 1.0:
        raise ValueError(f"xi and eta must be >= 1, got ({xi}, {eta})")
    return SCALAR_GAP_CONST * math.log1p(
        (tau / (xi * eta) + 1.0 - tau) * nu_val * nu_val
    )


def scalar_gap(alpha: float, beta: float) -> tuple[float, float]:
    """Both sides of the scalar inequality behind the augmented-barrier bound.

    For alpha >= beta > 0 returns (alpha - ln(beta) - 1,
    (6/13) * ln(alpha + 1/beta - 1)); the first dominates the second, and the
    shared argument alpha + 1/beta - 1 is always >= 1.
    """
    if not (alpha >= beta > 0.0):
        raise ValueError(f"need alpha >= beta > 0, got ({alpha}, {beta})")
    arg = alpha + 1.0 / beta - 1.0
    if arg < 1.0 - 1e-12:
        raise ArithmeticError(f"gap argument fell below 1: {arg}")
    lhs = alpha - math.log(beta) - 1.0
    rhs = SCALAR_GAP_CONST * math.log(arg)
    return lhs, rhs


def metric_change_lb(a: SpdOperator, g: SpdOperator, u: PrimalVector,
                     tau: float) -> tuple[float, float]:
    """Both sides of the metric-change inequality.

    Returns (nu^2, lower bound), where the bound is
    <(G - A) G_plus^{-1} (G - A)u, u> / ((1 + xi) <Gu, u>) with 1/xi the
    smallest eigenvalue of G relative to A.  The first component dominates
    the second (callers assert with their own slack).
    """
    tau = check_tau(tau)
    nu_val = nu(a, g, u)
    xi = 1.0 / rel_eigen_range(g, a).min_rel
    h_plus = broyd(a, g, u, tau).g_plus_inv
    diff = g.entries - a.entries
    w = diff @ u.coords
    num = float(w @ (h_plus.entries @ w))
    rhs = num / ((1.0 + xi) * g.quad_form(u.coords))
    return nu_val * nu_val, rhs

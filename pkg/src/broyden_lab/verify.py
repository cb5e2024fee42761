"""Randomized identity and inequality suites over the update family.

Each suite draws seeded random (target, approximation, direction) triples,
evaluates one algebraic identity or inequality of the update calculus on
them, and reports the most adverse value seen together with its pass
threshold.  The CLI ``verify`` command drives these and exits nonzero on any
failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .broyden import broyd, broyd_det_ratio, nu
from .operators import (
    PrimalVector,
    Role,
    SpdOperator,
    rel_det,
    rel_eigen_range,
)
from .potentials import (
    SCALAR_GAP_MIDDLE_CONST,
    augmented_barrier,
    logdet_barrier,
    metric_change_lb,
    progress_lb_psi,
    progress_lb_v,
    scalar_gap,
)
from .problems import random_orthogonal

__all__ = [
    "CheckResult",
    "random_spd",
    "random_spd_dominating",
    "TAU_GRID",
    "inverse_identity_suite",
    "det_ratio_suite",
    "eigen_containment_suite",
    "logdet_progress_suite",
    "augmented_progress_suite",
    "metric_change_suite",
    "scalar_gap_suite",
    "run_all",
]

TAU_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class CheckResult:
    """One suite outcome: the most adverse value against its threshold."""

    name: str
    worst: float
    threshold: float
    higher_is_worse: bool
    trials: int

    @property
    def passed(self) -> bool:
        if self.higher_is_worse:
            return self.worst <= self.threshold
        return self.worst >= self.threshold

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        rel = "<=" if self.higher_is_worse else ">="
        return (f"{self.name:<28s} worst={self.worst: .3e} "
                f"({rel} {self.threshold: .1e})  trials={self.trials}  {status}")


def random_spd(rng: np.random.Generator, n: int,
               log_cond_max: float = 3.0) -> SpdOperator:
    """Random SPD operator with log-uniform spectrum, condition <= 10^log_cond_max."""
    span = rng.uniform(0.0, log_cond_max)
    eigs = 10.0 ** rng.uniform(-span / 2.0, span / 2.0, size=n)
    q = random_orthogonal(n, rng)
    m = (q * eigs) @ q.T
    return SpdOperator(0.5 * (m + m.T), Role.PRIMAL_TO_DUAL)


def random_spd_dominating(rng: np.random.Generator,
                          a: SpdOperator) -> SpdOperator:
    """Random SPD operator G with A below G in the semidefinite order."""
    n = a.dim
    w = rng.standard_normal((n, n)) / np.sqrt(n)
    bump = w @ w.T * 10.0 ** rng.uniform(-2.0, 1.0)
    m = a.entries + 0.5 * (bump + bump.T)
    return SpdOperator(0.5 * (m + m.T), Role.PRIMAL_TO_DUAL)


def straddle_normalize(g: SpdOperator, a: SpdOperator) -> SpdOperator:
    """Rescale G so its eigenvalue range relative to A straddles 1.

    Every update pins a relative eigenvalue at exactly 1 (the secant
    direction), so range-containment statements are exact only for brackets
    of the form [1/xi, eta] with xi, eta >= 1.  Geometric centering puts an
    arbitrary pair into that regime without changing its geometry.
    """
    rng_ga = rel_eigen_range(g, a)
    return g.scaled(1.0 / math.sqrt(rng_ga.min_rel * rng_ga.max_rel))


def _triples(rng: np.random.Generator, trials: int, n_max: int,
             dominating: bool):
    for _ in range(trials):
        n = int(rng.integers(1, n_max + 1))
        a = random_spd(rng, n)
        g = random_spd_dominating(rng, a) if dominating else random_spd(rng, n)
        u = PrimalVector(rng.standard_normal(n))
        yield a, g, u


def inverse_identity_suite(n_max: int = 8, trials: int = 1000,
                           seed: int = 0) -> CheckResult:
    """Spectral residual of (updated operator) x (closed-form inverse) vs identity."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for a, g, u in _triples(rng, trials, n_max, dominating=False):
        eye = np.eye(a.dim)
        for tau in TAU_GRID:
            res = broyd(a, g, u, tau)
            resid = float(np.linalg.norm(
                res.g_plus.entries @ res.g_plus_inv.entries - eye, 2
            ))
            worst = max(worst, resid)
    return CheckResult("inverse_identity", worst, 1e-10, True,
                       trials * len(TAU_GRID))


def det_ratio_suite(n_max: int = 8, trials: int = 1000,
                    seed: int = 1) -> CheckResult:
    """Closed-form determinant ratio vs a factorized log-det evaluation."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for a, g, u in _triples(rng, trials, n_max, dominating=False):
        for tau in TAU_GRID:
            res = broyd(a, g, u, tau)
            reference = rel_det(res.g_plus.inverse(), g)
            rel_err = abs(res.det_ratio - reference) / abs(reference)
            worst = max(worst, rel_err)
            closed = broyd_det_ratio(a, g, u, tau)
            worst = max(worst, abs(closed - reference) / abs(reference))
    return CheckResult("det_ratio", worst, 1e-9, True, trials * len(TAU_GRID))


def eigen_containment_suite(n_max: int = 8, trials: int = 1000,
                            seed: int = 2) -> CheckResult:
    """Updates never leave the bracket [min(1, lo), max(1, hi)] of the input.

    The secant direction always carries relative eigenvalue 1 after an
    update, so the preserved bracket is the input range widened to
    include 1.
    """
    rng = np.random.default_rng(seed)
    worst = np.inf
    for a, g, u in _triples(rng, trials, n_max, dominating=False):
        before = rel_eigen_range(g, a)
        lo = min(1.0, before.min_rel)
        hi = max(1.0, before.max_rel)
        for tau in TAU_GRID:
            after = rel_eigen_range(broyd(a, g, u, tau).g_plus, a)
            worst = min(worst, after.min_rel - lo, hi - after.max_rel)
    return CheckResult("eigen_containment", worst, -1e-9, False,
                       trials * len(TAU_GRID))


def logdet_progress_suite(n_max: int = 8, trials: int = 1000,
                          seed: int = 3) -> CheckResult:
    """Measured log-det barrier decrease dominates its guaranteed bound."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for a, g, u in _triples(rng, trials, n_max, dominating=True):
        eta = max(1.0, rel_eigen_range(g, a).max_rel)
        nu_val = nu(a, g, u)
        v_before = logdet_barrier(a, g)
        for tau in TAU_GRID:
            g_plus = broyd(a, g, u, tau).g_plus
            decrease = v_before - logdet_barrier(a, g_plus)
            bound = progress_lb_v(eta, tau, nu_val)
            worst = min(worst, decrease - bound)
    return CheckResult("logdet_progress", worst, -1e-8, False,
                       trials * len(TAU_GRID))


def augmented_progress_suite(n_max: int = 8, trials: int = 1000,
                             seed: int = 4) -> CheckResult:
    """Measured augmented-barrier decrease dominates its guaranteed bound."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for a, g, u in _triples(rng, trials, n_max, dominating=False):
        rng_ga = rel_eigen_range(g, a)
        xi = max(1.0, 1.0 / rng_ga.min_rel)
        eta = max(1.0, rng_ga.max_rel)
        nu_val = nu(a, g, u)
        psi_before = augmented_barrier(g, a)
        for tau in TAU_GRID:
            g_plus = broyd(a, g, u, tau).g_plus
            decrease = psi_before - augmented_barrier(g_plus, a)
            bound = progress_lb_psi(xi, eta, tau, nu_val)
            worst = min(worst, decrease - bound)
    return CheckResult("augmented_progress", worst, -1e-8, False,
                       trials * len(TAU_GRID))


def metric_change_suite(n_max: int = 8, trials: int = 1000,
                        seed: int = 5) -> CheckResult:
    """Squared closeness dominates its post-update metric bound."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for a, g, u in _triples(rng, trials, n_max, dominating=False):
        for tau in TAU_GRID:
            nu_sq, rhs = metric_change_lb(a, g, u, tau)
            worst = min(worst, nu_sq - rhs)
    return CheckResult("metric_change", worst, -1e-8, False,
                       trials * len(TAU_GRID))


def scalar_gap_suite(grid: int = 100) -> CheckResult:
    """Scalar gap chain over a log-spaced (alpha, beta) grid.

    beta spans [1e-6, 1e6] and alpha = beta * m with m in [1, 1e6]; both the
    sharp and the relaxed constants must be dominated and the shared
    argument must stay at or above 1.
    """
    betas = np.logspace(-6.0, 6.0, grid)
    mults = np.logspace(0.0, 6.0, grid)
    worst = np.inf
    for beta in betas:
        for m in mults:
            alpha = beta * m
            if alpha < beta:
                continue
            lhs, rhs = scalar_gap(alpha, beta)
            arg = alpha + 1.0 / beta - 1.0
            middle = SCALAR_GAP_MIDDLE_CONST * np.log(arg)
            worst = min(worst, lhs - middle, middle - rhs, arg - 1.0)
    return CheckResult("scalar_gap", float(worst), -1e-12, False, grid * grid)


def run_all(n_max: int = 8, trials: int = 1000, seed: int = 0) -> list[CheckResult]:
    """Run every suite with seeds derived from the base seed."""
    return [
        inverse_identity_suite(n_max, trials, seed),
        det_ratio_suite(n_max, trials, seed + 1),
        eigen_containment_suite(n_max, trials, seed + 2),
        logdet_progress_suite(n_max, trials, seed + 3),
        augmented_progress_suite(n_max, trials, seed + 4),
        metric_change_suite(n_max, trials, seed + 5),
        scalar_gap_suite(),
    ]

"""Convergence-rate envelopes and measured-trace comparison.

Every theoretical bound is an explicit function of the certified constants
(n, mu, ell, self-concordance), the tau schedule, the iteration index and the
initial residual.  Builders turn a solver trace into per-iteration
bound-versus-measured reports with explicit slacks.

All envelope evaluation happens in log space so that values stay finite for
iteration counts up to 1e6 and condition numbers up to 1e12; returned values
are clamped at the largest representable double, which only ever loosens a
bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problems import QuadraticProblem
from .solver import IterationTrace, TauSchedule

__all__ = [
    "EnvelopeReport",
    "Section6Envelopes",
    "SATISFIED_RTOL",
    "SATISFIED_ATOL",
    "env_quad_linear",
    "env_quad_superlinear",
    "env_quad_superlinear_psi",
    "env_quad_superlinear_log",
    "env_quad_sharpened_factor",
    "k0",
    "region_radius",
    "region_condition_holds",
    "env_general_linear",
    "env_general_superlinear",
    "env_section6",
    "report_quad_linear",
    "report_quad_superlinear",
    "first_superlinear_crossover",
    "trace_reports",
    "ENVELOPE_NAMES",
]

# A measured value satisfies a bound up to this combined slack; the bounds
# are exact-arithmetic statements while measured residuals carry rounding.
SATISFIED_RTOL = 1e-8
SATISFIED_ATOL = 1e-14

# Prefactor of the local-convergence region: ln(3/2) / (3/2)^{3/2}.
REGION_CONST = math.log(1.5) / 1.5 ** 1.5

_EXP_CLAMP = 709.5  # just under ln(float64 max)

_PSI_EXPONENT = 13.0 / 6.0


def _ln_expm1(t: float) -> float:
    """ln(e^t - 1) without overflow; t must be positive."""
    if t <= 0.0:
        raise ValueError(f"need a positive exponent, got {t}")
    if t > 36.8:
        return t + math.log1p(-math.exp(-t))
    return math.log(math.expm1(t))


def _exp_clamped(t: float) -> float:
    if t == -math.inf:
        return 0.0
    return math.exp(min(t, _EXP_CLAMP))


def _tau_seq(taus, k: int) -> list[float]:
    if isinstance(taus, TauSchedule):
        return [taus.tau_at(i) for i in range(k)]
    seq = [float(t) for t in taus]
    if len(seq) < k:
        raise ValueError(f"need {k} tau values, got {len(seq)}")
    return seq[:k]


@dataclass
class EnvelopeReport:
    """A theoretical bound evaluated along a trace.

    ``satisfied`` marks measured <= bound within the fixed slack; when
    ``asserted`` is false (a hypothesis of the bound was not verified, e.g.
    the starting point fell outside the local-convergence region) the
    verdicts are informational only.  ``provisional_last`` flags a final
    entry that reused the last available distortion factor because the
    one-step-ahead value does not exist at the trace boundary.
    """

    name: str
    ks: np.ndarray
    measured: np.ndarray
    bound: np.ndarray
    k0: int
    region_radius: float
    asserted: bool = True
    provisional_last: bool = False
    satisfied: np.ndarray = field(init=False)
    slack: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ks = np.asarray(self.ks, dtype=int)
        self.measured = np.asarray(self.measured, dtype=float)
        self.bound = np.asarray(self.bound, dtype=float)
        self.satisfied = (
            self.measured <= self.bound * (1.0 + SATISFIED_RTOL) + SATISFIED_ATOL
        )
        self.slack = self.bound - self.measured

    @property
    def first_violation(self) -> int | None:
        bad = np.flatnonzero(~self.satisfied)
        return int(self.ks[bad[0]]) if bad.size else None

    @property
    def min_slack(self) -> float:
        return float(self.slack.min()) if self.slack.size else math.inf

    @property
    def all_satisfied(self) -> bool:
        return bool(self.satisfied.all())


def env_quad_linear(mu: float, ell: float, k: int, lambda0: float) -> float:
    """Plain linear-rate envelope (1 - mu/ell)^k * lambda0."""
    _check_constants(mu, ell)
    if k < 0:
        raise ValueError("k must be nonnegative")
    return (1.0 - mu / ell) ** k * lambda0


def _check_constants(mu: float, ell: float) -> None:
    if not (0.0 < mu <= ell):
        raise ValueError(f"need 0 < mu <= ell, got ({mu}, {ell})")


def _env_quad_sup_log(n: int, mu: float, ell: float, taus, k: int,
                      lambda0: float, exponent_scale: float,
                      log_factor: float | None) -> float:
    _check_constants(mu, ell)
    if k < 1:
        raise ValueError("superlinear envelopes start at k = 1")
    if lambda0 <= 0.0:
        return -math.inf
    kappa_log = math.log(ell / mu)
    factor = n * kappa_log if log_factor is None else float(log_factor)
    if factor < 0.0:
        raise ValueError(f"log factor must be nonnegative, got {factor}")
    t = exponent_scale * factor / k
    if t == 0.0:
        return -math.inf
    seq = _tau_seq(taus, k)
    mean_log_p = sum(math.log(ti * mu / ell + 1.0 - ti) for ti in seq) / k
    ln_bracket = math.log(2.0) - mean_log_p + _ln_expm1(t)
    return 0.5 * k * ln_bracket + 0.5 * kappa_log + math.log(lambda0)


def env_quad_superlinear(n: int, mu: float, ell: float, taus, k: int,
                         lambda0: float,
                         log_factor: float | None = None) -> float:
    """Superlinear envelope from the log-det barrier analysis.

    ``[2 / prod_i(tau_i mu/ell + 1 - tau_i)^{1/k} * (e^{n/k ln(ell/mu)} - 1)]^{k/2}
    * sqrt(ell/mu) * lambda0``.  ``log_factor`` substitutes a sharper value
    for n*ln(ell/mu) in the exponent (see
    :func:`env_quad_sharpened_factor`).
    """
    return _exp_clamped(
        _env_quad_sup_log(n, mu, ell, taus, k, lambda0, 1.0, log_factor)
    )


def env_quad_superlinear_psi(n: int, mu: float, ell: float, taus, k: int,
                             lambda0: float,
                             log_factor: float | None = None) -> float:
    """Superlinear envelope from the augmented-barrier analysis.

    Same shape as :func:`env_quad_superlinear` with the exponent scaled by
    13/6; always at least as large.
    """
    return _exp_clamped(
        _env_quad_sup_log(n, mu, ell, taus, k, lambda0, _PSI_EXPONENT, log_factor)
    )


def env_quad_superlinear_log(n: int, mu: float, ell: float, taus, k: int,
                             lambda0: float, psi_variant: bool = False,
                             log_factor: float | None = None) -> float:
    """Natural log of the superlinear envelope (-inf for a zero bound)."""
    scale = _PSI_EXPONENT if psi_variant else 1.0
    return _env_quad_sup_log(n, mu, ell, taus, k, lambda0, scale, log_factor)


def env_quad_sharpened_factor(p: QuadraticProblem) -> float:
    """Sharper substitute sum_i ln(ell / lambda_i) for n * ln(ell/mu).

    The lambda_i are the eigenvalues of the quadratic operator relative to
    the reference operator; the sum can be much smaller than n*ln(ell/mu)
    when most of the spectrum sits far above mu.
    """
    vals = np.linalg.eigvalsh(
        np.linalg.solve(p.b_ref.entries, p.a_op.entries)
    )
    return float(np.sum(np.log(p.ell / vals)))


def k0(n: int, mu: float, ell: float, sup_tau: float) -> int:
    """Iteration index from which the superlinear envelope turns informative.

    ``ceil(8 n ln(2 ell/mu) / (tau 4mu/(9 ell) + 1 - tau))`` with tau the
    schedule supremum; the endpoints reduce to the closed forms
    ``ceil(8 n ln(2 ell/mu))`` (BFGS) and ``ceil(18 n ell/mu ln(2 ell/mu))``
    (DFP), which are evaluated directly so they match exactly.
    """
    _check_constants(mu, ell)
    if not (0.0 <= sup_tau <= 1.0):
        raise ValueError(f"sup_tau must lie in [0, 1], got {sup_tau}")
    log_term = math.log(2.0 * ell / mu)
    if sup_tau == 0.0:
        val = 8.0 * n * log_term
    elif sup_tau == 1.0:
        val = 18.0 * n * ell / mu * log_term
    else:
        val = 8.0 * n * log_term / (sup_tau * 4.0 * mu / (9.0 * ell)
                                    + 1.0 - sup_tau)
    return max(1, math.ceil(val))


def region_radius(mu: float, ell: float, n: int, sup_tau: float,
                  big_m: float) -> float:
    """Largest admissible initial residual for local convergence.

    Returns ``REGION_CONST * max(mu/(2 ell), 1/(K0 + 9)) / M``; a zero
    self-concordance constant means global convergence, reported as +inf.
    """
    _check_constants(mu, ell)
    if big_m < 0.0:
        raise ValueError("self-concordance constant must be nonnegative")
    if big_m == 0.0:
        return math.inf
    cap = REGION_CONST * max(mu / (2.0 * ell), 1.0 / (k0(n, mu, ell, sup_tau) + 9))
    return cap / big_m


def region_condition_holds(mu: float, ell: float, n: int, sup_tau: float,
                           big_m: float, lambda0: float) -> bool:
    """Whether the starting residual satisfies the local-convergence bound."""
    cap = REGION_CONST * max(mu / (2.0 * ell), 1.0 / (k0(n, mu, ell, sup_tau) + 9))
    return big_m * lambda0 <= cap


def _trace_params(trace: IterationTrace, overrides: dict | None = None):
    p = trace.problem
    n, mu, ell = p.n, p.mu, p.ell
    big_m = p.sc_const if trace.general else 0.0
    if overrides:
        mu = float(overrides.get("mu", mu))
        ell = float(overrides.get("ell", ell))
        big_m = float(overrides.get("sc_const", big_m))
    return n, mu, ell, big_m


def report_quad_linear(trace: IterationTrace,
                       overrides: dict | None = None) -> EnvelopeReport:
    """Linear-rate envelope along a quadratic-scheme trace.

    ``overrides`` substitutes envelope constants (mu/ell) for fault
    injection: a deliberately wrong constant must surface as a violation.
    """
    n, mu, ell, _ = _trace_params(trace, overrides)
    lam0 = trace.lambda0
    ks = np.arange(len(trace))
    bound = np.array([env_quad_linear(mu, ell, int(k), lam0) for k in ks])
    return EnvelopeReport(
        name="quad_linear", ks=ks, measured=trace.lambdas, bound=bound,
        k0=k0(n, mu, ell, trace.schedule.sup_tau),
        region_radius=math.inf,
    )


def report_quad_superlinear(trace: IterationTrace, psi_variant: bool = False,
                            sharpened: bool = False,
                            overrides: dict | None = None) -> EnvelopeReport:
    """Superlinear envelope along a quadratic-scheme trace (from k = 1)."""
    n, mu, ell, _ = _trace_params(trace, overrides)
    lam0 = trace.lambda0
    log_factor = None
    if sharpened:
        log_factor = env_quad_sharpened_factor(trace.problem.payload)
    env = env_quad_superlinear_psi if psi_variant else env_quad_superlinear
    ks = np.arange(1, len(trace))
    bound = np.array([
        env(n, mu, ell, trace.schedule, int(k), lam0, log_factor=log_factor)
        for k in ks
    ])
    name = "quad_superlinear_psi" if psi_variant else "quad_superlinear"
    if sharpened:
        name += "_sharpened"
    return EnvelopeReport(
        name=name, ks=ks, measured=trace.lambdas[1:], bound=bound,
        k0=k0(n, mu, ell, trace.schedule.sup_tau),
        region_radius=math.inf,
    )


def env_general_linear(trace: IterationTrace) -> tuple[EnvelopeReport, EnvelopeReport]:
    """Both linear envelopes for the general scheme.

    The first uses the measured distortion sequence
    (sqrt(xi_k) * lambda0 * prod q_i with
    q_i = max(1 - mu/(xi_{i+1} ell), xi_{i+1} - 1)); the second is the
    fixed-rate (1 - mu/(2 ell))^k * sqrt(3/2) * lambda0 form, asserted only
    when the starting residual was inside the local-convergence region.
    """
    n, mu, ell, big_m = _trace_params(trace)
    lam0 = trace.lambda0
    sup_tau = trace.schedule.sup_tau
    xis = trace.xis
    kk = len(trace)
    ks = np.arange(kk)

    bound_xi = np.empty(kk)
    bound_xi[0] = math.sqrt(xis[0]) * lam0
    log_prod = 0.0
    for i in range(kk - 1):
        # q_i needs the one-step-ahead distortion, available for every
        # completed step.  Accumulate in log space; the factors can be huge
        # when the trajectory leaves the local region.
        q_i = max(1.0 - mu / (xis[i + 1] * ell), xis[i + 1] - 1.0)
        log_prod = log_prod + math.log(q_i) if q_i > 0.0 else -math.inf
        if lam0 == 0.0 or log_prod == -math.inf:
            bound_xi[i + 1] = 0.0
        else:
            bound_xi[i + 1] = _exp_clamped(
                0.5 * math.log(xis[i + 1]) + math.log(lam0) + log_prod
            )

    k0_val = k0(n, mu, ell, sup_tau)
    radius = region_radius(mu, ell, n, sup_tau, big_m)
    in_region = region_condition_holds(mu, ell, n, sup_tau, big_m, lam0)

    rate = 1.0 - mu / (2.0 * ell)
    bound_fixed = math.sqrt(1.5) * lam0 * rate ** ks

    tracked = EnvelopeReport(
        name="general_linear_xi", ks=ks, measured=trace.lambdas,
        bound=bound_xi, k0=k0_val, region_radius=radius,
    )
    uniform = EnvelopeReport(
        name="general_linear", ks=ks, measured=trace.lambdas,
        bound=bound_fixed, k0=k0_val, region_radius=radius,
        asserted=in_region,
    )
    return tracked, uniform


def env_general_superlinear(trace: IterationTrace) -> tuple[EnvelopeReport, EnvelopeReport]:
    """Both superlinear envelopes for the general scheme (from k = 1).

    The first tracks the measured distortion sequence; its final entry
    reuses the last available distortion and is flagged provisional.  The
    second is the uniform in-region form, asserted only when the starting
    residual was inside the local-convergence region.
    """
    n, mu, ell, big_m = _trace_params(trace)
    lam0 = trace.lambda0
    sup_tau = trace.schedule.sup_tau
    xis = trace.xis
    kk = len(trace)
    kappa_log = math.log(ell / mu)
    k0_val = k0(n, mu, ell, sup_tau)
    radius = region_radius(mu, ell, n, sup_tau, big_m)
    in_region = region_condition_holds(mu, ell, n, sup_tau, big_m, lam0)

    ks = np.arange(1, kk)
    bound_xi = np.empty(kk - 1)
    bound_fixed = np.empty(kk - 1)
    sum_log_p = 0.0
    sum_log_p_fixed = 0.0
    for k in range(1, kk):
        tau_prev = trace.schedule.tau_at(k - 1)
        xi_next = xis[k]  # xi_{i+1} for i = k-1
        # Saturated distortion drives the DFP weight to zero; the bound then
        # degenerates to +inf, which the log-space clamp handles.
        p_term = tau_prev * mu / (xi_next ** 2 * ell) + 1.0 - tau_prev
        sum_log_p += math.log(p_term) if p_term > 0.0 else -math.inf
        sum_log_p_fixed += math.log(
            tau_prev * 4.0 * mu / (9.0 * ell) + 1.0 - tau_prev
        )

        xi_ahead = xis[k + 1] if k + 1 < kk else xis[kk - 1]
        t = _PSI_EXPONENT * n / k * (
            xi_ahead * math.log(xi_ahead) + kappa_log
        )
        if t == 0.0 or lam0 == 0.0:
            bound_xi[k - 1] = 0.0
        else:
            ln_bracket = (math.log1p(xis[k]) - sum_log_p / k + _ln_expm1(t))
            bound_xi[k - 1] = _exp_clamped(
                0.5 * k * ln_bracket
                + 0.5 * (math.log(xis[k]) + kappa_log)
                + math.log(lam0)
            )

        t_fixed = _PSI_EXPONENT * n / k * math.log(2.0 * ell / mu)
        if lam0 == 0.0:
            bound_fixed[k - 1] = 0.0
        else:
            ln_bracket = (math.log(2.5) - sum_log_p_fixed / k
                          + _ln_expm1(t_fixed))
            bound_fixed[k - 1] = _exp_clamped(
                0.5 * k * ln_bracket
                + 0.5 * math.log(1.5 * ell / mu)
                + math.log(lam0)
            )

    tracked = EnvelopeReport(
        name="general_superlinear_xi", ks=ks, measured=trace.lambdas[1:],
        bound=bound_xi, k0=k0_val, region_radius=radius,
        provisional_last=True,
    )
    uniform = EnvelopeReport(
        name="general_superlinear", ks=ks, measured=trace.lambdas[1:],
        bound=bound_fixed, k0=k0_val, region_radius=radius,
        asserted=in_region,
    )
    return tracked, uniform


@dataclass(frozen=True)
class Section6Envelopes:
    """Old-versus-new envelope comparison at one iteration index."""

    prev: float
    new: float
    start_prev: float
    start_new: float


def env_section6(n: int, mu: float, ell: float, k: int, lambda0: float,
                 method: str) -> Section6Envelopes:
    """Previously known envelope, the simplified new one, and their starting
    moments, for the two extreme methods.

    The simplified new bound is only valid from its starting moment onward
    and is reported as NaN before that.  The ratio of old to new starting
    moments is reported by the caller, not asserted, since the two formulas
    follow different ceiling conventions.
    """
    _check_constants(mu, ell)
    if k < 1:
        raise ValueError("k must be at least 1")
    method = method.lower()
    kappa = ell / mu
    kappa_log = math.log(kappa)
    if method == "bfgs":
        start_prev = n * kappa
        start_new = 4.0 * n * kappa_log
        ln_prev_base = math.log(n * kappa / k)
        new_base = 4.0 * n * kappa_log / k
    elif method == "dfp":
        start_prev = n * kappa ** 2
        start_new = 4.0 * n * kappa * kappa_log
        ln_prev_base = math.log(n * kappa ** 2 / k)
        new_base = 4.0 * n * kappa * kappa_log / k
    else:
        raise ValueError(f"method must be 'bfgs' or 'dfp', got {method!r}")
    if lambda0 <= 0.0:
        prev = new = 0.0
    else:
        prev = _exp_clamped(0.5 * k * ln_prev_base + math.log(lambda0))
        if k >= start_new and new_base > 0.0:
            new = _exp_clamped(0.5 * k * math.log(new_base) + math.log(lambda0))
        else:
            new = math.nan
    return Section6Envelopes(prev=prev, new=new,
                             start_prev=start_prev, start_new=start_new)


def first_superlinear_crossover(n: int, mu: float, ell: float, sup_tau: float,
                                k_max: int = 1 << 40) -> int | None:
    """Smallest k at which the superlinear envelope undercuts the linear one.

    Compared in log space for a constant-tau schedule with unit initial
    residual.  Returns None if no crossover is found below ``k_max``.
    """
    _check_constants(mu, ell)
    if mu == ell:
        return 1
    log_p = math.log(sup_tau * mu / ell + 1.0 - sup_tau)
    log_rate = math.log(1.0 - mu / ell)
    kappa_log = math.log(ell / mu)

    def gap(k: int) -> float:
        t = n * kappa_log / k
        ln_sup = (0.5 * k * (math.log(2.0) - log_p + _ln_expm1(t))
                  + 0.5 * kappa_log)
        return ln_sup - k * log_rate

    hi = 1
    while gap(hi) >= 0.0:
        hi *= 2
        if hi > k_max:
            return None
    lo = hi // 2  # gap(lo) >= 0 (or lo == 0)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if gap(mid) < 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def trace_reports(trace: IterationTrace, names,
                  overrides: dict | None = None) -> list[EnvelopeReport]:
    """Build the named envelope reports for a trace (CLI registry).

    ``overrides`` replaces the certified constants inside the quadratic
    envelope formulas only; the measured trace is untouched.
    """
    out: list[EnvelopeReport] = []
    for name in names:
        if name == "quad_linear":
            out.append(report_quad_linear(trace, overrides=overrides))
        elif name == "quad_superlinear":
            out.append(report_quad_superlinear(trace, overrides=overrides))
        elif name == "quad_superlinear_psi":
            out.append(report_quad_superlinear(trace, psi_variant=True,
                                               overrides=overrides))
        elif name == "general_linear":
            out.extend(env_general_linear(trace))
        elif name == "general_superlinear":
            out.extend(env_general_superlinear(trace))
        else:
            raise ValueError(f"unknown envelope name: {name!r}")
    return out


ENVELOPE_NAMES = (
    "quad_linear",
    "quad_superlinear",
    "quad_superlinear_psi",
    "general_linear",
    "general_superlinear",
)

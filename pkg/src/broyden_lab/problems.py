"""Problem instances with certified curvature constants.

Two families are supported: quadratics with a prescribed spectrum, and
regularized log-sum-exp objectives.  Both carry the constants the convergence
theory needs (strong convexity mu and gradient Lipschitz constant ell
relative to a reference operator B, plus the strong self-concordance
constant) certified at construction, so rate envelopes computed from them
are honest.

Instances are immutable and their oracles are pure; JSON serialization is
provided for reproducible experiment definitions.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .operators import (
    DualVector,
    PrimalVector,
    Role,
    SpdOperator,
    loewner_slack,
    norm_dual,
    norm_primal,
)

__all__ = [
    "Kind",
    "QuadraticProblem",
    "LogSumExpProblem",
    "ProblemInstance",
    "IntegralHessian",
    "SandwichReport",
    "quad_make",
    "lse_make",
    "lse_value_grad_hess",
    "integral_hessian",
    "sandwich_check",
    "instance_to_dict",
    "instance_from_dict",
    "instance_hash",
]

_LOEWNER_TOL = 1e-9


class Kind(enum.Enum):
    QUADRATIC = "quadratic"
    LOG_SUM_EXP = "log_sum_exp"


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian, signs fixed)."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diagonal(r))


@dataclass(frozen=True)
class QuadraticProblem:
    """f(x) = 1/2 <Ax, x> - <b, x> with mu*B <= A <= ell*B certified."""

    a_op: SpdOperator
    b: DualVector
    b_ref: SpdOperator
    mu: float
    ell: float

    def __post_init__(self):
        if not (0.0 < self.mu <= self.ell):
            raise ValueError(f"need 0 < mu <= ell, got ({self.mu}, {self.ell})")
        if self.a_op.dim != self.b.dim or self.a_op.dim != self.b_ref.dim:
            raise ValueError("operator and vector dimensions disagree")
        if loewner_slack(self.b_ref.scaled(self.mu), self.a_op) < -_LOEWNER_TOL:
            raise ValueError("mu*B <= A violated")
        if loewner_slack(self.a_op, self.b_ref.scaled(self.ell)) < -_LOEWNER_TOL:
            raise ValueError("A <= ell*B violated")

    @property
    def n(self) -> int:
        return self.a_op.dim

    def value(self, x: PrimalVector) -> float:
        xc = x.coords
        return 0.5 * self.a_op.quad_form(xc) - float(self.b.coords @ xc)

    def grad(self, x: PrimalVector) -> DualVector:
        return DualVector(self.a_op.matvec(x.coords) - self.b.coords)

    def hess(self, x: PrimalVector) -> SpdOperator:
        return self.a_op

    def minimizer(self) -> PrimalVector:
        return PrimalVector(self.a_op.solve_vec(self.b.coords))


@dataclass(frozen=True)
class LogSumExpProblem:
    """f(x) = ln(sum_i exp(<a_i, x> + b_i)) + mu/2 ||x||^2_B.

    ``gamma`` is the certified bound on the dual norms of the rows (taken
    tight, the maximum itself, when built through :func:`lse_make`), which
    yields ell = gamma^2 + mu and the strong self-concordance constant
    2 gamma^3 / mu^{3/2}.
    """

    a_mat: np.ndarray
    b_shift: np.ndarray
    mu: float
    b_ref: SpdOperator
    gamma: float

    def __post_init__(self):
        a = np.array(self.a_mat, dtype=float, copy=True)
        bs = np.array(self.b_shift, dtype=float, copy=True)
        if a.ndim != 2 or a.shape[0] == 0:
            raise ValueError("a_mat must be a nonempty m-by-n matrix")
        if bs.shape != (a.shape[0],):
            raise ValueError("b_shift length must match the number of rows")
        if a.shape[1] != self.b_ref.dim:
            raise ValueError("row dimension disagrees with the reference operator")
        if self.mu <= 0.0:
            raise ValueError("mu must be positive")
        a.flags.writeable = False
        bs.flags.writeable = False
        object.__setattr__(self, "a_mat", a)
        object.__setattr__(self, "b_shift", bs)
        max_norm = max(
            norm_dual(self.b_ref, DualVector(row)) for row in a
        )
        if self.gamma < max_norm - 1e-12:
            raise ValueError(
                f"gamma={self.gamma} is below the largest row norm {max_norm}"
            )

    @property
    def n(self) -> int:
        return self.a_mat.shape[1]

    @property
    def m(self) -> int:
        return self.a_mat.shape[0]

    @property
    def a_rows(self) -> tuple[DualVector, ...]:
        return tuple(DualVector(row) for row in self.a_mat)

    @property
    def ell(self) -> float:
        return self.gamma ** 2 + self.mu

    @property
    def sc_const(self) -> float:
        return 2.0 * self.gamma ** 3 / self.mu ** 1.5

    def value(self, x: PrimalVector) -> float:
        return lse_value_grad_hess(self, x)[0]

    def grad(self, x: PrimalVector) -> DualVector:
        return lse_value_grad_hess(self, x)[1]

    def hess(self, x: PrimalVector) -> SpdOperator:
        return lse_value_grad_hess(self, x)[2]


@dataclass(frozen=True)
class ProblemInstance:
    """Uniform oracle bundle over the two supported families."""

    kind: Kind
    payload: QuadraticProblem | LogSumExpProblem

    @staticmethod
    def quadratic(p: QuadraticProblem) -> "ProblemInstance":
        return ProblemInstance(Kind.QUADRATIC, p)

    @staticmethod
    def log_sum_exp(p: LogSumExpProblem) -> "ProblemInstance":
        return ProblemInstance(Kind.LOG_SUM_EXP, p)

    @property
    def n(self) -> int:
        return self.payload.n

    @property
    def mu(self) -> float:
        return self.payload.mu

    @property
    def ell(self) -> float:
        return self.payload.ell

    @property
    def sc_const(self) -> float:
        """Strong self-concordance constant (0 for quadratics)."""
        if self.kind is Kind.QUADRATIC:
            return 0.0
        return self.payload.sc_const

    @property
    def b_ref(self) -> SpdOperator:
        return self.payload.b_ref

    def value(self, x: PrimalVector) -> float:
        return self.payload.value(x)

    def grad(self, x: PrimalVector) -> DualVector:
        return self.payload.grad(x)

    def hess(self, x: PrimalVector) -> SpdOperator:
        return self.payload.hess(x)


@dataclass(frozen=True)
class IntegralHessian:
    """Mean Hessian along a segment, with a quadrature error estimate."""

    j_op: SpdOperator
    quad_order: int
    est_error: float


def quad_make(spectrum, b: DualVector | None = None, seed: int = 0) -> QuadraticProblem:
    """Quadratic with prescribed eigenvalues relative to B = I.

    The eigenbasis is a seeded Haar-random orthogonal conjugation, so the
    same seed reproduces the same operator exactly.
    """
    spec = np.asarray(spectrum, dtype=float)
    if spec.ndim != 1 or spec.size == 0:
        raise ValueError("spectrum must be a nonempty sequence")
    if np.any(spec <= 0.0):
        raise ValueError("spectrum entries must be positive")
    n = spec.size
    rng = np.random.default_rng(seed)
    q = random_orthogonal(n, rng)
    a = (q * spec) @ q.T
    a = 0.5 * (a + a.T)
    if b is None:
        b = DualVector(rng.standard_normal(n))
    return QuadraticProblem(
        a_op=SpdOperator(a, Role.PRIMAL_TO_DUAL),
        b=b,
        b_ref=SpdOperator.identity(n),
        mu=float(spec.min()),
        ell=float(spec.max()),
    )


def lse_make(n: int, m: int, mu: float, seed: int = 0,
             gamma: float | None = None,
             b_shift=None) -> LogSumExpProblem:
    """Seeded log-sum-exp instance with B = I.

    Rows are Gaussian; when ``gamma`` is given they are rescaled so the
    largest row norm equals it exactly, keeping the certified constant tight.
    """
    if n < 1 or m < 1:
        raise ValueError("need n >= 1 and m >= 1")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, n))
    norms = np.linalg.norm(a, axis=1)
    if gamma is not None:
        a = a * (gamma / norms.max())
        cert = float(gamma)
    else:
        cert = float(norms.max())
    if b_shift is None:
        b_shift = rng.standard_normal(m)
    return LogSumExpProblem(
        a_mat=a,
        b_shift=np.asarray(b_shift, dtype=float),
        mu=float(mu),
        b_ref=SpdOperator.identity(n),
        gamma=cert,
    )


def _lse_raw(p: LogSumExpProblem, xc: np.ndarray):
    """Value/gradient/Hessian entries at raw coordinates (max-shifted softmax)."""
    t = p.a_mat @ xc + p.b_shift
    t_max = float(t.max())
    e = np.exp(t - t_max)
    s = float(e.sum())
    pi = e / s
    f0 = t_max + math.log(s)
    g0 = p.a_mat.T @ pi
    h0 = (p.a_mat.T * pi) @ p.a_mat - np.outer(g0, g0)
    bx = p.b_ref.entries @ xc
    f = f0 + 0.5 * p.mu * float(bx @ xc)
    g = g0 + p.mu * bx
    h = h0 + p.mu * p.b_ref.entries
    return f, g, 0.5 * (h + h.T), pi


def lse_value_grad_hess(p: LogSumExpProblem,
                        x: PrimalVector) -> tuple[float, DualVector, SpdOperator]:
    """Objective value, gradient and Hessian of a log-sum-exp instance."""
    f, g, h, _ = _lse_raw(p, x.coords)
    return f, DualVector(g), SpdOperator(h, Role.PRIMAL_TO_DUAL)


def lse_softmax(p: LogSumExpProblem, x: PrimalVector) -> np.ndarray:
    """Softmax weights at x; strictly positive and summing to one."""
    return _lse_raw(p, x.coords)[3]


def _hess_entries(p: ProblemInstance, xc: np.ndarray) -> np.ndarray:
    if p.kind is Kind.QUADRATIC:
        return p.payload.a_op.entries
    return _lse_raw(p.payload, xc)[2]


def _gauss_legendre_mean(p: ProblemInstance, xc, uc, order: int) -> np.ndarray:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    acc = np.zeros((p.n, p.n))
    for ti, wi in zip(t, w):
        acc += wi * _hess_entries(p, xc + ti * uc)
    return acc


def integral_hessian(p: ProblemInstance, x: PrimalVector, u: PrimalVector,
                     order: int = 16) -> IntegralHessian:
    """Mean of the Hessian over the segment from x to x + u.

    Quadratics return their operator exactly.  Otherwise the mean is a
    Gauss-Legendre rule with ``order`` nodes, and the error estimate is the
    spectral-norm gap to the doubled-order rule (the integrand is analytic
    along segments, so the rule converges spectrally and the gap is a sound
    estimate).
    """
    if order < 2:
        raise ValueError("quadrature order must be at least 2")
    if p.kind is Kind.QUADRATIC:
        return IntegralHessian(j_op=p.payload.a_op, quad_order=order, est_error=0.0)
    xc, uc = x.coords, u.coords
    if float(np.linalg.norm(uc)) == 0.0:
        return IntegralHessian(
            j_op=SpdOperator(_hess_entries(p, xc), Role.PRIMAL_TO_DUAL),
            quad_order=order,
            est_error=0.0,
        )
    j = _gauss_legendre_mean(p, xc, uc, order)
    j_fine = _gauss_legendre_mean(p, xc, uc, 2 * order)
    est = float(np.linalg.norm(j - j_fine, 2))
    return IntegralHessian(
        j_op=SpdOperator(j, Role.PRIMAL_TO_DUAL),
        quad_order=order,
        est_error=est,
    )


@dataclass(frozen=True)
class SandwichReport:
    """Outcome of the segment-Hessian sandwich checks at one point pair."""

    r: float
    factor: float
    slacks: dict[str, float] = field(compare=False)
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return min(self.slacks.values()) >= -self.tol

    @property
    def worst(self) -> float:
        return min(self.slacks.values())


def sandwich_check(p: ProblemInstance, x: PrimalVector, y: PrimalVector,
                   order: int = 16, tol: float = 1e-8) -> SandwichReport:
    """Verify the mean-Hessian sandwiches between x and y.

    With r the distance from x to y in the local metric at x and
    c = 1 + M*r/2, checks c^{-1} H(x) <= J <= c H(x) and the same around
    H(y), then spot-checks the defining Hessian-variation bound
    H(y) - H(x) <= M ||y - x||_z H(w) at a small deterministic sample of
    (z, w) pairs.  Slacks are smallest eigenvalues of (rhs - lhs) relative
    to the spectral norm of rhs.
    """
    hx = p.hess(x)
    hy = p.hess(y)
    u = y - x
    r = norm_primal(hx, u)
    big_m = p.sc_const
    c = 1.0 + 0.5 * big_m * r
    j = integral_hessian(p, x, u, order).j_op
    slacks = {
        "x_lower": loewner_slack(hx.scaled(1.0 / c), j),
        "x_upper": loewner_slack(j, hx.scaled(c)),
        "y_lower": loewner_slack(hy.scaled(1.0 / c), j),
        "y_upper": loewner_slack(j, hy.scaled(c)),
    }
    mid = PrimalVector(0.5 * (x.coords + y.coords))
    h_mid = p.hess(mid)
    samples = {"x": (x, hx), "y": (y, hy), "mid": (mid, h_mid)}
    for z_name, (z, _) in samples.items():
        dist = norm_primal(p.hess(z), u)
        for w_name, (_, hw) in samples.items():
            # H(y) - H(x) <= M * ||y - x||_z * H(w), as a relative slack.
            rhs = big_m * dist * hw.entries - (hy.entries - hx.entries)
            min_eig = float(np.linalg.eigvalsh(0.5 * (rhs + rhs.T))[0])
            scale = max(
                float(np.linalg.eigvalsh(hw.entries)[-1]) * max(big_m * dist, 1.0),
                1e-300,
            )
            slacks[f"var_{z_name}_{w_name}"] = min_eig / scale
    return SandwichReport(r=r, factor=c, slacks=slacks, tol=tol)


def instance_to_dict(p: ProblemInstance) -> dict:
    """Canonical JSON-ready description (explicit data, no seeds)."""
    if p.kind is Kind.QUADRATIC:
        q = p.payload
        spectrum = np.linalg.eigvalsh(
            np.linalg.solve(q.b_ref.entries, q.a_op.entries)
        )
        return {
            "kind": "quadratic",
            "n": q.n,
            "a": [list(map(float, row)) for row in q.a_op.entries],
            "b": list(map(float, q.b.coords)),
            "b_ref": [list(map(float, row)) for row in q.b_ref.entries],
            "mu": q.mu,
            "ell": q.ell,
            "spectrum": list(map(float, spectrum)),
        }
    l = p.payload
    return {
        "kind": "log_sum_exp",
        "n": l.n,
        "m": l.m,
        "a_rows": [list(map(float, row)) for row in l.a_mat],
        "b": list(map(float, l.b_shift)),
        "b_ref": [list(map(float, row)) for row in l.b_ref.entries],
        "mu": l.mu,
        "gamma": l.gamma,
    }


def instance_from_dict(d: dict) -> ProblemInstance:
    """Build an instance from either explicit data or a seeded generator spec.

    Quadratic specs carry either an explicit matrix ``a`` or a ``spectrum``
    plus ``seed``; log-sum-exp specs carry either explicit ``a_rows`` or
    ``(n, m, seed)`` with an optional ``gamma`` rescale target.
    """
    kind = d.get("kind")
    if kind == "quadratic":
        if "a" in d:
            n = len(d["a"])
            b_ref = (SpdOperator(np.asarray(d["b_ref"], dtype=float))
                     if "b_ref" in d else SpdOperator.identity(n))
            return ProblemInstance.quadratic(QuadraticProblem(
                a_op=SpdOperator(np.asarray(d["a"], dtype=float)),
                b=DualVector(np.asarray(d["b"], dtype=float)),
                b_ref=b_ref,
                mu=float(d["mu"]),
                ell=float(d["ell"]),
            ))
        if "spectrum" not in d:
            raise ValueError("quadratic spec needs either 'a' or 'spectrum'")
        b = (DualVector(np.asarray(d["b"], dtype=float)) if "b" in d else None)
        return ProblemInstance.quadratic(
            quad_make(d["spectrum"], b=b, seed=int(d.get("seed", 0)))
        )
    if kind == "log_sum_exp":
        if "a_rows" in d:
            a = np.asarray(d["a_rows"], dtype=float)
            n = a.shape[1]
            b_ref = (SpdOperator(np.asarray(d["b_ref"], dtype=float))
                     if "b_ref" in d else SpdOperator.identity(n))
            gamma = float(d["gamma"]) if "gamma" in d else float(
                np.linalg.norm(a, axis=1).max()
            )
            return ProblemInstance.log_sum_exp(LogSumExpProblem(
                a_mat=a,
                b_shift=np.asarray(d["b"], dtype=float),
                mu=float(d["mu"]),
                b_ref=b_ref,
                gamma=gamma,
            ))
        return ProblemInstance.log_sum_exp(lse_make(
            n=int(d["n"]),
            m=int(d["m"]),
            mu=float(d["mu"]),
            seed=int(d.get("seed", 0)),
            gamma=(float(d["gamma"]) if "gamma" in d else None),
            b_shift=(np.asarray(d["b"], dtype=float) if "b" in d else None),
        ))
    raise ValueError(f"unknown instance kind: {kind!r}")


def instance_hash(p: ProblemInstance) -> str:
    """Stable content hash of the canonical instance description."""
    blob = json.dumps(instance_to_dict(p), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()

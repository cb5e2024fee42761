"""SPD operator calculus on a primal/dual pair of coordinate spaces.

Operators are dense symmetric positive definite matrices tagged with the
direction they map (primal -> dual, like a Hessian, or dual -> primal, like
an inverse Hessian).  Vectors carry the same tag.  The tags exist purely to
prevent category errors such as pairing two primal vectors; storage is an
ordinary coordinate array in the standard basis.

All values are immutable after construction and every operation is a pure
function, so everything here is safe to share across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "Role",
    "SpdOperator",
    "PrimalVector",
    "DualVector",
    "EigenRange",
    "DimensionMismatch",
    "NotSpdError",
    "ZeroDirectionError",
    "pair",
    "rel_trace",
    "rel_det",
    "norm_primal",
    "norm_dual",
    "rel_eigen_range",
    "loewner_leq",
    "loewner_slack",
    "spd_solve",
]

# Relative symmetry tolerance and pivot floor for accepting a matrix as SPD.
SYMMETRY_RTOL = 1e-12
PIVOT_RTOL = 1e-14


class DimensionMismatch(ValueError):
    """Operands live in spaces of different dimension."""


class NotSpdError(ValueError):
    """Matrix failed the symmetric positive definite check."""


class ZeroDirectionError(ValueError):
    """An operation that needs a direction received the zero vector."""


class Role(enum.Enum):
    """Mapping direction of an operator."""

    PRIMAL_TO_DUAL = "primal_to_dual"
    DUAL_TO_PRIMAL = "dual_to_primal"


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.flags.writeable = False
    return out


def _check_same_dim(a, b) -> None:
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension mismatch: {a.dim} vs {b.dim}")


@dataclass(frozen=True)
class _Vector:
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coords must be a non-empty 1-d array")
        if not np.all(np.isfinite(c)):
            raise ValueError("coords must be finite")
        object.__setattr__(self, "coords", _as_readonly(c))

    @property
    def dim(self) -> int:
        return self.coords.size

    def _like(self, coords):
        return type(self)(coords)

    def __add__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        _check_same_dim(self, other)
        return self._like(self.coords + other.coords)

    def __sub__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        _check_same_dim(self, other)
        return self._like(self.coords - other.coords)

    def __neg__(self):
        return self._like(-self.coords)

    def __mul__(self, scalar: float):
        return self._like(self.coords * float(scalar))

    __rmul__ = __mul__


class PrimalVector(_Vector):
    """Point or direction in the primal space."""


class DualVector(_Vector):
    """Linear functional on the primal space (gradients live here)."""


@dataclass(frozen=True)
class EigenRange:
    """Extreme generalized eigenvalues of one SPD operator relative to another."""

    min_rel: float
    max_rel: float

    def __post_init__(self):
        if not (0.0 < self.min_rel <= self.max_rel):
            raise ValueError(
                f"invalid eigen range ({self.min_rel}, {self.max_rel})"
            )

    def contains(self, other: "EigenRange", tol: float = 0.0) -> bool:
        return (other.min_rel >= self.min_rel - tol
                and other.max_rel <= self.max_rel + tol)


@dataclass(frozen=True)
class SpdOperator:
    """Symmetric positive definite operator between the primal and dual spaces.

    Construction validates symmetry (relative tolerance ``SYMMETRY_RTOL``) and
    positive definiteness (a Cholesky factorization must succeed with pivots
    above ``PIVOT_RTOL`` times the matrix scale) and caches the triangular
    factor, so solves and log-determinants never form an explicit inverse.
    """

    entries: np.ndarray
    role: Role = Role.PRIMAL_TO_DUAL
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("entries must be a square matrix")
        if m.shape[0] == 0:
            raise ValueError("zero-dimensional operators are not supported")
        if not np.all(np.isfinite(m)):
            raise NotSpdError("entries must be finite")
        scale = float(np.max(np.abs(m)))
        if scale == 0.0:
            raise NotSpdError("zero matrix is not positive definite")
        asym = float(np.max(np.abs(m - m.T)))
        if asym > SYMMETRY_RTOL * scale:
            raise NotSpdError(
                f"matrix is not symmetric (asymmetry {asym:.3e} vs scale {scale:.3e})"
            )
        sym = 0.5 * (m + m.T)
        try:
            chol = np.linalg.cholesky(sym)
        except np.linalg.LinAlgError as exc:
            raise NotSpdError("matrix is not positive definite") from exc
        if float(np.min(np.diagonal(chol)) ** 2) <= PIVOT_RTOL * scale:
            raise NotSpdError("matrix is numerically singular")
        object.__setattr__(self, "entries", _as_readonly(sym))
        object.__setattr__(self, "_chol", _as_readonly(chol))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diagonal(self._chol))))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.entries @ np.asarray(x, dtype=float)

    def solve_vec(self, rhs: np.ndarray) -> np.ndarray:
        """Apply the inverse to a raw coordinate vector via the cached factor."""
        return scipy.linalg.cho_solve((self._chol, True), np.asarray(rhs, dtype=float))

    def solve_mat(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve((self._chol, True), np.asarray(rhs, dtype=float))

    def quad_form(self, x: np.ndarray) -> float:
        """<Mx, x> for a raw coordinate vector."""
        x = np.asarray(x, dtype=float)
        return float(x @ (self.entries @ x))

    def inv_quad_form(self, x: np.ndarray) -> float:
        """<x, M^{-1}x> for a raw coordinate vector, via triangular solve."""
        y = scipy.linalg.solve_triangular(
            self._chol, np.asarray(x, dtype=float), lower=True
        )
        return float(y @ y)

    def apply(self, v):
        """Typed application: primal->dual maps PrimalVector to DualVector."""
        if self.role is Role.PRIMAL_TO_DUAL:
            if not isinstance(v, PrimalVector):
                raise TypeError("primal->dual operator applies to PrimalVector")
            _check_same_dim(self, v)
            return DualVector(self.matvec(v.coords))
        if not isinstance(v, DualVector):
            raise TypeError("dual->primal operator applies to DualVector")
        _check_same_dim(self, v)
        return PrimalVector(self.matvec(v.coords))

    def scaled(self, c: float) -> "SpdOperator":
        if c <= 0.0:
            raise ValueError("scale factor must be positive")
        return SpdOperator(self.entries * float(c), self.role)

    def inverse(self) -> "SpdOperator":
        """Explicit inverse with the opposite role tag.

        This is the only place an explicit inverse matrix is formed; every
        other inverse application goes through the cached factorization.
        """
        inv = self.solve_mat(np.eye(self.dim))
        inv = 0.5 * (inv + inv.T)
        flipped = (Role.DUAL_TO_PRIMAL if self.role is Role.PRIMAL_TO_DUAL
                   else Role.PRIMAL_TO_DUAL)
        return SpdOperator(inv, flipped)

    @staticmethod
    def identity(dim: int, role: Role = Role.PRIMAL_TO_DUAL) -> "SpdOperator":
        return SpdOperator(np.eye(dim), role)


def _require_role(op: SpdOperator, role: Role, name: str) -> None:
    if op.role is not role:
        raise TypeError(f"{name} must have role {role.value}, got {op.role.value}")


def pair(s: DualVector, x: PrimalVector) -> float:
    """Duality pairing <s, x> = sum_i s_i x_i."""
    if not isinstance(s, DualVector) or not isinstance(x, PrimalVector):
        raise TypeError("pair() takes a DualVector and a PrimalVector")
    _check_same_dim(s, x)
    return float(s.coords @ x.coords)


def rel_trace(h: SpdOperator, a: SpdOperator) -> float:
    """Trace of A relative to H^{-1}, i.e. Tr(HA)."""
    _require_role(h, Role.DUAL_TO_PRIMAL, "h")
    _require_role(a, Role.PRIMAL_TO_DUAL, "a")
    _check_same_dim(h, a)
    # Tr(HA) = sum_ij H_ij A_ji = sum_ij H_ij A_ij for symmetric operands.
    return float(np.tensordot(h.entries, a.entries))


def rel_det(h: SpdOperator, a: SpdOperator) -> float:
    """Determinant of HA, evaluated as exp(logdet A + logdet H) for stability."""
    _require_role(h, Role.DUAL_TO_PRIMAL, "h")
    _require_role(a, Role.PRIMAL_TO_DUAL, "a")
    _check_same_dim(h, a)
    return float(np.exp(a.logdet + h.logdet))


def norm_primal(a: SpdOperator, h: PrimalVector) -> float:
    """||h||_A = <Ah, h>^{1/2}."""
    _require_role(a, Role.PRIMAL_TO_DUAL, "a")
    if not isinstance(h, PrimalVector):
        raise TypeError("norm_primal() takes a PrimalVector")
    _check_same_dim(a, h)
    return float(np.sqrt(max(a.quad_form(h.coords), 0.0)))


def norm_dual(a: SpdOperator, s: DualVector) -> float:
    """||s||*_A = <s, A^{-1}s>^{1/2}, computed through a factorization solve."""
    _require_role(a, Role.PRIMAL_TO_DUAL, "a")
    if not isinstance(s, DualVector):
        raise TypeError("norm_dual() takes a DualVector")
    _check_same_dim(a, s)
    return float(np.sqrt(max(a.inv_quad_form(s.coords), 0.0)))


def rel_eigen_range(g: SpdOperator, a: SpdOperator) -> EigenRange:
    """Extreme eigenvalues of G relative to A (symmetric-definite reduction)."""
    _require_role(g, Role.PRIMAL_TO_DUAL, "g")
    _require_role(a, Role.PRIMAL_TO_DUAL, "a")
    _check_same_dim(g, a)
    try:
        vals = scipy.linalg.eigh(g.entries, a.entries, eigvals_only=True)
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        raise NotSpdError("generalized eigenvalue reduction failed") from exc
    return EigenRange(float(vals[0]), float(vals[-1]))


def loewner_slack(a1: SpdOperator, a2: SpdOperator) -> float:
    """Smallest eigenvalue of (A2 - A1), relative to the spectral norm of A2.

    Nonnegative (up to rounding) exactly when A1 is below A2 in the
    positive-semidefinite order.
    """
    _check_same_dim(a1, a2)
    diff = a2.entries - a1.entries
    min_eig = float(np.linalg.eigvalsh(diff)[0])
    scale = float(np.linalg.eigvalsh(a2.entries)[-1])
    return min_eig / scale


def loewner_leq(a1: SpdOperator, a2: SpdOperator, tol: float = 1e-9) -> bool:
    """True iff A1 is below A2 in the positive-semidefinite order, up to tol."""
    return loewner_slack(a1, a2) >= -tol


def spd_solve(a: SpdOperator, s: DualVector) -> PrimalVector:
    """Solve A x = s for a primal->dual operator A."""
    _require_role(a, Role.PRIMAL_TO_DUAL, "a")
    if not isinstance(s, DualVector):
        raise TypeError("spd_solve() takes a DualVector right-hand side")
    _check_same_dim(a, s)
    return PrimalVector(a.solve_vec(s.coords))

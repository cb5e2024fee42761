"""Shared helpers for the test suite."""

import numpy as np
import pytest

from broyden_lab import PrimalVector, Role, SpdOperator
from broyden_lab.problems import random_orthogonal


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def spd_from_spectrum(eigs, seed=0, role=Role.PRIMAL_TO_DUAL) -> SpdOperator:
    """SPD operator with the given spectrum in a seeded random basis."""
    eigs = np.asarray(eigs, dtype=float)
    q = random_orthogonal(eigs.size, np.random.default_rng(seed))
    m = (q * eigs) @ q.T
    return SpdOperator(0.5 * (m + m.T), role)


def random_direction(rng, n) -> PrimalVector:
    return PrimalVector(rng.standard_normal(n))

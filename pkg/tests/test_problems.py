"""Problem instances: oracles, certified constants, quadrature, serialization."""

import math

import numpy as np
import pytest

from broyden_lab import (
    DualVector,
    Kind,
    LogSumExpProblem,
    PrimalVector,
    ProblemInstance,
    QuadraticProblem,
    SpdOperator,
    instance_from_dict,
    instance_hash,
    instance_to_dict,
    integral_hessian,
    loewner_slack,
    lse_make,
    lse_value_grad_hess,
    quad_make,
    rel_eigen_range,
    sandwich_check,
)
from broyden_lab.problems import lse_softmax


def grad_fd(f, x, h=1e-6):
    """Central finite differences of a scalar function."""
    n = x.size
    out = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return out


class TestQuadMake:
    def test_unit_spectrum_gives_identity(self):
        q = quad_make([1.0, 1.0, 1.0], b=DualVector([0.0, 0.0, 0.0]), seed=0)
        np.testing.assert_allclose(q.a_op.entries, np.eye(3), atol=1e-14)
        assert q.mu == q.ell == 1.0

    def test_prescribed_range(self):
        q = quad_make([1.0, 100.0], seed=5)
        r = rel_eigen_range(q.a_op, q.b_ref)
        assert r.min_rel == pytest.approx(1.0, rel=1e-12)
        assert r.max_rel == pytest.approx(100.0, rel=1e-12)

    def test_deterministic_in_seed(self):
        q1 = quad_make([1.0, 3.0, 9.0], seed=42)
        q2 = quad_make([1.0, 3.0, 9.0], seed=42)
        np.testing.assert_array_equal(q1.a_op.entries, q2.a_op.entries)
        np.testing.assert_array_equal(q1.b.coords, q2.b.coords)

    def test_rejects_nonpositive_spectrum(self):
        with pytest.raises(ValueError):
            quad_make([1.0, 0.0], seed=0)

    def test_certificate_validated(self):
        a = SpdOperator(np.diag([1.0, 2.0]))
        with pytest.raises(ValueError, match="mu"):
            QuadraticProblem(a_op=a, b=DualVector([0.0, 0.0]),
                             b_ref=SpdOperator(np.eye(2)), mu=1.5, ell=2.0)
        with pytest.raises(ValueError, match="ell"):
            QuadraticProblem(a_op=a, b=DualVector([0.0, 0.0]),
                             b_ref=SpdOperator(np.eye(2)), mu=1.0, ell=1.5)

    def test_gradient_matches_finite_differences(self):
        q = quad_make([1.0, 4.0, 2.0], seed=9)
        x = PrimalVector(np.array([0.3, -1.2, 0.7]))
        g = q.grad(x)
        fd = grad_fd(lambda z: q.value(PrimalVector(z)), x.coords)
        np.testing.assert_allclose(g.coords, fd, rtol=1e-6, atol=1e-8)

    def test_minimizer_zeroes_gradient(self):
        q = quad_make([2.0, 5.0], seed=1)
        xstar = q.minimizer()
        assert np.linalg.norm(q.grad(xstar).coords) <= 1e-12

    def test_hessian_matches_gradient_differences(self, rng):
        q = quad_make([1.0, 4.0, 2.0], seed=10)
        x = PrimalVector(rng.standard_normal(3))
        fd = np.empty((3, 3))
        eps = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = eps
            gp = q.grad(PrimalVector(x.coords + e)).coords
            gm = q.grad(PrimalVector(x.coords - e)).coords
            fd[:, i] = (gp - gm) / (2.0 * eps)
        np.testing.assert_allclose(q.hess(x).entries, 0.5 * (fd + fd.T),
                                   rtol=1e-5, atol=1e-8)


class TestLogSumExpOracles:
    def test_uniform_softmax_at_origin(self):
        p = lse_make(4, 6, mu=0.2, seed=0, gamma=1.0,
                     b_shift=np.zeros(6))
        x0 = PrimalVector(np.zeros(4))
        pi = lse_softmax(p, x0)
        np.testing.assert_allclose(pi, np.full(6, 1.0 / 6.0), rtol=1e-14)
        _, g, _ = lse_value_grad_hess(p, x0)
        np.testing.assert_allclose(g.coords, p.a_mat.mean(axis=0), rtol=1e-12)

    def test_single_term_degenerates(self):
        # m = 1: the smooth part is linear, so the Hessian is exactly mu*B.
        p = LogSumExpProblem(
            a_mat=np.array([[0.5, -0.25]]), b_shift=np.array([0.3]),
            mu=0.4, b_ref=SpdOperator(np.eye(2)), gamma=1.0,
        )
        x = PrimalVector(np.array([1.0, 2.0]))
        f, g, h = lse_value_grad_hess(p, x)
        np.testing.assert_allclose(h.entries, 0.4 * np.eye(2), atol=1e-15)
        expected_f = (0.5 - 0.5 + 0.3) + 0.2 * 5.0
        assert f == pytest.approx(expected_f)

    def test_gradient_matches_finite_differences(self, rng):
        p = lse_make(5, 12, mu=0.1, seed=3, gamma=1.0)
        inst = ProblemInstance.log_sum_exp(p)
        for _ in range(5):
            x = PrimalVector(rng.standard_normal(5))
            g = inst.grad(x)
            fd = grad_fd(lambda z: inst.value(PrimalVector(z)), x.coords)
            np.testing.assert_allclose(g.coords, fd, rtol=1e-6, atol=1e-7)

    def test_hessian_matches_gradient_differences(self, rng):
        p = lse_make(4, 10, mu=0.1, seed=4, gamma=1.0)
        inst = ProblemInstance.log_sum_exp(p)
        x = PrimalVector(rng.standard_normal(4))
        h = inst.hess(x).entries
        fd = np.empty((4, 4))
        eps = 1e-6
        for i in range(4):
            e = np.zeros(4)
            e[i] = eps
            gp = inst.grad(PrimalVector(x.coords + e)).coords
            gm = inst.grad(PrimalVector(x.coords - e)).coords
            fd[:, i] = (gp - gm) / (2.0 * eps)
        np.testing.assert_allclose(h, 0.5 * (fd + fd.T), rtol=1e-5, atol=1e-7)

    def test_softmax_positive_and_normalized(self, rng):
        p = lse_make(6, 15, mu=0.3, seed=5, gamma=2.0)
        for _ in range(200):
            pi = lse_softmax(p, PrimalVector(3.0 * rng.standard_normal(6)))
            assert np.all(pi > 0.0)
            assert abs(pi.sum() - 1.0) <= 1e-12

    def test_overflow_safe_far_from_origin(self):
        p = lse_make(3, 8, mu=0.1, seed=6, gamma=1.0)
        inst = ProblemInstance.log_sum_exp(p)
        x = PrimalVector(np.full(3, 500.0))
        f, g, h = lse_value_grad_hess(p, x)
        assert np.isfinite(f)
        assert np.all(np.isfinite(g.coords))
        assert np.all(np.isfinite(h.entries))

    def test_curvature_bounds_hold(self, rng):
        # mu*B <= H(x) <= ell*B with ell = gamma^2 + mu, at random points.
        p = lse_make(4, 9, mu=0.25, seed=7, gamma=1.5)
        inst = ProblemInstance.log_sum_exp(p)
        assert inst.ell == pytest.approx(1.5 ** 2 + 0.25)
        for _ in range(1000):
            x = PrimalVector(2.0 * rng.standard_normal(4))
            h = inst.hess(x)
            assert loewner_slack(p.b_ref.scaled(p.mu), h) >= -1e-10
            assert loewner_slack(h, p.b_ref.scaled(inst.ell)) >= -1e-10

    def test_gamma_certificate_enforced(self):
        with pytest.raises(ValueError, match="gamma"):
            LogSumExpProblem(
                a_mat=np.array([[3.0, 4.0]]), b_shift=np.array([0.0]),
                mu=0.1, b_ref=SpdOperator(np.eye(2)), gamma=1.0,
            )

    def test_gamma_rescale_is_tight(self):
        p = lse_make(4, 7, mu=0.1, seed=8, gamma=0.75)
        norms = np.linalg.norm(p.a_mat, axis=1)
        assert norms.max() == pytest.approx(0.75, rel=1e-12)
        assert p.sc_const == pytest.approx(2.0 * 0.75 ** 3 / 0.1 ** 1.5)


class TestIntegralHessian:
    def test_quadratic_is_exact(self):
        q = quad_make([1.0, 5.0], seed=2)
        inst = ProblemInstance.quadratic(q)
        ih = integral_hessian(inst, PrimalVector([1.0, 2.0]),
                              PrimalVector([0.5, -0.5]), order=16)
        assert ih.j_op is q.a_op
        assert ih.est_error == 0.0

    def test_degenerate_segment_is_pointwise_hessian(self, rng):
        p = lse_make(3, 6, mu=0.2, seed=9, gamma=1.0)
        inst = ProblemInstance.log_sum_exp(p)
        x = PrimalVector(rng.standard_normal(3))
        ih = integral_hessian(inst, x, PrimalVector(np.zeros(3)), order=8)
        np.testing.assert_array_equal(ih.j_op.entries, inst.hess(x).entries)
        assert ih.est_error == 0.0

    def test_refinement_agreement(self, rng):
        # Order 16 against order 32, relative spectral norm.
        p = lse_make(4, 10, mu=0.1, seed=10, gamma=1.0)
        inst = ProblemInstance.log_sum_exp(p)
        for _ in range(10):
            x = PrimalVector(rng.standard_normal(4))
            u = PrimalVector(rng.standard_normal(4))
            j16 = integral_hessian(inst, x, u, order=16)
            j32 = integral_hessian(inst, x, u, order=32)
            diff = np.linalg.norm(j16.j_op.entries - j32.j_op.entries, 2)
            scale = np.linalg.norm(j32.j_op.entries, 2)
            assert diff <= 1e-10 * scale
            assert j16.est_error == pytest.approx(diff)

    def test_order_validated(self, rng):
        p = lse_make(3, 5, mu=0.1, seed=11)
        inst = ProblemInstance.log_sum_exp(p)
        x = PrimalVector(np.zeros(3))
        with pytest.raises(ValueError):
            integral_hessian(inst, x, x, order=1)

    def test_matches_trapezoid_refinement_oracle(self, rng):
        # Independent oracle: very fine trapezoid rule along the segment.
        p = lse_make(3, 7, mu=0.15, seed=12, gamma=1.0)
        inst = ProblemInstance.log_sum_exp(p)
        x = PrimalVector(rng.standard_normal(3))
        u = PrimalVector(rng.standard_normal(3))
        ts = np.linspace(0.0, 1.0, 2001)
        acc = np.zeros((3, 3))
        for i, t in enumerate(ts):
            w = 0.5 if i in (0, len(ts) - 1) else 1.0
            acc += w * inst.hess(
                PrimalVector(x.coords + t * u.coords)
            ).entries
        acc /= (len(ts) - 1)
        j = integral_hessian(inst, x, u, order=16).j_op.entries
        np.testing.assert_allclose(j, acc, rtol=1e-7, atol=1e-9)


class TestSandwich:
    def test_quadratic_exact_equality(self, rng):
        q = quad_make([1.0, 4.0, 9.0], seed=13)
        inst = ProblemInstance.quadratic(q)
        rep = sandwich_check(inst, PrimalVector(rng.standard_normal(3)),
                             PrimalVector(rng.standard_normal(3)))
        assert rep.passed
        assert rep.factor == 1.0
        assert abs(rep.worst) <= 1e-10

    def test_coincident_points(self, rng):
        p = lse_make(4, 8, mu=0.2, seed=14, gamma=1.0)
        inst = ProblemInstance.log_sum_exp(p)
        x = PrimalVector(rng.standard_normal(4))
        rep = sandwich_check(inst, x, x)
        assert rep.r == 0.0
        assert rep.passed

    def test_random_pairs(self, rng):
        p = lse_make(4, 10, mu=0.1, seed=15, gamma=1.0)
        inst = ProblemInstance.log_sum_exp(p)
        for _ in range(100):
            x = PrimalVector(rng.standard_normal(4))
            y = PrimalVector(rng.standard_normal(4))
            rep = sandwich_check(inst, x, y)
            assert rep.worst >= -1e-8


class TestSerialization:
    def test_quadratic_roundtrip(self):
        inst = ProblemInstance.quadratic(quad_make([1.0, 2.0, 8.0], seed=21))
        d = instance_to_dict(inst)
        rebuilt = instance_from_dict(d)
        assert instance_hash(rebuilt) == instance_hash(inst)
        np.testing.assert_array_equal(rebuilt.payload.a_op.entries,
                                      inst.payload.a_op.entries)

    def test_lse_roundtrip(self):
        inst = ProblemInstance.log_sum_exp(lse_make(3, 5, mu=0.2, seed=22,
                                                    gamma=0.9))
        d = instance_to_dict(inst)
        rebuilt = instance_from_dict(d)
        assert rebuilt.kind is Kind.LOG_SUM_EXP
        assert instance_hash(rebuilt) == instance_hash(inst)

    def test_seeded_spec_deterministic(self):
        d = {"kind": "log_sum_exp", "n": 4, "m": 6, "mu": 0.1,
             "gamma": 1.0, "seed": 3}
        h1 = instance_hash(instance_from_dict(d))
        h2 = instance_hash(instance_from_dict(d))
        assert h1 == h2

    def test_seeded_quadratic_spec(self):
        d = {"kind": "quadratic", "spectrum": [1.0, 10.0], "seed": 7}
        inst = instance_from_dict(d)
        assert inst.mu == 1.0 and inst.ell == 10.0

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            instance_from_dict({"kind": "cubic"})

    def test_quadratic_spec_needs_data(self):
        with pytest.raises(ValueError):
            instance_from_dict({"kind": "quadratic", "mu": 1.0})

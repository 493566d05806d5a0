import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize_scalar

from rothevi.core import (
    ConstantsLedger,
    ConvectionOperator,
    ConvexFunctional,
    DiscreteGelfand,
    convection_apply,
    norm_triple,
    phi_eval,
    prox_phi_node,
    young_constant,
    young_constants,
)
from rothevi.problems import ProblemSpec, build

finite = st.floats(-50, 50, allow_nan=False)


def vec(n):
    return arrays(np.float64, n, elements=finite)


# -- norms -----------------------------------------------------------------

def test_norms_identity_matrices():
    g = DiscreteGelfand(np.eye(2), np.eye(2))
    h, v, w = norm_triple(g, np.array([3.0, 4.0]))
    assert h == pytest.approx(5.0)
    assert v == pytest.approx(5.0)
    # W-norm: ||M^{-1} S v||_H^2 + ||v||_V^2 = 25 + 25
    assert w == pytest.approx(math.sqrt(50.0))


def test_norms_of_zero():
    g, _, _ = build(ProblemSpec("obstacle_cd_1d", resolution=(5,)))
    assert norm_triple(g, np.zeros(5)) == (0.0, 0.0, 0.0)


def test_norms_hand_assembled_1d():
    g, _, _ = build(ProblemSpec("obstacle_cd_1d", resolution=(3,)))
    h = 0.25
    M = h * np.eye(3)
    S = np.array([[2, -1, 0], [-1, 2, -1], [0, -1, 2]]) / h
    np.testing.assert_allclose(g.mass, M)
    np.testing.assert_allclose(g.stiffness, S)
    v = np.ones(3)
    hn, vn, _ = norm_triple(g, v)
    assert hn == pytest.approx(math.sqrt(0.75))
    assert vn == pytest.approx(math.sqrt(8.0))


def test_norm_dimension_mismatch():
    g = DiscreteGelfand(np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        norm_triple(g, np.ones(3))


def test_nonsymmetric_mass_rejected():
    with pytest.raises(ValueError):
        DiscreteGelfand(np.array([[1.0, 0.1], [0.0, 1.0]]), np.eye(2))


def test_vnorm_uses_symmetric_part():
    S = np.array([[2.0, 1.0], [-1.0, 2.0]])
    g = DiscreteGelfand(np.eye(2), S)
    v = np.array([1.0, 1.0])
    assert g.v_norm(v) == pytest.approx(2.0)


@pytest.mark.parametrize("spec", [
    ProblemSpec("obstacle_cd_1d", resolution=(12,)),
    ProblemSpec("obstacle_cd_2d", resolution=(4, 3), domain=((0, 1), (0, 1)), convection_coeff=(1, 1)),
    ProblemSpec("friction_neumann_1d", resolution=(9,)),
])
def test_gelfand_invariants(spec):
    g, _, _ = build(spec)
    assert np.linalg.eigvalsh(g.mass).min() > 0
    assert np.linalg.eigvalsh(g.stiffness_sym).min() > 0


@settings(max_examples=50, deadline=None)
@given(vec(6))
def test_norms_positive_definite(v):
    g, _, _ = build(ProblemSpec("friction_neumann_1d", resolution=(6,)))
    h, vn, w = norm_triple(g, v)
    if np.abs(v).max() > 1e-100:  # squares of tinier entries underflow
        assert h > 0 and vn > 0 and w >= vn
    elif not np.any(v):
        assert h == vn == w == 0


# -- functionals -------------------------------------------------------------

def test_phi_eval_examples():
    ob = ConvexFunctional.obstacle(np.zeros(2))
    assert phi_eval(ob, np.array([0.0, 1.0])) == 0.0
    assert phi_eval(ob, np.array([-1e-16, 1.0])) == math.inf
    fr = ConvexFunctional.friction(np.array([2.0, 0.0, 2.0]))
    assert phi_eval(fr, np.array([1.0, 5.0, -3.0])) == 8.0
    assert phi_eval(ConvexFunctional.zero(2), np.array([-4.0, 9.0])) == 0.0


def test_phi_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        phi_eval(ConvexFunctional.zero(2), np.ones(3))


def test_friction_rejects_negative_weights():
    with pytest.raises(ValueError):
        ConvexFunctional.friction(np.array([1.0, -0.1]))


def test_properness():
    lb = np.array([-np.inf, 0.5, -2.0])
    ob = ConvexFunctional.obstacle(lb)
    assert phi_eval(ob, ob.project(np.zeros(3))) == 0.0


def _scalar_min(phi, i, q, r):
    """Bounded Brent minimization of 1/2 q x^2 + r x + phi_i(x)."""
    def obj(x):
        e = np.zeros(phi.dim)
        e[i] = x
        return 0.5 * q * x * x + r * x + phi_eval(phi, e)

    lo = -abs(r) / q - 10.0
    if phi.kind == "obstacle" and np.isfinite(phi.lower_bounds[i]):
        lo = phi.lower_bounds[i]
    hi = abs(r) / q + 10.0 + max(lo, 0.0)
    res = minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": 1e-11})
    return res.x


def test_prox_examples():
    assert prox_phi_node(ConvexFunctional.zero(1), 0, 2.0, -4.0) == 2.0
    assert prox_phi_node(ConvexFunctional.obstacle(np.zeros(1)), 0, 1.0, 3.0) == 0.0
    fr = ConvexFunctional.friction(np.ones(1))
    assert prox_phi_node(fr, 0, 1.0, -0.5) == 0.0
    assert prox_phi_node(fr, 0, 1.0, -2.0) == 1.0
    assert _scalar_min(fr, 0, 1.0, -0.5) == pytest.approx(0.0, abs=1e-8)
    assert _scalar_min(fr, 0, 1.0, -2.0) == pytest.approx(1.0, abs=1e-8)


def test_prox_rejects_nonpositive_q():
    with pytest.raises(ValueError):
        prox_phi_node(ConvexFunctional.zero(1), 0, 0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["zero", "obstacle", "friction"]), st.floats(0.1, 10), st.floats(-10, 10),
       st.floats(-2, 2), st.floats(0, 3))
def test_prox_matches_scalar_minimizer(kind, q, r, lb, wt):
    phi = {"zero": ConvexFunctional.zero(1), "obstacle": ConvexFunctional.obstacle([lb]),
           "friction": ConvexFunctional.friction([wt])}[kind]
    x = prox_phi_node(phi, 0, q, r)
    assert x == pytest.approx(_scalar_min(phi, 0, q, r), rel=1e-7, abs=1e-6)

    def obj(y):
        return 0.5 * q * y * y + r * y + phi_eval(phi, np.array([y]))

    for d in (1e-6, -1e-6):
        assert obj(x) <= obj(x + d) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["zero", "obstacle", "friction"]), vec(5), vec(5), vec(5))
def test_convexity_midpoint(kind, a, x, y):
    phi = {"zero": ConvexFunctional.zero(5), "obstacle": ConvexFunctional.obstacle(a / 10),
           "friction": ConvexFunctional.friction(np.abs(a))}[kind]
    x, y = phi.project(x), phi.project(y)
    assert phi_eval(phi, 0.5 * (x + y)) <= 0.5 * phi_eval(phi, x) + 0.5 * phi_eval(phi, y) + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["zero", "obstacle", "friction"]), vec(5), vec(5), vec(5))
def test_subgradient_inequality(kind, a, u, v):
    g, _, _ = build(ProblemSpec("friction_neumann_1d", resolution=(5,)))
    phi = {"zero": ConvexFunctional.zero(5), "obstacle": ConvexFunctional.obstacle(a / 10),
           "friction": ConvexFunctional.friction(np.abs(a))}[kind]
    u, v = phi.project(u), phi.project(v)
    s = phi.subgradient(u, g.mass_diag)
    lhs = phi_eval(phi, v) - phi_eval(phi, u)
    assert lhs >= s @ g.mass @ (v - u) - 1e-9 * (1 + abs(lhs))


# -- convection ----------------------------------------------------------------

def test_convection_zero_flag():
    op = ConvectionOperator.null(3)
    assert op.zero
    np.testing.assert_array_equal(convection_apply(op, np.ones(3), np.arange(3.0)), np.zeros(3))


def test_convection_hand_stencil():
    _, _, op = build(ProblemSpec("obstacle_cd_1d", resolution=(3,), convection_coeff=(1.0,)))
    h = 0.25
    out = convection_apply(op, np.ones(3), np.array([0.0, 1.0, 0.0]))
    # node i: m_i * (c w_i) * (u_i - u_{i-1}) / h with m_i = h
    expected = h * np.array([0.0 - 0.0, 1.0 - 0.0, 0.0 - 1.0]) / h
    np.testing.assert_allclose(out, expected)
    assert not np.any(convection_apply(op, np.zeros(3), np.ones(3)))


def test_convection_dimension_mismatch():
    _, _, op = build(ProblemSpec("obstacle_cd_1d", resolution=(3,), convection_coeff=(1.0,)))
    with pytest.raises(ValueError):
        convection_apply(op, np.ones(2), np.ones(3))


@settings(max_examples=60, deadline=None)
@given(vec(4), vec(4), vec(4), vec(4), st.floats(-3, 3))
def test_tensor_trilinear_linear_in_each_slot(w1, w2, u, v, alpha):
    T = np.arange(64.0).reshape(4, 4, 4) % 7 - 3
    op = ConvectionOperator.from_tensor(T)
    scale = 1 + np.abs(w1).max() * np.abs(w2).max() * np.abs(u).max() * np.abs(v).max() * 200
    lhs = op.trilinear(alpha * w1 + w2, u, v)
    rhs = alpha * op.trilinear(w1, u, v) + op.trilinear(w2, u, v)
    assert lhs == pytest.approx(rhs, abs=1e-12 * scale)
    lhs = op.trilinear(w1, alpha * u + w2, v)
    rhs = alpha * op.trilinear(w1, u, v) + op.trilinear(w1, w2, v)
    assert lhs == pytest.approx(rhs, abs=1e-12 * scale)


@settings(max_examples=60, deadline=None)
@given(vec(6), vec(6), vec(6), st.floats(0, 3))
def test_upwind_linear_within_sign_orthant(w, u, v, alpha):
    _, _, op = build(ProblemSpec("obstacle_cd_1d", resolution=(6,), convection_coeff=(1.3,)))
    w1 = np.abs(w) * np.sign(np.arange(6) % 2 - 0.5)
    w2 = 0.5 * w1
    np.testing.assert_allclose(op.assemble(alpha * w1 + w2), alpha * op.assemble(w1) + op.assemble(w2),
                               atol=1e-12 * (1 + np.abs(w1).max() * 10))
    # linear in u and v for any fixed w
    N = op.assemble(w)
    assert v @ N @ (alpha * u + v) == pytest.approx(alpha * (v @ N @ u) + v @ N @ v,
                                                    abs=1e-9 * (1 + np.abs(N).max() * 1e4))


@settings(max_examples=60, deadline=None)
@given(vec(7))
def test_upwind_sign_pattern(w):
    _, _, op = build(ProblemSpec("obstacle_cd_1d", resolution=(7,), convection_coeff=(0.7,)))
    N = op.assemble(w)
    off = N - np.diag(np.diag(N))
    assert np.all(off <= 0) and np.all(np.diag(N) >= 0)


# -- Young constants and ledger ---------------------------------------------------

def test_young_examples():
    led = ConstantsLedger(theta1=4, theta2=2, C_H1=1.0, C_H4=1.0)
    c1, _ = young_constants(led, 0.25)
    assert c1 == pytest.approx(6.75)
    _, c2 = young_constants(led, 0.5)
    assert c2 == pytest.approx(0.5)
    assert young_constants(ConstantsLedger(), 0.3) == (0.0, 0.0)
    assert young_constant(2.5, 1.0, 0.1) == 2.5
    with pytest.raises(ValueError):
        young_constants(led, 0.0)


@pytest.mark.parametrize("C,theta,eps", [(1.0, 4.0, 0.25), (1.0, 2.0, 0.5), (2.7, 3.0, 0.1), (0.3, 1.5, 2.0)])
def test_young_certifies_on_log_grid(C, theta, eps):
    c = young_constant(C, theta, eps)
    A, B = np.meshgrid(np.logspace(-6, 6, 100), np.logspace(-6, 6, 100))
    lhs = C * A ** (1 / theta) * B ** (1 - 1 / theta)
    rhs = c * A + eps * B
    assert np.all(rhs - lhs >= -1e-10 * np.maximum(1.0, rhs))
    # sharp: equality is attained where B/A = ((1 - 1/theta) / eps)^theta * (C / 1)^theta ...
    ratio = (rhs - lhs) / rhs
    assert ratio.min() < 1e-2


def test_ledger_derived_fields():
    led = ConstantsLedger(C_phi1=0.5, theta2=2.0)
    assert led.C_phi3 == pytest.approx(4 * 0.5 * 1.5)
    assert led.Mprime == pytest.approx(2 ** 3 * led.M)
    assert ConstantsLedger().M == 4.5


def test_ledger_M_assembly():
    led = ConstantsLedger(theta2=2.0, C_H4=3.0, C_reg=0.5, C_phi2=5.0)
    c_a = young_constant(3.0, 2.0, 1 / (16 * 0.5))
    c_b = young_constant(3.0, 2.0, 1 / (2 * 0.5))
    expected = max(4.5, 8 * c_a**2 + c_b**2 / 2, 25.0 / (2 * 0.25))
    assert led.M == pytest.approx(expected)


def test_ledger_roundtrip_and_provenance():
    led = ConstantsLedger(C_B=0.3).replace(C_H4=0.2, M_override=1.0)
    assert led.provenance["C_H4"] == "configured"
    back = ConstantsLedger.from_dict(led.to_dict())
    assert back.to_dict() == led.to_dict()


def test_ledger_validation():
    with pytest.raises(ValueError):
        ConstantsLedger(theta1=1.5)
    with pytest.raises(ValueError):
        ConstantsLedger(C_reg=0.0)

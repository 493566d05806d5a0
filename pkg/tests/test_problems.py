import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from rothevi.core import ConvexFunctional
from rothevi.oseen import oseen_matrix, vi_residual
from rothevi.problems import (
    PRESET_NAMES,
    ProblemSpec,
    build,
    make_problem,
    preset,
    preset_problem,
)


def test_obstacle_1d_hand_assembly():
    g, phi, op = build(ProblemSpec("obstacle_cd_1d", resolution=(3,)))
    h = 0.25
    np.testing.assert_allclose(g.mass, h * np.eye(3))
    np.testing.assert_allclose(g.stiffness, np.array([[8, -4, 0], [-4, 8, -4], [0, -4, 8]]))
    assert op.zero and phi.kind == "obstacle"


def test_friction_weights_on_endpoints():
    _, phi, _ = build(ProblemSpec("friction_neumann_1d", resolution=(3,), friction_weight=0.7))
    assert np.count_nonzero(phi.weights) == 2
    assert phi.weights[0] == phi.weights[-1] == 0.7


def test_friction_stiffness_is_coercive_neumann():
    g, _, _ = build(ProblemSpec("friction_neumann_1d", resolution=(5,), eps0=1.0))
    K = g.stiffness - g.mass
    np.testing.assert_allclose(K @ np.ones(5), 0.0, atol=1e-12)
    assert np.linalg.eigvalsh(g.stiffness_sym).min() > 0


def test_obstacle_2d_five_point_row():
    g, _, _ = build(ProblemSpec("obstacle_cd_2d", resolution=(4, 4), domain=((0, 1), (0, 1)),
                               convection_coeff=(0, 0)))
    assert g.dim == 16
    h = 0.2
    row = g.stiffness[5]  # interior node (1, 1)
    assert row[5] == pytest.approx(4.0)
    for nb in (4, 6, 1, 9):
        assert row[nb] == pytest.approx(-1.0)
    assert np.count_nonzero(row) == 5
    np.testing.assert_allclose(g.mass, h * h * np.eye(16))
    np.testing.assert_allclose(g.stiffness, g.stiffness.T)


def test_2d_one_row_reduces_to_1d():
    g2, _, _ = build(ProblemSpec("obstacle_cd_2d", resolution=(5, 1), domain=((0, 1), (0, 1)),
                                convection_coeff=(0, 0)))
    g1, _, _ = build(ProblemSpec("obstacle_cd_1d", resolution=(5,)))
    hx, hy = 1 / 6, 1 / 2
    # y-direction contributes the eliminated-neighbour diagonal 2 hx / hy
    np.testing.assert_allclose(g2.stiffness, hy * g1.stiffness + (2 * hx / hy) * np.eye(5))


@pytest.mark.parametrize("bad", [
    dict(kind="nope"),
    dict(kind="obstacle_cd_1d", resolution=(2,)),
    dict(kind="obstacle_cd_1d", diffusion=0.0),
    dict(kind="friction_neumann_1d", friction_weight=-1.0),
])
def test_invalid_spec(bad):
    with pytest.raises(ValueError):
        ProblemSpec(**bad)


def test_spec_roundtrip():
    spec = ProblemSpec("obstacle_cd_2d", resolution=(3, 4), domain=((0, 2), (0, 1)), convection_coeff=(1, -1))
    assert ProblemSpec.from_dict(spec.to_dict()) == spec


@settings(max_examples=60, deadline=None)
@given(st.one_of(st.just(0.0), st.floats(1e-6, 100.0)), st.lists(st.floats(-5, 5), min_size=9, max_size=9), st.floats(-3, 3))
def test_upwind_m_matrix(lam, w, c):
    g, _, op = build(ProblemSpec("obstacle_cd_1d", resolution=(9,), convection_coeff=(c,)))
    L = oseen_matrix(g, op, lam, np.array(w))
    off = L - np.diag(np.diag(L))
    assert np.all(off <= 1e-14)
    margin = np.diag(L) - np.abs(off).sum(axis=1)
    assert np.all(margin >= -1e-12)          # weakly dominant for every lambda
    assert margin[0] > 0 and margin[-1] > 0  # strictly at the boundary rows: irreducible
    if lam > 0:
        assert np.all(margin > 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_lumped_projection_is_clamp(v, lb):
    v, lb = np.array(v), np.array(lb)
    g, _, _ = build(ProblemSpec("obstacle_cd_1d", resolution=(6,)))
    phi = ConvexFunctional.obstacle(lb)
    res = minimize(lambda x: 0.5 * (x - v) @ g.mass @ (x - v), np.maximum(lb, 0.0) + 1.0,
                   jac=lambda x: g.mass @ (x - v), bounds=list(zip(lb, [None] * 6)),
                   method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12})
    np.testing.assert_allclose(phi.project(v), res.x, atol=1e-6)


def test_preset_names_and_errors():
    assert set(PRESET_NAMES) == {"linear_scalar", "obstacle_smoke_1d", "obstacle_converge_1d",
                                 "obstacle_2d_small", "friction_smoke", "lipschitz_compatible",
                                 "lipschitz_incompatible"}
    with pytest.raises(ValueError, match="linear_scalar"):
        preset("nope")


def test_linear_scalar_preset():
    spec, cfg = preset("linear_scalar")
    p = make_problem(spec)
    assert p.dim == 1 and p.phi.kind == "zero" and p.op.zero
    assert cfg.u0[0] == 1.0 and cfg.T == 1.0
    assert not np.any(cfg.load(0.3))


def test_obstacle_smoke_preset():
    spec, cfg = preset("obstacle_smoke_1d")
    p = make_problem(spec)
    x = p.nodes[:, 0]
    assert p.dim == 31 and spec.convection_coeff == (1.0,)
    np.testing.assert_allclose(cfg.u0, np.maximum(0.0, np.sin(2 * np.pi * x)))
    np.testing.assert_allclose(cfg.load(0.1), -8.0 * np.sin(np.pi * x))


def test_lipschitz_compatible_u0_is_stationary():
    p, cfg = preset_problem("lipschitz_compatible")
    f0 = cfg.load(0.0)
    assert vi_residual(p.gelfand, p.phi, p.op, 0.0, cfg.u0, cfg.u0, f0) <= 1e-10


def test_presets_deterministic():
    for name in PRESET_NAMES:
        a, b = preset(name), preset(name)
        assert a[0] == b[0]
        assert np.array_equal(a[1].u0, b[1].u0)

"""Discrete Gelfand triple, separable convex functionals, convection operators
and the constants ledger shared by the solvers and diagnostics."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ZERO, OBSTACLE, FRICTION = "zero", "obstacle", "friction"
_KIND_CODES = {ZERO: 0, OBSTACLE: 1, FRICTION: 2}


def _check_len(v: np.ndarray, dim: int, what: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != dim:
        raise ValueError(f"{what} has shape {v.shape}, expected ({dim},)")
    return v


@dataclass(frozen=True, eq=False)
class DiscreteGelfand:
    """Mass matrix (discrete H inner product) and stiffness matrix (discrete
    a(., .)) after boundary elimination.

    The V-norm is sqrt(v^T S_sym v). The W-norm is the H-norm of the discrete
    operator image M^{-1} S v combined with the V-norm.
    """

    mass: np.ndarray
    stiffness: np.ndarray

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        s = np.array(self.stiffness, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("mass must be a square matrix")
        if s.shape != m.shape:
            raise ValueError(f"stiffness shape {s.shape} != mass shape {m.shape}")
        scale = max(np.abs(m).max(), 1e-300)
        if np.abs(m - m.T).max() > 1e-12 * scale:
            raise ValueError("mass matrix is not symmetric")
        m.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "mass", m)
        object.__setattr__(self, "stiffness", s)
        sym = 0.5 * (s + s.T)
        sym.setflags(write=False)
        object.__setattr__(self, "stiffness_sym", sym)
        diag = np.diag(m)
        lumped = bool(np.count_nonzero(m - np.diag(diag)) == 0)
        object.__setattr__(self, "lumped", lumped)
        object.__setattr__(self, "mass_diag", diag.copy())

    @property
    def dim(self) -> int:
        return self.mass.shape[0]

    def h_inner(self, u, v) -> float:
        return float(u @ self.mass @ v)

    def h_norm(self, v) -> float:
        v = _check_len(v, self.dim)
        return math.sqrt(max(float(v @ self.mass @ v), 0.0))

    def v_norm(self, v) -> float:
        v = _check_len(v, self.dim)
        return math.sqrt(max(float(v @ self.stiffness_sym @ v), 0.0))

    def to_h(self, load: np.ndarray) -> np.ndarray:
        """Riesz representative in H of a dual (load) vector: M^{-1} load."""
        if self.lumped:
            return load / self.mass_diag
        return np.linalg.solve(self.mass, load)

    def w_norm(self, v) -> float:
        v = _check_len(v, self.dim)
        av = self.to_h(self.stiffness @ v)
        return math.sqrt(max(float(av @ self.mass @ av), 0.0) + self.v_norm(v) ** 2)

    def dual_h_norm(self, load) -> float:
        """H-norm of the H-representative of a load vector."""
        return self.h_norm(self.to_h(np.asarray(load, dtype=float)))


def norm_triple(g: DiscreteGelfand, v) -> tuple[float, float, float]:
    """Return (||v||_H, ||v||_V, ||v||_W)."""
    v = _check_len(v, g.dim)
    return g.h_norm(v), g.v_norm(v), g.w_norm(v)


@dataclass(frozen=True, eq=False)
class ConvexFunctional:
    """Separable convex functional on nodal vectors.

    ``zero``: identically 0. ``obstacle``: indicator of {v >= lower_bounds}
    (bounds may be -inf). ``friction``: sum_i weights_i |v_i|.
    """

    kind: str
    dim: int
    lower_bounds: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == OBSTACLE:
            lb = _check_len(self.lower_bounds, self.dim, "lower_bounds").copy()
            if np.any(np.isnan(lb)) or np.any(lb == np.inf):
                raise ValueError("lower bounds must be finite or -inf")
            lb.setflags(write=False)
            object.__setattr__(self, "lower_bounds", lb)
        if self.kind == FRICTION:
            w = _check_len(self.weights, self.dim, "weights").copy()
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("friction weights must be finite and nonnegative")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @classmethod
    def zero(cls, dim: int) -> ConvexFunctional:
        return cls(ZERO, dim)

    @classmethod
    def obstacle(cls, lower_bounds) -> ConvexFunctional:
        lb = np.asarray(lower_bounds, dtype=float)
        return cls(OBSTACLE, lb.shape[0], lower_bounds=lb)

    @classmethod
    def friction(cls, weights) -> ConvexFunctional:
        w = np.asarray(weights, dtype=float)
        return cls(FRICTION, w.shape[0], weights=w)

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    def bound_array(self) -> np.ndarray:
        if self.kind == OBSTACLE:
            return np.array(self.lower_bounds)
        return np.full(self.dim, -np.inf)

    def weight_array(self) -> np.ndarray:
        if self.kind == FRICTION:
            return np.array(self.weights)
        return np.zeros(self.dim)

    def project(self, v) -> np.ndarray:
        """Closest point of the effective domain (componentwise clamp)."""
        v = _check_len(v, self.dim)
        if self.kind == OBSTACLE:
            return np.maximum(v, self.lower_bounds)
        return v.copy()

    def subgradient(self, u, mass_diag) -> np.ndarray:
        """One element s of the subdifferential at u w.r.t. a lumped H inner
        product, i.e. phi(v) - phi(u) >= s^T M (v - u) for all v.

        Obstacle: 0 (always a member). Friction: weights * sign(u) / m.
        """
        u = _check_len(u, self.dim)
        if self.kind == FRICTION:
            return self.weights * np.sign(u) / np.asarray(mass_diag, dtype=float)
        return np.zeros(self.dim)


def phi_eval(phi: ConvexFunctional, v) -> float:
    """Value of the functional; +inf outside the obstacle set (strict test)."""
    v = _check_len(v, phi.dim)
    if phi.kind == ZERO:
        return 0.0
    if phi.kind == OBSTACLE:
        return 0.0 if bool(np.all(v >= phi.lower_bounds)) else math.inf
    return float(np.dot(phi.weights, np.abs(v)))


def prox_phi_node(phi: ConvexFunctional, i: int, q: float, r: float) -> float:
    """argmin_x  q x^2 / 2 + r x + phi_i(x)  for the i-th separable piece."""
    if not q > 0:
        raise ValueError(f"q must be positive, got {q}")
    if phi.kind == OBSTACLE:
        return max(float(phi.lower_bounds[i]), -r / q)
    if phi.kind == FRICTION:
        return math.copysign(max(0.0, abs(r) - float(phi.weights[i])), -r) / q
    return -r / q


@dataclass(frozen=True, eq=False)
class ConvectionOperator:
    """Navier-Stokes type bilinear term <B(w, u), v> = v^T N(w) u.

    ``assemble_fn`` maps a state w to the dim x dim matrix N(w).
    """

    dim: int
    assemble_fn: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "custom"

    @property
    def zero(self) -> bool:
        return self.assemble_fn is None

    @classmethod
    def null(cls, dim: int) -> ConvectionOperator:
        return cls(dim, None, "zero")

    @classmethod
    def from_tensor(cls, tensor) -> ConvectionOperator:
        """N(w) = sum_k w_k T[k]; exactly bilinear."""
        t = np.array(tensor, dtype=float)
        t.setflags(write=False)
        return cls(t.shape[1], lambda w: np.tensordot(w, t, axes=1), "tensor")

    def assemble(self, w) -> np.ndarray:
        w = _check_len(w, self.dim, "w")
        if self.zero:
            return np.zeros((self.dim, self.dim))
        return self.assemble_fn(w)

    def trilinear(self, w, u, v) -> float:
        return float(np.asarray(v, dtype=float) @ convection_apply(self, w, u))


def convection_apply(op: ConvectionOperator, w, u) -> np.ndarray:
    """N(w) u; the trilinear value <B(w,u),v> is v^T of the result."""
    w = _check_len(w, op.dim, "w")
    u = _check_len(u, op.dim, "u")
    if op.zero:
        return np.zeros(op.dim)
    return op.assemble(w) @ u


def young_constant(C: float, theta: float, eps: float) -> float:
    """Smallest c with C a^{1/theta} b^{1-1/theta} <= c a + eps b, a, b >= 0."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if theta == 1:
        return float(C)
    if theta < 1:
        raise ValueError("theta must be >= 1")
    if C == 0:
        return 0.0
    return (1.0 / theta) * C**theta * ((1.0 - 1.0 / theta) / eps) ** (theta - 1.0)


CONFIGURED, ESTIMATED = "configured", "estimated"
_LEDGER_KEYS = ("theta1", "theta2", "C_B", "C_H1", "C_H3", "C_H4", "C_reg", "C_phi1", "C_phi2")


@dataclass(frozen=True)
class ConstantsLedger:
    """Hypothesis constants with provenance, plus the derived quantities of
    the a priori analysis (C_phi3, M, M', and beta once computed)."""

    theta1: float = 4.0
    theta2: float = 2.0
    C_B: float = 0.0
    C_H1: float = 0.0
    C_H3: float = 0.0
    C_H4: float = 0.0
    C_reg: float = 1.0
    C_phi1: float = 0.0
    C_phi2: float = 0.0
    provenance: dict = field(default_factory=lambda: {k: CONFIGURED for k in _LEDGER_KEYS})
    M_override: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.theta1 < 2:
            raise ValueError("theta1 must be >= 2")
        if self.theta2 < 1:
            raise ValueError("theta2 must be >= 1")
        if not self.C_reg > 0:
            raise ValueError("C_reg must be positive")
        for k in ("C_B", "C_H1", "C_H3", "C_H4", "C_phi1", "C_phi2"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be nonnegative")

    @property
    def C_phi3(self) -> float:
        return 4.0 * self.C_phi1 * (self.C_phi1 + 1.0)

    def young(self, eps: float) -> tuple[float, float]:
        return young_constants(self, eps)

    @property
    def M(self) -> float:
        """Coefficient of the one-step a priori estimate: the largest of the
        three coefficients (f-term, nonlinear term, constant term)."""
        if self.M_override is not None:
            return float(self.M_override)
        c_small = young_constant(self.C_H4, self.theta2, 1.0 / (16.0 * self.C_reg))
        c_half = young_constant(self.C_H4, self.theta2, 1.0 / (2.0 * self.C_reg))
        return max(
            4.5,
            8.0 * c_small**2 + 0.5 * c_half**2,
            self.C_phi2**2 / (2.0 * self.C_reg**2),
        )

    @property
    def Mprime(self) -> float:
        return 2.0 ** (self.theta2 + 1.0) * self.M

    def replace(self, **changes) -> ConstantsLedger:
        prov = dict(self.provenance)
        for k in changes:
            if k in _LEDGER_KEYS and "provenance" not in changes:
                prov[k] = CONFIGURED
        changes.setdefault("provenance", prov)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in _LEDGER_KEYS}
        out.update(
            C_phi3=self.C_phi3,
            M=self.M,
            Mprime=self.Mprime,
            beta=self.beta,
            M_override=self.M_override,
            provenance=dict(self.provenance),
        )
        return out

    @classmethod
    def from_dict(cls, d: dict) -> ConstantsLedger:
        kw = {k: float(d[k]) for k in _LEDGER_KEYS if k in d}
        if "provenance" in d:
            kw["provenance"] = dict(d["provenance"])
        if d.get("M_override") is not None:
            kw["M_override"] = float(d["M_override"])
        if d.get("beta") is not None:
            kw["beta"] = float(d["beta"])
        return cls(**kw)


def young_constants(ledger: ConstantsLedger, eps: float) -> tuple[float, float]:
    """(C_{theta1,eps}, C_{theta2,eps}) for the splits of (H1) and (H4)."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return (
        young_constant(ledger.C_H1, ledger.theta1, eps),
        young_constant(ledger.C_H4, ledger.theta2, eps),
    )

"""Concrete instantiations on tensor grids: obstacle problems for
convection-diffusion in 1D and 2D, a 1D friction-type Neumann problem, and a
scalar linear ODE used for closed-form checks."""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import ConstantsLedger, ConvectionOperator, ConvexFunctional, DiscreteGelfand

KINDS = ("obstacle_cd_1d", "obstacle_cd_2d", "friction_neumann_1d", "linear_scalar")


@dataclass(frozen=True)
class ProblemSpec:
    """Config surface for :func:`build`.

    ``resolution`` counts interior nodes per dimension for obstacle kinds
    (Dirichlet nodes are eliminated) and all nodes for the friction kind.
    The convection velocity at node i is ``convection_coeff * w_i``.
    """

    kind: str
    resolution: tuple = (31,)
    domain: tuple = ((0.0, 1.0),)
    convection_coeff: tuple = (0.0,)
    diffusion: float = 1.0
    obstacle_level: float = 0.0
    friction_weight: float = 1.0
    eps0: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        res = self.resolution
        res = (int(res),) if np.isscalar(res) else tuple(int(r) for r in res)
        dom = tuple(tuple(float(x) for x in d) for d in self.domain)
        c = (float(self.convection_coeff),) if np.isscalar(self.convection_coeff) \
            else tuple(float(x) for x in self.convection_coeff)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "domain", dom)
        object.__setattr__(self, "convection_coeff", c)
        if self.kind == "linear_scalar":
            return
        d = self.ndim
        if len(res) != d or len(dom) != d or len(c) != d:
            raise ValueError(f"{self.kind} needs resolution, domain and convection_coeff of length {d}")
        if self.kind == "obstacle_cd_2d":
            # a single row is allowed so the grid can degenerate to 1D
            if min(res) < 1 or max(res) < 3:
                raise ValueError("2D resolution needs >= 3 nodes along one axis and >= 1 along the other")
        elif min(res) < 3:
            raise ValueError("resolution must be >= 3")
        if any(b <= a for a, b in dom):
            raise ValueError("domain intervals must have positive length")
        if not self.diffusion > 0:
            raise ValueError("diffusion must be positive")
        if self.friction_weight < 0:
            raise ValueError("friction weight must be nonnegative")
        if self.kind == "friction_neumann_1d" and not self.eps0 > 0:
            raise ValueError("eps0 must be positive")

    @property
    def ndim(self) -> int:
        return 2 if self.kind == "obstacle_cd_2d" else 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ProblemSpec:
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Problem:
    """Assembled problem: Gelfand triple, functional, convection, constants."""

    gelfand: DiscreteGelfand
    phi: ConvexFunctional
    op: ConvectionOperator
    ledger: ConstantsLedger = field(default_factory=ConstantsLedger)
    spec: ProblemSpec | None = None
    nodes: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.gelfand.dim

    def with_ledger(self, ledger: ConstantsLedger) -> Problem:
        return Problem(self.gelfand, self.phi, self.op, ledger, self.spec, self.nodes)


def _tridiag(n: int) -> np.ndarray:
    return 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)


def upwind_1d(c: float, mass_diag: np.ndarray, h: float, dirichlet: bool) -> ConvectionOperator:
    """First-order upwind transport c*w_i * du/dx, weighted by the lumped mass.

    Row i uses (u_i - u_{i-1})/h when c*w_i > 0 and (u_{i+1} - u_i)/h otherwise.
    Missing neighbours are the Dirichlet value 0 (``dirichlet``) or u_i itself
    (zero-gradient outflow for the Neumann kind).
    """
    n = mass_diag.shape[0]
    if c == 0.0:
        return ConvectionOperator.null(n)
    idx = np.arange(n)

    def assemble(w):
        a = c * w * mass_diag / h
        ap, am = np.maximum(a, 0.0), np.maximum(-a, 0.0)
        N = np.zeros((n, n))
        N[idx[1:], idx[1:] - 1] = -ap[1:]
        N[idx[:-1], idx[:-1] + 1] = -am[:-1]
        diag = ap + am
        if not dirichlet:
            diag = diag.copy()
            diag[0] -= ap[0]
            diag[-1] -= am[-1]
        N[idx, idx] = diag
        return N

    return ConvectionOperator(n, assemble, "upwind_1d")


def upwind_2d(c: tuple, nx: int, ny: int, hx: float, hy: float) -> ConvectionOperator:
    """Upwind transport on an nx-by-ny interior grid, x index fastest,
    homogeneous Dirichlet values outside."""
    n = nx * ny
    cx, cy = c
    if cx == 0.0 and cy == 0.0:
        return ConvectionOperator.null(n)
    m = hx * hy
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()
    k = np.arange(n)

    def assemble(w):
        N = np.zeros((n, n))
        for coeff, h, pos, stride, size in ((cx, hx, ii, 1, nx), (cy, hy, jj, nx, ny)):
            if coeff == 0.0:
                continue
            a = coeff * w * m / h
            ap, am = np.maximum(a, 0.0), np.maximum(-a, 0.0)
            N[k, k] += ap + am
            lo = pos > 0
            N[k[lo], k[lo] - stride] -= ap[lo]
            hi = pos < size - 1
            N[k[hi], k[hi] + stride] -= am[hi]
        return N

    return ConvectionOperator(n, assemble, "upwind_2d")


def build(spec: ProblemSpec) -> tuple[DiscreteGelfand, ConvexFunctional, ConvectionOperator]:
    """Assemble (Gelfand triple, functional, convection) for a spec."""
    g, phi, op, _ = _assemble(spec)
    return g, phi, op


def _assemble(spec: ProblemSpec):
    if spec.kind == "linear_scalar":
        g = DiscreteGelfand(np.eye(1), np.eye(1))
        return g, ConvexFunctional.zero(1), ConvectionOperator.null(1), np.zeros((1, 1))

    D = spec.diffusion
    if spec.kind == "obstacle_cd_1d":
        (n,), ((a, b),) = spec.resolution, spec.domain
        h = (b - a) / (n + 1)
        x = a + h * np.arange(1, n + 1)
        mass = h * np.eye(n)
        S = (D / h) * _tridiag(n)
        g = DiscreteGelfand(mass, S)
        op = upwind_1d(spec.convection_coeff[0], np.diag(mass), h, dirichlet=True)
        phi = ConvexFunctional.obstacle(np.full(n, spec.obstacle_level))
        return g, phi, op, x[:, None]

    if spec.kind == "obstacle_cd_2d":
        (nx, ny), ((ax, bx), (ay, by)) = spec.resolution, spec.domain
        hx, hy = (bx - ax) / (nx + 1), (by - ay) / (ny + 1)
        S = D * (np.kron(hy * np.eye(ny), _tridiag(nx) / hx)
                 + np.kron(_tridiag(ny) / hy, hx * np.eye(nx)))
        n = nx * ny
        g = DiscreteGelfand(hx * hy * np.eye(n), S)
        op = upwind_2d(spec.convection_coeff, nx, ny, hx, hy)
        phi = ConvexFunctional.obstacle(np.full(n, spec.obstacle_level))
        X, Y = np.meshgrid(ax + hx * np.arange(1, nx + 1), ay + hy * np.arange(1, ny + 1), indexing="xy")
        return g, phi, op, np.column_stack([X.ravel(), Y.ravel()])

    # friction_neumann_1d
    (n,), ((a, b),) = spec.resolution, spec.domain
    h = (b - a) / (n - 1)
    x = np.linspace(a, b, n)
    md = np.full(n, h)
    md[0] = md[-1] = h / 2
    K = _tridiag(n)
    K[0, 0] = K[-1, -1] = 1.0
    mass = np.diag(md)
    S = (D / h) * K + spec.eps0 * mass
    g = DiscreteGelfand(mass, S)
    op = upwind_1d(spec.convection_coeff[0], md, h, dirichlet=False)
    wts = np.zeros(n)
    wts[0] = wts[-1] = spec.friction_weight  # boundary measure of a 1D endpoint is 1
    return g, ConvexFunctional.friction(wts), op, x[:, None]


def make_problem(spec: ProblemSpec, ledger: ConstantsLedger | None = None) -> Problem:
    g, phi, op, nodes = _assemble(spec)
    return Problem(g, phi, op, ledger or ConstantsLedger(), spec, nodes)


# ---------------------------------------------------------------------------
# presets

PRESET_NAMES = (
    "linear_scalar",
    "obstacle_smoke_1d",
    "obstacle_converge_1d",
    "obstacle_2d_small",
    "friction_smoke",
    "lipschitz_compatible",
    "lipschitz_incompatible",
)

ESTIMATE_SAMPLES = 200
ESTIMATE_SEED = 20240101


@functools.lru_cache(maxsize=None)
def estimated_ledger(spec: ProblemSpec) -> ConstantsLedger:
    """Seeded empirical ledger for a spec (cached; estimation is deterministic)."""
    from .diagnostics import estimate_constants

    return estimate_constants(make_problem(spec), ESTIMATE_SAMPLES, ESTIMATE_SEED)


def preset(name: str):
    """Return (ProblemSpec, RotheConfig) for a named preset."""
    from .rothe import ConstantLoad, RotheConfig, SeparableLoad, TemporalProfile

    if name not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")

    if name == "linear_scalar":
        spec = ProblemSpec("linear_scalar", resolution=(1,), domain=((0.0, 1.0),), convection_coeff=(0.0,))
        # no convection and no functional: the energy bound is global, so run to T
        return spec, RotheConfig(dt=1e-3, T=1.0, u0=np.ones(1), load=ConstantLoad(np.zeros(1)), horizon="T")

    if name == "obstacle_smoke_1d":
        spec = ProblemSpec("obstacle_cd_1d", resolution=(31,), convection_coeff=(1.0,))
        x = make_problem(spec).nodes[:, 0]
        return spec, RotheConfig(
            dt=0.01, T=0.2, u0=np.maximum(0.0, np.sin(2 * np.pi * x)),
            load=ConstantLoad(-8.0 * np.sin(np.pi * x)),
            enforce_admissibility=False, horizon="T",
        )

    if name == "obstacle_converge_1d":
        spec = ProblemSpec("obstacle_cd_1d", resolution=(31,), convection_coeff=(0.5,))
        x = make_problem(spec).nodes[:, 0]
        amp = 0.001
        return spec, RotheConfig(
            dt=1 / 40, T=0.5, u0=amp * np.sin(np.pi * x) ** 2,
            load=SeparableLoad(amp * 40.0 * np.sin(3 * np.pi * x), TemporalProfile("const")),
        )

    if name == "obstacle_2d_small":
        spec = ProblemSpec("obstacle_cd_2d", resolution=(4, 4), domain=((0.0, 1.0), (0.0, 1.0)),
                           convection_coeff=(1.0, 0.5))
        p = make_problem(spec)
        x, y = p.nodes[:, 0], p.nodes[:, 1]
        amp = 0.001
        return spec, RotheConfig(
            dt=1 / 40, T=0.25, u0=amp * np.sin(np.pi * x) * np.sin(np.pi * y),
            load=ConstantLoad(-amp * 20.0 * np.sin(2 * np.pi * x) * np.sin(np.pi * y)),
        )

    if name == "friction_smoke":
        spec = ProblemSpec("friction_neumann_1d", resolution=(21,), convection_coeff=(1.0,),
                           friction_weight=0.05)
        x = make_problem(spec).nodes[:, 0]
        amp = 0.001
        return spec, RotheConfig(
            dt=1 / 40, T=0.25, u0=amp * np.cos(np.pi * x),
            load=SeparableLoad(amp * 10.0 * np.cos(2 * np.pi * x), TemporalProfile("sin", omega=2 * np.pi)),
        )

    if name == "lipschitz_compatible":
        spec = ProblemSpec("obstacle_cd_1d", resolution=(31,), convection_coeff=(0.5,))
        p = make_problem(spec)
        x = p.nodes[:, 0]
        amp = 0.001
        f0 = amp * 40.0 * np.sin(3 * np.pi * x)
        u0 = stationary_state(p, f0)
        return spec, RotheConfig(
            dt=1 / 40, T=0.5, u0=u0,
            load=SeparableLoad(f0, TemporalProfile("linear", a=1.0, b=-1.0)),
        )

    # lipschitz_incompatible: infeasible square wave projected onto the constraint
    spec = ProblemSpec("obstacle_cd_1d", resolution=(31,), convection_coeff=(0.5,))
    x = make_problem(spec).nodes[:, 0]
    amp = 0.001
    u0 = np.maximum(0.0, amp * np.sign(np.sin(2 * np.pi * x)))
    return spec, RotheConfig(
        dt=1 / 40, T=0.5, u0=u0,
        load=SeparableLoad(amp * 40.0 * np.sin(3 * np.pi * x), TemporalProfile("linear", a=1.0, b=-1.0)),
    )


def stationary_state(problem: Problem, f, tol: float = 1e-12, max_picard: int = 200) -> np.ndarray:
    """Fixed point u = S(u) of the stationary problem with convection frozen at
    u: a(u, v-u) + <B(u,u), v-u> + phi(v) - phi(u) >= (f, v-u)."""
    from .oseen import solve_stationary_vi

    u = np.zeros(problem.dim)
    for _ in range(max_picard):
        sol = solve_stationary_vi(problem.gelfand, problem.phi, problem.op, 0.0, u, f,
                                  tol=tol, max_iter=200_000, u_init=u)
        if not sol.certified:
            raise RuntimeError("stationary solve did not certify")
        if problem.gelfand.h_norm(sol.u - u) <= tol:
            return sol.u
        u = sol.u
    raise RuntimeError("Picard iteration for the stationary state did not converge")


def preset_problem(name: str):
    """(Problem with its estimated ledger, RotheConfig) for a preset."""
    spec, cfg = preset(name)
    return make_problem(spec, estimated_ledger(spec)), cfg

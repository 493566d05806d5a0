"""Semi-implicit Rothe scheme

    ((u^n - u^{n-1})/dt, v - u^n) + a(u^n, v - u^n) + <B(u^{n-1}, u^n), v - u^n>
        + phi(v) - phi(u^n) >= (f^n, v - u^n),

with the existence horizon T*, the admissible step bound, the piecewise
interpolants of the discrete solution and refinement studies.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import _check_len, phi_eval
from .oseen import DEFAULT_TOL, solve_stationary_vi

log = logging.getLogger(__name__)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
_GL3_X, _GL3_W = np.polynomial.legendre.leggauss(3)


# ---------------------------------------------------------------------------
# loads


@dataclass(frozen=True)
class TemporalProfile:
    """Scalar time profile: ``const`` (1), ``linear`` (a + b t),
    ``sin`` (sin(omega t + phase)) or ``table`` (piecewise constant:
    values[k] on (times[k], times[k+1]], values[-1] beyond the last time)."""

    kind: str = "const"
    a: float = 1.0
    b: float = 0.0
    omega: float = 1.0
    phase: float = 0.0
    times: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("const", "linear", "sin", "table"):
            raise ValueError(f"unknown temporal profile {self.kind!r}")
        if self.kind == "table":
            if len(self.times) != len(self.values) or not self.times:
                raise ValueError("table profile needs equal-length nonempty times and values")
            object.__setattr__(self, "times", tuple(float(t) for t in self.times))
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def piecewise_constant(self) -> bool:
        return self.kind in ("const", "table")

    def __call__(self, t: float) -> float:
        if self.kind == "const":
            return 1.0
        if self.kind == "linear":
            return self.a + self.b * t
        if self.kind == "sin":
            return math.sin(self.omega * t + self.phase)
        k = int(np.searchsorted(self.times, t, side="left")) - 1
        return self.values[max(k, 0)]

    def breakpoints(self) -> tuple:
        return self.times if self.kind == "table" else ()

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "linear":
            d.update(a=self.a, b=self.b)
        elif self.kind == "sin":
            d.update(omega=self.omega, phase=self.phase)
        elif self.kind == "table":
            d.update(times=list(self.times), values=list(self.values))
        return d


class Load:
    """Time-dependent H-valued load f(t)."""

    piecewise_constant = False

    def __call__(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def breakpoints(self) -> tuple:
        return ()


@dataclass(frozen=True, eq=False)
class ConstantLoad(Load):
    value: np.ndarray
    piecewise_constant = True

    def __post_init__(self):
        object.__setattr__(self, "value", np.array(self.value, dtype=float))

    def __call__(self, t):
        return self.value.copy()

    def to_dict(self):
        return {"type": "constant", "value": self.value.tolist()}


@dataclass(frozen=True, eq=False)
class SeparableLoad(Load):
    spatial: np.ndarray
    profile: TemporalProfile = field(default_factory=TemporalProfile)

    def __post_init__(self):
        object.__setattr__(self, "spatial", np.array(self.spatial, dtype=float))

    @property
    def piecewise_constant(self):
        return self.profile.piecewise_constant

    def __call__(self, t):
        return self.profile(t) * self.spatial

    def breakpoints(self):
        return self.profile.breakpoints()

    def to_dict(self):
        return {"type": "separable", "spatial": self.spatial.tolist(), "profile": self.profile.to_dict()}


@dataclass(frozen=True, eq=False)
class TabulatedLoad(Load):
    """Piecewise constant in time: values[k] holds on (times[k], times[k+1]],
    the last row beyond the final stamp and values[0] up to times[0]."""

    times: np.ndarray
    values: np.ndarray
    piecewise_constant = True

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != t.shape[0]:
            raise ValueError("tabulated load needs one vector per time stamp")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time stamps must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        k = int(np.searchsorted(self.times, t, side="left")) - 1
        return self.values[max(k, 0)].copy()

    def breakpoints(self):
        return tuple(self.times)

    def to_dict(self):
        return {"type": "tabulated", "times": self.times.tolist(), "values": self.values.tolist()}


def load_from_dict(d: dict) -> Load:
    kind = d.get("type")
    if kind == "constant":
        return ConstantLoad(d["value"])
    if kind == "separable":
        return SeparableLoad(d["spatial"], TemporalProfile(**d.get("profile", {"kind": "const"})))
    if kind == "tabulated":
        return TabulatedLoad(d["times"], d["values"])
    raise ValueError(f"unknown load type {kind!r}")


def _panels(a: float, b: float, load: Load) -> np.ndarray:
    pts = [a, b] + [t for t in load.breakpoints() if a < t < b]
    return np.unique(pts)


def _integrate(fn, a: float, b: float, load: Load):
    """5-point Gauss-Legendre on each smooth panel of [a, b]."""
    total = 0.0
    edges = _panels(a, b, load)
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        for x, wq in zip(_GL_X, _GL_W):
            total = total + wq * half * fn(mid + half * x)
    return total


def _mean(load: Load, a: float, b: float) -> np.ndarray:
    if load.piecewise_constant:
        edges = _panels(a, b, load)
        total = sum((hi - lo) * load(0.5 * (lo + hi)) for lo, hi in zip(edges[:-1], edges[1:]))
    else:
        total = _integrate(load, a, b, load)
    return np.asarray(total, dtype=float) / (b - a)


def average_load(load: Load, n: int, dt: float) -> np.ndarray:
    """Mean of the load over ((n-1) dt, n dt]; exact for piecewise constant
    profiles, 5-point Gauss-Legendre otherwise."""
    if n < 1:
        raise ValueError("step index must be >= 1")
    return _mean(load, (n - 1) * dt, n * dt)


def load_l2_sq(load: Load, g, T: float, dt: float) -> float:
    """||f||^2_{L2(0,T;H)} taken as the larger of the step-averaged sum and the
    Gauss-Legendre integral (kept conservative for the beta condition)."""
    N = max(1, int(math.ceil(T / dt - 1e-12)))
    step_sum = 0.0
    quad = 0.0
    for n in range(1, N + 1):
        a, b = (n - 1) * dt, min(n * dt, T)
        if b <= a:
            break
        fn = _mean(load, a, b)
        step_sum += g.h_norm(fn) ** 2 * (b - a)
        quad += _integrate(lambda t: g.h_norm(load(t)) ** 2, a, b, load)
    return float(max(step_sum, quad))


# ---------------------------------------------------------------------------
# constants of the a priori analysis


def compute_beta(E0: float, F: float, theta2: float, Mprime: float) -> float:
    """Smallest beta > 0 with 4 M' (E0 + beta)^theta2 F <= beta^(theta2 + 1)."""
    if E0 < 0 or F < 0 or Mprime < 0 or theta2 < 1:
        raise ValueError("compute_beta needs E0 >= 0, F >= 0, M' >= 0, theta2 >= 1")
    if F == 0 or Mprime == 0:
        return 0.0
    c = 4.0 * Mprime * F

    def h(beta):
        return beta ** (theta2 + 1) - c * (E0 + beta) ** theta2

    lo, hi = 0.0, 1.0
    while h(hi) < 0:
        lo, hi = hi, 2.0 * hi
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if h(mid) < 0:
            lo = mid
        else:
            hi = mid
    return hi


def compute_T_star(E0: float, beta: float, theta2: float, Mprime: float, T: float) -> float:
    """min{ [8 M' (E0 + beta)^theta2 theta2]^{-1}, T }."""
    base = E0 + beta
    if base == 0 or Mprime == 0:
        return float(T)
    return min(1.0 / (8.0 * Mprime * base**theta2 * theta2), float(T))


def admissible_dt_bound(ledger, E0: float, beta: float, v_bound_sq: float | None = None) -> float:
    """Largest dt with 1/dt >= C_{theta1,1/4} 2^theta1 V^theta1 + 1/2, where V
    is the squared V-norm bound 2^{1+1/theta2}(E0 + beta) unless given."""
    t1, t2 = ledger.theta1, ledger.theta2
    c1, _ = ledger.young(0.25)
    if v_bound_sq is None:
        v_bound_sq = 2.0 ** (1.0 + 1.0 / t2) * (E0 + beta)
    return 1.0 / (c1 * 2.0**t1 * v_bound_sq**t1 + 0.5)


def initial_energy(problem, u0) -> float:
    """||u0||_V^2 + 2 phi(u0) + C_phi3 / 2."""
    g = problem.gelfand
    return g.v_norm(u0) ** 2 + 2.0 * phi_eval(problem.phi, u0) + 0.5 * problem.ledger.C_phi3


# ---------------------------------------------------------------------------
# the scheme


@dataclass(frozen=True, eq=False)
class RotheConfig:
    """Time discretization settings.

    ``horizon='T_star'`` steps n = 1..ceil(T*/dt). ``horizon='T'`` is an
    exploration mode that steps to the requested T; T* is still computed and
    the a priori guarantees only cover steps inside it.
    """

    dt: float
    T: float
    u0: np.ndarray
    load: Load
    enforce_admissibility: bool = True
    horizon: str = "T_star"
    tol: float = DEFAULT_TOL
    max_iter: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "u0", np.array(self.u0, dtype=float))
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("dt and T must be positive")
        if self.dt > self.T:
            raise ValueError("dt must not exceed T")
        if self.horizon not in ("T_star", "T"):
            raise ValueError("horizon must be 'T_star' or 'T'")

    def replace(self, **kw) -> RotheConfig:
        d = {k: getattr(self, k) for k in
             ("dt", "T", "u0", "load", "enforce_admissibility", "horizon", "tol", "max_iter")}
        d.update(kw)
        return RotheConfig(**d)

    def to_dict(self) -> dict:
        return {
            "dt": self.dt, "T": self.T, "u0": self.u0.tolist(), "load": self.load.to_dict(),
            "enforce_admissibility": self.enforce_admissibility, "horizon": self.horizon,
            "tol": self.tol, "max_iter": self.max_iter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RotheConfig:
        d = dict(d)
        d["load"] = load_from_dict(d["load"])
        return cls(**d)


class SolverFailure(RuntimeError):
    def __init__(self, step: int, residual: float):
        super().__init__(f"stationary solve did not certify at step {step} (residual {residual:.3e})")
        self.step = step
        self.residual = residual


class AdmissibilityError(ValueError):
    pass


@dataclass(eq=False)
class Trajectory:
    problem: object
    dt: float
    states: np.ndarray            # (N+1, dim)
    loads: np.ndarray             # (N+1, dim); row 0 is unused (zeros)
    norm_H: np.ndarray
    norm_V: np.ndarray
    norm_W: np.ndarray
    phi: np.ndarray
    delta_H: np.ndarray           # ||(u^n - u^{n-1})/dt||_H; entry 0 is 0
    residual: np.ndarray
    iterations: np.ndarray
    T_star: float
    beta: float
    E0: float
    F: float
    dt_max: float
    T: float
    end: float = math.inf         # T* or T, depending on the horizon mode
    h1_bound: float = math.nan
    h1_slacks: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)

    @property
    def horizon(self) -> float:
        """End of the interval used for distance computations."""
        return min(self.end, self.N * self.dt)

    def delta(self, n: int) -> np.ndarray:
        return (self.states[n] - self.states[n - 1]) / self.dt


def rothe_run(problem, config: RotheConfig) -> Trajectory:
    """Run the semi-implicit scheme; each step is one stationary Oseen solve
    with lambda = 1/dt, w = u^{n-1} and rhs = f^n + u^{n-1}/dt."""
    g, phi, op, ledger = problem.gelfand, problem.phi, problem.op, problem.ledger
    u0 = _check_len(config.u0, g.dim, "u0")
    if not math.isfinite(phi_eval(phi, u0)):
        raise ValueError("initial datum is not in the domain of phi")
    dt = float(config.dt)

    E0 = initial_energy(problem, u0)
    F = load_l2_sq(config.load, g, config.T, dt)
    beta = compute_beta(E0, F, ledger.theta2, ledger.Mprime)
    T_star = compute_T_star(E0, beta, ledger.theta2, ledger.Mprime, config.T)
    dt_max = admissible_dt_bound(ledger, E0, beta)
    if config.enforce_admissibility and dt > dt_max:
        raise AdmissibilityError(f"dt = {dt:g} exceeds the admissible bound dt_max = {dt_max:.6g}")

    end = T_star if config.horizon == "T_star" else config.T
    N = max(1, int(math.ceil(end / dt - 1e-9)))
    lam = 1.0 / dt

    states = np.zeros((N + 1, g.dim))
    loads = np.zeros((N + 1, g.dim))
    residual = np.zeros(N + 1)
    iterations = np.zeros(N + 1, dtype=int)
    states[0] = u0
    for n in range(1, N + 1):
        prev = states[n - 1]
        fn = average_load(config.load, n, dt)
        sol = solve_stationary_vi(g, phi, op, lam, prev, fn + lam * prev,
                                  tol=config.tol, max_iter=config.max_iter, u_init=prev)
        if not sol.certified:
            raise SolverFailure(n, sol.residual)
        states[n], loads[n] = sol.u, fn
        residual[n], iterations[n] = sol.residual, sol.iterations

    norms = np.array([[g.h_norm(u), g.v_norm(u), g.w_norm(u)] for u in states])
    phis = np.array([phi_eval(phi, u) for u in states])
    delta_H = np.zeros(N + 1)
    for n in range(1, N + 1):
        delta_H[n] = g.h_norm((states[n] - states[n - 1]) / dt)

    h1_bound = 2.0 ** (1.0 + 1.0 / ledger.theta2) * (E0 + beta)
    n_guard = min(N, max(1, int(math.ceil(T_star / dt - 1e-9))))
    h1_slacks = h1_bound - norms[1:n_guard + 1, 1] ** 2
    if np.any(h1_slacks < 0):
        log.warning("V-norm upper bound violated (worst slack %.3e)", h1_slacks.min())

    return Trajectory(
        problem=problem, dt=dt, states=states, loads=loads,
        norm_H=norms[:, 0], norm_V=norms[:, 1], norm_W=norms[:, 2], phi=phis,
        delta_H=delta_H, residual=residual, iterations=iterations,
        T_star=T_star, beta=beta, E0=E0, F=F, dt_max=dt_max, T=config.T, end=end,
        h1_bound=h1_bound, h1_slacks=h1_slacks,
    )


# ---------------------------------------------------------------------------
# interpolants and distances

INTERPOLANTS = ("pc_right", "pc_left", "pl", "pl_shifted")


def interpolant_eval(traj: Trajectory, kind: str, t: float) -> np.ndarray:
    """Evaluate u_dt (pc_right), its left-shifted counterpart (pc_left), the
    piecewise linear interpolant (pl) or the variant frozen at u^1 on the
    first interval (pl_shifted)."""
    N, dt = traj.N, traj.dt
    if kind not in INTERPOLANTS:
        raise ValueError(f"unknown interpolant {kind!r}")
    if t < -1e-14 * max(1.0, N * dt) or t > N * dt * (1 + 1e-14):
        raise ValueError(f"t = {t} outside [0, {N * dt}]")
    s = min(max(t / dt, 0.0), float(N))
    U = traj.states
    if kind == "pc_right":
        n = min(max(int(math.ceil(s - 1e-12)), 1), N)
        return U[n].copy()
    if kind == "pc_left":
        return U[min(int(math.floor(s + 1e-12)), N - 1)].copy()
    if kind == "pl_shifted" and s <= 1.0:
        return U[1].copy()
    n = min(max(int(math.ceil(s)), 1), N)
    theta = s - (n - 1)
    return (1.0 - theta) * U[n - 1] + theta * U[n]


def _knots(traj: Trajectory, T: float) -> np.ndarray:
    k = traj.times
    return k[k < T]


def traj_distance_L2V(trajA: Trajectory, trajB: Trajectory, kind: str = "pl",
                      kind_b: str | None = None, T: float | None = None) -> float:
    """sqrt( int_0^T ||A(t) - B(t)||_V^2 dt ) over the common horizon.

    The integrand is piecewise quadratic between the union of both knot sets,
    so 3-point Gauss-Legendre per piece is exact.
    """
    if trajA.states.shape[1] != trajB.states.shape[1]:
        raise ValueError("trajectories have different spatial dimensions")
    g = trajA.problem.gelfand
    kind_b = kind_b or kind
    if T is None:
        T = min(trajA.horizon, trajB.horizon)
    edges = np.unique(np.concatenate([_knots(trajA, T), _knots(trajB, T), [0.0, T]]))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        for x, wq in zip(_GL3_X, _GL3_W):
            t = mid + half * x
            d = interpolant_eval(trajA, kind, t) - interpolant_eval(trajB, kind_b, t)
            total += wq * half * g.v_norm(d) ** 2
    return math.sqrt(total)


def distance_to_exact(traj: Trajectory, exact, kind: str = "pl", T: float | None = None) -> float:
    """L2(0,T;V) distance between an interpolant and a callable t -> vector,
    5-point Gauss-Legendre on each step."""
    g = traj.problem.gelfand
    T = traj.horizon if T is None else T
    edges = np.unique(np.concatenate([_knots(traj, T), [0.0, T]]))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        for x, wq in zip(_GL_X, _GL_W):
            t = mid + half * x
            d = interpolant_eval(traj, kind, t) - np.asarray(exact(t), dtype=float)
            total += wq * half * g.v_norm(d) ** 2
    return math.sqrt(total)


@dataclass
class ConvergenceReport:
    dts: list
    T_common: float
    distances: list               # d_k between dt_k and dt_{k+1}
    orders: list                  # log2(d_k / d_{k+1})
    errors: list | None = None    # against an exact solution, if given
    error_orders: list | None = None
    trajectories: list = field(default_factory=list, repr=False)


def _order(a: float, b: float) -> float:
    if a == 0 and b == 0:
        return math.nan
    if b == 0:
        return math.inf
    return math.log2(a / b)


def convergence_study(problem, config: RotheConfig, dt_list, exact=None,
                      kind: str = "pl", workers: int | None = None) -> ConvergenceReport:
    """Run the scheme for each dt (each half the previous) and compare
    consecutive levels on the common horizon."""
    dts = [float(d) for d in dt_list]
    if len(dts) < 3:
        raise ValueError("need at least three time steps")
    for a, b in zip(dts[:-1], dts[1:]):
        if not math.isclose(b, a / 2, rel_tol=1e-12):
            raise ValueError("each dt must be half the previous one")
    cfgs = [config.replace(dt=d) for d in dts]
    if workers and workers > 1:
        with concurrent.futures.ThreadPoolExecutor(workers) as ex:
            trajs = list(ex.map(lambda c: rothe_run(problem, c), cfgs))
    else:
        trajs = [rothe_run(problem, c) for c in cfgs]
    T_common = min(t.horizon for t in trajs)
    dist = [traj_distance_L2V(a, b, kind, T=T_common) for a, b in zip(trajs[:-1], trajs[1:])]
    orders = [_order(a, b) for a, b in zip(dist[:-1], dist[1:])]
    errors = error_orders = None
    if exact is not None:
        errors = [distance_to_exact(t, exact, kind, T=T_common) for t in trajs]
        error_orders = [_order(a, b) for a, b in zip(errors[:-1], errors[1:])]
    return ConvergenceReport(dts, T_common, dist, orders, errors, error_orders, trajs)

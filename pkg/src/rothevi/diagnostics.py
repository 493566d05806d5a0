"""Executable checks of the discrete estimates and empirical estimation of
the hypothesis constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, eigh
from scipy.optimize import linprog

from .core import ESTIMATED, ConstantsLedger, phi_eval
from .oseen import solve_stationary_vi
from .rothe import RotheConfig, Trajectory, rothe_run


@dataclass
class CheckReport:
    """Per-step slacks of one inequality; nonnegative slack means it holds.
    ``passed`` iff worst_slack >= -context['tolerance']."""

    name: str
    slacks: list
    worst_slack: float
    passed: bool
    context: dict = field(default_factory=dict)

    @classmethod
    def from_slacks(cls, name: str, slacks, tolerance: float, **context) -> CheckReport:
        slacks = [float(s) for s in slacks]
        worst = min(slacks) if slacks else math.inf
        context["tolerance"] = float(tolerance)
        return cls(name, slacks, worst, bool(worst >= -tolerance), context)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "worst_slack": self.worst_slack,
                "slacks": self.slacks, "context": self.context}


def _bh(g, op, w, u) -> np.ndarray:
    """H-representative of B(w, u)."""
    if op.zero:
        return np.zeros(g.dim)
    return g.to_h(op.assemble(w) @ u)


def step_energy_check(traj: Trajectory, rel_tol: float = 1e-9) -> CheckReport:
    """Test function v = u^{n-1} in the scheme, divided by dt:

        ||d||_H^2 + (||u^n||_V^2 - ||u^{n-1}||_V^2 + ||u^n - u^{n-1}||_V^2)/(2 dt)
            + (phi(u^n) - phi(u^{n-1}))/dt  <=  (f^n - B(u^{n-1}, u^n), d)_H

    with d = (u^n - u^{n-1})/dt. No constants enter.
    """
    p = traj.problem
    g, op, dt = p.gelfand, p.op, traj.dt
    slacks, scales = [], []
    for n in range(1, traj.N + 1):
        u, up = traj.states[n], traj.states[n - 1]
        d = (u - up) / dt
        terms = [
            g.h_norm(d) ** 2,
            (traj.norm_V[n] ** 2 - traj.norm_V[n - 1] ** 2 + g.v_norm(u - up) ** 2) / (2 * dt),
            (traj.phi[n] - traj.phi[n - 1]) / dt,
        ]
        rhs = g.h_inner(traj.loads[n] - _bh(g, op, up, u), d)
        scale = max(1.0, max(abs(x) for x in terms), abs(rhs),
                     traj.norm_V[n] ** 2 / dt, traj.norm_V[n - 1] ** 2 / dt)
        slacks.append((rhs - sum(terms)) / scale)
        scales.append(scale)
    return CheckReport.from_slacks("energy", slacks, rel_tol, scales=scales,
                                   note="slacks are divided by the per-step scale")


def apriori_check(traj: Trajectory, ledger: ConstantsLedger | None = None) -> CheckReport:
    """One-step a priori estimate with the ledger's M:

        ||d||_H^2 + (||u^n||_V^2 - ||u^{n-1}||_V^2 + ||u^n - u^{n-1}||_V^2)/dt
            + 2 (phi(u^n) - phi(u^{n-1}))/dt
            <= M (||u^{n-1}||_V^{2 theta2} ||u^n||_V^2 + ||f^n||_H^2 + 1).
    """
    p = traj.problem
    ledger = ledger or p.ledger
    g, dt, M, t2 = p.gelfand, traj.dt, ledger.M, ledger.theta2
    slacks = []
    for n in range(1, traj.N + 1):
        u, up = traj.states[n], traj.states[n - 1]
        lhs = (g.h_norm((u - up) / dt) ** 2
               + (traj.norm_V[n] ** 2 - traj.norm_V[n - 1] ** 2 + g.v_norm(u - up) ** 2) / dt
               + 2.0 * (traj.phi[n] - traj.phi[n - 1]) / dt)
        rhs = M * (traj.norm_V[n - 1] ** (2 * t2) * traj.norm_V[n] ** 2
                   + g.h_norm(traj.loads[n]) ** 2 + 1.0)
        slacks.append(rhs - lhs)
    return CheckReport.from_slacks("apriori", slacks, 0.0, M=M, theta2=t2)


def h1_bound_check(traj: Trajectory) -> CheckReport:
    """||u^n||_V^2 <= 2^{1+1/theta2}(E0 + beta) for the steps inside T*."""
    return CheckReport.from_slacks("h1_bound", traj.h1_slacks, 0.0, bound=traj.h1_bound,
                                   beta=traj.beta, E0=traj.E0, T_star=traj.T_star)


def difference_sequence_bound(x0: float, theta: float, Mc: float, dt: float, y, beta: float):
    """Largest n with 4 Mc x0^theta n dt <= 1/theta and
    4 Mc x0^theta sum_{m<=n} y_m dt <= beta^(theta+1); returns (n, 2^{1/theta} x0)."""
    y = np.asarray(y, dtype=float)
    k = 4.0 * Mc * x0**theta
    n_max = 0
    acc = 0.0
    for n in range(1, len(y) + 1):
        acc += y[n - 1] * dt
        if k * n * dt <= 1.0 / theta and k * acc <= beta ** (theta + 1):
            n_max = n
        else:
            break
    return n_max, 2.0 ** (1.0 / theta) * x0


def jensen_check(phi, samples, rel_tol: float = 1e-12) -> CheckReport:
    """phi(mean of samples) <= mean of phi(samples)."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < 2:
        raise ValueError("need at least two samples")
    vals = np.array([phi_eval(phi, s) for s in samples])
    mean_phi = float(vals.mean())
    mean = samples.mean(axis=0)
    if phi.kind == "obstacle":
        # averaging feasible points can undershoot a bound by rounding
        lb = phi.lower_bounds
        tol = 4 * np.finfo(float).eps * np.maximum(np.abs(samples).max(axis=0), 1.0)
        mean = np.where((mean < lb) & (mean >= lb - tol), lb, mean)
    at_mean = phi_eval(phi, mean)
    if math.isinf(mean_phi):
        slack = math.inf
    elif phi.kind == "friction":
        # coordinatewise sum|x| - |sum x| is >= 0 even after rounding when both
        # sums run in the same order; the global difference is not
        gap = np.abs(samples).sum(axis=0) - np.abs(samples.sum(axis=0))
        slack = float(np.dot(phi.weights, gap)) / samples.shape[0]
    else:
        slack = mean_phi - at_mean
    scale = max(1.0, abs(mean_phi) if math.isfinite(mean_phi) else 1.0)
    return CheckReport.from_slacks("jensen", [slack], rel_tol * scale,
                                   mean_phi=mean_phi, phi_of_mean=at_mean)


def _perturbation(problem, u0, delta):
    g = problem.gelfand
    e = np.ones(g.dim)
    e /= g.h_norm(e)
    return problem.phi.project(u0 + delta * e)


def gronwall_experiment(problem, config: RotheConfig, delta: float, factor: float = 1.25) -> CheckReport:
    """Runs from u0 and from u0 perturbed by delta (H-norm, projected to the
    domain) for delta and delta/2; passes iff r(delta/2) <= factor r(delta)
    with r = max_{n>=1} ||u^n - U^n||_H / delta."""
    g = problem.gelfand
    base = rothe_run(problem, config)
    if delta == 0:
        return CheckReport.from_slacks("gronwall", [0.0], 0.0, note="delta = 0: identical runs")
    ratios = {}
    per_step = {}
    for d in (delta, delta / 2):
        other = rothe_run(problem, config.replace(u0=_perturbation(problem, config.u0, d)))
        n = min(base.N, other.N)
        r = [g.h_norm(base.states[k] - other.states[k]) / d for k in range(1, n + 1)]
        per_step[d] = r
        ratios[d] = max(r)
    slack = factor * ratios[delta] - ratios[delta / 2]
    return CheckReport.from_slacks(
        "gronwall", [slack], 0.0, r_delta=ratios[delta], r_half=ratios[delta / 2],
        ratios=per_step[delta], delta=delta, factor=factor,
    )


def lipschitz_diagnostic(problem, config: RotheConfig, dt_list, factor: float = 1.2) -> CheckReport:
    """L(dt) = max_n ||(u^n - u^{n-1})/dt||_H per dt; passes iff
    L(dt_{k+1}) <= factor L(dt_k) for consecutive refinements."""
    Ls = []
    for dt in dt_list:
        traj = rothe_run(problem, config.replace(dt=float(dt)))
        Ls.append(float(traj.delta_H[1:].max()))
    slacks = []
    for a, b in zip(Ls[:-1], Ls[1:]):
        slacks.append(factor * a - b)
    return CheckReport.from_slacks("lipschitz", slacks, 1e-12 * max(1.0, max(Ls)),
                                   L=Ls, dts=[float(d) for d in dt_list], factor=factor)


# ---------------------------------------------------------------------------
# constant estimation


def _hill_climb(ratio, args, steps=20):
    """Coordinate-wise ascent of ratio(*args); step halves after each round."""
    args = [a.copy() for a in args]
    best = ratio(*args)
    for k in range(steps):
        for a in args:
            s = 0.5 ** k * max(float(np.abs(a).max()), 1e-12)
            for i in range(a.shape[0]):
                old = a[i]
                for sign in (1.0, -1.0):
                    a[i] = old + sign * s
                    val = ratio(*args)
                    if val > best:
                        best, old = val, a[i]
                    a[i] = old
    return best


def _samples(rng, g, n):
    """Thirds of white noise, smooth cumulative sums, and random mixtures of
    the lowest generalized eigenmodes S v = mu M v."""
    dim = g.dim
    _, modes = eigh(g.stiffness_sym, g.mass)
    k = min(dim, 6)
    out = []
    for j in range(n):
        if j % 3 == 0:
            v = rng.standard_normal(dim)
        elif j % 3 == 1:
            v = np.cumsum(rng.standard_normal(dim))
            if dim > 2:
                v -= np.linspace(v[0], v[-1], dim)
        else:
            v = modes[:, :k] @ (rng.standard_normal(k) / np.arange(1, k + 1))
        if not np.any(v):
            v = rng.standard_normal(dim)
        out.append(v)
    return out


def _safe(num, den):
    return num / den if den > 1e-300 else 0.0


def _best(fn, pool, nargs, n_samples, hill_steps):
    best_val, best_args = 0.0, None
    for k in range(n_samples):
        args = pool[k * nargs:(k + 1) * nargs]
        val = fn(*args)
        if val > best_val:
            best_val, best_args = val, args
    if best_args is not None and hill_steps:
        best_val = max(best_val, _hill_climb(fn, best_args, hill_steps))
    return float(best_val)


def estimate_constants(problem, n_samples: int = 200, seed: int = 0, theta1: float | None = None,
                       theta2: float | None = None, hill_steps: int = 20) -> ConstantsLedger:
    """Empirical ledger. Each hypothesis constant is the max of its defining
    ratio over seeded samples, refined by coordinate-wise hill climbing. Where
    the ratio is bilinear in the remaining arguments (C_B, C_H3) those are
    maximized exactly by a singular value. C_reg and C_phi2 come from a
    one-sided least-absolute fit of ||u||_W against ||f||_H over stationary
    solves (lambda = 0, no convection)."""
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    base = problem.ledger
    t1 = base.theta1 if theta1 is None else theta1
    t2 = base.theta2 if theta2 is None else theta2
    g, op, phi = problem.gelfand, problem.op, problem.phi
    rng = np.random.default_rng(seed)
    dim = g.dim

    C = {"C_B": 0.0, "C_H1": 0.0, "C_H3": 0.0, "C_H4": 0.0}
    if not op.zero:
        bt, gm = 2.0 / t1, 1.0 / t2
        nv, nh, nw = g.v_norm, g.h_norm, g.w_norm
        R_inv = np.linalg.inv(cholesky(g.stiffness_sym))           # ||v||_V = ||R v||
        Lm_inv = np.linalg.inv(cholesky(g.mass, lower=True))       # ||M^{-1}x||_M = ||Lm^{-1} x||

        def r_B(u):
            return _safe(np.linalg.norm(R_inv.T @ op.assemble(u) @ R_inv, 2), nv(u))

        def r_H1(u, v):
            return _safe(abs(v @ op.assemble(u) @ v), nv(u) * nv(v) * nh(v) ** bt * nv(v) ** (1 - bt))

        def r_H3(u):
            return _safe(np.linalg.norm(Lm_inv @ op.assemble(u) @ R_inv, 2), nw(u))

        def r_H4(u, v):
            return _safe(nh(_bh(g, op, u, v)), nv(u) * nv(v) ** gm * nw(v) ** (1 - gm))

        for name, fn, nargs in (("C_B", r_B, 1), ("C_H1", r_H1, 2), ("C_H3", r_H3, 1), ("C_H4", r_H4, 2)):
            C[name] = _best(fn, _samples(rng, g, n_samples * nargs), nargs, n_samples, hill_steps)

    # (H5): stationary problem without convection
    xs, ys = [], []
    for k in range(n_samples):
        f = rng.standard_normal(dim)
        if k % 2:
            f = np.cumsum(f)
        f *= 10.0 ** rng.uniform(-2, 2) / max(g.h_norm(f), 1e-300)
        sol = solve_stationary_vi(g, phi, op.null(dim), 0.0, None, f, tol=1e-12, max_iter=100_000)
        if not sol.certified:
            raise RuntimeError(f"stationary solve failed while estimating C_reg (residual {sol.residual:.3e})")
        xs.append(g.h_norm(f))
        ys.append(g.w_norm(sol.u))
    C_reg, C_phi2 = _one_sided_fit(np.array(xs), np.array(ys))

    C_phi1 = 0.0  # every shipped functional is nonnegative
    prov = dict(base.provenance)
    for k in ("C_B", "C_H1", "C_H3", "C_H4", "C_reg", "C_phi2"):
        prov[k] = ESTIMATED
    return ConstantsLedger(theta1=t1, theta2=t2, C_reg=C_reg, C_phi1=C_phi1, C_phi2=C_phi2,
                           provenance=prov, **C)


def _one_sided_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """min sum(c x + d - y) s.t. c x + d >= y, c, d >= 0 (an LP)."""
    res = linprog(
        c=[x.sum(), float(len(x))],
        A_ub=-np.column_stack([x, np.ones_like(x)]),
        b_ub=-y,
        bounds=[(0, None), (0, None)],
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"one-sided fit failed: {res.message}")
    c, d = (float(v) for v in res.x)
    # tiny LP round-off must not leave a sample uncovered
    d = max(d, float(np.max(y - c * x)), 0.0)
    if c <= 0:
        c = float(np.max(y / np.maximum(x, 1e-300)))
    return c, d

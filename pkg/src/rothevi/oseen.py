"""Stationary Oseen-type variational inequality

    (v - u)^T (L u - M rhs) + phi(v) - phi(u) >= 0   for all v,
    L = lam M + S + N(w),

solved by proximal Gauss-Seidel with symmetric sweeps, plus a natural-map
residual and an active-set / sign enumeration oracle for small instances.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import (
    FRICTION,
    OBSTACLE,
    ConvectionOperator,
    ConvexFunctional,
    DiscreteGelfand,
    _check_len,
    phi_eval,
)

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


@dataclass
class StationarySolve:
    u: np.ndarray
    iterations: int
    residual: float
    lam: float
    certified: bool
    history: list = field(default_factory=list, repr=False)


def oseen_matrix(g: DiscreteGelfand, op: ConvectionOperator, lam: float, w) -> np.ndarray:
    L = lam * g.mass + g.stiffness
    if not op.zero:
        L = L + op.assemble(w)
    return L


@numba.njit(cache=True)
def _prox(code, lb, wt, q, r):
    if code == 1:
        x = -r / q
        return x if x > lb else lb
    if code == 2:
        a = abs(r) - wt
        if a <= 0.0:
            return 0.0
        return a / q if r < 0.0 else -a / q
    return -r / q


@numba.njit(cache=True)
def _natural_map(L, b, u, M, code, lb, wt):
    n = u.shape[0]
    d = np.empty(n)
    for i in range(n):
        g = -b[i]
        for j in range(n):
            g += L[i, j] * u[j]
        q = L[i, i]
        d[i] = u[i] - _prox(code, lb[i], wt[i], q, g - q * u[i])
    s = 0.0
    for i in range(n):
        for j in range(n):
            s += d[i] * M[i, j] * d[j]
    return math.sqrt(max(s, 0.0))


@numba.njit(cache=True)
def _pgs(L, b, u, M, code, lb, wt, tol, max_iter, history):
    n = u.shape[0]
    res = _natural_map(L, b, u, M, code, lb, wt)
    it = 0
    while res > tol and it < max_iter:
        for sweep in range(2):
            for k in range(n):
                i = k if sweep == 0 else n - 1 - k
                g = -b[i]
                for j in range(n):
                    g += L[i, j] * u[j]
                q = L[i, i]
                u[i] = _prox(code, lb[i], wt[i], q, g - q * u[i])
        it += 1
        res = _natural_map(L, b, u, M, code, lb, wt)
        history[it - 1] = res
    return it, res


def _initial_guess(L, b, phi: ConvexFunctional) -> np.ndarray:
    lb, wt = phi.bound_array(), phi.weight_array()
    d = np.diag(L)
    return np.array([_prox(phi.code, lb[i], wt[i], d[i], -b[i]) for i in range(len(b))])


def solve_stationary_vi(
    g: DiscreteGelfand,
    phi: ConvexFunctional,
    op: ConvectionOperator,
    lam: float,
    w,
    rhs,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    u_init=None,
) -> StationarySolve:
    """Proximal Gauss-Seidel for the stationary Oseen VI.

    ``rhs`` is an H-vector; the load is M @ rhs. Each coordinate update solves
    its scalar subproblem exactly. A sweep is one ascending plus one
    descending pass; iteration stops once the natural-map residual (H-norm)
    is at most ``tol`` or after ``max_iter`` sweeps (default 50 * dim).
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = g.dim
    rhs = _check_len(rhs, n, "rhs")
    w = np.zeros(n) if w is None else _check_len(w, n, "w")
    if max_iter is None:
        max_iter = 50 * n
    L = np.ascontiguousarray(oseen_matrix(g, op, lam, w))
    if np.any(np.diag(L) <= 0):
        bad = int(np.argmin(np.diag(L)))
        raise ValueError(f"diagonal not positive at index {bad}; refine mesh or increase λ")
    b = g.mass @ rhs
    if u_init is None:
        u = _initial_guess(L, b, phi)
    else:
        u = phi.project(_check_len(u_init, n, "u_init"))
    u = np.ascontiguousarray(u, dtype=float)
    hist = np.zeros(max(int(max_iter), 1))
    it, res = _pgs(
        L, b, u, np.ascontiguousarray(g.mass), phi.code,
        phi.bound_array(), phi.weight_array(), float(tol), int(max_iter), hist,
    )
    history = hist[:it].tolist()
    if any(history[k + 1] > history[k] + 1e-12 for k in range(len(history) - 1)):
        log.debug("natural-map residual increased during sweeps (lam=%g)", lam)
    return StationarySolve(u=u, iterations=int(it), residual=float(res), lam=float(lam),
                           certified=bool(res <= tol), history=history)


def vi_residual(g, phi, op, lam, w, u, rhs) -> float:
    """H-norm of u - p, p the one-step Jacobi prox map; zero iff u solves the VI."""
    n = g.dim
    u = _check_len(u, n, "u")
    w = np.zeros(n) if w is None else _check_len(w, n, "w")
    L = np.ascontiguousarray(oseen_matrix(g, op, lam, w))
    b = g.mass @ _check_len(rhs, n, "rhs")
    return float(_natural_map(L, b, np.ascontiguousarray(u), np.ascontiguousarray(g.mass),
                              phi.code, phi.bound_array(), phi.weight_array()))


def vi_certificate(g, phi, op, lam, w, u, rhs, v) -> float:
    """Value of (v - u)^T (L u - M rhs) + phi(v) - phi(u); nonnegative for
    every v iff u solves the VI."""
    L = oseen_matrix(g, op, lam, w)
    grad = L @ u - g.mass @ rhs
    return float((v - u) @ grad + phi_eval(phi, v) - phi_eval(phi, u))


def brute_force_vi(g, phi, op, lam, w, rhs, kkt_tol: float = 1e-10) -> np.ndarray:
    """Enumerate active sets (obstacle) or sign patterns (friction), solve each
    reduced linear system and return the pattern passing exact KKT checks."""
    n = g.dim
    w = np.zeros(n) if w is None else _check_len(w, n, "w")
    L = oseen_matrix(g, op, lam, w)
    b = g.mass @ _check_len(rhs, n, "rhs")
    tol = kkt_tol * max(1.0, float(np.abs(b).max(initial=0.0)), float(np.abs(L).max()))

    if phi.kind == OBSTACLE:
        if n > 14:
            raise ValueError("brute-force oracle limited to dim <= 14 for obstacle kind")
        lb = phi.lower_bounds
        cand = np.flatnonzero(np.isfinite(lb))
        combos = np.array(list(itertools.product((False, True), repeat=len(cand))), dtype=bool)
        combos = combos[np.argsort(combos.sum(axis=1), kind="stable")]
        fixed = np.zeros((len(combos), n), dtype=bool)
        fixed[:, cand] = combos
        vals = np.where(fixed, np.where(np.isfinite(lb), lb, 0.0), 0.0)
        U, ok = _solve_patterns(L, np.broadcast_to(b, fixed.shape), fixed, vals)
        mult = U @ L.T - b
        lbf = np.where(np.isfinite(lb), lb, -np.inf)
        ok &= np.all(fixed | (U >= lbf - tol), axis=1) & np.all(~fixed | (mult >= -tol), axis=1)
    elif phi.kind == FRICTION:
        if n > 9:
            raise ValueError("brute-force oracle limited to dim <= 9 for friction kind")
        wt = phi.weights
        nodes = np.flatnonzero(wt > 0)
        signs = np.zeros((3 ** len(nodes), n))
        signs[:, nodes] = np.array(list(itertools.product((0, 1, -1), repeat=len(nodes))), dtype=float)
        fixed = np.zeros(signs.shape, dtype=bool)
        fixed[:, nodes] = signs[:, nodes] == 0
        U, ok = _solve_patterns(L, b - signs * wt, fixed, np.zeros(signs.shape))
        grad = U @ L.T - b
        stuck_ok = ~fixed | (np.abs(grad) <= wt + tol)
        slide_ok = (signs == 0) | (signs * U >= -tol)
        ok &= np.all(stuck_ok & slide_ok, axis=1)
    else:
        return np.linalg.solve(L, b)
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        raise RuntimeError("no active pattern satisfies the KKT conditions")
    return U[hits[0]].copy()


def _solve_patterns(L, B, fixed, vals, chunk: int = 4096):
    """Solve L u = b with u_i = vals_i on fixed entries, one pattern per row.

    Fixed rows of L are replaced by unit rows, so the free block is solved
    with the fixed values moved across. Returns (U, solvable mask).
    """
    P, n = fixed.shape
    U = np.zeros((P, n))
    ok = np.ones(P, dtype=bool)
    eye = np.eye(n)
    for lo in range(0, P, chunk):
        f = fixed[lo:lo + chunk]
        A = np.where(f[:, :, None], eye, L)
        r = np.where(f, vals[lo:lo + chunk], B[lo:lo + chunk])
        try:
            U[lo:lo + chunk] = np.linalg.solve(A, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            for k in range(len(f)):
                try:
                    U[lo + k] = np.linalg.solve(A[k], r[k])
                except np.linalg.LinAlgError:
                    ok[lo + k] = False
    ok &= np.all(np.isfinite(U), axis=1)
    return U, ok

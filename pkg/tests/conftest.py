import numpy as np
import pytest

from rothevi.core import ConvectionOperator, ConvexFunctional, DiscreteGelfand


def random_gelfand(rng, dim):
    """Lumped positive mass and a diagonally dominant SPD stiffness."""
    mass = np.diag(rng.uniform(0.5, 2.0, dim))
    A = rng.standard_normal((dim, dim))
    S = A @ A.T / dim
    S += np.diag(np.abs(S).sum(axis=1) + 1.0)
    return DiscreteGelfand(mass, S)


def random_convection(rng, dim, scale=0.2):
    return ConvectionOperator.from_tensor(scale * rng.standard_normal((dim, dim, dim)) / dim)


def random_phi(rng, kind, dim):
    if kind == "obstacle":
        lb = rng.uniform(-1.0, 0.5, dim)
        lb[rng.random(dim) < 0.2] = -np.inf
        return ConvexFunctional.obstacle(lb)
    if kind == "friction":
        w = rng.uniform(0.0, 2.0, dim)
        w[rng.random(dim) < 0.3] = 0.0
        return ConvexFunctional.friction(w)
    return ConvexFunctional.zero(dim)


def random_instance(rng, kind, dim):
    g = random_gelfand(rng, dim)
    phi = random_phi(rng, kind, dim)
    op = random_convection(rng, dim)
    w = rng.standard_normal(dim)
    lam = rng.uniform(0.0, 5.0)
    rhs = 3.0 * rng.standard_normal(dim)
    return g, phi, op, lam, w, rhs


def pdas_obstacle(L, b, lb, max_iter=200):
    """Primal-dual active set iteration for the obstacle LCP
    u >= lb, Lu - b >= 0, (u - lb)(Lu - b) = 0."""
    n = len(b)
    u = np.linalg.solve(L, b)
    mu = np.zeros(n)
    active = np.zeros(n, bool)
    for _ in range(max_iter):
        new = (mu + (lb - u)) > 0
        if _ and np.array_equal(new, active):
            return u
        active = new
        free = ~active
        u = np.where(active, lb, 0.0)
        if free.any():
            u[free] = np.linalg.solve(L[np.ix_(free, free)], b[free] - L[np.ix_(free, active)] @ u[active])
        mu = np.where(active, L @ u - b, 0.0)
    raise RuntimeError("active set iteration did not converge")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def simulate_sequence(rng, x0, theta, Mc, dt, y, beta):
    """Largest admissible x_n from (x_n - x_{n-1})/dt <= Mc (x_{n-1}^theta x_n + y_n),
    sometimes shrunk by a random factor, kept >= beta."""
    xs = [x0]
    for yn in y:
        prev = xs[-1]
        den = 1.0 - Mc * dt * prev**theta
        if den <= 0:
            break
        top = (prev + Mc * dt * yn) / den
        xs.append(max(beta, top * rng.uniform(0.9, 1.0) if rng.random() < 0.5 else top))
    return np.array(xs)


def random_sequence_case(rng):
    """Parameters whose good range n_max spans roughly 5 to 300 steps."""
    theta = rng.uniform(1.0, 3.0)
    beta = rng.uniform(0.1, 2.0)
    x0 = beta * rng.uniform(1.0, 3.0)
    Mc = rng.uniform(0.1, 5.0)
    k = 4.0 * Mc * x0**theta
    n_target = int(rng.integers(5, 300))
    dt = 1.0 / (theta * k * n_target)
    # keep the load condition comparable to the time condition
    y_scale = beta ** (theta + 1) / (k * n_target * dt) * rng.uniform(0.2, 2.0)
    y = rng.uniform(0.0, y_scale, 2 * n_target)
    return x0, theta, Mc, dt, y, beta

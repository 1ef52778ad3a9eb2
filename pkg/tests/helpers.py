"""Random small instances and mode builders shared by the tests."""
import numpy as np

from gpdsched.network import AllocationMode, InterferenceGraph, NetworkSpec, StateConfig, enumerate_modes
from gpdsched.objective import UncertainParams


def unit_mode(n, served, power=None):
    g = np.zeros(n, dtype=int)
    g[list(served)] = 1
    return AllocationMode(g, float(len(served)) if power is None else power)


def random_instance(rng, n=None, M=None, max_modes=6, routed=False):
    """Small random network with per-state mode lists and matching parameters."""
    n = n or int(rng.integers(1, 4))
    M = M or int(rng.integers(1, 3))
    states = []
    for _ in range(M):
        K = int(rng.integers(2, max_modes + 1))
        G = rng.integers(0, 3, size=(K, n))
        G[0] = 0
        modes = [AllocationMode(g, float(rng.integers(0, 5))) for g in G]
        R = np.eye(n, dtype=int)
        if routed and n > 1:
            for j in range(n - 1):
                if rng.random() < 0.5:
                    R[j + 1, j] = -1
        states.append(StateConfig(modes, R))
    pi = rng.dirichlet(np.ones(M))
    net = NetworkSpec(n, states, pi)
    a = rng.random(n)
    return net, UncertainParams(pi, a)


def random_allocation(rng, net):
    return [rng.dirichlet(np.ones(len(st.modes))) for st in net.states]


def capacity_instance(rng, n=None, load=None):
    """Single-state conflict-graph network with demand strictly inside capacity."""
    from gpdsched.solver import max_throughput_scale
    n = n or int(rng.integers(2, 5))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5]
    modes = enumerate_modes(InterferenceGraph(n, edges))
    net = NetworkSpec.single_state(modes)
    direction = rng.uniform(0.2, 1.0, size=n)
    s = max_throughput_scale(net, direction)
    load = rng.uniform(0.3, 0.8) if load is None else load
    return net, UncertainParams(np.ones(1), load * s * direction)


def brute_force_lp(c, A_ub, b_ub, A_eq, b_eq, tol=1e-9):
    """min c'x over {A_ub x <= b_ub, A_eq x = b_eq, x >= 0} by vertex enumeration.

    Every vertex makes all equality rows and ``N - rank(A_eq)`` of the
    inequality rows (including ``x >= 0``) active.  Returns ``(value, x)`` or
    ``(None, None)`` when no vertex is feasible.
    """
    import itertools
    N = c.size
    ineq_A = np.vstack([A_ub, -np.eye(N)])
    ineq_b = np.concatenate([b_ub, np.zeros(N)])
    best, best_x = None, None
    need = N - A_eq.shape[0]
    for rows in itertools.combinations(range(ineq_A.shape[0]), need):
        A = np.vstack([A_eq, ineq_A[list(rows)]])
        if np.linalg.matrix_rank(A) < N:
            continue
        x = np.linalg.solve(A, np.concatenate([b_eq, ineq_b[list(rows)]]))
        if np.all(ineq_A @ x <= ineq_b + tol) and np.allclose(A_eq @ x, b_eq, atol=tol):
            v = float(c @ x)
            if best is None or v < best - 1e-12:
                best, best_x = v, x
    return best, best_x

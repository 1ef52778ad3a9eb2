"""Static solvers used as optimality oracles.

``solve_pen_fw`` runs conditional-gradient (Frank-Wolfe) iterations on the
penalised problem with known parameters.  ``solve_opt_exact_small`` solves the
linear original problem, and its epsilon-tightened version, with HiGHS and
returns the constraint multipliers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import objective as obj
from .kernels import run_frank_wolfe
from .network import pack

DEFAULT_FW_ITERS = 100_000
DEFAULT_FW_TOL = 1e-6
MAX_EXACT_MODES = 1000


class InfeasibleError(ValueError):
    """Raised with a Farkas-style certificate when the LP has no feasible point.

    ``weights`` is a probability vector over constraint rows such that the
    weighted row sum stays above ``-level`` by ``violation`` for every
    allocation, so no allocation satisfies all rows.
    """

    def __init__(self, level, violation, weights):
        self.level = level
        self.violation = violation
        self.weights = weights
        super().__init__(
            f"constraints h <= -{level:g} infeasible: min max-violation {violation:.6g} > 0"
        )


@dataclass
class SolverResult:
    x_star: list
    z_star: np.ndarray
    g_star: float
    f_at_x_star: float
    penalty_at_star: float
    h_at_star: np.ndarray
    iterations: int
    gap: float
    trace_g: np.ndarray = field(repr=False)
    trace_gap: np.ndarray = field(repr=False)
    trace_best: np.ndarray = field(repr=False)
    tol: float = DEFAULT_FW_TOL


def solve_pen_fw(y, problem, net, iters=DEFAULT_FW_ITERS, tol=DEFAULT_FW_TOL, backend=None,
                 a_max=1, step="pairwise"):
    if iters < 1:
        raise ValueError("iters must be >= 1")
    problem = problem.resolved(net, a_max)
    packed = pack(net)
    bx, bz, tg, tgap, tbest = run_frank_wolfe(packed, y.pi, y.a, problem, iters, tol, backend, step)
    if not (np.all(np.isfinite(tg)) and np.all(np.isfinite(tgap))):
        raise FloatingPointError("non-finite objective or gradient in Frank-Wolfe iterations")
    x = [bx[m, :k].copy() for m, k in enumerate(packed.nmodes)]
    for xm in x:
        np.clip(xm, 0.0, None, out=xm)
        xm /= xm.sum()
    z = bz.copy()
    f = obj.eval_cost(x, y, problem, net)
    h = obj.eval_constraints(x, y, problem, net)
    p = obj.penalty_value(h + z, problem.penalty.alpha)
    return SolverResult(
        x_star=x, z_star=z, g_star=f + problem.penalty.beta * p, f_at_x_star=f,
        penalty_at_star=p, h_at_star=h, iterations=len(tg), gap=float(tgap[-1]),
        trace_g=tg, trace_gap=tgap, trace_best=tbest, tol=tol,
    )


def linear_form(y, problem, net):
    """(cost vector, H, h0) with h(x) = H x + h0 over the stacked allocation."""
    cols = []
    cost = []
    for m, st in enumerate(net.states):
        block = []
        if problem.stability:
            block.append(-y.pi[m] * (st.routing @ st.departure_matrix))
        if problem.power_budget:
            block.append(y.pi[m] * np.diag(st.powers))
        cols.append(np.vstack(block))
        cost.append(y.pi[m] * st.powers if problem.cost == "average-power" else np.zeros(len(st.modes)))
    h0 = []
    if problem.stability:
        h0.append(y.a)
    if problem.power_budget:
        h0.append(-problem.budget)
    return np.concatenate(cost), np.hstack(cols), np.concatenate(h0)


def _simplex_rows(net):
    counts = net.mode_counts
    Aeq = np.zeros((net.M, sum(counts)))
    off = 0
    for m, k in enumerate(counts):
        Aeq[m, off:off + k] = 1.0
        off += k
    return Aeq, np.ones(net.M)


def split_blocks(v, net):
    out, off = [], 0
    for k in net.mode_counts:
        out.append(np.asarray(v[off:off + k], dtype=float))
        off += k
    return out


def _solve_level(c, H, h0, Aeq, beq, level, z_max):
    C = H.shape[0]
    if np.isfinite(z_max):
        A_ub = np.vstack([H, -H])
        b_ub = np.concatenate([-level - h0, z_max + h0])
    else:
        A_ub, b_ub = H, -level - h0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=Aeq, b_eq=beq, bounds=(0, None), method="highs")
    if res.status == 2:
        raise _certificate(H, h0, Aeq, beq, level)
    if res.status != 0:
        raise RuntimeError(f"LP solve failed: {res.message}")
    # marginals are d(value)/d(b_ub) <= 0; multipliers of h <= -level are their negation
    lam = -np.asarray(res.ineqlin.marginals[:C])
    return res.fun, res.x, lam


def _certificate(H, h0, Aeq, beq, level):
    # min s  s.t.  H x + h0 + level <= s,  simplex rows
    C, nx = H.shape
    c = np.zeros(nx + 1)
    c[-1] = 1.0
    A_ub = np.hstack([H, -np.ones((C, 1))])
    b_ub = -level - h0
    Aeq2 = np.hstack([Aeq, np.zeros((Aeq.shape[0], 1))])
    bounds = [(0, None)] * nx + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=Aeq2, b_eq=beq, bounds=bounds, method="highs")
    w = -np.asarray(res.ineqlin.marginals)
    w = w / w.sum() if w.sum() > 0 else w
    return InfeasibleError(level, float(res.fun), w)


@dataclass
class ExactResult:
    f0: float
    f_eps: float
    x0: list
    x_eps: list
    lambda0: np.ndarray
    lambda_eps: np.ndarray
    sensitivity_gap: float
    sensitivity_bound: float

    @property
    def sensitivity_holds(self):
        return self.sensitivity_gap <= self.sensitivity_bound + 1e-9


def solve_opt_exact_small(y, problem, net, a_max=1):
    """Exact optimum of the original problem and its epsilon-tightened version.

    Only for linear cost/constraints (both built-in kinds) with at most
    ``MAX_EXACT_MODES`` modes in total.
    """
    if sum(net.mode_counts) > MAX_EXACT_MODES:
        raise ValueError(f"more than {MAX_EXACT_MODES} modes; use solve_pen_fw instead")
    problem = problem.resolved(net, a_max)
    c, H, h0 = linear_form(y, problem, net)
    Aeq, beq = _simplex_rows(net)
    eps, zmax = problem.penalty.epsilon, problem.penalty.z_max
    f0, x0, lam0 = _solve_level(c, H, h0, Aeq, beq, 0.0, np.inf)
    fe, xe, lame = _solve_level(c, H, h0, Aeq, beq, eps, zmax)
    bound = eps * max(np.abs(lame).sum(), np.abs(lam0).sum())
    return ExactResult(
        f0=float(f0), f_eps=float(fe), x0=split_blocks(x0, net), x_eps=split_blocks(xe, net),
        lambda0=lam0, lambda_eps=lame, sensitivity_gap=abs(f0 - fe), sensitivity_bound=float(bound),
    )


def max_throughput_scale(net, direction, pi=None):
    """Largest s with s * direction inside the capacity region.

    Capacity: some time-sharing x gives sum_m pi_m R(m) G^(m) x^(m) >= rates.
    """
    d = np.asarray(direction, dtype=float)
    pi = np.ones(1) if pi is None and net.M == 1 else np.asarray(pi, dtype=float)
    y = obj.UncertainParams(pi, np.zeros(net.n))
    _, H, _ = linear_form(y, obj.ProblemSpec(cost="zero"), net)
    Aeq, beq = _simplex_rows(net)
    nx = H.shape[1]
    c = np.zeros(nx + 1)
    c[-1] = -1.0
    # s * d + H x <= 0   (H = -pi R G)
    A_ub = np.hstack([H, d[:, None]])
    Aeq2 = np.hstack([Aeq, np.zeros((net.M, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(net.n), A_eq=Aeq2, b_eq=beq,
                  bounds=[(0, None)] * nx + [(0, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"capacity LP failed: {res.message}")
    return float(res.x[-1])


@dataclass
class DominanceReport:
    holds: bool
    margin: float
    f_pen: float
    f_eps: float


def check_pen_dominance(result, f_eps, tol=1e-6):
    """f(x*_p) <= f*_eps, up to ``tol``."""
    margin = f_eps - result.f_at_x_star
    return DominanceReport(margin >= -tol, float(margin), result.f_at_x_star, float(f_eps))


@dataclass
class FeasibilityReport:
    holds: bool
    norm: float
    bound: float


def check_feasibility_bound(result, problem):
    """||h(x*_p) + z*_p|| against epsilon / 2."""
    norm = float(np.linalg.norm(result.h_at_star + result.z_star))
    bound = problem.penalty.epsilon / 2
    return FeasibilityReport(norm <= bound, norm, bound)

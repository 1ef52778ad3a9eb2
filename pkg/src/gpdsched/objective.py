"""Cost, constraint and penalty functions of the scheduling problem.

Constraint rows are stacked as ``[rate-stability (n rows), power-budget
(K rows)]`` for whichever of the two are enabled.  The penalty is
``(1/alpha) * ||h(x; y) + z||_2 ** alpha`` and the penalised objective is
``g = f + beta * p``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COST_KINDS = ("average-power", "zero")
CONSTRAINT_KINDS = ("rate-stability", "power-budget")


class ProblemError(ValueError):
    pass


@dataclass
class UncertainParams:
    pi: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-9:
            raise ProblemError(f"pi must be a probability vector, got {self.pi}")
        if np.any(self.a < 0):
            raise ProblemError("arrival rates must be non-negative")


@dataclass
class PenaltyConfig:
    alpha: float = 2.0
    beta: float = 5e3
    epsilon: float = 1e-3
    z_max: float | None = None   # filled from the network when left unset

    def __post_init__(self):
        # alpha < 2 makes the penalty non-differentiable at h + z = 0
        if not self.alpha >= 2:
            raise ProblemError("alpha must be >= 2")
        if not self.beta > 0:
            raise ProblemError("beta must be positive")
        if not self.epsilon > 0:
            raise ProblemError("epsilon must be positive")
        if self.z_max is not None and not self.z_max > self.epsilon:
            raise ProblemError("z_max must exceed epsilon")


def default_z_max(net, a_max=1):
    """2 * (a_max * n + largest mode power); dominates any reachable |h_i|."""
    pmax = max((m.power for st in net.states for m in st.modes), default=0.0)
    return 2.0 * (a_max * net.n + pmax)


@dataclass
class ProblemSpec:
    cost: str = "average-power"
    constraints: tuple = ("rate-stability",)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    budget: np.ndarray | None = None

    def __post_init__(self):
        if self.cost not in COST_KINDS:
            raise ProblemError(f"unknown cost kind {self.cost!r}")
        self.constraints = tuple(self.constraints)
        if not self.constraints:
            raise ProblemError("at least one constraint is required")
        for c in self.constraints:
            if c not in CONSTRAINT_KINDS:
                raise ProblemError(f"unknown constraint kind {c!r}")
        if len(set(self.constraints)) != len(self.constraints):
            raise ProblemError("duplicate constraint kinds")
        if "power-budget" in self.constraints:
            if self.budget is None:
                raise ProblemError("power-budget constraint needs a budget vector")
            self.budget = np.atleast_1d(np.asarray(self.budget, dtype=float))

    @property
    def stability(self):
        return "rate-stability" in self.constraints

    @property
    def power_budget(self):
        return "power-budget" in self.constraints

    def n_constraints(self, net):
        return (net.n if self.stability else 0) + (self.budget.size if self.power_budget else 0)

    def resolved(self, net, a_max=1):
        """Copy with ``z_max`` filled in and dimensions checked against ``net``."""
        check_dims(self, net)
        pen = self.penalty
        if pen.z_max is None:
            pen = PenaltyConfig(pen.alpha, pen.beta, pen.epsilon, default_z_max(net, a_max))
        return ProblemSpec(self.cost, self.constraints, pen, self.budget)


def check_dims(problem, net):
    if problem.power_budget:
        counts = set(net.mode_counts)
        if len(counts) != 1:
            raise ProblemError("power-budget rows need the same mode count in every state")
        if problem.budget.size != counts.pop():
            raise ProblemError(f"budget length {problem.budget.size} != mode count")


def _check_x(x, net):
    if len(x) != net.M:
        raise ProblemError(f"allocation has {len(x)} blocks, network has {net.M} states")
    for m, (xm, st) in enumerate(zip(x, net.states)):
        if np.shape(xm) != (len(st.modes),):
            raise ProblemError(f"state {m}: allocation length {np.shape(xm)} != {len(st.modes)}")


def _check_y(y, net):
    if y.pi.size != net.M or y.a.size != net.n:
        raise ProblemError("uncertain parameter dimensions do not match the network")


def eval_cost(x, y, problem, net):
    _check_x(x, net)
    _check_y(y, net)
    if problem.cost == "zero":
        return 0.0
    return float(sum(y.pi[m] * (st.powers @ np.asarray(x[m], float)) for m, st in enumerate(net.states)))


def eval_constraints(x, y, problem, net):
    _check_x(x, net)
    _check_y(y, net)
    rows = []
    if problem.stability:
        served = np.zeros(net.n)
        for m, st in enumerate(net.states):
            served += y.pi[m] * (st.routing @ st.departure_matrix @ np.asarray(x[m], float))
        rows.append(y.a - served)
    if problem.power_budget:
        check_dims(problem, net)
        used = sum(y.pi[m] * st.powers * np.asarray(x[m], float) for m, st in enumerate(net.states))
        rows.append(used - problem.budget)
    return np.concatenate(rows)


def penalty_value(residual, alpha=2.0):
    """(1/alpha) ||residual||_2^alpha."""
    return float(np.linalg.norm(residual) ** alpha / alpha)


def eval_penalty(x, z, y, problem, net):
    r = eval_constraints(x, y, problem, net) + np.asarray(z, float)
    return penalty_value(r, problem.penalty.alpha)


def eval_objective(x, z, y, problem, net):
    return eval_cost(x, y, problem, net) + problem.penalty.beta * eval_penalty(x, z, y, problem, net)


def penalty_scale(residual, alpha):
    """||r||^(alpha-2), the factor turning r into grad of the penalty."""
    if alpha == 2:
        return 1.0
    return float(np.linalg.norm(residual) ** (alpha - 2))


def mode_gradient(m, pi_m, residual, problem, net):
    """grad wrt x^(m) of f + beta * p, given the stacked residual r = h + z."""
    st = net.states[m]
    r = np.asarray(residual, float)
    c = problem.penalty.beta * penalty_scale(r, problem.penalty.alpha)
    pw = st.powers
    inner = np.zeros(len(st.modes))
    off = 0
    if problem.stability:
        RG = st.routing @ st.departure_matrix
        inner -= RG.T @ r[:net.n]
        off = net.n
    if problem.power_budget:
        inner += pw * r[off:]
    base = pw if problem.cost == "average-power" else 0.0
    return pi_m * (base + c * inner)


def grad_x(x, z, y, problem, net, m):
    r = eval_constraints(x, y, problem, net) + np.asarray(z, float)
    return mode_gradient(m, y.pi[m], r, problem, net)


def queue_grad_x(Q, t, pi_m, problem, net, m, power_residual=None):
    """Queue-length form of the mode gradient.

    The rate-stability part of the residual is replaced by ``Q(t)/t``, so
    only queue lengths (and, when a power budget is present, its residual
    rows) are needed.
    """
    st = net.states[m]
    pw = st.powers
    parts = []
    if problem.stability:
        parts.append(np.asarray(Q, float) / t)
    if problem.power_budget:
        if power_residual is None:
            raise ProblemError("power-budget rows need their residual")
        parts.append(np.asarray(power_residual, float))
    c = problem.penalty.beta * penalty_scale(np.concatenate(parts), problem.penalty.alpha)
    # evaluated as (pi_m / t) * (t * grad / pi_m) so the bracket is exact for
    # integer powers/beta; the kernels score modes with the bracket alone
    inner = np.zeros(len(st.modes))
    if problem.stability:
        RG = st.routing @ st.departure_matrix
        inner = -(RG.T @ np.asarray(Q, dtype=np.int64)).astype(float)
    if problem.power_budget:
        inner = inner + (t * pw) * parts[-1]
    base = t * pw if problem.cost == "average-power" else np.zeros(len(st.modes))
    return (pi_m / t) * (base + c * inner)


def grad_z(x, z, y, problem, net):
    """grad wrt z of the penalty p (not scaled by beta)."""
    r = eval_constraints(x, y, problem, net) + np.asarray(z, float)
    return penalty_scale(r, problem.penalty.alpha) * r

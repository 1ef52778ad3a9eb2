"""Greedy primal-dual scheduler: per-slot mode and auxiliary choice.

This is the readable slot-by-slot implementation.  Long runs go through
:func:`gpdsched.kernels.run_trajectory`, which makes the same decisions.

Timing within slot ``t``: the state ``m(t)`` and arrivals are observed and
added first, so ``y(t) = Y(t)/t`` includes slot ``t``.  The decision then
uses counters of past decisions (``T(t-1)``, ``Z(t-1)``) scaled by ``1/t``,
which is exactly the ``Q(t)/t`` seen by the queue form of the gradient.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import objective as obj
from .network import apply_slot
from .stochastic import CumulativeTracker, make_streams, step_arrivals, step_state


@dataclass
class ScheduleDecision:
    k: int
    gradient: np.ndarray
    u: np.ndarray
    departures: np.ndarray | None = None


class EmpiricalState:
    """Counters kept by the scheduler and the empirical averages built on them.

    ``exact=True`` keeps the recursive averages as :class:`fractions.Fraction`
    so they can be compared with the counter ratios without rounding.
    """

    def __init__(self, net, n_constraints, a_max=1, exact=False):
        self.net = net
        self.exact = exact
        self.t = 0
        self.T = [np.zeros(len(st.modes), dtype=np.int64) for st in net.states]
        self.Q = np.zeros(net.n, dtype=np.int64)
        self.arrivals = CumulativeTracker(net.n, bound=a_max)
        self.occupancy = CumulativeTracker(net.M, bound=1)
        self.Z = [Fraction(0)] * n_constraints if exact else np.zeros(n_constraints)
        self.routed_nominal = np.zeros(net.n, dtype=np.int64)    # sum R(m) G_k
        self.routed_trimmed = np.zeros(net.n, dtype=np.int64)    # sum R(m) (G_k - d)
        self.departed = np.zeros(net.n, dtype=np.int64)          # D(t), effective
        self.power_by_mode = np.zeros(max(net.mode_counts))      # sum_m p_k^(m) T_k^(m)
        self.power_total = 0.0
        self.x_rec = [None] * net.M
        self.z_rec = None

    # derived quantities -----------------------------------------------------
    def x(self, m):
        Tm = self.T[m]
        tot = Tm.sum()
        if tot == 0:
            return None
        if self.exact:
            return [Fraction(int(v), int(tot)) for v in Tm]
        return Tm / tot

    def x_all(self):
        """Allocation with every state's block defined (unvisited states: mode 0)."""
        out = []
        for m, st in enumerate(self.net.states):
            xm = self.x(m)
            if xm is None:
                xm = np.zeros(len(st.modes))
                xm[0] = 1.0
            out.append(np.asarray(xm, dtype=float))
        return out

    def pi(self):
        return self.occupancy.average()

    def a(self):
        return self.arrivals.average()

    def y(self):
        return obj.UncertainParams(self.pi(), self.a())

    def z(self):
        if self.t == 0:
            raise ValueError("z undefined before the first slot")
        if self.exact:
            return [v / self.t for v in self.Z]
        return self.Z / self.t

    def constraints(self, problem, t=None, pending_arrivals=None):
        """h(x; y) from the counters: routed nominal service vs arrivals."""
        t = self.t if t is None else t
        rows = []
        if problem.stability:
            A = self.arrivals.total
            if pending_arrivals is not None:
                A = A + pending_arrivals
            rows.append((A - self.routed_nominal) / t)
        if problem.power_budget:
            rows.append(self.power_by_mode[:problem.budget.size] / t - problem.budget)
        return np.concatenate(rows)


def argmin_mode(gradient):
    """Mode index minimising the gradient; ties go to the lowest index."""
    return int(np.argmin(np.asarray(gradient)))


def aux_choice(grad_z, eps, z_max):
    return np.where(np.asarray(grad_z) >= 0, eps, z_max).astype(float)


def slot_residuals(emp, m, arrivals, problem):
    """(analytic residual h + z, residual used for the mode choice, pi_m(t))."""
    t = emp.t + 1
    a = np.asarray(arrivals, dtype=np.int64)
    h = emp.constraints(problem, t=t, pending_arrivals=a)
    Z = np.asarray([float(v) for v in emp.Z]) if emp.exact else emp.Z
    ra = h + Z / t
    pi_m = (emp.occupancy.total[m] + 1) / t
    return ra, pi_m, t


def slot_gradient(emp, m, arrivals, problem, path="queue"):
    """Mode gradient for slot ``t = emp.t + 1`` and the matching grad_z p."""
    ra, pi_m, t = slot_residuals(emp, m, arrivals, problem)
    net = emp.net
    if path == "queue" and problem.stability:
        q_post = emp.Q + np.asarray(arrivals, dtype=np.int64)
        power_rows = ra[net.n:] if problem.power_budget else None
        gx = obj.queue_grad_x(q_post, t, pi_m, problem, net, m, power_rows)
    elif path in ("queue", "analytic"):
        gx = obj.mode_gradient(m, pi_m, ra, problem, net)
    else:
        raise ValueError(f"unknown gradient path {path!r}")
    gz = obj.penalty_scale(ra, problem.penalty.alpha) * ra
    return gx, gz


def choose_mode(m, emp, problem, arrivals, path="queue"):
    gx, _ = slot_gradient(emp, m, arrivals, problem, path)
    return argmin_mode(gx)


def choose_aux(emp, problem, arrivals, m=0):
    _, gz = slot_gradient(emp, m, arrivals, problem, path="analytic")
    return aux_choice(gz, problem.penalty.epsilon, problem.penalty.z_max)


def update_empirical(emp, decision, arrivals, m):
    """Advance every counter by one slot and apply the chosen mode.

    Also updates the recursive forms of ``x^(m)(t)`` and ``z(t)``.
    """
    net = emp.net
    st = net.states[m]
    a = np.asarray(arrivals, dtype=np.int64)
    emp.arrivals.add(a)
    occ = np.zeros(net.M)
    occ[m] = 1
    emp.occupancy.add(occ)
    emp.t += 1
    t = emp.t
    k = decision.k

    mode = st.modes[k]
    g = mode.as_array()
    emp.Q, d = apply_slot(emp.Q, a, st.routing, mode)
    decision.departures = d
    emp.T[m][k] += 1
    emp.routed_nominal += st.routing @ g
    emp.routed_trimmed += st.routing @ (g - d)
    emp.departed += d
    emp.power_by_mode[k] += mode.power
    emp.power_total += mode.power

    if emp.exact:
        u = [Fraction(float(v)) for v in decision.u]
        emp.Z = [Z + v for Z, v in zip(emp.Z, u)]
    else:
        u = np.asarray(decision.u, dtype=float)
        emp.Z = emp.Z + u

    # recursive forms: x <- x + (v - x) / 1'T,  z <- z + (u - z) / t
    cnt = int(emp.T[m].sum())
    v = [0] * len(st.modes)
    v[k] = 1
    prev = emp.x_rec[m]
    if emp.exact:
        if prev is None:
            prev = [Fraction(0)] * len(v)
        emp.x_rec[m] = [p + (Fraction(vi) - p) / cnt for p, vi in zip(prev, v)]
        zp = emp.z_rec if emp.z_rec is not None else [Fraction(0)] * len(u)
        emp.z_rec = [p + (ui - p) / t for p, ui in zip(zp, u)]
    else:
        prev = np.zeros(len(v)) if prev is None else prev
        emp.x_rec[m] = prev + (np.asarray(v, float) - prev) / cnt
        zp = emp.z_rec if emp.z_rec is not None else np.zeros(len(u))
        emp.z_rec = zp + (u - zp) / t
    return emp


class Simulation:
    """Slot-by-slot simulation of the network under the scheduler."""

    def __init__(self, net, problem, arrival_model, state_model, seed=0,
                 path="queue", exact=False):
        self.net = net
        self.problem = problem.resolved(net, arrival_model.a_max)
        self.arrival_model = arrival_model
        self.state_model = state_model
        self.path = path
        self.state_rng, self.arrival_rng = make_streams(seed)
        self.emp = EmpiricalState(net, self.problem.n_constraints(net), arrival_model.a_max, exact)
        self.m = None

    def run_slot(self):
        emp, problem = self.emp, self.problem
        t = emp.t + 1
        self.m = step_state(self.state_model, self.state_rng, self.m)
        m = self.m
        arrivals = step_arrivals(self.arrival_model, self.arrival_rng, t)
        gx, gz = slot_gradient(emp, m, arrivals, problem, self.path)
        k = argmin_mode(gx)
        u = aux_choice(gz, problem.penalty.epsilon, problem.penalty.z_max)
        decision = ScheduleDecision(k, gx, u)
        update_empirical(emp, decision, arrivals, m)
        return self.record(m, decision)

    def record(self, m, decision):
        emp, problem = self.emp, self.problem
        h = emp.constraints(problem)
        z = np.asarray(emp.z(), dtype=float)
        f = emp.power_total / emp.t if problem.cost == "average-power" else 0.0
        p = obj.penalty_value(h + z, problem.penalty.alpha)
        return {
            "t": emp.t, "m": m, "k": decision.k, "u": decision.u, "Q": emp.Q.copy(),
            "d": decision.departures, "f": f, "p": p, "g": f + problem.penalty.beta * p, "h": h,
        }

    def run(self, slots):
        return [self.run_slot() for _ in range(slots)]

    def checkpoint(self):
        """Everything needed to resume: counters, current state and rng positions."""
        return {
            "empirical": snapshot(self.emp),
            "m": self.m,
            "state_rng": self.state_rng.bit_generator.state,
            "arrival_rng": self.arrival_rng.bit_generator.state,
        }

    def resume(self, data):
        self.emp = restore(data["empirical"], self.net, self.problem.n_constraints(self.net),
                           self.arrival_model.a_max)
        self.m = data["m"]
        self.state_rng.bit_generator.state = data["state_rng"]
        self.arrival_rng.bit_generator.state = data["arrival_rng"]
        return self


# --- checkpointing ----------------------------------------------------------

def snapshot(emp):
    if emp.exact:
        raise ValueError("snapshots are only supported in floating-point mode")
    return {
        "t": emp.t,
        "T": [v.tolist() for v in emp.T],
        "Q": emp.Q.tolist(),
        "A_total": emp.arrivals.total.tolist(),
        "S_total": emp.occupancy.total.tolist(),
        "Z": emp.Z.tolist(),
        "routed_nominal": emp.routed_nominal.tolist(),
        "routed_trimmed": emp.routed_trimmed.tolist(),
        "departed": emp.departed.tolist(),
        "power_by_mode": emp.power_by_mode.tolist(),
        "power_total": emp.power_total,
        "x_rec": [None if v is None else v.tolist() for v in emp.x_rec],
        "z_rec": None if emp.z_rec is None else emp.z_rec.tolist(),
    }


def restore(data, net, n_constraints, a_max=1):
    emp = EmpiricalState(net, n_constraints, a_max)
    emp.t = int(data["t"])
    emp.T = [np.asarray(v, dtype=np.int64) for v in data["T"]]
    emp.Q = np.asarray(data["Q"], dtype=np.int64)
    emp.arrivals.total = np.asarray(data["A_total"], dtype=float)
    emp.arrivals.t = emp.t
    emp.occupancy.total = np.asarray(data["S_total"], dtype=float)
    emp.occupancy.t = emp.t
    emp.Z = np.asarray(data["Z"], dtype=float)
    emp.routed_nominal = np.asarray(data["routed_nominal"], dtype=np.int64)
    emp.routed_trimmed = np.asarray(data["routed_trimmed"], dtype=np.int64)
    emp.departed = np.asarray(data["departed"], dtype=np.int64)
    emp.power_by_mode = np.asarray(data["power_by_mode"], dtype=float)
    emp.power_total = float(data["power_total"])
    emp.x_rec = [None if v is None else np.asarray(v, dtype=float) for v in data["x_rec"]]
    emp.z_rec = None if data["z_rec"] is None else np.asarray(data["z_rec"], dtype=float)
    return emp


def save_snapshot(emp, path):
    Path(path).write_text(json.dumps(snapshot(emp), indent=1))


def load_snapshot(path, net, n_constraints, a_max=1):
    return restore(json.loads(Path(path).read_text()), net, n_constraints, a_max)

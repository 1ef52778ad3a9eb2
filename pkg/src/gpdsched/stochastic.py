"""SLLN arrival and network-state processes with bounded increments.

Random streams: every process draws from its own numpy ``PCG64`` generator,
spawned from a single ``SeedSequence(seed)``.  Stream 0 drives the network
state, stream 1 the arrivals.  The per-slot ``step_*`` functions and the
vectorised ``*_trace`` builders consume a stream identically, so a trace and a
slot-by-slot replay of the same seed agree exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

ARRIVAL_KINDS = ("iid-bernoulli-batch", "deterministic-rate", "drifting-rate", "replay")
STATE_KINDS = ("iid-categorical", "markov-chain")
DEFAULT_TAU_D = 1e4


class ConfigError(ValueError):
    pass


def make_streams(seed, count=2):
    """Independent generators for the state and arrival processes."""
    ss = np.random.SeedSequence(int(seed) & ((1 << 64) - 1))
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(count)]


@dataclass
class ArrivalModel:
    kind: str
    rates: np.ndarray
    a_max: int = 1
    initial_rates: np.ndarray | None = None
    tau_d: float = DEFAULT_TAU_D
    trace: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ARRIVAL_KINDS:
            raise ConfigError(f"unknown arrival kind {self.kind!r}")
        self.rates = np.atleast_1d(np.asarray(self.rates, dtype=float))
        self.a_max = int(self.a_max)
        if self.kind == "replay":
            if self.trace is None:
                raise ConfigError("replay arrivals need a trace")
            self.trace = np.asarray(self.trace, dtype=np.int64)
            if self.trace.ndim != 2 or np.any(self.trace < 0):
                raise ConfigError("replay trace must be a non-negative (T, n) integer array")
            self.a_max = max(self.a_max, int(self.trace.max(initial=0)))
            return
        if np.any(self.rates < 0):
            raise ConfigError("arrival rates must be non-negative")
        if self.a_max < 1:
            raise ConfigError("a_max must be >= 1")
        if np.any(self.rates > self.a_max):
            raise ConfigError(f"rate {self.rates.max()} exceeds per-slot bound a_max={self.a_max}")
        if self.kind == "drifting-rate":
            if self.initial_rates is None:
                raise ConfigError("drifting-rate needs initial_rates")
            self.initial_rates = np.asarray(self.initial_rates, dtype=float)
            if self.initial_rates.shape != self.rates.shape:
                raise ConfigError("initial_rates and rates differ in length")
            if np.any(self.initial_rates < 0) or np.any(self.initial_rates > self.a_max):
                raise ConfigError("initial_rates must lie in [0, a_max]")
            if self.tau_d <= 0:
                raise ConfigError("tau_d must be positive")

    @property
    def n(self):
        return self.trace.shape[1] if self.kind == "replay" else self.rates.size

    def mean_at(self, t):
        """Instantaneous mean arrival vector at slot ``t`` (t >= 1)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "drifting-rate":
            w = self.tau_d / (self.tau_d + t)
            return self.rates + np.multiply.outer(w, self.initial_rates - self.rates)
        return np.broadcast_to(self.rates, np.shape(t) + self.rates.shape)

    def limit_rates(self):
        if self.kind == "replay":
            return self.trace.mean(axis=0)
        return self.rates.copy()


def step_arrivals(model, rng, t):
    if t < 1:
        raise ValueError("slots are numbered from 1")
    if model.kind == "deterministic-rate":
        # floor(a t) - floor(a (t-1)): integer, exact long-run mean a
        return (np.floor(model.rates * t) - np.floor(model.rates * (t - 1))).astype(np.int64)
    if model.kind == "replay":
        return model.trace[(t - 1) % model.trace.shape[0]].copy()
    p = model.mean_at(t) / model.a_max
    return rng.binomial(model.a_max, p).astype(np.int64)


def arrival_trace(model, rng, T, start=1):
    """Arrivals for slots ``start..start+T-1`` as a (T, n) int64 array."""
    t = np.arange(start, start + T)
    if model.kind == "deterministic-rate":
        r = model.rates
        return (np.floor(np.outer(t, r)) - np.floor(np.outer(t - 1, r))).astype(np.int64)
    if model.kind == "replay":
        return model.trace[(t - 1) % model.trace.shape[0]].copy()
    p = model.mean_at(t) / model.a_max
    return rng.binomial(model.a_max, p).astype(np.int64)


def save_arrival_csv(trace, path, start=1):
    trace = np.asarray(trace, dtype=np.int64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"a_{i + 1}" for i in range(trace.shape[1])])
        for i, row in enumerate(trace):
            w.writerow([start + i, *row.tolist()])


def load_arrival_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ConfigError(f"{path}: missing 't,a_1..a_n' header")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            data.append([int(v) for v in row[1:]])
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value on line {lineno}") from exc
    return np.asarray(data, dtype=np.int64).reshape(len(data), len(rows[0]) - 1)


@dataclass
class StateModel:
    kind: str
    probs: np.ndarray | None = None        # iid-categorical
    transition: np.ndarray | None = None   # markov-chain
    initial: int = 0

    def __post_init__(self):
        if self.kind not in STATE_KINDS:
            raise ConfigError(f"unknown state kind {self.kind!r}")
        if self.kind == "iid-categorical":
            if self.probs is None:
                raise ConfigError("iid-categorical needs probs")
            self.probs = np.atleast_1d(np.asarray(self.probs, dtype=float))
            _check_prob_rows(self.probs[None, :])
            self._cum = np.cumsum(self.probs)
        else:
            if self.transition is None:
                raise ConfigError("markov-chain needs a transition matrix")
            P = np.asarray(self.transition, dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1]:
                raise ConfigError("transition matrix must be square")
            _check_prob_rows(P)
            ncomp, _ = connected_components(P > 0, directed=True, connection="strong")
            if ncomp != 1:
                raise ConfigError("markov chain is not irreducible")
            if not 0 <= self.initial < P.shape[0]:
                raise ConfigError("initial state out of range")
            self.transition = P
            self._cum = np.cumsum(P, axis=1)

    @property
    def M(self):
        return self.probs.size if self.kind == "iid-categorical" else self.transition.shape[0]

    def stationary(self):
        if self.kind == "iid-categorical":
            return self.probs.copy()
        P = self.transition
        M = P.shape[0]
        # pi (P - I) = 0, sum pi = 1
        A = np.vstack([(P - np.eye(M)).T, np.ones(M)])
        b = np.zeros(M + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
        return pi


def _check_prob_rows(P):
    if np.any(P < 0):
        raise ConfigError("probabilities must be non-negative")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
        raise ConfigError("probabilities must sum to 1")


def _pick(cum, u):
    # min(..) guards against cum[-1] rounding just below 1
    return int(min(np.searchsorted(cum, u, side="right"), cum.size - 1))


def step_state(model, rng, prev=None):
    """Next 0-based state index."""
    if model.M == 1:
        return 0
    u = rng.random()
    if model.kind == "iid-categorical":
        return _pick(model._cum, u)
    prev = model.initial if prev is None else prev
    return _pick(model._cum[prev], u)


def state_trace(model, rng, T, prev=None):
    if model.M == 1:
        return np.zeros(T, dtype=np.int64)
    u = rng.random(T)
    if model.kind == "iid-categorical":
        idx = np.searchsorted(model._cum, u, side="right")
        return np.minimum(idx, model.M - 1).astype(np.int64)
    out = np.empty(T, dtype=np.int64)
    s = model.initial if prev is None else prev
    for i in range(T):
        s = _pick(model._cum[s], u[i])
        out[i] = s
    return out


class CumulativeTracker:
    """Cumulative process Y(t) with a per-slot increment bound (max-norm)."""

    def __init__(self, dim, bound=np.inf):
        self.total = np.zeros(dim)
        self.t = 0
        self.bound = bound

    def add(self, increment):
        inc = np.asarray(increment, dtype=float)
        if np.max(np.abs(inc), initial=0.0) > self.bound:
            raise ValueError(f"increment {inc} exceeds bound {self.bound}")
        self.total = self.total + inc
        self.t += 1
        return self

    def average(self):
        return empirical_average(self)


def empirical_average(tracker):
    if tracker.t < 1:
        raise ValueError("average undefined before the first slot")
    return tracker.total / tracker.t

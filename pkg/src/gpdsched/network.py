"""Network structure: links, states, allocation modes, routing, queue update."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

SCHEMA_VERSION = 1
MAX_ENUM_LINKS = 25
DEFAULT_MAX_MODES = 1 << 20


class SpecError(ValueError):
    pass


class EnumerationSizeError(SpecError):
    pass


@dataclass(frozen=True)
class AllocationMode:
    departures: tuple
    power: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "departures", tuple(int(v) for v in self.departures))
        object.__setattr__(self, "power", float(self.power))

    @property
    def served(self):
        return tuple(i for i, d in enumerate(self.departures) if d > 0)

    def as_array(self):
        return np.asarray(self.departures, dtype=np.int64)


@dataclass
class StateConfig:
    modes: list
    routing: np.ndarray

    def __post_init__(self):
        self.routing = np.asarray(self.routing, dtype=np.int64)

    @property
    def departure_matrix(self):
        """n x K matrix whose columns are the mode departure vectors."""
        return np.array([m.departures for m in self.modes], dtype=np.int64).T

    @property
    def powers(self):
        return np.array([m.power for m in self.modes], dtype=float)


@dataclass
class NetworkSpec:
    n: int
    states: list
    pi_true: np.ndarray | None = None

    def __post_init__(self):
        if self.pi_true is not None:
            self.pi_true = np.asarray(self.pi_true, dtype=float)

    @property
    def M(self):
        return len(self.states)

    @property
    def mode_counts(self):
        return [len(s.modes) for s in self.states]

    @classmethod
    def single_state(cls, modes, routing=None):
        n = len(modes[0].departures)
        if routing is None:
            routing = np.eye(n, dtype=np.int64)
        return cls(n=n, states=[StateConfig(list(modes), routing)], pi_true=np.ones(1))


@dataclass
class InterferenceGraph:
    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        norm = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise SpecError(f"self-loop on link {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise SpecError(f"edge ({i}, {j}) references a link outside 0..{self.n - 1}")
            norm.add((min(i, j), max(i, j)))
        self.edges = frozenset(norm)

    def adjacency_masks(self):
        adj = [0] * self.n
        for i, j in self.edges:
            adj[i] |= 1 << j
            adj[j] |= 1 << i
        return adj


def mode_from_mask(mask, n):
    return tuple((mask >> i) & 1 for i in range(n))


def independent_set_masks(graph, max_modes=DEFAULT_MAX_MODES):
    """All independent sets of ``graph`` as bitmasks, ascending."""
    if graph.n > MAX_ENUM_LINKS:
        raise EnumerationSizeError(
            f"{graph.n} links exceeds the exhaustive enumeration bound of {MAX_ENUM_LINKS}"
        )
    adj = graph.adjacency_masks()
    out = []

    # grow sets by adding links in increasing index order; each set is visited once
    stack = [(0, 0, 0)]  # (mask, forbidden, next link)
    while stack:
        mask, forbidden, start = stack.pop()
        out.append(mask)
        if len(out) > max_modes:
            raise EnumerationSizeError(
                f"interference graph on {graph.n} links has more than {max_modes} "
                "independent sets; raise max_modes or sparsify the mode set"
            )
        for i in range(start, graph.n):
            if not (forbidden >> i) & 1:
                stack.append((mask | (1 << i), forbidden | adj[i] | (1 << i), i + 1))
    out.sort()
    return out


def enumerate_modes(graph, power=None, max_modes=DEFAULT_MAX_MODES):
    """Independent sets of the conflict graph as 0/1 allocation modes.

    Ordered by bitmask (bit ``i`` is link ``i``), so the empty set comes first.
    ``power`` may be a callable on the departure array or a sequence aligned with
    the returned order; by default each mode costs the squared norm of its
    departure vector.
    """
    masks = independent_set_masks(graph, max_modes=max_modes)
    deps = [mode_from_mask(mk, graph.n) for mk in masks]
    if power is None:
        powers = [float(np.dot(d, d)) for d in deps]
    elif callable(power):
        powers = [float(power(np.asarray(d))) for d in deps]
    else:
        powers = [float(p) for p in power]
        if len(powers) != len(deps):
            raise SpecError(f"got {len(powers)} powers for {len(deps)} modes")
    return [AllocationMode(d, p) for d, p in zip(deps, powers)]


def validate_routing(R, n):
    problems = []
    R = np.asarray(R)
    if R.shape != (n, n):
        return [f"routing shape {R.shape} != ({n}, {n})"]
    if not np.all(np.diag(R) == 1):
        problems.append("diagonal must be 1")
    off = R - np.diag(np.diag(R))
    if not np.all(np.isin(off, (0, -1))):
        problems.append("off-diagonal entries must be 0 or -1")
    if np.any((off == -1).sum(axis=0) > 1):
        problems.append("multiple next hops")
    return problems


def validate_spec(spec):
    """List of invariant violations; empty when ``spec`` is well formed."""
    problems = []
    if spec.n < 1:
        problems.append("n must be >= 1")
    if spec.M < 1:
        problems.append("at least one state required")
    for m, st in enumerate(spec.states):
        tag = f"state {m}"
        if not st.modes:
            problems.append(f"{tag}: no allocation modes")
        for k, mode in enumerate(st.modes):
            if len(mode.departures) != spec.n:
                problems.append(f"{tag} mode {k}: departure length {len(mode.departures)} != {spec.n}")
            if any(d < 0 for d in mode.departures):
                problems.append(f"{tag} mode {k}: negative departures")
            if not np.isfinite(mode.power) or mode.power < 0:
                problems.append(f"{tag} mode {k}: power must be non-negative")
        problems.extend(f"{tag}: {p}" for p in validate_routing(st.routing, spec.n))
    if spec.pi_true is not None:
        pi = spec.pi_true
        if pi.shape != (spec.M,):
            problems.append(f"pi_true length {pi.size} != M={spec.M}")
        elif np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            problems.append("pi_true must be a probability vector")
    return problems


def check_spec(spec):
    problems = validate_spec(spec)
    if problems:
        raise SpecError("; ".join(problems))
    return spec


def apply_slot(q, arrivals, routing, mode):
    """One slot of queue dynamics: arrivals land, then the mode is served.

    A link whose post-arrival backlog is smaller than its nominal departure
    count transmits nothing this slot.  Packets forwarded to a next hop are
    credited to that queue in the same slot.  Returns ``(new_q, departures)``.
    """
    q = np.asarray(q, dtype=np.int64)
    a = np.asarray(arrivals, dtype=np.int64)
    if np.any(a < 0):
        raise ValueError("arrivals must be non-negative")
    g = mode.as_array() if isinstance(mode, AllocationMode) else np.asarray(mode, dtype=np.int64)
    backlog = q + a
    d = np.where(backlog >= g, g, 0)
    new_q = backlog - np.asarray(routing, dtype=np.int64) @ d
    return new_q, d


class PackedNetwork(NamedTuple):
    """Dense padded arrays consumed by the kernels."""
    G: np.ndarray        # (M, K, n) nominal departures
    RG: np.ndarray       # (M, K, n) routed departures R(m) G_k
    R: np.ndarray        # (M, n, n)
    power: np.ndarray    # (M, K)
    nmodes: np.ndarray   # (M,)


def pack(spec):
    K = max(spec.mode_counts)
    M, n = spec.M, spec.n
    G = np.zeros((M, K, n), dtype=np.int64)
    RG = np.zeros((M, K, n), dtype=np.int64)
    R = np.zeros((M, n, n), dtype=np.int64)
    power = np.zeros((M, K))
    nmodes = np.zeros(M, dtype=np.int64)
    for m, st in enumerate(spec.states):
        Gm = st.departure_matrix  # n x K_m
        km = Gm.shape[1]
        G[m, :km] = Gm.T
        RG[m, :km] = (st.routing @ Gm).T
        R[m] = st.routing
        power[m, :km] = st.powers
        nmodes[m] = km
    return PackedNetwork(G, RG, R, power, nmodes)


# --- serialization -------------------------------------------------------

def spec_to_dict(spec):
    states = []
    for st in spec.states:
        states.append({
            "modes": [list(m.departures) for m in st.modes],
            "powers": [float(m.power) for m in st.modes],
            "routing": st.routing.astype(int).tolist(),
        })
    out = {"schema_version": SCHEMA_VERSION, "links": int(spec.n), "states": states}
    if spec.pi_true is not None:
        out["pi_true"] = [float(v) for v in spec.pi_true]
    return out


def spec_from_dict(d):
    n = int(d["links"])
    states = []
    for i, sd in enumerate(d["states"]):
        rows = sd["modes"]
        powers = sd.get("powers")
        if powers is None:
            powers = [float(np.dot(r, r)) for r in rows]
        if len(powers) != len(rows):
            raise SpecError(f"state {i}: {len(powers)} powers for {len(rows)} modes")
        routing = sd.get("routing")
        routing = np.eye(n, dtype=np.int64) if routing is None else np.asarray(routing, dtype=np.int64)
        states.append(StateConfig([AllocationMode(r, p) for r, p in zip(rows, powers)], routing))
    pi = d.get("pi_true")
    return check_spec(NetworkSpec(n=n, states=states, pi_true=None if pi is None else np.asarray(pi, float)))


def save_spec(spec, path):
    Path(path).write_text(yaml.safe_dump(spec_to_dict(spec), sort_keys=False, default_flow_style=None))


def load_spec(path):
    return spec_from_dict(yaml.safe_load(Path(path).read_text()))

"""Experiment plumbing: run configs, network generation, simulation, reports.

Config files are YAML with a ``schema_version`` key; see README for the
full schema.  Output CSVs use ``.`` decimals and a fixed column order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import objective as obj
from .kernels import run_trajectory
from .network import (InterferenceGraph, NetworkSpec, StateConfig, check_spec, enumerate_modes,
                      load_spec, pack, spec_from_dict)
from .solver import max_throughput_scale, solve_pen_fw
from .stochastic import (ArrivalModel, ConfigError, StateModel, arrival_trace, load_arrival_csv,
                         make_streams, save_arrival_csv, state_trace)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CANONICAL_LINKS = 7
CANONICAL_RADIUS = 0.3
CANONICAL_SEED = 2007
CANONICAL_LOAD = 0.7
REPORT_MAX_ROWS = 10_000
FLOAT_FMT = "%.12g"


class ReportError(ValueError):
    pass


# --- network generation ----------------------------------------------------

def gen_network(links, radius=None, density=None, seed=0, link_length=0.1, return_layout=False):
    """Random single-state network with an independent-set mode family.

    With ``radius``: transmitters are placed uniformly on the unit square and
    each receiver ``link_length`` away in a random direction; links ``i`` and
    ``j`` conflict when either transmitter lies strictly within ``radius`` of
    the other link's receiver.  With ``density``: each pair conflicts
    independently with that probability.  Routing is the identity.
    """
    if (radius is None) == (density is None):
        raise ConfigError("give exactly one of radius or density")
    if links < 1:
        raise ConfigError("need at least one link")
    rng = np.random.default_rng(seed)
    edges = set()
    layout = None
    if radius is not None:
        tx = rng.random((links, 2))
        theta = rng.random(links) * 2 * np.pi
        rx = tx + link_length * np.column_stack([np.cos(theta), np.sin(theta)])
        dist = np.linalg.norm(tx[:, None, :] - rx[None, :, :], axis=2)  # dist[i, j] = |tx_i - rx_j|
        for i in range(links):
            for j in range(i + 1, links):
                if dist[i, j] < radius or dist[j, i] < radius:
                    edges.add((i, j))
        layout = {"tx": tx, "rx": rx}
    else:
        for i in range(links):
            for j in range(i + 1, links):
                if rng.random() < density:
                    edges.add((i, j))
    graph = InterferenceGraph(links, frozenset(edges))
    modes = enumerate_modes(graph)
    if not any(m.served for m in modes):
        raise ConfigError("generated network has no mode serving any link")
    spec = check_spec(NetworkSpec(links, [StateConfig(modes, np.eye(links, dtype=np.int64))], np.ones(1)))
    if return_layout:
        return spec, graph, layout
    return spec


def canonical_network():
    """Fixed 7-link stand-in topology for the power-minimisation experiment."""
    return gen_network(CANONICAL_LINKS, radius=CANONICAL_RADIUS, seed=CANONICAL_SEED)


# --- configuration -----------------------------------------------------------

def canonical_config(slots=100_000, seed=1, arrivals="iid-bernoulli-batch"):
    arr = {"kind": arrivals, "load": CANONICAL_LOAD, "a_max": 1}
    if arrivals == "drifting-rate":
        arr.update(initial_load=1.25 * CANONICAL_LOAD, tau_d=1e4)
    return {
        "schema_version": SCHEMA_VERSION,
        "network": {"generate": {"links": CANONICAL_LINKS, "radius": CANONICAL_RADIUS,
                                 "seed": CANONICAL_SEED}},
        "arrivals": arr,
        "states": {"kind": "iid-categorical", "probs": [1.0]},
        "problem": {"cost": "average-power", "constraints": ["rate-stability"],
                    "alpha": 2, "beta": 5000, "epsilon": 1e-3},
        "slots": slots,
        "seed": seed,
        "report_every": 1,
        "gradient": "queue",
        "oracle": True,
    }


@dataclass
class RunConfig:
    network: NetworkSpec
    arrivals: ArrivalModel
    states: StateModel
    problem: obj.ProblemSpec
    slots: int
    seed: int
    report_every: int = 1
    gradient: str = "queue"
    oracle: bool = True
    backend: str | None = None
    out: Path | None = None
    export_arrivals: bool = False
    raw: dict | None = None

    def config_hash(self):
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def true_params(self):
        return obj.UncertainParams(self.states.stationary(), self.arrivals.limit_rates())


def _network_from(section, base):
    if "file" in section:
        return load_spec(base / section["file"])
    if "generate" in section:
        g = dict(section["generate"])
        return gen_network(g.pop("links"), seed=g.pop("seed", 0), **g)
    if "links" in section:
        return spec_from_dict(section)
    raise ConfigError("network section needs 'file', 'generate' or an inline spec")


def _rates(section, net, pi, key_rates, key_load):
    if key_rates in section:
        return np.asarray(section[key_rates], dtype=float)
    if key_load in section:
        # fraction of the capacity boundary along the all-ones direction
        s = max_throughput_scale(net, np.ones(net.n), pi)
        return float(section[key_load]) * s * np.ones(net.n)
    raise ConfigError(f"arrivals need '{key_rates}' or '{key_load}'")


def load_config(source, base=None, overrides=None):
    """Build a :class:`RunConfig` from a YAML path or an already-parsed dict."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        raw = yaml.safe_load(path.read_text())
        base = path.parent if base is None else Path(base)
    else:
        raw = json.loads(json.dumps(source))
        base = Path(".") if base is None else Path(base)
    for key, val in (overrides or {}).items():
        if val is not None:
            raw[key] = val
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {raw.get('schema_version')!r}")

    net = _network_from(raw["network"], base)

    st = raw.get("states", {"kind": "iid-categorical", "probs": [1.0]})
    states = StateModel(st["kind"], probs=st.get("probs"), transition=st.get("transition"),
                        initial=st.get("initial", 0))
    if states.M != net.M:
        raise ConfigError(f"state model has {states.M} states, network has {net.M}")
    pi = states.stationary()

    ar = raw["arrivals"]
    kind = ar["kind"]
    if kind == "replay":
        trace = load_arrival_csv(base / ar["trace_file"])
        arrivals = ArrivalModel("replay", np.zeros(trace.shape[1]), ar.get("a_max", 1), trace=trace)
    else:
        rates = _rates(ar, net, pi, "rates", "load")
        init = None
        if kind == "drifting-rate":
            init = _rates(ar, net, pi, "initial_rates", "initial_load")
        arrivals = ArrivalModel(kind, rates, ar.get("a_max", 1), initial_rates=init,
                                tau_d=ar.get("tau_d", 1e4))
    if arrivals.n != net.n:
        raise ConfigError(f"arrival model has {arrivals.n} links, network has {net.n}")

    pr = raw.get("problem", {})
    pen = obj.PenaltyConfig(pr.get("alpha", 2.0), pr.get("beta", 5e3), pr.get("epsilon", 1e-3),
                            pr.get("z_max"))
    problem = obj.ProblemSpec(pr.get("cost", "average-power"),
                              tuple(pr.get("constraints", ("rate-stability",))), pen,
                              pr.get("budget")).resolved(net, arrivals.a_max)

    slots = int(raw.get("slots", 100_000))
    if slots < 1:
        raise ConfigError("slots must be >= 1")
    seed = int(raw.get("seed", 0))
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must fit in 64 bits")
    gradient = raw.get("gradient", "queue")
    if gradient not in ("queue", "analytic"):
        raise ConfigError(f"unknown gradient path {gradient!r}")
    oracle = raw.get("oracle", True)
    if isinstance(oracle, str):
        oracle = oracle.lower() in ("on", "true", "yes", "1")
    out = raw.get("out")
    return RunConfig(net, arrivals, states, problem, slots, seed,
                     int(raw.get("report_every", 1)), gradient, bool(oracle), raw.get("backend"),
                     None if out is None else Path(out), bool(raw.get("export_arrivals", False)), raw)


# --- simulation --------------------------------------------------------------

@dataclass
class RunResult:
    config: RunConfig
    states: np.ndarray
    arrivals: np.ndarray
    modes: np.ndarray
    aux: np.ndarray
    departures: np.ndarray
    queues: np.ndarray
    metrics: dict
    summary: dict


def trajectory_metrics(cfg, states, arrivals, ks, us, ds, Qs):
    """Per-slot f, p, g, h, throughput from the decision trajectory."""
    net, problem = cfg.network, cfg.problem
    pk = pack(net)
    T = len(ks)
    t = np.arange(1, T + 1, dtype=float)
    A = np.cumsum(arrivals, axis=0)
    chosen_power = pk.power[states, ks]
    f = np.cumsum(chosen_power) / t if problem.cost == "average-power" else np.zeros(T)
    rows = []
    if problem.stability:
        N = np.cumsum(pk.RG[states, ks], axis=0)
        rows.append((A - N) / t[:, None])
    if problem.power_budget:
        K = problem.budget.size
        Pc = np.zeros((T, K))
        Pc[np.arange(T), ks] = chosen_power
        rows.append(np.cumsum(Pc, axis=0) / t[:, None] - problem.budget)
    h = np.hstack(rows)
    z = np.cumsum(us, axis=0) / t[:, None]
    alpha = problem.penalty.alpha
    p = np.linalg.norm(h + z, axis=1) ** alpha / alpha
    g = f + problem.penalty.beta * p
    D = np.cumsum(ds, axis=0)
    return {
        "t": np.arange(1, T + 1), "m": states, "k": ks, "f": f, "p": p, "g": g,
        "max_queue": Qs.max(axis=1), "h": h, "z": z, "throughput": D / t[:, None],
        "a_hat": A / t[:, None],
    }


def metrics_columns(n, C):
    return (["t", "m", "k", "f", "p", "g", "max_queue"] + [f"h_{i + 1}" for i in range(C)]
            + [f"thr_{i + 1}" for i in range(n)] + [f"a_{i + 1}" for i in range(n)])


def _fmt(v):
    return FLOAT_FMT % v


def write_metrics_csv(path, metrics, every=1, error=None):
    h = metrics["h"] if metrics else np.zeros((0, 0))
    thr = metrics["throughput"] if metrics else np.zeros((0, 0))
    n = thr.shape[1] if thr.size else 0
    C = h.shape[1] if h.size else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if metrics:
            w.writerow(metrics_columns(n, C))
            T = len(metrics["t"])
            idx = list(range(every - 1, T, every))
            if not idx or idx[-1] != T - 1:
                idx.append(T - 1)
            for i in idx:
                w.writerow([int(metrics["t"][i]), int(metrics["m"][i]), int(metrics["k"][i]),
                            _fmt(metrics["f"][i]), _fmt(metrics["p"][i]), _fmt(metrics["g"][i]),
                            int(metrics["max_queue"][i])]
                           + [_fmt(v) for v in h[i]] + [_fmt(v) for v in thr[i]]
                           + [_fmt(v) for v in metrics["a_hat"][i]])
        if error is not None:
            w.writerow(["#error", str(error)])


def _oracle(cfg, y, backend):
    res = solve_pen_fw(y, cfg.problem, cfg.network, backend=backend, a_max=cfg.arrivals.a_max)
    return {"f_star": res.f_at_x_star, "g_star": res.g_star, "fw_gap": res.gap,
            "fw_iterations": res.iterations}


def simulate(cfg, out=None):
    """Run ``cfg.slots`` slots; write metrics.csv and summary.yaml when ``out`` is set."""
    out = Path(out) if out is not None else cfg.out
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    s_rng, a_rng = make_streams(cfg.seed)
    states = state_trace(cfg.states, s_rng, cfg.slots)
    arrivals = arrival_trace(cfg.arrivals, a_rng, cfg.slots)
    try:
        ks, us, ds, Qs = run_trajectory(pack(cfg.network), states, arrivals, cfg.problem,
                                        fast=cfg.gradient == "queue", backend=cfg.backend)
    except Exception as exc:
        if out is not None:
            write_metrics_csv(out / "metrics.csv", None, error=exc)
        raise
    metrics = trajectory_metrics(cfg, states, arrivals, ks, us, ds, Qs)
    summary = summarize(cfg, metrics)
    if out is not None:
        write_metrics_csv(out / "metrics.csv", metrics, cfg.report_every)
        (out / "summary.yaml").write_text(yaml.safe_dump(summary, sort_keys=False))
        if cfg.export_arrivals:
            save_arrival_csv(arrivals, out / "arrivals.csv")
    return RunResult(cfg, states, arrivals, ks, us, ds, Qs, metrics, summary)


def summarize(cfg, metrics):
    T = len(metrics["t"])
    h = metrics["h"][-1]
    a_T = metrics["a_hat"][-1]
    thr = metrics["throughput"][-1]
    summary = {
        "config_hash": cfg.config_hash(),
        "slots": T,
        "seed": cfg.seed,
        "f_final": float(metrics["f"][-1]),
        "p_final": float(metrics["p"][-1]),
        "g_final": float(metrics["g"][-1]),
        "h_final": [float(v) for v in h],
        "max_queue": int(metrics["max_queue"].max()),
        "throughput_final": [float(v) for v in thr],
        "arrival_rate_final": [float(v) for v in a_T],
        "rate_mismatch_inf": float(np.max(np.abs(thr - a_T))),
        "epsilon": cfg.problem.penalty.epsilon,
        "beta": cfg.problem.penalty.beta,
    }
    if cfg.oracle:
        y_true = cfg.true_params()
        o = _oracle(cfg, y_true, cfg.backend)
        f_ref = o["f_star"]
        summary["oracle_true"] = o
        summary["cost_gap_true"] = abs(summary["f_final"] - f_ref) / max(f_ref, 1e-6)
        pi_T = np.bincount(metrics["m"], minlength=cfg.network.M) / T
        o_emp = _oracle(cfg, obj.UncertainParams(pi_T, a_T), cfg.backend)
        summary["oracle_empirical"] = o_emp
        summary["cost_gap_empirical"] = abs(summary["f_final"] - o_emp["f_star"]) / max(o_emp["f_star"], 1e-6)
    return summary


# --- report ------------------------------------------------------------------

def read_metrics_csv(path):
    path = Path(path)
    if not path.exists():
        raise ReportError(f"{path} not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["t"]:
        raise ReportError(f"{path}: row 1: missing metrics header")
    header = rows[0]
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if row and row[0] == "#error":
            raise ReportError(f"{path}: row {lineno}: run ended with error: {','.join(row[1:])}")
        if len(row) != len(header):
            raise ReportError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            data.append([float(v) for v in row])
        except ValueError as exc:
            raise ReportError(f"{path}: row {lineno}: {exc}") from exc
    if not data:
        raise ReportError(f"{path}: no data rows")
    return header, np.asarray(data)


def downsample_index(T):
    """Every ceil(T / 10^4)-th row plus the last."""
    step = max(1, math.ceil(T / REPORT_MAX_ROWS))
    idx = list(range(step - 1, T, step))
    if idx[-1] != T - 1:
        idx.append(T - 1)
    return np.asarray(idx)


def report(run_dir):
    """Write source_convergence.csv and cost_convergence.csv into ``run_dir``."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ReportError(f"{run_dir} is not a directory")
    header, data = read_metrics_csv(run_dir / "metrics.csv")
    col = {name: i for i, name in enumerate(header)}
    summary_path = run_dir / "summary.yaml"
    summary = yaml.safe_load(summary_path.read_text()) if summary_path.exists() else {}

    data = data[downsample_index(len(data))]
    t = data[:, col["t"]]
    a_cols = [c for c in header if c.startswith("a_")]
    a_hat = data[:, [col[c] for c in a_cols]]
    # windowed rate between consecutive kept rows: (A(t2) - A(t1)) / (t2 - t1)
    A = a_hat * t[:, None]
    prev_t = np.concatenate([[0.0], t[:-1]])
    prev_A = np.vstack([np.zeros(len(a_cols)), A[:-1]])
    windowed = (A - prev_A) / (t - prev_t)[:, None]

    src = run_dir / "source_convergence.csv"
    with open(src, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"rate_{c}" for c in a_cols] + [f"window_{c}" for c in a_cols])
        for i in range(len(t)):
            w.writerow([int(t[i])] + [_fmt(v) for v in a_hat[i]] + [_fmt(v) for v in windowed[i]])

    ref = summary.get("oracle_true", {}).get("f_star") if summary else None
    cost = run_dir / "cost_convergence.csv"
    with open(cost, "w", newline="") as fh:
        fh.write("# reference=f_star_fw\n" if ref is not None else "# reference=none (oracle disabled)\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "f", "g"] + (["f_ref"] if ref is not None else []))
        for i in range(len(t)):
            row = [int(t[i]), _fmt(data[i, col["f"]]), _fmt(data[i, col["g"]])]
            if ref is not None:
                row.append(_fmt(ref))
            w.writerow(row)
    return src, cost

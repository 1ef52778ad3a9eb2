"""Command line entry point: ``gpdsched {gen-network,simulate,solve,report}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import yaml

from . import harness
from .network import save_spec
from .solver import InfeasibleError, MAX_EXACT_MODES, solve_opt_exact_small, solve_pen_fw

log = logging.getLogger("gpdsched")


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _overrides(args):
    ov = {"seed": args.seed, "slots": args.slots}
    if getattr(args, "oracle", None) is not None:
        ov["oracle"] = args.oracle == "on"
    return ov


def cmd_gen_network(args):
    if args.config:
        raw = yaml.safe_load(Path(args.config).read_text())
        gen = dict(raw["network"]["generate"])
    else:
        gen = {"links": args.links}
        if args.density is not None:
            gen["density"] = args.density
        else:
            gen["radius"] = args.radius
    if args.seed is not None:
        gen["seed"] = args.seed
    links = gen.pop("links")
    spec = harness.gen_network(links, seed=gen.pop("seed", 0), **gen)
    out = Path(args.out) if args.out else Path("network.yaml")
    if out.suffix not in (".yaml", ".yml"):
        out.mkdir(parents=True, exist_ok=True)
        out = out / "network.yaml"
    save_spec(spec, out)
    print(f"wrote {out} ({spec.n} links, {spec.mode_counts[0]} modes)")
    return 0


def _run_one(cfg_path, args, multi):
    cfg = harness.load_config(cfg_path, overrides=_overrides(args))
    out = Path(args.out) if args.out else (cfg.out or Path("run"))
    if multi:
        out = out / Path(cfg_path).stem
    res = harness.simulate(cfg, out)
    s = res.summary
    line = (f"{cfg_path}: T={s['slots']} f={s['f_final']:.6g} max_queue={s['max_queue']} "
            f"max_h={max(s['h_final']):.3g}")
    if "cost_gap_true" in s:
        line += f" f*={s['oracle_true']['f_star']:.6g} gap={s['cost_gap_true']:.3g}"
    return f"{line} -> {out}"


def cmd_simulate(args):
    configs = args.config
    multi = len(configs) > 1
    if args.jobs > 1 and multi:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            lines = list(pool.map(lambda c: _run_one(c, args, multi), configs))
    else:
        lines = [_run_one(c, args, multi) for c in configs]
    for line in lines:
        print(line)
    return 0


def cmd_solve(args):
    cfg = harness.load_config(args.config[0], overrides=_overrides(args))
    out = Path(args.out) if args.out else Path("solve")
    out.mkdir(parents=True, exist_ok=True)
    y = cfg.true_params()
    res = solve_pen_fw(y, cfg.problem, cfg.network, iters=args.iters, tol=args.tol,
                       a_max=cfg.arrivals.a_max, step=args.step)
    rep = {
        "config_hash": cfg.config_hash(),
        "pi": [float(v) for v in y.pi],
        "a": [float(v) for v in y.a],
        "g_star": res.g_star,
        "f_at_x_star": res.f_at_x_star,
        "penalty_at_star": res.penalty_at_star,
        "fw_gap": res.gap,
        "iterations": res.iterations,
        "step": args.step,
        "h_at_star": [float(v) for v in res.h_at_star],
        "z_star": [float(v) for v in res.z_star],
        "x_star": [[float(v) for v in xm] for xm in res.x_star],
    }
    if sum(cfg.network.mode_counts) <= MAX_EXACT_MODES:
        try:
            ex = solve_opt_exact_small(y, cfg.problem, cfg.network, cfg.arrivals.a_max)
            rep["exact"] = {"f0": ex.f0, "f_eps": ex.f_eps,
                            "lambda0": [float(v) for v in ex.lambda0],
                            "lambda_eps": [float(v) for v in ex.lambda_eps],
                            "sensitivity_gap": ex.sensitivity_gap, "sensitivity_bound": ex.sensitivity_bound}
        except InfeasibleError as exc:
            rep["exact"] = {"infeasible": str(exc), "violation": exc.violation,
                            "certificate": [float(v) for v in exc.weights]}
    (out / "solve_report.yaml").write_text(yaml.safe_dump(rep, sort_keys=False))
    with open(out / "fw_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "g", "gap", "best_g"])
        for i, (g, gap, b) in enumerate(zip(res.trace_g, res.trace_gap, res.trace_best)):
            w.writerow([i, harness._fmt(g), harness._fmt(gap), harness._fmt(b)])
    print(f"g*={res.g_star:.9g} f(x*)={res.f_at_x_star:.9g} gap={res.gap:.3g} "
          f"iterations={res.iterations} -> {out}")
    return 0


def cmd_report(args):
    run_dir = args.run_dir or args.out
    if run_dir is None:
        raise harness.ReportError("report needs a run directory")
    src, cost = harness.report(run_dir)
    print(f"wrote {src} and {cost}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="gpdsched", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", action="append", required=config_required, default=None,
                        help="run config (YAML); repeat for several runs")
        sp.add_argument("--seed", type=_seed)
        sp.add_argument("--slots", type=int)
        sp.add_argument("--out")
        sp.add_argument("--oracle", choices=("on", "off"))

    g = sub.add_parser("gen-network", help="generate a random geometric network")
    common(g, False)
    g.add_argument("--links", type=int, default=harness.CANONICAL_LINKS)
    g.add_argument("--radius", type=float, default=harness.CANONICAL_RADIUS)
    g.add_argument("--density", type=float)
    g.set_defaults(func=cmd_gen_network)

    s = sub.add_parser("simulate", help="run the scheduler")
    common(s, True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("solve", help="static Frank-Wolfe / LP oracle for a config")
    common(v, True)
    v.add_argument("--iters", type=int, default=100_000)
    v.add_argument("--tol", type=float, default=1e-6)
    v.add_argument("--step", choices=("pairwise", "classic"), default="pairwise")
    v.set_defaults(func=cmd_solve)

    r = sub.add_parser("report", help="plot-data files from a run directory")
    r.add_argument("run_dir", nargs="?")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "gen-network" and args.config:
        args.config = args.config[0]
    try:
        return args.func(args)
    except (harness.ConfigError, harness.ReportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

import csv

import numpy as np
import pytest
import yaml

from gpdsched import harness
from gpdsched.cli import main
from gpdsched.harness import (ConfigError, ReportError, canonical_config, downsample_index, gen_network,
                              load_config, read_metrics_csv, report, simulate)
from gpdsched.network import validate_spec
from gpdsched.solver import solve_pen_fw


def small_config(**kw):
    cfg = {
        "schema_version": 1,
        "network": {"generate": {"links": 3, "radius": 0.4, "seed": 5}},
        "arrivals": {"kind": "iid-bernoulli-batch", "load": 0.6},
        "states": {"kind": "iid-categorical", "probs": [1.0]},
        "problem": {"cost": "average-power", "constraints": ["rate-stability"],
                    "alpha": 2, "beta": 5000, "epsilon": 0.001},
        "slots": 500,
        "seed": 3,
        "oracle": False,
    }
    cfg.update(kw)
    return cfg


# --- gen_network -----------------------------------------------------------------

def test_gen_network_seven_links():
    spec = gen_network(7, radius=0.3, seed=1)
    assert spec.n == 7 and spec.mode_counts[0] >= 8
    assert validate_spec(spec) == []
    again = gen_network(7, radius=0.3, seed=1)
    assert [m.departures for m in again.states[0].modes] == [m.departures for m in spec.states[0].modes]


def test_gen_network_radius_extremes():
    assert gen_network(7, radius=0.0, seed=1).mode_counts == [128]
    assert gen_network(7, radius=10.0, seed=1).mode_counts == [8]


def test_gen_network_density_and_layout():
    spec, graph, layout = gen_network(6, density=1.0, seed=2, return_layout=True)
    assert spec.mode_counts == [7] and len(graph.edges) == 15 and layout is None
    assert gen_network(6, density=0.0, seed=2).mode_counts == [64]
    _, _, layout = gen_network(4, radius=0.2, seed=2, return_layout=True)
    assert np.allclose(np.linalg.norm(layout["tx"] - layout["rx"], axis=1), 0.1)


def test_gen_network_errors():
    with pytest.raises(ConfigError):
        gen_network(3)
    with pytest.raises(ConfigError):
        gen_network(3, radius=0.1, density=0.1)
    with pytest.raises(ConfigError):
        gen_network(0, radius=0.1)


def test_canonical_network_is_documented_shape():
    spec = harness.canonical_network()
    assert spec.n == 7 and spec.mode_counts == [36]


# --- config ------------------------------------------------------------------------

def test_config_roundtrip_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(small_config()))
    cfg = load_config(path, overrides={"seed": 9, "slots": None})
    assert cfg.seed == 9 and cfg.slots == 500
    assert cfg.problem.penalty.z_max == pytest.approx(2 * (3 + cfg.network.states[0].powers.max()))
    assert cfg.config_hash() != load_config(path).config_hash()


@pytest.mark.parametrize("patch, msg", [
    ({"schema_version": 2}, "schema_version"),
    ({"slots": 0}, "slots"),
    ({"seed": -1}, "seed"),
    ({"gradient": "magic"}, "gradient"),
    ({"arrivals": {"kind": "iid-bernoulli-batch"}}, "rates"),
    ({"states": {"kind": "iid-categorical", "probs": [0.5, 0.5]}}, "states"),
    ({"network": {}}, "network"),
])
def test_config_errors(patch, msg):
    with pytest.raises(ConfigError, match=msg):
        load_config(small_config(**patch))


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "nope.yaml")


def test_network_file_reference(tmp_path):
    from gpdsched.network import save_spec
    save_spec(gen_network(3, radius=0.4, seed=5), tmp_path / "net.yaml")
    (tmp_path / "run.yaml").write_text(yaml.safe_dump(small_config(network={"file": "net.yaml"})))
    a = simulate(load_config(tmp_path / "run.yaml"))
    b = simulate(load_config(small_config()))
    assert np.array_equal(a.modes, b.modes)


# --- simulate ------------------------------------------------------------------------

def test_single_slot_run(tmp_path):
    simulate(load_config(small_config(slots=1)), tmp_path)
    rows = list(csv.reader(open(tmp_path / "metrics.csv")))
    assert len(rows) == 2 and rows[1][0] == "1"


def test_golden_header(tmp_path):
    simulate(load_config(small_config(slots=3)), tmp_path)
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert header == "t,m,k,f,p,g,max_queue,h_1,h_2,h_3,thr_1,thr_2,thr_3,a_1,a_2,a_3"


def test_byte_identical_outputs(tmp_path):
    for d in ("a", "b"):
        simulate(load_config(small_config(slots=3000, oracle=True)), tmp_path / d)
    for name in ("metrics.csv", "summary.yaml"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    simulate(load_config(small_config(slots=3000, seed=4)), tmp_path / "c")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "c" / "metrics.csv").read_bytes()


def test_report_every(tmp_path):
    simulate(load_config(small_config(slots=105, report_every=10)), tmp_path)
    _, data = read_metrics_csv(tmp_path / "metrics.csv")
    assert data[:, 0].astype(int).tolist() == list(range(10, 101, 10)) + [105]


def test_metrics_match_reference_simulation():
    from gpdsched.scheduler import Simulation
    cfg = load_config(small_config(slots=400))
    res = simulate(cfg)
    sim = Simulation(cfg.network, cfg.problem, cfg.arrivals, cfg.states, seed=cfg.seed)
    for i, rec in enumerate(sim.run(400)):
        assert rec["k"] == res.modes[i]
        assert rec["f"] == pytest.approx(res.metrics["f"][i], rel=1e-12)
        assert rec["g"] == pytest.approx(res.metrics["g"][i], rel=1e-9)
        assert np.allclose(rec["h"], res.metrics["h"][i], atol=1e-12)


def test_summary_oracle_uses_run_problem(tmp_path):
    cfg = load_config(small_config(slots=2000, oracle=True))
    res = simulate(cfg, tmp_path)
    s = yaml.safe_load((tmp_path / "summary.yaml").read_text())
    assert s["config_hash"] == cfg.config_hash()
    ref = solve_pen_fw(cfg.true_params(), cfg.problem, cfg.network)
    assert s["oracle_true"]["f_star"] == pytest.approx(ref.f_at_x_star, rel=1e-12)
    assert s["cost_gap_true"] == pytest.approx(abs(s["f_final"] - ref.f_at_x_star) / ref.f_at_x_star)
    assert "cost_gap_empirical" in s and res.summary == s


def test_arrival_export_and_replay(tmp_path):
    cfg = load_config(small_config(slots=800, export_arrivals=True))
    first = simulate(cfg, tmp_path / "orig")
    replay = small_config(slots=800, arrivals={"kind": "replay", "trace_file": "orig/arrivals.csv"})
    (tmp_path / "replay.yaml").write_text(yaml.safe_dump(replay))
    second = simulate(load_config(tmp_path / "replay.yaml"), tmp_path / "rep")
    assert np.array_equal(first.arrivals, second.arrivals)
    assert np.array_equal(first.modes, second.modes)


def test_markov_multi_state_run():
    from gpdsched.network import NetworkSpec, StateConfig, spec_to_dict
    g = gen_network(3, radius=0.4, seed=5)
    modes = g.states[0].modes
    fade = [type(m)(m.departures, 2 * m.power) for m in modes]
    net = NetworkSpec(3, [StateConfig(modes, np.eye(3)), StateConfig(fade, np.eye(3))], None)
    cfg = small_config(network=spec_to_dict(net), slots=5000, oracle=True,
                       states={"kind": "markov-chain", "transition": [[0.9, 0.1], [0.2, 0.8]]})
    res = simulate(load_config(cfg))
    assert res.summary["max_queue"] < 100
    assert max(res.summary["h_final"]) <= 1e-2


def test_error_marker_row(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise AssertionError("queue accounting identity failed in 1 checks")
    monkeypatch.setattr(harness, "run_trajectory", boom)
    with pytest.raises(AssertionError):
        simulate(load_config(small_config()), tmp_path)
    text = (tmp_path / "metrics.csv").read_text()
    assert text.startswith("#error,")
    with pytest.raises(ReportError, match="row 1"):
        report(tmp_path)


# --- report ----------------------------------------------------------------------------

def test_downsample_rule():
    idx = downsample_index(100_000)
    assert len(idx) <= 10_000 and idx[-1] == 99_999 and np.all(np.diff(idx) == 10)
    assert downsample_index(7).tolist() == list(range(7))
    idx = downsample_index(10_001)
    assert len(idx) <= 10_001 and idx[-1] == 10_000 and idx[0] == 1


def test_report_files(tmp_path):
    simulate(load_config(small_config(slots=25_000, oracle=True)), tmp_path)
    src, cost = report(tmp_path)
    lines = cost.read_text().splitlines()
    assert lines[0] == "# reference=f_star_fw" and lines[1] == "t,f,g,f_ref"
    assert len(lines) - 2 <= 10_000 and lines[-1].startswith("25000,")
    src_rows = list(csv.reader(open(src)))
    assert src_rows[0][:2] == ["t", "rate_a_1"] and len(src_rows) == len(lines) - 1
    # windowed rate over the whole run equals the cumulative rate
    _, data = read_metrics_csv(tmp_path / "metrics.csv")
    assert float(src_rows[-1][1]) == pytest.approx(data[-1, 13])


def test_report_without_oracle(tmp_path):
    simulate(load_config(small_config(slots=50)), tmp_path)
    _, cost = report(tmp_path)
    lines = cost.read_text().splitlines()
    assert lines[0].startswith("# reference=none") and lines[1] == "t,f,g"


def test_report_errors(tmp_path):
    with pytest.raises(ReportError):
        report(tmp_path / "missing")
    with pytest.raises(ReportError, match="not found"):
        report(tmp_path)
    simulate(load_config(small_config(slots=20)), tmp_path)
    path = tmp_path / "metrics.csv"
    lines = path.read_text().splitlines()
    lines[5] = lines[5].replace(",", ";", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ReportError, match="row 6"):
        report(tmp_path)


# --- CLI -------------------------------------------------------------------------------

def test_cli_end_to_end(tmp_path, capsys):
    net = tmp_path / "net.yaml"
    assert main(["gen-network", "--links", "4", "--radius", "0.3", "--seed", "7", "--out", str(net)]) == 0
    cfg = small_config(network={"file": str(net)})
    cfg_path = tmp_path / "run.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    run = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg_path), "--slots", "300", "--seed", "5",
                 "--oracle", "on", "--out", str(run)]) == 0
    s = yaml.safe_load((run / "summary.yaml").read_text())
    assert s["slots"] == 300 and s["seed"] == 5 and "cost_gap_true" in s
    assert main(["report", str(run)]) == 0
    assert (run / "cost_convergence.csv").exists()
    sol = tmp_path / "sol"
    assert main(["solve", "--config", str(cfg_path), "--out", str(sol)]) == 0
    rep = yaml.safe_load((sol / "solve_report.yaml").read_text())
    assert rep["g_star"] == pytest.approx(rep["f_at_x_star"] + 5000 * rep["penalty_at_star"])
    assert "exact" in rep and rep["exact"]["f_eps"] >= rep["f_at_x_star"] - 1e-6
    assert (sol / "fw_trace.csv").read_text().startswith("iteration,g,gap,best_g\n")
    capsys.readouterr()


def test_cli_parallel_runs_match_serial(tmp_path):
    paths = []
    for seed in (1, 2):
        p = tmp_path / f"c{seed}.yaml"
        p.write_text(yaml.safe_dump(small_config(seed=seed, slots=2000)))
        paths.append(str(p))
    args = ["simulate", "--config", paths[0], "--config", paths[1]]
    assert main(args + ["--out", str(tmp_path / "ser")]) == 0
    assert main(args + ["--jobs", "2", "--out", str(tmp_path / "par")]) == 0
    for name in ("c1", "c2"):
        assert ((tmp_path / "ser" / name / "metrics.csv").read_bytes()
                == (tmp_path / "par" / name / "metrics.csv").read_bytes())


def test_cli_errors(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert "does not exist" in capsys.readouterr().err
    assert main(["report", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["simulate", "--config", "x.yaml", "--seed", "-3"])
    with pytest.raises(SystemExit):
        main(["simulate", "--config", "x.yaml", "--oracle", "maybe"])


def test_canonical_config_is_valid():
    cfg = load_config(canonical_config(slots=10))
    assert cfg.arrivals.rates == pytest.approx(np.full(7, 0.7 / 3))
    drift = load_config(canonical_config(slots=10, arrivals="drifting-rate"))
    assert drift.arrivals.initial_rates == pytest.approx(1.25 * cfg.arrivals.rates)

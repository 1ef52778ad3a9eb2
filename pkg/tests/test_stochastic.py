import numpy as np
import pytest

from gpdsched.stochastic import (ArrivalModel, ConfigError, CumulativeTracker, StateModel,
                                 arrival_trace, empirical_average, load_arrival_csv, make_streams,
                                 save_arrival_csv, state_trace, step_arrivals, step_state)

T = 100_000


def rng(seed=0, stream=1):
    return make_streams(seed)[stream]


# --- arrivals ----------------------------------------------------------------

def test_deterministic_rate_unit():
    m = ArrivalModel("deterministic-rate", [1, 0])
    for t in (1, 2, 17, 10_000):
        assert step_arrivals(m, None, t).tolist() == [1, 0]


def test_deterministic_rate_fractional_mean():
    m = ArrivalModel("deterministic-rate", [0.3, 0.75])
    tr = arrival_trace(m, None, 1000)
    assert tr.sum(axis=0).tolist() == [300, 750]
    assert tr.max() <= 1


def test_iid_mean():
    m = ArrivalModel("iid-bernoulli-batch", [0.3, 0.3], a_max=1)
    tr = arrival_trace(m, rng(), T)
    assert np.all(np.abs(tr.mean(axis=0) - 0.3) <= 0.01)


def test_iid_batch_bound_and_mean():
    m = ArrivalModel("iid-bernoulli-batch", [1.5, 0.2], a_max=3)
    tr = arrival_trace(m, rng(3), T)
    assert tr.min() >= 0 and tr.max() <= 3
    assert np.all(np.abs(tr.mean(axis=0) - [1.5, 0.2]) <= 0.02)


def test_drifting_window_mean():
    rates = np.array([0.3, 0.5])
    m = ArrivalModel("drifting-rate", rates, initial_rates=[0.5, 0.7], tau_d=1e4)
    tr = arrival_trace(m, rng(5), T)
    window = tr[90_000 - 1:].mean(axis=0)
    assert np.all(np.abs(window - rates) <= 0.02)
    # the early part is visibly above the target
    assert np.all(tr[:5000].mean(axis=0) > rates + 0.1)


def test_drifting_mean_formula():
    m = ArrivalModel("drifting-rate", [0.2], initial_rates=[0.6], tau_d=100)
    assert m.mean_at(100)[0] == pytest.approx(0.2 + 0.4 * 0.5)
    assert m.mean_at(1e9)[0] == pytest.approx(0.2, abs=1e-6)


@pytest.mark.parametrize("kwargs", [
    dict(kind="iid-bernoulli-batch", rates=[1.2], a_max=1),
    dict(kind="iid-bernoulli-batch", rates=[-0.1]),
    dict(kind="drifting-rate", rates=[0.2]),
    dict(kind="drifting-rate", rates=[0.2], initial_rates=[2.0]),
    dict(kind="poisson", rates=[0.2]),
    dict(kind="replay", rates=[0.0]),
])
def test_arrival_config_errors(kwargs):
    with pytest.raises(ConfigError):
        ArrivalModel(**kwargs)


def test_step_matches_trace():
    for kind, extra in [("iid-bernoulli-batch", {}), ("drifting-rate", {"initial_rates": [0.9, 0.1, 0.5]}),
                        ("deterministic-rate", {})]:
        m = ArrivalModel(kind, [0.4, 0.6, 1.7], a_max=2, **extra)
        r1, r2 = rng(11), rng(11)
        stepped = np.array([step_arrivals(m, r1, t) for t in range(1, 301)])
        assert np.array_equal(stepped, arrival_trace(m, r2, 300))


def test_arrival_determinism():
    m = ArrivalModel("iid-bernoulli-batch", [0.3, 0.6], a_max=2)
    assert np.array_equal(arrival_trace(m, rng(42), 1000), arrival_trace(m, rng(42), 1000))
    assert not np.array_equal(arrival_trace(m, rng(42), 1000), arrival_trace(m, rng(43), 1000))


def test_csv_export_and_replay(tmp_path):
    m = ArrivalModel("iid-bernoulli-batch", [0.3, 0.6, 0.1], a_max=2)
    tr = arrival_trace(m, rng(7), 500)
    path = tmp_path / "arrivals.csv"
    save_arrival_csv(tr, path)
    assert path.read_text().splitlines()[0] == "t,a_1,a_2,a_3"
    back = load_arrival_csv(path)
    assert np.array_equal(back, tr)
    replay = ArrivalModel("replay", np.zeros(3), a_max=2, trace=back)
    assert np.array_equal(arrival_trace(replay, None, 500), tr)
    assert np.array_equal(step_arrivals(replay, None, 37), tr[36])
    assert np.allclose(replay.limit_rates(), tr.mean(axis=0))


def test_csv_bad_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,a_1\n1,0\n2,x\n")
    with pytest.raises(ConfigError, match="line 3"):
        load_arrival_csv(path)


# --- states ------------------------------------------------------------------

def test_single_state_always_zero():
    m = StateModel("iid-categorical", probs=[1.0])
    r = rng(0, 0)
    assert all(step_state(m, r) == 0 for _ in range(100))
    assert not state_trace(m, r, 50).any()


def test_iid_categorical_occupancy():
    m = StateModel("iid-categorical", probs=[0.5, 0.5])
    tr = state_trace(m, rng(1, 0), T)
    occ = np.bincount(tr, minlength=2) / T
    assert np.all(np.abs(occ - 0.5) <= 0.01)


def test_markov_stationary_and_occupancy():
    P = np.array([[0.9, 0.1], [0.1, 0.9]])
    m = StateModel("markov-chain", transition=P)
    pi = m.stationary()
    # independent oracle: left eigenvector of P for eigenvalue 1
    w, v = np.linalg.eig(P.T)
    ref = np.real(v[:, np.argmin(np.abs(w - 1))])
    ref /= ref.sum()
    assert np.allclose(pi, ref) and np.allclose(pi, [0.5, 0.5])
    occ = np.bincount(state_trace(m, rng(2, 0), T), minlength=2) / T
    assert np.all(np.abs(occ - pi) <= 0.02)


def test_markov_asymmetric_stationary():
    P = np.array([[0.5, 0.5, 0.0], [0.2, 0.3, 0.5], [0.4, 0.0, 0.6]])
    pi = StateModel("markov-chain", transition=P).stationary()
    assert np.allclose(pi @ P, pi) and pi.sum() == pytest.approx(1.0)


def test_state_step_matches_trace():
    for m in (StateModel("iid-categorical", probs=[0.2, 0.3, 0.5]),
              StateModel("markov-chain", transition=[[0.7, 0.3], [0.4, 0.6]], initial=1)):
        r1, r2 = rng(9, 0), rng(9, 0)
        prev = None
        stepped = []
        for _ in range(500):
            prev = step_state(m, r1, prev)
            stepped.append(prev)
        assert stepped == state_trace(m, r2, 500).tolist()


@pytest.mark.parametrize("kwargs", [
    dict(kind="iid-categorical", probs=[0.5, 0.6]),
    dict(kind="iid-categorical", probs=[1.1, -0.1]),
    dict(kind="markov-chain", transition=[[1.0, 0.0], [0.0, 1.0]]),
    dict(kind="markov-chain", transition=[[0.5, 0.5]]),
    dict(kind="markov-chain"),
])
def test_state_config_errors(kwargs):
    with pytest.raises(ConfigError):
        StateModel(**kwargs)


# --- trackers ----------------------------------------------------------------

def test_average_division():
    tr = CumulativeTracker(2)
    tr.total = np.array([10.0, 20.0])
    tr.t = 10
    assert empirical_average(tr).tolist() == [1.0, 2.0]


def test_average_after_increments():
    tr = CumulativeTracker(2, bound=1).add([1, 0]).add([0, 1])
    assert empirical_average(tr).tolist() == [0.5, 0.5]


def test_average_at_zero_errors():
    with pytest.raises(ValueError):
        empirical_average(CumulativeTracker(3))


def test_tracker_bound():
    with pytest.raises(ValueError):
        CumulativeTracker(2, bound=1).add([2, 0])


# --- SLLN desk check: |Y(T)/T - y| <= 3 sigma / sqrt(T) ------------------------

def _slln_ok(samples, mean):
    Tn = samples.shape[0]
    sd = samples.std(axis=0, ddof=1)
    return np.all(np.abs(samples.mean(axis=0) - mean) <= 3 * sd / np.sqrt(Tn))


def test_slln_iid_arrivals():
    m = ArrivalModel("iid-bernoulli-batch", [0.3, 1.1], a_max=2)
    assert _slln_ok(arrival_trace(m, rng(21), T), m.rates)


def test_slln_iid_states():
    m = StateModel("iid-categorical", probs=[0.2, 0.3, 0.5])
    tr = state_trace(m, rng(22, 0), T)
    assert _slln_ok(np.eye(3)[tr], m.stationary())


def test_slln_deterministic_rate():
    m = ArrivalModel("deterministic-rate", [0.37])
    tr = arrival_trace(m, None, T)
    assert abs(tr.mean() - 0.37) <= 1 / T


def test_slln_markov_batch_means():
    # successive samples are correlated; use batch means for the spread
    m = StateModel("markov-chain", transition=[[0.9, 0.1], [0.1, 0.9]])
    tr = np.eye(2)[state_trace(m, rng(23, 0), T)]
    batches = tr.reshape(100, -1, 2).mean(axis=1)
    assert _slln_ok(batches, m.stationary())


def test_slln_drifting_tail():
    # drifting sources are not stationary; check the tail window against its analytic mean
    m = ArrivalModel("drifting-rate", [0.3], initial_rates=[0.6], tau_d=1e4)
    tr = arrival_trace(m, rng(24), T)
    tail = tr[50_000:]
    expected = m.mean_at(np.arange(50_001, T + 1)).mean(axis=0)
    assert _slln_ok(tail, expected)

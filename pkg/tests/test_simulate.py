import numpy as np
import pytest
import scipy.sparse as sp

from sisclust import (
    RateNetwork,
    load_event_log,
    merge_summaries,
    metastable_sample,
    metastable_sample_rank1,
    qsd_cluster_chain,
    simulate_sis,
    SimulationSummary,
)
from sisclust.errors import SubcriticalError, ValidationError

from conftest import complete_graph, one_cluster_system


def single_node(delta=2.0):
    return RateNetwork(sp.csr_matrix((1, 1)), np.array([float(delta)]))


def test_no_links_heals_only():
    net = RateNetwork(sp.csr_matrix((3, 3)), np.ones(3))
    tr = simulate_sis(net, [0, 1, 2], 1e9, seed=1)
    assert tr.absorbed
    assert np.all(tr.kinds == 0)
    assert len(tr) == 3
    assert np.all(tr.final_state == 0)


def test_absorption_time_exponential():
    """Absorption of one infected node with delta=2 is Exp(2); the mean
    over 10^4 runs must land within 3 standard errors of 1/2."""
    net = single_node(2.0)
    times = np.array([simulate_sis(net, [0], 1e9, s).absorption_time
                      for s in range(10_000)])
    assert abs(times.mean() - 0.5) <= 3 * 0.5 / 100


def test_absorption_probability_binomial():
    # P(absorbed by T) = 1 - exp(-2T); 3-sigma binomial band on 2000 runs
    net = single_node(2.0)
    T = 0.3
    p = 1 - np.exp(-2 * T)
    hits = np.mean([simulate_sis(net, [0], T, 20_000 + s).absorbed
                    for s in range(2000)])
    assert abs(hits - p) <= 3 * np.sqrt(p * (1 - p) / 2000)


def test_k10_plateau_level():
    """While a K_10 (beta=1, delta=4) epidemic survives, its running
    average sits near the metastable level of about 5.3 infected. The
    chain's mean lifetime from all-infected is only ~6.7, so the average
    is taken over each trajectory's own surviving stretch."""
    net = complete_graph(10, 1.0, 4.0)
    for seed in (1, 3, 10, 12):
        tr = simulate_sis(net, range(10), 200.0, seed)
        assert tr.absorbed and tr.end_time >= 8.0
        assert 4.0 <= tr.time_average_infected(1.0, tr.end_time) <= 8.0


def test_trajectory_trace_consistency():
    net = complete_graph(6, 1.0, 2.0)
    tr = simulate_sis(net, [0, 1], 5.0, seed=8)
    times, counts = tr.infected_count_trace()
    assert np.all(np.diff(times) >= 0)
    assert counts[-1] == int(tr.final_state.sum())
    assert counts.min() >= 0 and counts.max() <= 6


def test_simulation_determinism(tmp_path):
    net = complete_graph(8, 1.0, 3.0)
    a = simulate_sis(net, range(8), 50.0, seed=5)
    b = simulate_sis(net, range(8), 50.0, seed=5)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.nodes, b.nodes)
    np.testing.assert_array_equal(a.kinds, b.kinds)
    log = tmp_path / "events.bin"
    a.to_event_log(log)
    rec = load_event_log(log)
    np.testing.assert_array_equal(rec["time"], a.times)
    np.testing.assert_array_equal(rec["node"], a.nodes)
    np.testing.assert_array_equal(rec["kind"], a.kinds)


def test_simulate_validation():
    net = complete_graph(4)
    with pytest.raises(ValidationError):
        simulate_sis(net, [], 10.0, seed=0)
    with pytest.raises(ValidationError):
        simulate_sis(net, [9], 10.0, seed=0)
    with pytest.raises(ValidationError):
        simulate_sis(net, [0], -1.0, seed=0)


def test_metastable_sample_matches_qsd():
    net, _, cl = one_cluster_system(10, 1.0, 4.0)
    oracle = qsd_cluster_chain(cl)
    s = metastable_sample(net, 1e4, seed=1)
    assert abs(s.mean / oracle.mean - 1) <= 0.05
    assert abs(s.std / oracle.std - 1) <= 0.10
    assert s.samples.size == 40_000
    assert s.restarts > 0  # mean lifetime ~6.7 forces many restarts
    assert s.absorbed


def test_metastable_sample_subcritical():
    net = RateNetwork.from_edges([0, 1], [1, 0], [1.0, 1.0], np.full(2, 4.0))
    with pytest.raises(SubcriticalError):
        metastable_sample(net, 100.0, seed=0)


def test_metastable_sample_node_frequency():
    # every node of K_n is exchangeable: frequencies agree with mean/n
    net, _, _ = one_cluster_system(10, 1.0, 4.0)
    s = metastable_sample(net, 5e3, seed=2)
    np.testing.assert_allclose(s.node_frequency, s.mean / 10, rtol=0.08)


def test_rank1_sampler_matches_dense():
    net, _, cl = one_cluster_system(10, 1.0, 4.0)
    oracle = qsd_cluster_chain(cl)
    s = metastable_sample_rank1(np.ones(10), np.ones(10), np.full(10, 4.0),
                                5e3, seed=1)
    assert abs(s.mean / oracle.mean - 1) <= 0.05
    assert abs(s.std / oracle.std - 1) <= 0.10


def test_rank1_sampler_subcritical():
    with pytest.raises(SubcriticalError):
        metastable_sample_rank1(np.ones(4) * 0.1, np.ones(4) * 0.1,
                                np.ones(4), 100.0, seed=0)


def test_summary_round_trips(tmp_path):
    net, _, _ = one_cluster_system(10, 1.0, 4.0)
    s = metastable_sample(net, 500.0, seed=3)
    path = tmp_path / "summary.json"
    s.to_json(path)
    back = SimulationSummary.from_json(path)
    assert back.mean == s.mean
    # samples round trip as a histogram, so summation order may shift
    assert back.std == pytest.approx(s.std, rel=1e-12)
    np.testing.assert_array_equal(np.sort(back.samples), np.sort(s.samples))
    assert back.restarts == s.restarts
    np.testing.assert_allclose(back.node_frequency, s.node_frequency)

    csv = tmp_path / "samples.csv"
    s.samples_to_csv(csv)
    lines = csv.read_text().splitlines()
    assert lines[0] == "index,total_infected"
    assert len(lines) == s.samples.size + 1


def test_merge_summaries():
    net, _, _ = one_cluster_system(10, 1.0, 4.0)
    a = metastable_sample(net, 400.0, seed=4)
    b = metastable_sample(net, 400.0, seed=5)
    m = merge_summaries([a, b])
    assert m.samples.size == a.samples.size + b.samples.size
    assert m.mean == pytest.approx((a.mean + b.mean) / 2, rel=1e-12)
    assert m.restarts == a.restarts + b.restarts
    m2 = merge_summaries([a, b])
    np.testing.assert_array_equal(m.samples, m2.samples)


def test_ecdf_property():
    net, _, _ = one_cluster_system(10, 1.0, 4.0)
    s = metastable_sample(net, 300.0, seed=6)
    values, cum = s.ecdf
    assert np.all(np.diff(values) > 0)
    assert cum[-1] == pytest.approx(1.0)
    assert np.all(np.diff(cum) > 0)

import numpy as np
import pytest
import scipy.sparse as sp

from sisclust import (
    RateNetwork,
    generate_configuration_model,
    load_bundled_surrogate,
    load_network,
    save_network,
    spectral_threshold,
)
from sisclust.errors import CapacityError, ParseError, ValidationError

from conftest import complete_graph


def test_two_node_symmetric():
    net = RateNetwork.from_edges([0, 1], [1, 0], [1.0, 1.0], np.ones(2))
    assert net.n == 2
    assert net.edge_count == 2
    assert net.rates[0, 1] == 1.0 and net.rates[1, 0] == 1.0


def test_self_loop_dropped():
    with pytest.warns(UserWarning, match="self-loop"):
        net = RateNetwork.from_edges([0], [0], [5.0], np.ones(1))
    assert net.edge_count == 0
    assert net.self_loops_dropped == 1


def test_duplicate_edges_sum():
    net = RateNetwork.from_edges([0, 0, 2], [1, 1, 0], [1.0, 2.5, 1.0], np.ones(3))
    assert net.rates[0, 1] == 3.5
    assert net.edge_count == 2


def test_construction_validation():
    with pytest.raises(ValidationError):
        RateNetwork.from_edges([0], [1], [-1.0], np.ones(2))
    with pytest.raises(ValidationError):
        RateNetwork.from_edges([0], [5], [1.0], np.ones(2), n=2)
    with pytest.raises(ValidationError):
        RateNetwork.from_edges([0], [1], [1.0], np.ones(3), n=2)
    with pytest.raises(ValidationError):
        RateNetwork.from_edges([0], [1], [1.0], np.array([1.0, 0.0]))


def test_strengths():
    net = RateNetwork.from_edges([0, 0, 2], [1, 2, 1], [2.0, 1.0, 0.5], np.ones(3))
    np.testing.assert_allclose(net.out_strength(), [3.0, 0.0, 0.5])
    np.testing.assert_allclose(net.in_strength(), [0.0, 2.5, 1.0])


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    net = generate_configuration_model(60, 2.0, 6.0, seed=9)
    net = RateNetwork(net.rates, rng.uniform(0.5, 2.0, net.n))
    edges = tmp_path / "edges.csv"
    curing = tmp_path / "curing.csv"
    save_network(net, edges, curing)
    back = load_network(edges, curing)
    assert back == net
    # exact float round trip, not just approximate
    np.testing.assert_array_equal(back.rates.data, net.rates.data)
    np.testing.assert_array_equal(back.curing, net.curing)


def test_load_parse_error(tmp_path):
    edges = tmp_path / "edges.csv"
    curing = tmp_path / "curing.csv"
    edges.write_text("0,1,1.0\n0,zzz,2.0\n")
    curing.write_text("0,1.0\n1,1.0\n")
    with pytest.raises(ParseError) as exc:
        load_network(edges, curing)
    assert "edges.csv" in str(exc.value)
    assert ":2" in str(exc.value)  # offending line number


def test_generator_deterministic():
    a = generate_configuration_model(300, 2.0, 10.0, seed=4)
    b = generate_configuration_model(300, 2.0, 10.0, seed=4)
    c = generate_configuration_model(300, 2.0, 10.0, seed=5)
    assert a == b
    assert a != c


def test_generator_validation():
    with pytest.raises(ValidationError):
        generate_configuration_model(1, 2.0, 5.0, seed=0)
    with pytest.raises(ValidationError):
        generate_configuration_model(100, 1.0, 5.0, seed=0)
    with pytest.raises(ValidationError):
        generate_configuration_model(100, 2.0, 0.0, seed=0)


def test_generator_two_nodes():
    net = generate_configuration_model(2, 2.0, 1.0, seed=1, min_degree=1)
    assert net.n == 2
    assert net.edge_count == 2  # both directions of the single link


def test_generator_tail_exponent():
    """Hill estimate of the degree tail, averaged over the top-k order
    statistics k = 40..100 to damp single-k noise, lands within 0.3 of
    the requested exponent."""
    net = generate_configuration_model(500, 2.0, 15.0, seed=7)
    deg = np.diff(net.rates.indptr)
    d = np.sort(deg.astype(float))[::-1]

    def hill(k):
        top = d[: k + 1]
        return 1.0 / np.mean(np.log(top[:-1] / top[-1]))

    est = np.mean([hill(k) for k in range(40, 101, 10)])
    assert abs(est - 2.0) <= 0.3


def test_spectral_threshold_complete():
    # K_10 with beta=1, delta=4: dominant eigenvalue of (J - I)/4
    assert spectral_threshold(complete_graph(10, 1.0, 4.0)) == pytest.approx(2.25, abs=1e-9)


def test_spectral_threshold_edgeless():
    net = RateNetwork(sp.csr_matrix((4, 4)), np.ones(4))
    assert spectral_threshold(net) == 0.0


def test_spectral_threshold_two_node():
    net = RateNetwork.from_edges([0, 1], [1, 0], [3.0, 3.0], np.full(2, 2.0))
    assert spectral_threshold(net) == pytest.approx(1.5, abs=1e-10)


def test_spectral_threshold_matches_dense_eig():
    rng = np.random.default_rng(11)
    A = rng.random((40, 40)) * (rng.random((40, 40)) < 0.2)
    np.fill_diagonal(A, 0.0)
    curing = rng.uniform(0.5, 2.0, 40)
    net = RateNetwork(sp.csr_matrix(A), curing)
    want = float(np.abs(np.linalg.eigvals(A.T / curing)).max())
    assert spectral_threshold(net) == pytest.approx(want, rel=1e-8)


def test_dense_capacity():
    net = complete_graph(12, 1.0, 1.0)
    with pytest.raises(CapacityError):
        net.dense_rates(threshold=10)


def test_unreachable_mean_degree():
    # the degree cap bounds the achievable mean from above
    with pytest.raises(ValidationError):
        generate_configuration_model(50, 2.0, 49.0, seed=0, max_degree=3)


def test_bundled_surrogate_features():
    net = load_bundled_surrogate()
    assert net.n == 500
    assert spectral_threshold(net) == pytest.approx(2.0, abs=1e-9)
    out_deg = np.diff(net.rates.indptr)
    in_deg = np.bincount(net.rates.indices, minlength=net.n)
    assert int((out_deg == 0).sum()) == 8  # pure sinks
    assert int((in_deg == 0).sum()) == 8   # pure sources
    assert np.all(net.rates.data > 0)
    assert net.curing.min() > 0.8 and net.curing.max() < 1.25

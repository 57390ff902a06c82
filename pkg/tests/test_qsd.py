import numpy as np
import pytest
import scipy.sparse as sp

from sisclust import (
    Clustering,
    ExactDistribution,
    RateNetwork,
    qsd_cluster_chain,
    qsd_exact_chain,
    singleton_clustering,
    node_profiles,
)
from sisclust.errors import CapacityError, ValidationError

from conftest import complete_graph, one_cluster_system, random_factor_net


def test_single_node_qsd():
    net = RateNetwork(sp.csr_matrix((1, 1)), np.ones(1))
    d = qsd_exact_chain(net)
    np.testing.assert_array_equal(d.support, [0, 1])
    np.testing.assert_allclose(d.probability, [0.0, 1.0])
    assert d.mean == 1.0


def test_two_node_analytic():
    """Symmetric 2-node chain with beta=10, delta=1. The sub-generator on
    {one infected, two infected} gives a quadratic for the decay rate,
    lam = (-13 + sqrt(161))/2, and QSD mass (11 + lam)/(13 + lam) at 2."""
    net = RateNetwork.from_edges([0, 1], [1, 0], [10.0, 10.0], np.ones(2))
    d = qsd_exact_chain(net)
    lam = (-13 + np.sqrt(161)) / 2
    want = (11 + lam) / (13 + lam)
    assert d.cdf(1) == pytest.approx(1 - want, abs=1e-10)
    assert d.probability[-1] == pytest.approx(want, abs=1e-10)
    assert d.probability[-1] > 0.8


def test_k10_oracle_values():
    # frozen reference values for the K_10, beta=1, delta=4 instance
    net = complete_graph(10, 1.0, 4.0)
    d = qsd_exact_chain(net)
    assert d.mean == pytest.approx(5.348378842034407, abs=1e-8)
    assert d.std == pytest.approx(2.083710839740928, abs=1e-8)


def test_cluster_chain_k10_lumping():
    """K_10 is exchangeable, so the exact 2^10-state chain lumps onto the
    11-state birth-death cluster chain without error."""
    net, _, cl = one_cluster_system(10, 1.0, 4.0)
    full = qsd_exact_chain(net)
    lumped = qsd_cluster_chain(cl)
    np.testing.assert_array_equal(full.support, lumped.support)
    np.testing.assert_allclose(full.probability, lumped.probability, atol=1e-9)


def test_cluster_chain_single_state():
    _, _, cl = one_cluster_system(1, 1.0, 1.0)
    d = qsd_cluster_chain(cl)
    np.testing.assert_array_equal(d.support, [0, 1])
    np.testing.assert_allclose(d.probability, [0.0, 1.0])


def test_singleton_bridge_random_instance():
    net, pair = random_factor_net(404)
    cl = singleton_clustering(node_profiles(pair, net))
    de = qsd_exact_chain(net)
    dc = qsd_cluster_chain(cl)
    np.testing.assert_array_equal(de.support, dc.support)
    assert float(np.abs(de.probability - dc.probability).max()) <= 1e-8


def test_decoupled_pair_total_distribution():
    """Two identical clusters with zero cross rates: the dominant QSD of
    the pair puts one cluster at extinction, so the total-count law equals
    the single-cluster QSD."""
    _, _, single = one_cluster_system(10, 1.0, 4.0)
    # Profile entries are sqrt(n) times the factor means, n the TOTAL node
    # count, so each K_10 block of the 20-node pair needs sqrt(20) here:
    # the up rate (n_j - N_j)(C N)_j / n then reduces to N(10 - N).
    Yw = np.array([[np.sqrt(20.0), 0.0], [0.0, np.sqrt(20.0)]])
    Yh = Yw.copy()
    pair_cl = Clustering(k=2, n=20, r=2,
                         assignment=np.repeat([0, 1], 10),
                         sizes=np.array([10, 10]),
                         Yw=Yw, Yh=Yh, Ydelta=np.full(2, 4.0))
    np.testing.assert_allclose(pair_cl.cross_rates(), np.diag([20.0, 20.0]),
                               atol=1e-12)
    dp = qsd_cluster_chain(pair_cl)
    ds = qsd_cluster_chain(single)
    onto = np.zeros(21)
    onto[ds.support] = ds.probability
    got = np.zeros(21)
    got[dp.support] = dp.probability
    assert float(np.abs(got - onto).max()) <= 1e-8


def test_qsd_decay_and_residual():
    net = complete_graph(10, 1.0, 4.0)
    d = qsd_exact_chain(net)
    assert d.residual <= 1e-10
    assert d.decay_rate > 0  # absorption happens at a positive rate


def test_exact_chain_capacity():
    net = complete_graph(15, 1.0, 4.0)
    with pytest.raises(CapacityError):
        qsd_exact_chain(net)


def test_cluster_chain_capacity():
    sizes = np.array([150, 150, 150], dtype=np.int64)
    cl = Clustering(k=1, n=450, r=3,
                    assignment=np.repeat(np.arange(3), sizes),
                    sizes=sizes,
                    Yw=np.full((1, 3), 2.0), Yh=np.full((1, 3), 2.0),
                    Ydelta=np.ones(3))
    with pytest.raises(CapacityError):
        qsd_cluster_chain(cl)


def test_exact_distribution_validation():
    with pytest.raises(ValidationError):
        ExactDistribution(support=np.array([1, 2]), probability=np.array([0.5]))
    with pytest.raises(ValidationError):
        ExactDistribution(support=np.array([1, 2]), probability=np.array([0.7, 0.7]))
    with pytest.raises(ValidationError):
        ExactDistribution(support=np.array([1, 2]), probability=np.array([1.5, -0.5]))


def test_exact_distribution_cdf():
    d = ExactDistribution(support=np.array([1, 3, 4]),
                          probability=np.array([0.2, 0.5, 0.3]))
    assert d.cdf(0) == 0.0
    assert d.cdf(1) == pytest.approx(0.2)
    assert d.cdf(3.5) == pytest.approx(0.7)
    assert d.cdf(9) == pytest.approx(1.0)
    np.testing.assert_allclose(d.cdf(np.array([1, 2, 4])), [0.2, 0.2, 1.0])
    assert d.mean == pytest.approx(0.2 + 1.5 + 1.2)

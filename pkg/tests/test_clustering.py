import numpy as np
import pytest

from sisclust import (
    Clustering,
    NodeProfiles,
    cluster_nodes,
    clustering_from_assignment,
    node_profiles,
    singleton_clustering,
)
from sisclust.errors import ValidationError

from conftest import one_cluster_system, rank1_pair, random_factor_net


def test_profiles_k10():
    net, pair, _ = one_cluster_system(10, 1.0, 4.0)
    zp = node_profiles(pair, net)
    want = np.array([np.sqrt(10.0), np.sqrt(10.0), 4.0])
    for i in range(10):
        np.testing.assert_allclose(zp.Z[:, i], want, rtol=1e-12)


def test_profiles_single_node():
    net, pair, _ = one_cluster_system(1, 2.0, 1.0)
    zp = node_profiles(pair, net)
    np.testing.assert_allclose(zp.Z[:, 0],
                               [pair.W[0, 0], pair.H[0, 0], 1.0], rtol=1e-12)


def test_profiles_validation():
    net, pair, _ = one_cluster_system(10, 1.0, 4.0)
    other = rank1_pair(8)
    with pytest.raises(ValidationError):
        node_profiles(other, net)
    with pytest.raises(ValidationError):
        NodeProfiles(k=1, Z=-np.ones((3, 4)))
    with pytest.raises(ValidationError):
        NodeProfiles(k=2, Z=np.ones((3, 4)))


def test_identical_profiles_collapse():
    net, pair, _ = one_cluster_system(10, 1.0, 4.0)
    zp = node_profiles(pair, net)
    cl = cluster_nodes(zp, 1, seed=0)
    assert cl.r == 1
    np.testing.assert_allclose(cl.centers()[:, 0],
                               [np.sqrt(10.0), np.sqrt(10.0), 4.0], rtol=1e-12)
    np.testing.assert_allclose(cl.cross_rates(), [[10.0]], rtol=1e-9)


def test_identical_centers_merge():
    # ten identical profiles cannot fill three distinct clusters
    net, pair, _ = one_cluster_system(10, 1.0, 4.0)
    zp = node_profiles(pair, net)
    cl = cluster_nodes(zp, 3, seed=0)
    assert cl.r == 1
    assert cl.sizes.tolist() == [10]


def test_singletons_reproduce_rates():
    """With one cluster per node the clustered pressure coefficients
    (1/n) Y_h,j . Y_w,l recover the pairwise rates a~_lj exactly."""
    net, pair = random_factor_net(23)
    cl = singleton_clustering(node_profiles(pair, net))
    assert cl.r == net.n
    a = cl.assignment
    C = cl.cross_rates()[np.ix_(a, a)] / net.n
    A = pair.W.T @ pair.H
    np.testing.assert_allclose(C.T, A, rtol=1e-12)


def test_cluster_relabeling_equivariance():
    # renaming cluster j to perm[j] permutes every center block consistently
    net, pair = random_factor_net(29)
    zp = node_profiles(pair, net)
    cl = cluster_nodes(zp, 4, seed=1)
    perm = np.random.default_rng(2).permutation(cl.r)
    relabeled = clustering_from_assignment(zp, perm[cl.assignment])
    np.testing.assert_allclose(relabeled.Yw[:, perm], cl.Yw, rtol=1e-12)
    np.testing.assert_allclose(relabeled.Yh[:, perm], cl.Yh, rtol=1e-12)
    np.testing.assert_allclose(relabeled.Ydelta[perm], cl.Ydelta, rtol=1e-12)
    np.testing.assert_array_equal(relabeled.sizes[perm], cl.sizes)
    np.testing.assert_allclose(relabeled.cross_rates()[np.ix_(perm, perm)],
                               cl.cross_rates(), rtol=1e-12)


def test_node_permutation_equivariance():
    net, pair = random_factor_net(37)
    zp = node_profiles(pair, net)
    cl = cluster_nodes(zp, 3, seed=4)
    rng = np.random.default_rng(5)
    perm = rng.permutation(net.n)
    zp2 = NodeProfiles(k=zp.k, Z=zp.Z[:, perm])
    moved = clustering_from_assignment(zp2, cl.assignment[perm])
    np.testing.assert_allclose(moved.Yw, cl.Yw, rtol=1e-12)
    np.testing.assert_allclose(moved.Yh, cl.Yh, rtol=1e-12)
    np.testing.assert_array_equal(moved.sizes, cl.sizes)


def test_cluster_determinism_and_restarts():
    net, pair = random_factor_net(41)
    zp = node_profiles(pair, net)
    a = cluster_nodes(zp, 3, seed=7, restarts=4)
    b = cluster_nodes(zp, 3, seed=7, restarts=4)
    np.testing.assert_array_equal(a.assignment, b.assignment)
    c = cluster_nodes(zp, 3, seed=8, restarts=4)
    assert c.r == a.r


def test_outlier_singletons():
    rng = np.random.default_rng(6)
    Z = np.vstack([rng.uniform(0.9, 1.1, (2, 20)), np.ones((1, 20))])
    Z[0, 3] = 40.0   # two extreme profiles
    Z[0, 11] = 55.0
    zp = NodeProfiles(k=1, Z=Z)
    cl = cluster_nodes(zp, 4, seed=0, outlier_singletons=2)
    assert cl.sizes.min() == 1
    singleton_members = [int(np.flatnonzero(cl.assignment == j)[0])
                         for j in range(cl.r) if cl.sizes[j] == 1]
    assert set(singleton_members) == {3, 11}


def test_three_singletons():
    net, pair = random_factor_net(43, n_lo=3, n_hi=3)
    zp = node_profiles(pair, net)
    cl = singleton_clustering(zp)
    assert cl.r == 3
    order = cl.assignment
    np.testing.assert_allclose(cl.centers()[:, order], zp.Z, rtol=1e-12)


def test_csv_json_round_trip(tmp_path):
    net, pair = random_factor_net(47)
    cl = cluster_nodes(node_profiles(pair, net), 3, seed=2)
    csv = tmp_path / "clusters.csv"
    js = tmp_path / "clusters.json"
    cl.to_csv(csv)
    cl.to_json(js)
    back = Clustering.from_files(csv, js)
    np.testing.assert_array_equal(back.assignment, cl.assignment)
    np.testing.assert_array_equal(back.sizes, cl.sizes)
    np.testing.assert_allclose(back.Yw, cl.Yw)
    np.testing.assert_allclose(back.Yh, cl.Yh)
    np.testing.assert_allclose(back.Ydelta, cl.Ydelta)


def test_clustering_validation():
    with pytest.raises(ValidationError):
        Clustering(k=1, n=4, r=2, assignment=np.array([0, 0, 1, 5]),
                   sizes=np.array([2, 2]), Yw=np.ones((1, 2)),
                   Yh=np.ones((1, 2)), Ydelta=np.ones(2))
    with pytest.raises(ValidationError):
        Clustering(k=1, n=4, r=2, assignment=np.array([0, 0, 0, 1]),
                   sizes=np.array([2, 2]), Yw=np.ones((1, 2)),
                   Yh=np.ones((1, 2)), Ydelta=np.ones(2))
    with pytest.raises(ValidationError):
        cluster_nodes(NodeProfiles(k=1, Z=np.ones((3, 4))), 0)

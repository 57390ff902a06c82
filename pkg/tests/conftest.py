"""Shared instance builders.

The complete graph K_n with uniform rates is the workhorse: its clustered
form is a single cluster with cross rate C = n*beta, whose metastable
quantities have closed forms (N_inf = n(1 - 1/R), Sigma_inf = 1/R,
M = delta(2 - R), K = delta(1 - R), Sigma = 2*delta*N_inf/n for
R = n*beta/delta), and whose cluster chain is an exactly solvable
birth-death chain.
"""

import numpy as np
import scipy.sparse as sp

from sisclust import (
    Clustering,
    FactorPair,
    RateNetwork,
    clustering_from_assignment,
    node_profiles,
)


def complete_graph(n, beta=1.0, delta=1.0):
    rates = np.full((n, n), float(beta))
    np.fill_diagonal(rates, 0.0)
    return RateNetwork(sp.csr_matrix(rates), np.full(n, float(delta)))


def rank1_pair(n, beta=1.0):
    """Exact rank-1 factors of K_n: W^T H = beta everywhere; the diagonal
    carries no meaning and is dropped on reconstruction."""
    root = np.full((1, n), np.sqrt(float(beta)))
    return FactorPair(k=1, W=root, H=root.copy(), lam=0.0, objective=0.0)


def one_cluster_system(n, beta=1.0, delta=1.0):
    """(net, pair, clustering) for K_n collapsed to one exact cluster."""
    net = complete_graph(n, beta, delta)
    pair = rank1_pair(n, beta)
    zp = node_profiles(pair, net)
    cl = clustering_from_assignment(zp, np.zeros(n, dtype=np.int64))
    return net, pair, cl


def random_factor_net(seed, n_lo=8, n_hi=12, supercritical=True):
    """Random network whose off-diagonal rates are exactly W^T H.

    Rates are rescaled so the epidemic threshold of the zero-diagonal
    network sits at 1.8 (comfortably supercritical) unless disabled.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_lo, n_hi + 1))
    k = int(rng.integers(1, 4))
    W = rng.lognormal(-1.0, 0.5, (k, n))
    H = rng.lognormal(-1.0, 0.5, (k, n))
    curing = rng.uniform(0.5, 1.5, n)
    if supercritical:
        R = W.T @ H
        np.fill_diagonal(R, 0.0)
        rho = float(np.abs(np.linalg.eigvals(R.T / curing)).max())
        scale = np.sqrt(1.8 / max(rho, 1e-12))
        W, H = W * scale, H * scale
    pair = FactorPair(k=k, W=W, H=H, lam=0.0, objective=0.0)
    R = W.T @ H
    np.fill_diagonal(R, 0.0)
    net = RateNetwork(sp.csr_matrix(R), curing)
    return net, pair


def random_stable_clustering(seed, abar_lo=1.5, abar_hi=4.0, r=None):
    """Seeded cluster system scaled to a prescribed supercritical level.

    abar_eig is linear in Yw, so one rescale lands it exactly on the
    target drawn from [abar_lo, abar_hi].
    """
    from sisclust import existence_check

    rng = np.random.default_rng(seed)
    if r is None:
        r = 2 + seed % 19
    k = int(rng.integers(1, 4))
    sizes = rng.integers(1, 41, r)
    Yw = rng.lognormal(0.0, 0.6, (k, r))
    Yh = rng.lognormal(0.0, 0.6, (k, r))
    Yd = rng.uniform(0.5, 2.0, r)
    n = int(sizes.sum())
    assignment = np.repeat(np.arange(r), sizes)
    cl = Clustering(k=k, n=n, r=r, assignment=assignment, sizes=sizes,
                    Yw=Yw, Yh=Yh, Ydelta=Yd)
    target = float(rng.uniform(abar_lo, abar_hi))
    cl = Clustering(k=k, n=n, r=r, assignment=assignment, sizes=sizes,
                    Yw=Yw * (target / existence_check(cl)), Yh=Yh, Ydelta=Yd)
    return cl


def two_scale_net(n=30, core=6, seed=42):
    """Sparse background plus a dense heavy core; the one instance where
    rank-1 NIMFA calibration has something real to correct."""
    rng = np.random.default_rng(seed)
    A = (rng.random((n, n)) < 0.3) * 0.5
    A[:core, :core] = 4.0
    np.fill_diagonal(A, 0.0)
    return RateNetwork(sp.csr_matrix(A), np.ones(n))

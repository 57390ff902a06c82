"""Exact quasi-stationary distributions of small SIS chains.

Both the full 2^n chain and the clustered product chain are absorbing
Markov chains; their metastable behavior is the quasi-stationary
distribution, the normalized left eigenvector of the sub-generator
(absorbing state removed) for the eigenvalue closest to zero. These
solvers are oracles for validating predictions and simulations, so they
favor explicit construction over scale.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import CapacityError, NumericalError, ValidationError

FULL_CHAIN_MAX_NODES = 14
CLUSTER_CHAIN_MAX_STATES = 1_000_000

_CONDITIONING = "quasi-stationary (conditioned on non-absorption)"


@dataclass
class ExactDistribution:
    """Distribution of the total infected count under the QSD."""

    support: np.ndarray
    probability: np.ndarray
    conditioning: str = _CONDITIONING
    decay_rate: float = 0.0
    residual: float = 0.0

    def __post_init__(self):
        self.support = np.asarray(self.support)
        self.probability = np.asarray(self.probability, dtype=np.float64)
        if self.support.shape != self.probability.shape:
            raise ValidationError("support and probability must align")
        if np.any(self.probability < 0):
            raise ValidationError("probabilities must be non-negative")
        if abs(float(self.probability.sum()) - 1.0) > 1e-12:
            raise ValidationError(
                f"probabilities sum to {self.probability.sum()!r}, not 1")

    @property
    def mean(self):
        return float(self.support @ self.probability)

    @property
    def std(self):
        m = self.mean
        return float(np.sqrt(((self.support - m) ** 2) @ self.probability))

    @property
    def cumulative(self):
        return np.cumsum(self.probability)

    def cdf(self, x):
        """P[total <= x], evaluated pointwise (x may be an array)."""
        cum = self.cumulative
        idx = np.searchsorted(self.support, np.asarray(x), side="right")
        return np.where(idx > 0, cum[np.minimum(idx, cum.size) - 1], 0.0)


def _qsd_left_eigvec(Q, tol=1e-10, max_iter=500):
    """Dominant left eigenvector of a sub-generator by inverse iteration.

    Every eigenvalue mu of a sub-generator satisfies |mu| >= |Re mu|, so
    the eigenvalue of largest real part is also the one closest to zero
    and plain (unshifted) inverse iteration converges to it. Q is the
    transient-to-transient block; rows leak probability to the absorbing
    state, which is what makes Q invertible.
    """
    m = Q.shape[0]
    if m == 1:
        lam = float(Q[0, 0])
        return np.ones(1), lam, 0.0
    QT = sp.csc_matrix(Q.T)
    lu = splu(QT)
    x = np.full(m, 1.0 / m)
    lam = 0.0
    resid = np.inf
    for _ in range(max_iter):
        y = lu.solve(x)
        norm = float(np.sum(np.abs(y)))
        if not np.isfinite(norm) or norm == 0.0:
            raise NumericalError("inverse iteration collapsed")
        y /= norm
        lam = float(y @ (QT @ y)) / float(y @ y)
        resid = float(np.max(np.abs(QT @ y - lam * y)))
        x = y
        if resid < tol:
            break
    else:
        raise NumericalError(
            f"inverse iteration residual {resid:.3e} after {max_iter} "
            "iterations")
    # Deeply metastable chains decay slower than roundoff can represent;
    # the Rayleigh quotient then sits within machine noise of zero on
    # either side. Only a clearly positive value signals a bad matrix.
    noise = 64.0 * np.finfo(np.float64).eps * float(np.max(np.abs(Q.diagonal())))
    if lam >= noise:
        raise NumericalError(f"sub-generator decay rate {lam!r} not negative")
    lam = min(lam, 0.0)
    if x.sum() < 0:
        x = -x
    x = np.where(x < 0, 0.0, x)  # roundoff negatives only
    x /= x.sum()
    return x, lam, resid


def _distribution_from_weights(totals, weights, n_max, lam, resid):
    probs = np.bincount(totals, weights=weights, minlength=n_max + 1)
    probs = np.maximum(probs, 0.0)
    probs /= probs.sum()
    return ExactDistribution(
        support=np.arange(n_max + 1), probability=probs,
        decay_rate=-lam, residual=resid)


def qsd_exact_chain(net, tol=1e-10):
    """QSD of the full 2^n SIS chain, reduced to the total infected count.

    Exponential state space; refuses n above FULL_CHAIN_MAX_NODES.
    """
    n = net.n
    if n > FULL_CHAIN_MAX_NODES:
        raise CapacityError(
            f"exact chain needs 2^{n} states; limit is n <= {FULL_CHAIN_MAX_NODES}")
    A = net.dense_rates()
    m = 1 << n
    S = np.arange(1, m, dtype=np.int64)
    bits = (S[:, None] >> np.arange(n)) & 1
    X = bits.astype(np.float64)
    pressure = X @ A  # pressure[s, j] = sum of rates from infected nodes onto j
    infected = bits.astype(bool)

    rows, cols, vals = [], [], []
    exit_rate = np.zeros(m - 1)
    for j in range(n):
        b = np.int64(1 << j)
        up = ~infected[:, j]
        r_up = pressure[up, j]
        pos = r_up > 0
        rows.append(S[up][pos] - 1)
        cols.append((S[up][pos] | b) - 1)
        vals.append(r_up[pos])
        exit_rate[up] += r_up

        dn = infected[:, j]
        tgt = S[dn] & ~b
        keep = tgt > 0  # hitting the empty state is absorption, not a column
        rows.append(S[dn][keep] - 1)
        cols.append(tgt[keep] - 1)
        vals.append(np.full(int(keep.sum()), net.curing[j]))
        exit_rate[dn] += net.curing[j]
    rows.append(S - 1)
    cols.append(S - 1)
    vals.append(-exit_rate)

    Q = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m - 1, m - 1))
    q, lam, resid = _qsd_left_eigvec(Q, tol=tol)
    totals = bits.sum(axis=1)
    return _distribution_from_weights(totals, q, n, lam, resid)


def qsd_cluster_chain(cl, tol=1e-10):
    """QSD of the clustered chain on the product space prod(n_j + 1).

    State N moves up in cluster j at rate (n_j - N_j) (C N)_j / n and down
    at rate N_j Ydelta_j, C being the cluster cross-rate matrix.
    """
    sizes = np.asarray(cl.sizes, dtype=np.int64)
    dims = sizes + 1
    m = int(np.prod(dims.astype(np.float64)))
    if m > CLUSTER_CHAIN_MAX_STATES:
        raise CapacityError(
            f"clustered chain has {m} states; limit is {CLUSTER_CHAIN_MAX_STATES}")
    m = int(np.prod(dims))
    r = cl.r
    C = cl.cross_rates()
    N = np.array(np.unravel_index(np.arange(m), dims)).T.astype(np.float64)
    N = N[1:]  # drop the absorbing all-zero state (index 0 in C order... )
    # C-order unravel puts the all-zero state at index 0
    idx = np.arange(1, m, dtype=np.int64)

    strides = np.ones(r, dtype=np.int64)
    for j in range(r - 2, -1, -1):
        strides[j] = strides[j + 1] * dims[j + 1]

    up_rates = (sizes[None, :] - N) * (N @ C.T) / cl.n
    down_rates = N * np.asarray(cl.Ydelta)[None, :]

    rows, cols, vals = [], [], []
    exit_rate = np.zeros(m - 1)
    for j in range(r):
        up = up_rates[:, j]
        can_up = (N[:, j] < sizes[j]) & (up > 0)
        rows.append(idx[can_up] - 1)
        cols.append(idx[can_up] + strides[j] - 1)
        vals.append(up[can_up])
        exit_rate += np.where(N[:, j] < sizes[j], up, 0.0)

        down = down_rates[:, j]
        can_down = down > 0
        tgt = idx[can_down] - strides[j]
        keep = tgt > 0
        rows.append(idx[can_down][keep] - 1)
        cols.append(tgt[keep] - 1)
        vals.append(down[can_down][keep])
        exit_rate += down
    rows.append(idx - 1)
    cols.append(idx - 1)
    vals.append(-exit_rate)

    Q = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m - 1, m - 1))
    q, lam, resid = _qsd_left_eigvec(Q, tol=tol)
    totals = N.sum(axis=1).astype(np.int64)
    return _distribution_from_weights(totals, q, int(sizes.sum()), lam, resid)

"""Weighted non-negative factorization of infection-rate matrices.

Approximates the n x n rate matrix by W^T H with k x n non-negative
factors, minimizing sum_{i != j} w_ij (a~_ij - W_i^T H_j)^2 with per-pair
weights w_ij = exp(lambda * a~_ij) and the diagonal excluded. Off-link
weights are exactly exp(0) = 1, so the loss splits into a uniform all-pairs
term plus a sparse correction over existing links; nothing n x n is ever
materialized for the updates.
"""

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._rng import generator
from .errors import CapacityError, NumericalError, TuningError, ValidationError
from .network import DENSE_THRESHOLD, RateNetwork, spectral_threshold

_DEN_FLOOR = 1e-300
# exact-fit stop: objective below this fraction of the squared-rate scale
# counts as numerically zero (deep enough for ~1e-9 entrywise residuals)
_EXACT_FLOOR = 1e-18


@dataclass
class FactorPair:
    """Non-negative factors of a rate matrix, columns indexed by node."""

    k: int
    W: np.ndarray
    H: np.ndarray
    lam: float
    objective: float
    seed: int | None = None
    iterations: int = 0

    def __post_init__(self):
        self.W = np.ascontiguousarray(np.asarray(self.W, dtype=np.float64))
        self.H = np.ascontiguousarray(np.asarray(self.H, dtype=np.float64))
        if self.W.shape != self.H.shape or self.W.ndim != 2 or self.W.shape[0] != self.k:
            raise ValidationError(
                f"factors must both be {self.k} x n, got {self.W.shape} and {self.H.shape}")
        if np.any(self.W < 0) or np.any(self.H < 0):
            raise ValidationError("factor entries must be non-negative")

    @property
    def n(self):
        return self.W.shape[1]

    def reconstruction(self, zero_diagonal=True, threshold=DENSE_THRESHOLD):
        """Dense W^T H (optionally with the meaningless diagonal zeroed)."""
        if self.n > threshold:
            raise CapacityError(f"n={self.n} exceeds dense capacity {threshold}")
        P = self.W.T @ self.H
        if zero_diagonal:
            np.fill_diagonal(P, 0.0)
        return P

    def save(self, prefix):
        np.savetxt(f"{prefix}.W.csv", self.W, delimiter=",", fmt="%.17g")
        np.savetxt(f"{prefix}.H.csv", self.H, delimiter=",", fmt="%.17g")
        head = {
            "k": int(self.k),
            "lambda": float(self.lam),
            "objective": float(self.objective),
            "seed": self.seed if self.seed is None else int(self.seed),
            "iterations": int(self.iterations),
        }
        with open(f"{prefix}.json", "w") as fh:
            json.dump(head, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, prefix):
        with open(f"{prefix}.json") as fh:
            head = json.load(fh)
        W = np.atleast_2d(np.loadtxt(f"{prefix}.W.csv", delimiter=","))
        H = np.atleast_2d(np.loadtxt(f"{prefix}.H.csv", delimiter=","))
        return cls(k=head["k"], W=W, H=H, lam=head["lambda"],
                   objective=head["objective"], seed=head["seed"],
                   iterations=head["iterations"])


def _link_arrays(net):
    coo = net.rates.tocoo()
    return coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data


def weighted_objective(net, W, H, lam):
    """Recompute sum_{i != j} exp(lam * a~_ij) (a~_ij - W_i^T H_j)^2.

    Entry-exact (chunked dense residuals) below the dense capacity
    threshold; Gram-matrix evaluation above it, where residuals are large
    enough that the quadratic-form cancellation is harmless.
    """
    W = np.asarray(W, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    n = W.shape[1]
    rows, cols, vals = _link_arrays(net)
    wexp = np.exp(lam * vals)
    if n <= DENSE_THRESHOLD:
        A = net.dense_rates()
        total = 0.0
        step = max(1, min(n, (1 << 22) // max(n, 1)))
        for start in range(0, n, step):
            stop = min(n, start + step)
            R = A[start:stop] - W[:, start:stop].T @ H
            for i in range(start, stop):
                R[i - start, i] = 0.0
            total += float(np.sum(R * R))
        p_link = np.einsum("ki,ki->i", W[:, rows], H[:, cols])
        r_link = vals - p_link
        total += float(np.sum((wexp - 1.0) * r_link * r_link))
        return total
    gram = float(np.sum((W @ W.T) * (H @ H.T)))
    p_diag = np.einsum("ki,ki->i", W, H)
    p_link = np.einsum("ki,ki->i", W[:, rows], H[:, cols])
    base = gram - float(p_diag @ p_diag) - 2.0 * float(vals @ p_link) + float(vals @ vals)
    corr = float(np.sum((wexp - 1.0) * (vals - p_link) ** 2))
    return base + corr


def _sparse_weighted(rows, cols, values, n):
    return sp.csr_matrix((values, (rows, cols)), shape=(n, n))


def _init_factors(net, k, seed):
    # scaled so the mean initial reconstruction matches the mean off-link rate
    n = net.n
    total = float(net.rates.data.sum())
    mean_rate = total / (n * (n - 1)) if n > 1 else total
    scale = 2.0 * np.sqrt(max(mean_rate, 1e-12) / k)
    rng = generator(seed, "nmf/init")
    W = scale * rng.random((k, n))
    H = scale * rng.random((k, n))
    return W, H


def _guard_monotone(f_prev, f_new, scale):
    if f_new > f_prev + 1e-12 * max(f_prev, scale):
        raise NumericalError(
            f"factorization objective increased ({f_prev:.17g} -> {f_new:.17g}); "
            "update rule violated its descent guarantee")


def factorize(net, k, lam=0.0, max_iter=500, tol=1e-6, seed=0, symmetric=False):
    """Weighted NMF of the rate matrix, diagonal excluded from the loss.

    Alternating multiplicative updates (projected gradient with
    backtracking when `symmetric` ties H = W); the objective never
    increases between outer iterations. Deterministic for a fixed seed.
    """
    if not isinstance(net, RateNetwork):
        raise ValidationError("net must be a RateNetwork")
    n = net.n
    if not 1 <= k <= n:
        raise ValidationError(f"k must lie in [1, {n}], got {k}")
    if max_iter < 1:
        raise ValidationError("max_iter must be at least 1")
    lam = float(lam)
    rows, cols, vals = _link_arrays(net)
    wexp = np.exp(lam * vals)
    # numerator weights: w * a~ on links; correction weights: w - 1
    num_mat = _sparse_weighted(rows, cols, wexp * vals, n)
    s_data = wexp - 1.0
    scale = float(np.sum(wexp * vals * vals))  # objective at W^T H = 0

    if symmetric:
        asym = abs(net.rates - net.rates.T)
        if asym.nnz and asym.max() > 1e-12 * max(1.0, float(net.rates.max())):
            raise ValidationError("symmetric factorization requires a symmetric rate matrix")
        return _factorize_symmetric(net, k, lam, max_iter, tol, seed,
                                    rows, cols, vals, wexp, num_mat, s_data, scale)

    W, H = _init_factors(net, k, seed)

    def half_update(W, H, num_mat_side, rows_s, cols_s):
        # returns the multiplicative update of H for fixed W; the W update
        # is the same call with roles swapped and the link list transposed
        p_link = np.einsum("ki,ki->i", W[:, rows_s], H[:, cols_s])
        sp_corr = _sparse_weighted(rows_s, cols_s, s_data * p_link, n)
        p_diag = np.einsum("ki,ki->i", W, H)
        den = (W @ W.T) @ H - W * p_diag[None, :] + W @ sp_corr
        num = W @ num_mat_side
        return H * (num / np.maximum(den, _DEN_FLOOR))

    f_prev = weighted_objective(net, W, H, lam)
    iterations = 0
    num_mat_t = num_mat.T.tocsr()
    for it in range(1, max_iter + 1):
        H = half_update(W, H, num_mat, rows, cols)
        W = half_update(H, W, num_mat_t, cols, rows)
        iterations = it
        f_new = weighted_objective(net, W, H, lam)
        _guard_monotone(f_prev, f_new, scale)
        if abs(f_prev - f_new) <= tol * max(f_new, _EXACT_FLOOR * scale) or f_new <= _EXACT_FLOOR * scale:
            f_prev = f_new
            break
        f_prev = f_new

    return FactorPair(k=k, W=W, H=H, lam=lam, objective=f_prev,
                      seed=seed, iterations=iterations)


def _factorize_symmetric(net, k, lam, max_iter, tol, seed,
                         rows, cols, vals, wexp, num_mat, s_data, scale):
    # projected gradient on f(W) with H = W; backtracking guarantees descent
    n = net.n
    W, _ = _init_factors(net, k, seed)

    def objective(W):
        return weighted_objective(net, W, W, lam)

    def gradient(W):
        # grad = -2 W (O.R + (O.R)^T) with O.R the weighted residual;
        # evaluated through the uniform + sparse-link split
        p_link = np.einsum("ki,ki->i", W[:, rows], W[:, cols])
        p_diag = np.einsum("ki,ki->i", W, W)
        # W @ (O.P): uniform part minus diagonal plus link correction
        sp_corr = _sparse_weighted(rows, cols, s_data * p_link, n)
        WP = (W @ W.T) @ W - W * p_diag[None, :] + W @ sp_corr
        WPT = (W @ W.T) @ W - W * p_diag[None, :] + W @ sp_corr.T.tocsr()
        WA = W @ num_mat + W @ num_mat.T.tocsr()
        return 2.0 * (WP + WPT - WA)

    f_prev = objective(W)
    step = 1.0
    iterations = 0
    for it in range(1, max_iter + 1):
        G = gradient(W)
        improved = False
        for _ in range(60):
            W_try = np.maximum(W - step * G, 0.0)
            f_try = objective(W_try)
            if f_try <= f_prev:
                improved = True
                break
            step *= 0.5
        iterations = it
        if not improved:
            break
        _guard_monotone(f_prev, f_try, scale)
        moved = abs(f_prev - f_try)
        W = W_try
        f_new = f_try
        step *= 2.0
        if moved <= tol * max(f_new, _EXACT_FLOOR * scale) or f_new <= _EXACT_FLOOR * scale:
            f_prev = f_new
            break
        f_prev = f_new

    return FactorPair(k=k, W=W, H=W.copy(), lam=lam, objective=f_prev,
                      seed=seed, iterations=iterations)


def identity_factorization(net, threshold=DENSE_THRESHOLD):
    """k = n factor pair with W = I and H = the dense rate matrix.

    Reconstruction is exact (the diagonal is zero on both sides), so the
    objective is 0. Refuses above the dense capacity threshold.
    """
    n = net.n
    H = net.dense_rates(threshold)
    W = np.eye(n)
    return FactorPair(k=n, W=W, H=H, lam=0.0, objective=0.0, seed=None, iterations=0)


def nimfa_total_of_pair(pair, curing, tol=1e-12, max_iter=200_000):
    """NIMFA expected total infected of the W^T H network (diagonal zeroed)."""
    from .metastable import _nimfa_core

    W, H = pair.W, pair.H

    def pressure(v):
        s = H.T @ (W @ v)
        s -= np.einsum("ki,ki->i", W, H) * v
        return s

    v = _nimfa_core(pressure, np.asarray(curing, dtype=np.float64), tol, max_iter)
    return float(v.sum())


@dataclass
class TuningResult:
    """Outcome of the lambda search; unpacks as (lam, pair)."""

    lam: float
    pair: FactorPair
    insensitive: bool
    gap: float
    evaluations: int

    def __iter__(self):
        return iter((self.lam, self.pair))


def tune_lambda(net, k, lo=-2.0, hi=6.0, tol=1e-3, factor_opts=None):
    """Pick lambda so the factor network reproduces the NIMFA prevalence.

    Bisects g(lambda) = NIMFA_total(W^T H(lambda)) - NIMFA_total(A~) until
    |g| < tol * n, refactorizing at every candidate. When both bracket ends
    already satisfy the target (exact-fit degeneracy) the low end is
    returned with the `insensitive` flag set.
    """
    from .metastable import nimfa_steady_state

    if hi <= lo:
        raise ValidationError("need lo < hi for the lambda bracket")
    thr = spectral_threshold(net)
    if thr <= 1.0:
        raise ValidationError(
            f"network is subcritical (threshold {thr:.4g} <= 1); "
            "prevalences vanish and lambda is unidentifiable")
    opts = dict(factor_opts or {})
    target = float(nimfa_steady_state(net).sum())
    budget = tol * net.n
    evals = 0

    def g(lam):
        nonlocal evals
        pair = factorize(net, k, lam, **opts)
        evals += 1
        return nimfa_total_of_pair(pair, net.curing) - target, pair

    g_lo, pair_lo = g(lo)
    if abs(g_lo) < budget:
        g_hi, _ = g(hi)
        insensitive = abs(g_hi) < budget
        return TuningResult(lam=lo, pair=pair_lo, insensitive=insensitive,
                            gap=g_lo, evaluations=evals)
    g_hi, pair_hi = g(hi)
    if abs(g_hi) < budget:
        return TuningResult(lam=hi, pair=pair_hi, insensitive=False,
                            gap=g_hi, evaluations=evals)
    if np.sign(g_lo) == np.sign(g_hi):
        raise TuningError(
            f"no sign change in [{lo}, {hi}]: g({lo}) = {g_lo:.6g}, "
            f"g({hi}) = {g_hi:.6g}; widen the bracket")

    a, b, g_a = lo, hi, g_lo
    for _ in range(200):
        mid = 0.5 * (a + b)
        g_mid, pair_mid = g(mid)
        if abs(g_mid) < budget:
            return TuningResult(lam=mid, pair=pair_mid, insensitive=False,
                                gap=g_mid, evaluations=evals)
        if np.sign(g_mid) == np.sign(g_a):
            a, g_a = mid, g_mid
        else:
            b = mid
        if b - a < 1e-9 * max(1.0, abs(lo), abs(hi)):
            break
    raise TuningError(
        f"bisection exhausted without reaching |g| < {budget:.4g}; "
        f"bracket collapsed near lambda = {0.5 * (a + b):.6g}")

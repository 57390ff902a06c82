"""Metastable expectations of the clustered SIS model.

The reduced chain tracks per-cluster infected counts N_j. Its balance
equations (rate up equals rate down per cluster) define the metastable
expectation N_inf; the pressure vector V = (1/n) sum_l N_l Y_w,l reduces
them to k dimensions. NIMFA baselines and the covariance-based correction
of the mean-field bias live here as well.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .network import RateNetwork, spectral_threshold, _shifted_power_iteration

_EXIST_MARGIN = 1e-9
_NEAR_BAND = 1e-3


def _nimfa_core(pressure, delta, tol=1e-12, max_iter=200_000):
    """Fixed point of v <- s/(s + delta), s = pressure(v), from v = 1.

    The map is monotone, so starting from all-ones converges to the
    largest fixed point (the zero vector when subcritical).
    """
    n = delta.shape[0]
    v = np.ones(n)
    for _ in range(max_iter):
        s = pressure(v)
        v_new = s / (s + delta)
        change = float(np.max(np.abs(v_new - v)))
        v = v_new
        if change < tol:
            return v
    raise NumericalError(
        f"prevalence fixed point did not converge in {max_iter} iterations "
        f"(last change {change:.3e})")


def nimfa_steady_state(net, tol=1e-12, max_iter=200_000):
    """Per-node NIMFA infection probabilities v, solving
    (1 - v_i) sum_k a~_ki v_k = delta_i v_i. Returns the zero vector when
    the network is at or below the epidemic threshold."""
    if not isinstance(net, RateNetwork):
        raise ValidationError("net must be a RateNetwork")
    if spectral_threshold(net) <= 1.0:
        return np.zeros(net.n)
    rates_t = net.rates.T.tocsr()
    return _nimfa_core(lambda v: rates_t @ v, net.curing, tol, max_iter)


@dataclass
class MetastablePrediction:
    """Cluster-level metastable expectation and its certificates."""

    V: np.ndarray
    Ninf: np.ndarray
    exists: bool
    abar_eig: float
    balance_residual: float

    def total(self):
        return float(self.Ninf.sum())

    def to_json_dict(self):
        return {
            "V": [float(x) for x in self.V],
            "Ninf": [float(x) for x in self.Ninf],
            "exists": bool(self.exists),
            "abar_eig": float(self.abar_eig),
            "balance_residual": float(self.balance_residual),
        }


@dataclass
class CorrectedPrediction:
    """Covariance-corrected cluster expectations."""

    Nhat: np.ndarray
    clamped: np.ndarray
    correction: np.ndarray

    def total(self):
        return float(self.Nhat.sum())

    def to_json_dict(self):
        return {
            "Nhat": [float(x) for x in self.Nhat],
            "clamped": [int(j) for j in self.clamped],
            "correction": [float(x) for x in self.correction],
        }


def existence_check(cl, tol=1e-10, max_iter=100_000):
    """Dominant eigenvalue of Abar = (1/n) diag(n_j / Ydelta_j) Yh^T Yw.

    A metastable state exists exactly when it exceeds 1.
    """
    if np.any(cl.Ydelta <= 0):
        raise ValidationError("cluster curing centers must be strictly positive")
    C = cl.cross_rates()
    pref = cl.sizes / (cl.n * cl.Ydelta)
    abar = pref[:, None] * C
    if cl.r == 1:
        return float(abar[0, 0])
    shift = float(np.max(np.sum(abar, axis=1)))

    def matvec(x):
        return abar @ x

    try:
        return _shifted_power_iteration(matvec, cl.r, shift, tol, max_iter)
    except NumericalError:
        # near-degenerate leading pair; the dense solve is exact enough
        lam = np.linalg.eigvals(abar)
        return float(np.max(lam.real))


def _damped_iterate(step, x0, tol, max_iter, damping=0.5, floor=1.0 / 64.0):
    """Damped fixed-point driver: x <- (1-d) x + d step(x).

    Halves the damping whenever successive update directions oppose each
    other (oscillation), never below `floor`. Returns the converged x.
    """
    x = x0.copy()
    d = damping
    prev_delta = None
    for _ in range(max_iter):
        fx = step(x)
        delta = fx - x
        if prev_delta is not None and float(delta @ prev_delta) < 0 and d > floor:
            d = max(floor, 0.5 * d)
        x_new = x + d * delta
        scale = np.maximum(np.abs(x_new), 1e-30)
        change = float(np.max(np.abs(x_new - x) / scale))
        prev_delta = delta
        x = x_new
        if change < tol:
            return x
    raise NumericalError(
        f"damped fixed point did not converge in {max_iter} iterations "
        f"(damping {d}, last relative change {change:.3e})")


def _balance_residual(cl, N):
    C = cl.cross_rates()
    up = (cl.sizes - N) * (C @ N) / cl.n
    down = N * cl.Ydelta
    return float(np.max(np.abs(up - down)))


def solve_V(cl, tol=1e-12, max_iter=100_000):
    """Metastable expectation of the clustered chain.

    Subcritical systems (existence eigenvalue at most 1) return the zero
    solution without iterating. Otherwise the pressure recursion runs in
    k dimensions when k < r and on the cluster counts directly when
    k >= r; both start from the all-infected image so the iteration stays
    out of the trivial root's basin. The final N_inf is projected through
    the pressure relation, making the two representations exactly
    consistent.
    """
    abar = existence_check(cl)
    if abs(abar - 1.0) < _NEAR_BAND:
        warnings.warn(
            f"existence eigenvalue {abar:.6f} is within {_NEAR_BAND} of the "
            "threshold; the prediction is numerically delicate", stacklevel=2)
    k, r = cl.k, cl.r
    if abar <= 1.0 + _EXIST_MARGIN:
        return MetastablePrediction(
            V=np.zeros(k), Ninf=np.zeros(r), exists=False,
            abar_eig=abar, balance_residual=0.0)

    nw = cl.sizes[None, :] * cl.Yw  # k x r, columns n_l Y_w,l
    if k < r:
        def step(V):
            s = cl.Yh.T @ V
            frac = s / (s + cl.Ydelta)
            return (nw @ frac) / cl.n

        V0 = nw.sum(axis=1) / cl.n
        V = _damped_iterate(step, V0, tol, max_iter)
    else:
        C = cl.cross_rates()

        def step(N):
            s = (C @ N) / cl.n
            return cl.sizes * s / (s + cl.Ydelta)

        N0 = cl.sizes.astype(np.float64)
        N = _damped_iterate(step, N0, tol, max_iter)
        V = (cl.Yw @ N) / cl.n

    if float(np.max(np.abs(V))) < 1e-13 * max(1.0, float(np.max(np.abs(cl.Yw)))):
        return MetastablePrediction(
            V=np.zeros(k), Ninf=np.zeros(r), exists=False,
            abar_eig=abar, balance_residual=0.0)

    s = cl.Yh.T @ V
    Ninf = cl.sizes * s / (s + cl.Ydelta)
    return MetastablePrediction(
        V=V, Ninf=Ninf, exists=True, abar_eig=abar,
        balance_residual=_balance_residual(cl, Ninf))


def corrected_mean_field(cl, sigma_inf, prediction=None, tol=1e-12, max_iter=100_000):
    """Remove the mean-field bias using the stationary covariance.

    Solves (n_j - Nhat_j) S_j - Nhat_j Ydelta_j - c_j = 0 with
    S_j = (1/n) sum_l Nhat_l Yh_j.Yw_l and the covariance term
    c_j = (1/n) sum_l Cov(N_j, N_l) Yh_j.Yw_l, via the damped update
    Nhat_j <- (n_j S_j - c_j)/(S_j + Ydelta_j) started at N_inf.
    sigma_inf holds the sqrt(n)-scaled stationary covariance, so
    Cov(N_j, N_l) = n sigma_inf[j, l] and the 1/n prefactor cancels.
    Components that converge negative are clamped to zero afterwards and
    reported.
    """
    sigma_inf = np.asarray(sigma_inf, dtype=np.float64)
    if sigma_inf.shape != (cl.r, cl.r):
        raise ValidationError(f"covariance must be r x r = {cl.r} x {cl.r}")
    if float(np.max(np.abs(sigma_inf - sigma_inf.T))) > 1e-8 * max(1.0, float(np.max(np.abs(sigma_inf)))):
        raise ValidationError("covariance matrix must be symmetric")
    if prediction is None:
        prediction = solve_V(cl)
    C = cl.cross_rates()
    c = (C * sigma_inf).sum(axis=1)

    def step(N):
        s = (C @ N) / cl.n
        return (cl.sizes * s - c) / (s + cl.Ydelta)

    Nhat = _damped_iterate(step, prediction.Ninf.astype(np.float64), tol, max_iter)
    clamped = np.flatnonzero(Nhat < 0)
    Nhat = np.maximum(Nhat, 0.0)
    Nhat = np.minimum(Nhat, cl.sizes.astype(np.float64))
    return CorrectedPrediction(Nhat=Nhat, clamped=clamped, correction=c)


def prediction_to_json(path, prediction, corrected=None, extra=None):
    doc = prediction.to_json_dict()
    if corrected is not None:
        doc.update(corrected.to_json_dict())
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    return doc


def node_probabilities_csv(path, cl, cluster_expectation):
    """Per-node infection probability N_j / n_j of each node's cluster."""
    probs = np.asarray(cluster_expectation, dtype=np.float64) / cl.sizes
    with open(path, "w") as fh:
        fh.write("node,probability\n")
        for i, j in enumerate(cl.assignment):
            fh.write(f"{i},{float(probs[j])!r}\n")

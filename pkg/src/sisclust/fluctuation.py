"""Fluctuations of the clustered SIS model around its metastable state.

Rescaled deviations D = (N - N_inf)/sqrt(n) follow a stochastic
differential equation whose linearization is an Ornstein-Uhlenbeck
process with relaxation matrix K and diagonal noise Sigma. Its
stationary covariance Sigma_inf solves the Lyapunov identity
K Sigma_inf + Sigma_inf K^T + Sigma = 0 and turns the mean prediction
into a full normal distribution for the infected counts.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

from ._rng import derive_seed
from .errors import NumericalError, ValidationError

_LYAP_TOL = 1e-8
_PSD_TRUNC = 1e-9
_COND_CAP = 1e8
LYAPUNOV_MAX_DIM = 4096


@dataclass
class FluctuationModel:
    """Linearized fluctuation model around the metastable state."""

    M: np.ndarray
    K: np.ndarray
    Sigma: np.ndarray          # length r, diagonal of the noise covariance
    SigmaInf: np.ndarray
    eigenvalues: np.ndarray    # complex spectrum of K
    eigenvectors: np.ndarray
    lyap_residual: float

    @property
    def r(self):
        return self.K.shape[0]

    def to_json_dict(self):
        return {
            "Sigma": [float(x) for x in self.Sigma],
            "SigmaInf": [[float(x) for x in row] for row in self.SigmaInf],
            "eigenvalues_real": [float(x) for x in self.eigenvalues.real],
            "eigenvalues_imag": [float(x) for x in self.eigenvalues.imag],
            "lyap_residual": float(self.lyap_residual),
        }

    def save_matrices(self, prefix):
        np.savetxt(f"{prefix}.M.csv", self.M, delimiter=",", fmt="%.17g")
        np.savetxt(f"{prefix}.K.csv", self.K, delimiter=",", fmt="%.17g")
        np.savetxt(f"{prefix}.SigmaInf.csv", self.SigmaInf, delimiter=",",
                   fmt="%.17g")


def _lyapunov_residual(K, SigmaInf, Sigma):
    R = K @ SigmaInf + SigmaInf @ K.T + np.diag(Sigma)
    return float(np.max(np.abs(R)))


def _psd_repair(S):
    """Symmetrize and truncate roundoff-negative eigenvalues to zero."""
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    trace = float(np.sum(np.maximum(vals, 0.0)))
    floor = -_PSD_TRUNC * max(trace, 1e-30)
    if np.any(vals < floor):
        raise NumericalError(
            f"covariance has eigenvalue {vals.min():.3e}, beyond the "
            f"round-off repair band {floor:.3e}")
    if np.any(vals < 0):
        vals = np.maximum(vals, 0.0)
        S = (vecs * vals) @ vecs.T
        S = 0.5 * (S + S.T)
    return S


def _sigma_inf_eigen(eigenvalues, eigenvectors, Sigma):
    V = eigenvectors
    Vinv = np.linalg.inv(V)
    mid = (Vinv * Sigma) @ Vinv.T  # V^-1 diag(Sigma) V^-T
    denom = eigenvalues[:, None] + eigenvalues[None, :]
    S = -(V @ (mid / denom) @ V.T)
    scale = float(np.max(np.abs(S.real)))
    if scale > 0 and float(np.max(np.abs(S.imag))) > 1e-8 * scale:
        raise NumericalError(
            "imaginary residue in the stationary covariance exceeds "
            "tolerance; eigenbasis too ill-conditioned")
    return S.real


def _sigma_inf_lyapunov(K, Sigma):
    if K.shape[0] > LYAPUNOV_MAX_DIM:
        raise NumericalError(
            f"Lyapunov fallback capped at r <= {LYAPUNOV_MAX_DIM}")
    return scipy.linalg.solve_continuous_lyapunov(K, -np.diag(Sigma))


def sigma_infinity(K, Sigma, eigenvalues=None, eigenvectors=None, method="auto"):
    """Stationary covariance of dD = K D dt + sqrt(diag(Sigma)) dB.

    The eigen path evaluates the closed form
    -V [ (V^-1 Sigma V^-T) / (lam_i + lam_j) ] V^T elementwise in complex
    arithmetic; an ill-conditioned eigenbasis falls back to a dense
    Lyapunov solve. The result is symmetrized and repaired to PSD within
    round-off.
    """
    K = np.asarray(K, dtype=np.float64)
    Sigma = np.asarray(Sigma, dtype=np.float64)
    if eigenvalues is None or eigenvectors is None:
        eigenvalues, eigenvectors = np.linalg.eig(K)
    if np.max(eigenvalues.real) >= 0:
        raise NumericalError(
            "non-contracting linearization: no stationary covariance")
    if method not in ("auto", "eigen", "lyapunov"):
        raise ValidationError(f"unknown method {method!r}")

    S = None
    if method in ("auto", "eigen"):
        cond = float(np.linalg.cond(eigenvectors))
        if cond < _COND_CAP:
            try:
                S = _sigma_inf_eigen(eigenvalues, eigenvectors, Sigma)
            except NumericalError:
                if method == "eigen":
                    raise
        elif method == "eigen":
            raise NumericalError(
                f"eigenbasis condition number {cond:.3e} exceeds cap {_COND_CAP:.0e}")
    if S is None:
        S = _sigma_inf_lyapunov(K, Sigma)

    S = _psd_repair(S)
    resid = _lyapunov_residual(K, S, Sigma)
    scale = float(np.max(np.abs(Sigma)))
    if resid > _LYAP_TOL * max(scale, 1e-30):
        if method == "auto":
            S2 = _psd_repair(_sigma_inf_lyapunov(K, Sigma))
            resid2 = _lyapunov_residual(K, S2, Sigma)
            if resid2 < resid:
                S, resid = S2, resid2
        if resid > _LYAP_TOL * max(scale, 1e-30):
            raise NumericalError(
                f"stationary covariance residual {resid:.3e} exceeds "
                f"{_LYAP_TOL:.0e} * ||Sigma||")
    return S, resid


def build_fluctuation(cl, pred):
    """Linearize the clustered dynamics at N_inf and solve for Sigma_inf."""
    if not pred.exists:
        raise ValidationError(
            "no metastable state exists; the fluctuation model is undefined")
    N = np.asarray(pred.Ninf, dtype=np.float64)
    C = cl.cross_rates()
    n = cl.n
    M = ((cl.sizes - N)[:, None] * C) / n - np.diag(C @ N) / n
    K = M - np.diag(cl.Ydelta)
    Sigma = 2.0 * np.asarray(cl.Ydelta) * N / n
    eigenvalues, eigenvectors = np.linalg.eig(K)
    if np.max(eigenvalues.real) >= 0:
        raise NumericalError(
            f"non-contracting linearization: max Re(eig K) = "
            f"{np.max(eigenvalues.real):.3e} >= 0")
    SigmaInf, resid = sigma_infinity(K, Sigma, eigenvalues, eigenvectors)
    return FluctuationModel(M=M, K=K, Sigma=Sigma, SigmaInf=SigmaInf,
                            eigenvalues=eigenvalues, eigenvectors=eigenvectors,
                            lyap_residual=resid)


@dataclass
class SvdeTrajectory:
    """Thinned Euler path of the deviations process D."""

    D: np.ndarray
    dt: float
    thin: int
    n_steps: int
    var_clamps: int
    clip_steps: int
    restarts: int
    linear: bool
    seed: int

    @property
    def times(self):
        return np.arange(self.D.shape[0]) * (self.dt * self.thin)

    def infected_counts(self, pred, n):
        return np.asarray(pred.Ninf) + math.sqrt(n) * self.D


def simulate_svde(cl, pred, D0=None, dt=None, T=100.0, seed=0, thin=1,
                  linear=False, fm=None):
    """Euler-Maruyama path of the deviations SVDE.

    Nonlinear mode keeps the state-dependent drift and variance and clips
    the implied counts to [0, n_j]; linear mode freezes both at the
    metastable point and runs unclipped (the OU regime is unbounded and
    its extinct state is not absorbing). The all-extinct state is
    absorbing for the nonlinear dynamics (drift and diffusion vanish
    there), so reaching it restarts the path from D0, recorded in
    `restarts`, the same protocol the event simulator uses to stay on the
    metastable regime. Steps where the variance expression went negative
    and steps where clipping fired are counted; clipping on more than 1%
    of steps warns, more than 10% is an error (the step is too coarse for
    the geometry).
    """
    if fm is None:
        fm = build_fluctuation(cl, pred)
    r = fm.r
    if D0 is None:
        D0 = np.zeros(r)
    D0 = np.asarray(D0, dtype=np.float64)
    if D0.shape != (r,):
        raise ValidationError(f"D0 must have shape ({r},)")
    if dt is None:
        dt = 0.01 / float(np.max(np.abs(fm.eigenvalues.real)))
    if dt <= 0 or T < dt:
        raise ValidationError("need dt > 0 and T >= dt")
    n_steps = int(round(T / dt))
    sqrt_n = math.sqrt(cl.n)
    N = np.asarray(pred.Ninf, dtype=np.float64)
    d_lo = -N / sqrt_n
    d_hi = (cl.sizes - N) / sqrt_n
    MpD = fm.M + np.diag(cl.Ydelta)

    if np.any(D0 < d_lo - 1e-12) or np.any(D0 > d_hi + 1e-12):
        raise ValidationError("D0 implies counts outside [0, n_j]")

    from ._engine import svde_euler
    traj, var_clamps, clip_steps, restarts = svde_euler(
        np.ascontiguousarray(fm.K), np.ascontiguousarray(MpD),
        np.ascontiguousarray(cl.cross_rates()),
        np.ascontiguousarray(fm.Sigma), D0.copy(), sqrt_n,
        np.ascontiguousarray(d_lo), np.ascontiguousarray(d_hi),
        float(dt), n_steps, int(thin), bool(linear),
        np.uint64(derive_seed(seed, "svde")))
    frac = clip_steps / max(n_steps, 1)
    if frac > 0.10:
        raise NumericalError(
            f"boundary clipping on {100 * frac:.1f}% of steps; "
            "reduce dt or revisit the model")
    if frac > 0.01:
        warnings.warn(
            f"boundary clipping on {100 * frac:.2f}% of steps", stacklevel=2)
    return SvdeTrajectory(D=traj, dt=float(dt), thin=int(thin),
                          n_steps=n_steps, var_clamps=int(var_clamps),
                          clip_steps=int(clip_steps), restarts=int(restarts),
                          linear=bool(linear), seed=seed)


@dataclass
class PredictedDistribution:
    """Normal prediction for the infected counts and their total."""

    mean_total: float
    std_total: float
    per_cluster_mean: np.ndarray
    covariance: np.ndarray

    def cdf(self, x):
        if self.std_total == 0.0:
            return (np.asarray(x, dtype=np.float64) >= self.mean_total) * 1.0
        z = (np.asarray(x, dtype=np.float64) - self.mean_total) / self.std_total
        return scipy.special.ndtr(z)

    def to_json_dict(self):
        return {
            "mean_total": float(self.mean_total),
            "std_total": float(self.std_total),
            "per_cluster_mean": [float(x) for x in self.per_cluster_mean],
            "covariance": [[float(x) for x in row] for row in self.covariance],
        }

    def cdf_table_csv(self, path, lo=None, hi=None, points=512):
        """Plot-ready grid of totals against the predicted normal CDF."""
        if lo is None:
            lo = self.mean_total - 5 * max(self.std_total, 1.0)
        if hi is None:
            hi = self.mean_total + 5 * max(self.std_total, 1.0)
        grid = np.linspace(lo, hi, points)
        vals = self.cdf(grid)
        with open(path, "w") as fh:
            fh.write("total,cdf\n")
            for g, v in zip(grid, vals):
                fh.write(f"{float(g)!r},{float(v)!r}\n")


def predicted_distribution(expectation, sigma_inf, n, u=None):
    """Normal summary (u^T N, sqrt(n u^T Sigma_inf u)) of the total.

    `expectation` is a per-cluster mean vector or any prediction object
    carrying one (Nhat preferred over Ninf when both are present).
    """
    if hasattr(expectation, "Nhat"):
        N = np.asarray(expectation.Nhat, dtype=np.float64)
    elif hasattr(expectation, "Ninf"):
        N = np.asarray(expectation.Ninf, dtype=np.float64)
    else:
        N = np.asarray(expectation, dtype=np.float64)
    sigma_inf = np.asarray(sigma_inf, dtype=np.float64)
    r = N.shape[0]
    if sigma_inf.shape != (r, r):
        raise ValidationError(f"covariance must be {r} x {r}")
    if u is None:
        u = np.ones(r)
    u = np.asarray(u, dtype=np.float64)
    var = float(n) * float(u @ sigma_inf @ u)
    if var < -1e-12 * max(1.0, float(np.max(np.abs(sigma_inf))) * n):
        raise NumericalError(f"negative predicted variance {var!r}")
    std = math.sqrt(max(var, 0.0))
    return PredictedDistribution(
        mean_total=float(u @ N), std_total=std, per_cluster_mean=N,
        covariance=float(n) * sigma_inf)

"""Heterogeneous SIS rate networks: representation, file I/O, generation.

A network is the pair (rates, curing): a sparse n x n matrix of per-link
infection rates (entry (i, j) is the Poisson rate at which an infected i
infects a healthy j) and a strictly positive per-node healing-rate vector.
The diagonal carries no meaning (no self-infection) and is never stored.
"""

import math
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import CapacityError, GenerationError, NumericalError, ParseError, ValidationError

__all__ = [
    "RateNetwork",
    "load_network",
    "save_network",
    "generate_configuration_model",
    "spectral_threshold",
    "load_bundled_surrogate",
    "DENSE_THRESHOLD",
]

# Above this node count, operations that would materialize an n x n dense
# matrix refuse to run (CapacityError) unless the caller raises the cap.
DENSE_THRESHOLD = 4096


class RateNetwork:
    """Immutable weighted directed network with per-node curing rates.

    Attributes
    ----------
    n : int
        Node count; node ids are dense in [0, n).
    rates : scipy.sparse.csr_matrix
        Strictly positive off-diagonal infection rates, row i = out-edges
        of node i, canonical CSR (sorted column indices per row).
    curing : ndarray
        Length-n vector of healing rates, all > 0.
    self_loops_dropped : int
        Number of diagonal records discarded during construction.
    """

    def __init__(self, rates, curing, self_loops_dropped=0):
        # copy: the input may share (possibly frozen) buffers with another network
        rates = sp.csr_matrix(rates, dtype=np.float64, copy=True)
        curing = np.asarray(curing, dtype=np.float64)
        if rates.shape[0] != rates.shape[1]:
            raise ValidationError(f"rate matrix must be square, got {rates.shape}")
        n = rates.shape[0]
        if n < 1:
            raise ValidationError("network needs at least one node")
        if curing.shape != (n,):
            raise ValidationError(f"curing vector has length {curing.shape}, expected ({n},)")
        if not np.all(curing > 0):
            raise ValidationError("all curing rates must be strictly positive")

        diag = rates.diagonal()
        if np.any(diag != 0):
            rates = rates - sp.diags(diag)
            self_loops_dropped += int(np.count_nonzero(diag))
        rates.sum_duplicates()
        rates.eliminate_zeros()
        rates.sort_indices()
        if np.any(rates.data <= 0):
            raise ValidationError("all stored infection rates must be strictly positive")

        rates.data.flags.writeable = False
        rates.indices.flags.writeable = False
        rates.indptr.flags.writeable = False
        curing = curing.copy()
        curing.flags.writeable = False

        self.n = n
        self.rates = rates
        self.curing = curing
        self.self_loops_dropped = int(self_loops_dropped)
        if self.self_loops_dropped:
            warnings.warn(f"dropped {self.self_loops_dropped} self-loop record(s)", stacklevel=2)

    @classmethod
    def from_edges(cls, src, dst, rate, curing, n=None):
        """Build from parallel edge arrays; duplicate (src, dst) pairs sum.

        Self-loops are dropped (counted), non-positive rates rejected.
        """
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        rate = np.asarray(rate, dtype=np.float64)
        if not (src.shape == dst.shape == rate.shape):
            raise ValidationError("edge arrays must have equal length")
        if src.size and (src.min() < 0 or dst.min() < 0):
            raise ValidationError("node ids must be non-negative")
        if np.any(rate <= 0):
            raise ValidationError("infection rates must be strictly positive")
        inferred = int(max(src.max(initial=-1), dst.max(initial=-1)) + 1)
        if n is None:
            n = max(inferred, np.asarray(curing).shape[0] if curing is not None else 0, 1)
        elif inferred > n:
            raise ValidationError(f"edge references node {inferred - 1} but n={n}")
        n = int(n)

        loop = src == dst
        dropped = int(np.count_nonzero(loop))
        keep = ~loop
        mat = sp.coo_matrix((rate[keep], (src[keep], dst[keep])), shape=(n, n))
        if curing is None:
            curing = np.ones(n)
        return cls(mat.tocsr(), curing, self_loops_dropped=dropped)

    @property
    def edge_count(self):
        return int(self.rates.nnz)

    def in_strength(self):
        """Total incoming infection rate per node, sum_i a~_ij."""
        return np.asarray(self.rates.sum(axis=0)).ravel()

    def out_strength(self):
        """Total outgoing infection rate per node, sum_j a~_ij."""
        return np.asarray(self.rates.sum(axis=1)).ravel()

    def dense_rates(self, threshold=DENSE_THRESHOLD):
        """Dense copy of the rate matrix; refuses above the capacity cap."""
        if self.n > threshold:
            raise CapacityError(f"n={self.n} exceeds dense capacity {threshold}")
        return self.rates.toarray()

    def __eq__(self, other):
        if not isinstance(other, RateNetwork):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.curing, other.curing)
            and np.array_equal(self.rates.indptr, other.rates.indptr)
            and np.array_equal(self.rates.indices, other.rates.indices)
            and np.array_equal(self.rates.data, other.rates.data)
        )

    def __repr__(self):
        return f"RateNetwork(n={self.n}, edges={self.edge_count})"


def _parse_lines(path, n_fields, converters):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != n_fields:
                raise ParseError(path, lineno, f"expected {n_fields} comma-separated fields, got {len(parts)}")
            try:
                rows.append(tuple(conv(p.strip()) for conv, p in zip(converters, parts)))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return rows


def load_network(edge_path, curing_path=None, n=None, default_curing=1.0):
    """Load a RateNetwork from a `src,dst,rate` edge file.

    Lines starting with `#` are comments. Duplicate directed edges sum;
    self-loops are dropped with a count. `curing_path` points to optional
    `node,delta` records; nodes absent from it get `default_curing`.
    Nodes with zero in- and out-degree are retained when covered by `n`
    or the curing file.
    """
    if default_curing <= 0:
        raise ValidationError("default curing rate must be strictly positive")
    edges = _parse_lines(edge_path, 3, (int, int, float))
    if edges:
        src, dst, rate = (np.array(col) for col in zip(*edges))
    else:
        src = dst = np.zeros(0, dtype=np.int64)
        rate = np.zeros(0)

    size = int(max(src.max(initial=-1) + 1, dst.max(initial=-1) + 1, n or 1))
    if curing_path is not None:
        recs = _parse_lines(curing_path, 2, (int, float))
        ids = np.array([r[0] for r in recs], dtype=np.int64)
        vals = np.array([r[1] for r in recs])
        if ids.size and ids.min() < 0:
            raise ValidationError("curing node ids must be non-negative")
        size = int(max(size, ids.max(initial=-1) + 1))
        curing = np.full(size, float(default_curing))
        curing[ids] = vals
    else:
        curing = np.full(size, float(default_curing))

    return RateNetwork.from_edges(src, dst, rate, curing, n=size)


def save_network(net, edge_path, curing_path=None, metadata=None):
    """Write the edge file (and optionally the curing file) back to disk.

    `metadata` key/value pairs go into `#` header comments; `n` is always
    recorded so isolated nodes survive a round-trip through the file pair.
    Float rates are written with shortest round-trip repr, so
    load(save(net)) reproduces the stored arrays bit-exactly.
    """
    coo = net.rates.tocoo()
    with open(edge_path, "w", encoding="utf-8") as fh:
        fh.write("# src,dst,rate\n")
        fh.write(f"# n={net.n}\n")
        for key, val in (metadata or {}).items():
            fh.write(f"# {key}={val}\n")
        order = np.lexsort((coo.col, coo.row))
        for idx in order:
            fh.write(f"{coo.row[idx]},{coo.col[idx]},{float(coo.data[idx])!r}\n")
    if curing_path is not None:
        with open(curing_path, "w", encoding="utf-8") as fh:
            fh.write("# node,delta\n")
            for i, d in enumerate(net.curing):
                fh.write(f"{i},{float(d)!r}\n")


def _mean_floored_pareto(scale, alpha, cutoff):
    # E[min(floor(X), cutoff)] for X ~ Pareto(scale, alpha): sum of tail probs.
    j = np.arange(1, cutoff + 1, dtype=np.float64)
    return float(np.sum(np.minimum(1.0, (scale / j) ** alpha)))


def _calibrate_scale(alpha, mean_target, cutoff):
    lo, hi = 0.25, float(cutoff)
    if _mean_floored_pareto(hi, alpha, cutoff) < mean_target:
        raise ValidationError(f"mean degree target {mean_target} unreachable with cutoff {cutoff}")
    if _mean_floored_pareto(lo, alpha, cutoff) > mean_target:
        raise ValidationError(f"mean degree target {mean_target} below the minimum the tail supports")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _mean_floored_pareto(mid, alpha, cutoff) < mean_target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_configuration_model(
    n,
    tail_exponent,
    mean_degree_target,
    seed,
    min_degree=None,
    max_degree=None,
    resample_budget=64,
):
    """Largest connected component of a power-law configuration model.

    Degrees are floor(Pareto) with tail Pr(D > x) ~ x**(-tail_exponent),
    scale calibrated so the expected degree hits `mean_degree_target`
    (or fixed by `min_degree` when given). Stubs are matched uniformly;
    multi-edges collapse to a single link, self-loops are removed, and all
    surviving links get rate 1 in both directions with uniform curing 1.
    Deterministic for a fixed seed.
    """
    if n < 2:
        raise ValidationError("configuration model needs n >= 2")
    if tail_exponent <= 1:
        raise ValidationError("tail exponent must exceed 1 for a finite mean")
    cutoff = int(max_degree) if max_degree is not None else n - 1
    if cutoff < 1:
        raise ValidationError("max_degree must be at least 1")
    if min_degree is not None:
        scale = float(min_degree)
    else:
        scale = _calibrate_scale(float(tail_exponent), float(mean_degree_target), cutoff)

    rng = np.random.default_rng(seed)
    degrees = None
    for _ in range(resample_budget):
        u = rng.random(n)
        draw = np.minimum(np.floor(scale * u ** (-1.0 / tail_exponent)), cutoff).astype(np.int64)
        draw = np.maximum(draw, 1)
        if draw.sum() % 2 == 0:
            degrees = draw
            break
    if degrees is None:
        raise GenerationError(f"no even-sum degree sequence within {resample_budget} resamples")

    stubs = np.repeat(np.arange(n, dtype=np.int64), degrees)
    rng.shuffle(stubs)
    a = stubs[0::2]
    b = stubs[1::2]
    keep = a != b
    a, b = a[keep], b[keep]
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    uniq = np.unique(lo.astype(np.int64) * n + hi)
    lo = uniq // n
    hi = uniq % n

    adj = sp.coo_matrix((np.ones(lo.size), (lo, hi)), shape=(n, n)).tocsr()
    n_comp, labels = connected_components(adj, directed=False)
    sizes = np.bincount(labels, minlength=n_comp)
    giant = int(np.argmax(sizes))
    keep_nodes = np.flatnonzero(labels == giant)
    relabel = -np.ones(n, dtype=np.int64)
    relabel[keep_nodes] = np.arange(keep_nodes.size)

    mask = (relabel[lo] >= 0) & (relabel[hi] >= 0)
    lo2, hi2 = relabel[lo[mask]], relabel[hi[mask]]
    src = np.concatenate([lo2, hi2])
    dst = np.concatenate([hi2, lo2])
    m = keep_nodes.size
    return RateNetwork.from_edges(src, dst, np.ones(src.size), np.ones(m), n=m)


def _shifted_power_iteration(matvec, n, shift, tol, max_iter):
    """Dominant (Perron) eigenvalue of a non-negative operator.

    Iterates on A + shift*I so the Perron root strictly dominates in
    modulus even for periodic (e.g. bipartite) structures.
    """
    x = np.full(n, 1.0 / math.sqrt(n))
    lam = 0.0
    for _ in range(max_iter):
        ax = matvec(x)
        lam_new = float(x @ ax)
        y = ax + shift * x
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0
        x = y / norm
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            lam = lam_new
            resid = float(np.linalg.norm(matvec(x) - lam * x))
            if resid <= 10.0 * tol * max(abs(lam) + shift, 1.0):
                return lam
        lam = lam_new
    resid = float(np.linalg.norm(matvec(x) - lam * x))
    raise NumericalError(f"power iteration did not converge in {max_iter} iterations (residual {resid:.3e})")


def spectral_threshold(net, tol=1e-10, max_iter=100_000):
    """Dominant eigenvalue of diag(1/curing) @ rates.T.

    The epidemic threshold: a metastable state is predicted to exist
    exactly when the returned value exceeds 1. Real and non-negative by
    Perron-Frobenius; 0 for a network without links.
    """
    if net.edge_count == 0:
        return 0.0
    rates_t = net.rates.T.tocsr()
    inv_delta = 1.0 / net.curing

    def matvec(x):
        return inv_delta * (rates_t @ x)

    shift = float(np.max(net.in_strength() / net.curing))
    return _shifted_power_iteration(matvec, net.n, shift, tol, max_iter)


def load_bundled_surrogate():
    """The packaged 500-node weighted digraph used by the acceptance suite.

    Mirrors the structural quirks of real flight networks: asymmetric
    weighted rates plus nodes with zero in-degree, zero out-degree, or
    both (isolated nodes are retained).
    """
    from importlib import resources

    base = resources.files("sisclust").joinpath("data")
    with resources.as_file(base.joinpath("surrogate_edges.csv")) as ep, resources.as_file(
        base.joinpath("surrogate_curing.csv")
    ) as cp:
        return load_network(str(ep), str(cp))

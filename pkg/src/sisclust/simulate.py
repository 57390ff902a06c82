"""Exact event-driven simulation of the heterogeneous SIS chain.

Every healthy node j becomes infected at rate sum_{i infected} a~_ij and
every infected node i heals at rate delta_i. Trajectories are exact samples
of the 2^n-state continuous-time Markov chain, bit-reproducible for a fixed
seed on any platform.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from ._rng import derive_seed
from .errors import ValidationError, SubcriticalError
from .network import RateNetwork, spectral_threshold

EVENT_DTYPE = np.dtype([("time", "<f8"), ("node", "<u4"), ("kind", "u1")])

_EMPTY_I8 = np.zeros(0, dtype=np.int64)
_EMPTY_F8 = np.zeros(0)
_EMPTY_U4 = np.zeros(0, dtype=np.uint32)
_EMPTY_U1 = np.zeros(0, dtype=np.uint8)


class Trajectory:
    """Event-ordered record of one simulation run.

    kinds: 1 = infection, 0 = healing. Times are absolute and
    non-decreasing. The run ends at `end_time`, either the horizon or the
    moment the last infected node healed (then `absorbed` is set).
    """

    def __init__(self, n, times, nodes, kinds, initial_infected, final_state,
                 horizon, end_time, absorbed, seed):
        self.n = n
        self.times = times
        self.nodes = nodes
        self.kinds = kinds
        self.initial_infected = initial_infected
        self.final_state = final_state
        self.horizon = horizon
        self.end_time = end_time
        self.absorbed = absorbed
        self.absorption_time = end_time if absorbed else None
        self.seed = seed

    def __len__(self):
        return self.times.shape[0]

    def infected_count_trace(self):
        """Step function of the total infected count: returns (times, counts)
        where counts[i] holds after the event at times[i]; the count before
        the first event is len(initial_infected)."""
        deltas = np.where(self.kinds == 1, 1, -1)
        counts = len(self.initial_infected) + np.cumsum(deltas)
        return self.times, counts

    def time_average_infected(self, t_from, t_to):
        """Time-integrated mean of the total infected count over [t_from, t_to]."""
        t_to = min(t_to, self.end_time)
        if t_to <= t_from:
            raise ValidationError("empty averaging interval")
        times, counts = self.infected_count_trace()
        grid = np.concatenate([[0.0], times, [self.end_time]])
        vals = np.concatenate([[len(self.initial_infected)], counts])
        lo = np.clip(grid[:-1], t_from, t_to)
        hi = np.clip(grid[1:], t_from, t_to)
        return float(np.sum((hi - lo) * vals) / (t_to - t_from))

    def to_event_log(self, path):
        rec = np.empty(len(self), dtype=EVENT_DTYPE)
        rec["time"] = self.times
        rec["node"] = self.nodes
        rec["kind"] = self.kinds
        rec.tofile(path)

    def __repr__(self):
        return (f"Trajectory(n={self.n}, events={len(self)}, "
                f"end_time={self.end_time:.6g}, absorbed={self.absorbed})")


def load_event_log(path):
    """Read a binary event log back as a structured array (time, node, kind)."""
    return np.fromfile(path, dtype=EVENT_DTYPE)


def _initial_state(net, initial_infected):
    state = np.zeros(net.n, dtype=np.uint8)
    idx = np.asarray(sorted(set(int(i) for i in initial_infected)), dtype=np.int64)
    if idx.size:
        if idx[0] < 0 or idx[-1] >= net.n:
            raise ValidationError(f"initial infected node out of range 0..{net.n - 1}")
        state[idx] = 1
    return state, idx


def simulate_sis(net, initial_infected, horizon, seed):
    """Simulate the exact chain from the given infected set up to `horizon`.

    Returns a Trajectory; deterministic for fixed (net, arguments, seed).
    Absorption (all nodes healthy) ends the run early and is flagged.
    """
    if not isinstance(net, RateNetwork):
        raise ValidationError("net must be a RateNetwork")
    horizon = float(horizon)
    if horizon < 0:
        raise ValidationError("horizon must be non-negative")
    state, idx = _initial_state(net, initial_infected)
    if idx.size == 0 and horizon > 0:
        raise ValidationError("initial infected set is empty")

    S = net.rates
    parts_t, parts_n, parts_k = [], [], []
    t = 0.0
    absorbed = False
    cap = 1 << 16
    segment = 0
    dummy_occ = np.zeros(net.n)
    while horizon > 0:
        ev_t = np.empty(cap)
        ev_n = np.empty(cap, dtype=np.uint32)
        ev_k = np.empty(cap, dtype=np.uint8)
        status, t, nev, _ = _engine.sim_sparse(
            S.indptr, S.indices, S.data, net.curing, state,
            t, horizon, 0.0, 0, _EMPTY_I8, dummy_occ,
            np.uint64(derive_seed(seed, f"events/{segment}")),
            cap, ev_t, ev_n, ev_k,
        )
        parts_t.append(ev_t[:nev])
        parts_n.append(ev_n[:nev])
        parts_k.append(ev_k[:nev])
        if status == 2:
            # capacity segment filled; continue from the mutated state
            segment += 1
            cap *= 2
            continue
        absorbed = status == 1
        break

    times = np.concatenate(parts_t) if parts_t else np.zeros(0)
    nodes = np.concatenate(parts_n) if parts_n else _EMPTY_U4.copy()
    kinds = np.concatenate(parts_k) if parts_k else _EMPTY_U1.copy()
    end_time = t if absorbed else horizon
    return Trajectory(net.n, times, nodes, kinds, idx, state, horizon,
                      end_time, absorbed, seed)


@dataclass
class SimulationSummary:
    """Aggregated metastable-window statistics of one or more runs."""

    n: int
    samples: np.ndarray
    node_frequency: np.ndarray
    burn_in_time: float
    window_time: float
    sample_interval: float
    seed: int
    restarts: int
    absorbed: bool
    absorption_time: float | None
    stationary_ok: bool
    half_means: tuple = (float("nan"), float("nan"))

    @property
    def mean(self):
        return float(self.samples.mean())

    @property
    def std(self):
        return float(self.samples.std())

    @property
    def ecdf(self):
        values, counts = np.unique(self.samples, return_counts=True)
        return values, np.cumsum(counts) / self.samples.size

    def to_json(self, path=None):
        values, counts = np.unique(self.samples, return_counts=True)
        doc = {
            "n": int(self.n),
            "mean": self.mean,
            "std": self.std,
            "sample_count": int(self.samples.size),
            "burn_in_time": self.burn_in_time,
            "window_time": self.window_time,
            "sample_interval": self.sample_interval,
            "seed": int(self.seed),
            "restarts": int(self.restarts),
            "absorbed": bool(self.absorbed),
            "absorption_time": self.absorption_time,
            "stationary_ok": bool(self.stationary_ok),
            "half_means": [float(x) for x in self.half_means],
            "ecdf_value": [int(v) for v in values],
            "ecdf_count": [int(c) for c in counts],
            "node_frequency": [float(x) for x in self.node_frequency],
        }
        if path is not None:
            with open(path, "w") as fh:
                json.dump(doc, fh, indent=1)
                fh.write("\n")
        return doc

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        samples = np.repeat(np.asarray(doc["ecdf_value"], dtype=np.int64),
                            np.asarray(doc["ecdf_count"], dtype=np.int64))
        return cls(
            n=doc["n"],
            samples=samples,
            node_frequency=np.asarray(doc["node_frequency"]),
            burn_in_time=doc["burn_in_time"],
            window_time=doc["window_time"],
            sample_interval=doc["sample_interval"],
            seed=doc["seed"],
            restarts=doc["restarts"],
            absorbed=doc["absorbed"],
            absorption_time=doc["absorption_time"],
            stationary_ok=doc["stationary_ok"],
            half_means=tuple(doc["half_means"]),
        )

    def samples_to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("index,total_infected\n")
            for i, v in enumerate(self.samples):
                fh.write(f"{i},{int(v)}\n")


def _halves_diagnostic(samples):
    # first vs second half-window means within one pooled standard error;
    # reported, never enforced
    m = samples.size
    if m < 4:
        return True, (float("nan"), float("nan"))
    h = m // 2
    a, b = samples[:h], samples[h:]
    se = samples.std() * np.sqrt(1.0 / a.size + 1.0 / b.size)
    gap = abs(a.mean() - b.mean())
    return bool(gap <= max(se, 1e-12)), (float(a.mean()), float(b.mean()))


def metastable_sample(net, window, burn_in=None, sample_interval=None, seed=0,
                      max_restarts=10_000):
    """Sample the metastable regime: start all-infected, discard `burn_in`,
    then record the total infected count every `sample_interval` until the
    window is filled. A run that dies out is restarted with a fresh derived
    seed (count recorded); too many fruitless restarts raise a subcritical
    error. Per-node infection frequency is time-averaged over the window.
    """
    if not isinstance(net, RateNetwork):
        raise ValidationError("net must be a RateNetwork")
    window = float(window)
    if window <= 0:
        raise ValidationError("window must be positive")
    delta_min = float(net.curing.min())
    if burn_in is None:
        burn_in = 10.0 / delta_min
    burn_in = float(burn_in)
    if burn_in < 0:
        raise ValidationError("burn_in must be non-negative")
    if sample_interval is None:
        sample_interval = 1.0 / delta_min
    sample_interval = float(sample_interval)
    if sample_interval <= 0:
        raise ValidationError("sample_interval must be positive")
    n_samples = max(1, int(round(window / sample_interval)))
    if max_restarts < 0:
        raise ValidationError("max_restarts must be non-negative")

    S = net.rates
    pooled = np.zeros(n_samples, dtype=np.int64)
    occ_total = np.zeros(net.n)
    coverage = 0.0
    filled = 0
    runs = 0
    absorbed_any = False
    last_absorption = None

    while filled < n_samples:
        if runs > max_restarts or (filled == 0 and runs >= min(32, max_restarts + 1)):
            msg = (f"epidemic keeps dying out ({runs} runs, {filled}/{n_samples} "
                   f"samples collected); the regime is likely subcritical")
            try:
                thr = spectral_threshold(net)
                msg += f" (spectral threshold {thr:.4g}, need > 1)"
            except Exception:
                pass
            raise SubcriticalError(msg)
        need = n_samples - filled
        state = np.ones(net.n, dtype=np.uint8)
        buf = np.zeros(need, dtype=np.int64)
        occ = np.zeros(net.n)
        status, tf, _, nfill = _engine.sim_sparse(
            S.indptr, S.indices, S.data, net.curing, state,
            0.0, burn_in, sample_interval, need, buf, occ,
            np.uint64(derive_seed(seed, f"run/{runs}")),
            -1, _EMPTY_F8, _EMPTY_U4, _EMPTY_U1,
        )
        runs += 1
        if nfill:
            pooled[filled:filled + nfill] = buf[:nfill]
            filled += nfill
        occ_total += occ
        coverage += max(0.0, min(tf, burn_in + need * sample_interval) - burn_in)
        if status == 1:
            absorbed_any = True
            last_absorption = tf

    node_frequency = occ_total / coverage if coverage > 0 else np.zeros(net.n)
    stationary_ok, half_means = _halves_diagnostic(pooled)
    return SimulationSummary(
        n=net.n,
        samples=pooled,
        node_frequency=node_frequency,
        burn_in_time=burn_in,
        window_time=coverage,
        sample_interval=sample_interval,
        seed=seed,
        restarts=runs - 1,
        absorbed=absorbed_any,
        absorption_time=last_absorption,
        stationary_ok=stationary_ok,
        half_means=half_means,
    )


def metastable_sample_rank1(w, h, curing, window, burn_in=None,
                            sample_interval=None, seed=0, max_restarts=10_000):
    """metastable_sample for dense rank-1 rates a~_ij = w_i h_j (diagonal
    zero) without materializing the n x n matrix. Used for factor-network
    consistency checks at large n."""
    w = np.ascontiguousarray(np.asarray(w, dtype=np.float64))
    h = np.ascontiguousarray(np.asarray(h, dtype=np.float64))
    curing = np.ascontiguousarray(np.asarray(curing, dtype=np.float64))
    n = w.shape[0]
    if h.shape[0] != n or curing.shape[0] != n:
        raise ValidationError("w, h, curing must have equal length")
    if np.any(w < 0) or np.any(h < 0):
        raise ValidationError("factor vectors must be non-negative")
    if np.any(curing <= 0):
        raise ValidationError("curing rates must be positive")
    window = float(window)
    if window <= 0:
        raise ValidationError("window must be positive")
    delta_min = float(curing.min())
    if burn_in is None:
        burn_in = 10.0 / delta_min
    if sample_interval is None:
        sample_interval = 1.0 / delta_min
    burn_in = float(burn_in)
    sample_interval = float(sample_interval)
    if burn_in < 0 or sample_interval <= 0:
        raise ValidationError("invalid burn_in or sample_interval")
    n_samples = max(1, int(round(window / sample_interval)))

    pooled = np.zeros(n_samples, dtype=np.int64)
    occ_total = np.zeros(n)
    coverage = 0.0
    filled = 0
    runs = 0
    absorbed_any = False
    last_absorption = None
    while filled < n_samples:
        if runs > max_restarts or (filled == 0 and runs >= min(32, max_restarts + 1)):
            raise SubcriticalError(
                f"epidemic keeps dying out ({runs} runs, {filled}/{n_samples} "
                f"samples); the rank-1 regime is likely subcritical")
        need = n_samples - filled
        state = np.ones(n, dtype=np.uint8)
        buf = np.zeros(need, dtype=np.int64)
        occ = np.zeros(n)
        status, tf, _, nfill = _engine.sim_rank1(
            w, h, curing, state, 0.0, burn_in, sample_interval, need, buf, occ,
            np.uint64(derive_seed(seed, f"run/{runs}")),
        )
        runs += 1
        if nfill:
            pooled[filled:filled + nfill] = buf[:nfill]
            filled += nfill
        occ_total += occ
        coverage += max(0.0, min(tf, burn_in + need * sample_interval) - burn_in)
        if status == 1:
            absorbed_any = True
            last_absorption = tf

    node_frequency = occ_total / coverage if coverage > 0 else np.zeros(n)
    stationary_ok, half_means = _halves_diagnostic(pooled)
    return SimulationSummary(
        n=n,
        samples=pooled,
        node_frequency=node_frequency,
        burn_in_time=burn_in,
        window_time=coverage,
        sample_interval=sample_interval,
        seed=seed,
        restarts=runs - 1,
        absorbed=absorbed_any,
        absorption_time=last_absorption,
        stationary_ok=stationary_ok,
        half_means=half_means,
    )


def merge_summaries(summaries):
    """Pool independent replica summaries (associative; order of samples
    follows argument order)."""
    summaries = list(summaries)
    if not summaries:
        raise ValidationError("nothing to merge")
    n = summaries[0].n
    interval = summaries[0].sample_interval
    for s in summaries[1:]:
        if s.n != n:
            raise ValidationError("summaries describe different networks")
    pooled = np.concatenate([s.samples for s in summaries])
    total_cov = sum(s.window_time for s in summaries)
    if total_cov > 0:
        freq = sum(s.node_frequency * s.window_time for s in summaries) / total_cov
    else:
        freq = np.zeros(n)
    stationary_ok, half_means = _halves_diagnostic(pooled)
    absorbed = [s for s in summaries if s.absorbed]
    return SimulationSummary(
        n=n,
        samples=pooled,
        node_frequency=freq,
        burn_in_time=summaries[0].burn_in_time,
        window_time=total_cov,
        sample_interval=interval,
        seed=summaries[0].seed,
        restarts=sum(s.restarts for s in summaries),
        absorbed=bool(absorbed),
        absorption_time=absorbed[-1].absorption_time if absorbed else None,
        stationary_ok=stationary_ok,
        half_means=half_means,
    )

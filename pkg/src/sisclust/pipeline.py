"""End-to-end orchestration and artifact persistence.

A PipelineConfig drives the chain factorize -> cluster -> solve ->
covariance -> correction, the matching stochastic simulation, and the
comparison of the two. Every stage writes plain CSV/JSON artifacts into
the output directory, so later stages (and re-runs) work from disk, not
from process state.
"""

import dataclasses
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from ._rng import derive_seed
from .clusters import Clustering, cluster_nodes, node_profiles, singleton_clustering
from .errors import CapacityError, ValidationError
from .fluctuation import build_fluctuation, predicted_distribution
from .metastable import (MetastablePrediction, corrected_mean_field,
                         node_probabilities_csv, solve_V)
from .network import (DENSE_THRESHOLD, RateNetwork, load_bundled_surrogate,
                      load_network)
from .nmf import FactorPair, factorize, identity_factorization, tune_lambda
from .simulate import (SimulationSummary, merge_summaries, metastable_sample,
                       metastable_sample_rank1)

ARTIFACT_NAMES = {
    "config": "config.resolved.json",
    "factors": "factors",  # prefix for .W.csv / .H.csv / .json
    "clusters_csv": "clusters.csv",
    "clusters_json": "clusters.json",
    "prediction": "prediction.json",
    "node_probs": "node_probabilities.csv",
    "fluctuation": "fluctuation.json",
    "predicted_cdf": "predicted_cdf.csv",
    "summary": "summary.json",
    "samples": "samples.csv",
    "sim_meta": "sim_meta.json",
    "report": "report.json",
    "report_csv": "report.csv",
    "cdf_overlay": "cdf_overlay.csv",
    "node_scatter": "node_scatter.csv",
    "report_txt": "report.txt",
}


@dataclass
class PipelineConfig:
    """Resolved parameters for one pipeline run."""

    edges: str | None = None
    curing: str | None = None
    default_curing: float = 1.0
    bundled_surrogate: bool = False

    k: int = 1
    lam: float | None = 0.0        # None switches to tuning over [lo, hi]
    tune_lo: float = -2.0
    tune_hi: float = 6.0
    tune_tol: float = 1e-3
    identity: bool = False         # W = I, H = rates, k = n
    symmetric: bool = False
    nmf_max_iter: int = 500
    nmf_tol: float = 1e-6

    r: int | None = None           # None: one cluster per node
    outlier_singletons: int | None = None
    kmeans_restarts: int = 4

    burn_in: float | None = None
    window: float = 1000.0
    sample_interval: float | None = None
    replicas: int = 1
    max_restarts: int = 10_000
    wth_rates: bool = False        # simulate the factor-reconstructed rates

    correction: bool = True
    refine_covariance: bool = False

    seed: int = 0
    outdir: str = "artifacts"
    dense_threshold: int = DENSE_THRESHOLD

    @classmethod
    def from_json(cls, path, overrides=None):
        with open(path) as fh:
            doc = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        bad = sorted(set(doc) - known)
        if bad:
            raise ValidationError(f"unknown config keys: {', '.join(bad)}")
        if overrides:
            doc.update(overrides)
        return cls(**doc)

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def validate(self, need_network=True):
        if need_network and not self.bundled_surrogate:
            if self.edges is None:
                raise ValidationError("config needs an edges path "
                                      "(or bundled_surrogate: true)")
            if not os.path.exists(self.edges):
                raise ValidationError(f"edges file not found: {self.edges}")
            if self.curing is not None and not os.path.exists(self.curing):
                raise ValidationError(f"curing file not found: {self.curing}")
        if self.k < 1:
            raise ValidationError("k must be at least 1")
        if self.r is not None and self.r < 1:
            raise ValidationError("r must be at least 1")
        if self.lam is None and not self.tune_lo < self.tune_hi:
            raise ValidationError("tuning range must satisfy lo < hi")
        if self.window <= 0:
            raise ValidationError("window must be positive")
        if self.replicas < 1:
            raise ValidationError("replicas must be at least 1")
        if self.default_curing <= 0:
            raise ValidationError("default curing rate must be positive")
        if self.dense_threshold < 1:
            raise ValidationError("dense threshold must be positive")
        return self


def artifact_path(config, name):
    return os.path.join(config.outdir, ARTIFACT_NAMES[name])


def _prepare_outdir(config, need_network=True):
    config.validate(need_network=need_network)
    os.makedirs(config.outdir, exist_ok=True)
    config.to_json(artifact_path(config, "config"))


def load_input_network(config):
    if config.bundled_surrogate:
        return load_bundled_surrogate()
    return load_network(config.edges, config.curing,
                        default_curing=config.default_curing)


def run_factorize(config, net=None):
    """Factor the rate matrix per config and persist the FactorPair."""
    _prepare_outdir(config)
    if net is None:
        net = load_input_network(config)
    if config.identity:
        pair = identity_factorization(net, threshold=config.dense_threshold)
    elif config.lam is None:
        tuned = tune_lambda(
            net, config.k, lo=config.tune_lo, hi=config.tune_hi,
            tol=config.tune_tol,
            factor_opts={"max_iter": config.nmf_max_iter,
                         "tol": config.nmf_tol,
                         "seed": derive_seed(config.seed, "factorize"),
                         "symmetric": config.symmetric})
        pair = tuned.pair
    else:
        pair = factorize(net, config.k, lam=config.lam,
                         max_iter=config.nmf_max_iter, tol=config.nmf_tol,
                         seed=derive_seed(config.seed, "factorize"),
                         symmetric=config.symmetric)
    pair.save(artifact_path(config, "factors"))
    return net, pair


def run_cluster(config, net=None, pair=None):
    """Partition nodes per config and persist the Clustering."""
    if net is None or pair is None:
        _prepare_outdir(config)
        net = load_input_network(config)
        pair = FactorPair.load(artifact_path(config, "factors"))
    zp = node_profiles(pair, net)
    if config.r is None or config.r >= net.n:
        cl = singleton_clustering(zp)
    else:
        cl = cluster_nodes(zp, config.r,
                           seed=derive_seed(config.seed, "cluster"),
                           restarts=config.kmeans_restarts,
                           outlier_singletons=config.outlier_singletons)
    cl.to_csv(artifact_path(config, "clusters_csv"))
    cl.to_json(artifact_path(config, "clusters_json"))
    return net, pair, cl


def _shim_prediction(cl, Nhat, base):
    V = (cl.Yw @ Nhat) / cl.n
    return MetastablePrediction(V=V, Ninf=np.asarray(Nhat, dtype=np.float64),
                                exists=True, abar_eig=base.abar_eig,
                                balance_residual=base.balance_residual)


def run_predict(config):
    """Full prediction chain; returns a dict of stage results.

    result["status"] is "ok" or "subcritical"; on subcritical the
    prediction artifact carries the zero state and no fluctuation model
    is built (there is nothing to linearize around).
    """
    t0 = time.perf_counter()
    _prepare_outdir(config)
    net, pair = run_factorize(config)
    net, pair, cl = run_cluster(config, net, pair)
    pred = solve_V(cl)

    if not pred.exists:
        doc = pred.to_json_dict()
        doc.update({
            "status": "subcritical",
            "mean_total": 0.0,
            "std_total": 0.0,
            "runtime_seconds": time.perf_counter() - t0,
        })
        with open(artifact_path(config, "prediction"), "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        node_probabilities_csv(artifact_path(config, "node_probs"), cl,
                               np.zeros(cl.r))
        dist = predicted_distribution(pred, np.zeros((cl.r, cl.r)), cl.n)
        dist.cdf_table_csv(artifact_path(config, "predicted_cdf"))
        return {"status": "subcritical", "net": net, "pair": pair, "cl": cl,
                "prediction": pred, "fluctuation": None, "corrected": None,
                "dist_mean_field": dist, "dist_corrected": None}

    fm = build_fluctuation(cl, pred)
    sigma = fm.SigmaInf
    corr = None
    if config.correction:
        corr = corrected_mean_field(cl, sigma, prediction=pred)
        if config.refine_covariance:
            for _ in range(3):
                fm_ref = build_fluctuation(cl, _shim_prediction(cl, corr.Nhat, pred))
                sigma = fm_ref.SigmaInf
                corr = corrected_mean_field(cl, sigma, prediction=pred)

    dist_mf = predicted_distribution(pred.Ninf, fm.SigmaInf, cl.n)
    dist_corr = None
    if corr is not None:
        dist_corr = predicted_distribution(corr, sigma, cl.n)

    doc = pred.to_json_dict()
    doc["status"] = "ok"
    doc["mean_total"] = dist_mf.mean_total
    doc["std_total"] = dist_mf.std_total
    if corr is not None:
        doc.update(corr.to_json_dict())
        doc["mean_total_corrected"] = dist_corr.mean_total
        doc["std_total_corrected"] = dist_corr.std_total
    doc["runtime_seconds"] = time.perf_counter() - t0
    with open(artifact_path(config, "prediction"), "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")

    with open(artifact_path(config, "fluctuation"), "w") as fh:
        json.dump(fm.to_json_dict(), fh, indent=1)
        fh.write("\n")

    expectation = corr.Nhat if corr is not None else pred.Ninf
    node_probabilities_csv(artifact_path(config, "node_probs"), cl, expectation)
    (dist_corr or dist_mf).cdf_table_csv(artifact_path(config, "predicted_cdf"))

    return {"status": "ok", "net": net, "pair": pair, "cl": cl,
            "prediction": pred, "fluctuation": fm, "corrected": corr,
            "dist_mean_field": dist_mf, "dist_corrected": dist_corr}


def run_correct(config):
    """Standalone correction pass over persisted prediction artifacts."""
    config.validate(need_network=False)
    cl = Clustering.from_files(artifact_path(config, "clusters_csv"),
                               artifact_path(config, "clusters_json"))
    with open(artifact_path(config, "prediction")) as fh:
        doc = json.load(fh)
    if doc.get("status") == "subcritical":
        raise ValidationError("prediction artifact is subcritical; "
                              "nothing to correct")
    with open(artifact_path(config, "fluctuation")) as fh:
        fdoc = json.load(fh)
    sigma = np.array(fdoc["SigmaInf"], dtype=np.float64)
    pred = MetastablePrediction(
        V=np.array(doc["V"]), Ninf=np.array(doc["Ninf"]),
        exists=bool(doc["exists"]), abar_eig=float(doc["abar_eig"]),
        balance_residual=float(doc["balance_residual"]))
    corr = corrected_mean_field(cl, sigma, prediction=pred)
    dist_corr = predicted_distribution(corr, sigma, cl.n)
    doc.update(corr.to_json_dict())
    doc["mean_total_corrected"] = dist_corr.mean_total
    doc["std_total_corrected"] = dist_corr.std_total
    with open(artifact_path(config, "prediction"), "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    node_probabilities_csv(artifact_path(config, "node_probs"), cl, corr.Nhat)
    return corr


def _wth_summaries(config, pair, curing):
    if pair.k == 1:
        runner = lambda s: metastable_sample_rank1(
            pair.W[0], pair.H[0], curing, config.window,
            burn_in=config.burn_in, sample_interval=config.sample_interval,
            seed=s, max_restarts=config.max_restarts)
    elif pair.n <= config.dense_threshold:
        rec = pair.reconstruction(threshold=config.dense_threshold)
        net = RateNetwork(rec, curing)
        runner = lambda s: metastable_sample(
            net, config.window, burn_in=config.burn_in,
            sample_interval=config.sample_interval, seed=s,
            max_restarts=config.max_restarts)
    else:
        raise CapacityError(
            f"factor-network simulation needs k=1 or n <= "
            f"{config.dense_threshold}, got k={pair.k}, n={pair.n}")
    return runner


def run_simulate(config):
    """Metastable sampling per config (original or factor-reconstructed
    rates), merged over replicas and persisted."""
    t0 = time.perf_counter()
    _prepare_outdir(config)
    net = load_input_network(config)
    if config.wth_rates:
        pair = FactorPair.load(artifact_path(config, "factors"))
        if pair.n != net.n:
            raise ValidationError("factor artifact does not match the network")
        runner = _wth_summaries(config, pair, net.curing)
    else:
        runner = lambda s: metastable_sample(
            net, config.window, burn_in=config.burn_in,
            sample_interval=config.sample_interval, seed=s,
            max_restarts=config.max_restarts)
    summaries = [runner(derive_seed(config.seed, f"sim/{i}"))
                 for i in range(config.replicas)]
    merged = merge_summaries(summaries) if len(summaries) > 1 else summaries[0]
    merged.to_json(artifact_path(config, "summary"))
    merged.samples_to_csv(artifact_path(config, "samples"))
    with open(artifact_path(config, "sim_meta"), "w") as fh:
        json.dump({
            "replicas": config.replicas,
            "wth_rates": bool(config.wth_rates),
            "runtime_seconds": time.perf_counter() - t0,
            "restarts": int(merged.restarts),
        }, fh, indent=1)
        fh.write("\n")
    return merged


def run_compare(config):
    """Join persisted prediction and simulation artifacts into a report.

    Consumes artifacts only; never re-runs earlier stages. A missing
    simulation summary yields a partial report with null simulated fields.
    """
    from .report import build_report, write_report_artifacts

    config.validate(need_network=False)
    pred_path = artifact_path(config, "prediction")
    if not os.path.exists(pred_path):
        raise ValidationError(f"prediction artifact not found: {pred_path}")
    with open(pred_path) as fh:
        prediction_doc = json.load(fh)

    summary = None
    sim_meta = {}
    if os.path.exists(artifact_path(config, "summary")):
        summary = SimulationSummary.from_json(artifact_path(config, "summary"))
        if os.path.exists(artifact_path(config, "sim_meta")):
            with open(artifact_path(config, "sim_meta")) as fh:
                sim_meta = json.load(fh)

    node_probs = None
    probs_path = artifact_path(config, "node_probs")
    if os.path.exists(probs_path):
        raw = np.loadtxt(probs_path, delimiter=",", skiprows=1, ndmin=2)
        node_probs = raw[np.argsort(raw[:, 0]), 1]

    report = build_report(prediction_doc, summary, sim_meta=sim_meta,
                          node_probs=node_probs)
    write_report_artifacts(report, config)
    return report

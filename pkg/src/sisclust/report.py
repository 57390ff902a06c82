"""Prediction-versus-simulation comparison reports.

Everything here consumes persisted artifacts (prediction.json,
summary.json, node_probabilities.csv) rather than live objects, so a
report can be rebuilt long after the runs that produced it.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr


@dataclass
class MethodRow:
    """One row of the headline table: a method and its moments."""

    method: str
    mean: float | None
    std: float | None
    ks_distance: float | None = None


@dataclass
class ComparisonReport:
    rows: list = field(default_factory=list)
    n: int | None = None
    status: str = "ok"
    simulated_samples: int | None = None
    node_scatter: np.ndarray | None = None   # columns: node, predicted, simulated
    overlay: np.ndarray | None = None        # columns: total, ecdf, cdf per method
    overlay_methods: list = field(default_factory=list)
    runtimes: dict = field(default_factory=dict)

    def row(self, method):
        for r in self.rows:
            if r.method == method:
                return r
        return None

    def to_json_dict(self):
        doc = {
            "status": self.status,
            "n": self.n,
            "simulated_samples": self.simulated_samples,
            "runtimes_seconds": self.runtimes,
            "methods": [
                {"method": r.method, "mean": r.mean, "std": r.std,
                 "ks_distance": r.ks_distance}
                for r in self.rows
            ],
        }
        sim = self.row("simulated")
        if sim is not None and sim.mean is not None:
            for r in self.rows:
                if r.method == "simulated" or r.mean is None:
                    continue
                doc[f"bias_{r.method}"] = r.mean - sim.mean
        return doc


def ks_distance(samples, cdf):
    """One-sample Kolmogorov-Smirnov distance sup_x |F_n(x) - F(x)|.

    Checks the empirical CDF on both sides of each jump; with step
    predictions (zero std) the sup can sit on the left limit.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))
    m = x.size
    if m == 0:
        raise ValueError("need at least one sample")
    f = np.asarray(cdf(x), dtype=np.float64)
    upper = np.arange(1, m + 1) / m
    lower = np.arange(0, m) / m
    return float(max(np.max(np.abs(upper - f)), np.max(np.abs(f - lower))))


def _normal_cdf(mean, std):
    if std > 0:
        return lambda x: ndtr((np.asarray(x, dtype=np.float64) - mean) / std)
    return lambda x: (np.asarray(x, dtype=np.float64) >= mean).astype(np.float64)


def build_report(prediction_doc, summary=None, sim_meta=None, node_probs=None):
    """Assemble a ComparisonReport from artifact dictionaries.

    summary may be None (prediction-only run): simulated fields stay
    null and no KS distances are computed.
    """
    report = ComparisonReport(status=prediction_doc.get("status", "ok"))
    if summary is not None:
        report.n = summary.n
        report.simulated_samples = summary.samples.size
    runtimes = {}
    if "runtime_seconds" in prediction_doc:
        runtimes["predict"] = prediction_doc["runtime_seconds"]
    if sim_meta and "runtime_seconds" in sim_meta:
        runtimes["simulate"] = sim_meta["runtime_seconds"]
    report.runtimes = runtimes

    sim_row = MethodRow("simulated", None, None)
    if summary is not None:
        sim_row = MethodRow("simulated", float(summary.mean), float(summary.std))
    report.rows.append(sim_row)

    methods = []
    mf_mean = prediction_doc.get("mean_total")
    mf_std = prediction_doc.get("std_total")
    if mf_mean is not None:
        methods.append(("mean-field", float(mf_mean), float(mf_std)))
    co_mean = prediction_doc.get("mean_total_corrected")
    co_std = prediction_doc.get("std_total_corrected")
    if co_mean is not None:
        methods.append(("corrected", float(co_mean), float(co_std)))

    for name, mean, std in methods:
        row = MethodRow(name, mean, std)
        if summary is not None:
            row.ks_distance = ks_distance(summary.samples, _normal_cdf(mean, std))
        report.rows.append(row)

    if summary is not None and methods:
        values, cum = summary.ecdf
        x = values.astype(np.float64)
        cols = [x, cum]
        for name, mean, std in methods:
            cols.append(_normal_cdf(mean, std)(x))
            report.overlay_methods.append(name)
        report.overlay = np.column_stack(cols)

    if summary is not None and node_probs is not None:
        freq = np.asarray(summary.node_frequency, dtype=np.float64)
        probs = np.asarray(node_probs, dtype=np.float64)
        if probs.size != freq.size:
            raise ValueError("node probability vector does not match the "
                             "simulated network size")
        report.node_scatter = np.column_stack(
            [np.arange(freq.size), probs, freq])

    return report


def render_text(report):
    """Fixed-width table for terminals and report.txt."""
    lines = []
    lines.append(f"status: {report.status}")
    if report.n is not None:
        lines.append(f"network size: {report.n}")
    if report.simulated_samples is not None:
        lines.append(f"simulated samples: {report.simulated_samples}")
    for stage, secs in sorted(report.runtimes.items()):
        lines.append(f"{stage} runtime: {secs:.3f} s")
    lines.append("")
    header = f"{'method':<12} {'mean':>12} {'std':>12} {'KS':>10}"
    lines.append(header)
    lines.append("-" * len(header))
    for r in report.rows:
        mean = f"{r.mean:.4f}" if r.mean is not None else "-"
        std = f"{r.std:.4f}" if r.std is not None else "-"
        ks = f"{r.ks_distance:.4f}" if r.ks_distance is not None else "-"
        lines.append(f"{r.method:<12} {mean:>12} {std:>12} {ks:>10}")
    sim = report.row("simulated")
    if sim is not None and sim.mean is not None:
        lines.append("")
        for r in report.rows:
            if r.method == "simulated" or r.mean is None:
                continue
            lines.append(f"bias ({r.method}): {r.mean - sim.mean:+.4f}")
    return "\n".join(lines) + "\n"


def write_report_artifacts(report, config):
    from .pipeline import artifact_path

    with open(artifact_path(config, "report"), "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=1)
        fh.write("\n")

    with open(artifact_path(config, "report_csv"), "w") as fh:
        fh.write("method,mean,std,ks_distance\n")
        for r in report.rows:
            cells = [r.method]
            for v in (r.mean, r.std, r.ks_distance):
                cells.append("" if v is None or (isinstance(v, float)
                             and math.isnan(v)) else repr(float(v)))
            fh.write(",".join(cells) + "\n")

    if report.overlay is not None:
        cols = ["total", "ecdf"] + [f"cdf_{m}" for m in report.overlay_methods]
        np.savetxt(artifact_path(config, "cdf_overlay"), report.overlay,
                   delimiter=",", header=",".join(cols), comments="",
                   fmt="%.17g")

    if report.node_scatter is not None:
        np.savetxt(artifact_path(config, "node_scatter"), report.node_scatter,
                   delimiter=",", header="node,predicted,simulated",
                   comments="", fmt="%.17g")

    with open(artifact_path(config, "report_txt"), "w") as fh:
        fh.write(render_text(report))

"""Command-line front end.

Subcommands mirror the pipeline stages: generate, factorize, cluster,
predict, simulate, correct, compare, report. Options come from an
optional JSON config file plus per-flag overrides (flags win). Exit
codes: 0 success, 2 bad input or usage, 3 subcritical network, 4
numerical failure, 5 capacity refusal.
"""

import argparse
import dataclasses
import json
import os
import sys

from .errors import SisclustError, SubcriticalError
from .network import generate_configuration_model, save_network
from .pipeline import (PipelineConfig, artifact_path, run_cluster,
                       run_compare, run_correct, run_factorize, run_predict,
                       run_simulate)

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(PipelineConfig)}


def _add_common(p):
    p.add_argument("--config", help="JSON file of pipeline options")
    p.add_argument("--outdir", help="artifact directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--edges", help="src,dst,rate edge file")
    p.add_argument("--curing", help="node,delta curing file")
    p.add_argument("--default-curing", type=float,
                   help="curing rate when no file is given")
    p.add_argument("--bundled-surrogate", action="store_true", default=None,
                   help="use the packaged 500-node surrogate network")


def _add_factor_opts(p):
    p.add_argument("--k", type=int, help="factorization rank")
    p.add_argument("--lam", type=float, help="rate-weighting exponent")
    p.add_argument("--tune", action="store_true", default=None,
                   help="search the weighting exponent instead of fixing it")
    p.add_argument("--tune-lo", type=float, help="low end of the search bracket")
    p.add_argument("--tune-hi", type=float, help="high end of the search bracket")
    p.add_argument("--tune-tol", type=float, help="prevalence match tolerance")
    p.add_argument("--identity", action="store_true", default=None,
                   help="exact k=n factorization (W=I, H=rates)")
    p.add_argument("--symmetric", action="store_true", default=None,
                   help="tie H = W")
    p.add_argument("--nmf-max-iter", type=int, help="factorization iteration cap")
    p.add_argument("--nmf-tol", type=float, help="relative objective stop")
    p.add_argument("--dense-threshold", type=int,
                   help="node cap for dense reconstruction work")


def _add_cluster_opts(p):
    p.add_argument("--r", type=int, help="cluster count (default: one per node)")
    p.add_argument("--outlier-singletons", type=int,
                   help="pull this many farthest nodes into singletons")
    p.add_argument("--kmeans-restarts", type=int, help="k-means restart count")


def _add_sim_opts(p):
    p.add_argument("--window", type=float, help="sampling window length")
    p.add_argument("--burn-in", type=float, help="discarded warm-up time")
    p.add_argument("--sample-interval", type=float, help="time between samples")
    p.add_argument("--replicas", type=int, help="independent runs to merge")
    p.add_argument("--max-restarts", type=int,
                   help="cap on restarts after absorption")
    p.add_argument("--wth-rates", action="store_true", default=None,
                   help="simulate the factor-reconstructed rates")


def build_parser():
    top = argparse.ArgumentParser(
        prog="sisclust",
        description="Metastable SIS prediction via factorization and clustering")
    sub = top.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a power-law network")
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--tail-exponent", type=float, required=True)
    g.add_argument("--mean-degree", type=float, default=3.0)
    g.add_argument("--min-degree", type=int)
    g.add_argument("--max-degree", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--outdir", default="artifacts")

    for name, helptext, extras in [
        ("factorize", "factor the rate matrix", [_add_factor_opts]),
        ("cluster", "group nodes by factor profile", [_add_cluster_opts]),
        ("predict", "full metastable prediction chain",
         [_add_factor_opts, _add_cluster_opts]),
        ("simulate", "stochastic metastable sampling", [_add_sim_opts]),
        ("correct", "re-run the bias correction on stored artifacts", []),
        ("compare", "join prediction and simulation into a report", []),
        ("report", "print the stored comparison report", []),
    ]:
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        for add in extras:
            add(p)
        if name == "predict":
            p.add_argument("--no-correction", action="store_true", default=None,
                           help="skip the mean-field bias correction")
            p.add_argument("--refine-covariance", action="store_true",
                           default=None,
                           help="re-solve the covariance at the corrected mean")
    return top


def config_from_args(args):
    overrides = {}
    for name in _CONFIG_FIELDS:
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    if getattr(args, "tune", None):
        overrides["lam"] = None
    if getattr(args, "no_correction", None):
        overrides["correction"] = False
    if args.config:
        return PipelineConfig.from_json(args.config, overrides)
    return PipelineConfig(**overrides)


def _cmd_generate(args):
    net = generate_configuration_model(
        args.nodes, args.tail_exponent, args.mean_degree, seed=args.seed,
        min_degree=args.min_degree, max_degree=args.max_degree)
    os.makedirs(args.outdir, exist_ok=True)
    edge_path = os.path.join(args.outdir, "edges.csv")
    curing_path = os.path.join(args.outdir, "curing.csv")
    meta = {
        "generator": "configuration-model",
        "requested_nodes": args.nodes,
        "tail_exponent": args.tail_exponent,
        "mean_degree_target": args.mean_degree,
        "seed": args.seed,
    }
    save_network(net, edge_path, curing_path, metadata=meta)
    meta.update({"n": net.n, "edges": net.edge_count})
    with open(os.path.join(args.outdir, "network.meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    print(f"wrote {edge_path}: n={net.n}, directed links={net.edge_count}")
    return 0


def _cmd_factorize(args):
    config = config_from_args(args)
    _, pair = run_factorize(config)
    print(f"k={pair.k} lambda={pair.lam:g} objective={pair.objective:.6g} "
          f"iterations={pair.iterations}")
    return 0


def _cmd_cluster(args):
    config = config_from_args(args)
    _, _, cl = run_cluster(config)
    print(f"r={cl.r} sizes={cl.sizes.tolist()}")
    return 0


def _cmd_predict(args):
    config = config_from_args(args)
    result = run_predict(config)
    if result["status"] == "subcritical":
        pred = result["prediction"]
        print(f"subcritical: threshold eigenvalue {pred.abar_eig:.6g} <= 1, "
              "metastable state does not exist")
        raise SubcriticalError("no metastable state to predict")
    mf = result["dist_mean_field"]
    line = f"mean-field total: {mf.mean_total:.4f} (std {mf.std_total:.4f})"
    if result["dist_corrected"] is not None:
        co = result["dist_corrected"]
        line += f"; corrected: {co.mean_total:.4f} (std {co.std_total:.4f})"
    print(line)
    return 0


def _cmd_simulate(args):
    config = config_from_args(args)
    summary = run_simulate(config)
    print(f"samples={summary.samples.size} mean={summary.mean:.4f} "
          f"std={summary.std:.4f} restarts={summary.restarts}")
    if not summary.stationary_ok:
        print("warning: half-window means disagree; consider a longer window",
              file=sys.stderr)
    return 0


def _cmd_correct(args):
    config = config_from_args(args)
    corr = run_correct(config)
    print(f"corrected total: {corr.total():.4f} "
          f"(covariance term {float(corr.correction.sum()):+.4f})")
    return 0


def _cmd_compare(args):
    config = config_from_args(args)
    report = run_compare(config)
    from .report import render_text
    sys.stdout.write(render_text(report))
    return 0


def _cmd_report(args):
    config = config_from_args(args)
    path = artifact_path(config, "report_txt")
    if not os.path.exists(path):
        raise SisclustError(f"no stored report at {path}; run compare first")
    with open(path) as fh:
        sys.stdout.write(fh.read())
    return 0


_HANDLERS = {
    "generate": _cmd_generate,
    "factorize": _cmd_factorize,
    "cluster": _cmd_cluster,
    "predict": _cmd_predict,
    "simulate": _cmd_simulate,
    "correct": _cmd_correct,
    "compare": _cmd_compare,
    "report": _cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except SisclustError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

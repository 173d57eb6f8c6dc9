"""Command-line front end.

Subcommands: ``sample``, ``fit-gmm``, ``build-graph``, ``shortest-path``,
``relax``, ``distance``, ``lpr`` and the experiment runners under ``exp``.
Every subcommand takes ``--seed``, ``--out`` and ``--threads``; tables are
written as CSV with a JSON metadata sidecar (invocation echo, seed,
versions, backend).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__, backend
from .datasets import DATASET_KINDS, DatasetSpec
from .density import GaussianMixture, gmm_fit_em
from .experiments import (
    ExperimentConfig,
    cached_reference_model,
    run_convergence,
    run_dimension_scaling,
    run_kde_tradeoff,
    run_scaled_geodesic_figure,
    write_table,
)
from .geometry import (
    GroundTruthQuality,
    MetricParams,
    Path,
    ground_truth_distance,
    lpr,
    path_length,
)
from .graph import (
    NN_VARIANT_KINDS,
    DensityQuadrature,
    NnVariant,
    NodeDensityCombination,
    PowerWeighted,
    build_knn,
    dijkstra,
    load_graph,
    save_graph,
    weight_edges,
)


def _write_points(path, pts, header=None):
    pts = np.atleast_2d(pts)
    cols = header or ["x%d" % i for i in range(pts.shape[1])]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in pts:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _read_points(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))


def _write_sidecar(out_path, args_ns):
    payload = {
        "invocation": {k: v for k, v in vars(args_ns).items() if k != "func"},
        "backend": backend.active(),
        "versions": {"fermat": __version__, "numpy": np.__version__},
    }
    with open(str(out_path) + ".meta.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=str)


def _parse_point(text):
    vals = [float(v) for v in text.replace(",", " ").split()]
    if not vals:
        raise ValueError(f"cannot parse point from {text!r}")
    return np.asarray(vals)


def _positive_beta(args):
    if args.beta <= 0:
        raise ValueError(f"invalid value for field 'beta': {args.beta} (must be > 0)")
    return args.beta


def _load_model(args):
    if getattr(args, "model", None):
        return GaussianMixture.load(args.model)
    if getattr(args, "dataset", None):
        spec = DatasetSpec(
            kind=args.dataset, dim=getattr(args, "dim", 2), seed=args.seed
        )
        return cached_reference_model(spec, getattr(args, "fit_seed", 0))
    raise ValueError("one of --model or --dataset is required")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_sample(args):
    spec = DatasetSpec(
        kind=args.dataset, n=args.n, seed=args.seed, dim=args.dim, noise=args.noise
    )
    from .datasets import sample as sample_dataset

    X = sample_dataset(spec)
    out = args.out or "samples.csv"
    _write_points(out, X)
    _write_sidecar(out, args)
    print(f"wrote {X.shape[0]} samples of {args.dataset} to {out}")
    return 0


def _cmd_fit_gmm(args):
    X = _read_points(args.data)
    model = gmm_fit_em(
        X,
        args.components,
        max_iters=args.max_iters,
        tol=args.tol,
        seed=args.seed,
        reg=args.reg,
    )
    out = args.out or "model.json"
    model.save(out)
    _write_sidecar(out, args)
    print(f"fitted {args.components}-component mixture on {X.shape[0]} points -> {out}")
    return 0


def _cmd_build_graph(args):
    _positive_beta(args)
    X = _read_points(args.data)
    graph = build_knn(X, args.k)
    d = args.intrinsic_dim or X.shape[1]
    name = args.weighting
    if name == "power":
        weighting = PowerWeighted(args.beta, d)
    elif name == "density":
        weighting = DensityQuadrature(_load_model(args), args.beta, args.segments)
    elif name.startswith("nn_variant:"):
        weighting = NnVariant(name.split(":", 1)[1], args.beta, d)
    elif name.startswith("node_density:"):
        weighting = NodeDensityCombination(
            name.split(":", 1)[1], args.beta, _load_model(args)
        )
    else:
        raise ValueError(f"invalid value for field 'weighting': {name!r}")
    graph = weight_edges(graph, weighting)
    out = args.out or "graph.txt"
    save_graph(graph, out)
    _write_sidecar(out, args)
    print(f"wrote graph: {graph.n_nodes} nodes, {graph.n_edges} edges -> {out}")
    return 0


def _cmd_shortest_path(args):
    graph = load_graph(args.graph)
    gp = dijkstra(graph, args.source, args.target)
    out = args.out or "graph_path.csv"
    coords = graph.nodes[gp.nodes]
    _write_points(out, np.column_stack([gp.nodes, coords]),
                  header=["node"] + ["x%d" % i for i in range(coords.shape[1])])
    _write_sidecar(out, args)
    print(f"log-distance {gp.log_distance!r} over {len(gp.nodes) - 1} hops -> {out}")
    return 0


def _cmd_distance(args):
    _positive_beta(args)
    model = _load_model(args)
    x1 = _parse_point(args.x1)
    x2 = _parse_point(args.x2)
    quality = GroundTruthQuality(n_points=args.n_points, segments=args.segments)
    log_dist, path = ground_truth_distance(
        x1, x2, model, MetricParams(args.beta), quality
    )
    out = args.out or "geodesic.csv"
    _write_points(out, path.points)
    _write_sidecar(out, args)
    print(f"log-distance {log_dist!r}")
    print(f"geodesic table -> {out}")
    return 0


def _cmd_relax(args):
    _positive_beta(args)
    model = _load_model(args)
    x1 = _parse_point(args.x1)
    x2 = _parse_point(args.x2)
    from .geometry import solve_geodesic

    init = Path(_read_points(args.init)) if args.init else None
    quality = GroundTruthQuality(
        n_points=args.n_points, segments=args.segments, seed=args.seed
    )
    path, report = solve_geodesic(
        x1, x2, model, MetricParams(args.beta), quality, init=init
    )
    out = args.out or "relaxed_path.csv"
    _write_points(out, path.points)
    _write_sidecar(out, args)
    log_len = path_length(path, model, MetricParams(args.beta), args.segments)
    print(
        f"converged={report.converged} sweeps={report.sweeps_used} "
        f"final_displacement={report.final_max_displacement:.3e} "
        f"log-length {log_len!r}"
    )
    print(f"path table -> {out}")
    return 0


def _cmd_lpr(args):
    _positive_beta(args)
    model = _load_model(args)
    path = Path(_read_points(args.path))
    value = lpr(
        path,
        model,
        MetricParams(args.beta),
        args.true_distance,
        segments_per_edge=args.segments,
    )
    print(f"lpr {value!r}")
    return 0


def _cmd_exp(args):
    if args.config:
        with open(args.config) as fh:
            config = ExperimentConfig.from_json(fh.read())
    else:
        config = ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.dataset:
        overrides["dataset"] = args.dataset
    if args.beta is not None:
        overrides["beta"] = args.beta
    if args.beta_policy:
        overrides["beta_policy"] = args.beta_policy
    if args.pairs is not None:
        overrides["n_pairs"] = args.pairs
    if args.sizes:
        overrides["sample_sizes"] = tuple(int(v) for v in args.sizes.split(","))
    if args.methods:
        overrides["methods"] = tuple(args.methods.split(","))
    if args.dims:
        overrides["dims"] = tuple(int(v) for v in args.dims.split(","))
    if args.k is not None:
        overrides["k"] = args.k
    config = config.with_overrides(**overrides)
    config.validate()

    out = args.out or f"exp_{args.which.replace('-', '_')}.csv"
    if args.which == "convergence":
        table = run_convergence(config, threads=args.threads)
    elif args.which == "dims":
        table = run_dimension_scaling(config, threads=args.threads)
    elif args.which == "scaled-fig":
        table, paths = run_scaled_geodesic_figure(config, threads=args.threads)
        stem = out[:-4] if out.endswith(".csv") else out
        for (D, policy), pts in sorted(paths.items()):
            _write_points(f"{stem}_path_D{D}_{policy}.csv", pts)
    elif args.which == "kde":
        table = run_kde_tradeoff(config, threads=args.threads)
    else:
        raise ValueError(f"unknown experiment {args.which!r}")
    write_table(table, out, config)
    print(f"wrote {len(table.rows)} rows -> {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", default=None, help="output file")
    p.add_argument("--threads", type=int, default=1, help="parallel worker threads")


def _add_model_args(p):
    p.add_argument("--model", default=None, help="mixture model JSON file")
    p.add_argument("--dataset", default=None, choices=DATASET_KINDS,
                   help="analytic/reference dataset model")
    p.add_argument("--dim", type=int, default=2, help="dimension (standard_normal)")
    p.add_argument("--fit-seed", type=int, default=0, dest="fit_seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fermat",
        description="Density-based distances and geodesics",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw seeded samples from a dataset")
    p.add_argument("--dataset", required=True, choices=DATASET_KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--noise", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("fit-gmm", help="fit a Gaussian mixture by EM")
    p.add_argument("--data", required=True, help="CSV of points")
    p.add_argument("--components", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=500, dest="max_iters")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--reg", type=float, default=1e-6)
    _add_common(p)
    p.set_defaults(func=_cmd_fit_gmm)

    p = sub.add_parser("build-graph", help="build and weight a kNN graph")
    p.add_argument("--data", required=True, help="CSV of points")
    p.add_argument("--k", type=int, required=True)
    p.add_argument(
        "--weighting",
        required=True,
        help="power | density | nn_variant:KIND | node_density:KIND, "
        f"KIND in {NN_VARIANT_KINDS}",
    )
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--intrinsic-dim", type=int, default=None, dest="intrinsic_dim")
    p.add_argument("--segments", type=int, default=8)
    _add_model_args(p)
    _add_common(p)
    p.set_defaults(func=_cmd_build_graph)

    p = sub.add_parser("shortest-path", help="Dijkstra between two graph nodes")
    p.add_argument("--graph", required=True, help="graph file from build-graph")
    p.add_argument("--source", type=int, required=True)
    p.add_argument("--target", type=int, required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_shortest_path)

    p = sub.add_parser("relax", help="relax a path to a geodesic")
    p.add_argument("--x1", required=True, help="start point, comma-separated")
    p.add_argument("--x2", required=True, help="end point, comma-separated")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--n-points", type=int, default=256, dest="n_points")
    p.add_argument("--segments", type=int, default=8)
    p.add_argument("--init", default=None, help="CSV of an initial path")
    _add_model_args(p)
    _add_common(p)
    p.set_defaults(func=_cmd_relax)

    p = sub.add_parser("distance", help="ground-truth geodesic distance")
    p.add_argument("--x1", required=True)
    p.add_argument("--x2", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--n-points", type=int, default=1024, dest="n_points")
    p.add_argument("--segments", type=int, default=8)
    _add_model_args(p)
    _add_common(p)
    p.set_defaults(func=_cmd_distance)

    p = sub.add_parser("lpr", help="log path ratio of a stored path")
    p.add_argument("--path", required=True, help="CSV of path points")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--true-distance", type=float, required=True, dest="true_distance")
    p.add_argument("--segments", type=int, default=8)
    _add_model_args(p)
    _add_common(p)
    p.set_defaults(func=_cmd_lpr)

    p = sub.add_parser("exp", help="experiment runners")
    p.add_argument(
        "which", choices=("convergence", "dims", "scaled-fig", "kde"),
        help="which study to run",
    )
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.add_argument("--dataset", default=None, choices=DATASET_KINDS)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--beta-policy", default=None, dest="beta_policy",
                   choices=("fixed", "scaled"))
    p.add_argument("--pairs", type=int, default=None)
    p.add_argument("--sizes", default=None, help="comma-separated sample sizes")
    p.add_argument("--methods", default=None, help="comma-separated method names")
    p.add_argument("--dims", default=None, help="comma-separated dimensions")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--out", default=None, help="output table CSV")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_exp)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

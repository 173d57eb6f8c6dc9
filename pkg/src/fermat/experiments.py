"""Experiment runners: convergence, dimension scaling, scaled geodesics, KDE.

Every runner is seeded end to end: one master seed derives independent
child streams per grid point, pair, and replicate, so results are
reproducible bit for bit regardless of thread count (wall-time columns
aside). Ground-truth geodesic distances dominate runtime and are cached on
disk keyed by model, endpoints, metric and solver quality; the cache
directory honors the ``FERMAT_CACHE_DIR`` environment variable.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import backend
from .datasets import DatasetSpec, reference_model
from .density import GaussianMixture, KdeModel, gmm_fit_em, standard_normal
from .geometry import (
    GroundTruthQuality,
    MetricParams,
    Path,
    RelaxationDiverged,
    ground_truth_distance,
    lpr,
    solve_geodesic,
)
from .graph import (
    DensityQuadrature,
    Disconnected,
    NN_VARIANT_KINDS,
    NnVariant,
    NodeDensityCombination,
    PowerWeighted,
    build_knn,
    default_k,
    densify,
    dijkstra,
    weight_edges,
)
from .numerics import Rng

GRAPH_METHODS = (
    ("power", "density_gt", "density_fitted")
    + tuple(f"nn_variant:{k}" for k in NN_VARIANT_KINDS)
    + tuple(f"nn_variant_gt:{k}" for k in NN_VARIANT_KINDS)
)
RELAX_METHODS = ("relax_exact_score", "relax_kde_score")
ALL_METHODS = GRAPH_METHODS + RELAX_METHODS


@dataclass(frozen=True)
class ExperimentConfig:
    """Seeded, JSON-serializable description of one study."""

    dataset: str = "standard_normal"
    dim: int = 2
    methods: tuple = ("power", "density_gt")
    sample_sizes: tuple = (500, 2000, 8000, 16000)
    n_pairs: int = 100
    beta: float = 1.0
    beta_policy: str = "fixed"  # "fixed" or "scaled" (beta = 1/D)
    k: int | None = None  # None: max(10, ceil(n^0.4))
    segments: int = 8
    n_points: int = 256  # relaxation / densify resolution
    gt_n_points: int = 1024
    gt_segments: int = 8
    gt_ladder_start: int = 16
    gt_tol_rel: float = 1e-8
    dims: tuple = (2, 3, 5, 10, 15, 25)
    bandwidths: tuple = ()  # empty: 30-point geometric sweep [0.05, 1]
    kde_n: int = 1000
    kde_replicates: int = 4
    kde_bandwidth: float | None = None  # relax_kde_score; None: Scott's rule
    intrinsic_dim: int | None = None  # None: ambient dimension
    fitted_components: int = 50
    seed: int = 0
    fit_seed: int = 0

    def validate(self) -> None:
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.beta_policy not in ("fixed", "scaled"):
            raise ValueError(f"unknown beta_policy {self.beta_policy!r}")
        sizes = tuple(self.sample_sizes)
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sample_sizes must be strictly increasing")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {ALL_METHODS}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        d = json.loads(text)
        for key in ("methods", "sample_sizes", "dims", "bandwidths"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


@dataclass
class ResultTable:
    """Rows of plain scalars with a fixed column order, CSV-serializable."""

    columns: tuple
    rows: list = field(default_factory=list)

    def append(self, **kw) -> None:
        if set(kw) != set(self.columns):
            raise ValueError(f"row keys {sorted(kw)} != columns {sorted(self.columns)}")
        self.rows.append(kw)

    def column(self, name):
        return [r[name] for r in self.rows]

    def select(self, **match):
        out = [r for r in self.rows if all(r[k] == v for k, v in match.items())]
        return ResultTable(self.columns, out)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for r in self.rows:
                fh.write(",".join(_format_cell(r[c]) for c in self.columns) + "\n")


def _format_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Disk cache for ground-truth distances and fitted reference models
# ---------------------------------------------------------------------------

def cache_dir() -> str:
    env = os.environ.get("FERMAT_CACHE_DIR")
    if env:
        return env
    return os.path.join(os.path.expanduser("~"), ".cache", "fermat")


def _cache_file(key: str, suffix: str) -> str:
    root = cache_dir()
    os.makedirs(root, exist_ok=True)
    digest = hashlib.sha256(key.encode()).hexdigest()[:32]
    return os.path.join(root, digest + suffix)


def cached_reference_model(spec: DatasetSpec, fit_seed: int = 0) -> GaussianMixture:
    """reference_model with the expensive EM fits persisted on disk."""
    if spec.kind in ("standard_normal", "gmm3"):
        return reference_model(spec, fit_seed)
    key = (
        f"model|{spec.kind}|K={spec.fitted_components}|noise={spec.noise_sigma!r}"
        f"|fit_seed={fit_seed}"
    )
    path = _cache_file(key, ".model.json")
    if os.path.exists(path):
        return GaussianMixture.load(path)
    model = reference_model(spec, fit_seed)
    tmp = path + ".tmp"
    model.save(tmp)
    os.replace(tmp, path)
    return model


def _model_cache_key(spec: DatasetSpec, fit_seed: int) -> str:
    if spec.kind == "standard_normal":
        return f"standard_normal|D={spec.dim}"
    if spec.kind == "gmm3":
        return "gmm3"
    return f"{spec.kind}|K={spec.fitted_components}|noise={spec.noise_sigma!r}|fs={fit_seed}"


def cached_ground_truth(
    model,
    model_key: str,
    x1,
    x2,
    params: MetricParams,
    quality: GroundTruthQuality,
    init: Path | None = None,
):
    """Ground-truth log distance via the disk cache.

    The cache key covers the model identity, endpoints (exact bits), beta
    and solver quality; ``init`` only selects the relaxation basin and is
    deliberately excluded.
    """
    a = np.asarray(x1, dtype=float)
    b = np.asarray(x2, dtype=float)
    key = (
        f"gt|{model_key}|beta={params.beta!r}|n={quality.n_points}"
        f"|S={quality.segments}|tol={quality.tol!r}|ls={quality.ladder_start}"
        f"|{a.tobytes().hex()}|{b.tobytes().hex()}"
    )
    path = _cache_file(key, ".gt.npz")
    if os.path.exists(path):
        with np.load(path) as data:
            return float(data["log_distance"])
    log_dist, _ = ground_truth_distance(a, b, model, params, quality, init=init)
    tmp = path + f".{os.getpid()}.tmp.npz"
    np.savez(tmp, log_distance=log_dist)
    os.replace(tmp, path)
    return log_dist


# ---------------------------------------------------------------------------
# Shared per-grid-point machinery
# ---------------------------------------------------------------------------

def _sample_pairs(rng: Rng, n: int, n_pairs: int):
    gen = rng.generator
    pairs = []
    while len(pairs) < n_pairs:
        a, b = gen.integers(0, n, 2)
        if a != b:
            pairs.append((int(a), int(b)))
    return pairs


def _method_weighting(method: str, model, X, config: ExperimentConfig, beta: float, d: int):
    if method == "power":
        return PowerWeighted(beta, d)
    if method == "density_gt":
        return DensityQuadrature(model, beta, config.segments)
    if method == "density_fitted":
        fitted = gmm_fit_em(
            X, min(config.fitted_components, X.shape[0] - 1), seed=config.fit_seed
        )
        return DensityQuadrature(fitted, beta, config.segments)
    if method.startswith("nn_variant_gt:"):
        return NodeDensityCombination(method.split(":", 1)[1], beta, model)
    if method.startswith("nn_variant:"):
        return NnVariant(method.split(":", 1)[1], beta, d)
    if method == "relax_exact_score":
        return DensityQuadrature(model, beta, config.segments)
    if method == "relax_kde_score":
        sigma = config.kde_bandwidth
        if sigma is None:
            # Scott's rule
            sigma = float(np.std(X) * X.shape[0] ** (-1.0 / (X.shape[1] + 4)))
        return DensityQuadrature(KdeModel(X, sigma), beta, config.segments)
    raise ValueError(f"unknown method {method!r}")


def _relax_score_source(method: str, model, X, config: ExperimentConfig):
    if method == "relax_exact_score":
        return model
    sigma = config.kde_bandwidth
    if sigma is None:
        sigma = float(np.std(X) * X.shape[0] ** (-1.0 / (X.shape[1] + 4)))
    return KdeModel(X, sigma)


@dataclass
class _GridPointResult:
    mean_lpr: float
    stderr: float
    n_used: int
    n_skipped: int
    wall_time: float


def _evaluate_methods_at(
    model,
    model_key: str,
    X,
    pairs,
    methods,
    params: MetricParams,
    config: ExperimentConfig,
    rng: Rng,
    threads: int,
    graph=None,
):
    """LPR of every method over the given pairs on one sample set.

    Ground truths are relaxed from the density-weighted graph path when the
    pair is connected (multimodal reference densities have local geodesics;
    the graph path selects the global basin), from a straight line
    otherwise. Disconnected pairs are skipped per method and guarded at 10
    percent; relaxation divergence is recorded per pair without tripping
    the guard.
    """
    n = X.shape[0]
    d = config.intrinsic_dim or X.shape[1]
    k = config.k or default_k(n)
    if graph is None:
        graph = build_knn(X, k)
    gt_graph = weight_edges(graph, DensityQuadrature(model, params.beta, config.segments))
    quality = GroundTruthQuality(
        n_points=config.gt_n_points,
        segments=config.gt_segments,
        tol_rel=config.gt_tol_rel,
        ladder_start=config.gt_ladder_start,
        seed=config.seed,
    )

    def _gt_node_paths(pair):
        a, b = pair
        try:
            gp = dijkstra(gt_graph, a, b)
        except Disconnected:
            return None
        return gp

    gt_paths = _parallel_map(_gt_node_paths, pairs, threads)

    def _gt(i):
        a, b = pairs[i]
        gp = gt_paths[i]
        init = None
        if gp is not None and len(gp.nodes) > 1:
            init = densify(gp, gt_graph, config.n_points)
        return cached_ground_truth(
            model, model_key, X[a], X[b], params, quality, init=init
        )

    gt_dists = _parallel_map(_gt, range(len(pairs)), threads)

    results = {}
    for method in methods:
        t0 = time.perf_counter()
        weighting = _method_weighting(method, model, X, config, params.beta, d)
        wg = (
            gt_graph
            if isinstance(weighting, DensityQuadrature) and weighting.model is model
            else weight_edges(graph, weighting)
        )
        is_relax = method in RELAX_METHODS
        score_source = _relax_score_source(method, model, X, config) if is_relax else None

        def _one(i):
            a, b = pairs[i]
            try:
                gp = dijkstra(wg, a, b)
            except Disconnected:
                return "disconnected"
            if len(gp.nodes) < 2:
                return "disconnected"
            if is_relax:
                init = densify(gp, wg, config.n_points)
                try:
                    geo, report = solve_geodesic(
                        X[a],
                        X[b],
                        score_source,
                        params,
                        GroundTruthQuality(
                            n_points=config.n_points,
                            segments=config.segments,
                            ladder_start=config.gt_ladder_start,
                            seed=config.seed + 7919 * (i + 1),
                        ),
                        init=init,
                    )
                except RelaxationDiverged:
                    return "diverged"
                p = geo
            else:
                p = Path(X[gp.nodes])
            return lpr(p, model, params, gt_dists[i], segments_per_edge=config.segments)

        vals = _parallel_map(_one, range(len(pairs)), threads)
        kept = np.array([v for v in vals if not isinstance(v, str)], dtype=float)
        disconnected = sum(1 for v in vals if v == "disconnected")
        diverged = sum(1 for v in vals if v == "diverged")
        if disconnected > 0.1 * len(pairs):
            raise RuntimeError(
                f"graph too sparse: {disconnected}/{len(pairs)} pairs "
                f"disconnected for method {method!r} (n={n}, k={k})"
            )
        if kept.size == 0:
            raise RuntimeError(
                f"no usable pairs for method {method!r} "
                f"({disconnected} disconnected, {diverged} diverged)"
            )
        results[method] = _GridPointResult(
            mean_lpr=float(kept.mean()),
            stderr=float(kept.std(ddof=1) / np.sqrt(len(kept))) if len(kept) > 1 else 0.0,
            n_used=int(len(kept)),
            n_skipped=int(disconnected + diverged),
            wall_time=time.perf_counter() - t0,
        )
    return results


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

CONVERGENCE_COLUMNS = (
    "dataset",
    "method",
    "sample_size",
    "mean_lpr",
    "stderr",
    "n_pairs",
    "n_skipped",
    "wall_time_s",
)


def run_convergence(config: ExperimentConfig, threads: int = 1) -> ResultTable:
    """Mean graph-path LPR versus sample size on one 2-D dataset.

    Samples are drawn from the dataset's reference mixture (which is the
    ground-truth density by construction); pair endpoints are sampled data
    points.
    """
    config.validate()
    spec = DatasetSpec(kind=config.dataset, dim=config.dim, seed=config.seed)
    model = cached_reference_model(spec, config.fit_seed)
    model_key = _model_cache_key(spec, config.fit_seed)
    beta = config.beta if config.beta_policy == "fixed" else 1.0 / model.dim
    params = MetricParams(beta)

    table = ResultTable(CONVERGENCE_COLUMNS)
    for si, n in enumerate(config.sample_sizes):
        rng = Rng(config.seed).child(si)
        X = model.sample(n, rng.child(0))
        pairs = _sample_pairs(rng.child(1), n, config.n_pairs)
        per_method = _evaluate_methods_at(
            model, model_key, X, pairs, config.methods, params, config, rng, threads
        )
        for method in config.methods:
            r = per_method[method]
            table.append(
                dataset=config.dataset,
                method=method,
                sample_size=n,
                mean_lpr=r.mean_lpr,
                stderr=r.stderr,
                n_pairs=r.n_used,
                n_skipped=r.n_skipped,
                wall_time_s=r.wall_time,
            )
    return table


DIMS_COLUMNS = (
    "dataset",
    "method",
    "dimension",
    "beta_policy",
    "beta",
    "mean_lpr",
    "stderr",
    "n_pairs",
    "n_skipped",
    "wall_time_s",
)


def run_dimension_scaling(config: ExperimentConfig, threads: int = 1) -> ResultTable:
    """Mean LPR versus ambient dimension on the standard normal.

    Uses the largest configured sample size at every dimension and emits
    both the fixed-beta and the scaled (beta = 1/D) tracks.
    """
    config.validate()
    n = config.sample_sizes[-1]
    table = ResultTable(DIMS_COLUMNS)
    for di, D in enumerate(config.dims):
        spec = DatasetSpec(kind="standard_normal", dim=D, seed=config.seed)
        model = standard_normal(D)
        model_key = _model_cache_key(spec, config.fit_seed)
        rng = Rng(config.seed).child(di)
        X = model.sample(n, rng.child(0))
        pairs = _sample_pairs(rng.child(1), n, config.n_pairs)
        graph = build_knn(X, config.k or default_k(n))
        for policy in ("fixed", "scaled"):
            params = MetricParams(config.beta if policy == "fixed" else 1.0 / D)
            per_method = _evaluate_methods_at(
                model,
                model_key,
                X,
                pairs,
                config.methods,
                params,
                config,
                rng.child(2 if policy == "fixed" else 3),
                threads,
                graph=graph,
            )
            for method in config.methods:
                r = per_method[method]
                table.append(
                    dataset="standard_normal",
                    method=method,
                    dimension=D,
                    beta_policy=policy,
                    beta=params.beta,
                    mean_lpr=r.mean_lpr,
                    stderr=r.stderr,
                    n_pairs=r.n_used,
                    n_skipped=r.n_skipped,
                    wall_time_s=r.wall_time,
                )
    return table


SCALED_FIG_COLUMNS = (
    "dimension",
    "beta_policy",
    "beta",
    "path_log_length",
    "max_dev_vs_first_dim",
    "dev_fraction_of_length",
)


def run_scaled_geodesic_figure(config: ExperimentConfig, threads: int = 1):
    """Geodesics between orthogonal points at radius sqrt(D), per dimension.

    For each D the endpoints are sqrt(D) e1 and sqrt(D) e2; tracks with
    beta = 1/D (scaled) and beta = config.beta (unscaled) are solved, then
    divided by sqrt(D) and projected onto the e1-e2 plane. Returns a
    summary table plus the rescaled projected paths keyed by
    ``(dimension, policy)``.
    """
    config.validate()
    quality = GroundTruthQuality(
        n_points=config.gt_n_points,
        segments=config.gt_segments,
        tol_rel=config.gt_tol_rel,
        ladder_start=config.gt_ladder_start,
        seed=config.seed,
    )
    table = ResultTable(SCALED_FIG_COLUMNS)
    paths = {}
    lengths = {}

    def _solve(args):
        D, policy = args
        model = standard_normal(D)
        beta = 1.0 / D if policy == "scaled" else config.beta
        a = np.zeros(D)
        a[0] = np.sqrt(D)
        b = np.zeros(D)
        b[1] = np.sqrt(D)
        log_len, path = ground_truth_distance(a, b, model, MetricParams(beta), quality)
        rescaled = path.points[:, :2] / np.sqrt(D)
        return D, policy, log_len, rescaled

    jobs = [(D, policy) for policy in ("scaled", "unscaled") for D in config.dims]
    for D, policy, log_len, rescaled in _parallel_map(_solve, jobs, threads):
        paths[(D, policy)] = rescaled
        lengths[(D, policy)] = log_len

    for policy in ("scaled", "unscaled"):
        base = paths[(config.dims[0], policy)]
        base_len = float(np.sum(np.linalg.norm(np.diff(base, axis=0), axis=1)))
        for D in config.dims:
            cur = paths[(D, policy)]
            dev = float(np.max(np.linalg.norm(cur - base, axis=1)))
            table.append(
                dimension=D,
                beta_policy=policy,
                beta=1.0 / D if policy == "scaled" else config.beta,
                path_log_length=lengths[(D, policy)],
                max_dev_vs_first_dim=dev,
                dev_fraction_of_length=dev / base_len,
            )
    return table, paths


KDE_COLUMNS = ("bandwidth", "mise_log_density", "mise_score")


def run_kde_tradeoff(config: ExperimentConfig, threads: int = 1) -> ResultTable:
    """Bandwidth sweep of KDE log-density and score errors on the 1-D normal.

    For each bandwidth, the squared error against the analytic truth is
    integrated over [-5, 5] by fixed trapezoidal quadrature weighted by the
    true density, then averaged over seeded sample replicates.
    """
    config.validate()
    bandwidths = np.asarray(
        config.bandwidths if config.bandwidths else np.geomspace(0.05, 1.0, 30),
        dtype=float,
    )
    grid = np.linspace(-5.0, 5.0, 1001)
    true_logp = -0.5 * grid**2 - 0.5 * np.log(2.0 * np.pi)
    true_score = -grid
    weights = np.exp(true_logp)

    def _trapz(values):
        return float(np.trapezoid(values * weights, grid))

    mise_logp = np.zeros(len(bandwidths))
    mise_score = np.zeros(len(bandwidths))
    for r in range(config.kde_replicates):
        X = Rng(config.seed).child(r).standard_normal(config.kde_n)

        def _one(si):
            kde = KdeModel(X, float(bandwidths[si]))
            pts = grid.reshape(-1, 1)
            logp = kde.log_density(pts)
            score = kde.score(pts)[:, 0]
            return (
                _trapz((logp - true_logp) ** 2),
                _trapz((score - true_score) ** 2),
            )

        out = _parallel_map(_one, range(len(bandwidths)), threads)
        mise_logp += np.array([o[0] for o in out])
        mise_score += np.array([o[1] for o in out])
    mise_logp /= config.kde_replicates
    mise_score /= config.kde_replicates

    table = ResultTable(KDE_COLUMNS)
    for i, s in enumerate(bandwidths):
        table.append(
            bandwidth=float(s),
            mise_log_density=float(mise_logp[i]),
            mise_score=float(mise_score[i]),
        )
    return table


def write_table(table: ResultTable, out_path: str, config: ExperimentConfig) -> None:
    """Write a CSV plus a metadata sidecar (config echo, seed, versions)."""
    table.to_csv(out_path)
    import numba
    import scipy

    from . import __version__

    meta = {
        "config": json.loads(config.to_json()),
        "seed": config.seed,
        "backend": backend.active(),
        "versions": {
            "fermat": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
    }
    with open(str(out_path) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)

"""Continuous core: the density-weighted metric and its geodesics.

The metric scales the Euclidean inner product by ``1 / p(x)^(2 beta)``, so
a curve's length is the Euclidean element weighted by ``1 / p^beta``
(:func:`path_length`). Geodesics in the constant-Euclidean-speed
parameterization satisfy

    phi'' + beta * (s(phi) ||phi'||^2 - (s(phi) . phi') phi') = 0

with ``s`` the score of the density. :func:`relax` solves the discrete
central-difference form of this equation by Gauss-Seidel sweeps in random
order; :func:`solve_geodesic` wraps it in a coarse-to-fine ladder that
converges orders of magnitude faster from poor initializations.

All lengths and distances are log-domain (natural log); ``-inf`` is an
exact zero distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend, kernels
from .numerics import Rng, log_sum_exp


@dataclass(frozen=True)
class MetricParams:
    """Inverse temperature of the metric weight ``1 / p^beta``.

    ``beta = 0`` degenerates to the Euclidean metric; the dimension-scaled
    choice is ``beta = 1 / D``.
    """

    beta: float

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")

    @classmethod
    def scaled(cls, dim: int) -> "MetricParams":
        return cls(1.0 / dim)


class Path:
    """Discretized curve of n+1 points with fixed endpoints.

    ``points`` has shape (n+1, D) with indices 0..n; relaxation only ever
    moves the interior points 1..n-1.
    """

    def __init__(self, points):
        pts = np.ascontiguousarray(np.asarray(points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise ValueError("a path needs at least two points of shape (n+1, D)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("path contains non-finite points")
        self.points = pts

    @classmethod
    def straight_line(cls, x1, x2, n: int) -> "Path":
        a = np.asarray(x1, dtype=float)
        b = np.asarray(x2, dtype=float)
        t = np.linspace(0.0, 1.0, n + 1)[:, None]
        return cls((1.0 - t) * a[None, :] + t * b[None, :])

    @property
    def n(self) -> int:
        """Index of the last point (the path has n+1 points)."""
        return self.points.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def endpoints(self):
        return self.points[0], self.points[-1]

    def copy(self) -> "Path":
        return Path(self.points.copy())

    def euclidean_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    def __repr__(self):
        return f"Path(n={self.n}, dim={self.dim})"


@dataclass
class RelaxationConfig:
    """Stopping rule for :func:`relax`.

    ``tol`` is the max interior displacement per sweep (Euclidean); when
    None it resolves to 1e-8 times the endpoint distance, and
    ``max_sweeps`` resolves to 20 per path point. ``damping`` < 1 scales
    every point move without changing the fixed point; the geodesic
    solvers use it only to stabilize coarse resolutions where the full
    step diverges.
    """

    max_sweeps: int | None = None
    tol: float | None = None
    seed: int = 0
    damping: float = 1.0

    def resolve(self, path: Path):
        tol = self.tol
        if tol is None:
            a, b = path.endpoints
            tol = 1e-8 * float(np.linalg.norm(b - a))
        max_sweeps = self.max_sweeps if self.max_sweeps is not None else 20 * path.n
        if max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if tol < 0:
            raise ValueError("tol must be nonnegative")
        return max_sweeps, tol


@dataclass
class RelaxationReport:
    sweeps_used: int
    final_max_displacement: float
    converged: bool


class RelaxationDiverged(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class GroundTruthUnconverged(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def _score_adapter(score_source):
    """Accept a DensityModel or a bare callable; return (callable, gmm arrays)."""
    if hasattr(score_source, "score"):
        fn = score_source.score
        arrays = None
        getter = getattr(score_source, "kernel_arrays", None)
        if getter is not None:
            arrays = getter()
        return fn, arrays
    if callable(score_source):
        return score_source, None
    raise TypeError(f"cannot interpret {type(score_source).__name__} as a score")


def _score_batch(score_fn, pts):
    out = np.asarray(score_fn(pts), dtype=float)
    if out.shape == pts.shape:
        return out
    return np.stack([np.asarray(score_fn(p), dtype=float) for p in pts])


def _max_update_ratio(path: Path, score_fn, params: MetricParams) -> float:
    """Largest score-term move relative to the median segment length."""
    pts = path.points
    s = _score_batch(score_fn, pts[1:-1])
    v = 0.5 * (pts[2:] - pts[:-2])
    v2 = np.sum(v * v, axis=1, keepdims=True)
    sv = np.sum(s * v, axis=1, keepdims=True)
    w = 0.5 * params.beta * (s * v2 - sv * v)
    seg = np.median(np.linalg.norm(np.diff(pts, axis=0), axis=1))
    if seg <= 0:
        return np.inf
    return float(np.max(np.linalg.norm(w, axis=1)) / seg)


def _sweep(points, order, beta, score_source, damping=1.0):
    fn, arrays = _score_adapter(score_source)
    if arrays is not None and backend.active() == "numba":
        return kernels.relax_sweep_gmm(
            points, np.ascontiguousarray(order, dtype=np.int64), beta, *arrays,
            damping,
        )
    return kernels.relax_sweep_generic(points, order, beta, fn, damping)


def relax_step(path: Path, score, params: MetricParams, rng: Rng) -> Path:
    """One Gauss-Seidel sweep over the interior points in fresh random order.

    Each update uses already-updated neighbor values; endpoints never move.
    The path is modified in place and returned.
    """
    if path.n < 2:
        raise ValueError("relaxation needs at least one interior point")
    order = rng.permutation(np.arange(1, path.n))
    disp = _sweep(path.points, order, params.beta, score)
    if not np.isfinite(disp) or not np.all(np.isfinite(path.points)):
        bad = int(np.flatnonzero(~np.isfinite(path.points).all(axis=1))[0])
        raise ValueError(
            f"non-finite update at index {bad}: point {path.points[bad].tolist()}"
        )
    return path


def relax(
    path: Path,
    score,
    params: MetricParams,
    config: RelaxationConfig | None = None,
    rng: Rng | None = None,
):
    """Sweep until the max displacement drops below tolerance.

    Returns ``(path, RelaxationReport)``; the path is relaxed in place.
    Raises :class:`RelaxationDiverged` when the per-sweep displacement
    grows by more than 10x over 10 sweeps.
    """
    if path.n < 2:
        raise ValueError("relaxation needs at least one interior point")
    config = config or RelaxationConfig()
    max_sweeps, tol = config.resolve(path)
    if rng is None:
        rng = Rng(config.seed)
    indices = np.arange(1, path.n)
    history = []
    disp = np.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        order = rng.permutation(indices)
        disp = _sweep(path.points, order, params.beta, score, config.damping)
        if not np.isfinite(disp):
            raise RelaxationDiverged(
                f"non-finite displacement at sweep {sweeps}",
                RelaxationReport(sweeps, float(disp), False),
            )
        history.append(disp)
        if len(history) > 10 and disp > 10.0 * history[-11] and disp > tol:
            raise RelaxationDiverged(
                f"relaxation diverging: displacement {disp:.3e} vs "
                f"{history[-11]:.3e} ten sweeps earlier",
                RelaxationReport(sweeps, float(disp), False),
            )
        if disp <= tol:
            break
    converged = disp <= tol
    if not np.all(np.isfinite(path.points)):
        raise RelaxationDiverged(
            "relaxation produced non-finite points",
            RelaxationReport(sweeps, float(disp), False),
        )
    return path, RelaxationReport(sweeps, float(disp), converged)


def geodesic_residual(path: Path, score, params: MetricParams):
    """Norm of the discrete geodesic-equation residual at each interior point.

    Residual (units of squared step):

        (phi[i+1] - 2 phi[i] + phi[i-1])
            + beta * (s(phi[i]) ||v||^2 - (s(phi[i]) . v) v),   v = central diff

    A relaxation fixed point has residual zero: one :func:`relax_step`
    update moves point i by exactly half this residual (with neighbors
    frozen).
    """
    if path.n < 2:
        raise ValueError("need at least one interior point")
    fn, _ = _score_adapter(score)
    pts = path.points
    inner = pts[1:-1]
    s = _score_batch(fn, inner)
    if not np.all(np.isfinite(s)):
        bad = int(np.flatnonzero(~np.isfinite(s).all(axis=1))[0]) + 1
        raise ValueError(f"non-finite score at index {bad}: point {pts[bad].tolist()}")
    v = 0.5 * (pts[2:] - pts[:-2])
    lap = pts[2:] - 2.0 * inner + pts[:-2]
    v2 = np.sum(v * v, axis=1, keepdims=True)
    sv = np.sum(s * v, axis=1, keepdims=True)
    r = lap + params.beta * (s * v2 - sv * v)
    return np.linalg.norm(r, axis=1)


def _trace_interp(pts, seg, cum, positions):
    idx = np.clip(np.searchsorted(cum, positions, side="right") - 1, 0, len(seg) - 1)
    denom = np.where(seg[idx] > 0, seg[idx], 1.0)
    frac = np.clip((positions - cum[idx]) / denom, 0.0, 1.0)
    return pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])


def resample_uniform(path: Path, m: int) -> Path:
    """Resample to m+1 points on the polyline trace with equal spacing.

    "Equal" means equal consecutive Euclidean (chord) distances, the
    discrete analogue of constant Euclidean speed: plain arc-length
    splitting leaves chords unequal wherever straight output segments cut
    polyline corners, so the arc positions are iterated to the equal-chord
    fixed point. Endpoints are preserved exactly and the operation is
    idempotent up to floating point.
    """
    if m < 1:
        raise ValueError("need at least one segment")
    pts = path.points
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0.0:
        raise ValueError("cannot resample a zero-length path")

    positions = np.linspace(0.0, total, m + 1)
    out = _trace_interp(pts, seg, cum, positions)
    for _ in range(200):
        chords = np.linalg.norm(np.diff(out, axis=0), axis=1)
        mean = chords.mean()
        if mean == 0.0 or (chords.max() - chords.min()) <= 1e-12 * mean:
            break
        # redistribute arc positions so the chord lengths equalize
        chord_cum = np.concatenate([[0.0], np.cumsum(chords)])
        targets = np.linspace(0.0, chord_cum[-1], m + 1)
        positions = np.interp(targets, chord_cum, positions)
        out = _trace_interp(pts, seg, cum, positions)
    out[0] = pts[0]
    out[-1] = pts[-1]
    return Path(out)


def _segment_midpoint_logp(pts, model, segments_per_edge):
    """Log densities at the S midpoints of every edge, shape (edges, S)."""
    S = int(segments_per_edge)
    P0 = pts[:-1]
    P1 = pts[1:]
    ts = (np.arange(S) + 0.5) / S
    mids = P0[:, None, :] + ts[None, :, None] * (P1 - P0)[:, None, :]
    flat = mids.reshape(-1, pts.shape[1])
    logp = np.asarray(model.log_density(flat), dtype=float)
    if not np.all(np.isfinite(logp)):
        bad = flat[int(np.flatnonzero(~np.isfinite(logp))[0])]
        raise ValueError(f"non-finite log-density at midpoint {bad.tolist()}")
    return logp.reshape(len(P0), S)


def path_length(
    path: Path, model, params: MetricParams, segments_per_edge: int = 8
) -> float:
    """Log-domain metric length via midpoint quadrature.

    Every path edge is split into ``segments_per_edge`` equal sub-segments;
    each contributes ``||dy|| / p(midpoint)^beta``, accumulated with
    log-sum-exp. Matches the quadrature rule used for graph edge weights.
    """
    S = int(segments_per_edge)
    if S < 1:
        raise ValueError("segments_per_edge must be >= 1")
    if model.dim != path.dim:
        raise ValueError(f"model dimension {model.dim} != path dimension {path.dim}")
    pts = path.points
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    logp = _segment_midpoint_logp(pts, model, S)
    with np.errstate(divide="ignore"):
        terms = np.log(seg / S)[:, None] - params.beta * logp
    return log_sum_exp(terms.ravel())


def segment_lengths(path: Path):
    """Euclidean length of each path edge."""
    return np.linalg.norm(np.diff(path.points, axis=0), axis=1)


def metric_speed_profile(path: Path, model, params: MetricParams):
    """Per-segment metric speed ``||dphi|| / p(midpoint)^beta`` in log domain.

    A converged constant-Euclidean-speed geodesic has (near) equal segment
    lengths but a non-constant metric speed whenever the density varies
    along it.
    """
    pts = path.points
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    logp = _segment_midpoint_logp(pts, model, 1)[:, 0]
    with np.errstate(divide="ignore"):
        return np.log(seg) - params.beta * logp


@dataclass
class GroundTruthQuality:
    """Resolution/stopping knobs for ground-truth geodesic solves.

    ``tol`` is absolute; when None it resolves to ``tol_rel`` times the
    endpoint distance.
    """

    n_points: int = 1024
    segments: int = 8
    tol: float | None = None
    tol_rel: float = 1e-8
    ladder_start: int = 16
    max_sweeps_factor: int = 20
    seed: int = 0


def solve_geodesic(
    x1,
    x2,
    score,
    params: MetricParams,
    quality: GroundTruthQuality | None = None,
    init: Path | None = None,
):
    """Relax to the geodesic between fixed endpoints on a resolution ladder.

    Plain Gauss-Seidel stalls at fine resolutions (smoothing low-frequency
    error needs O(n^2) sweeps), so the path is relaxed to convergence at a
    coarse resolution first and then resampled to successively doubled
    resolutions up to ``quality.n_points``; each level starts close to its
    fixed point and converges in few sweeps. ``init`` seeds the coarsest
    level (a straight line by default).

    Returns ``(path, RelaxationReport)`` with sweeps summed over levels.
    """
    q = quality or GroundTruthQuality()
    a = np.asarray(x1, dtype=float)
    b = np.asarray(x2, dtype=float)
    dist = float(np.linalg.norm(b - a))
    if dist == 0.0:
        return Path(np.stack([a, b])), RelaxationReport(0, 0.0, True)
    tol = q.tol if q.tol is not None else q.tol_rel * dist

    levels = [min(q.ladder_start, q.n_points)]
    while levels[-1] < q.n_points:
        levels.append(min(2 * levels[-1], q.n_points))

    rng = Rng(q.seed)
    if init is not None:
        if not (
            np.linalg.norm(init.points[0] - a) <= 1e-9
            and np.linalg.norm(init.points[-1] - b) <= 1e-9
        ):
            raise ValueError("init endpoints do not match x1/x2")
        path = resample_uniform(init, levels[0])
    else:
        path = Path.straight_line(a, b, levels[0])

    fn, _ = _score_adapter(score)
    total_sweeps = 0
    report = None
    for li, n in enumerate(levels):
        final_level = n >= q.n_points
        if path.n != n:
            path = resample_uniform(path, n)
        snapshot = path.copy()
        # a coarse level only seeds the next one, so it needs accuracy at
        # its own discretization-error scale, not the final tolerance
        level_tol = tol if final_level else tol * min((q.n_points / n) ** 2, 4096.0)
        # sharply peaked scores destabilize coarse levels, where the
        # neighbor gap v is large. Damping scales the move without moving
        # the fixed point; probe the update magnitude on this level's init
        # to start at a stable damping, then halve further on divergence.
        ratio = _max_update_ratio(path, fn, params)
        damping = 1.0 if ratio <= 0.25 else min(1.0, max(0.25 / ratio, 1.0 / 64.0))
        level_ok = False
        while True:
            cfg = RelaxationConfig(
                max_sweeps=int(np.ceil(q.max_sweeps_factor * n / damping)),
                tol=level_tol,
                damping=damping,
            )
            try:
                path, report = relax(path, score, params, cfg, rng=rng.child(li))
                total_sweeps += report.sweeps_used
                level_ok = True
                break
            except RelaxationDiverged:
                path = snapshot.copy()
                if damping <= 1.0 / 64.0:
                    report = RelaxationReport(0, np.inf, False)
                    break
                damping *= 0.5
        if final_level:
            if not level_ok:
                raise RelaxationDiverged(
                    f"relaxation diverging at resolution {n} even with damping",
                    report,
                )
            if damping < 1.0:
                # the reported convergence must hold for the pure update
                path, report = relax(
                    path,
                    score,
                    params,
                    RelaxationConfig(max_sweeps=q.max_sweeps_factor * n, tol=tol),
                    rng=rng.child(1000 + li),
                )
                total_sweeps += report.sweeps_used
    return path, RelaxationReport(
        total_sweeps, report.final_max_displacement, report.converged
    )


def ground_truth_distance(
    x1,
    x2,
    model,
    params: MetricParams,
    quality: GroundTruthQuality | None = None,
    init: Path | None = None,
):
    """Geodesic distance (log domain) and geodesic between two points.

    Relaxes from a straight line (or ``init``) on the resolution ladder,
    then evaluates :func:`path_length`. Coincident endpoints return
    ``(-inf, degenerate path)`` per the metric axiom. Raises
    :class:`GroundTruthUnconverged` when relaxation does not reach
    tolerance.
    """
    q = quality or GroundTruthQuality()
    a = np.asarray(x1, dtype=float)
    b = np.asarray(x2, dtype=float)
    if np.array_equal(a, b):
        return -np.inf, Path(np.stack([a, b]))
    path, report = solve_geodesic(a, b, model, params, q, init=init)
    if not report.converged:
        raise GroundTruthUnconverged(
            f"relaxation did not converge: max displacement "
            f"{report.final_max_displacement:.3e} after {report.sweeps_used} sweeps",
            report,
        )
    return path_length(path, model, params, q.segments), path


def lpr(
    path: Path,
    model,
    params: MetricParams,
    true_log_distance: float,
    endpoints=None,
    segments_per_edge: int = 8,
) -> float:
    """Log path ratio: log of path length over true geodesic distance.

    Zero only for the true geodesic, positive otherwise (up to quadrature
    error). When ``endpoints`` is given, the path endpoints must match it
    to 1e-9.
    """
    if endpoints is not None:
        e1 = np.asarray(endpoints[0], dtype=float)
        e2 = np.asarray(endpoints[1], dtype=float)
        if (
            np.linalg.norm(path.points[0] - e1) > 1e-9
            or np.linalg.norm(path.points[-1] - e2) > 1e-9
        ):
            raise ValueError("path endpoints do not match the ground-truth endpoints")
    return path_length(path, model, params, segments_per_edge) - true_log_distance

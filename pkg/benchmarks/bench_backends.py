"""Compare the numba-jitted kernels against their pure-numpy fallbacks.

Run:

    python benchmarks/bench_backends.py

Times the three hot paths (batched mixture evaluation, relaxation sweeps,
Dijkstra) under both backends by switching ``fermat.backend`` in process.
The first jitted call compiles; compilation is excluded by a warm-up pass.
"""

import time

import numpy as np

from fermat import backend
from fermat.density import standard_normal
from fermat.geometry import MetricParams, Path, RelaxationConfig, relax
from fermat.graph import DensityQuadrature, build_knn, dijkstra, weight_edges
from fermat.kernels import gmm_logpdf_batch, warm_up
from fermat.numerics import Rng


def _time(fn, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_gmm_batch(model, X):
    arrays = model.kernel_arrays()
    return _time(lambda: gmm_logpdf_batch(X, *arrays))


def bench_relax(model, n=256, sweep_budget=500):
    def run():
        path = Path.straight_line((2.0, 0.0), (0.0, 2.0), n)
        relax(
            path,
            model,
            MetricParams(1.0),
            RelaxationConfig(max_sweeps=sweep_budget, tol=0.0, seed=0),
        )

    return _time(run, repeats=1)


def bench_dijkstra(graph, pairs):
    def run():
        for a, b in pairs:
            dijkstra(graph, a, b)

    return _time(run)


def main():
    rng = Rng(0)
    model = standard_normal(2)
    mix = standard_normal(2)
    X_eval = rng.child(0).standard_normal((200_000, 2))
    X_graph = mix.sample(4000, rng.child(1))
    graph = build_knn(X_graph, 16)
    graph = weight_edges(graph, DensityQuadrature(mix, 1.0, 8))
    pairs = [(int(a), int(b)) for a, b in rng.child(2).integers(0, 4000, (20, 2)) if a != b]

    rows = []
    for name in ("numba", "numpy"):
        if name == "numba" and not backend.HAVE_NUMBA:
            print("numba unavailable; skipping jitted timings")
            continue
        backend.use(name)
        if name == "numba":
            warm_up()
        rows.append(
            (
                name,
                bench_gmm_batch(model, X_eval),
                bench_relax(model),
                bench_dijkstra(graph, pairs),
            )
        )

    print(f"{'backend':<8} {'gmm_logpdf(200k)':>18} {'relax(500 sweeps)':>19} {'dijkstra(20 pairs)':>20}")
    for name, t_gmm, t_relax, t_dij in rows:
        print(f"{name:<8} {t_gmm:>16.4f}s {t_relax:>17.4f}s {t_dij:>18.4f}s")
    if len(rows) == 2:
        print(
            f"{'speedup':<8} {rows[1][1] / rows[0][1]:>17.1f}x "
            f"{rows[1][2] / rows[0][2]:>17.1f}x {rows[1][3] / rows[0][3]:>18.1f}x"
        )


if __name__ == "__main__":
    main()

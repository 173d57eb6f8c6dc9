"""Hot numeric kernels, each with a numba-jitted variant and a numpy twin.

The jitted variants dominate runtime (relaxation sweeps, batched Gaussian
mixture evaluation, Dijkstra); the fallbacks keep the library fully usable
without a working numba, selected via the ``FERMAT_BACKEND`` environment
flag (see :mod:`fermat.backend`). ``benchmarks/bench_backends.py`` compares
the two paths.

Gaussian mixtures enter these kernels as a flat tuple of arrays
``(log_weights, means, prec_chol, log_det_chol)`` where ``prec_chol[k]`` is
``B_k`` with ``Sigma_k^{-1} = B_k B_k^T`` (inverse-transpose of the lower
Cholesky factor) and ``log_det_chol[k] = log |det B_k|``.
"""

from __future__ import annotations

import heapq

import numpy as np

from . import backend

_LOG_2PI = float(np.log(2.0 * np.pi))

# Vectorized numpy evaluation proceeds in blocks of this many points to
# bound the (K, block, D) temporaries.
_BLOCK = 65536


# ---------------------------------------------------------------------------
# Gaussian mixture evaluation
# ---------------------------------------------------------------------------

# Mixture terms this many log-units below the leader contribute less than
# 1e-17 of the total and are skipped before the exp.
_EXP_CUTOFF = 40.0


def _gmm_logpdf_batch(X, log_w, means, prec_chol, log_det):
    m = X.shape[0]
    K, D = means.shape
    out = np.empty(m)
    terms = np.empty(K)
    for j in range(m):
        for k in range(K):
            m2 = 0.0
            for a in range(D):
                acc = 0.0
                for b in range(D):
                    acc += prec_chol[k, b, a] * (X[j, b] - means[k, b])
                m2 += acc * acc
            terms[k] = log_w[k] + log_det[k] - 0.5 * m2 - 0.5 * D * _LOG_2PI
        mx = terms[0]
        for k in range(1, K):
            if terms[k] > mx:
                mx = terms[k]
        if mx == -np.inf:
            out[j] = -np.inf
            continue
        tot = 0.0
        for k in range(K):
            if terms[k] - mx > -_EXP_CUTOFF:
                tot += np.exp(terms[k] - mx)
        out[j] = mx + np.log(tot)
    return out


def _gmm_score_batch(X, log_w, means, prec_chol, log_det):
    m = X.shape[0]
    K, D = means.shape
    out = np.zeros((m, D))
    terms = np.empty(K)
    z = np.empty((K, D))
    for j in range(m):
        for k in range(K):
            m2 = 0.0
            for a in range(D):
                acc = 0.0
                for b in range(D):
                    acc += prec_chol[k, b, a] * (X[j, b] - means[k, b])
                z[k, a] = acc
                m2 += acc * acc
            terms[k] = log_w[k] + log_det[k] - 0.5 * m2 - 0.5 * D * _LOG_2PI
        mx = terms[0]
        for k in range(1, K):
            if terms[k] > mx:
                mx = terms[k]
        tot = 0.0
        for k in range(K):
            if terms[k] - mx > -_EXP_CUTOFF:
                tot += np.exp(terms[k] - mx)
        lse = mx + np.log(tot)
        for k in range(K):
            if terms[k] - lse <= -_EXP_CUTOFF:
                continue
            r = np.exp(terms[k] - lse)
            for a in range(D):
                acc = 0.0
                for b in range(D):
                    acc += prec_chol[k, a, b] * z[k, b]
                out[j, a] -= r * acc
    return out


def _gmm_log_terms_numpy(X, log_w, means, prec_chol, log_det):
    """Per-component log densities (+ log weight) and whitened residuals."""
    D = means.shape[1]
    diff = X[None, :, :] - means[:, None, :]            # (K, m, D)
    z = np.einsum("kmd,kde->kme", diff, prec_chol)      # (K, m, D)
    m2 = np.einsum("kme,kme->km", z, z)
    terms = log_w[:, None] + log_det[:, None] - 0.5 * m2 - 0.5 * D * _LOG_2PI
    return terms, z


def _gmm_logpdf_batch_numpy(X, log_w, means, prec_chol, log_det):
    m = X.shape[0]
    out = np.empty(m)
    for start in range(0, m, _BLOCK):
        B = X[start:start + _BLOCK]
        terms, _ = _gmm_log_terms_numpy(B, log_w, means, prec_chol, log_det)
        mx = terms.max(axis=0)
        safe = np.where(np.isfinite(mx), mx, 0.0)
        out[start:start + _BLOCK] = safe + np.log(
            np.sum(np.exp(terms - safe[None, :]), axis=0)
        )
        out[start:start + _BLOCK][~np.isfinite(mx)] = -np.inf
    return out


def _gmm_score_batch_numpy(X, log_w, means, prec_chol, log_det):
    m, D = X.shape
    out = np.empty((m, D))
    for start in range(0, m, _BLOCK):
        B = X[start:start + _BLOCK]
        terms, z = _gmm_log_terms_numpy(B, log_w, means, prec_chol, log_det)
        mx = terms.max(axis=0)
        resp = np.exp(terms - mx[None, :])
        resp /= resp.sum(axis=0)[None, :]
        sig_inv_diff = np.einsum("kde,kme->kmd", prec_chol, z)  # Sigma^-1 (x - mu)
        out[start:start + _BLOCK] = -np.einsum("km,kmd->md", resp, sig_inv_diff)
    return out


_gmm_logpdf_batch_jit = backend.jit(_gmm_logpdf_batch)
_gmm_score_batch_jit = backend.jit(_gmm_score_batch)


def gmm_logpdf_batch(X, log_w, means, prec_chol, log_det):
    impl = backend.pick(_gmm_logpdf_batch_jit, _gmm_logpdf_batch_numpy)
    return impl(X, log_w, means, prec_chol, log_det)


def gmm_score_batch(X, log_w, means, prec_chol, log_det):
    impl = backend.pick(_gmm_score_batch_jit, _gmm_score_batch_numpy)
    return impl(X, log_w, means, prec_chol, log_det)


# ---------------------------------------------------------------------------
# Relaxation sweep (Gauss-Seidel over interior points, random visit order)
# ---------------------------------------------------------------------------

def _relax_sweep_gmm(points, order, beta, log_w, means, prec_chol, log_det, damping):
    """One in-place sweep; returns the max point displacement.

    Visits ``order`` sequentially so each update sees already-updated
    neighbors. Update rule per interior index i:

        v = (p[i+1] - p[i-1]) / 2
        w = (beta/2) * (s(p[i]) ||v||^2 - (s(p[i]) . v) v)
        p[i] = (p[i+1] + p[i-1]) / 2 + w

    ``damping`` < 1 moves each point only that fraction of the way to its
    update; the fixed point is unchanged, but sharply peaked scores that
    destabilize the full step stay contained.
    """
    K, D = means.shape
    terms = np.empty(K)
    z = np.empty((K, D))
    s = np.empty(D)
    v = np.empty(D)
    maxdisp = 0.0
    for t in range(order.shape[0]):
        i = order[t]
        # inline mixture score at points[i]
        for k in range(K):
            m2 = 0.0
            for a in range(D):
                acc = 0.0
                for b in range(D):
                    acc += prec_chol[k, b, a] * (points[i, b] - means[k, b])
                z[k, a] = acc
                m2 += acc * acc
            terms[k] = log_w[k] + log_det[k] - 0.5 * m2 - 0.5 * D * _LOG_2PI
        mx = terms[0]
        for k in range(1, K):
            if terms[k] > mx:
                mx = terms[k]
        tot = 0.0
        for k in range(K):
            if terms[k] - mx > -_EXP_CUTOFF:
                tot += np.exp(terms[k] - mx)
        lse = mx + np.log(tot)
        for a in range(D):
            s[a] = 0.0
        for k in range(K):
            if terms[k] - lse <= -_EXP_CUTOFF:
                continue
            r = np.exp(terms[k] - lse)
            for a in range(D):
                acc = 0.0
                for b in range(D):
                    acc += prec_chol[k, a, b] * z[k, b]
                s[a] -= r * acc

        v2 = 0.0
        sv = 0.0
        for a in range(D):
            v[a] = 0.5 * (points[i + 1, a] - points[i - 1, a])
        for a in range(D):
            v2 += v[a] * v[a]
            sv += s[a] * v[a]
        d2 = 0.0
        for a in range(D):
            new = 0.5 * (points[i + 1, a] + points[i - 1, a]) + 0.5 * beta * (
                s[a] * v2 - sv * v[a]
            )
            step = damping * (new - points[i, a])
            d2 += step * step
            points[i, a] = points[i, a] + step
        disp = np.sqrt(d2)
        if disp > maxdisp:
            maxdisp = disp
    return maxdisp


_relax_sweep_gmm_jit = backend.jit(_relax_sweep_gmm)


def relax_sweep_gmm(points, order, beta, log_w, means, prec_chol, log_det, damping=1.0):
    impl = backend.pick(_relax_sweep_gmm_jit, _relax_sweep_gmm)
    return impl(points, order, beta, log_w, means, prec_chol, log_det, damping)


def relax_sweep_generic(points, order, beta, score_fn, damping=1.0):
    """Backend-independent sweep for an arbitrary score callable.

    Same update rule as :func:`relax_sweep_gmm`; used when the model does
    not expose mixture arrays (or under the numpy backend).
    """
    maxdisp = 0.0
    for i in order:
        s = np.asarray(score_fn(points[i]), dtype=float).reshape(-1)
        if not np.all(np.isfinite(s)):
            raise ValueError(
                f"non-finite score at index {int(i)}, point {points[i].tolist()}"
            )
        v = 0.5 * (points[i + 1] - points[i - 1])
        v2 = float(v @ v)
        sv = float(s @ v)
        new = 0.5 * (points[i + 1] + points[i - 1]) + 0.5 * beta * (s * v2 - sv * v)
        step = damping * (new - points[i])
        disp = float(np.linalg.norm(step))
        if disp > maxdisp:
            maxdisp = disp
        points[i] = points[i] + step
    return maxdisp


# ---------------------------------------------------------------------------
# Dijkstra over a CSR graph with log-domain accumulation
# ---------------------------------------------------------------------------

def _dijkstra_csr(indptr, indices, log_weights, source, target):
    """Shortest paths with edge weights summed in log space.

    Returns (dist, pred); ``dist`` is log-domain (source at -inf, i.e. zero
    length; unreached nodes at +inf). Ties broken toward the smaller node
    index by heap order, and toward the smaller predecessor on equal
    distance. ``target < 0`` disables early termination.
    """
    n = indptr.shape[0] - 1
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=np.uint8)
    cap = indices.shape[0] + 1
    heap_d = np.empty(cap)
    heap_v = np.empty(cap, dtype=np.int64)
    heap_d[0] = -np.inf
    heap_v[0] = source
    size = 1
    dist[source] = -np.inf
    while size > 0:
        d0 = heap_d[0]
        v0 = heap_v[0]
        size -= 1
        heap_d[0] = heap_d[size]
        heap_v[0] = heap_v[size]
        i = 0
        while True:
            left = 2 * i + 1
            right = left + 1
            best = i
            if left < size and (
                heap_d[left] < heap_d[best]
                or (heap_d[left] == heap_d[best] and heap_v[left] < heap_v[best])
            ):
                best = left
            if right < size and (
                heap_d[right] < heap_d[best]
                or (heap_d[right] == heap_d[best] and heap_v[right] < heap_v[best])
            ):
                best = right
            if best == i:
                break
            heap_d[i], heap_d[best] = heap_d[best], heap_d[i]
            heap_v[i], heap_v[best] = heap_v[best], heap_v[i]
            i = best
        if done[v0] == 1:
            continue
        done[v0] = 1
        if v0 == target:
            break
        for e in range(indptr[v0], indptr[v0 + 1]):
            u = indices[e]
            if done[u] == 1:
                continue
            nd = np.logaddexp(d0, log_weights[e])
            if nd < dist[u] or (nd == dist[u] and v0 < pred[u]):
                dist[u] = nd
                pred[u] = v0
                j = size
                heap_d[j] = nd
                heap_v[j] = u
                size += 1
                while j > 0:
                    p = (j - 1) // 2
                    if heap_d[j] < heap_d[p] or (
                        heap_d[j] == heap_d[p] and heap_v[j] < heap_v[p]
                    ):
                        heap_d[j], heap_d[p] = heap_d[p], heap_d[j]
                        heap_v[j], heap_v[p] = heap_v[p], heap_v[j]
                        j = p
                    else:
                        break
    return dist, pred


def _dijkstra_csr_py(indptr, indices, log_weights, source, target):
    """heapq twin of :func:`_dijkstra_csr` with identical tie-breaking."""
    n = indptr.shape[0] - 1
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    dist[source] = -np.inf
    heap = [(-np.inf, int(source))]
    while heap:
        d0, v0 = heapq.heappop(heap)
        if done[v0]:
            continue
        done[v0] = True
        if v0 == target:
            break
        for e in range(indptr[v0], indptr[v0 + 1]):
            u = int(indices[e])
            if done[u]:
                continue
            nd = float(np.logaddexp(d0, log_weights[e]))
            if nd < dist[u] or (nd == dist[u] and v0 < pred[u]):
                dist[u] = nd
                pred[u] = v0
                heapq.heappush(heap, (nd, u))
    return dist, pred


_dijkstra_csr_jit = backend.jit(_dijkstra_csr)


def dijkstra_csr(indptr, indices, log_weights, source, target=-1):
    impl = backend.pick(_dijkstra_csr_jit, _dijkstra_csr_py)
    return impl(indptr, indices, log_weights, np.int64(source), np.int64(target))


def warm_up():
    """Trigger jit compilation of every kernel on tiny inputs.

    Compilation results persist via numba's on-disk cache, so this is cheap
    after the first call in a given environment.
    """
    if backend.active() != "numba":
        return
    log_w = np.zeros(1)
    means = np.zeros((1, 2))
    prec = np.eye(2)[None, :, :].copy()
    log_det = np.zeros(1)
    pts = np.array([[0.0, 0.0], [0.5, 0.1], [1.0, 0.0]])
    gmm_logpdf_batch(pts, log_w, means, prec, log_det)
    gmm_score_batch(pts, log_w, means, prec, log_det)
    relax_sweep_gmm(pts, np.array([1], dtype=np.int64), 1.0, log_w, means, prec, log_det)
    indptr = np.array([0, 1, 2], dtype=np.int64)
    indices = np.array([1, 0], dtype=np.int64)
    dijkstra_csr(indptr, indices, np.zeros(2), 0, 1)

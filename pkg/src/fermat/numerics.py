"""Shared numerically-stable primitives.

Log-domain arithmetic (natural log throughout; ``-inf`` encodes an exact
zero magnitude), counter-based seeded randomness with derivable child
streams, and the central-difference gradient used as a test oracle for
score functions.
"""

from __future__ import annotations

import numpy as np

LOG_ZERO = -np.inf

#: Default central-difference step: balances truncation and round-off in
#: double precision.
DEFAULT_FD_STEP = 1e-4


def log_sum_exp(values):
    """log(sum(exp(values))) via max-shift; never overflows for finite input.

    Parameters
    ----------
    values : array_like
        Log-domain values. ``-inf`` entries contribute zero magnitude.

    Returns
    -------
    float
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty reduction")
    m = np.max(v)
    if not np.isfinite(m):
        # all -inf (zero total) or a +inf dominates
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_add_exp(a, b):
    """Pairwise log-domain addition, elementwise over arrays."""
    return np.logaddexp(a, b)


class Rng:
    """Deterministic random stream with splittable children.

    Built on the Philox counter-based bit generator, so the same ``seed``
    yields a bit-identical stream on every platform and run. Workers must
    not share an instance; derive one child per task via :meth:`child`,
    which depends only on ``(seed, path)`` and not on how much the parent
    stream was consumed.
    """

    def __init__(self, seed, _path=()):
        self.seed = int(seed)
        self._path = tuple(int(p) for p in _path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._path)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *path) -> "Rng":
        """Independent stream keyed by ``(seed, *existing_path, *path)``."""
        return Rng(self.seed, self._path + tuple(path))

    def permutation(self, n_or_seq):
        return self.generator.permutation(n_or_seq)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high=high, size=size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self._path})"


def shuffle(indices, rng: Rng):
    """Uniform random permutation of ``indices`` (returned as a new array)."""
    idx = np.asarray(indices)
    if idx.size == 0:
        return idx.copy()
    return rng.permutation(idx)


def finite_diff_gradient(f, x, h: float = DEFAULT_FD_STEP):
    """Central-difference gradient of a scalar field.

    Component ``i`` is ``(f(x + h e_i) - f(x - h e_i)) / (2 h)``. Raises if
    any evaluation of ``f`` is non-finite, naming the offending point.
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got h={h}")
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not np.isfinite(fp):
            raise ValueError(f"non-finite evaluation at {xp.tolist()}")
        if not np.isfinite(fm):
            raise ValueError(f"non-finite evaluation at {xm.tolist()}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad

"""Seeded generators for the evaluation distributions and their reference models.

Five two-dimensional families (plus the D-dimensional standard normal):
two analytic Gaussian cases and three noisy geometric sets whose reference
density is a 50-component mixture fitted to a large fresh sample. For the
geometric sets that fitted mixture *is* the ground truth: all distances and
path lengths are evaluated under it, and experiment samples are drawn from
it rather than from the raw geometric process.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import GaussianMixture, gmm_fit_em, standard_normal
from .numerics import Rng

DATASET_KINDS = ("standard_normal", "gmm3", "circle", "spiral", "two_spirals")

_DEFAULT_NOISE = {"circle": 0.08, "spiral": 0.05, "two_spirals": 0.045}

GMM3_WEIGHTS = (0.25, 0.5, 0.25)
GMM3_MEANS = ((2.0, 1.4), (6.5, 6.3), (8.0, 1.0))
GMM3_COVARIANCES = (
    ((3.0, 2.5), (2.5, 3.0)),
    ((3.0, 0.0), (0.0, 3.0)),
    ((2.0, -0.8), (-0.8, 2.0)),
)

#: Rotations before the spiral reaches full radius (radius 1 per rotation).
SPIRAL_ROTATIONS = 1.75
TWO_SPIRALS_ROTATIONS = 1.0


@dataclass(frozen=True)
class DatasetSpec:
    """Seeded description of one evaluation dataset.

    ``dim`` only applies to the standard normal; ``noise`` defaults to the
    per-kind value when None. ``fitted_components`` sizes the reference
    mixture for the geometric sets.
    """

    kind: str
    n: int = 1000
    seed: int = 0
    dim: int = 2
    noise: float | None = None
    fitted_components: int = 50

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset {self.kind!r}; expected {DATASET_KINDS}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.noise is not None and self.noise <= 0:
            raise ValueError("noise must be positive")

    @property
    def noise_sigma(self) -> float:
        if self.noise is not None:
            return self.noise
        return _DEFAULT_NOISE.get(self.kind, 0.0)

    @property
    def ambient_dim(self) -> int:
        return self.dim if self.kind == "standard_normal" else 2


def gmm3_model() -> GaussianMixture:
    """The fixed three-component 2-D mixture used as an analytic dataset."""
    return GaussianMixture(GMM3_WEIGHTS, GMM3_MEANS, GMM3_COVARIANCES)


def sample(spec: DatasetSpec, rng: Rng | None = None):
    """Draw n seeded points from the raw generating process of the dataset.

    Circle: uniform angle on the unit circle plus isotropic Gaussian noise.
    Spiral: radius theta / 2pi with theta uniform over the stated rotations,
    plus isotropic noise; the two-spirals variant rotates half the points
    by pi.
    """
    rng = rng or Rng(spec.seed)
    gen = rng.generator
    n = spec.n
    if spec.kind == "standard_normal":
        return gen.standard_normal((n, spec.dim))
    if spec.kind == "gmm3":
        return gmm3_model().sample(n, rng)
    sigma = spec.noise_sigma
    if spec.kind == "circle":
        theta = gen.uniform(0.0, 2.0 * np.pi, n)
        pts = np.column_stack([np.cos(theta), np.sin(theta)])
        return pts + sigma * gen.standard_normal((n, 2))
    if spec.kind == "spiral":
        theta = gen.uniform(0.0, 2.0 * np.pi * SPIRAL_ROTATIONS, n)
        r = theta / (2.0 * np.pi)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        return pts + sigma * gen.standard_normal((n, 2))
    if spec.kind == "two_spirals":
        theta = gen.uniform(0.0, 2.0 * np.pi * TWO_SPIRALS_ROTATIONS, n)
        branch = gen.integers(0, 2, n)
        phi = theta + np.pi * branch
        r = theta / (2.0 * np.pi)
        pts = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
        return pts + sigma * gen.standard_normal((n, 2))
    raise AssertionError(spec.kind)


#: Sample size used to fit reference mixtures for the geometric datasets.
FIT_SAMPLE_SIZE = 100_000


def reference_model(spec: DatasetSpec, fit_seed: int = 0) -> GaussianMixture:
    """The dataset's ground-truth density model.

    Analytic for the two Gaussian datasets. For the geometric sets, a
    ``fitted_components``-component mixture fitted by EM to a fresh
    ``FIT_SAMPLE_SIZE``-point sample; the fit depends on ``fit_seed`` only,
    not on the spec's experiment sample size or seed.
    """
    if spec.kind == "standard_normal":
        return standard_normal(spec.dim)
    if spec.kind == "gmm3":
        return gmm3_model()
    fit_spec = DatasetSpec(
        kind=spec.kind,
        n=FIT_SAMPLE_SIZE,
        seed=fit_seed,
        noise=spec.noise,
        fitted_components=spec.fitted_components,
    )
    data = sample(fit_spec, Rng(fit_seed).child(DATASET_KINDS.index(spec.kind)))
    return gmm_fit_em(data, spec.fitted_components, seed=fit_seed)

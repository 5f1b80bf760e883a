"""Synthetic ground-truth world: categorical labels over a Gaussian mixture.

A label j is drawn from a categorical prior and an image from
N(mu_j, var*I). The density ratio p(i|t_j)/p(i) is available in closed
form, which makes the world an oracle for everything the rest of the
package estimates from samples.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class MixtureWorld:
    means: np.ndarray          # (K, d)
    var: float = 4.0           # isotropic component variance
    priors: np.ndarray = None  # (K,), uniform by default
    seed: int = 0

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 1:
            raise ContractError(f"means must be (K, d), got {means.shape}")
        if not self.var > 0:
            raise ContractError("var must be positive")
        priors = self.priors
        if priors is None:
            priors = np.full(means.shape[0], 1.0 / means.shape[0])
        priors = np.asarray(priors, dtype=np.float64)
        if priors.shape != (means.shape[0],):
            raise ContractError("priors must have one entry per label")
        if priors.min() <= 0 or abs(priors.sum() - 1.0) > 1e-12:
            raise ContractError("priors must be positive and sum to 1")
        for j in range(means.shape[0]):
            for k in range(j + 1, means.shape[0]):
                if np.array_equal(means[j], means[k]):
                    raise ContractError(f"means {j} and {k} coincide")
        means.setflags(write=False)
        priors.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "priors", priors)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    # -- canonical constructions ------------------------------------------

    @staticmethod
    def circle(K: int, radius: float = 8.0, var: float = 4.0, seed: int = 0) -> "MixtureWorld":
        """K means evenly spaced on a circle in the plane."""
        angles = 2 * np.pi * np.arange(K) / K
        means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return MixtureWorld(means=means, var=var, seed=seed)

    @staticmethod
    def default(K: int, d: int, var: float = 4.0, seed: int = 0) -> "MixtureWorld":
        """Pinned mean placement giving moderate component overlap at any d.

        d=2 uses a radius-8 circle; K <= d scales coordinate axes so every
        pair of means sits 3.5*sqrt(2) apart; otherwise means are random
        directions of norm 6.
        """
        if d == 2:
            return MixtureWorld.circle(K, var=var, seed=seed)
        if K <= d:
            means = np.zeros((K, d))
            means[np.arange(K), np.arange(K)] = 3.5
            return MixtureWorld(means=means, var=var, seed=seed)
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((K, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return MixtureWorld(means=6.0 * dirs, var=var, seed=seed)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({
            "means": self.means.tolist(),
            "var": self.var,
            "priors": self.priors.tolist(),
            "seed": self.seed,
        }, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MixtureWorld":
        doc = json.loads(text)
        return MixtureWorld(
            means=np.array(doc["means"], dtype=np.float64),
            var=float(doc.get("var", 4.0)),
            priors=np.array(doc["priors"], dtype=np.float64) if doc.get("priors") else None,
            seed=int(doc.get("seed", 0)),
        )

    @staticmethod
    def from_file(path: str | Path) -> "MixtureWorld":
        return MixtureWorld.from_json(Path(path).read_text())


def sample_pairs(world: MixtureWorld, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw n (label, image) pairs; deterministic under the seed."""
    if n < 1:
        raise ContractError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(world.K, size=n, p=world.priors)
    noise = rng.standard_normal((n, world.d))
    images = world.means[labels] + np.sqrt(world.var) * noise
    return labels, images


def component_log_densities(world: MixtureWorld, images: np.ndarray) -> np.ndarray:
    """log N(image; mu_k, var*I) for every (image, component) pair."""
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    diff = images[:, None, :] - world.means[None, :, :]
    sq = np.einsum("nkd,nkd->nk", diff, diff)
    const = -0.5 * world.d * np.log(2 * np.pi * world.var)
    return const - sq / (2 * world.var)


def log_marginal(world: MixtureWorld, images: np.ndarray) -> np.ndarray:
    comp = component_log_densities(world, images) + np.log(world.priors)[None, :]
    m = comp.max(axis=1, keepdims=True)
    return m[:, 0] + np.log(np.exp(comp - m).sum(axis=1))


def true_ratio_many(world: MixtureWorld, images: np.ndarray,
                    labels: np.ndarray) -> np.ndarray:
    """Exact p(i|t_label)/p(i) per row, evaluated in log space."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= world.K:
        raise ContractError("label index out of range")
    comp = component_log_densities(world, images)
    log_cond = comp[np.arange(len(labels)), labels]
    return np.exp(log_cond - log_marginal(world, images))


def true_ratio(world: MixtureWorld, image: np.ndarray, label: int) -> float:
    if not 0 <= label < world.K:
        raise ContractError(f"label {label} out of range for K={world.K}")
    return float(true_ratio_many(world, np.atleast_2d(image), np.array([label]))[0])


def posterior_labels(world: MixtureWorld, images: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """Sample labels from p(label | image); used for covariate-shift tests
    where the conditional stays fixed while the image marginal moves."""
    comp = component_log_densities(world, images) + np.log(world.priors)[None, :]
    m = comp.max(axis=1, keepdims=True)
    post = np.exp(comp - m)
    post /= post.sum(axis=1, keepdims=True)
    u = rng.random((images.shape[0], 1))
    return (post.cumsum(axis=1) < u).sum(axis=1)

"""Synthetic embedding corpora on the unit sphere.

Desk-scale stand-ins for real encoder output: clustered unit vectors with
optionally skewed cluster sizes, paired image/text sets, and query sets of
graded rarity (from near-duplicate of a reference to almost isotropic).
"""
from __future__ import annotations

import numpy as np

from .embeddings import EmbeddingMatrix, PairedCorpus


def _unit(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def clustered_unit_vectors(n: int, d: int, n_clusters: int = 20,
                           spread: float = 0.3, zipf: float = 1.0,
                           seed: int = 0) -> np.ndarray:
    """Unit rows around random cluster centers; zipf > 0 skews cluster sizes."""
    rng = np.random.default_rng(seed)
    centers = _unit(rng.standard_normal((n_clusters, d)))
    weights = 1.0 / np.arange(1, n_clusters + 1) ** zipf
    weights /= weights.sum()
    assign = rng.choice(n_clusters, size=n, p=weights)
    rows = centers[assign] + spread * rng.standard_normal((n, d))
    return _unit(rows)


def clustered_matrix(n: int, d: int, modality: str = "text", seed: int = 0,
                     prefix: str = "s", **kwargs) -> EmbeddingMatrix:
    rows = clustered_unit_vectors(n, d, seed=seed, **kwargs)
    ids = tuple(f"{prefix}{k:06d}" for k in range(n))
    return EmbeddingMatrix(ids=ids, rows=rows, modality=modality, normalized=True)


def synthetic_pair_corpus(n: int, d: int, seed: int = 0, drift: float = 0.4,
                          **kwargs) -> PairedCorpus:
    """Paired corpus where each image is a perturbed copy of its text."""
    rng = np.random.default_rng(seed + 1)
    texts = clustered_matrix(n, d, modality="text", seed=seed, prefix="p", **kwargs)
    img_rows = _unit(texts.rows + drift * rng.standard_normal((n, d)))
    images = EmbeddingMatrix(ids=texts.ids, rows=img_rows, modality="image",
                             normalized=True)
    return PairedCorpus(images=images, texts=texts)


def smooth_pair_corpus(n: int, d: int, seed: int = 42, mean_norm: float = 1.2,
                       decay: float = 0.85, drift: float = 0.25) -> PairedCorpus:
    """Paired corpus on a smooth anisotropic cap of the sphere.

    Rows are normalized draws from an off-center Gaussian with geometrically
    decaying axis scales: graded density without discrete cluster atoms,
    which gives the divergence estimators clean 1/sqrt(n) error decay.
    """
    rng = np.random.default_rng(seed)
    lam = decay ** np.arange(d)
    mu = np.zeros(d)
    mu[0] = mean_norm
    t_rows = _unit(mu + rng.standard_normal((n, d)) * lam)
    i_rows = _unit(t_rows + drift * rng.standard_normal((n, d)))
    ids = tuple(f"p{k:06d}" for k in range(n))
    return PairedCorpus(
        images=EmbeddingMatrix(ids=ids, rows=i_rows, modality="image", normalized=True),
        texts=EmbeddingMatrix(ids=ids, rows=t_rows, modality="text", normalized=True),
    )


def anchored_queries(refs: EmbeddingMatrix, n_queries: int,
                     spread_range: tuple[float, float] = (0.3, 1.4),
                     seed: int = 3, modality: str = "image") -> EmbeddingMatrix:
    """Queries at graded additive-noise distances from reference rows."""
    rng = np.random.default_rng(seed)
    anchors = refs.rows[rng.integers(0, refs.n, size=n_queries)]
    spreads = np.linspace(spread_range[0], spread_range[1], n_queries)[:, None]
    rows = _unit(anchors + spreads * rng.standard_normal((n_queries, refs.d)))
    ids = tuple(f"q{k:05d}" for k in range(n_queries))
    return EmbeddingMatrix(ids=ids, rows=rows, modality=modality, normalized=True)


def graded_queries(refs: EmbeddingMatrix, n_queries: int, seed: int = 0,
                   modality: str = "image") -> EmbeddingMatrix:
    """Queries blending a reference row with isotropic noise.

    The blend factor runs from almost 0 (query nearly coincides with one
    reference, extreme divergence values at large logit scales) to almost 1
    (generic query); useful for exercising estimators across their range.
    """
    rng = np.random.default_rng(seed)
    alphas = np.linspace(0.02, 0.95, n_queries)
    anchors = refs.rows[rng.integers(0, refs.n, size=n_queries)]
    noise = _unit(rng.standard_normal((n_queries, refs.d)))
    rows = _unit((1 - alphas)[:, None] * anchors + alphas[:, None] * noise)
    ids = tuple(f"q{k:05d}" for k in range(n_queries))
    return EmbeddingMatrix(ids=ids, rows=rows, modality=modality, normalized=True)

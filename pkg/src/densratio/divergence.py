"""Per-sample divergence metrics computed from calibrated similarity scores.

Four divergences are provided. Writing s_t = a<v_t, query> for the scores
of a query against a reference set:

  d_kl   sum_t s_t*softmax(s)_t - log mean_t e^{s_t}
         (softmax-weighted mean score minus the log empirical normalizer)
  d_klr  log mean_t e^{s_t} - mean_t s_t   (nonnegative by Jensen)
  d_c    a^2 * ||query - mean||^2 over the query's own modality mean
  d_w    a^2 * (query - mean)^T Cov (query - mean), mean from the query's
         modality, covariance from the opposite one

d_kl is algebraically identical to the exact discrete KL divergence between
the induced finite distributions p(t) uniform over refs and
p(t|query) proportional to e^{s_t}; the test suite pins that identity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import ContractError, DataError
from .scoring import ScoreModel, score_matrix

METRIC_KINDS = (
    "d_kl", "d_klr", "d_c", "d_w", "conformity", "raw_norm", "iwl_weight",
)

JENSEN_SLACK = -1e-9


@dataclass(frozen=True)
class MetricVector:
    """Values of one metric over a set of samples, tagged with its kind."""

    ids: tuple[str, ...]
    values: np.ndarray
    kind: str
    modality: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if len(self.ids) != values.shape[0]:
            raise ContractError(
                f"{len(self.ids)} ids for {values.shape[0]} values"
            )
        if self.kind not in METRIC_KINDS:
            raise ContractError(f"unknown metric kind {self.kind!r}")
        if np.isnan(values).any():
            raise DataError(f"NaN in metric vector of kind {self.kind}")
        if self.kind == "d_klr" and values.min(initial=0.0) < JENSEN_SLACK:
            raise DataError(
                f"d_klr violates the Jensen bound: min={values.min():.3e}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class MomentSummary:
    """First and second moments of both reference sets.

    Covariances use the biased 1/n estimator and are symmetrized; positive
    semidefiniteness is probed on random directions at construction.
    """

    mean_text: np.ndarray
    mean_image: np.ndarray
    cov_text: np.ndarray
    cov_image: np.ndarray
    counts: tuple[int, int]  # (n_text, n_image)

    def __post_init__(self):
        for name in ("mean_text", "mean_image", "cov_text", "cov_image"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("cov_text", "cov_image"):
            g = getattr(self, name)
            if np.abs(g - g.T).max() > 1e-12:
                raise ContractError(f"{name} is not symmetric")
            _probe_psd(g, name)

    @property
    def d(self) -> int:
        return self.mean_text.shape[0]


def _probe_psd(g: np.ndarray, name: str, n_dirs: int = 16) -> None:
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((n_dirs, g.shape[0]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    quad = np.einsum("kd,de,ke->k", dirs, g, dirs)
    if quad.min() < -1e-8:
        raise DataError(f"{name} fails the PSD probe: {quad.min():.3e}")


def compute_moments(texts: EmbeddingMatrix, images: EmbeddingMatrix) -> MomentSummary:
    """Means and biased covariances of the two reference sets."""
    if texts.d != images.d:
        raise ContractError("reference sets must share one dimension")
    return MomentSummary(
        mean_text=texts.rows.mean(axis=0),
        mean_image=images.rows.mean(axis=0),
        cov_text=_biased_cov(texts.rows),
        cov_image=_biased_cov(images.rows),
        counts=(texts.n, images.n),
    )


def _biased_cov(rows: np.ndarray) -> np.ndarray:
    centered = rows - rows.mean(axis=0)
    g = centered.T @ centered / rows.shape[0]
    return (g + g.T) / 2.0


# ---------------------------------------------------------------------------
# score-level kernels (shared with the bootstrap module)

def dkl_from_scores(s: np.ndarray) -> np.ndarray:
    """d_kl per row of a (queries x refs) score matrix."""
    s = np.atleast_2d(s)
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    sum_e = e.sum(axis=1)
    weighted = (e * s).sum(axis=1) / sum_e
    log_z = m[:, 0] + np.log(sum_e) - np.log(s.shape[1])
    return weighted - log_z


def dklr_from_scores(s: np.ndarray) -> np.ndarray:
    """d_klr per row; nonnegative by Jensen up to rounding."""
    s = np.atleast_2d(s)
    m = s.max(axis=1, keepdims=True)
    log_z = m[:, 0] + np.log(np.mean(np.exp(s - m), axis=1))
    return log_z - s.mean(axis=1)


def _query_scores(query: np.ndarray, refs: EmbeddingMatrix, model: ScoreModel) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if refs.n < 1:
        raise ContractError("reference set must be nonempty")
    if query.shape[0] != refs.d:
        raise ContractError(f"dimension mismatch: {query.shape[0]} vs {refs.d}")
    s = model.logit_scale * (refs.rows @ query)
    if model.flavor == "sigmoid_contrastive":
        s = s + model.logit_bias
    return s


def d_kl(query: np.ndarray, refs: EmbeddingMatrix, model: ScoreModel) -> float:
    """KL(conditional || marginal) of the opposite modality given ``query``."""
    return float(dkl_from_scores(_query_scores(query, refs, model)[None, :])[0])


def d_klr(query: np.ndarray, refs: EmbeddingMatrix, model: ScoreModel) -> float:
    """Reversed divergence KL(marginal || conditional); >= 0 by Jensen."""
    return float(dklr_from_scores(_query_scores(query, refs, model)[None, :])[0])


def d_kl_many(queries: EmbeddingMatrix, refs: EmbeddingMatrix,
              model: ScoreModel) -> MetricVector:
    s = score_matrix(refs, queries, model).T  # queries x refs
    return MetricVector(
        ids=queries.ids, values=dkl_from_scores(s), kind="d_kl",
        modality=queries.modality,
        params={"model": model.to_dict(), "refs": refs.fingerprint()},
    )


def d_klr_many(queries: EmbeddingMatrix, refs: EmbeddingMatrix,
               model: ScoreModel) -> MetricVector:
    s = score_matrix(refs, queries, model).T
    return MetricVector(
        ids=queries.ids, values=dklr_from_scores(s), kind="d_klr",
        modality=queries.modality,
        params={"model": model.to_dict(), "refs": refs.fingerprint()},
    )


# ---------------------------------------------------------------------------
# exponential-family approximations

def _own_mean(summary: MomentSummary, modality: str) -> np.ndarray:
    return summary.mean_image if modality == "image" else summary.mean_text


def _other_cov(summary: MomentSummary, modality: str) -> np.ndarray:
    return summary.cov_text if modality == "image" else summary.cov_image


def d_c(query: np.ndarray, summary: MomentSummary, modality: str, a: float) -> float:
    """Squared centered norm a^2 ||query - own-modality mean||^2."""
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    center = _own_mean(summary, modality)
    if query.shape != center.shape:
        raise ContractError(f"dimension mismatch: {query.shape} vs {center.shape}")
    delta = query - center
    return float(a * a * (delta @ delta))


def d_w(query: np.ndarray, summary: MomentSummary, modality: str, a: float) -> float:
    """Covariance-weighted quadratic form; image queries center on the image
    mean and weight by the text covariance (and symmetrically for text)."""
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    center = _own_mean(summary, modality)
    cov = _other_cov(summary, modality)
    if query.shape != center.shape:
        raise ContractError(f"dimension mismatch: {query.shape} vs {center.shape}")
    delta = query - center
    return float(a * a * (delta @ cov @ delta))


def d_c_many(queries: EmbeddingMatrix, summary: MomentSummary, a: float) -> MetricVector:
    center = _own_mean(summary, queries.modality)
    delta = queries.rows - center
    values = a * a * np.einsum("qd,qd->q", delta, delta)
    return MetricVector(ids=queries.ids, values=values, kind="d_c",
                        modality=queries.modality, params={"a": a})


def d_w_many(queries: EmbeddingMatrix, summary: MomentSummary, a: float) -> MetricVector:
    center = _own_mean(summary, queries.modality)
    cov = _other_cov(summary, queries.modality)
    delta = queries.rows - center
    values = a * a * np.einsum("qd,de,qe->q", delta, cov, delta)
    return MetricVector(ids=queries.ids, values=values, kind="d_w",
                        modality=queries.modality, params={"a": a})


def d_c_refs(queries: EmbeddingMatrix, refs_own: EmbeddingMatrix, a: float) -> MetricVector:
    """d_c against the mean of an explicit own-modality reference set."""
    if queries.d != refs_own.d:
        raise ContractError("dimension mismatch between queries and refs")
    delta = queries.rows - refs_own.rows.mean(axis=0)
    values = a * a * np.einsum("qd,qd->q", delta, delta)
    return MetricVector(ids=queries.ids, values=values, kind="d_c",
                        modality=queries.modality,
                        params={"a": a, "refs": refs_own.fingerprint()})


def d_w_refs(queries: EmbeddingMatrix, refs_other: EmbeddingMatrix,
             refs_own: EmbeddingMatrix, a: float) -> MetricVector:
    """d_w with the mean from the queries' own modality set and the
    covariance from the opposite modality set."""
    if queries.d != refs_other.d or queries.d != refs_own.d:
        raise ContractError("dimension mismatch between queries and refs")
    cov = _biased_cov(refs_other.rows)
    delta = queries.rows - refs_own.rows.mean(axis=0)
    values = a * a * np.einsum("qd,de,qe->q", delta, cov, delta)
    return MetricVector(ids=queries.ids, values=values, kind="d_w",
                        modality=queries.modality,
                        params={"a": a, "refs_other": refs_other.fingerprint(),
                                "refs_own": refs_own.fingerprint()})


def d_c_self(m: EmbeddingMatrix, a: float, mean_convention: str = "include_self") -> MetricVector:
    """d_c of every row against its own corpus mean.

    ``include_self`` (the matched convention for the conformity identity)
    centers on the full-corpus mean; ``exclude_self`` uses each row's
    leave-one-out mean instead.
    """
    mean = m.rows.mean(axis=0)
    if mean_convention == "include_self":
        delta = m.rows - mean
    elif mean_convention == "exclude_self":
        if m.n < 2:
            raise ContractError("leave-one-out mean needs n >= 2")
        loo = (m.n * mean - m.rows) / (m.n - 1)
        delta = m.rows - loo
    else:
        raise ContractError(f"unknown mean convention {mean_convention!r}")
    values = a * a * np.einsum("qd,qd->q", delta, delta)
    return MetricVector(ids=m.ids, values=values, kind="d_c",
                        modality=m.modality,
                        params={"a": a, "mean_convention": mean_convention})


def conformity(m: EmbeddingMatrix) -> MetricVector:
    """Mean cosine of every row to all other rows (self excluded)."""
    if m.n < 2:
        raise ContractError("conformity needs at least two samples")
    if not m.normalized:
        raise ContractError("conformity expects a normalized matrix")
    total = m.rows @ m.rows.sum(axis=0)
    self_sim = np.einsum("qd,qd->q", m.rows, m.rows)
    values = (total - self_sim) / (m.n - 1)
    return MetricVector(ids=m.ids, values=values, kind="conformity",
                        modality=m.modality, params={"n": m.n})


# ---------------------------------------------------------------------------
# cross-metric comparison

@dataclass(frozen=True)
class CorrelationMatrix:
    """Pearson coefficients between metric vectors.

    Entries involving a zero-variance metric are undefined and marked NaN
    in ``matrix`` / null in the JSON rendering; the diagonal stays 1 by
    convention. ``defined`` records which entries are meaningful.
    """

    labels: tuple[str, ...]
    matrix: np.ndarray
    defined: np.ndarray

    def to_json(self) -> str:
        cells = [
            [None if not self.defined[i][j] else float(self.matrix[i][j])
             for j in range(len(self.labels))]
            for i in range(len(self.labels))
        ]
        return json.dumps({"labels": list(self.labels), "pearson": cells},
                          indent=2, sort_keys=True)


def metric_correlations(metrics: list[MetricVector]) -> CorrelationMatrix:
    if not metrics:
        raise ContractError("need at least one metric vector")
    ids = metrics[0].ids
    for mv in metrics[1:]:
        if mv.ids != ids:
            raise ContractError("metric vectors must share the ID set and ordering")
    k = len(metrics)
    labels, seen = [], {}
    for mv in metrics:
        seen[mv.kind] = seen.get(mv.kind, 0) + 1
        labels.append(mv.kind if seen[mv.kind] == 1 else f"{mv.kind}#{seen[mv.kind]}")
    centered, spread = [], []
    for mv in metrics:
        c = mv.values - mv.values.mean()
        centered.append(c)
        spread.append(float(np.sqrt(c @ c)))
    out = np.eye(k)
    defined = np.ones((k, k), dtype=bool)
    for i in range(k):
        for j in range(i + 1, k):
            if spread[i] == 0.0 or spread[j] == 0.0:
                out[i, j] = out[j, i] = np.nan
                defined[i, j] = defined[j, i] = False
                continue
            r = float(centered[i] @ centered[j]) / (spread[i] * spread[j])
            out[i, j] = out[j, i] = min(1.0, max(-1.0, r))
    return CorrelationMatrix(labels=tuple(labels), matrix=out, defined=defined)


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Plain Pearson coefficient of two equal-length vectors."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ContractError("pearson expects equal-length vectors")
    cx, cy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(cx @ cx), np.sqrt(cy @ cy)
    if sx == 0.0 or sy == 0.0:
        raise ContractError("pearson undefined for a zero-variance vector")
    return float((cx @ cy) / (sx * sy))


def write_metric_csv(path: str | Path, mv: MetricVector) -> None:
    from .scoring import write_value_csv

    header = {"kind": mv.kind, "modality": mv.modality}
    header.update({k: v for k, v in mv.params.items()})
    write_value_csv(path, mv.ids, mv.values, header)


def read_metric_csv(path: str | Path) -> MetricVector:
    from .scoring import read_value_csv

    ids, values, header = read_value_csv(path)
    kind = header.pop("kind", "d_kl")
    modality = header.pop("modality", "image")
    return MetricVector(ids=tuple(ids), values=values, kind=kind,
                        modality=modality, params=header)

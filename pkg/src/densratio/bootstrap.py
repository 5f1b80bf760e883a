"""Finite-sample error analysis of the divergence metrics via the bootstrap.

For every query the reference set is resampled with replacement B times and
the metric recomputed, giving per-query Bias, Variance and RMSE together
with a scale normalizer (the std of the full-sample metric across queries).
Resample b draws its indices from a generator seeded by (seed, b), so
results are identical regardless of how many workers execute the loop.
"""
from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .divergence import dkl_from_scores, dklr_from_scores
from .embeddings import EmbeddingMatrix, PairedCorpus
from .errors import ContractError
from .scoring import ScoreModel

GENERATOR = "pcg64"
BOOTSTRAP_METRICS = ("d_kl", "d_klr", "d_c", "d_w")


@dataclass(frozen=True)
class BootstrapReport:
    ids: tuple[str, ...]
    bias: np.ndarray
    variance: np.ndarray
    rmse: np.ndarray
    full_sample: np.ndarray
    scale: float
    B: int
    n: int
    seed: int
    metric: str
    model: dict
    generator: str = GENERATOR

    def __post_init__(self):
        lhs = self.rmse**2
        rhs = self.variance + self.bias**2
        err = np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)
        mask = rhs > 1e-300
        if mask.any() and err[mask].max() > 1e-9:
            raise ContractError("rmse^2 != variance + bias^2")
        if self.variance.min(initial=0.0) < 0:
            raise ContractError("negative variance")


def _resample_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(b)]))


def _metric_evaluator(queries: EmbeddingMatrix, refs, metric: str,
                      model: ScoreModel):
    """Returns (n_refs, eval(idx or None) -> per-query values).

    ``refs`` is an EmbeddingMatrix for d_kl/d_klr/d_c, or a PairedCorpus
    when both modalities are needed (always for d_w; optional otherwise,
    in which case the appropriate side is used and pairs are resampled
    jointly).
    """
    if metric not in BOOTSTRAP_METRICS:
        raise ContractError(f"unknown bootstrap metric {metric!r}")
    a = model.logit_scale
    qmod = queries.modality

    if isinstance(refs, PairedCorpus):
        own = refs.images if qmod == "image" else refs.texts
        other = refs.aligned_texts() if qmod == "image" else refs.images
        n = refs.n
    else:
        own = other = refs
        n = refs.n
        if metric == "d_w":
            raise ContractError("d_w bootstrap needs a PairedCorpus (both modalities)")

    if metric in ("d_kl", "d_klr"):
        s_full = model.logit_scale * (queries.rows @ other.rows.T)
        if model.flavor == "sigmoid_contrastive":
            s_full = s_full + model.logit_bias
        kernel = dkl_from_scores if metric == "d_kl" else dklr_from_scores

        def evaluate(idx):
            s = s_full if idx is None else s_full[:, idx]
            return kernel(s)

    elif metric == "d_c":
        rows = own.rows

        def evaluate(idx):
            center = rows.mean(axis=0) if idx is None else rows[idx].mean(axis=0)
            delta = queries.rows - center
            return a * a * np.einsum("qd,qd->q", delta, delta)

    else:  # d_w
        own_rows = own.rows
        other_rows = other.rows
        if n < queries.d:
            warnings.warn(
                f"d_w bootstrap with {n} refs in {queries.d} dims: "
                "covariance is rank-deficient", stacklevel=3,
            )

        def evaluate(idx):
            o = other_rows if idx is None else other_rows[idx]
            w = own_rows if idx is None else own_rows[idx]
            center = w.mean(axis=0)
            centered = o - o.mean(axis=0)
            cov = centered.T @ centered / o.shape[0]
            delta = queries.rows - center
            return a * a * np.einsum("qd,de,qe->q", delta, cov, delta)

    return n, evaluate


def bootstrap(queries: EmbeddingMatrix, refs, metric: str, model: ScoreModel,
              B: int, seed: int, threads: int = 1) -> BootstrapReport:
    """Classical bootstrap: B resamples of the refs, each of size refs.n."""
    if B < 2:
        raise ContractError(f"B must be >= 2, got {B}")
    n, evaluate = _metric_evaluator(queries, refs, metric, model)
    full = evaluate(None)

    estimates = np.empty((B, queries.n))

    def one(b: int) -> None:
        idx = _resample_rng(seed, b).integers(0, n, size=n)
        estimates[b] = evaluate(idx)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, range(B)))
    else:
        for b in range(B):
            one(b)

    mean_b = estimates.mean(axis=0)
    bias = mean_b - full
    variance = np.mean((estimates - mean_b) ** 2, axis=0)
    rmse = np.sqrt(variance + bias**2)
    scale = float(np.std(full))
    return BootstrapReport(
        ids=queries.ids, bias=bias, variance=variance, rmse=rmse,
        full_sample=full, scale=scale, B=B, n=n, seed=int(seed),
        metric=metric, model=model.to_dict(),
    )


# ---------------------------------------------------------------------------
# sample-size sweep: subsample first, bootstrap inside

def sweep_inner_seed(seed: int, size: int, repeat: int) -> int:
    """Derived seed for the bootstrap run inside one sweep cell."""
    ss = np.random.SeedSequence([int(seed), int(size), int(repeat), 1])
    return int(ss.generate_state(1, np.uint64)[0])


def _subset_indices(seed: int, size: int, repeat: int, n: int) -> np.ndarray:
    if size == n:
        return np.arange(n)
    rng = np.random.default_rng(
        np.random.SeedSequence([int(seed), int(size), int(repeat), 0])
    )
    return rng.choice(n, size=size, replace=False)


def _take_refs(refs, idx: np.ndarray):
    if isinstance(refs, PairedCorpus):
        images = refs.images
        texts = refs.aligned_texts()
        sub_img = EmbeddingMatrix(
            ids=tuple(images.ids[k] for k in idx), rows=images.rows[idx],
            modality="image", normalized=images.normalized)
        sub_txt = EmbeddingMatrix(
            ids=tuple(texts.ids[k] for k in idx), rows=texts.rows[idx],
            modality="text", normalized=texts.normalized)
        return PairedCorpus(images=sub_img, texts=sub_txt)
    return EmbeddingMatrix(
        ids=tuple(refs.ids[k] for k in idx), rows=refs.rows[idx],
        modality=refs.modality, normalized=refs.normalized)


@dataclass(frozen=True)
class SweepRow:
    n: int
    median: float
    q1: float
    q3: float


def sample_size_sweep(queries: EmbeddingMatrix, refs, metric: str,
                      model: ScoreModel, sizes: list[int], repeats: int,
                      seed: int, B: int = 100, threads: int = 1) -> list[SweepRow]:
    """Median and quartiles of scale-relative per-query RMSE at each size.

    Each of ``repeats`` subsets of the given size is drawn without
    replacement and bootstrapped internally; relative RMSE values are
    pooled across queries and repeats. With a single size equal to refs.n
    and repeats=1 this reduces to a plain bootstrap run (the derived seed
    is exposed via sweep_inner_seed).
    """
    total = refs.n
    if repeats < 1:
        raise ContractError("repeats must be positive")
    rows = []
    for size in sizes:
        if size < 1 or size > total:
            raise ContractError(f"size {size} out of range 1..{total}")
        pooled = []
        for r in range(repeats):
            idx = _subset_indices(seed, size, r, total)
            sub = _take_refs(refs, idx)
            report = bootstrap(queries, sub, metric, model,
                               B=B, seed=sweep_inner_seed(seed, size, r),
                               threads=threads)
            if report.scale == 0.0:
                raise ContractError("metric scale is zero; relative RMSE undefined")
            pooled.append(report.rmse / report.scale)
        pooled = np.concatenate(pooled)
        q1, med, q3 = np.percentile(pooled, [25, 50, 75])
        rows.append(SweepRow(n=size, median=float(med), q1=float(q1), q3=float(q3)))
    return rows


# ---------------------------------------------------------------------------
# persistence

def write_bootstrap_csv(path: str | Path, report: BootstrapReport) -> None:
    header = {
        "B": report.B, "n": report.n, "seed": report.seed,
        "metric": report.metric, "model": report.model,
        "scale": report.scale, "generator": report.generator,
    }
    s = report.scale if report.scale > 0 else float("nan")
    with Path(path).open("w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("id,bias,variance,rmse,bias_over_scale,var_over_scale2,rmse_over_scale\n")
        for k, sid in enumerate(report.ids):
            cols = [report.bias[k], report.variance[k], report.rmse[k],
                    report.bias[k] / s, report.variance[k] / (s * s),
                    report.rmse[k] / s]
            fh.write(sid + "," + ",".join(repr(float(c)) for c in cols) + "\n")


def write_sweep_csv(path: str | Path, rows: list[SweepRow], header: dict) -> None:
    with Path(path).open("w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("n,median,q1,q3\n")
        for row in rows:
            fh.write(f"{row.n},{row.median},{row.q1},{row.q3}\n")

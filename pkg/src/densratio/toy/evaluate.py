"""Oracle-based evaluation of trained toy encoders.

Predicted ratios come from the scoring module's calibrations (empirical
normalizer for the softmax flavor, nu*e^b for the sigmoid flavor) and are
compared against the analytic mixture ratio on held-out pairs.
"""
from __future__ import annotations

import numpy as np

from ..divergence import pearson
from ..scoring import SIGMOID, SOFTMAX, iwl_weights, ratio_matrix
from .encoders import (EncoderParams, embed_images, embed_texts, image_matrix,
                       label_matrix)
from .train import TrainConfig, loss_and_grads, train
from .world import MixtureWorld, posterior_labels, sample_pairs, true_ratio_many


def predicted_ratios(params: EncoderParams, images: np.ndarray,
                     labels: np.ndarray, calibration: str | None = None,
                     ref_images: np.ndarray | None = None) -> np.ndarray:
    """Calibrated ratio estimate p_I(i|t_label)/p_I(i) for each pair.

    The empirical normalizer runs over the evaluated images plus the
    optional extra marginal sample ``ref_images``; a larger reference
    tightens the per-label normalizer without touching the test pairs.
    """
    rows = np.atleast_2d(images)
    n = rows.shape[0]
    if ref_images is not None:
        rows = np.concatenate([rows, np.atleast_2d(ref_images)], axis=0)
    img_m = image_matrix(params, rows)
    lbl_m = label_matrix(params)
    ratios = ratio_matrix(img_m, lbl_m, params.score_model(), calibration)
    return ratios[np.arange(n), np.asarray(labels, dtype=np.int64)]


def evaluate(world: MixtureWorld, params: EncoderParams, n_test: int = 8192,
             seed: int = 987, calibration: str | None = None,
             n_ref: int = 65536) -> dict:
    """R^2 / MSE / Pearson of predicted vs analytic ratios on held-out pairs.

    ``n_ref`` extra marginal images stabilize the empirical normalizer; the
    metrics themselves are computed on the ``n_test`` held-out pairs.
    """
    labels, images = sample_pairs(world, n_test, seed)
    ref_images = None
    if n_ref > 0:
        _, ref_images = sample_pairs(world, n_ref, seed + 1)
    pred = predicted_ratios(params, images, labels, calibration, ref_images)
    truth = true_ratio_many(world, images, labels)
    resid = pred - truth
    ss_res = float(resid @ resid)
    centered = truth - truth.mean()
    ss_tot = float(centered @ centered)
    scores = params.score_model().logit_scale * np.einsum(
        "nd,nd->n", embed_images(params, images), embed_texts(params, labels))
    return {
        "r2": 1.0 - ss_res / ss_tot,
        "mse": ss_res / len(truth),
        "pearson": pearson(pred, truth),
        "pearson_log_score": pearson(scores, np.log(truth)),
        "n_test": n_test,
        "calibration": calibration or params.score_model().default_calibration,
    }


def evaluation_grid(world: MixtureWorld, params: EncoderParams, label: int,
                    bounds: tuple[float, float, float, float] = (-12, 12, -12, 12),
                    steps: int = 60, n_ref: int = 4096, seed: int = 555) -> np.ndarray:
    """(x, y, true_ratio, predicted_ratio) rows over a plane grid.

    Only defined for 2-D worlds. The empirical normalizer uses a marginal
    sample, not the grid points, since the grid is not marginal-distributed.
    """
    if world.d != 2:
        raise ValueError("evaluation grids are only defined for d=2 worlds")
    xs = np.linspace(bounds[0], bounds[1], steps)
    ys = np.linspace(bounds[2], bounds[3], steps)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)

    _, ref_images = sample_pairs(world, n_ref, seed)
    model = params.score_model()
    lbl = embed_texts(params, np.array([label]))[0]
    a = model.logit_scale
    s_ref = a * (embed_images(params, ref_images) @ lbl)
    s_grid = a * (embed_images(params, grid) @ lbl)
    if model.flavor == SIGMOID:
        pred = model.nu * np.exp(s_grid + model.logit_bias)
    else:
        m = s_ref.max()
        log_z = m + np.log(np.mean(np.exp(s_ref - m)))
        pred = np.exp(s_grid - log_z)
    truth = true_ratio_many(world, grid, np.full(len(grid), label))
    return np.column_stack([grid[:, 0], grid[:, 1], truth, pred])


def _shifted_test_loss(world: MixtureWorld, params: EncoderParams,
                       prompt_label: int, n_samples: int, seed: int) -> float:
    """Label NLL on the prompt component: images follow the prompt
    conditional, labels keep the world's posterior, and the model scores
    all K labels per image (the zero-shot classification loss)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    images = world.means[prompt_label] + np.sqrt(world.var) * rng.standard_normal(
        (n_samples, world.d))
    labels = posterior_labels(world, images, rng)
    a = params.score_model().logit_scale
    scores = a * (embed_images(params, images) @ embed_texts(params, np.arange(world.K)).T)
    m = scores.max(axis=1, keepdims=True)
    log_post = scores - (m + np.log(np.exp(scores - m).sum(axis=1, keepdims=True)))
    return float(-log_post[np.arange(n_samples), labels].mean())


def iwl_demo(world: MixtureWorld, prompt_label: int, config: TrainConfig,
             ref_config: TrainConfig | None = None,
             ref_params: EncoderParams | None = None,
             weight_scale: float = 10.0,
             eval_samples: int = 4096, eval_seed: int = 31337) -> dict:
    """Weighted-vs-baseline comparison under a prompt-defined covariate shift.

    A frozen reference encoder supplies the importance weights
    exp(a <u_image, u_prompt>) (a scaled down to 10, mean-normalized per
    batch); the weighted and unweighted runs share seeds and step budgets,
    so the only difference is the weighting. The reported test loss is the
    zero-shot label NLL on pairs from the prompt component.

    Pass ``ref_params`` to reuse one frozen reference encoder across many
    trials; otherwise one is trained from ``ref_config``.
    """
    if not 0 <= prompt_label < world.K:
        raise ValueError(f"prompt label {prompt_label} out of range")
    if ref_params is None:
        if ref_config is None:
            ref_config = TrainConfig(objective=SOFTMAX, steps=1200,
                                     batch_size=256, seed=20_000)
        ref_params, _ = train(world, ref_config)
    u_prompt = embed_texts(ref_params, np.array([prompt_label]))[0]

    def weight_fn(labels, images):
        w = np.exp(weight_scale * (embed_images(ref_params, images) @ u_prompt))
        return w / w.mean()

    weighted_params, weighted_curve = train(world, config, weight_fn=weight_fn)
    baseline_params, baseline_curve = train(world, config)

    weighted_loss = _shifted_test_loss(world, weighted_params, prompt_label,
                                       eval_samples, eval_seed)
    baseline_loss = _shifted_test_loss(world, baseline_params, prompt_label,
                                       eval_samples, eval_seed)

    probe_labels, probe_images = sample_pairs(world, 4096, eval_seed + 1)
    probe = iwl_weights(image_matrix(ref_params, probe_images), u_prompt, weight_scale)
    on_prompt = probe_labels == prompt_label
    return {
        "prompt_label": int(prompt_label),
        "weighted_test_loss": float(weighted_loss),
        "baseline_test_loss": float(baseline_loss),
        "improvement": float(baseline_loss - weighted_loss),
        "weight_mean_on_prompt": float(probe[on_prompt].mean()),
        "weight_mean_off_prompt": float(probe[~on_prompt].mean()),
        "weighted_final_train_loss": float(weighted_curve[-1]),
        "baseline_final_train_loss": float(baseline_curve[-1]),
        "steps": config.steps,
        "seed": config.seed,
    }

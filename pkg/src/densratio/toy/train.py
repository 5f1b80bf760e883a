"""Contrastive training of the toy encoders with hand-derived gradients.

Both objectives are implemented directly on numpy: the batch-softmax loss
(two symmetric cross-entropy terms) and the sigmoid loss (positive pairs on
the batch diagonal, every other pair a negative). Optional per-pair weights
multiply both loss terms, which is the importance-weighted training mode.

No autodiff framework is involved; the backward pass is derived by hand and
validated against central finite differences (see ``gradient_check``), which
the acceptance suite runs over many seeds.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from ..errors import ContractError, TrainingDiverged
from ..scoring import SIGMOID, SOFTMAX
from .encoders import (EncoderParams, init_params, one_hot, tower_backward,
                       tower_forward)
from .world import MixtureWorld

_LOG_SCALE_RANGE = (np.log(0.5), 6.0)


@dataclass(frozen=True)
class TrainConfig:
    objective: str = SOFTMAX
    batch_size: int = 512
    steps: int = 8000
    lr: float = 4e-3
    lr_schedule: str = "cosine"  # decay to 1% of lr, or "constant"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.1  # decoupled, tower weight matrices only
    hidden: int = 128
    embed_dim: int = 16
    init_logit_scale: float = 10.0
    avg_tail_frac: float = 0.1  # >0: average weights over the trailing steps
    seed: int = 0
    eval_grid: dict | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ContractError("batch_size must be >= 2")
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if self.lr <= 0:
            raise ContractError("lr must be positive")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ContractError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.objective not in (SOFTMAX, SIGMOID):
            raise ContractError(f"unknown objective {self.objective!r}")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant":
            return self.lr
        frac = step / max(1, self.steps - 1)
        return self.lr * (0.01 + 0.99 * 0.5 * (1 + np.cos(np.pi * frac)))

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "TrainConfig":
        known = {f for f in TrainConfig.__dataclass_fields__}
        return TrainConfig(**{k: v for k, v in doc.items() if k in known})


def _softmax_and_log_diag(s: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Softmax along ``axis`` plus the log softmax of the diagonal."""
    m = s.max(axis=axis, keepdims=True)
    e = np.exp(s - m)
    tot = e.sum(axis=axis, keepdims=True)
    log_diag = np.diag(s) - np.squeeze(m + np.log(tot), axis=axis)
    return e / tot, log_diag


def loss_and_grads(params: EncoderParams, labels: np.ndarray,
                   images: np.ndarray, weights: np.ndarray | None = None):
    """Per-pair mean loss and gradients for one batch.

    Returns (loss, grads) where grads maps tensor names ("image.w1", ...,
    "log_scale", and for the sigmoid objective "logit_bias") to arrays of
    the parameter's shape.
    """
    n = len(labels)
    k_labels = params.text["w1"].shape[0]
    x_txt = one_hot(np.asarray(labels, dtype=np.int64), k_labels)
    x_img = np.atleast_2d(np.asarray(images, dtype=np.float64))
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise ContractError("one weight per pair required")

    t_emb, t_cache = tower_forward(params.text, x_txt, want_cache=True)
    i_emb, i_cache = tower_forward(params.image, x_img, want_cache=True)
    a = float(np.exp(params.log_scale))
    s_raw = t_emb @ i_emb.T          # s_raw[k, j] = <t_k, i_j>
    s = a * s_raw
    if params.objective == SIGMOID:
        s = s + params.logit_bias

    eye = np.eye(n)
    if params.objective == SOFTMAX:
        # column softmax scores texts for a fixed image, row softmax the reverse
        p_col, log_p_i2t = _softmax_and_log_diag(s, axis=0)
        p_row, log_p_t2i = _softmax_and_log_diag(s, axis=1)
        loss = -float(w @ (log_p_i2t + log_p_t2i)) / n
        g_s = ((p_col - eye) * w[None, :] + (p_row - eye) * w[:, None]) / n
    else:
        # -log sigma(x) = softplus(-x); diagonal positives, rest negatives
        softplus = lambda x: np.logaddexp(0.0, x)
        pos = np.diag(s)
        loss_terms = softplus(s).sum(axis=0) - softplus(pos) + softplus(-pos)
        loss = float(w @ loss_terms) / n
        g_s = (_sigmoid(s) - eye) * w[None, :] / n

    grads: dict[str, np.ndarray] = {}
    grads["log_scale"] = np.array(np.sum(g_s * s_raw) * a)
    if params.objective == SIGMOID:
        grads["logit_bias"] = np.array(g_s.sum())
    d_t = a * (g_s @ i_emb)
    d_i = a * (g_s.T @ t_emb)
    for key, val in tower_backward(params.text, t_cache, d_t).items():
        grads["text." + key] = val
    for key, val in tower_backward(params.image, i_cache, d_i).items():
        grads["image." + key] = val
    return loss, grads


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _get(params: EncoderParams, name: str):
    if name == "log_scale":
        return params.log_scale
    if name == "logit_bias":
        return params.logit_bias
    tower, key = name.split(".")
    return getattr(params, tower)[key]


def _add(params: EncoderParams, name: str, delta):
    if name == "log_scale":
        params.log_scale = float(params.log_scale + delta)
    elif name == "logit_bias":
        params.logit_bias = float(params.logit_bias + delta)
    else:
        tower, key = name.split(".")
        getattr(params, tower)[key] += delta


def _sample_batch(world: MixtureWorld, n: int, rng: np.random.Generator):
    labels = rng.choice(world.K, size=n, p=world.priors)
    images = world.means[labels] + np.sqrt(world.var) * rng.standard_normal((n, world.d))
    return labels, images


def train(world: MixtureWorld, config: TrainConfig, weight_fn=None):
    """Minimize the configured contrastive loss over seeded minibatches.

    ``weight_fn(labels, images) -> weights`` enables importance-weighted
    training. Returns (params, per-step loss array). Raises
    TrainingDiverged with the step index if the loss leaves the reals.
    """
    nu = config.batch_size - 1
    params = init_params(
        d=world.d, K=world.K, hidden=config.hidden, embed_dim=config.embed_dim,
        objective=config.objective, seed=config.seed,
        init_logit_scale=config.init_logit_scale,
        init_logit_bias=-np.log(nu) if config.objective == SIGMOID else 0.0,
    )
    params.nu = nu
    params.meta.update({"steps": config.steps, "batch_size": config.batch_size,
                        "lr": config.lr, "seed": config.seed})
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    m_state: dict[str, np.ndarray] = {}
    v_state: dict[str, np.ndarray] = {}
    losses = np.empty(config.steps)
    avg_from = config.steps - int(config.avg_tail_frac * config.steps)
    tail_sum: dict[str, np.ndarray] = {}
    tail_count = 0
    for step in range(config.steps):
        labels, images = _sample_batch(world, config.batch_size, rng)
        weights = weight_fn(labels, images) if weight_fn is not None else None
        loss, grads = loss_and_grads(params, labels, images, weights)
        if not np.isfinite(loss):
            raise TrainingDiverged(step)
        losses[step] = loss
        t = step + 1
        lr = config.lr_at(step)
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            if name not in m_state:
                m_state[name] = np.zeros_like(g)
                v_state[name] = np.zeros_like(g)
            m_state[name] = config.beta1 * m_state[name] + (1 - config.beta1) * g
            v_state[name] = config.beta2 * v_state[name] + (1 - config.beta2) * g * g
            m_hat = m_state[name] / (1 - config.beta1**t)
            v_hat = v_state[name] / (1 - config.beta2**t)
            _add(params, name, -lr * m_hat / (np.sqrt(v_hat) + config.adam_eps))
            if config.weight_decay > 0 and ".w" in name:
                tower, key = name.split(".")
                getattr(params, tower)[key] *= 1.0 - lr * config.weight_decay
        params.log_scale = float(np.clip(params.log_scale, *_LOG_SCALE_RANGE))
        if config.avg_tail_frac > 0 and step >= avg_from:
            tail_count += 1
            for name in grads:
                val = np.asarray(_get(params, name), dtype=np.float64)
                if name not in tail_sum:
                    tail_sum[name] = val.copy()
                else:
                    tail_sum[name] += val
    if tail_count > 0:
        for name, total in tail_sum.items():
            avg = total / tail_count
            if name in ("log_scale", "logit_bias"):
                setattr(params, name, float(avg))
            else:
                tower, key = name.split(".")
                getattr(params, tower)[key] = avg
    return params, losses


def gradient_check(objective: str = SOFTMAX, seed: int = 0, batch: int = 4,
                   weighted: bool = False, world: MixtureWorld | None = None,
                   coords_per_tensor: int = 6, h: float = 1e-5) -> dict[str, float]:
    """Analytic vs central-finite-difference gradients on a small batch.

    Returns the max relative error per parameter tensor; every entry should
    sit well below 1e-4 for the smooth tanh towers.
    """
    if world is None:
        world = MixtureWorld.circle(K=8)
    rng = np.random.default_rng(seed)
    params = init_params(d=world.d, K=world.K, hidden=16, embed_dim=8,
                         objective=objective, seed=seed,
                         init_logit_bias=-1.0 if objective == SIGMOID else 0.0)
    labels, images = _sample_batch(world, batch, rng)
    weights = np.exp(rng.standard_normal(batch)) if weighted else None

    def loss_at() -> float:
        return loss_and_grads(params, labels, images, weights)[0]

    _, grads = loss_and_grads(params, labels, images, weights)
    errors: dict[str, float] = {}
    for name, g in grads.items():
        g_flat = np.atleast_1d(np.asarray(g, dtype=np.float64)).reshape(-1)
        picks = rng.choice(g_flat.size, size=min(coords_per_tensor, g_flat.size),
                           replace=False)
        current = _get(params, name)
        is_scalar = not isinstance(current, np.ndarray)
        worst = 0.0
        for pick in picks:
            if is_scalar:
                bump = h
            else:
                bump = np.zeros_like(current)
                bump.reshape(-1)[pick] = h
            _add(params, name, bump)
            up = loss_at()
            _add(params, name, -2 * bump)
            down = loss_at()
            _add(params, name, bump)
            fd = (up - down) / (2 * h)
            ana = float(g_flat[pick])
            rel = abs(ana - fd) / max(abs(ana), abs(fd), 1e-6)
            worst = max(worst, rel)
        errors[name] = worst
    return errors


def write_config(config: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))


def read_config(path: str | Path) -> TrainConfig:
    return TrainConfig.from_dict(json.loads(Path(path).read_text()))

"""Calibrated density-ratio estimates from embedding inner products.

The similarity score a<v_t, v_i> (plus a bias for the sigmoid flavor) is
treated as a log density ratio up to an additive constant; the calibration
step removes that constant, either empirically (softmax flavor) or through
the nu*e^b identity (sigmoid flavor).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import ContractError, FormatError

SOFTMAX = "softmax_contrastive"
SIGMOID = "sigmoid_contrastive"
CALIBRATIONS = ("empirical_Z", "nu_eb", "none")


@dataclass(frozen=True)
class ScoreModel:
    """Scoring parameters: logit scale a, logit bias b, objective flavor.

    ``nu`` is the negatives-per-positive count; only the sigmoid flavor
    uses it (for the nu*e^b calibration).
    """

    logit_scale: float
    logit_bias: float = 0.0
    flavor: str = SOFTMAX
    nu: int = 1

    def __post_init__(self):
        if not self.logit_scale > 0:
            raise ContractError(f"logit_scale must be positive, got {self.logit_scale}")
        if self.flavor not in (SOFTMAX, SIGMOID):
            raise ContractError(f"unknown flavor {self.flavor!r}")
        if self.nu < 1:
            raise ContractError(f"nu must be a positive integer, got {self.nu}")

    @property
    def default_calibration(self) -> str:
        return "empirical_Z" if self.flavor == SOFTMAX else "nu_eb"

    def to_dict(self) -> dict:
        return asdict(self)


def score(v_t: np.ndarray, v_i: np.ndarray, model: ScoreModel) -> float:
    """Log-ratio score of one text/image pair of unit vectors.

    Softmax flavor ignores the logit bias; sigmoid flavor adds it.
    """
    v_t = np.asarray(v_t, dtype=np.float64)
    v_i = np.asarray(v_i, dtype=np.float64)
    if v_t.shape != v_i.shape or v_t.ndim != 1:
        raise ContractError(
            f"score expects two vectors of one dimension, got {v_t.shape} and {v_i.shape}"
        )
    s = model.logit_scale * float(v_t @ v_i)
    if model.flavor == SIGMOID:
        s += model.logit_bias
    return s


def score_matrix(texts: EmbeddingMatrix, images: EmbeddingMatrix,
                 model: ScoreModel) -> np.ndarray:
    """All pairwise scores; entry (t, i) scores text row t against image row i."""
    if texts.d != images.d:
        raise ContractError(f"dimension mismatch: {texts.d} vs {images.d}")
    s = model.logit_scale * (texts.rows @ images.rows.T)
    if model.flavor == SIGMOID:
        s = s + model.logit_bias
    return s


def ratio_matrix(texts: EmbeddingMatrix, images: EmbeddingMatrix,
                 model: ScoreModel, calibration: str | None = None) -> np.ndarray:
    """Density-ratio estimates; entry (t, i) estimates p_T(t|i)/p_T(t).

    empirical_Z divides e^score by the per-image empirical mean of e^score
    over the provided text set (logsumexp-stabilized, so a logit scale of
    100 cannot overflow). nu_eb returns nu * e^(a<v_t,v_i> + b). none
    returns the raw e^score.

    The construction is symmetric: passing images first and texts second
    yields the image-modality ratios p_I(i|t)/p_I(i), normalized per text
    over the supplied image sample.
    """
    if calibration is None:
        calibration = model.default_calibration
    if calibration not in CALIBRATIONS:
        raise ContractError(f"unknown calibration {calibration!r}")
    if texts.n == 0:
        raise ContractError("empirical_Z is undefined for an empty text set")
    s = score_matrix(texts, images, model)
    if calibration == "none":
        return np.exp(s)
    if calibration == "nu_eb":
        raw = model.logit_scale * (texts.rows @ images.rows.T)
        return model.nu * np.exp(raw + model.logit_bias)
    # empirical_Z: subtract per-column log mean-exp
    m = s.max(axis=0, keepdims=True)
    log_z = m + np.log(np.mean(np.exp(s - m), axis=0, keepdims=True))
    return np.exp(s - log_z)


def iwl_weight(u_image: np.ndarray, u_prompt: np.ndarray, a: float) -> float:
    """Unnormalized covariate-shift importance weight exp(a<u_image, u_prompt>).

    Valid when the test image distribution is approximated by the
    conditional distribution given the prompt; the prompt-side normalizer
    is constant across samples and dropped.
    """
    if a <= 0:
        raise ContractError(f"a must be positive, got {a}")
    u_image = np.asarray(u_image, dtype=np.float64)
    u_prompt = np.asarray(u_prompt, dtype=np.float64)
    if u_image.shape != u_prompt.shape:
        raise ContractError(
            f"dimension mismatch: {u_image.shape} vs {u_prompt.shape}"
        )
    return float(np.exp(a * (u_image @ u_prompt)))


def iwl_weights(images: EmbeddingMatrix, u_prompt: np.ndarray, a: float) -> np.ndarray:
    """Vectorized ``iwl_weight`` over all rows of ``images``."""
    if a <= 0:
        raise ContractError(f"a must be positive, got {a}")
    u_prompt = np.asarray(u_prompt, dtype=np.float64).reshape(-1)
    if images.d != u_prompt.shape[0]:
        raise ContractError(f"dimension mismatch: {images.d} vs {u_prompt.shape[0]}")
    return np.exp(a * (images.rows @ u_prompt))


# ---------------------------------------------------------------------------
# CSV with a one-line JSON parameter header ("# {...}")

def write_value_csv(path: str | Path, ids, values, header: dict) -> None:
    with Path(path).open("w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("id,value\n")
        for sid, val in zip(ids, values):
            fh.write(f"{sid},{repr(float(val))}\n")


def read_value_csv(path: str | Path) -> tuple[list[str], np.ndarray, dict]:
    """Inverse of write_value_csv; returns (ids, values, header)."""
    path = Path(path)
    header: dict = {}
    ids: list[str] = []
    values: list[float] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                try:
                    header = json.loads(line.lstrip("# "))
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno + 1}: bad header JSON") from exc
                continue
            if line == "id,value":
                continue
            sid, _, val = line.rpartition(",")
            if not sid:
                raise FormatError(f"{path}:{lineno + 1}: expected 'id,value'")
            try:
                values.append(float(val))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno + 1}: bad value {val!r}") from exc
            ids.append(sid)
    return ids, np.asarray(values, dtype=np.float64), header

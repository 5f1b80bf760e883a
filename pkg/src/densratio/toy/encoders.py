"""Lightweight two-tower encoders: three-layer MLPs with unit-norm outputs.

The image tower consumes raw image vectors, the text tower one-hot label
vectors of the same depth and width. Parameters are plain numpy arrays so
that the training module can hand-derive every gradient.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..embeddings import EmbeddingMatrix
from ..errors import ContractError, FormatError
from ..scoring import SIGMOID, SOFTMAX, ScoreModel

PARAMS_MAGIC = b"ENC1"

# ordered names of the tensors inside one tower
_TOWER_KEYS = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass
class EncoderParams:
    """All trainable state of the two towers plus the scoring scalars."""

    image: dict[str, np.ndarray]
    text: dict[str, np.ndarray]
    log_scale: float
    logit_bias: float
    objective: str
    nu: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def embed_dim(self) -> int:
        return self.image["w3"].shape[1]

    @property
    def logit_scale(self) -> float:
        return float(np.exp(self.log_scale))

    def score_model(self) -> ScoreModel:
        return ScoreModel(
            logit_scale=self.logit_scale,
            logit_bias=self.logit_bias if self.objective == SIGMOID else 0.0,
            flavor=self.objective,
            nu=self.nu,
        )

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [("image." + k, self.image[k]) for k in _TOWER_KEYS]
        out += [("text." + k, self.text[k]) for k in _TOWER_KEYS]
        return out


def init_params(d: int, K: int, hidden: int, embed_dim: int, objective: str,
                seed: int, init_logit_scale: float = 10.0,
                init_logit_bias: float | None = None) -> EncoderParams:
    """Gaussian fan-in initialization; biases start at zero."""
    if objective not in (SOFTMAX, SIGMOID):
        raise ContractError(f"unknown objective {objective!r}")
    rng = np.random.default_rng(seed)

    def tower(fan_in: int) -> dict[str, np.ndarray]:
        dims = [(fan_in, hidden), (hidden, hidden), (hidden, embed_dim)]
        t = {}
        for idx, (a, b) in enumerate(dims, start=1):
            t[f"w{idx}"] = rng.standard_normal((a, b)) / np.sqrt(a)
            t[f"b{idx}"] = np.zeros(b)
        return t

    if init_logit_bias is None:
        init_logit_bias = 0.0
    return EncoderParams(
        image=tower(d), text=tower(K),
        log_scale=float(np.log(init_logit_scale)),
        logit_bias=float(init_logit_bias),
        objective=objective,
        meta={"d": d, "K": K, "hidden": hidden, "embed_dim": embed_dim},
    )


def tower_forward(tower: dict[str, np.ndarray], x: np.ndarray,
                  want_cache: bool = False):
    """tanh-tanh-linear forward pass ending in row normalization.

    Returns unit-norm embeddings; with ``want_cache`` also the
    intermediates needed by the backward pass.
    """
    h1 = np.tanh(x @ tower["w1"] + tower["b1"])
    h2 = np.tanh(h1 @ tower["w2"] + tower["b2"])
    z = h2 @ tower["w3"] + tower["b3"]
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    e = z / norm
    if want_cache:
        return e, (x, h1, h2, z, norm)
    return e


def tower_backward(tower: dict[str, np.ndarray], cache, de: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of all six tower tensors given dLoss/dEmbedding."""
    x, h1, h2, z, norm = cache
    e = z / norm
    dz = (de - e * np.sum(de * e, axis=1, keepdims=True)) / norm
    grads = {}
    grads["w3"] = h2.T @ dz
    grads["b3"] = dz.sum(axis=0)
    dh2 = dz @ tower["w3"].T
    da2 = dh2 * (1.0 - h2 * h2)
    grads["w2"] = h1.T @ da2
    grads["b2"] = da2.sum(axis=0)
    dh1 = da2 @ tower["w2"].T
    da1 = dh1 * (1.0 - h1 * h1)
    grads["w1"] = x.T @ da1
    grads["b1"] = da1.sum(axis=0)
    return grads


def one_hot(labels: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((len(labels), K))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def embed_images(params: EncoderParams, images: np.ndarray) -> np.ndarray:
    return tower_forward(params.image, np.atleast_2d(images))


def embed_texts(params: EncoderParams, labels: np.ndarray) -> np.ndarray:
    K = params.text["w1"].shape[0]
    return tower_forward(params.text, one_hot(np.asarray(labels, dtype=np.int64), K))


def label_matrix(params: EncoderParams) -> EmbeddingMatrix:
    """Embeddings of all K labels as a text-modality matrix."""
    K = params.text["w1"].shape[0]
    rows = embed_texts(params, np.arange(K))
    return EmbeddingMatrix(ids=tuple(str(j) for j in range(K)), rows=rows,
                           modality="text", normalized=True)


def image_matrix(params: EncoderParams, images: np.ndarray,
                 ids=None) -> EmbeddingMatrix:
    rows = embed_images(params, images)
    if ids is None:
        ids = tuple(str(k) for k in range(rows.shape[0]))
    return EmbeddingMatrix(ids=ids, rows=rows, modality="image", normalized=True)


# ---------------------------------------------------------------------------
# binary container: magic | u64 header length | JSON header | float64 blobs

def save_params(params: EncoderParams, path: str | Path) -> None:
    tensors = params.tensors()
    header = {
        "objective": params.objective,
        "log_scale": params.log_scale,
        "logit_bias": params.logit_bias,
        "nu": params.nu,
        "meta": params.meta,
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_params(path: str | Path) -> EncoderParams:
    raw = Path(path).read_bytes()
    if raw[:4] != PARAMS_MAGIC:
        raise FormatError(f"{path}: not an encoder parameter file")
    (hlen,) = struct.unpack_from("<Q", raw, 4)
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: malformed parameter header") from exc
    offset = 12 + hlen
    image: dict[str, np.ndarray] = {}
    text: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += count * 8
        tower, key = spec["name"].split(".")
        (image if tower == "image" else text)[key] = arr
    return EncoderParams(
        image=image, text=text,
        log_scale=float(header["log_scale"]),
        logit_bias=float(header["logit_bias"]),
        objective=header["objective"],
        nu=int(header.get("nu", 1)),
        meta=header.get("meta", {}),
    )

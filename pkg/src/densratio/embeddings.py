"""Embedding matrices: loading, validation, persistence and slicing.

All numeric work downstream runs on 64-bit floats even though the EMB1 binary
format stores 32-bit payloads; the widening happens once at load time.
Matrices are immutable after construction and safe to share across workers.

EMB1 layout: magic ``EMB1`` | u32 LE n | u32 LE d | u8 modality (0=image,
1=text) | n*d little-endian float32 row-major | u64 LE trailer length |
UTF-8 JSON trailer ``{"ids": [...]}``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DataError, FormatError

MAGIC = b"EMB1"
_MODALITY_CODE = {"image": 0, "text": 1}
_CODE_MODALITY = {v: k for k, v in _MODALITY_CODE.items()}

UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class EmbeddingMatrix:
    """n x d embedding rows with stable per-row sample IDs.

    ``normalized`` asserts every row sits on the unit sphere (within 1e-6);
    it is a promise checked at construction, not a request to normalize.
    """

    ids: tuple[str, ...]
    rows: np.ndarray
    modality: str
    normalized: bool = False

    def __post_init__(self):
        rows = np.ascontiguousarray(np.asarray(self.rows, dtype=np.float64))
        if rows.ndim != 2:
            raise ContractError(f"rows must be 2-D, got shape {rows.shape}")
        if rows.shape[0] < 1:
            raise ContractError("empty matrix: n must be >= 1")
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        if len(self.ids) != rows.shape[0]:
            raise ContractError(
                f"{len(self.ids)} ids for {rows.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ContractError("sample ids must be unique")
        if self.modality not in _MODALITY_CODE:
            raise ContractError(f"unknown modality {self.modality!r}")
        bad = ~np.isfinite(rows)
        if bad.any():
            row = int(np.argwhere(bad)[0, 0])
            raise DataError(f"non-finite entry in row {self.ids[row]!r}")
        if self.normalized:
            norms = np.linalg.norm(rows, axis=1)
            off = np.abs(norms - 1.0)
            if off.max() > UNIT_NORM_TOL:
                row = int(np.argmax(off))
                raise ContractError(
                    f"normalized=True but row {self.ids[row]!r} has norm "
                    f"{norms[row]:.9f}"
                )
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def select(self, ids: Sequence[str]) -> "EmbeddingMatrix":
        """Row subset in exactly the order of ``ids``."""
        index = {sid: k for k, sid in enumerate(self.ids)}
        missing = [sid for sid in ids if sid not in index]
        if missing:
            raise ContractError(f"unknown ids in selection: {missing[:5]}")
        take = [index[sid] for sid in ids]
        return EmbeddingMatrix(
            ids=tuple(ids), rows=self.rows[take], modality=self.modality,
            normalized=self.normalized,
        )

    def fingerprint(self) -> str:
        """Short content hash used to stamp derived metric vectors."""
        h = hashlib.sha256()
        h.update(f"{self.n}:{self.d}:{self.modality}".encode())
        h.update(self.rows.tobytes())
        h.update("\x00".join(self.ids).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class PairedCorpus:
    """Aligned image-text pairs; ``pairing[k]`` is the text row paired with
    image row k (identity by default)."""

    images: EmbeddingMatrix
    texts: EmbeddingMatrix
    pairing: np.ndarray = None
    captions: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.images.n != self.texts.n:
            raise ContractError(
                f"pair count mismatch: {self.images.n} images vs "
                f"{self.texts.n} texts"
            )
        if self.images.d != self.texts.d:
            raise ContractError("images and texts must share one dimension")
        pairing = self.pairing
        if pairing is None:
            pairing = np.arange(self.images.n)
        pairing = np.asarray(pairing, dtype=np.int64)
        if sorted(pairing.tolist()) != list(range(self.images.n)):
            raise ContractError("pairing must be a bijection on 0..n-1")
        pairing.setflags(write=False)
        object.__setattr__(self, "pairing", pairing)
        if self.captions is not None:
            object.__setattr__(self, "captions", tuple(self.captions))
            if len(self.captions) != self.texts.n:
                raise ContractError("captions must align with texts")

    @property
    def n(self) -> int:
        return self.images.n

    @property
    def pair_ids(self) -> tuple[str, ...]:
        """Canonical pair identifiers (the image-side ids)."""
        return self.images.ids

    def aligned_texts(self) -> EmbeddingMatrix:
        """Text matrix reordered so row k pairs with image row k."""
        return EmbeddingMatrix(
            ids=tuple(self.texts.ids[j] for j in self.pairing),
            rows=self.texts.rows[self.pairing],
            modality="text",
            normalized=self.texts.normalized,
        )


def normalize(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit Euclidean norm. IDs are preserved."""
    norms = np.linalg.norm(m.rows, axis=1)
    zero = norms == 0.0
    if zero.any():
        row = int(np.argmax(zero))
        raise DataError(f"zero-norm row {m.ids[row]!r} cannot be normalized")
    return EmbeddingMatrix(
        ids=m.ids, rows=m.rows / norms[:, None], modality=m.modality,
        normalized=True,
    )


def raw_norms(m: EmbeddingMatrix):
    """Per-row Euclidean norms as a metric vector (kind ``raw_norm``).

    Meant to run on pre-normalization embeddings, since normalizing
    destroys the norm signal.
    """
    from .divergence import MetricVector

    values = np.linalg.norm(m.rows, axis=1)
    return MetricVector(
        ids=m.ids, values=values, kind="raw_norm", modality=m.modality,
        params={"source": m.fingerprint()},
    )


# ---------------------------------------------------------------------------
# persistence

def save(m: EmbeddingMatrix, path: str | Path, fmt: str = "emb1") -> None:
    path = Path(path)
    if fmt == "emb1":
        _save_emb1(m, path)
    elif fmt == "csv":
        with path.open("w") as fh:
            for sid, row in zip(m.ids, m.rows):
                fh.write("id:" + sid + "," + ",".join(repr(float(x)) for x in row) + "\n")
    elif fmt == "jsonl":
        with path.open("w") as fh:
            for sid, row in zip(m.ids, m.rows):
                fh.write(json.dumps({"id": sid, "vec": [float(x) for x in row]}) + "\n")
    else:
        raise ContractError(f"unknown format {fmt!r}")


def load(path: str | Path, fmt: str = "emb1", modality: str = "image") -> EmbeddingMatrix:
    """Parse a file into a matrix with ``normalized=False``.

    CSV and JSONL do not carry a modality, so it must be supplied; EMB1
    ignores the argument and uses the stored tag. IDs default to the row
    index rendered as a decimal string when the format carries none.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no such file: {path}")
    if fmt == "emb1":
        return _load_emb1(path)
    if fmt == "csv":
        return _load_csv(path, modality)
    if fmt == "jsonl":
        return _load_jsonl(path, modality)
    raise ContractError(f"unknown format {fmt!r}")


def _save_emb1(m: EmbeddingMatrix, path: Path) -> None:
    trailer = json.dumps({"ids": list(m.ids)}, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", m.n, m.d))
        fh.write(struct.pack("<B", _MODALITY_CODE[m.modality]))
        fh.write(m.rows.astype("<f4").tobytes(order="C"))
        fh.write(struct.pack("<Q", len(trailer)))
        fh.write(trailer)


def _load_emb1(path: Path) -> EmbeddingMatrix:
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an EMB1 file")
    try:
        n, d = struct.unpack_from("<II", blob, 4)
        (mod_code,) = struct.unpack_from("<B", blob, 12)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if n == 0:
        raise FormatError(f"{path}: empty matrix")
    if mod_code not in _CODE_MODALITY:
        raise FormatError(f"{path}: unknown modality code {mod_code}")
    offset = 13
    need = n * d * 4
    payload = blob[offset:offset + need]
    if len(payload) != need:
        raise FormatError(f"{path}: truncated payload")
    rows = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)
    offset += need
    try:
        (tlen,) = struct.unpack_from("<Q", blob, offset)
    except struct.error as exc:
        raise FormatError(f"{path}: missing trailer") from exc
    trailer = blob[offset + 8:offset + 8 + tlen]
    if len(trailer) != tlen:
        raise FormatError(f"{path}: truncated trailer")
    try:
        ids = json.loads(trailer.decode("utf-8"))["ids"]
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: malformed trailer JSON") from exc
    if len(ids) != n:
        raise FormatError(f"{path}: trailer has {len(ids)} ids for n={n}")
    return EmbeddingMatrix(
        ids=tuple(ids), rows=rows, modality=_CODE_MODALITY[mod_code],
        normalized=False,
    )


def _load_csv(path: Path, modality: str) -> EmbeddingMatrix:
    ids, rows = [], []
    d = None
    with path.open() as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if fields[0].startswith("id:"):
                sid = fields[0][3:]
                fields = fields[1:]
            else:
                sid = str(len(rows))
            try:
                vec = [float(x) for x in fields]
            except ValueError as exc:
                raise FormatError(
                    f"{path}:{lineno + 1}: unparseable value in row {sid!r}"
                ) from exc
            if d is None:
                d = len(vec)
            elif len(vec) != d:
                raise FormatError(
                    f"{path}:{lineno + 1}: row {sid!r} has {len(vec)} values, "
                    f"expected {d}"
                )
            ids.append(sid)
            rows.append(vec)
    if not rows:
        raise FormatError(f"{path}: empty matrix")
    return EmbeddingMatrix(ids=tuple(ids), rows=np.array(rows), modality=modality)


def _load_jsonl(path: Path, modality: str) -> EmbeddingMatrix:
    ids, rows = [], []
    d = None
    with path.open() as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno + 1}: invalid JSON") from exc
            if not isinstance(rec, dict) or "vec" not in rec:
                raise FormatError(f"{path}:{lineno + 1}: record lacks a 'vec' field")
            sid = str(rec.get("id", len(rows)))
            vec = rec["vec"]
            if d is None:
                d = len(vec)
            elif len(vec) != d:
                raise FormatError(
                    f"{path}:{lineno + 1}: row {sid!r} has {len(vec)} values, "
                    f"expected {d}"
                )
            ids.append(sid)
            rows.append([float(x) for x in vec])
    if not rows:
        raise FormatError(f"{path}: empty matrix")
    return EmbeddingMatrix(ids=tuple(ids), rows=np.array(rows), modality=modality)

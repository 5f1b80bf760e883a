"""Metric-driven corpus filtering: keep the top fraction, compose filters.

The kept count is the ceiling of fraction*n so an advertised quota like
"top 25%" never rounds below it. Ordering is (value desc, id asc) under the
by_id tie rule, which makes manifests byte-reproducible across machines.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .divergence import MetricVector
from .embeddings import PairedCorpus
from .errors import ContractError


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    value: float
    rank: int  # 1-based position in the kept ordering


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def _corpus_ids(corpus) -> list[str]:
    if isinstance(corpus, PairedCorpus):
        return list(corpus.pair_ids)
    return [str(i) for i in corpus]


def _ordered_entries(metric: MetricVector, ids: list[str], tie_rule: str):
    values = {sid: float(v) for sid, v in zip(metric.ids, metric.values)}
    if tie_rule == "by_id":
        ordered = sorted(ids, key=lambda sid: (-values[sid], sid))
    elif tie_rule == "stable":
        keep_order = [sid for sid in metric.ids if sid in set(ids)]
        ordered = sorted(keep_order, key=lambda sid: -values[sid])
    else:
        raise ContractError(f"unknown tie rule {tie_rule!r}")
    return ordered, values


def rank_and_filter(corpus, metric: MetricVector, keep_fraction: float,
                    tie_rule: str = "by_id") -> Manifest:
    """Keep the ceil(keep_fraction * n) highest-valued samples.

    ``corpus`` is a PairedCorpus (pair ids are the image-side ids) or a
    plain sequence of ids. The metric must cover the corpus ids exactly.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ContractError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    ids = _corpus_ids(corpus)
    metric_ids = set(metric.ids)
    corpus_ids = set(ids)
    if metric_ids != corpus_ids:
        missing = sorted(corpus_ids - metric_ids)[:5]
        extra = sorted(metric_ids - corpus_ids)[:5]
        raise ContractError(
            f"metric/corpus id mismatch; missing from metric: {missing}, "
            f"unknown to corpus: {extra}"
        )
    ordered, values = _ordered_entries(metric, ids, tie_rule)
    keep = math.ceil(keep_fraction * len(ids))
    entries = tuple(
        ManifestEntry(id=sid, value=values[sid], rank=k + 1)
        for k, sid in enumerate(ordered[:keep])
    )
    return Manifest(entries=entries)


def threshold_filter(metric: MetricVector, min_value: float) -> Manifest:
    """Manifest of samples whose metric meets the threshold, ordered
    (value desc, id asc)."""
    picked = [(sid, float(v)) for sid, v in zip(metric.ids, metric.values)
              if v >= min_value]
    picked.sort(key=lambda t: (-t[1], t[0]))
    return Manifest(entries=tuple(
        ManifestEntry(id=sid, value=v, rank=k + 1)
        for k, (sid, v) in enumerate(picked)
    ))


def compose_filters(filters: list, mode: str) -> Manifest:
    """Combine filters.

    ``intersection`` takes static manifests and keeps ids present in all,
    ordered per the first manifest. ``sequential`` applies each step to the
    survivors of the previous one; a step is either a Manifest (keep exactly
    these ids) or a (MetricVector, keep_fraction) pair, which re-ranks the
    survivors and keeps the top fraction *of the survivors*.
    """
    if not filters:
        raise ContractError("need at least one filter")
    if mode == "intersection":
        manifests = list(filters)
        for man in manifests:
            if not isinstance(man, Manifest):
                raise ContractError("intersection mode needs static manifests")
        common = set(manifests[0].ids)
        for man in manifests[1:]:
            common &= set(man.ids)
        entries = tuple(
            ManifestEntry(id=e.id, value=e.value, rank=k + 1)
            for k, e in enumerate(e for e in manifests[0].entries if e.id in common)
        )
        result = Manifest(entries=entries)
    elif mode == "sequential":
        survivors: list[ManifestEntry] | None = None
        for step in filters:
            if isinstance(step, Manifest):
                if survivors is None:
                    survivors = list(step.entries)
                else:
                    alive = {e.id for e in survivors}
                    survivors = [e for e in step.entries if e.id in alive]
            else:
                metric, fraction = step
                pool = [e.id for e in survivors] if survivors is not None else list(metric.ids)
                sub = _subset_metric(metric, pool)
                survivors = list(rank_and_filter(pool, sub, fraction).entries)
        result = Manifest(entries=tuple(
            ManifestEntry(id=e.id, value=e.value, rank=k + 1)
            for k, e in enumerate(survivors)
        ))
    else:
        raise ContractError(f"unknown compose mode {mode!r}")
    if len(result) == 0:
        warnings.warn("composed filter kept no samples", stacklevel=2)
    return result


def _subset_metric(metric: MetricVector, ids: list[str]) -> MetricVector:
    lookup = {sid: float(v) for sid, v in zip(metric.ids, metric.values)}
    missing = [sid for sid in ids if sid not in lookup]
    if missing:
        raise ContractError(f"metric does not cover ids {missing[:5]}")
    return MetricVector(
        ids=tuple(ids), values=np.array([lookup[sid] for sid in ids]),
        kind=metric.kind, modality=metric.modality, params=metric.params,
    )


# ---------------------------------------------------------------------------
# persistence

def write_manifest_jsonl(manifest: Manifest, path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for e in manifest.entries:
            fh.write(json.dumps({"id": e.id, "value": e.value, "rank": e.rank}) + "\n")


def write_id_list(manifest: Manifest, path: str | Path) -> None:
    Path(path).write_text("".join(e.id + "\n" for e in manifest.entries))


def read_manifest_jsonl(path: str | Path) -> Manifest:
    entries = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            entries.append(ManifestEntry(id=str(rec["id"]),
                                         value=float(rec.get("value", 0.0)),
                                         rank=int(rec.get("rank", len(entries) + 1))))
    return Manifest(entries=tuple(entries))

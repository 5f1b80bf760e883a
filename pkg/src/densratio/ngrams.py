"""Caption diversity analysis: decile grouping and n-gram coverage curves.

A coverage curve answers "what share of all n-gram occurrences in a caption
group do the K most frequent n-grams account for". Flat curves mean
repetitive text; if a group's curve sits lower, its captions are more
diverse.
"""
from __future__ import annotations

import json
import string
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .divergence import MetricVector
from .errors import ContractError, FormatError

_PUNCT_TO_SPACE = str.maketrans({c: " " for c in string.punctuation})


@dataclass(frozen=True)
class Caption:
    id: str
    text: str
    image_id: str | None = None


@dataclass
class NGramTable:
    """Occurrence counts of one gram order within one decile group."""

    n: int
    group: int
    counts: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def add_caption(self, tokens: list[str]) -> None:
        for k in range(len(tokens) - self.n + 1):
            self.counts[tuple(tokens[k:k + self.n])] += 1


def tokenize(caption: str) -> list[str]:
    """Lowercase, punctuation to spaces, whitespace split, empties dropped."""
    return caption.lower().translate(_PUNCT_TO_SPACE).split()


def decile_groups(metric: MetricVector, captions: list[Caption],
                  group_by: str = "own_metric") -> list[list[Caption]]:
    """Split captions into 10 groups by metric decile.

    ``own_metric`` deciles the captions by their own values;
    ``paired_image_metric`` deciles the distinct paired images and lets each
    caption inherit its image's group (the several-captions-per-image case).
    Boundary ties are resolved by (value, id) order, so the split is
    deterministic and group sizes differ by at most one.
    """
    lookup = {sid: float(v) for sid, v in zip(metric.ids, metric.values)}
    if group_by == "own_metric":
        keys = [c.id for c in captions]
    elif group_by == "paired_image_metric":
        if any(c.image_id is None for c in captions):
            raise ContractError("paired_image_metric needs image_id on every caption")
        keys = sorted({c.image_id for c in captions})
    else:
        raise ContractError(f"unknown group_by {group_by!r}")
    missing = [k for k in keys if k not in lookup]
    if missing:
        raise ContractError(f"metric does not cover ids {missing[:5]}")
    if len(keys) < 10:
        raise ContractError(f"need at least 10 samples to form deciles, got {len(keys)}")

    ranked = sorted(keys, key=lambda k: (lookup[k], k))
    m = len(ranked)
    decile_of: dict[str, int] = {}
    for g in range(10):
        for k in ranked[(g * m) // 10:((g + 1) * m) // 10]:
            decile_of[k] = g

    groups: list[list[Caption]] = [[] for _ in range(10)]
    for c in captions:
        key = c.id if group_by == "own_metric" else c.image_id
        groups[decile_of[key]].append(c)
    return groups


def count_ngrams(captions: list[Caption], n: int, group: int = 0) -> NGramTable:
    table = NGramTable(n=n, group=group)
    for c in captions:
        table.add_caption(tokenize(c.text))
    return table


def coverage_curve(captions: list[Caption], n: int,
                   k_max: int) -> list[tuple[int, float]]:
    """Points (K, cumulative top-K probability) for K = 1..k_max.

    Grams are ranked by count descending with lexicographic tie order. The
    curve is nondecreasing and reaches exactly 1.0 once K covers every
    distinct gram. Captions too short to produce any n-gram of the
    requested order yield an empty curve with a warning.
    """
    if not captions:
        raise ContractError("coverage_curve needs a nonempty caption group")
    table = count_ngrams(captions, n)
    total = table.total
    if total == 0:
        warnings.warn(f"no {n}-grams in group (captions shorter than n)",
                      stacklevel=2)
        return []
    ranked = sorted(table.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    curve = []
    running = 0
    for k in range(1, k_max + 1):
        if k - 1 < len(ranked):
            running += ranked[k - 1][1]
        curve.append((k, running / total))
    return curve


# ---------------------------------------------------------------------------
# I/O: captions as JSONL {"id", "text"[, "image_id"]}, curves as CSV

def read_captions_jsonl(path: str | Path) -> list[Caption]:
    captions = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno + 1}: invalid JSON") from exc
            if "id" not in rec or "text" not in rec:
                raise FormatError(f"{path}:{lineno + 1}: need 'id' and 'text' fields")
            captions.append(Caption(id=str(rec["id"]), text=str(rec["text"]),
                                    image_id=(str(rec["image_id"])
                                              if "image_id" in rec else None)))
    return captions


def write_curves_csv(path: str | Path,
                     curves: dict[tuple[int, int], list[tuple[int, float]]]) -> None:
    """``curves`` maps (group, n) to a coverage curve."""
    with Path(path).open("w") as fh:
        fh.write("group,n,K,coverage\n")
        for (group, n) in sorted(curves):
            for k, cov in curves[(group, n)]:
                fh.write(f"{group},{n},{k},{repr(float(cov))}\n")

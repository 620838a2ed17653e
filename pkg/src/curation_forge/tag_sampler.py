"""Tag-quota content pre-sampling.

Shrinks a large catalog while covering its tag vocabulary: every image
holding a tag rarer than the quota is taken outright, then the remaining
tags are topped up to the quota in order of increasing source frequency,
preferring candidates with higher machine-tag confidence. A bisection
over the quota finds the smallest one that naturally yields a requested
sample size.

Deterministic by construction: equal tag frequencies order
lexicographically, equal confidences fall back to catalog order, and
selection stops the moment the target size is reached (partial quota
fills for the in-progress tag are kept).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .catalog import ImageRecord
from .errors import CurationError


@dataclass
class TagPlan:
    quota: int
    target_size: int
    selected_ids: list[str]
    tag_counts_source: dict[str, int]
    tag_counts_selected: dict[str, int]
    untagged_count: int = 0

    def to_json_dict(self) -> dict:
        return {
            "quota": self.quota,
            "target_size": self.target_size,
            "selected_ids": self.selected_ids,
            "tag_counts_source": self.tag_counts_source,
            "tag_counts_selected": self.tag_counts_selected,
            "untagged_count": self.untagged_count,
        }


class _Prepared:
    """Catalog view indexed for the greedy pass."""

    def __init__(self, catalog: Sequence[ImageRecord]):
        self.ids: list[str] = []
        self.tags_of: list[list[str]] = []
        self.untagged = 0
        by_tag: dict[str, list[tuple[float, int]]] = {}
        for idx, rec in enumerate(catalog):
            self.ids.append(rec.id)
            tags = [t for t, _ in rec.tags]
            self.tags_of.append(tags)
            if not tags:
                self.untagged += 1
            for tag, conf in rec.tags:
                by_tag.setdefault(tag, []).append((conf, idx))
        self.counts = {tag: len(entries) for tag, entries in by_tag.items()}
        # candidate order per tag: decreasing confidence, then catalog order
        self.candidates = {
            tag: [idx for _, idx in sorted(entries, key=lambda e: (-e[0], e[1]))]
            for tag, entries in by_tag.items()
        }


def _greedy_select(prep: _Prepared, quota: int, stop_at: int | None) -> tuple[list[int], dict[str, int]]:
    selected: list[int] = []
    in_sel = [False] * len(prep.ids)
    sel_counts: dict[str, int] = {tag: 0 for tag in prep.counts}

    def add(idx: int) -> bool:
        selected.append(idx)
        in_sel[idx] = True
        for tag in prep.tags_of[idx]:
            sel_counts[tag] += 1
        return stop_at is not None and len(selected) >= stop_at

    # rare tags first: every image holding one goes in wholesale
    rare = {tag for tag, c in prep.counts.items() if c < quota}
    for idx, tags in enumerate(prep.tags_of):
        if not in_sel[idx] and any(t in rare for t in tags):
            if add(idx):
                return selected, sel_counts

    # top the remaining tags up to the quota, least frequent first
    remaining = sorted(
        (tag for tag, c in prep.counts.items() if c >= quota),
        key=lambda t: (prep.counts[t], t),
    )
    for tag in remaining:
        if sel_counts[tag] >= quota:
            continue
        for idx in prep.candidates[tag]:
            if sel_counts[tag] >= quota:
                break
            if in_sel[idx]:
                continue
            if add(idx):
                return selected, sel_counts
    return selected, sel_counts


def sample_by_tags(
    catalog: Sequence[ImageRecord],
    quota: int,
    target_size: int,
    _prepared: _Prepared | None = None,
) -> TagPlan:
    """Run the quota heuristic, stopping once ``target_size`` images are in."""
    catalog = list(catalog) if _prepared is None else catalog
    if quota < 1:
        raise ValueError("quota must be a positive integer")
    prep = _prepared if _prepared is not None else _Prepared(catalog)
    if target_size > len(prep.ids):
        raise ValueError(f"target_size {target_size} exceeds catalog size {len(prep.ids)}")
    selected, sel_counts = _greedy_select(prep, quota, stop_at=target_size)
    return TagPlan(
        quota=quota,
        target_size=target_size,
        selected_ids=[prep.ids[i] for i in selected],
        tag_counts_source=dict(prep.counts),
        tag_counts_selected={t: c for t, c in sel_counts.items() if c > 0},
        untagged_count=prep.untagged,
    )


def natural_selection_size(catalog: Sequence[ImageRecord], quota: int, _prepared: _Prepared | None = None) -> int:
    """Size the heuristic reaches when allowed to satisfy every quota."""
    prep = _prepared if _prepared is not None else _Prepared(list(catalog))
    selected, _ = _greedy_select(prep, quota, stop_at=None)
    return len(selected)


def find_quota(catalog: Sequence[ImageRecord], target_size: int) -> int:
    """Smallest quota whose natural selection reaches ``target_size``.

    Bisection on [1, max tag count]; the bracket collapses to a single
    integer, resolving ties toward the smaller quota.
    """
    catalog = list(catalog)
    prep = _Prepared(catalog)
    if target_size > len(prep.ids):
        raise ValueError(f"target_size {target_size} exceeds catalog size {len(prep.ids)}")
    if not prep.counts:
        raise CurationError("catalog has no tags; quota sampling cannot reach any target")
    lo, hi = 1, max(prep.counts.values())
    if natural_selection_size(catalog, hi, _prepared=prep) < target_size:
        raise CurationError(
            f"even quota {hi} selects fewer than {target_size} images "
            f"({prep.untagged} untagged images can never be selected)"
        )
    while lo < hi:
        mid = (lo + hi) // 2
        if natural_selection_size(catalog, mid, _prepared=prep) >= target_size:
            hi = mid
        else:
            lo = mid + 1
    return lo

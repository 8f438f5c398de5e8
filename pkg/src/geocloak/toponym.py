"""Tag toponym detection by geographic concentration.

A tag counts as place-related when most of its occurrences fall inside a
single 1-degree grid cell of the background collection. Classification
never looks at the target images, only at background tag statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .geo import GeoPoint, GridCell, to_cell

TOPONYM = "toponym"
NOT_TOPONYM = "not-toponym"
INSUFFICIENT = "insufficient"

DEFAULT_CELL_SIZE_DEG = 1.0
DEFAULT_MIN_TOTAL = 5
DEFAULT_CONCENTRATION = 0.5


def normalize_tag(tag: str) -> str:
    return tag.strip().lower()


@dataclass
class TagStats:
    """Occurrence counts of one normalized tag across the background."""

    tag: str
    total: int = 0
    cell_counts: dict[GridCell, int] = field(default_factory=dict)

    @property
    def concentration(self) -> float:
        if self.total == 0:
            return 0.0
        return max(self.cell_counts.values()) / self.total


def collect_tag_stats(
    records: Iterable[tuple[Sequence[str], GeoPoint]],
    cell_size: float = DEFAULT_CELL_SIZE_DEG,
) -> dict[str, TagStats]:
    """Accumulate per-tag cell counts over (tags, location) records."""
    stats: dict[str, TagStats] = {}
    for tags, point in records:
        cell = to_cell(point, cell_size)
        for raw in tags:
            tag = normalize_tag(raw)
            if not tag:
                continue
            entry = stats.setdefault(tag, TagStats(tag))
            entry.total += 1
            entry.cell_counts[cell] = entry.cell_counts.get(cell, 0) + 1
    return stats


def classify_tag(
    stats: TagStats,
    min_total: int = DEFAULT_MIN_TOTAL,
    threshold: float = DEFAULT_CONCENTRATION,
) -> str:
    """Toponym iff frequent enough and concentrated in one cell (inclusive)."""
    if stats.total < min_total:
        return INSUFFICIENT
    return TOPONYM if stats.concentration >= threshold else NOT_TOPONYM


def classify_all(
    stats: dict[str, TagStats],
    min_total: int = DEFAULT_MIN_TOTAL,
    threshold: float = DEFAULT_CONCENTRATION,
) -> dict[str, str]:
    return {tag: classify_tag(s, min_total, threshold) for tag, s in stats.items()}


def split_targets(
    targets: Iterable[tuple[str, Sequence[str]]],
    classification: dict[str, str],
) -> tuple[list[str], list[str]]:
    """Partition target ids into (toponym-tagged, toponym-tagless)."""
    tagged: list[str] = []
    tagless: list[str] = []
    for target_id, tags in targets:
        if any(classification.get(normalize_tag(t)) == TOPONYM for t in tags):
            tagged.append(target_id)
        else:
            tagless.append(target_id)
    return tagged, tagless

"""Size sensitivity of a detector: Pearson correlation between per-category
mean box area and per-category mean detection score.

A value of |r| near zero means detection confidence barely tracks object
size. Scores may come from all detections or from matched true positives;
the statistic does not care, so that choice is left to whoever writes the
records.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence


class DegenerateInputError(ValueError):
    """Raised when a correlation is undefined (too few categories or zero spread)."""


@dataclass(frozen=True)
class DetectionRecord:
    category: str
    score: float
    box_area: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if not self.box_area > 0:
            raise ValueError(f"box area must be positive, got {self.box_area}")


@dataclass(frozen=True)
class CategoryStat:
    category: str
    mean_area: float
    mean_score: float
    count: int


def aggregate(records: Iterable[DetectionRecord]) -> list[CategoryStat]:
    """One stat per category, in order of first appearance."""
    sums: dict[str, list] = {}
    for rec in records:
        acc = sums.setdefault(rec.category, [0.0, 0.0, 0])
        acc[0] += rec.box_area
        acc[1] += rec.score
        acc[2] += 1
    if not sums:
        raise DegenerateInputError("no detection records to aggregate")
    return [CategoryStat(cat, a / n, s / n, n) for cat, (a, s, n) in sums.items()]


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    k = len(xs)
    if k != len(ys):
        raise ValueError(f"series lengths differ: {k} vs {len(ys)}")
    if k < 2:
        raise DegenerateInputError(f"need at least two categories, got {k}")
    mx = math.fsum(xs) / k
    my = math.fsum(ys) / k
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    cov = math.fsum(a * b for a, b in zip(dx, dy)) / (k - 1)
    sx = math.sqrt(math.fsum(a * a for a in dx) / (k - 1))
    sy = math.sqrt(math.fsum(b * b for b in dy) / (k - 1))
    if sx == 0 or sy == 0:
        raise DegenerateInputError("correlation undefined: one series has zero variance")
    r = cov / (sx * sy)
    return max(-1.0, min(1.0, r))


def pcc(stats: Sequence[CategoryStat]) -> float:
    return pearson([s.mean_area for s in stats], [s.mean_score for s in stats])


def read_records(path) -> list[DetectionRecord]:
    """Load ``category,score,area`` CSV rows."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["category", "score", "area"]:
            raise ValueError(f"{path}: header must be 'category,score,area', got {reader.fieldnames}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(DetectionRecord(row["category"], float(row["score"]), float(row["area"])))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_records(path, records: Iterable[DetectionRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["category", "score", "area"])
        for r in records:
            writer.writerow([r.category, repr(r.score), repr(r.box_area)])

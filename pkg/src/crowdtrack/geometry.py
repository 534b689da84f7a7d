"""Exact pixel-grid geometry: box algebra, RLE mask algebra, local density.

Boxes are half-open on their max edges: pixel (x, y) is inside iff
x_min <= x < x_max and y_min <= y < y_max.  Masks are run-length encoded
over row-major linear pixel indices; runs are kept canonical (sorted,
non-overlapping, non-adjacent).  All arithmetic stays in exact integers
until a final ratio division, so results are identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class BBox:
    """Axis-aligned integer pixel box, half-open on the max edges."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box {self!r}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height


def bbox_intersection_area(a: BBox, b: BBox) -> int:
    """Pixel count of the overlap of two boxes (0 when disjoint)."""
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0
    return w * h


def bbox_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when both are empty."""
    inter = bbox_intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


def compute_density(i: int, boxes: Sequence[BBox]) -> float:
    """Accumulated overlap of boxes[i] with every other box.

    Sum over j != i of |boxes[i] n boxes[j]| / |boxes[i]|.  Not normalized
    to [0, 1]: a box buried under several neighbours accumulates each
    overlap.  Raises ValueError when the reference box has zero area.
    """
    ref = boxes[i]
    if ref.area == 0:
        raise ValueError("density reference box has zero area")
    total = 0
    for j, b in enumerate(boxes):
        if j != i:
            total += bbox_intersection_area(ref, b)
    return total / ref.area


def density_against(box: BBox, boxes: Iterable[BBox]) -> float:
    """Accumulated overlap of ``box`` with every box in ``boxes``.

    Same ratio sum as :func:`compute_density` but without an index to
    exclude; used when the reference box is not itself a detection.
    """
    if box.area == 0:
        raise ValueError("density reference box has zero area")
    total = sum(bbox_intersection_area(box, b) for b in boxes)
    return total / box.area


def _canonical_runs(runs: Iterable[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
    """Sort, drop empties, and coalesce overlapping or adjacent runs."""
    ordered = sorted((s, n) for s, n in runs if n > 0)
    merged: list[list[int]] = []
    for s, n in ordered:
        if merged and s <= merged[-1][0] + merged[-1][1]:
            last = merged[-1]
            last[1] = max(last[1], s + n - last[0])
        else:
            merged.append([s, n])
    return tuple((s, n) for s, n in merged)


@dataclass(frozen=True)
class Mask:
    """Run-length-encoded binary mask on a width x height pixel grid.

    ``runs`` are (start, length) pairs over row-major linear indices,
    canonical at construction time.  Use :meth:`from_runs` for inputs
    that may be unsorted or mergeable.
    """

    width: int
    height: int
    runs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("mask grid dimensions must be positive")
        limit = self.width * self.height
        prev_end = -1
        for s, n in self.runs:
            if n <= 0:
                raise ValueError(f"non-positive run length at {s}")
            if s <= prev_end:
                raise ValueError(f"run at {s} overlaps or touches previous run")
            if s < 0 or s + n > limit:
                raise ValueError(f"run ({s}, {n}) outside grid of {limit} pixels")
            prev_end = s + n

    @classmethod
    def from_runs(cls, width: int, height: int, runs: Iterable[tuple[int, int]]) -> "Mask":
        return cls(width, height, _canonical_runs(runs))

    @classmethod
    def from_rows(cls, width: int, height: int,
                  rows: Iterable[tuple[int, int, int]]) -> "Mask":
        """Build from (y, x_start, x_end) half-open row spans, clipped to grid."""
        runs = []
        for y, x0, x1 in rows:
            if y < 0 or y >= height:
                continue
            x0 = max(x0, 0)
            x1 = min(x1, width)
            if x1 > x0:
                runs.append((y * width + x0, x1 - x0))
        return cls.from_runs(width, height, runs)

    @property
    def popcount(self) -> int:
        return sum(n for _, n in self.runs)

    @property
    def is_empty(self) -> bool:
        return not self.runs

    def same_grid(self, other: "Mask") -> bool:
        return self.width == other.width and self.height == other.height


def _require_same_grid(a: Mask, b: Mask) -> None:
    if not a.same_grid(b):
        raise ValueError(
            f"mask grids differ: {a.width}x{a.height} vs {b.width}x{b.height}")


def mask_intersection_size(a: Mask, b: Mask) -> int:
    """Pixel count of the overlap of two masks, straight off the runs."""
    _require_same_grid(a, b)
    ra, rb = a.runs, b.runs
    i = j = total = 0
    while i < len(ra) and j < len(rb):
        s1, n1 = ra[i]
        s2, n2 = rb[j]
        e1, e2 = s1 + n1, s2 + n2
        lo, hi = max(s1, s2), min(e1, e2)
        if hi > lo:
            total += hi - lo
        if e1 <= e2:
            i += 1
        else:
            j += 1
    return total


def mask_union(a: Mask, b: Mask) -> Mask:
    """Union of two masks as a new canonical mask."""
    _require_same_grid(a, b)
    if a.is_empty:
        return b
    if b.is_empty:
        return a
    return Mask.from_runs(a.width, a.height, a.runs + b.runs)


def mask_iou(m1: Mask, m2: Mask) -> float:
    """Mask intersection over union; two empty masks give 0.0."""
    _require_same_grid(m1, m2)
    inter = mask_intersection_size(m1, m2)
    union = m1.popcount + m2.popcount - inter
    if union == 0:
        return 0.0
    return inter / union


def mask_enclosing_bbox(m: Mask) -> BBox:
    """Tightest box containing every foreground pixel of a nonempty mask."""
    if m.is_empty:
        raise ValueError("enclosing box of an empty mask is undefined")
    w = m.width
    first_start = m.runs[0][0]
    last_s, last_n = m.runs[-1]
    y_min = first_start // w
    y_max = (last_s + last_n - 1) // w + 1
    x_min, x_max = w, 0
    for s, n in m.runs:
        end = s + n - 1
        if s // w != end // w:
            # run wraps at least one row boundary, so it spans full width
            x_min, x_max = 0, w
            break
        x_min = min(x_min, s % w)
        x_max = max(x_max, end % w + 1)
    return BBox(x_min, y_min, x_max, y_max)


def mask_to_text(m: Mask) -> str:
    """Serialize as ``w h n s1 l1 ... sn ln`` (space-separated decimals)."""
    parts = [str(m.width), str(m.height), str(len(m.runs))]
    for s, n in m.runs:
        parts.append(str(s))
        parts.append(str(n))
    return " ".join(parts)


def mask_from_text(text: str) -> Mask:
    """Parse the :func:`mask_to_text` format back into a mask."""
    fields = text.split()
    if len(fields) < 3:
        raise ValueError("mask text needs at least 'w h n'")
    try:
        values = [int(f) for f in fields]
    except ValueError as exc:
        raise ValueError(f"non-integer field in mask text: {exc}") from None
    w, h, n = values[0], values[1], values[2]
    if len(values) != 3 + 2 * n:
        raise ValueError(f"expected {2 * n} run fields, got {len(values) - 3}")
    runs = [(values[3 + 2 * k], values[4 + 2 * k]) for k in range(n)]
    return Mask(w, h, tuple(runs))

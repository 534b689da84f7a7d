"""MOT evaluation: identity F1, identity switches, and HOTA.

All three metrics compare trajectory sets (id -> per-frame boxes) under
box IoU.  Identity F1 solves one global id-to-id assignment over the
whole sequence; identity switches count frame-to-frame changes of a
ground-truth identity's matched prediction; HOTA combines detection and
association accuracy, averaged over localization thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .association import CostMatrix, hungarian
from .geometry import BBox, bbox_iou

ALPHA_GRID = tuple(k / 20 for k in range(1, 20))
_EPS = 1e-12


class TrajectorySet:
    """Per-id, frame-sorted boxes; at most one box per (id, frame)."""

    def __init__(self) -> None:
        self._data: dict[int, dict[int, BBox]] = {}

    def add(self, frame: int, ident: int, box: BBox) -> None:
        by_frame = self._data.setdefault(ident, {})
        if frame in by_frame:
            raise ValueError(f"duplicate entry for frame {frame}, id {ident}")
        by_frame[frame] = box

    def ids(self) -> list[int]:
        return sorted(self._data)

    def trajectory(self, ident: int) -> list[tuple[int, BBox]]:
        return sorted(self._data.get(ident, {}).items())

    def frames(self) -> list[int]:
        seen: set[int] = set()
        for by_frame in self._data.values():
            seen.update(by_frame)
        return sorted(seen)

    def at(self, frame: int) -> list[tuple[int, BBox]]:
        out = [(ident, by_frame[frame])
               for ident, by_frame in self._data.items() if frame in by_frame]
        out.sort(key=lambda item: item[0])
        return out

    def total_boxes(self) -> int:
        return sum(len(v) for v in self._data.values())

    @property
    def is_empty(self) -> bool:
        return not self._data

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrajectorySet):
            return NotImplemented
        return self._data == other._data


def _co_location_counts(gt: TrajectorySet, pred: TrajectorySet,
                        iou_gate: float) -> dict[tuple[int, int], int]:
    """Frames in which a (gt id, pred id) pair overlaps at or above the gate."""
    counts: dict[tuple[int, int], int] = {}
    frames = sorted(set(gt.frames()) | set(pred.frames()))
    for frame in frames:
        for g, gbox in gt.at(frame):
            for p, pbox in pred.at(frame):
                if bbox_iou(gbox, pbox) >= iou_gate:
                    counts[(g, p)] = counts.get((g, p), 0) + 1
    return counts


def idf1(gt: TrajectorySet, pred: TrajectorySet, iou_gate: float = 0.5) -> float:
    """Identity F1 under the globally optimal id mapping.

    A frame-wise hit is IoU >= ``iou_gate``.  The mapping minimizes
    identity false positives plus false negatives; two empty sets score
    1.0 by convention so empty scenarios do not poison averages.
    """
    if gt.is_empty and pred.is_empty:
        return 1.0
    if gt.is_empty or pred.is_empty:
        return 0.0
    gt_ids, pred_ids = gt.ids(), pred.ids()
    len_g = {g: len(gt.trajectory(g)) for g in gt_ids}
    len_p = {p: len(pred.trajectory(p)) for p in pred_ids}
    counts = _co_location_counts(gt, pred, iou_gate)
    n_g, n_p = len(gt_ids), len(pred_ids)
    size = n_g + n_p
    big = 2.0 * (gt.total_boxes() + pred.total_boxes() + 1)
    cost = np.full((size, size), big)
    for i, g in enumerate(gt_ids):
        for j, p in enumerate(pred_ids):
            m = counts.get((g, p), 0)
            cost[i, j] = len_g[g] + len_p[p] - 2 * m
        cost[i, n_p + i] = len_g[g]          # g left unmapped: all its boxes are misses
    for j, p in enumerate(pred_ids):
        cost[n_g + j, j] = len_p[p]          # p left unmapped: all its boxes are false
    cost[n_g:, n_p:] = 0.0
    rows, cols = linear_sum_assignment(cost)
    idtp = 0
    for r, c in zip(rows, cols):
        if r < n_g and c < n_p:
            idtp += counts.get((gt_ids[r], pred_ids[c]), 0)
    return 2 * idtp / (gt.total_boxes() + pred.total_boxes())


def frame_matches(gt: TrajectorySet, pred: TrajectorySet,
                  iou_gate: float = 0.5) -> dict[int, dict[int, int]]:
    """Per-frame gt-id to pred-id matching (Hungarian on 1 - IoU, gated)."""
    out: dict[int, dict[int, int]] = {}
    frames = sorted(set(gt.frames()) | set(pred.frames()))
    for frame in frames:
        gt_here = gt.at(frame)
        pred_here = pred.at(frame)
        if not gt_here or not pred_here:
            out[frame] = {}
            continue
        costs = np.zeros((len(gt_here), len(pred_here)))
        forb = np.zeros_like(costs, dtype=bool)
        for i, (_, gbox) in enumerate(gt_here):
            for j, (_, pbox) in enumerate(pred_here):
                iou = bbox_iou(gbox, pbox)
                if iou < iou_gate:
                    forb[i, j] = True
                else:
                    costs[i, j] = 1.0 - iou
        pairs = hungarian(CostMatrix(costs, forb))
        out[frame] = {gt_here[i][0]: pred_here[j][0] for i, j in pairs}
    return out


def id_switches(gt: TrajectorySet, pred: TrajectorySet,
                iou_gate: float = 0.5) -> int:
    """Frames where a gt identity's matched pred id differs from its previous one."""
    switches = 0
    last: dict[int, int] = {}
    matches = frame_matches(gt, pred, iou_gate)
    for frame in sorted(matches):
        for g, p in sorted(matches[frame].items()):
            if g in last and last[g] != p:
                switches += 1
            last[g] = p
    return switches


def hota(gt: TrajectorySet, pred: TrajectorySet) -> float:
    """Mean over alpha of sqrt(detection accuracy x association accuracy).

    Uses the standard Jaccard formulation: per-frame Hungarian matching
    guided by a global alignment score, thresholded at each alpha in
    {0.05, ..., 0.95}.
    """
    if gt.is_empty and pred.is_empty:
        return 1.0
    if gt.is_empty or pred.is_empty:
        return 0.0
    gt_ids, pred_ids = gt.ids(), pred.ids()
    g_index = {g: i for i, g in enumerate(gt_ids)}
    p_index = {p: j for j, p in enumerate(pred_ids)}
    n_g, n_p = len(gt_ids), len(pred_ids)
    frames = sorted(set(gt.frames()) | set(pred.frames()))

    gt_count = np.zeros(n_g)
    pr_count = np.zeros(n_p)
    potential = np.zeros((n_g, n_p))
    per_frame: list[tuple[list[int], list[int], np.ndarray]] = []
    for frame in frames:
        gt_here = gt.at(frame)
        pred_here = pred.at(frame)
        gi = [g_index[g] for g, _ in gt_here]
        pj = [p_index[p] for p, _ in pred_here]
        sim = np.zeros((len(gi), len(pj)))
        for a, (_, gbox) in enumerate(gt_here):
            for b, (_, pbox) in enumerate(pred_here):
                sim[a, b] = bbox_iou(gbox, pbox)
        for a, i in enumerate(gi):
            gt_count[i] += 1
        for b, j in enumerate(pj):
            pr_count[j] += 1
        if len(gi) and len(pj):
            denom = sim.sum(axis=0, keepdims=True) + sim.sum(axis=1, keepdims=True) - sim
            ratio = np.divide(sim, denom, out=np.zeros_like(sim), where=denom > 0)
            potential[np.ix_(gi, pj)] += ratio
        per_frame.append((gi, pj, sim))

    denom = gt_count[:, None] + pr_count[None, :] - potential
    galign = np.divide(potential, denom, out=np.zeros_like(potential),
                       where=denom > 0)

    n_alpha = len(ALPHA_GRID)
    tp = np.zeros(n_alpha)
    fn = np.zeros(n_alpha)
    fp = np.zeros(n_alpha)
    match_counts = [np.zeros((n_g, n_p)) for _ in range(n_alpha)]
    for gi, pj, sim in per_frame:
        if gi and pj:
            score = galign[np.ix_(gi, pj)] * sim
            rows, cols = linear_sum_assignment(-score)
        else:
            rows = cols = np.zeros(0, dtype=int)
        sims = sim[rows, cols] if len(rows) else np.zeros(0)
        for a, alpha in enumerate(ALPHA_GRID):
            keep = sims >= alpha - _EPS
            n_match = int(keep.sum())
            tp[a] += n_match
            fn[a] += len(gi) - n_match
            fp[a] += len(pj) - n_match
            for r, c in zip(rows[keep], cols[keep]):
                match_counts[a][gi[r], pj[c]] += 1

    total = 0.0
    for a in range(n_alpha):
        denom_det = tp[a] + fn[a] + fp[a]
        if denom_det == 0:
            total += 1.0
            continue
        det_a = tp[a] / denom_det
        if tp[a] == 0:
            total += 0.0
            continue
        mc = match_counts[a]
        union = gt_count[:, None] + pr_count[None, :] - mc
        ass = np.divide(mc, union, out=np.zeros_like(mc), where=union > 0)
        ass_a = float((mc * ass).sum()) / tp[a]
        total += math.sqrt(det_a * ass_a)
    return total / n_alpha


@dataclass
class ScenarioScores:
    name: str
    family: str
    hota: float
    idf1: float
    id_switches: int


@dataclass
class MetricReport:
    hota: float
    idf1: float
    id_switches: int
    per_scenario: dict[str, ScenarioScores] = field(default_factory=dict)

    @classmethod
    def aggregate(cls, scores: Iterable[ScenarioScores]) -> "MetricReport":
        items = sorted(scores, key=lambda s: s.name)
        if not items:
            return cls(0.0, 0.0, 0)
        return cls(
            hota=sum(s.hota for s in items) / len(items),
            idf1=sum(s.idf1 for s in items) / len(items),
            id_switches=sum(s.id_switches for s in items),
            per_scenario={s.name: s for s in items},
        )

    def family_means(self) -> dict[str, tuple[float, float, int]]:
        by_family: dict[str, list[ScenarioScores]] = {}
        for s in self.per_scenario.values():
            by_family.setdefault(s.family, []).append(s)
        out = {}
        for family in sorted(by_family):
            group = by_family[family]
            out[family] = (
                sum(s.hota for s in group) / len(group),
                sum(s.idf1 for s in group) / len(group),
                sum(s.id_switches for s in group),
            )
        return out


def evaluate(gt: TrajectorySet, pred: TrajectorySet,
             iou_gate: float = 0.5) -> tuple[float, float, int]:
    """(hota, idf1, id switches) in one call."""
    return hota(gt, pred), idf1(gt, pred, iou_gate), id_switches(gt, pred, iou_gate)

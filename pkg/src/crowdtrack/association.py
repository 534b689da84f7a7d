"""Min-cost bipartite assignment and the three-stage state-aware matcher.

Stage 1 matches detections against currently-masked tracks on a blend of
box overlap and mean mask confidence.  Stage 2 retries the leftovers of
stage 1 with each track's last matched detection box, because a degraded
mask is a bad anchor but the last confirmed position is not.  Stage 3
re-activates frame-out tracks from spatial continuity alone, without any
mask.  Detections that survive all three stages seed new tracks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BBox, bbox_iou, compute_density, mask_enclosing_bbox
from .track_state import (ConfidenceHistory, IdAllocator, Track, TrackState,
                          classify_unmatched)

if TYPE_CHECKING:
    from .io import TrackerConfig
    from .propagation import MaskObservation
    from .scenario import Detection


@dataclass
class CostMatrix:
    """Rectangular track x detection costs with explicit forbidden entries."""

    costs: np.ndarray
    forbidden: np.ndarray

    def __post_init__(self) -> None:
        self.costs = np.asarray(self.costs, dtype=float)
        self.forbidden = np.asarray(self.forbidden, dtype=bool)
        if self.costs.shape != self.forbidden.shape or self.costs.ndim != 2:
            raise ValueError("costs and forbidden must share a 2-d shape")
        allowed = self.costs[~self.forbidden]
        if allowed.size and (not np.isfinite(allowed).all() or (allowed < 0).any()):
            raise ValueError("allowed costs must be finite and non-negative")

    @classmethod
    def empty(cls) -> "CostMatrix":
        return cls(np.zeros((0, 0)), np.zeros((0, 0), dtype=bool))


def _solve_padded(costs: np.ndarray, forbidden: np.ndarray) -> tuple[int, float, dict[int, int]]:
    """Max-cardinality, then min-cost assignment via a padded square solve."""
    rows, cols = costs.shape
    if rows == 0 or cols == 0:
        return 0, 0.0, {}
    allowed = ~forbidden
    big = float(costs[allowed].sum()) + 1.0 if allowed.any() else 1.0
    n = max(rows, cols)
    padded = np.full((n, n), big)
    padded[:rows, :cols] = np.where(forbidden, big, costs)
    r_idx, c_idx = linear_sum_assignment(padded)
    pairs: dict[int, int] = {}
    total = 0.0
    for r, c in zip(r_idx, c_idx):
        if r < rows and c < cols and not forbidden[r, c]:
            pairs[int(r)] = int(c)
            total += float(costs[r, c])
    return len(pairs), total, pairs


def hungarian(matrix: CostMatrix) -> list[tuple[int, int]]:
    """Globally optimal assignment over the non-forbidden entries.

    Maximizes pair count first, minimizes total cost second, and among
    cost-equal optima returns the lexicographically smallest pair set so
    that ties never depend on solver internals.  Forbidden entries never
    appear in the result.
    """
    costs, forbidden = matrix.costs, matrix.forbidden
    n_rows, n_cols = costs.shape
    if n_rows == 0 or n_cols == 0 or forbidden.all():
        return []
    best_k, best_cost, completion = _solve_padded(costs, forbidden)
    if best_k == 0:
        return []
    eps = 1e-9 * max(1.0, abs(best_cost))
    chosen: list[tuple[int, int]] = []
    used_cols: set[int] = set()
    k_rem, cost_rem = best_k, best_cost

    def solve_rest(row_start: int, blocked: set[int]) -> tuple[int, float, dict[int, int]]:
        cols = [j for j in range(n_cols) if j not in blocked]
        if row_start >= n_rows or not cols:
            return 0, 0.0, {}
        sub_c = costs[row_start:, cols]
        sub_f = forbidden[row_start:, cols]
        k, total, pairs = _solve_padded(sub_c, sub_f)
        return k, total, {row_start + r: cols[c] for r, c in pairs.items()}

    for i in range(n_rows):
        current = completion.get(i)
        candidates = [j for j in range(n_cols)
                      if j not in used_cols and not forbidden[i, j]]
        if current is not None:
            candidates = [j for j in candidates if j < current]
        fixed = None
        for j in candidates:
            k, total, rest = solve_rest(i + 1, used_cols | {j})
            if k == k_rem - 1 and abs(total - (cost_rem - costs[i, j])) <= eps:
                fixed = (j, rest)
                break
        if fixed is not None:
            j, completion = fixed
        elif current is not None:
            j = current
            completion = {r: c for r, c in completion.items() if r > i}
        else:
            completion = {r: c for r, c in completion.items() if r > i}
            continue
        chosen.append((i, j))
        used_cols.add(j)
        k_rem -= 1
        cost_rem -= costs[i, j]
    return chosen


def stage1_cost(iou: float, mu: float, w: float) -> float:
    """Blend of spatial similarity and mask reliability, both as costs."""
    return w * (1.0 - iou) + (1.0 - w) * (1.0 - mu)


@dataclass
class MatchResult:
    """Outcome of one association round; tracks and detections partition."""

    pairs: list[tuple[int, int]] = field(default_factory=list)
    stage_of_match: dict[int, int] = field(default_factory=dict)
    det_of_track: dict[int, int] = field(default_factory=dict)
    unmatched_track_ids: list[int] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)

    def record(self, track_id: int, det_index: int, stage: int) -> None:
        self.pairs.append((track_id, det_index))
        self.stage_of_match[track_id] = stage
        self.det_of_track[track_id] = det_index


def _gated_match(rows: Sequence[int], boxes: Sequence[Optional[BBox]],
                 det_boxes: Sequence[BBox], det_indices: Sequence[int],
                 iou_gate: float) -> list[tuple[int, int]]:
    """Hungarian on 1 - IoU with entries below the gate forbidden.

    Returns (row id, original detection index) pairs.
    """
    if not rows or not det_indices:
        return []
    costs = np.zeros((len(rows), len(det_indices)))
    forb = np.zeros_like(costs, dtype=bool)
    for r, box in enumerate(boxes):
        if box is None:
            forb[r, :] = True
            continue
        for c, d in enumerate(det_indices):
            iou = bbox_iou(box, det_boxes[d])
            if iou < iou_gate:
                forb[r, c] = True
            else:
                costs[r, c] = 1.0 - iou
    assignment = hungarian(CostMatrix(costs, forb))
    return [(rows[r], det_indices[c]) for r, c in assignment]


def stage1_match(candidates: Sequence[Track],
                 mask_boxes: Mapping[int, Optional[BBox]],
                 mean_scores: Mapping[int, float],
                 detections: Sequence["Detection"],
                 det_indices: Sequence[int],
                 cfg: "TrackerConfig") -> list[tuple[int, int]]:
    """Match masked tracks to detections on blended cost.

    Tracks with no mask box this frame are forbidden rows; entries with
    zero box overlap or blended cost above ``c_max`` are forbidden.
    """
    if not candidates or not det_indices:
        return []
    costs = np.zeros((len(candidates), len(det_indices)))
    forb = np.zeros_like(costs, dtype=bool)
    for r, track in enumerate(candidates):
        box = mask_boxes.get(track.id)
        if box is None:
            forb[r, :] = True
            continue
        mu = mean_scores[track.id]
        for c, d in enumerate(det_indices):
            iou = bbox_iou(box, detections[d].box)
            if iou == 0.0:
                forb[r, c] = True
                continue
            cost = stage1_cost(iou, mu, cfg.w)
            if cost > cfg.c_max:
                forb[r, c] = True
            else:
                costs[r, c] = cost
    assignment = hungarian(CostMatrix(costs, forb))
    return [(candidates[r].id, det_indices[c]) for r, c in assignment]


def stage2_match(candidates: Sequence[Track],
                 detections: Sequence["Detection"],
                 det_indices: Sequence[int],
                 cfg: "TrackerConfig") -> list[tuple[int, int]]:
    """Match stage-1 leftovers by their last matched detection box."""
    rows = [t.id for t in candidates]
    boxes = [t.last_matched_det for t in candidates]
    det_boxes = [d.box for d in detections]
    return _gated_match(rows, boxes, det_boxes, det_indices, cfg.theta_s2)


def stage3_match(candidates: Sequence[Track],
                 detections: Sequence["Detection"],
                 det_indices: Sequence[int],
                 current_frame: int,
                 cfg: "TrackerConfig") -> list[tuple[int, int]]:
    """Re-activate frame-out tracks from spatial continuity alone.

    A candidate is eligible only while its unmatched gap is at most
    ``alpha_max`` frames; no mask is consulted.
    """
    eligible = [t for t in candidates
                if current_frame - t.last_matched_frame <= cfg.alpha_max]
    rows = [t.id for t in eligible]
    boxes = [t.last_matched_det for t in eligible]
    det_boxes = [d.box for d in detections]
    return _gated_match(rows, boxes, det_boxes, det_indices, cfg.theta_s3)


def initialize_new_tracks(detections: Sequence["Detection"],
                          det_indices: Sequence[int],
                          cfg: "TrackerConfig",
                          allocator: IdAllocator,
                          frame: int) -> list[Track]:
    """Spawn a fresh track per remaining high-confidence detection."""
    det_boxes = [d.box for d in detections]
    born = []
    for d in det_indices:
        det = detections[d]
        if det.confidence < cfg.theta_new:
            continue
        track = Track(
            id=allocator.take(),
            state=TrackState.ACTIVE,
            history=ConfidenceHistory(cfg.history_n),
            birth_frame=frame,
            last_matched_frame=frame,
            last_matched_det=det.box,
            last_matched_density=compute_density(d, det_boxes),
        )
        born.append(track)
    return born


def sa_oa(tracks: Sequence[Track],
          observations: Mapping[int, "MaskObservation"],
          detections: Sequence["Detection"],
          frame: int,
          cfg: "TrackerConfig",
          allocator: IdAllocator) -> tuple[MatchResult, list[Track]]:
    """Run the full per-frame association: stages 1-3 then initialization.

    Mutates the matched tracks in place (state, last matched box/frame/
    density) and classifies newly unmatched active tracks as occluded or
    frame-out from their cached density.  Returns the match result and
    the tracks spawned from leftover detections.
    """
    live = [t for t in tracks if t.is_live]
    live.sort(key=lambda t: t.id)
    det_boxes = [d.box for d in detections]
    result = MatchResult()

    masked = [t for t in live if t.id in observations]
    mask_boxes: dict[int, Optional[BBox]] = {}
    mean_scores: dict[int, float] = {}
    for t in masked:
        obs = observations[t.id]
        mask_boxes[t.id] = None if obs.mask.is_empty else mask_enclosing_bbox(obs.mask)
        mean_scores[t.id] = t.history.stats()[0] if len(t.history) else 0.0

    remaining = list(range(len(detections)))
    for tid, d in stage1_match(masked, mask_boxes, mean_scores,
                               detections, remaining, cfg):
        result.record(tid, d, 1)
    remaining = [d for d in remaining if d not in result.det_of_track.values()]

    if cfg.stage2 and remaining:
        s2_cands = [t for t in masked
                    if t.id not in result.stage_of_match
                    and t.state in (TrackState.ACTIVE, TrackState.OCCLUDED)
                    and t.last_matched_det is not None]
        for tid, d in stage2_match(s2_cands, detections, remaining, cfg):
            result.record(tid, d, 2)
        remaining = [d for d in remaining if d not in result.det_of_track.values()]

    if cfg.stage3 and remaining:
        s3_cands = [t for t in live
                    if t.state is TrackState.FRAME_OUT
                    and t.id not in result.stage_of_match
                    and t.id not in observations
                    and t.last_matched_det is not None]
        for tid, d in stage3_match(s3_cands, detections, remaining, frame, cfg):
            result.record(tid, d, 3)
        remaining = [d for d in remaining if d not in result.det_of_track.values()]

    result.unmatched_detections = remaining

    by_id = {t.id: t for t in live}
    for tid, d in result.pairs:
        track = by_id[tid]
        track.state = TrackState.ACTIVE
        track.last_matched_frame = frame
        track.last_matched_det = detections[d].box
        track.last_matched_density = compute_density(d, det_boxes)
    for t in live:
        if t.id in result.stage_of_match:
            continue
        result.unmatched_track_ids.append(t.id)
        if t.state is TrackState.ACTIVE:
            t.state = classify_unmatched(t, cfg.delta)

    new_tracks = initialize_new_tracks(detections, remaining, cfg, allocator, frame)
    return result, new_tracks

"""Adaptive mask control: regeneration gating and update arbitration.

Two per-frame decisions protect each track's propagation memory.  A
degraded mask (confidence inside the regeneration band) is re-prompted
from its matched detection box, but only while the local crowd density
is low, because a prompt drawn in a pile-up tends to cover neighbours
and poisons the memory it was meant to repair.  Separately, when two
propagated masks overlap, the less reliable one of the pair skips its
memory update for the frame; reliability is judged by whichever of the
mean and the variance of recent confidence scores separates the pair
more clearly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

from .geometry import (Mask, bbox_intersection_area, compute_density,
                       density_against, mask_enclosing_bbox, mask_iou)
from .track_state import Track

if TYPE_CHECKING:
    from .io import TrackerConfig
    from .propagation import MaskObservation
    from .scenario import Detection

SKIP_BY_MEAN = "hcoi-mean"
SKIP_BY_VAR = "hcoi-var"
RECONSTRUCT = "daqr"
DEFAULT = "default"


@dataclass(frozen=True)
class QrBand:
    """Confidence band (tau_r, tau_p) in which masks are re-generated."""

    tau_r: float
    tau_p: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.tau_r < self.tau_p <= 1.0):
            raise ValueError(f"need 0 <= tau_r < tau_p <= 1, got {self!r}")

    def contains(self, score: float) -> bool:
        return self.tau_r < score < self.tau_p


@dataclass
class MemoryUpdatePlan:
    """Per-frame memory decisions: suppressed updates and re-prompts."""

    skip_reasons: dict[int, str] = field(default_factory=dict)
    reconstruct_set: set[int] = field(default_factory=set)

    @property
    def skip_set(self) -> set[int]:
        return set(self.skip_reasons)

    def resolve(self) -> "MemoryUpdatePlan":
        """Enforce reconstruct-over-skip: a re-prompted track is never skipped."""
        for tid in self.reconstruct_set:
            self.skip_reasons.pop(tid, None)
        return self


def should_reconstruct(score: float, density: float, band: QrBand,
                       theta_density: float) -> bool:
    """True iff the mask is in the regeneration band and the spot is uncrowded.

    Both conditions are strict: a score exactly on a band edge or a
    density exactly at the threshold does not trigger regeneration.
    """
    return band.contains(score) and density < theta_density


def find_overlapping_pairs(masks: Mapping[int, Mask],
                           theta_miou: float) -> list[tuple[int, int]]:
    """All unordered id pairs whose masks overlap above the threshold.

    Pairs are returned in ascending (i, j) order with i < j.
    """
    ids = sorted(tid for tid, m in masks.items() if not m.is_empty)
    boxes = {tid: mask_enclosing_bbox(masks[tid]) for tid in ids}
    pairs = []
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            if bbox_intersection_area(boxes[i], boxes[j]) == 0:
                continue
            if mask_iou(masks[i], masks[j]) > theta_miou:
                pairs.append((i, j))
    return pairs


def _pick(id_a: int, stats_a: tuple[float, float],
          id_b: int, stats_b: tuple[float, float],
          hybrid: bool) -> tuple[int, str]:
    mu_a, var_a = stats_a
    mu_b, var_b = stats_b
    if hybrid and abs(mu_a - mu_b) >= abs(var_a - var_b):
        # lower mean is unreliable; exact tie keeps the smaller id reliable
        if mu_a == mu_b:
            return max(id_a, id_b), SKIP_BY_MEAN
        return (id_a if mu_a < mu_b else id_b), SKIP_BY_MEAN
    if var_a == var_b:
        return max(id_a, id_b), SKIP_BY_VAR
    return (id_a if var_a > var_b else id_b), SKIP_BY_VAR


def select_unreliable(id_a: int, stats_a: tuple[float, float],
                      id_b: int, stats_b: tuple[float, float]) -> int:
    """Id of the less reliable track of an overlapping pair.

    Uses whichever of |mean difference| and |variance difference| is
    larger: the mean picks its argmin, the variance its argmax.  An exact
    mean/variance-difference tie takes the mean branch.
    """
    return _pick(id_a, stats_a, id_b, stats_b, hybrid=True)[0]


def select_unreliable_by_variance(id_a: int, stats_a: tuple[float, float],
                                  id_b: int, stats_b: tuple[float, float]) -> int:
    """Variance-only arbitration, the pre-hybrid baseline behaviour."""
    return _pick(id_a, stats_a, id_b, stats_b, hybrid=False)[0]


def plan_memory_updates(tracks: Sequence[Track],
                        observations: Mapping[int, "MaskObservation"],
                        stage1_dets: Mapping[int, int],
                        detections: Sequence["Detection"],
                        cfg: "TrackerConfig") -> MemoryUpdatePlan:
    """Compose the per-frame plan from overlaps and regeneration checks.

    Every overlapping pair contributes its unreliable member to the skip
    set (idempotently, pairs in ascending order).  Every track whose
    current score sits in the regeneration band, whose local density
    passes the gate, and which holds a stage-1 matched detection to act
    as prompt joins the reconstruct set, which wins over a skip.
    """
    plan = MemoryUpdatePlan()
    by_id = {t.id: t for t in tracks}
    masks = {tid: obs.mask for tid, obs in observations.items()
             if tid in by_id and not obs.mask.is_empty}

    stats = {tid: by_id[tid].history.stats() for tid in masks}
    for i, j in find_overlapping_pairs(masks, cfg.theta_miou):
        loser, reason = _pick(i, stats[i], j, stats[j], hybrid=cfg.hcoi)
        plan.skip_reasons.setdefault(loser, reason)

    band = QrBand(cfg.tau_r, cfg.tau_p)
    theta = cfg.theta_density if cfg.daqr else math.inf
    det_boxes = [d.box for d in detections]
    for tid in sorted(observations):
        if tid not in by_id:
            continue
        obs = observations[tid]
        if tid in stage1_dets:
            density = compute_density(stage1_dets[tid], det_boxes)
        elif not obs.mask.is_empty:
            # no matched detection this frame: judge crowding from the mask box
            density = density_against(mask_enclosing_bbox(obs.mask), det_boxes)
        else:
            continue
        if should_reconstruct(obs.score, density, band, theta) and tid in stage1_dets:
            plan.reconstruct_set.add(tid)
    return plan.resolve()


def format_decision(frame: int, track_id: int, decision: str, reason: str) -> str:
    """One decision-log line: ``frame id decision reason``."""
    return f"{frame} {track_id} {decision} {reason}"

"""Mask-propagation backend contract and a synthetic implementation.

The contract is exactly what the tracker needs from a propagation model:
per-frame mask + confidence for requested tracks, a memory update that
may be skipped, and box-prompted reset/seed.  The synthetic backend
stands in for a neural propagator with the smallest mechanism that makes
the control decisions matter: each track's memory has a scalar purity
that decays when it is updated while its target overlaps a neighbour,
masks expand into the neighbour as purity drops, and a sufficiently
contaminated memory rebinds to the neighbour outright, producing the
identity switches the tracker is supposed to prevent.  A stale memory
whose target has been gone for longer than a short horizon dies and
emits nothing until re-prompted.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Union

import numpy as np

from .geometry import (BBox, Mask, bbox_intersection_area, bbox_iou,
                       mask_from_text, mask_intersection_size, mask_to_text,
                       mask_union)

if TYPE_CHECKING:
    from .io import TrackerConfig
    from .scenario import GroundTruth, GtEntry


@dataclass(frozen=True)
class MaskObservation:
    """Propagated mask and confidence for one track in one frame."""

    track_id: int
    mask: Mask
    score: float


class Propagator(ABC):
    """What the tracker assumes about any mask-propagation backend."""

    @abstractmethod
    def propagate(self, frame: int, track_ids: Iterable[int]) -> dict[int, MaskObservation]:
        """Masks and scores for the requested tracks at this frame."""

    @abstractmethod
    def update_memory(self, track_id: int, mask: Mask) -> None:
        """Fold the current mask into the track's memory (skippable)."""

    @abstractmethod
    def reset(self, track_id: int, prompt: BBox):
        """Replace the track's memory from a box prompt; returns the handle."""

    @abstractmethod
    def seed(self, track_id: int, prompt: BBox):
        """Create memory for a new track from a box prompt; returns the handle."""


def step_purity(purity: float, overlap: float, updated: bool, kappa: float) -> float:
    """Purity after one frame: decays only on update, in proportion to overlap."""
    if not (0.0 <= purity <= 1.0 and 0.0 <= overlap <= 1.0 and 0.0 <= kappa <= 1.0):
        raise ValueError("purity, overlap, and kappa must lie in [0, 1]")
    if not updated:
        return purity
    return min(1.0, max(0.0, purity * (1.0 - kappa * overlap)))


@dataclass
class SyntheticMemory:
    """Scalar stand-in for a per-track feature memory."""

    purity: float = 1.0
    bound_gt: Optional[int] = None
    contamination_source: Optional[int] = None
    absent_streak: int = 0

    @property
    def is_dead(self) -> bool:
        return self.bound_gt is None


@dataclass(frozen=True)
class PropagatorModel:
    kappa: float = 0.3
    lambda_occ: float = 0.5
    sigma_noise: float = 0.05
    p_drift: float = 0.4
    rho: float = 0.3
    rho_penalty: float = 0.2
    absence_horizon: int = 5

    @classmethod
    def from_config(cls, cfg: "TrackerConfig") -> "PropagatorModel":
        return cls(kappa=cfg.kappa, lambda_occ=cfg.lambda_occ,
                   sigma_noise=cfg.sigma_noise, p_drift=cfg.p_drift,
                   rho=cfg.rho, rho_penalty=cfg.rho_penalty,
                   absence_horizon=cfg.absence_horizon)


def _mask_prefix(mask: Mask, count: int) -> Mask:
    """First ``count`` foreground pixels in row-major order."""
    if count <= 0:
        return Mask(mask.width, mask.height)
    runs = []
    left = count
    for s, n in mask.runs:
        take = min(n, left)
        runs.append((s, take))
        left -= take
        if left == 0:
            break
    return Mask(mask.width, mask.height, tuple(runs))


def emit_observation(memory: SyntheticMemory, frame_gt: Mapping[int, "GtEntry"],
                     model: PropagatorModel, rng: np.random.Generator,
                     track_id: int, empty: Mask) -> MaskObservation:
    """One synthetic propagation step for one track.

    Mutates the memory: the absence streak advances (and may kill the
    memory), and a contaminated memory in contact with its contamination
    source rebinds to it when purity is below the drift threshold.  After
    a rebind the memory is pure again for the wrong target, so the score
    recovers even though the mask is now someone else's.
    """
    entry = frame_gt.get(memory.bound_gt) if memory.bound_gt is not None else None
    if entry is None or not entry.on_screen:
        if not memory.is_dead:
            memory.absent_streak += 1
            if memory.absent_streak > model.absence_horizon:
                memory.bound_gt = None
                memory.contamination_source = None
        return MaskObservation(track_id, empty, 0.0)
    memory.absent_streak = 0

    source = memory.contamination_source
    if source is not None and memory.purity < model.p_drift:
        src_entry = frame_gt.get(source)
        if (src_entry is not None and src_entry.on_screen
                and mask_intersection_size(entry.mask, src_entry.mask) > 0):
            memory.bound_gt = source
            memory.contamination_source = None
            memory.purity = 1.0
            entry = src_entry
            source = None

    mask = entry.mask
    if source is not None and memory.purity < 1.0:
        src_entry = frame_gt.get(source)
        if src_entry is not None and src_entry.on_screen:
            extra = round((1.0 - memory.purity) * src_entry.mask.popcount)
            if extra > 0:
                mask = mask_union(mask, _mask_prefix(src_entry.mask, extra))

    occlusion = 1.0 - entry.visibility
    noise = float(rng.normal(0.0, model.sigma_noise)) if model.sigma_noise > 0 else 0.0
    score = memory.purity * (1.0 - model.lambda_occ * occlusion) + noise
    score = min(1.0, max(0.0, score))
    return MaskObservation(track_id, mask, score)


class SyntheticPropagator(Propagator):
    """Ground-truth-driven propagator with contamination dynamics."""

    def __init__(self, gt: "GroundTruth", model: PropagatorModel, seed: int):
        self.gt = gt
        self.model = model
        self.noise_seed = seed
        self.memories: dict[int, SyntheticMemory] = {}
        self._frame = 0
        self._empty = Mask(gt.width, gt.height)

    def propagate(self, frame: int, track_ids: Iterable[int]) -> dict[int, MaskObservation]:
        self._frame = frame
        frame_gt = self.gt.frames[frame]
        out = {}
        for tid in sorted(track_ids):
            memory = self.memories.setdefault(tid, SyntheticMemory(bound_gt=None))
            rng = np.random.default_rng((self.noise_seed, frame, tid, 7))
            out[tid] = emit_observation(memory, frame_gt, self.model, rng,
                                        tid, self._empty)
        return out

    def update_memory(self, track_id: int, mask: Mask) -> None:
        memory = self.memories.get(track_id)
        if memory is None or memory.is_dead:
            return
        entry = self.gt.frames[self._frame].get(memory.bound_gt)
        if entry is None or not entry.on_screen:
            return
        if entry.overlap_frac > 0.0 and entry.prime_neighbor is not None:
            memory.contamination_source = entry.prime_neighbor
        memory.purity = step_purity(memory.purity, entry.overlap_frac, True,
                                    self.model.kappa)

    def reset(self, track_id: int, prompt: BBox) -> SyntheticMemory:
        """Rebuild memory from a box prompt against the current frame.

        Binds to the actor whose box best overlaps the prompt.  If the
        prompt also covers a second actor beyond the contamination ratio,
        the new memory starts impure with that actor as its source.  A
        prompt overlapping nobody leaves a dead memory.
        """
        if prompt.area <= 0:
            raise ValueError("reset prompt must have positive area")
        frame_gt = self.gt.frames[self._frame]
        best_id, best_iou = None, 0.0
        for actor in sorted(frame_gt):
            entry = frame_gt[actor]
            if not entry.on_screen:
                continue
            iou = bbox_iou(prompt, entry.box)
            if iou > best_iou:
                best_id, best_iou = actor, iou
        if best_id is None:
            memory = SyntheticMemory(bound_gt=None)
        else:
            source, best_ratio = None, self.model.rho
            for actor in sorted(frame_gt):
                entry = frame_gt[actor]
                if actor == best_id or not entry.on_screen:
                    continue
                ratio = bbox_intersection_area(prompt, entry.box) / prompt.area
                if ratio > best_ratio:
                    source, best_ratio = actor, ratio
            purity = 1.0 if source is None else 1.0 - self.model.rho_penalty
            memory = SyntheticMemory(purity=purity, bound_gt=best_id,
                                     contamination_source=source)
        self.memories[track_id] = memory
        return memory

    def seed(self, track_id: int, prompt: BBox) -> SyntheticMemory:
        return self.reset(track_id, prompt)


class ReplayPropagator(Propagator):
    """Replays a recorded observation stream; control calls are no-ops."""

    def __init__(self, stream: Mapping[int, Mapping[int, MaskObservation]],
                 width: int, height: int):
        self.stream = stream
        self._empty = Mask(width, height)

    def propagate(self, frame: int, track_ids: Iterable[int]) -> dict[int, MaskObservation]:
        recorded = self.stream.get(frame, {})
        out = {}
        for tid in sorted(track_ids):
            obs = recorded.get(tid)
            out[tid] = obs if obs is not None else MaskObservation(tid, self._empty, 0.0)
        return out

    def update_memory(self, track_id: int, mask: Mask) -> None:
        pass

    def reset(self, track_id: int, prompt: BBox) -> None:
        return None

    def seed(self, track_id: int, prompt: BBox) -> None:
        return None


def write_observations(stream: Mapping[int, Mapping[int, MaskObservation]],
                       path: Union[str, Path]) -> None:
    """Serialize per-frame records as ``frame id score rle...`` lines."""
    lines = []
    for frame in sorted(stream):
        for tid in sorted(stream[frame]):
            obs = stream[frame][tid]
            lines.append(f"{frame + 1} {tid} {obs.score!r} {mask_to_text(obs.mask)}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_observations(path: Union[str, Path]) -> dict[int, dict[int, MaskObservation]]:
    stream: dict[int, dict[int, MaskObservation]] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        fields_ = raw.split(maxsplit=3)
        if len(fields_) != 4:
            raise ValueError(f"line {lineno}: expected 'frame id score rle...'")
        try:
            frame = int(fields_[0]) - 1
            tid = int(fields_[1])
            score = float(fields_[2])
            mask = mask_from_text(fields_[3])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        if frame < 0:
            raise ValueError(f"line {lineno}: frames are 1-based on disk")
        stream.setdefault(frame, {})[tid] = MaskObservation(tid, mask, score)
    return stream

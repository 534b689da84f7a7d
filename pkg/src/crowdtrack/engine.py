"""Per-frame tracking loop tying propagation, association, and control.

Frame 0 seeds tracks from the detector.  Every later frame runs, in
order: mask propagation for tracks that get masks (frame-out tracks do
not, while stage-3 matching is enabled), detection, the three-stage
association, then the memory-control decisions (skip, update, or
re-prompt) applied back to the propagator.  Matched tracks emit a box
per frame: the mask's enclosing box for stage-1 matches, the matched
detection box otherwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .association import MatchResult, sa_oa
from .geometry import mask_enclosing_bbox
from .io import TrackerConfig
from .mask_control import DEFAULT, RECONSTRUCT, format_decision, plan_memory_updates
from .metrics import TrajectorySet
from .propagation import (MaskObservation, Propagator, PropagatorModel,
                          ReplayPropagator, SyntheticPropagator)
from .scenario import (Detection, GroundTruth, ScenarioSpec, generate,
                       simulate_detections)
from .track_state import (IdAllocator, Track, TrackState, expire_tracks,
                          push_confidence, snapshot_lines)


@dataclass
class FrameObservations:
    """Everything the tracker sees in one frame."""

    frame: int
    observations: dict[int, MaskObservation]
    detections: list[Detection]


class Tracker:
    """Stateful per-run tracker; call :meth:`step` once per frame."""

    def __init__(self, cfg: TrackerConfig, propagator: Propagator,
                 record_observations: bool = False,
                 record_track_log: bool = False):
        self.cfg = cfg
        self.propagator = propagator
        self.tracks: list[Track] = []
        self.allocator = IdAllocator()
        self.trajectories = TrajectorySet()
        self.decision_log: list[str] = []
        self.track_log: list[str] = []
        self.observation_stream: dict[int, dict[int, MaskObservation]] = {}
        self._record_observations = record_observations
        self._record_track_log = record_track_log

    def _live(self) -> list[Track]:
        return [t for t in self.tracks if t.is_live]

    def _emission_ids(self) -> list[int]:
        ids = []
        for t in self._live():
            if t.state is TrackState.FRAME_OUT and self.cfg.stage3:
                continue
            ids.append(t.id)
        return sorted(ids)

    def step(self, frame: int, detections: Sequence[Detection]) -> MatchResult:
        detections = [d for d in detections if d.box.area > 0]
        expire_tracks(self.tracks, frame, self.cfg.ttl_frames)
        if not self.tracks:
            return self._bootstrap(frame, detections)

        observations = self.propagator.propagate(frame, self._emission_ids())
        if self._record_observations:
            self.observation_stream[frame] = dict(observations)
        by_id = {t.id: t for t in self._live()}
        for tid in sorted(observations):
            push_confidence(by_id[tid], observations[tid].score)

        result, new_tracks = sa_oa(self.tracks, observations, detections,
                                   frame, self.cfg, self.allocator)
        for t in new_tracks:
            t.memory = self.propagator.seed(t.id, t.last_matched_det)
            self.tracks.append(t)

        stage1_dets = {tid: d for tid, d in result.det_of_track.items()
                       if result.stage_of_match[tid] == 1}
        plan = plan_memory_updates(self._live(), observations, stage1_dets,
                                   detections, self.cfg)
        resets = set(plan.reconstruct_set)
        for tid, stage in result.stage_of_match.items():
            if stage in (2, 3):
                # a late-stage match re-prompts, subject to the same density gate
                if not self.cfg.daqr or by_id[tid].last_matched_density < self.cfg.theta_density:
                    resets.add(tid)
        for tid in resets:
            plan.skip_reasons.pop(tid, None)

        for tid in sorted(set(observations) | resets):
            if tid in resets:
                box = detections[result.det_of_track[tid]].box
                by_id[tid].memory = self.propagator.reset(tid, box)
                self.decision_log.append(
                    format_decision(frame, tid, "reconstruct", RECONSTRUCT))
            elif tid in plan.skip_reasons:
                self.decision_log.append(
                    format_decision(frame, tid, "skip", plan.skip_reasons[tid]))
            else:
                self.propagator.update_memory(tid, observations[tid].mask)
                self.decision_log.append(
                    format_decision(frame, tid, "update", DEFAULT))

        for tid, d in sorted(result.pairs):
            if result.stage_of_match[tid] == 1 and not observations[tid].mask.is_empty:
                box = mask_enclosing_bbox(observations[tid].mask)
            else:
                box = detections[d].box
            self.trajectories.add(frame, tid, box)
        for t in new_tracks:
            self.trajectories.add(frame, t.id, t.last_matched_det)

        if self._record_track_log:
            self.track_log.extend(snapshot_lines(self._live(), frame))
        return result

    def _bootstrap(self, frame: int, detections: Sequence[Detection]) -> MatchResult:
        from .association import initialize_new_tracks

        result = MatchResult()
        result.unmatched_detections = list(range(len(detections)))
        new_tracks = initialize_new_tracks(detections, result.unmatched_detections,
                                           self.cfg, self.allocator, frame)
        for t in new_tracks:
            t.memory = self.propagator.seed(t.id, t.last_matched_det)
            self.tracks.append(t)
            self.trajectories.add(frame, t.id, t.last_matched_det)
        if self._record_track_log:
            self.track_log.extend(snapshot_lines(self._live(), frame))
        return result


@dataclass
class RunResult:
    """Everything one tracker run produced."""

    trajectories: TrajectorySet
    decision_log: list[str]
    track_log: list[str]
    observation_stream: dict[int, dict[int, MaskObservation]]
    wall_s: float


def run_prepared(cfg: TrackerConfig, gt: GroundTruth,
                 detections_by_frame: Mapping[int, list[Detection]],
                 duration: int,
                 seed: int = 0,
                 record_observations: bool = False,
                 record_track_log: bool = False,
                 propagator: Optional[Propagator] = None) -> RunResult:
    """Drive a tracker over precomputed ground truth and detections."""
    if propagator is None:
        propagator = SyntheticPropagator(gt, PropagatorModel.from_config(cfg), seed)
    tracker = Tracker(cfg, propagator, record_observations, record_track_log)
    start = time.perf_counter()
    for frame in range(duration):
        tracker.step(frame, detections_by_frame.get(frame, []))
    wall = time.perf_counter() - start
    return RunResult(tracker.trajectories, tracker.decision_log,
                     tracker.track_log, tracker.observation_stream, wall)


def prepare_scenario(spec: ScenarioSpec,
                     seed: Optional[int] = None) -> tuple[GroundTruth, dict[int, list[Detection]]]:
    """Ground truth and per-frame detections for a spec, for reuse across configs."""
    if seed is None:
        seed = spec.seed
    gt = generate(spec)
    dets = {f: simulate_detections(gt, f, seed, spec.detector)
            for f in range(spec.duration)}
    return gt, dets


def run_scenario(spec: ScenarioSpec, cfg: TrackerConfig,
                 record_observations: bool = False,
                 record_track_log: bool = False) -> tuple[RunResult, GroundTruth]:
    gt, dets = prepare_scenario(spec)
    result = run_prepared(cfg, gt, dets, spec.duration, seed=spec.seed,
                          record_observations=record_observations,
                          record_track_log=record_track_log)
    return result, gt


def run_replay(cfg: TrackerConfig,
               stream: Mapping[int, Mapping[int, MaskObservation]],
               detections_by_frame: Mapping[int, list[Detection]],
               width: int, height: int,
               duration: Optional[int] = None) -> RunResult:
    """Run the tracker over a recorded observation stream (no simulator)."""
    if duration is None:
        frames = list(stream) + list(detections_by_frame)
        duration = max(frames) + 1 if frames else 0
    propagator = ReplayPropagator(stream, width, height)
    tracker = Tracker(cfg, propagator)
    start = time.perf_counter()
    for frame in range(duration):
        tracker.step(frame, detections_by_frame.get(frame, []))
    wall = time.perf_counter() - start
    return RunResult(tracker.trajectories, tracker.decision_log,
                     tracker.track_log, tracker.observation_stream, wall)

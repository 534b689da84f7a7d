"""Track lifecycle state machine, confidence-history statistics, expiry.

A track is Active while it keeps matching detections.  When it stops
matching it is classified once, from the crowd density recorded at its
last matched frame: dense surroundings mean it was occluded, sparse
surroundings mean it likely left the field of view.  Non-active tracks
are dropped for good once unmatched longer than the retention window.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Deque, Iterable, Optional

from .geometry import BBox


class TrackState(Enum):
    ACTIVE = "active"
    OCCLUDED = "occluded"
    FRAME_OUT = "frame-out"
    EXPIRED = "expired"


class ConfidenceHistory:
    """Bounded window of the most recent mask confidence scores."""

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("history window must be >= 1")
        self.window = window
        self.scores: Deque[float] = deque(maxlen=window)

    def push(self, score: float) -> None:
        if not (0.0 <= score <= 1.0):
            raise ValueError(f"confidence score {score} outside [0, 1]")
        self.scores.append(score)

    def __len__(self) -> int:
        return len(self.scores)

    def stats(self) -> tuple[float, float]:
        """Mean and population variance of the window contents."""
        if not self.scores:
            raise ValueError("confidence history is empty")
        n = len(self.scores)
        mu = sum(self.scores) / n
        var = sum((s - mu) ** 2 for s in self.scores) / n
        return mu, var


@dataclass
class Track:
    """One identity hypothesis with state, history, and propagator handle."""

    id: int
    state: TrackState
    history: ConfidenceHistory
    birth_frame: int
    last_matched_frame: int
    last_matched_det: Optional[BBox] = None
    last_matched_density: float = 0.0
    memory: Any = None

    @property
    def is_live(self) -> bool:
        return self.state is not TrackState.EXPIRED


class IdAllocator:
    """Monotone track-id source; ids are unique per run, never reused."""

    def __init__(self, first: int = 1):
        self._next = first

    def take(self) -> int:
        value = self._next
        self._next += 1
        return value


def push_confidence(track: Track, score: float) -> Track:
    """Append a confidence score, evicting the oldest when the window is full."""
    track.history.push(score)
    return track


def confidence_stats(track: Track) -> tuple[float, float]:
    """(mean, population variance) over the track's confidence window."""
    return track.history.stats()


def classify_unmatched(track: Track, delta: float) -> TrackState:
    """State for a track that just went unmatched.

    Occluded iff the density at its last matched frame exceeded ``delta``
    (strictly); otherwise it is treated as having left the frame.
    """
    if track.last_matched_density > delta:
        return TrackState.OCCLUDED
    return TrackState.FRAME_OUT


def expire_tracks(tracks: Iterable[Track], current_frame: int, ttl: int) -> list[Track]:
    """Mark non-active tracks unmatched for more than ``ttl`` frames as expired.

    Returns the tracks expired by this call.  Active tracks never expire,
    regardless of age.
    """
    if ttl < 1:
        raise ValueError("ttl must be >= 1")
    expired = []
    for t in tracks:
        if t.state in (TrackState.OCCLUDED, TrackState.FRAME_OUT):
            if current_frame - t.last_matched_frame > ttl:
                t.state = TrackState.EXPIRED
                expired.append(t)
    return expired


def snapshot_line(track: Track, frame: int) -> str:
    """Debug line: ``frame id state mu var last_frame last_bbox density``."""
    try:
        mu, var = track.history.stats()
        mu_s, var_s = f"{mu:.6f}", f"{var:.6f}"
    except ValueError:
        mu_s = var_s = "nan"
    box = track.last_matched_det
    box_s = f"{box.x_min},{box.y_min},{box.x_max},{box.y_max}" if box else "-"
    density = track.last_matched_density
    density_s = f"{density:.6f}" if math.isfinite(density) else "nan"
    return (f"{frame} {track.id} {track.state.value} {mu_s} {var_s} "
            f"{track.last_matched_frame} {box_s} {density_s}")


def snapshot_lines(tracks: Iterable[Track], frame: int) -> list[str]:
    return [snapshot_line(t, frame) for t in sorted(tracks, key=lambda t: t.id)]

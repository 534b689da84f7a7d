"""Deterministic synthetic crowded-scene generator.

Actors are rectangles or ellipses moving along keyframed waypoints on a
fixed pixel grid.  Scripted events (crossings, exits with re-entry)
shape the choreography; the events are also recorded on the spec so
tests and reports can reason about them.  Ground truth is rasterized
exactly, with per-frame visibility under a painter's z-order (later
actor index is nearer) and the mutual-overlap statistics the synthetic
propagator feeds on.  A simple detector model produces jittered,
sometimes-missing detections with visibility-scaled confidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .geometry import (BBox, Mask, bbox_intersection_area, mask_enclosing_bbox,
                       mask_intersection_size, mask_union)
from .metrics import TrajectorySet


@dataclass(frozen=True)
class Detection:
    """One simulated detector output: a box and its confidence."""

    box: BBox
    confidence: float


@dataclass(frozen=True)
class DetectorModel:
    jitter_sigma: float = 1.5
    miss_base: float = 0.01
    miss_slope: float = 0.3
    conf_slack: float = 0.2


@dataclass(frozen=True)
class Waypoint:
    frame: int
    x: float
    y: float


@dataclass(frozen=True)
class ActorSpec:
    shape: str            # "rect" or "ellipse"
    size: tuple[int, int]
    waypoints: tuple[Waypoint, ...]


@dataclass(frozen=True)
class CrossingEvent:
    a: int
    b: int
    start: int
    end: int


@dataclass(frozen=True)
class ExitReentryEvent:
    actor: int
    exit_frame: int
    reentry_frame: int
    reentry_pos: tuple[float, float]

    @property
    def gap(self) -> int:
        return self.reentry_frame - self.exit_frame


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    duration: int
    width: int = 480
    height: int = 270
    fps: int = 25
    seed: int = 0
    family: str = ""
    actors: tuple[ActorSpec, ...] = ()
    crossings: tuple[CrossingEvent, ...] = ()
    exits: tuple[ExitReentryEvent, ...] = ()
    detector: DetectorModel = DetectorModel()


class ScenarioError(ValueError):
    pass


def validate_spec(spec: ScenarioSpec) -> ScenarioSpec:
    if spec.width <= 0 or spec.height <= 0:
        raise ScenarioError("grid: width and height must be positive")
    if spec.duration <= 0:
        raise ScenarioError("duration: must be positive")
    if spec.seed < 0:
        raise ScenarioError("seed: must be non-negative")
    if not spec.actors:
        raise ScenarioError("actors: at least one actor required")
    for i, actor in enumerate(spec.actors):
        if actor.shape not in ("rect", "ellipse"):
            raise ScenarioError(f"actors[{i}].shape: unknown shape {actor.shape!r}")
        w, h = actor.size
        if w <= 0 or h <= 0:
            raise ScenarioError(f"actors[{i}].size: must be positive, got {actor.size}")
        if not actor.waypoints:
            raise ScenarioError(f"actors[{i}].waypoints: at least one waypoint required")
        for k in range(1, len(actor.waypoints)):
            if actor.waypoints[k].frame <= actor.waypoints[k - 1].frame:
                raise ScenarioError(
                    f"actors[{i}].waypoints[{k}].frame: must strictly increase")
    n = len(spec.actors)
    for k, ev in enumerate(spec.crossings):
        if not (0 <= ev.a < n and 0 <= ev.b < n and ev.a != ev.b):
            raise ScenarioError(f"crossings[{k}].actors: invalid pair ({ev.a}, {ev.b})")
        if not (0 <= ev.start <= ev.end < spec.duration):
            raise ScenarioError(f"crossings[{k}].frames: bad range ({ev.start}, {ev.end})")
    for k, ev in enumerate(spec.exits):
        if not (0 <= ev.actor < n):
            raise ScenarioError(f"exits[{k}].actor: no actor {ev.actor}")
        if ev.reentry_frame <= ev.exit_frame:
            raise ScenarioError(
                f"exits[{k}].reentry_frame: must exceed exit_frame "
                f"({ev.reentry_frame} <= {ev.exit_frame})")
    return spec


def position_at(actor: ActorSpec, frame: int) -> tuple[float, float]:
    """Piecewise-linear position along the waypoints, clamped at the ends."""
    wps = actor.waypoints
    if frame <= wps[0].frame:
        return wps[0].x, wps[0].y
    for k in range(1, len(wps)):
        if frame <= wps[k].frame:
            a, b = wps[k - 1], wps[k]
            t = (frame - a.frame) / (b.frame - a.frame)
            return a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)
    return wps[-1].x, wps[-1].y


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def rasterize_actor(actor: ActorSpec, cx: float, cy: float,
                    width: int, height: int) -> Mask:
    w, h = actor.size
    if actor.shape == "rect":
        x0 = _round_half_up(cx - w / 2)
        y0 = _round_half_up(cy - h / 2)
        rows = [(y, x0, x0 + w) for y in range(y0, y0 + h)]
        return Mask.from_rows(width, height, rows)
    a, b = w / 2, h / 2
    rows = []
    y_lo = int(math.floor(cy - b))
    y_hi = int(math.ceil(cy + b))
    for y in range(y_lo, y_hi + 1):
        t = (y + 0.5 - cy) / b
        rem = 1.0 - t * t
        if rem <= 0.0:
            continue
        dx = a * math.sqrt(rem)
        x0 = int(math.ceil(cx - dx - 0.5))
        x1 = int(math.floor(cx + dx - 0.5)) + 1
        if x1 > x0:
            rows.append((y, x0, x1))
    return Mask.from_rows(width, height, rows)


@dataclass(frozen=True)
class GtEntry:
    """One actor in one frame: silhouette, box, and overlap statistics."""

    mask: Mask
    box: Optional[BBox]
    visibility: float
    on_screen: bool
    overlap_frac: float
    prime_neighbor: Optional[int]


@dataclass
class GroundTruth:
    width: int
    height: int
    duration: int
    frames: list[dict[int, GtEntry]]

    def entry(self, frame: int, actor: int) -> GtEntry:
        return self.frames[frame][actor]


def generate(spec: ScenarioSpec) -> GroundTruth:
    """Rasterize the scenario into exact per-frame ground truth."""
    validate_spec(spec)
    empty = Mask(spec.width, spec.height)
    frames: list[dict[int, GtEntry]] = []
    n = len(spec.actors)
    for frame in range(spec.duration):
        masks = []
        for actor in spec.actors:
            cx, cy = position_at(actor, frame)
            masks.append(rasterize_actor(actor, cx, cy, spec.width, spec.height))
        # prefix[k] = union of masks below (indices < k), suffix[k] = above
        prefix = [empty] * (n + 1)
        for k in range(n):
            prefix[k + 1] = mask_union(prefix[k], masks[k])
        suffix = [empty] * (n + 1)
        for k in range(n - 1, -1, -1):
            suffix[k] = mask_union(suffix[k + 1], masks[k])
        entries: dict[int, GtEntry] = {}
        for k in range(n):
            m = masks[k]
            if m.is_empty:
                entries[k] = GtEntry(m, None, 0.0, False, 0.0, None)
                continue
            size = m.popcount
            hidden = mask_intersection_size(m, suffix[k + 1])
            visibility = 1.0 - hidden / size
            others = mask_union(prefix[k], suffix[k + 1])
            overlap = mask_intersection_size(m, others) / size
            neighbor = None
            if overlap > 0.0:
                best = 0
                for j in range(n):
                    if j == k or masks[j].is_empty:
                        continue
                    shared = mask_intersection_size(m, masks[j])
                    if shared > best:
                        best, neighbor = shared, j
            entries[k] = GtEntry(m, mask_enclosing_bbox(m), visibility, True,
                                 overlap, neighbor)
        frames.append(entries)
    return GroundTruth(spec.width, spec.height, spec.duration, frames)


def simulate_detections(gt: GroundTruth, frame: int, seed: int,
                        model: DetectorModel = DetectorModel()) -> list[Detection]:
    """Detector output for one frame, deterministic in (seed, frame)."""
    if not (0 <= frame < gt.duration):
        raise ValueError(f"frame {frame} outside duration {gt.duration}")
    rng = np.random.default_rng((seed, frame, 11))
    detections = []
    for actor in sorted(gt.frames[frame]):
        entry = gt.frames[frame][actor]
        if not entry.on_screen:
            continue
        miss_p = model.miss_base + model.miss_slope * (1.0 - entry.visibility)
        u_miss = rng.random()
        jit = rng.normal(0.0, model.jitter_sigma, size=4)
        u_conf = rng.uniform(0.0, model.conf_slack)
        if u_miss < miss_p:
            continue
        box = entry.box
        x0 = _round_half_up(box.x_min + jit[0])
        y0 = _round_half_up(box.y_min + jit[1])
        x1 = _round_half_up(box.x_max + jit[2])
        y1 = _round_half_up(box.y_max + jit[3])
        x0 = max(0, min(x0, gt.width - 1))
        y0 = max(0, min(y0, gt.height - 1))
        x1 = max(x0 + 1, min(x1, gt.width))
        y1 = max(y0 + 1, min(y1, gt.height))
        confidence = entry.visibility * (1.0 - u_conf)
        detections.append(Detection(BBox(x0, y0, x1, y1), confidence))
    return detections


def ground_truth_trajectories(gt: GroundTruth) -> TrajectorySet:
    """On-screen ground-truth boxes as trajectories (actor k becomes id k+1)."""
    ts = TrajectorySet()
    for frame, entries in enumerate(gt.frames):
        for actor in sorted(entries):
            entry = entries[actor]
            if entry.on_screen:
                ts.add(frame, actor + 1, entry.box)
    return ts


# ---------------------------------------------------------------------------
# scenario file format: key-value lines with [section] blocks


def format_scenario(spec: ScenarioSpec) -> str:
    lines = [
        "# scenario",
        f"name: {spec.name}",
        f"family: {spec.family}",
        f"width: {spec.width}",
        f"height: {spec.height}",
        f"fps: {spec.fps}",
        f"duration: {spec.duration}",
        f"seed: {spec.seed}",
        "",
        "[detector]",
        f"jitter_sigma: {spec.detector.jitter_sigma!r}",
        f"miss_base: {spec.detector.miss_base!r}",
        f"miss_slope: {spec.detector.miss_slope!r}",
        f"conf_slack: {spec.detector.conf_slack!r}",
    ]
    for actor in spec.actors:
        lines += ["", "[actor]", f"shape: {actor.shape}",
                  f"size: {actor.size[0]} {actor.size[1]}"]
        for wp in actor.waypoints:
            lines.append(f"waypoint: {wp.frame} {wp.x!r} {wp.y!r}")
    for ev in spec.crossings:
        lines += ["", "[crossing]", f"actors: {ev.a} {ev.b}",
                  f"frames: {ev.start} {ev.end}"]
    for ev in spec.exits:
        lines += ["", "[exit]", f"actor: {ev.actor}",
                  f"exit_frame: {ev.exit_frame}",
                  f"reentry_frame: {ev.reentry_frame}",
                  f"reentry_pos: {ev.reentry_pos[0]!r} {ev.reentry_pos[1]!r}"]
    return "\n".join(lines) + "\n"


def _fail(lineno: int, message: str):
    raise ScenarioError(f"line {lineno}: {message}")


def parse_scenario(text: str) -> ScenarioSpec:
    header: dict[str, str] = {}
    detector: dict[str, float] = {}
    actors: list[ActorSpec] = []
    crossings: list[CrossingEvent] = []
    exits: list[ExitReentryEvent] = []
    section = "header"
    current: dict = {}

    def close_section(lineno: int) -> None:
        nonlocal current
        if section == "actor":
            if "shape" not in current or "size" not in current:
                _fail(lineno, "[actor] needs shape and size")
            actors.append(ActorSpec(current["shape"], current["size"],
                                    tuple(current.get("waypoints", []))))
        elif section == "crossing":
            try:
                a, b = current["actors"]
                start, end = current["frames"]
            except KeyError as exc:
                _fail(lineno, f"[crossing] missing {exc}")
            crossings.append(CrossingEvent(a, b, start, end))
        elif section == "exit":
            try:
                exits.append(ExitReentryEvent(
                    current["actor"], current["exit_frame"],
                    current["reentry_frame"], current["reentry_pos"]))
            except KeyError as exc:
                _fail(lineno, f"[exit] missing {exc}")
        current = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            close_section(lineno)
            section = line[1:-1].strip()
            if section not in ("detector", "actor", "crossing", "exit"):
                _fail(lineno, f"unknown section [{section}]")
            continue
        if ":" not in line:
            _fail(lineno, f"expected 'key: value', got {raw!r}")
        key, value = (part.strip() for part in line.split(":", 1))
        try:
            if section == "header":
                header[key] = value
            elif section == "detector":
                detector[key] = float(value)
            elif section == "actor":
                if key == "shape":
                    current["shape"] = value
                elif key == "size":
                    w, h = value.split()
                    current["size"] = (int(w), int(h))
                elif key == "waypoint":
                    f, x, y = value.split()
                    current.setdefault("waypoints", []).append(
                        Waypoint(int(f), float(x), float(y)))
                else:
                    _fail(lineno, f"unknown actor key {key!r}")
            elif section == "crossing":
                if key == "actors":
                    a, b = value.split()
                    current["actors"] = (int(a), int(b))
                elif key == "frames":
                    s, e = value.split()
                    current["frames"] = (int(s), int(e))
                else:
                    _fail(lineno, f"unknown crossing key {key!r}")
            elif section == "exit":
                if key == "actor":
                    current["actor"] = int(value)
                elif key in ("exit_frame", "reentry_frame"):
                    current[key] = int(value)
                elif key == "reentry_pos":
                    x, y = value.split()
                    current["reentry_pos"] = (float(x), float(y))
                else:
                    _fail(lineno, f"unknown exit key {key!r}")
        except ScenarioError:
            raise
        except (ValueError, TypeError):
            _fail(lineno, f"bad value for {key!r}: {value!r}")
    close_section(0)

    known = {"name", "family", "width", "height", "fps", "duration", "seed"}
    unknown = set(header) - known
    if unknown:
        raise ScenarioError(f"unknown header keys: {sorted(unknown)}")
    try:
        spec = ScenarioSpec(
            name=header.get("name", "unnamed"),
            family=header.get("family", ""),
            width=int(header.get("width", 480)),
            height=int(header.get("height", 270)),
            fps=int(header.get("fps", 25)),
            duration=int(header["duration"]),
            seed=int(header.get("seed", 0)),
            actors=tuple(actors),
            crossings=tuple(crossings),
            exits=tuple(exits),
            detector=DetectorModel(**detector) if detector else DetectorModel(),
        )
    except KeyError as exc:
        raise ScenarioError(f"missing header key {exc}") from None
    except TypeError as exc:
        raise ScenarioError(f"detector: {exc}") from None
    return validate_spec(spec)


def read_scenario(path: Union[str, Path]) -> ScenarioSpec:
    return parse_scenario(Path(path).read_text())


def write_scenario(spec: ScenarioSpec, path: Union[str, Path]) -> None:
    Path(path).write_text(format_scenario(spec))


# ---------------------------------------------------------------------------
# standard suite


def _hold_waypoints(points: Sequence[tuple[int, float, float]]) -> tuple[Waypoint, ...]:
    return tuple(Waypoint(f, x, y) for f, x, y in points)


def _screen_cluster(base: int, cx: float, cy: float, t0: int, duration: int,
                    flank: float = 7.0) -> tuple[list[ActorSpec], list[CrossingEvent]]:
    """A pick-style cluster: two actors flank a holder while one drives through.

    The holder's accumulated box overlap peaks around 1.6-1.9 for a few
    frames, with no pair closer than the flank distance.
    """
    hold = 5
    actors = [
        # holder
        ActorSpec("ellipse", (18, 36), _hold_waypoints([
            (0, cx, cy), (duration - 1, cx, cy)])),
        # left and right flankers converge, hold, disperse
        ActorSpec("ellipse", (18, 36), _hold_waypoints([
            (0, cx - 62, cy), (t0 - 10, cx - 62, cy), (t0, cx - flank, cy),
            (t0 + hold, cx - flank, cy), (t0 + hold + 12, cx - 62, cy),
            (duration - 1, cx - 62, cy)])),
        ActorSpec("ellipse", (18, 36), _hold_waypoints([
            (0, cx + 62, cy), (t0 - 10, cx + 62, cy), (t0, cx + flank, cy),
            (t0 + hold, cx + flank, cy), (t0 + hold + 12, cx + 62, cy),
            (duration - 1, cx + 62, cy)])),
        # driver sweeping through just below the screen
        ActorSpec("ellipse", (18, 36), _hold_waypoints([
            (0, cx - 85, cy + 11), (t0 - 6, cx - 85, cy + 11),
            (t0 + hold + 6, cx + 85, cy + 11),
            (duration - 1, cx + 85, cy + 11)])),
    ]
    events = [CrossingEvent(base + a, base + b, t0 - 2, t0 + hold + 4)
              for a in range(4) for b in range(a + 1, 4)]
    return actors, events


def _dense_spec(index: int, seed: int) -> ScenarioSpec:
    """Basketball-like traffic: two lines weaving through each other plus
    two screen plays that pile accumulated overlap onto one holder."""
    rng = np.random.default_rng((seed, 100 + index))
    width, height, duration = 480, 270, 150
    jx = float(6 * (rng.random() - 0.5))
    jy = float(4 * (rng.random() - 0.5))
    actors: list[ActorSpec] = []
    crossings: list[CrossingEvent] = []

    # weave: one line runs left to right, the other right to left, rows
    # offset by 14 px so passing pairs overlap around 0.6, never ambiguous
    rows_a = (62.0 + jy, 134.0 + jy, 206.0 + jy)
    for i, y in enumerate(rows_a):
        lag = 4 * i
        actors.append(ActorSpec("ellipse", (18, 36), _hold_waypoints([
            (0, 55.0 + jx, y), (10 + lag, 55.0 + jx, y),
            (135 + lag if 135 + lag < duration else duration - 1, 425.0 + jx, y),
            (duration - 1, 425.0 + jx, y)])))
    for i, y in enumerate(rows_a):
        lag = 4 * i
        actors.append(ActorSpec("ellipse", (18, 36), _hold_waypoints([
            (0, 425.0 - jx, y + 14.0), (10 + lag, 425.0 - jx, y + 14.0),
            (135 + lag if 135 + lag < duration else duration - 1, 55.0 - jx, y + 14.0),
            (duration - 1, 55.0 - jx, y + 14.0)])))
        crossings.append(CrossingEvent(i, 3 + i, 66 + 2 * i, 80 + 2 * i))

    screen1, ev1 = _screen_cluster(6, 150.0 + jx, 104.0 + jy, 36, duration)
    screen2, ev2 = _screen_cluster(10, 330.0 - jx, 176.0 - jy,
                                   96 + int(rng.integers(0, 4)), duration)
    actors += screen1 + screen2
    crossings += ev1 + ev2
    return validate_spec(ScenarioSpec(
        name=f"dense_{index:02d}", family="dense", duration=duration,
        seed=seed + index, actors=tuple(actors), crossings=tuple(crossings)))


def _net_spec(index: int, seed: int) -> ScenarioSpec:
    """Pairs trading places across a net line, brushing as they pass."""
    rng = np.random.default_rng((seed, 200 + index))
    width, height, duration = 480, 270, 130
    actors = []
    crossings = []
    n_pairs = 4
    for k in range(n_pairs):
        x = 90.0 + k * 100.0 + 10 * rng.random()
        top = (x, 90.0 + 5 * rng.random())
        bot = (x + 4.0, 185.0 + 5 * rng.random())
        start = 24 + 18 * k
        mid = start + 10
        # the pair passes at a small lateral offset mid-court, then swaps sides
        actors.append(ActorSpec("ellipse", (18, 36), _hold_waypoints([
            (0, top[0], top[1]),
            (start, top[0], top[1]),
            (mid, x - 5.0, 137.0),
            (mid + 22, bot[0], bot[1]),
            (duration - 1, bot[0], bot[1]),
        ])))
        actors.append(ActorSpec("ellipse", (18, 36), _hold_waypoints([
            (0, bot[0], bot[1]),
            (start, bot[0], bot[1]),
            (mid, x + 5.0, 137.0),
            (mid + 22, top[0], top[1]),
            (duration - 1, top[0], top[1]),
        ])))
        crossings.append(CrossingEvent(2 * k, 2 * k + 1, start, mid + 22))
    return validate_spec(ScenarioSpec(
        name=f"net_{index:02d}", family="net", duration=duration,
        seed=seed + index, actors=tuple(actors), crossings=tuple(crossings)))


def _sparse_spec(index: int, seed: int, long_gap: bool) -> ScenarioSpec:
    """Spread-out actors with scripted exit and re-entry events."""
    rng = np.random.default_rng((seed, 300 + index))
    width, height = 480, 270
    duration = 240
    actors = []
    exits = []
    anchors = [(70.0, 60.0), (240.0, 50.0), (410.0, 70.0),
               (80.0, 210.0), (250.0, 215.0), (420.0, 200.0)]
    gaps = [28 + int(rng.integers(0, 24)) for _ in range(3)]
    if long_gap:
        gaps[1] = 170
    exit_frames = [50, 95, 150]
    for k, (ax, ay) in enumerate(anchors):
        ax += 6 * rng.standard_normal()
        ay += 4 * rng.standard_normal()
        if k < 3:
            exit_f = exit_frames[k]
            gap = gaps[k]
            reentry_f = exit_f + gap
            off_x = -80.0 if ax < width / 2 else width + 80.0
            back = (ax + 6 * rng.standard_normal(), ay + 4 * rng.standard_normal())
            points = [(0, ax, ay), (exit_f - 1, ax, ay), (exit_f, off_x, ay)]
            if reentry_f < duration:
                points += [(reentry_f - 1, off_x, ay), (reentry_f, back[0], back[1]),
                           (duration - 1, back[0], back[1])]
            actors.append(ActorSpec("ellipse", (18, 36), _hold_waypoints(points)))
            exits.append(ExitReentryEvent(k, exit_f, reentry_f, back))
        else:
            # drifting defender staying on screen
            dx = 30 * rng.standard_normal()
            dy = 12 * rng.standard_normal()
            actors.append(ActorSpec("ellipse", (18, 36), _hold_waypoints([
                (0, ax, ay),
                (duration // 2, ax + dx, ay + dy),
                (duration - 1, ax, ay),
            ])))
    return validate_spec(ScenarioSpec(
        name=f"sparse_{index:02d}", family="sparse", duration=duration,
        seed=seed + index, actors=tuple(actors), exits=tuple(exits)))


def standard_suite(seed: int = 0) -> list[ScenarioSpec]:
    """The fixed 22-scenario benchmark: dense, net, and sparse families."""
    specs = [_dense_spec(i, seed) for i in range(8)]
    specs += [_net_spec(i, seed) for i in range(6)]
    specs += [_sparse_spec(i, seed, long_gap=(i % 4 == 1)) for i in range(8)]
    return specs

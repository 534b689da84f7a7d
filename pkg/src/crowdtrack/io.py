"""Config loading with published defaults, MOT-format files, detections.

The config file format is flat ``key: value`` lines with ``#`` comments.
Unknown keys are rejected outright so a typo cannot silently leave a
hyperparameter at its default.  MOT files use the usual comma-separated
``frame,id,x,y,w,h,conf,-1,-1,-1`` convention with 1-based frames on the
wire and 0-based frames internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Union

from .geometry import BBox
from .metrics import TrajectorySet
from .scenario import Detection


class ConfigError(ValueError):
    pass


class MotFormatError(ValueError):
    pass


@dataclass
class TrackerConfig:
    """Every tracker hyperparameter, with defaults.

    The first block holds the thresholds fixed in the reference
    experiments (density gate 1.5, occlusion split 0.6, cost weight 0.5,
    60-frame retention, 150-frame re-entry gate).  The rest are
    gap-filling values this artifact pins and exposes for sweeps.
    """

    theta_density: float = 1.5   # regeneration suppressed at densities >= this
    delta: float = 0.6           # occluded vs frame-out split on last density
    w: float = 0.5               # stage-1 weight between IoU and mean score
    ttl_frames: int = 60         # retention of unmatched tracks
    alpha_max: int = 150         # stage-3 temporal gate on re-entry gap

    tau_r: float = 0.3           # regeneration band, lower edge
    tau_p: float = 0.7           # regeneration band, upper edge
    theta_miou: float = 0.3      # mask-overlap threshold for update arbitration
    history_n: int = 10          # confidence window length
    c_max: float = 0.8           # stage-1 cost acceptance gate
    theta_s2: float = 0.3        # stage-2 IoU gate
    theta_s3: float = 0.3        # stage-3 IoU gate
    theta_new: float = 0.6       # confidence needed to spawn a new track

    daqr: bool = True            # density gate on mask regeneration
    hcoi: bool = True            # hybrid (mean/variance) unreliable-mask pick
    stage2: bool = True          # last-box matching for degraded masks
    stage3: bool = True          # re-entry matching for frame-out tracks

    kappa: float = 0.3           # memory contamination rate per update
    lambda_occ: float = 0.5      # score penalty per unit occlusion
    sigma_noise: float = 0.05    # score noise std
    p_drift: float = 0.4         # purity below which memory rebinds
    rho: float = 0.3             # prompt overlap ratio that contaminates a reset
    rho_penalty: float = 0.2     # purity penalty for a contaminated reset
    absence_horizon: int = 5     # frames a memory survives its target being gone

    jitter_sigma: float = 1.5    # detector box noise, pixels per edge
    miss_base: float = 0.01      # detector miss probability floor
    miss_slope: float = 0.5      # extra miss probability per unit occlusion
    conf_slack: float = 0.2      # detector confidence haircut range

    seed: int = 0


_UNIT = (0.0, 1.0)
_RANGES: dict[str, tuple[float, float]] = {
    "theta_density": (0.0, math.inf),
    "delta": (0.0, math.inf),
    "w": _UNIT,
    "tau_r": _UNIT,
    "tau_p": _UNIT,
    "theta_miou": _UNIT,
    "history_n": (1, math.inf),
    "ttl_frames": (1, math.inf),
    "alpha_max": (1, math.inf),
    "c_max": (0.0, 2.0),
    "theta_s2": _UNIT,
    "theta_s3": _UNIT,
    "theta_new": _UNIT,
    "kappa": _UNIT,
    "lambda_occ": _UNIT,
    "sigma_noise": (0.0, 1.0),
    "p_drift": _UNIT,
    "rho": _UNIT,
    "rho_penalty": _UNIT,
    "absence_horizon": (1, math.inf),
    "jitter_sigma": (0.0, math.inf),
    "miss_base": _UNIT,
    "miss_slope": _UNIT,
    "conf_slack": _UNIT,
    "seed": (0, math.inf),
}

_FIELD_TYPES = {f.name: f.type for f in fields(TrackerConfig)}


def default_config() -> TrackerConfig:
    return TrackerConfig()


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None


def validate_config(cfg: TrackerConfig) -> TrackerConfig:
    for key, (lo, hi) in _RANGES.items():
        value = getattr(cfg, key)
        if not (lo <= value <= hi):
            hi_s = "inf" if math.isinf(hi) else f"{hi:g}"
            raise ConfigError(f"{key}: {value} outside allowed range [{lo:g}, {hi_s}]")
    if not cfg.tau_r < cfg.tau_p:
        raise ConfigError(
            f"tau_r: {cfg.tau_r} must be strictly below tau_p ({cfg.tau_p})")
    return cfg


def parse_config_text(text: str) -> TrackerConfig:
    cfg = TrackerConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ConfigError(f"line {lineno}: expected 'key: value', got {raw!r}")
        key, value = (part.strip() for part in line.split(":", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _parse_value(key, value))
    return validate_config(cfg)


def load_config(path: Union[str, Path]) -> TrackerConfig:
    return parse_config_text(Path(path).read_text())


def set_config_value(cfg: TrackerConfig, key: str, raw: str) -> TrackerConfig:
    """Assign one field from its text form, with the usual validation."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown key {key!r}")
    setattr(cfg, key, _parse_value(key, raw))
    return validate_config(cfg)


def config_to_text(cfg: TrackerConfig) -> str:
    """Serialize in declaration order; load(config_to_text(c)) == c."""
    lines = ["# tracker configuration"]
    for f in fields(TrackerConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{f.name}: {rendered}")
    return "\n".join(lines) + "\n"


def config_to_dict(cfg: TrackerConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(TrackerConfig)}


def _parse_mot_line(line: str, lineno: int) -> tuple[int, int, float, float, float, float, float]:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) < 7:
        raise MotFormatError(f"line {lineno}: expected >= 7 comma fields, got {len(parts)}")
    try:
        frame = int(float(parts[0]))
        ident = int(float(parts[1]))
        x, y, w, h, conf = (float(p) for p in parts[2:7])
    except ValueError:
        raise MotFormatError(f"line {lineno}: non-numeric field in {line!r}") from None
    if frame < 1:
        raise MotFormatError(f"line {lineno}: frame {frame} not 1-based")
    return frame, ident, x, y, w, h, conf


def _to_box(x: float, y: float, w: float, h: float) -> BBox:
    # floor the min edges, ceil the max edges: never lose covered pixels
    return BBox(math.floor(x), math.floor(y), math.ceil(x + w), math.ceil(y + h))


def read_mot(path: Union[str, Path]) -> TrajectorySet:
    """Read a MOT result/ground-truth file into a trajectory set."""
    ts = TrajectorySet()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        frame, ident, x, y, w, h, _ = _parse_mot_line(raw, lineno)
        try:
            ts.add(frame - 1, ident, _to_box(x, y, w, h))
        except ValueError as exc:
            raise MotFormatError(f"line {lineno}: {exc}") from None
    return ts


def write_mot(ts: TrajectorySet, path: Union[str, Path]) -> None:
    """Write a trajectory set sorted by (frame, id); deterministic bytes."""
    rows = []
    for ident in ts.ids():
        for frame, box in ts.trajectory(ident):
            rows.append((frame, ident, box))
    rows.sort(key=lambda r: (r[0], r[1]))
    lines = []
    for frame, ident, box in rows:
        lines.append(f"{frame + 1},{ident},{box.x_min},{box.y_min},"
                     f"{box.width},{box.height},1,-1,-1,-1")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_detections(path: Union[str, Path]) -> dict[int, list[Detection]]:
    """Read per-frame detections from MOT-style lines (ids ignored)."""
    dets: dict[int, list[Detection]] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        frame, _, x, y, w, h, conf = _parse_mot_line(raw, lineno)
        dets.setdefault(frame - 1, []).append(Detection(_to_box(x, y, w, h), conf))
    return dets


def write_detections(dets_by_frame: dict[int, list[Detection]],
                     path: Union[str, Path]) -> None:
    lines = []
    for frame in sorted(dets_by_frame):
        for det in dets_by_frame[frame]:
            b = det.box
            lines.append(f"{frame + 1},-1,{b.x_min},{b.y_min},"
                         f"{b.width},{b.height},{det.confidence:.6f},-1,-1,-1")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

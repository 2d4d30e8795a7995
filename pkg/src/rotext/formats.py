"""Text formats: ICDAR quadrilateral lines, detection lines and run manifests."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .geometry import box_vertices, min_area_rect
from .postprocess import Detection, FilterConfig
from .targets import GroundTruth


class FormatError(ValueError):
    """Malformed input; ``location`` names the file and line or key."""

    def __init__(self, location: str, message: str):
        self.location = location
        super().__init__(f"{location}: {message}")


def _coords(parts, where):
    try:
        vals = [float(p) for p in parts[:8]]
    except ValueError as exc:
        raise FormatError(where, f"bad coordinate ({exc})") from None
    return [(vals[k], vals[k + 1]) for k in range(0, 8, 2)]


def parse_gt_line(line: str, where: str = "<line>") -> GroundTruth:
    """``x1,y1,...,x4,y4,transcript`` -> minimum-area rotated rectangle."""
    parts = line.strip().lstrip("﻿").split(",")
    if len(parts) < 8:
        raise FormatError(where, f"expected 8 coordinates, got {len(parts)} fields")
    quad = _coords(parts, where)
    try:
        box = min_area_rect(quad)
    except ValueError as exc:
        raise FormatError(where, str(exc)) from None
    return GroundTruth(box, ",".join(parts[8:]))


def read_gt_file(path) -> List[GroundTruth]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                out.append(parse_gt_line(line, f"{path}:{n}"))
    return out


def parse_det_line(line: str, where: str = "<line>") -> Detection:
    """``x1,...,y4[,s_d,s_r[,transcript]]``; missing scores default to ``s_d=1, s_r=0``."""
    parts = line.strip().lstrip("﻿").split(",")
    if len(parts) < 8:
        raise FormatError(where, f"expected 8 coordinates, got {len(parts)} fields")
    quad = _coords(parts, where)
    try:
        box = min_area_rect(quad)
    except ValueError as exc:
        raise FormatError(where, str(exc)) from None
    rest = parts[8:]
    s_d, s_r, text = 1.0, 0.0, ",".join(rest)
    if len(rest) >= 2:
        try:
            s_d, s_r = float(rest[0]), float(rest[1])
            text = ",".join(rest[2:])
        except ValueError:
            pass
    return Detection(box, s_d, s_r, text)


def read_det_file(path) -> List[Detection]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                out.append(parse_det_line(line, f"{path}:{n}"))
    return out


def format_detection(det: Detection) -> str:
    coords = []
    for x, y in box_vertices(det.box):
        coords += [f"{x:.1f}", f"{y:.1f}"]
    coords = [c if c != "-0.0" else "0.0" for c in coords]
    return ",".join(coords + [f"{det.s_d:.4f}", f"{det.s_r:.4f}", det.transcript])


def write_det_file(path, dets) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in dets:
            fh.write(format_detection(d) + "\n")


@dataclass
class LevelEntry:
    stride: int
    objectness: str
    regression: str


@dataclass
class RunManifest:
    """JSON run description. Relative paths resolve against the manifest's directory.

    Example::

        {"image_size": [640, 640],
         "levels": [{"stride": 4, "objectness": "p2_obj.rten", "regression": "p2_reg.rten"}],
         "second_stage": {"regression": "reg.rten", "scores": "cls.rten", "sequences": "rec.rten"},
         "alphabet": "abc",
         "config": {"t_d": 0.7}}
    """

    image_size: tuple
    levels: List[LevelEntry]
    second_stage: Optional[Dict[str, str]] = None
    alphabet: str = ""
    config: Dict[str, float] = field(default_factory=dict)
    root: str = "."

    def resolve(self, rel: str) -> str:
        return rel if os.path.isabs(rel) else os.path.join(self.root, rel)

    def filter_config(self, **overrides) -> FilterConfig:
        params = dict(self.config)
        params.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return FilterConfig(**params)
        except TypeError as exc:
            raise FormatError("config", str(exc)) from None


_CONFIG_KEYS = set(FilterConfig.__dataclass_fields__)


def load_manifest(path) -> RunManifest:
    where = str(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{where}: byte {exc.pos}", exc.msg) from None
    if not isinstance(raw, dict):
        raise FormatError(where, "manifest must be a JSON object")
    try:
        size = raw["image_size"]
        if len(size) != 2 or min(size) < 1:
            raise FormatError(f"{where}: image_size", "must be [height, width] with positive entries")
        levels = []
        for k, lv in enumerate(raw["levels"]):
            stride = int(lv["stride"])
            if stride not in (4, 8, 16, 32):
                raise FormatError(f"{where}: levels[{k}].stride", f"stride {stride} not in 4/8/16/32")
            levels.append(LevelEntry(stride, lv["objectness"], lv["regression"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(where, f"missing or malformed field {exc}") from None
    second = raw.get("second_stage")
    if second is not None:
        if not isinstance(second, dict) or "regression" not in second or "scores" not in second:
            raise FormatError(f"{where}: second_stage", "needs 'regression' and 'scores' entries")
    config = raw.get("config", {}) or {}
    unknown = set(config) - _CONFIG_KEYS
    if unknown:
        raise FormatError(f"{where}: config", f"unknown keys {sorted(unknown)}")
    return RunManifest(
        (int(size[0]), int(size[1])),
        levels,
        second,
        str(raw.get("alphabet", "")),
        config,
        os.path.dirname(os.path.abspath(path)),
    )

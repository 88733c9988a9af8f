"""Line-delimited manifests: pair records and sampler candidates.

Both formats are tab-separated with a versioned header line, so they can
be streamed, diffed, and written byte-identically across platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .formats import FormatError, _atomic_write_bytes
from .sampler import PairCandidate

PAIR_MANIFEST_VERSION = "covisflow-pairs-v1"
CANDIDATE_MANIFEST_VERSION = "covisflow-candidates-v1"


@dataclass
class PairRecord:
    """One row of a dataset pairing manifest; paths are dataset-relative."""

    dataset: str
    src_image: str = ""
    tgt_image: str = ""
    src_depth: str = ""
    tgt_depth: str = ""
    depth_convention: str = "z"
    src_pose: str = ""  # "trajectory.txt:index"
    tgt_pose: str = ""
    intrinsics: str = ""  # "fx,fy,cx,cy,width,height"
    tgt_intrinsics: str = ""  # optional; defaults to intrinsics
    threshold_preset: str = ""
    extras: dict = field(default_factory=dict)  # scene-flow / rigid-object references


_PAIR_FIELDS = [f.name for f in fields(PairRecord)]


def write_pair_manifest(path, records):
    lines = ["#" + PAIR_MANIFEST_VERSION + "\t" + "\t".join(_PAIR_FIELDS)]
    for rec in records:
        row = []
        for name in _PAIR_FIELDS:
            value = getattr(rec, name)
            row.append(json.dumps(value) if name == "extras" else str(value))
        lines.append("\t".join(row))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_pair_manifest(path):
    with open(path) as f:
        header = f.readline().rstrip("\n")
        expected = "#" + PAIR_MANIFEST_VERSION
        if not header.startswith(expected):
            raise FormatError(f"{path}: bad manifest header {header!r}")
        records = []
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(_PAIR_FIELDS):
                raise FormatError(
                    f"{path}:{lineno}: expected {len(_PAIR_FIELDS)} fields, got {len(parts)}"
                )
            kwargs = dict(zip(_PAIR_FIELDS, parts))
            kwargs["extras"] = json.loads(kwargs["extras"]) if kwargs["extras"] else {}
            records.append(PairRecord(**kwargs))
    return records


def _fmt(x):
    return format(float(x), ".17g")


def _vec(v):
    return ",".join(_fmt(x) for x in v)


_CANDIDATE_COLUMNS = [
    "index",
    "bin",
    "src_camera",
    "tgt_camera",
    "target_voxel",
    "axis_angle",
    "axis_angle_perturbed",
    "src_center",
    "tgt_center",
    "src_dir",
    "tgt_dir",
    "roll_src",
    "roll_tgt",
    "perturb_src",
    "perturb_tgt",
]


def write_candidate_manifest(path, candidates):
    """Sampler output rows with full-precision floats (byte-stable)."""
    lines = ["#" + CANDIDATE_MANIFEST_VERSION + "\t" + "\t".join(_CANDIDATE_COLUMNS)]
    for i, c in enumerate(candidates):
        lines.append(
            "\t".join(
                [
                    str(i),
                    str(c.bin_index),
                    str(c.src_camera),
                    str(c.tgt_camera),
                    str(c.target_voxel),
                    _fmt(c.axis_angle),
                    _fmt(c.axis_angle_perturbed),
                    _vec(c.src_center),
                    _vec(c.tgt_center),
                    _vec(c.src_dir),
                    _vec(c.tgt_dir),
                    _fmt(c.roll_src),
                    _fmt(c.roll_tgt),
                    _vec(c.perturb_src),
                    _vec(c.perturb_tgt),
                ]
            )
        )
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_candidate_manifest(path):
    def vec(text):
        return np.array([float(x) for x in text.split(",")])

    with open(path) as f:
        header = f.readline().rstrip("\n")
        if not header.startswith("#" + CANDIDATE_MANIFEST_VERSION):
            raise FormatError(f"{path}: bad candidate manifest header {header!r}")
        out = []
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(_CANDIDATE_COLUMNS):
                raise FormatError(f"{path}:{lineno}: malformed candidate row")
            row = dict(zip(_CANDIDATE_COLUMNS, parts))
            out.append(
                PairCandidate(
                    src_camera=int(row["src_camera"]),
                    tgt_camera=int(row["tgt_camera"]),
                    src_center=vec(row["src_center"]),
                    tgt_center=vec(row["tgt_center"]),
                    src_dir=vec(row["src_dir"]),
                    tgt_dir=vec(row["tgt_dir"]),
                    roll_src=float(row["roll_src"]),
                    roll_tgt=float(row["roll_tgt"]),
                    perturb_src=vec(row["perturb_src"]),
                    perturb_tgt=vec(row["perturb_tgt"]),
                    target_voxel=int(row["target_voxel"]),
                    axis_angle=float(row["axis_angle"]),
                    axis_angle_perturbed=float(row["axis_angle_perturbed"]),
                    bin_index=int(row["bin"]),
                )
            )
    return out

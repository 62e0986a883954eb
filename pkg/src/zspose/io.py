"""On-disk formats: feature grids, depth maps, sequence manifests.

Binary layouts (all little-endian, arrays row-major):

  feature file (.zpf):
      magic   4 bytes  b"ZPF1"
      version u32      1
      cells_h u32
      cells_w u32
      dim     u32
      flags   u8       bit0: mask section present, bit1: saliency present
      pad     3 bytes
      data    float32[cells_h * cells_w * dim]   raw descriptors
      mask    u8[cells_h * cells_w]              if bit0
      sal     float32[cells_h * cells_w]         if bit1

  depth file (.zdf):
      magic    4 bytes  b"ZDF1"
      version  u32      1
      height   u32
      width    u32
      depth    float32[height * width]
      validity u8[height * width]

Descriptors are stored raw (pre-normalization); loading normalizes by
default so matchers can assume unit-norm cells. Depth maps keep the full
image resolution with a per-pixel validity mask.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Optional

import numpy as np

from . import geom
from .errors import (
    BadMagic,
    InvalidDepth,
    MissingFile,
    NoValidDepth,
    SchemaError,
    TruncatedFile,
    VersionUnsupported,
)
from .features import FeatureGrid, normalize_grid
from .geom import CameraIntrinsics, RigidTransformSE3, RigidTransformSim3, Rotation3

FEATURE_MAGIC = b"ZPF1"
DEPTH_MAGIC = b"ZDF1"
FORMAT_VERSION = 1

_FEATURE_HEADER = struct.Struct("<4sIIIIB3x")
_DEPTH_HEADER = struct.Struct("<4sIII")

FLAG_MASK = 0x01
FLAG_SALIENCY = 0x02

INPAINT_MAX_SWEEPS = 500
INPAINT_REL_TOL = 1e-4


@dataclass(frozen=True)
class CropRect:
    """Pixel-space crop within the source image; w and h are at least 1."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"crop must have positive extent, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise ValueError("crop origin must be non-negative")


@dataclass(frozen=True)
class DepthImage:
    """Full-resolution depth with a validity mask; valid depths are > 0."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        valid = np.ascontiguousarray(self.valid, dtype=bool)
        if vals.ndim != 2 or vals.shape != valid.shape:
            raise ValueError("depth and validity must be matching 2-D arrays")
        bad = valid & ~(np.isfinite(vals) & (vals > 0))
        if np.any(bad):
            r, c = np.argwhere(bad)[0]
            raise InvalidDepth(
                f"non-positive or non-finite depth {vals[r, c]} at valid pixel ({r}, {c})"
            )
        vals.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"file ends inside {what} ({len(buf)} of {n} bytes)")
    return buf


def write_feature_file(path, grid: FeatureGrid) -> None:
    h, w = grid.cells
    flags = FLAG_MASK | FLAG_SALIENCY
    with open(path, "wb") as f:
        f.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, h, w, grid.dim, flags))
        f.write(np.ascontiguousarray(grid.data, dtype="<f4").tobytes())
        f.write(grid.foreground.astype(np.uint8).tobytes())
        f.write(np.ascontiguousarray(grid.saliency, dtype="<f4").tobytes())


def read_feature_file(path, normalize: bool = True) -> FeatureGrid:
    """Load a feature grid; by default descriptors come back unit-normalized.

    Pass ``normalize=False`` to get the stored payload verbatim (useful for
    byte-level round-trip checks). Missing mask or saliency sections default
    to all-foreground and uniform saliency.
    """
    with open(path, "rb") as f:
        header = _read_exact(f, _FEATURE_HEADER.size, "feature header")
        magic, version, h, w, dim, flags = _FEATURE_HEADER.unpack(header)
        if magic != FEATURE_MAGIC:
            raise BadMagic(f"{path}: expected {FEATURE_MAGIC!r}, found {magic!r}")
        if version != FORMAT_VERSION:
            raise VersionUnsupported(f"{path}: feature file version {version}")
        if h < 1 or w < 1 or dim < 1:
            raise SchemaError(f"{path}: non-positive grid dims {h}x{w}x{dim}")

        data = np.frombuffer(
            _read_exact(f, 4 * h * w * dim, "feature data"), dtype="<f4"
        ).reshape(h, w, dim)
        if flags & FLAG_MASK:
            mask = np.frombuffer(_read_exact(f, h * w, "mask"), dtype=np.uint8)
            mask = mask.reshape(h, w) != 0
        else:
            mask = np.ones((h, w), dtype=bool)
        if flags & FLAG_SALIENCY:
            sal = np.frombuffer(_read_exact(f, 4 * h * w, "saliency"), dtype="<f4")
            sal = sal.reshape(h, w)
        else:
            sal = np.ones((h, w), dtype=np.float32)

    grid = FeatureGrid(data.copy(), mask.copy(), sal.copy())
    return normalize_grid(grid) if normalize else grid


def write_depth_file(path, depth: DepthImage) -> None:
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(_DEPTH_HEADER.pack(DEPTH_MAGIC, FORMAT_VERSION, h, w))
        f.write(np.ascontiguousarray(depth.values, dtype="<f4").tobytes())
        f.write(depth.valid.astype(np.uint8).tobytes())


def read_depth_file(path) -> DepthImage:
    with open(path, "rb") as f:
        header = _read_exact(f, _DEPTH_HEADER.size, "depth header")
        magic, version, h, w = _DEPTH_HEADER.unpack(header)
        if magic != DEPTH_MAGIC:
            raise BadMagic(f"{path}: expected {DEPTH_MAGIC!r}, found {magic!r}")
        if version != FORMAT_VERSION:
            raise VersionUnsupported(f"{path}: depth file version {version}")
        if h < 1 or w < 1:
            raise SchemaError(f"{path}: non-positive depth dims {h}x{w}")
        vals = np.frombuffer(_read_exact(f, 4 * h * w, "depth data"), dtype="<f4")
        valid = np.frombuffer(_read_exact(f, h * w, "validity"), dtype=np.uint8)
    return DepthImage(vals.reshape(h, w).copy(), (valid.reshape(h, w) != 0).copy())


def inpaint_depth(depth: DepthImage) -> DepthImage:
    """Fill invalid pixels by diffusion from the valid ones.

    Jacobi sweeps replace each invalid pixel with the mean of its 4-neighbors
    while valid pixels stay clamped, so filled values can never leave the
    [min, max] range of the valid input. Stops when the largest per-sweep
    change drops below INPAINT_REL_TOL times the maximum valid depth, or
    after INPAINT_MAX_SWEEPS sweeps. Raises NoValidDepth when there is
    nothing to diffuse from.
    """
    valid = depth.valid
    if not valid.any():
        raise NoValidDepth("depth image has no valid pixels")
    if valid.all():
        return depth

    vals = np.where(valid, depth.values.astype(np.float64), float(depth.values[valid].mean()))
    tol = INPAINT_REL_TOL * float(depth.values[valid].max())
    hole = ~valid
    for _ in range(INPAINT_MAX_SWEEPS):
        acc = np.zeros_like(vals)
        cnt = np.zeros_like(vals)
        acc[1:, :] += vals[:-1, :]
        cnt[1:, :] += 1
        acc[:-1, :] += vals[1:, :]
        cnt[:-1, :] += 1
        acc[:, 1:] += vals[:, :-1]
        cnt[:, 1:] += 1
        acc[:, :-1] += vals[:, 1:]
        cnt[:, :-1] += 1
        new = acc / cnt
        delta = np.abs(new[hole] - vals[hole]).max()
        vals[hole] = new[hole]
        if delta < tol:
            break
    return DepthImage(vals.astype(np.float32), np.ones_like(valid))


@dataclass(frozen=True)
class FrameBundle:
    """Everything the pipeline needs from one view."""

    frame_id: str
    features: FeatureGrid
    depth: DepthImage
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransformSE3
    crop: CropRect

    def __post_init__(self):
        if (
            self.crop.x + self.crop.w > self.intrinsics.width
            or self.crop.y + self.crop.h > self.intrinsics.height
        ):
            raise ValueError(
                f"frame {self.frame_id}: crop {self.crop} exceeds "
                f"{self.intrinsics.width}x{self.intrinsics.height} image"
            )


@dataclass(frozen=True)
class FrameRecord:
    """One frame's entry in a sequence manifest (paths not yet loaded)."""

    frame_id: str
    feature_path: Path
    depth_path: Path
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransformSE3
    crop: CropRect


@dataclass(frozen=True)
class SequenceManifest:
    category: str
    sequence_id: str
    frames: tuple[FrameRecord, ...]
    canonical_alignment: Optional[RigidTransformSim3] = None
    scene_scale: Optional[float] = None


def sim3_to_json(t: RigidTransformSim3) -> dict:
    return {
        "rotation": [float(v) for v in t.rotation.matrix.ravel()],
        "translation": [float(v) for v in t.translation],
        "scale": float(t.scale),
    }


def sim3_from_json(obj: dict, where: str) -> RigidTransformSim3:
    try:
        rot = np.array(obj["rotation"], dtype=np.float64).reshape(3, 3)
        trans = np.array(obj["translation"], dtype=np.float64)
        scale = float(obj["scale"])
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{where}: malformed similarity transform: {e}") from e
    try:
        return RigidTransformSim3(_rotation_from_loaded(rot, where), trans, scale)
    except ValueError as e:
        raise SchemaError(f"{where}: {e}") from e


def _rotation_from_loaded(m: np.ndarray, where: str) -> Rotation3:
    """Accept file rotations with float-noise dets, reject real reflections.

    Determinants inside the repair band around +1 are projected back onto
    the rotation group; anything further off is a data error.
    """
    det = float(np.linalg.det(m))
    if abs(det - 1.0) > geom.DET_REPAIR_BAND:
        raise SchemaError(f"{where}: rotation determinant {det:.6f} out of range")
    try:
        return Rotation3(m)
    except ValueError:
        return geom.project_to_rotation(m)


def extrinsics_to_json(t: RigidTransformSE3) -> list[float]:
    return [float(v) for v in t.matrix().ravel()]


def extrinsics_from_json(values, where: str) -> RigidTransformSE3:
    try:
        m = np.array(values, dtype=np.float64).reshape(4, 4)
    except (TypeError, ValueError) as e:
        raise SchemaError(f"{where}: extrinsics must be 16 row-major floats") from e
    if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
        raise SchemaError(f"{where}: extrinsics last row must be [0, 0, 0, 1]")
    return RigidTransformSE3(_rotation_from_loaded(m[:3, :3], where), m[:3, 3])


def _intrinsics_from_json(obj: dict, where: str) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(
            fx=float(obj["fx"]),
            fy=float(obj["fy"]),
            cx=float(obj["cx"]),
            cy=float(obj["cy"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{where}: bad intrinsics: {e}") from e


def _crop_from_json(obj: dict, where: str) -> CropRect:
    try:
        return CropRect(x=int(obj["x"]), y=int(obj["y"]), w=int(obj["w"]), h=int(obj["h"]))
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{where}: bad crop: {e}") from e


def write_sequence_manifest(path, manifest: SequenceManifest) -> None:
    """Serialize a manifest with frame paths relative to the manifest dir."""
    path = Path(path)
    obj = {
        "category": manifest.category,
        "sequence_id": manifest.sequence_id,
        "canonical_alignment": (
            sim3_to_json(manifest.canonical_alignment)
            if manifest.canonical_alignment is not None
            else None
        ),
        "frames": [
            {
                "frame_id": fr.frame_id,
                "feature_path": str(fr.feature_path),
                "depth_path": str(fr.depth_path),
                "intrinsics": {
                    "fx": fr.intrinsics.fx,
                    "fy": fr.intrinsics.fy,
                    "cx": fr.intrinsics.cx,
                    "cy": fr.intrinsics.cy,
                    "width": fr.intrinsics.width,
                    "height": fr.intrinsics.height,
                },
                "extrinsics": extrinsics_to_json(fr.extrinsics),
                "crop": {"x": fr.crop.x, "y": fr.crop.y, "w": fr.crop.w, "h": fr.crop.h},
            }
            for fr in manifest.frames
        ],
    }
    if manifest.scene_scale is not None:
        obj["scene_scale"] = manifest.scene_scale
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


class LoadedSequence:
    """A parsed manifest plus lazy access to its frame payloads."""

    def __init__(self, manifest: SequenceManifest, root: Path):
        self.manifest = manifest
        self.root = root
        self._by_id = {fr.frame_id: fr for fr in manifest.frames}

    def frame_ids(self) -> list[str]:
        return [fr.frame_id for fr in self.manifest.frames]

    def frame(self, frame_id: str) -> FrameBundle:
        if frame_id not in self._by_id:
            raise SchemaError(
                f"sequence {self.manifest.sequence_id} has no frame {frame_id!r}"
            )
        rec = self._by_id[frame_id]
        features = read_feature_file(self.root / rec.feature_path)
        depth = read_depth_file(self.root / rec.depth_path)
        return FrameBundle(
            frame_id=rec.frame_id,
            features=features,
            depth=depth,
            intrinsics=rec.intrinsics,
            extrinsics=rec.extrinsics,
            crop=rec.crop,
        )


def load_sequence(manifest_path) -> LoadedSequence:
    """Parse and validate a sequence manifest.

    Frame ids must be unique and every referenced payload file must exist;
    rotations with determinants outside the repair band are rejected rather
    than silently fixed.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    try:
        obj = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{manifest_path}: invalid JSON: {e}") from e

    for key in ("category", "sequence_id", "frames"):
        if key not in obj:
            raise SchemaError(f"{manifest_path}: missing key {key!r}")

    root = manifest_path.parent
    frames = []
    seen = set()
    for i, fr in enumerate(obj["frames"]):
        where = f"{manifest_path} frame[{i}]"
        try:
            frame_id = str(fr["frame_id"])
            feature_path = Path(fr["feature_path"])
            depth_path = Path(fr["depth_path"])
        except (KeyError, TypeError) as e:
            raise SchemaError(f"{where}: {e}") from e
        if frame_id in seen:
            raise SchemaError(f"{manifest_path}: duplicate frame id {frame_id!r}")
        seen.add(frame_id)
        for p in (feature_path, depth_path):
            if not (root / p).is_file():
                raise MissingFile(f"{where}: referenced file missing: {root / p}")
        where = f"{manifest_path} frame {frame_id!r}"
        frames.append(
            FrameRecord(
                frame_id=frame_id,
                feature_path=feature_path,
                depth_path=depth_path,
                intrinsics=_intrinsics_from_json(fr.get("intrinsics", {}), where),
                extrinsics=extrinsics_from_json(fr.get("extrinsics"), where),
                crop=_crop_from_json(fr.get("crop", {}), where),
            )
        )

    alignment = None
    if obj.get("canonical_alignment") is not None:
        alignment = sim3_from_json(obj["canonical_alignment"], str(manifest_path))
    scene_scale = float(obj["scene_scale"]) if "scene_scale" in obj else None

    manifest = SequenceManifest(
        category=str(obj["category"]),
        sequence_id=str(obj["sequence_id"]),
        frames=tuple(frames),
        canonical_alignment=alignment,
        scene_scale=scene_scale,
    )
    return LoadedSequence(manifest, root)


class Dataset:
    """Directory of sequences laid out as root/<category>/<sequence>/manifest.json."""

    def __init__(self, root):
        self.root = Path(root)
        self._cache: dict[tuple[str, str], LoadedSequence] = {}

    def sequence(self, category: str, sequence_id: str) -> LoadedSequence:
        key = (category, sequence_id)
        if key not in self._cache:
            self._cache[key] = load_sequence(
                self.root / category / sequence_id / "manifest.json"
            )
        return self._cache[key]

"""Masks, label maps, joints and the small amount of geometry shared by every stage.

Coordinates follow one convention everywhere: ``x`` is the column, ``y`` is the
row, origin at the top-left pixel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

JOINT_NAMES = (
    "forehead",
    "neck",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)
N_JOINTS = len(JOINT_NAMES)


class InvalidInputError(ValueError):
    """Raised when an operation receives arguments outside its contract."""


class ParseError(ValueError):
    """Raised when a serialized record cannot be decoded."""


class SegmentMask:
    """Immutable binary mask over a ``height x width`` grid.

    A mask with no set pixels is the null segment (used for invisible parts).
    """

    def __init__(self, bits: np.ndarray):
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise InvalidInputError(f"mask must be a non-empty 2-D array, got shape {bits.shape}")
        if bits.flags.writeable:
            bits = bits.copy()
            bits.flags.writeable = False
        self.bits = bits

    @classmethod
    def null(cls, width: int, height: int) -> "SegmentMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @cached_property
    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def is_null(self) -> bool:
        return self.area == 0

    @cached_property
    def bbox(self) -> tuple[int, int, int, int] | None:
        """Tight ``(x0, y0, x1, y1)`` box, inclusive; ``None`` for the null segment."""
        if self.area == 0:
            return None
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])

    @cached_property
    def key(self) -> bytes:
        return np.packbits(self.bits).tobytes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SegmentMask):
            return NotImplemented
        return self.shape == other.shape and self.key == other.key

    def __hash__(self) -> int:
        return hash((self.shape, self.key))

    def __repr__(self) -> str:
        return f"SegmentMask({self.width}x{self.height}, area={self.area}, bbox={self.bbox})"


def _check_same_shape(a: SegmentMask, b: SegmentMask) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def iou(a: SegmentMask, b: SegmentMask) -> float:
    """Intersection over union. Two null segments have IoU 1, null vs non-null 0."""
    _check_same_shape(a, b)
    if a.area == 0 or b.area == 0:
        return 1.0 if a.area == b.area else 0.0
    inter = int(np.count_nonzero(a.bits & b.bits))
    return inter / (a.area + b.area - inter)


def mask_union(children: list[SegmentMask]) -> SegmentMask:
    if not children:
        raise InvalidInputError("mask_union needs at least one mask")
    out = children[0].bits.copy()
    for m in children[1:]:
        _check_same_shape(children[0], m)
        out |= m.bits
    return SegmentMask(out)


@lru_cache(maxsize=64)
def disc(radius: int) -> np.ndarray:
    """Euclidean disc structuring element ``{(dx, dy): dx^2 + dy^2 <= r^2}``."""
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    d = (xx * xx + yy * yy) <= r * r
    d.flags.writeable = False
    return d


def morph(mask: SegmentMask, radius: int, mode: str) -> SegmentMask:
    """Erode or dilate with a Euclidean disc. Pixels outside the frame count as background."""
    if radius < 0:
        raise InvalidInputError("radius must be >= 0")
    if mode not in ("erode", "dilate"):
        raise InvalidInputError(f"unknown morphology mode {mode!r}")
    if radius == 0 or mask.area == 0:
        return mask
    se = disc(radius)
    if mode == "erode":
        out = ndimage.binary_erosion(mask.bits, structure=se, border_value=0)
    else:
        out = ndimage.binary_dilation(mask.bits, structure=se)
    return SegmentMask(out)


def centroid(mask: SegmentMask) -> tuple[float, float]:
    if mask.area == 0:
        raise InvalidInputError("centroid of the null segment is undefined")
    ys, xs = np.nonzero(mask.bits)
    return float(xs.mean()), float(ys.mean())


# --- run-length encoding -------------------------------------------------------


def rle_encode(mask: SegmentMask) -> dict:
    """Row-major RLE; ``runs`` alternate background/foreground counts starting with background.

    The null segment encodes to an empty run list.
    """
    flat = mask.bits.ravel()
    if not flat.any():
        return {"w": mask.width, "h": mask.height, "runs": []}
    padded = np.concatenate([[False], flat, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    # edges alternate start/end of foreground runs
    bounds = np.concatenate([[0], edges, [flat.size]])
    runs = np.diff(bounds)
    if runs[-1] == 0:
        runs = runs[:-1]
    return {"w": mask.width, "h": mask.height, "runs": [int(r) for r in runs]}


def rle_decode(record: dict) -> SegmentMask:
    try:
        w, h, runs = int(record["w"]), int(record["h"]), record["runs"]
        runs = [int(r) for r in runs]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed RLE record: {exc}") from exc
    if w < 1 or h < 1:
        raise ParseError("RLE dimensions must be positive")
    if any(r < 0 for r in runs) or sum(runs) > w * h:
        raise ParseError("RLE runs are negative or overflow the grid")
    flat = np.zeros(w * h, dtype=bool)
    pos = 0
    for i, r in enumerate(runs):
        if i % 2 == 1:
            flat[pos : pos + r] = True
        pos += r
    return SegmentMask(flat.reshape(h, w))


# --- images, label maps, joints, potentials -----------------------------------


@dataclass(frozen=True)
class ImageRGB:
    pixels: np.ndarray  # (H, W, 3) float64 in [0, 1]

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidInputError(f"image must be (H, W, 3), got {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise InvalidInputError("image channels must lie in [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_uint8(self) -> np.ndarray:
        return np.round(self.pixels * 255.0).astype(np.uint8)

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "ImageRGB":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray  # (H, W) int, 0 = background

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise InvalidInputError("label map must be 2-D")
        if lab.size and lab.min() < 0:
            raise InvalidInputError("label values must be non-negative")
        lab = lab.astype(np.int64)
        lab.flags.writeable = False
        object.__setattr__(self, "labels", lab)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def part_mask(self, part: int) -> SegmentMask:
        return SegmentMask(self.labels == part)


@dataclass(frozen=True)
class PoseJoints:
    xy: np.ndarray  # (14, 2) float64, columns (x, y)

    def __post_init__(self):
        xy = np.array(self.xy, dtype=np.float64)
        if xy.shape != (N_JOINTS, 2):
            raise InvalidInputError(f"expected {N_JOINTS} joints of (x, y), got shape {xy.shape}")
        if not np.all(np.isfinite(xy)):
            raise InvalidInputError("joint coordinates must be finite")
        xy.flags.writeable = False
        object.__setattr__(self, "xy", xy)

    def translated(self, dx: float, dy: float) -> "PoseJoints":
        return PoseJoints(self.xy + np.array([dx, dy]))


@dataclass(frozen=True)
class PotentialStack:
    """``P + 1`` per-class score maps in [0, 1]; index 0 is background."""

    maps: np.ndarray  # (P+1, H, W) float

    def __post_init__(self):
        maps = np.array(self.maps, dtype=np.float64)
        if maps.ndim != 3 or maps.shape[0] < 2:
            raise InvalidInputError("potential stack must be (P+1, H, W) with P >= 1")
        if maps.min() < 0.0 or maps.max() > 1.0:
            raise InvalidInputError("potential values must lie in [0, 1]")
        maps.flags.writeable = False
        object.__setattr__(self, "maps", maps)

    @property
    def n_maps(self) -> int:
        return self.maps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1:]

    @cached_property
    def argmax_labels(self) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. ties go to the lowest index
        return np.argmax(self.maps, axis=0)

    @cached_property
    def argmax_masks(self) -> tuple[SegmentMask, ...]:
        lab = self.argmax_labels
        return tuple(SegmentMask(lab == j) for j in range(self.n_maps))


# --- file formats --------------------------------------------------------------


def save_image_png(img: ImageRGB, path: Path) -> None:
    Image.fromarray(img.to_uint8(), mode="RGB").save(path)


def load_image_png(path: Path) -> ImageRGB:
    with Image.open(path) as im:
        return ImageRGB.from_uint8(np.asarray(im.convert("RGB")))


def save_label_png(lab: LabelMap, path: Path) -> None:
    if lab.labels.max(initial=0) > 255:
        raise InvalidInputError("label maps with more than 255 classes cannot be stored as PNG")
    Image.fromarray(lab.labels.astype(np.uint8), mode="L").save(path)


def load_label_png(path: Path) -> LabelMap:
    with Image.open(path) as im:
        return LabelMap(np.asarray(im).astype(np.int64))


def joints_to_record(image_id: str, joints: PoseJoints) -> dict:
    return {"image_id": image_id, "joints": [[float(x), float(y)] for x, y in joints.xy]}


def joints_from_record(record: dict) -> tuple[str, PoseJoints]:
    try:
        return str(record["image_id"]), PoseJoints(np.array(record["joints"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed joints record: {exc}") from exc


def write_jsonl(path: Path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def read_jsonl(path: Path) -> list[dict]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return out

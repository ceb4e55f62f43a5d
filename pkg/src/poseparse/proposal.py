"""Pose-seeded segment proposals.

Each joint seeds a 5x5 grid (10 px spacing) over the 40x40 patch around it; every seed is
grown at 8 colour thresholds, and candidates enter the pool only when they overlap every
existing member with IoU below 0.95 (first come, first kept).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .core import (
    ImageRGB,
    InvalidInputError,
    PoseJoints,
    SegmentMask,
    read_jsonl,
    rle_decode,
    rle_encode,
    write_jsonl,
)

GRID_OFFSETS = (-20, -10, 0, 10, 20)
DEDUP_IOU = 0.95
DEFAULT_THRESHOLDS = tuple(float(0.02 * (0.5 / 0.02) ** (i / 7)) for i in range(8))


@dataclass
class SegmentPool:
    segments: list[SegmentMask] = field(default_factory=list)
    provenance: list[tuple[int, int, int]] = field(default_factory=list)
    n_candidates: int = 0

    def __len__(self) -> int:
        return len(self.segments)


def seed_grid(joint, width: int, height: int) -> list[tuple[int, int]]:
    """25 ``(x, y)`` seeds around ``joint``, clamped into the frame."""
    jx, jy = int(round(float(joint[0]))), int(round(float(joint[1])))
    pts = []
    for dy in GRID_OFFSETS:
        for dx in GRID_OFFSETS:
            x = min(max(jx + dx, 0), width - 1)
            y = min(max(jy + dy, 0), height - 1)
            pts.append((x, y))
    return pts


def uniform_seeds(n_seeds: int, width: int, height: int) -> list[tuple[int, int]]:
    """``n_seeds`` points on a regular grid covering the whole frame (the unguided baseline)."""
    nx = max(1, int(round(np.sqrt(n_seeds * width / height))))
    ny = int(np.ceil(n_seeds / nx))
    pts = []
    for iy in range(ny):
        for ix in range(nx):
            x = int((ix + 0.5) * width / nx)
            y = int((iy + 0.5) * height / ny)
            pts.append((min(x, width - 1), min(y, height - 1)))
    return pts[:n_seeds]


@numba.njit(cache=True)
def _grow(pixels, sx, sy, thr2, out):
    h, w = out.shape
    qy = np.empty(h * w, np.int64)
    qx = np.empty(h * w, np.int64)
    head = 0
    tail = 0
    out[sy, sx] = True
    qy[tail] = sy
    qx[tail] = sx
    tail += 1
    s0 = pixels[sy, sx, 0]
    s1 = pixels[sy, sx, 1]
    s2 = pixels[sy, sx, 2]
    n = 1.0
    dys = (-1, 0, 0, 1)
    dxs = (0, -1, 1, 0)
    while head < tail:
        y = qy[head]
        x = qx[head]
        head += 1
        for k in range(4):
            ny = y + dys[k]
            nx = x + dxs[k]
            if ny < 0 or ny >= h or nx < 0 or nx >= w or out[ny, nx]:
                continue
            d0 = pixels[ny, nx, 0] - s0 / n
            d1 = pixels[ny, nx, 1] - s1 / n
            d2 = pixels[ny, nx, 2] - s2 / n
            if d0 * d0 + d1 * d1 + d2 * d2 <= thr2:
                out[ny, nx] = True
                s0 += pixels[ny, nx, 0]
                s1 += pixels[ny, nx, 1]
                s2 += pixels[ny, nx, 2]
                n += 1.0
                qy[tail] = ny
                qx[tail] = nx
                tail += 1
    return tail


def grow_segment(image: ImageRGB, seed, threshold: float) -> SegmentMask:
    """BFS region growing from ``seed`` over 4-neighbours.

    A neighbour joins when its RGB distance to the current region mean is at most
    ``threshold``; rejected pixels can still join later through another neighbour.
    """
    if threshold <= 0:
        raise InvalidInputError("threshold must be positive")
    x, y = int(seed[0]), int(seed[1])
    if not (0 <= x < image.width and 0 <= y < image.height):
        raise InvalidInputError(f"seed {(x, y)} lies outside the {image.width}x{image.height} image")
    out = np.zeros((image.height, image.width), dtype=np.bool_)
    _grow(np.ascontiguousarray(image.pixels), x, y, float(threshold) ** 2, out)
    return SegmentMask(out)


class _PackedPool:
    """Pool members as packed 64-bit rows for fast overlap counting."""

    def __init__(self, n_pixels: int):
        self.n_words = (n_pixels + 63) // 64
        self.words = np.zeros((64, self.n_words), dtype=np.uint64)
        self.areas = np.zeros(64, dtype=np.int64)
        self.size = 0

    def pack(self, bits: np.ndarray) -> np.ndarray:
        flat = bits.ravel()
        pad = self.n_words * 64 - flat.size
        if pad:
            flat = np.concatenate([flat, np.zeros(pad, dtype=bool)])
        return np.packbits(flat, bitorder="little").view(np.uint64)

    def max_iou(self, packed: np.ndarray, area: int) -> float:
        if self.size == 0:
            return 0.0
        areas = self.areas[: self.size]
        # IoU >= t forces the area ratio to be >= t
        sel = np.flatnonzero((areas >= DEDUP_IOU * area) & (areas * DEDUP_IOU <= area))
        if sel.size == 0:
            return 0.0
        inter = np.bitwise_count(self.words[sel] & packed[None, :]).sum(axis=1)
        ious = inter / (areas[sel] + area - inter)
        return float(ious.max())

    def add(self, packed: np.ndarray, area: int) -> None:
        if self.size == len(self.areas):
            self.words = np.concatenate([self.words, np.zeros_like(self.words)])
            self.areas = np.concatenate([self.areas, np.zeros_like(self.areas)])
        self.words[self.size] = packed
        self.areas[self.size] = area
        self.size += 1


def build_pool_from_seeds(
    image: ImageRGB, seeds: list[tuple[int, tuple[int, int]]], thresholds=DEFAULT_THRESHOLDS
) -> SegmentPool:
    """Grow every ``(group, seed)`` at each threshold and deduplicate in generation order."""
    thresholds = tuple(float(t) for t in thresholds)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise InvalidInputError("thresholds must be strictly increasing")
    pixels = np.ascontiguousarray(image.pixels)
    pool = SegmentPool()
    packed_pool = _PackedPool(image.width * image.height)
    seen: set[bytes] = set()
    buf = np.zeros((image.height, image.width), dtype=np.bool_)
    counters: dict[int, int] = {}
    for group, (sx, sy) in seeds:
        seed_idx = counters.get(group, 0)
        counters[group] = seed_idx + 1
        for ti, thr in enumerate(thresholds):
            pool.n_candidates += 1
            buf[:] = False
            area = _grow(pixels, sx, sy, thr * thr, buf)
            packed = packed_pool.pack(buf)
            key = packed.tobytes()
            if key in seen:
                continue
            seen.add(key)
            if packed_pool.max_iou(packed, area) >= DEDUP_IOU:
                continue
            packed_pool.add(packed, area)
            pool.segments.append(SegmentMask(buf.copy()))
            pool.provenance.append((group, seed_idx, ti))
    return pool


def build_pool(image: ImageRGB, joints: PoseJoints, thresholds=DEFAULT_THRESHOLDS) -> SegmentPool:
    """Pose-guided pool: joints in fixed order, seeds in grid order, thresholds ascending."""
    if len(thresholds) != 8:
        raise InvalidInputError("exactly 8 thresholds are required")
    seeds = [(j, s) for j, joint in enumerate(joints.xy) for s in seed_grid(joint, image.width, image.height)]
    return build_pool_from_seeds(image, seeds, thresholds)


def build_unguided_pool(image: ImageRGB, n_seeds: int = 14 * 25, thresholds=DEFAULT_THRESHOLDS) -> SegmentPool:
    """Baseline pool with the same seed budget spread uniformly over the frame."""
    seeds = [(-1, s) for s in uniform_seeds(n_seeds, image.width, image.height)]
    return build_pool_from_seeds(image, seeds, thresholds)


def inject_segments(pool: SegmentPool, segments: list[SegmentMask]) -> SegmentPool:
    """Copy of ``pool`` with extra non-null segments appended (provenance ``(-2, i, -1)``), still deduplicated."""
    out = SegmentPool(list(pool.segments), list(pool.provenance), pool.n_candidates)
    from .core import iou

    for i, seg in enumerate(segments):
        if seg.area == 0:
            continue
        dup = [k for k, s in enumerate(out.segments) if iou(s, seg) >= DEDUP_IOU]
        for k in reversed(dup):
            del out.segments[k]
            del out.provenance[k]
        out.segments.append(seg)
        out.provenance.append((-2, i, -1))
    return out


def write_pool(path: str | Path, pool: SegmentPool) -> None:
    write_jsonl(
        Path(path),
        [{"mask": rle_encode(s), "provenance": list(p)} for s, p in zip(pool.segments, pool.provenance)],
    )


def read_pool(path: str | Path) -> SegmentPool:
    recs = read_jsonl(Path(path))
    return SegmentPool(
        [rle_decode(r["mask"]) for r in recs],
        [tuple(int(v) for v in r["provenance"]) for r in recs],
        len(recs),
    )

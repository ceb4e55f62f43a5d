"""Segment descriptors: pose-based geometry (PBG), its dictionary coding, appearance pools
and potential-map statistics, plus the parent/child geometry used on vertical edges."""

from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import (
    N_JOINTS,
    ImageRGB,
    InvalidInputError,
    PoseJoints,
    PotentialStack,
    SegmentMask,
    centroid,
    iou,
    morph,
)

PBG_RADIUS = 10
N_SECTORS = 8
N_SCALES = 3
PBG_BLOCK = N_SECTORS * N_SCALES
PBG_DIM = N_JOINTS * PBG_BLOCK
O2P_DIM = 28
SKIN_DIM = 3
GEOM_DIM = 6
DEFAULT_LAMBDA = 4.0
BLOCK_NAMES = ("o2p", "skin", "fcn", "pbg", "c-pbg")


# --- PBG -----------------------------------------------------------------------


def sector(dx: float, dy_up: float) -> int:
    """Index 0..7 of the 45-degree sector containing direction ``(dx, dy_up)``.

    Sector 0 spans (0, 45] degrees counter-clockwise from east, angle 0 included; each
    boundary angle belongs to the lower-index sector. The zero vector maps to sector 0.
    """
    if dy_up > 0:
        if dx >= dy_up:
            return 0
        if dx >= 0:
            return 1
        if -dx <= dy_up:
            return 2
        return 3
    if dy_up == 0:
        return 0 if dx >= 0 else 3
    a = -dy_up
    if dx < 0:
        return 4 if -dx >= a else 5
    if dx == 0:
        return 5
    return 6 if dx <= a else 7


def _erosion_depth(bits: np.ndarray) -> np.ndarray:
    """Distance from each pixel to the nearest non-mask pixel, the frame border counted as non-mask."""
    padded = np.pad(bits, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def pbg_bins(segment: SegmentMask, joints: PoseJoints) -> np.ndarray:
    """Active bin (0..23) per joint: ``scale * 8 + sector``."""
    if segment.area == 0:
        raise InvalidInputError("PBG of the null segment is undefined")
    h, w = segment.shape
    depth = None
    ys, xs = np.nonzero(segment.bits)
    # directions in exact arithmetic, scaled by the area, so integer shifts never move a boundary case
    n, sx, sy = len(xs), int(xs.sum()), int(ys.sum())
    out = np.empty(N_JOINTS, dtype=np.int64)
    r2 = PBG_RADIUS * PBG_RADIUS
    for j, (jx, jy) in enumerate(joints.xy):
        px, py = int(np.floor(jx + 0.5)), int(np.floor(jy + 0.5))
        scale = 2
        if 0 <= px < w and 0 <= py < h and segment.bits[py, px]:
            if depth is None:
                depth = _erosion_depth(segment.bits)
            # erode(s, r) keeps p iff every pixel within distance r is in s
            scale = 0 if depth[py, px] > PBG_RADIUS else 1
        elif int(((xs - px) ** 2 + (ys - py) ** 2).min()) <= r2:
            scale = 1
        out[j] = scale * N_SECTORS + sector(Fraction(float(jx)) * n - sx, sy - Fraction(float(jy)) * n)
    return out


def pbg(segment: SegmentMask, joints: PoseJoints) -> np.ndarray:
    """336 binary values, one set bit per 24-bin joint block."""
    bins = pbg_bins(segment, joints)
    out = np.zeros(PBG_DIM, dtype=np.float64)
    out[np.arange(N_JOINTS) * PBG_BLOCK + bins] = 1.0
    return out


# --- dictionaries and coding -----------------------------------------------------


@dataclass
class Dictionary:
    prototypes: np.ndarray  # (n, dim)
    owner: str = ""

    def __post_init__(self):
        self.prototypes = np.atleast_2d(np.asarray(self.prototypes, dtype=np.float64))
        if self.prototypes.shape[0] < 1:
            raise InvalidInputError("a dictionary needs at least one prototype")

    @property
    def size(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def to_dict(self) -> dict:
        return {"owner": self.owner, "prototypes": self.prototypes.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Dictionary":
        return cls(np.array(d["prototypes"], dtype=np.float64), d.get("owner", ""))


def kmeans(x: np.ndarray, n_clusters: int, rng_seed, max_iter: int = 100, tol: float = 1e-6):
    """Seeded k-means++ plus Lloyd iterations; returns ``(centroids, labels)``.

    Empty clusters are re-seeded with the point farthest from its current centroid.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n_clusters < 1 or n < n_clusters:
        raise InvalidInputError(f"need at least {n_clusters} samples, got {n}")
    rng = np.random.default_rng(rng_seed)
    centers = np.empty((n_clusters, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for k in range(1, n_clusters):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[k] = x[idx]
        d2 = np.minimum(d2, ((x - centers[k]) ** 2).sum(axis=1))
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dist, axis=1)
        new = centers.copy()
        for k in range(n_clusters):
            members = labels == k
            if members.any():
                new[k] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(dist[np.arange(n), labels]))
                new[k] = x[far]
                labels[far] = k
                dist[far] = 0.0
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return centers, np.argmin(dist, axis=1)


def learn_dictionary(features, n_clusters: int, rng_seed, owner: str = "") -> Dictionary:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < n_clusters:
        raise InvalidInputError(f"need at least {n_clusters} features to learn a dictionary")
    centers, _ = kmeans(x, n_clusters, rng_seed)
    return Dictionary(centers, owner)


def code_pbg(feat: np.ndarray, dictionary: Dictionary, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Soft assignment ``[a_1..a_N, a_1/sum(a)..a_N/sum(a)]`` with ``a_m = exp(-lam * ||feat - b_m||)``."""
    if lam <= 0:
        raise InvalidInputError("lambda must be positive")
    feat = np.asarray(feat, dtype=np.float64)
    if feat.shape[-1] != dictionary.dim:
        raise InvalidInputError(f"feature dim {feat.shape[-1]} != dictionary dim {dictionary.dim}")
    d = np.sqrt(((dictionary.prototypes - feat) ** 2).sum(axis=1))
    a = np.exp(-lam * d)
    s = a.sum()
    # every a_m underflows only for absurd distances; fall back to a uniform split
    a_norm = a / s if s > 0 else np.full_like(a, 1.0 / a.size)
    return np.concatenate([a, a_norm])


def pairwise_code(feat_a, feat_b, pair_dict: Dictionary | None, lam: float = DEFAULT_LAMBDA, n_pp: int = 8) -> np.ndarray:
    """Code of the concatenated PBG pair; ``None`` features mark a null segment."""
    size = pair_dict.size if pair_dict is not None else n_pp
    if feat_a is None or feat_b is None or pair_dict is None:
        return np.zeros(2 * size)
    return code_pbg(np.concatenate([feat_a, feat_b]), pair_dict, lam)


def pairwise_cpbg(
    seg_a: SegmentMask, seg_b: SegmentMask, joints: PoseJoints, pair_dict: Dictionary, lam: float = DEFAULT_LAMBDA
) -> np.ndarray:
    if (seg_a.area == 0) != (seg_b.area == 0):
        raise InvalidInputError("pairwise C-PBG needs both segments non-null or both null")
    if seg_a.area == 0:
        return np.zeros(2 * pair_dict.size)
    if pair_dict.dim != 2 * PBG_DIM:
        raise InvalidInputError(f"pair dictionary must have dim {2 * PBG_DIM}")
    return code_pbg(np.concatenate([pbg(seg_a, joints), pbg(seg_b, joints)]), pair_dict, lam)


def assign_type(feat: np.ndarray, part_dict: Dictionary) -> int:
    """1-based index of the nearest prototype (largest code); ties go to the lowest index."""
    d = ((part_dict.prototypes - feat) ** 2).sum(axis=1)
    return int(np.argmin(d)) + 1


def assign_part_type(segment: SegmentMask, joints: PoseJoints, part_dict: Dictionary) -> int:
    if segment.area == 0:
        return 0
    return assign_type(pbg(segment, joints), part_dict)


# --- appearance ------------------------------------------------------------------


def _pixel_descriptors(image: ImageRGB) -> np.ndarray:
    px = image.pixels
    gray = px.mean(axis=2)
    gy, gx = np.gradient(gray)
    h, w = gray.shape
    yy, xx = np.mgrid[0:h, 0:w]
    return np.stack([px[..., 0], px[..., 1], px[..., 2], np.abs(gx), np.abs(gy), xx / w, yy / h], axis=-1)


_TRIU = np.triu_indices(7)


def o2p_pool(image: ImageRGB, segment: SegmentMask, descriptors: np.ndarray | None = None) -> np.ndarray:
    """Upper triangle (row-major) of the mean outer product of per-pixel descriptors."""
    if segment.area == 0:
        raise InvalidInputError("O2P of the null segment is undefined")
    if descriptors is None:
        descriptors = _pixel_descriptors(image)
    d = descriptors[segment.bits]
    m = d.T @ d / d.shape[0]
    return m[_TRIU]


@dataclass
class SkinModel:
    """Gaussian over normalized-rg chromaticity; likelihood scaled so the mode is 1."""

    mean: np.ndarray = field(default_factory=lambda: np.array([0.45, 0.33]))
    cov: np.ndarray = field(default_factory=lambda: np.eye(2) * 1e-3)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        self._prec = np.linalg.inv(self.cov)

    @staticmethod
    def chromaticity(rgb: np.ndarray) -> np.ndarray:
        rgb = np.asarray(rgb, dtype=np.float64)
        s = rgb.sum(axis=-1, keepdims=True)
        safe = np.where(s > 0, s, 1.0)
        rg = rgb[..., :2] / safe
        return np.where(s > 0, rg, 1.0 / 3.0)

    def likelihood(self, rgb: np.ndarray) -> np.ndarray:
        d = self.chromaticity(rgb) - self.mean
        m = np.einsum("...i,ij,...j->...", d, self._prec, d)
        return np.clip(np.exp(-0.5 * m), 0.0, 1.0)

    @classmethod
    def fit(cls, pixels: np.ndarray, reg: float = 1e-5) -> "SkinModel":
        rg = cls.chromaticity(np.asarray(pixels).reshape(-1, 3))
        if rg.shape[0] < 3:
            raise InvalidInputError("need at least 3 skin pixels to fit a skin model")
        return cls(rg.mean(axis=0), np.cov(rg.T) + reg * np.eye(2))

    def to_dict(self) -> dict:
        return {"version": 1, "mean": self.mean.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SkinModel":
        return cls(np.array(d["mean"]), np.array(d["cov"]))


def skin_pool(image: ImageRGB, segment: SegmentMask, skin_model: SkinModel, likelihood: np.ndarray | None = None):
    """``[mean, second moment, max]`` of the skin likelihood inside the segment."""
    if segment.area == 0:
        raise InvalidInputError("skin pooling of the null segment is undefined")
    if likelihood is None:
        likelihood = skin_model.likelihood(image.pixels)
    v = likelihood[segment.bits]
    return np.array([v.mean(), (v * v).mean(), v.max()])


def fcn_feature(segment: SegmentMask, potentials: PotentialStack) -> np.ndarray:
    """Per-map mean inside, mean over the 1-px contour band, and IoU with each argmax mask."""
    if segment.area == 0:
        raise InvalidInputError("potential feature of the null segment is undefined")
    if potentials.shape != segment.shape:
        raise InvalidInputError(f"potential stack {potentials.shape} does not match mask {segment.shape}")
    maps = potentials.maps
    inside = maps[:, segment.bits].mean(axis=1)
    band = segment.bits & ~morph(segment, 1, "erode").bits
    contour = maps[:, band].mean(axis=1)
    ious = np.array([iou(segment, m) for m in potentials.argmax_masks])
    return np.concatenate([inside, contour, ious])


# --- assembly ------------------------------------------------------------------


@dataclass
class FeatureLayout:
    names: tuple[str, ...]
    sizes: tuple[int, ...]

    @property
    def offsets(self) -> dict[str, tuple[int, int]]:
        out, pos = {}, 0
        for n, s in zip(self.names, self.sizes):
            out[n] = (pos, pos + s)
            pos += s
        return out

    @property
    def dim(self) -> int:
        return int(sum(self.sizes))

    def block(self, vec: np.ndarray, name: str) -> np.ndarray:
        a, b = self.offsets[name]
        return vec[..., a:b]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "sizes": list(self.sizes)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureLayout":
        return cls(tuple(d["names"]), tuple(int(s) for s in d["sizes"]))


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v / n if n > 0 else v


@dataclass
class FeatureContext:
    """Per-image cached inputs shared by all segments of that image."""

    image: ImageRGB
    joints: PoseJoints
    potentials: PotentialStack
    skin_model: SkinModel
    unary_dict: Dictionary
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        self.descriptors = _pixel_descriptors(self.image)
        self.skin = self.skin_model.likelihood(self.image.pixels)

    @property
    def layout(self) -> FeatureLayout:
        n_maps = self.potentials.n_maps
        return FeatureLayout(BLOCK_NAMES, (O2P_DIM, SKIN_DIM, 3 * n_maps, PBG_DIM, 2 * self.unary_dict.size))


def assemble_feature(
    segment: SegmentMask,
    joints: PoseJoints | None = None,
    potentials: PotentialStack | None = None,
    dicts: Dictionary | None = None,
    lam: float = DEFAULT_LAMBDA,
    *,
    image: ImageRGB | None = None,
    skin_model: SkinModel | None = None,
    context: FeatureContext | None = None,
) -> tuple[np.ndarray, FeatureLayout]:
    """Concatenate the five blocks, L2-normalizing each and then the whole vector.

    Pass a ``FeatureContext`` when featurizing many segments of one image.
    """
    if context is None:
        if image is None or joints is None or potentials is None or dicts is None:
            raise InvalidInputError("assemble_feature needs image, joints, potentials and a dictionary")
        context = FeatureContext(image, joints, potentials, skin_model or SkinModel(), dicts, lam)
    ctx = context
    p = pbg(segment, ctx.joints)
    blocks = [
        o2p_pool(ctx.image, segment, ctx.descriptors),
        skin_pool(ctx.image, segment, ctx.skin_model, ctx.skin),
        fcn_feature(segment, ctx.potentials),
        p,
        code_pbg(p, ctx.unary_dict, ctx.lam),
    ]
    vec = _unit(np.concatenate([_unit(b) for b in blocks]))
    return vec, ctx.layout


def pair_geometry(parent: SegmentMask, child: SegmentMask, image_diag: float | None = None) -> np.ndarray:
    """``[dx, dx^2, dy, dy^2, ds, ds^2]``: centroid displacement over the image diagonal and sqrt area ratio."""
    if parent.area == 0 or child.area == 0:
        return np.zeros(GEOM_DIM)
    if image_diag is None:
        image_diag = float(np.hypot(parent.width, parent.height))
    px, py = centroid(parent)
    cx, cy = centroid(child)
    dx = (cx - px) / image_diag
    dy = (cy - py) / image_diag
    ds = float(np.sqrt(child.area / parent.area))
    return np.array([dx, dx * dx, dy, dy * dy, ds, ds * ds])


# --- serialization ----------------------------------------------------------------


def save_dictionaries(path: str | Path, unary: dict[str, Dictionary], pairs: dict, lam: float) -> None:
    doc = {
        "version": 1,
        "lambda": lam,
        "unary": {k: v.to_dict() for k, v in unary.items()},
        "pairs": [{"pair": list(k), **v.to_dict()} for k, v in pairs.items()],
    }
    Path(path).write_text(json.dumps(doc))


def load_dictionaries(path: str | Path):
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise ValueError(f"unsupported dictionary file version {doc.get('version')}")
    unary = {k: Dictionary.from_dict(v) for k, v in doc["unary"].items()}
    pairs = {tuple(d["pair"]): Dictionary.from_dict(d) for d in doc["pairs"]}
    return unary, pairs, float(doc["lambda"])


def write_feature_matrix(path: str | Path, matrix: np.ndarray, layout: FeatureLayout, extra: dict | None = None):
    path = Path(path)
    arr = np.ascontiguousarray(matrix, dtype="<f4")
    path.write_bytes(arr.tobytes())
    side = {"shape": list(arr.shape), "dtype": "float32", "layout": layout.to_dict(), **(extra or {})}
    path.with_suffix(".json").write_text(json.dumps(side, sort_keys=True))


def read_feature_matrix(path: str | Path) -> tuple[np.ndarray, FeatureLayout, dict]:
    path = Path(path)
    side = json.loads(path.with_suffix(".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(side["shape"]).astype(np.float64)
    return arr, FeatureLayout.from_dict(side["layout"]), side

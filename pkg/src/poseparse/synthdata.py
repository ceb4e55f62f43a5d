"""Deterministic articulated 2-D figures with label maps, joints and oracle potential maps.

Every scene is a pure function of ``(seed, config)``; scene ``i`` of a dataset is
rendered from ``SeedSequence([base_seed, i])`` so scenes can be produced in any order.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .aog.structure import AogStructure, build_default_aog
from .core import (
    ImageRGB,
    LabelMap,
    PoseJoints,
    PotentialStack,
    joints_from_record,
    joints_to_record,
    load_image_png,
    load_label_png,
    read_jsonl,
    save_image_png,
    save_label_png,
    write_jsonl,
)

SCHEMA_VERSION = 1

LIMBS = (
    "left_upper_arm",
    "right_upper_arm",
    "left_forearm",
    "right_forearm",
    "left_thigh",
    "right_thigh",
    "left_shin",
    "right_shin",
)

RENDERED_PARTS = (
    "hair",
    "face",
    "full-body clothes",
    "upper-clothes",
    "left arm",
    "right arm",
    "lower-clothes",
    "left leg skin",
    "right leg skin",
    "left shoe",
    "right shoe",
)

# joints whose neighbourhood each rendered part touches
PART_JOINTS = {
    "hair": ("forehead",),
    "face": ("forehead", "neck"),
    "full-body clothes": ("neck", "left_shoulder", "right_shoulder", "left_hip", "right_hip"),
    "upper-clothes": ("neck", "left_shoulder", "right_shoulder", "left_hip", "right_hip"),
    "left arm": ("left_shoulder", "left_elbow", "left_wrist"),
    "right arm": ("right_shoulder", "right_elbow", "right_wrist"),
    "lower-clothes": ("left_hip", "right_hip", "left_knee", "right_knee"),
    "left leg skin": ("left_knee", "left_ankle"),
    "right leg skin": ("right_knee", "right_ankle"),
    "left shoe": ("left_ankle",),
    "right shoe": ("right_ankle",),
}


class ConfigError(ValueError):
    """Invalid generator configuration."""


class RenderError(RuntimeError):
    """The figure does not fit on the canvas."""


class DatasetError(IOError):
    """Missing or incompatible dataset files."""


class MissingAnnotationError(DatasetError):
    pass


@dataclass
class GeneratorConfig:
    canvas_width: int = 64
    canvas_height: int = 128
    body_scale: tuple[float, float] = (30.0, 34.0)
    # outward angle from the downward vertical for upper limbs, bend relative to the parent limb for
    # lower limbs; radians
    angle_ranges: dict = field(
        default_factory=lambda: {
            "left_upper_arm": (0.10, 0.45),
            "right_upper_arm": (0.10, 0.45),
            "left_forearm": (-0.30, 0.40),
            "right_forearm": (-0.30, 0.40),
            "left_thigh": (0.04, 0.22),
            "right_thigh": (0.04, 0.22),
            "left_shin": (-0.10, 0.10),
            "right_shin": (-0.10, 0.10),
        }
    )
    offset_range: float = 3.0
    full_body_probability: float = 0.3
    invisible_probability: dict = field(
        default_factory=lambda: {"hair": 0.1, "left shoe": 0.05, "right shoe": 0.05, "left arm": 0.05, "right arm": 0.05}
    )
    noise_sigma: float = 0.02
    background_texture: float = 0.12
    min_color_distance: float = 0.25
    palettes: dict = field(
        default_factory=lambda: {
            "hair": [[0.08, 0.06, 0.05], [0.35, 0.2, 0.1], [0.85, 0.75, 0.4], [0.55, 0.55, 0.55]],
            "skin": [[0.96, 0.8, 0.69], [0.87, 0.67, 0.52], [0.76, 0.57, 0.42], [0.55, 0.38, 0.26]],
            "clothes": [
                [0.8, 0.1, 0.1], [0.1, 0.6, 0.15], [0.15, 0.25, 0.8], [0.95, 0.85, 0.1],
                [0.6, 0.15, 0.7], [0.1, 0.7, 0.75], [0.95, 0.95, 0.95], [0.15, 0.15, 0.15],
            ],
            "pants": [[0.1, 0.15, 0.45], [0.3, 0.3, 0.3], [0.05, 0.05, 0.05], [0.6, 0.5, 0.3], [0.2, 0.4, 0.2]],
            "shoes": [[0.05, 0.05, 0.05], [0.98, 0.98, 0.98], [0.4, 0.22, 0.1], [0.7, 0.1, 0.1]],
            "background": [[0.45, 0.6, 0.45], [0.6, 0.6, 0.7], [0.7, 0.65, 0.5], [0.35, 0.45, 0.6]],
        }
    )

    def validate(self) -> None:
        if self.canvas_width < 16 or self.canvas_height < 16:
            raise ConfigError("canvas too small")
        if not self.angle_ranges or set(self.angle_ranges) != set(LIMBS):
            raise ConfigError(f"angle_ranges must name exactly the limbs {LIMBS}")
        for name, (lo, hi) in self.angle_ranges.items():
            if hi < lo:
                raise ConfigError(f"empty angle range for {name}")
        lo, hi = self.body_scale
        if not 0 < lo <= hi:
            raise ConfigError("invalid body_scale range")
        if not 0.0 <= self.full_body_probability <= 1.0:
            raise ConfigError("full_body_probability must be a probability")
        for key in ("hair", "skin", "clothes", "pants", "shoes", "background"):
            if not self.palettes.get(key):
                raise ConfigError(f"palette {key!r} is empty")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["body_scale"] = list(self.body_scale)
        d["angle_ranges"] = {k: list(v) for k, v in self.angle_ranges.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if "body_scale" in d:
            d["body_scale"] = tuple(d["body_scale"])
        if "angle_ranges" in d:
            d["angle_ranges"] = {k: tuple(v) for k, v in d["angle_ranges"].items()}
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "GeneratorConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class FigureSpec:
    body_scale: float
    joint_angles: dict
    clothes_mode: str  # "upper+lower" or "full-body"
    part_colors: dict
    visibility: dict
    center_x: float
    top_y: float


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    background_color: tuple[float, float, float]
    background_seed: int
    figure: FigureSpec
    noise_sigma: float
    background_texture: float = 0.12


@dataclass(frozen=True)
class Scene:
    image_id: str
    image: ImageRGB
    labels: LabelMap
    joints: PoseJoints
    potentials: PotentialStack | None = None


def _color_distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


ADJACENT_COLORS = (
    ("hair", "skin"),
    ("hair", "background"),
    ("skin", "upper-clothes"),
    ("skin", "full-body clothes"),
    ("skin", "lower-clothes"),
    ("skin", "shoes"),
    ("upper-clothes", "lower-clothes"),
    ("upper-clothes", "background"),
    ("full-body clothes", "background"),
    ("lower-clothes", "background"),
    ("lower-clothes", "shoes"),
    ("shoes", "background"),
    ("skin", "background"),
    ("hair", "upper-clothes"),
    ("hair", "full-body clothes"),
)


def sample_figure(rng_seed, ranges: GeneratorConfig | None = None) -> FigureSpec:
    """Sample a figure; deterministic in ``rng_seed``.

    ``rng_seed`` may be an int or a ``numpy.random.SeedSequence``.
    """
    cfg = ranges or GeneratorConfig()
    cfg.validate()
    rng = np.random.default_rng(rng_seed)
    scale = float(rng.uniform(*cfg.body_scale))
    angles = {name: float(rng.uniform(*cfg.angle_ranges[name])) for name in LIMBS}
    mode = "full-body" if rng.random() < cfg.full_body_probability else "upper+lower"
    pal = cfg.palettes

    def pick(key):
        opts = pal[key]
        return tuple(float(c) for c in opts[int(rng.integers(len(opts)))])

    colors: dict = {}
    for _ in range(100):
        colors = {
            "background": pick("background"),
            "hair": pick("hair"),
            "skin": pick("skin"),
            "upper-clothes": pick("clothes"),
            "full-body clothes": pick("clothes"),
            "lower-clothes": pick("pants"),
            "shoes": pick("shoes"),
        }
        if all(_color_distance(colors[a], colors[b]) >= cfg.min_color_distance for a, b in ADJACENT_COLORS):
            break
    else:
        raise ConfigError("palettes cannot satisfy min_color_distance")
    colors["face"] = colors["skin"]
    visibility = {}
    for part in RENDERED_PARTS:
        p = float(cfg.invisible_probability.get(part, 0.0))
        visibility[part] = not (rng.random() < p)
    if mode == "full-body":
        visibility["upper-clothes"] = False
        visibility["lower-clothes"] = False
    else:
        visibility["full-body clothes"] = False
    off = cfg.offset_range
    cx = cfg.canvas_width / 2.0 + float(rng.uniform(-off, off))
    height_est = 3.05 * scale
    top = (cfg.canvas_height - height_est) / 2.0 + float(rng.uniform(-off, off))
    return FigureSpec(
        body_scale=scale,
        joint_angles=angles,
        clothes_mode=mode,
        part_colors=colors,
        visibility=visibility,
        center_x=cx,
        top_y=top,
    )


def skeleton(fig: FigureSpec) -> dict[str, np.ndarray]:
    """Joint positions plus the head centre, in pixel (x, y)."""
    t = fig.body_scale
    rh = 0.22 * t
    neck = np.array([fig.center_x, fig.top_y + 2.0 * rh + 0.05 * t])
    head = neck + np.array([0.0, -rh - 0.05 * t])
    pts = {"head_center": head, "forehead": head + np.array([0.0, -0.5 * rh]), "neck": neck}
    a = fig.joint_angles
    for side, sgn in (("left", 1.0), ("right", -1.0)):
        # person's left is the viewer's right
        sh = neck + np.array([sgn * 0.38 * t, 0.12 * t])
        th = a[f"{side}_upper_arm"]
        el = sh + 0.55 * t * np.array([sgn * math.sin(th), math.cos(th)])
        th2 = th + a[f"{side}_forearm"]
        wr = el + 0.5 * t * np.array([sgn * math.sin(th2), math.cos(th2)])
        hip = neck + np.array([sgn * 0.2 * t, 1.0 * t])
        tt = a[f"{side}_thigh"]
        kn = hip + 0.72 * t * np.array([sgn * math.sin(tt), math.cos(tt)])
        tt2 = tt + a[f"{side}_shin"]
        an = kn + 0.68 * t * np.array([sgn * math.sin(tt2), math.cos(tt2)])
        pts.update(
            {
                f"{side}_shoulder": sh,
                f"{side}_elbow": el,
                f"{side}_wrist": wr,
                f"{side}_hip": hip,
                f"{side}_knee": kn,
                f"{side}_ankle": an,
            }
        )
    return pts


def _grid(h: int, w: int):
    yy, xx = np.mgrid[0:h, 0:w]
    return xx.astype(np.float64), yy.astype(np.float64)


def _capsule(xx, yy, a, b, r) -> np.ndarray:
    ab = b - a
    L2 = float(ab @ ab)
    t = ((xx - a[0]) * ab[0] + (yy - a[1]) * ab[1]) / max(L2, 1e-12)
    t = np.clip(t, 0.0, 1.0)
    px = a[0] + t * ab[0]
    py = a[1] + t * ab[1]
    return (xx - px) ** 2 + (yy - py) ** 2 <= r * r


def _ellipse(xx, yy, c, rx, ry) -> np.ndarray:
    return ((xx - c[0]) / rx) ** 2 + ((yy - c[1]) / ry) ** 2 <= 1.0


def _convex_polygon(xx, yy, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    inside = np.ones(xx.shape, dtype=bool)
    n = len(pts)
    # orientation-independent half-plane test
    area = sum(pts[i, 0] * pts[(i + 1) % n, 1] - pts[(i + 1) % n, 0] * pts[i, 1] for i in range(n))
    sgn = 1.0 if area > 0 else -1.0
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        cross = (b[0] - a[0]) * (yy - a[1]) - (b[1] - a[1]) * (xx - a[0])
        inside &= sgn * cross >= 0
    return inside


def part_shapes(fig: FigureSpec, width: int, height: int) -> dict[str, np.ndarray]:
    """Boolean footprint of every rendered part before occlusion and visibility."""
    t = fig.body_scale
    rh = 0.22 * t
    j = skeleton(fig)
    xx, yy = _grid(height, width)
    shapes: dict[str, np.ndarray] = {}
    head = j["head_center"]
    shapes["hair"] = _ellipse(xx, yy, head + np.array([0.0, -0.3 * rh]), 1.12 * rh, 0.95 * rh)
    shapes["face"] = _ellipse(xx, yy, head + np.array([0.0, 0.18 * rh]), 0.8 * rh, 0.88 * rh)
    ls, rs, lh, rhip = j["left_shoulder"], j["right_shoulder"], j["left_hip"], j["right_hip"]
    pad = np.array([0.06 * t, 0.0])
    torso = [rs - pad - [0, 0.04 * t], ls + pad - [0, 0.04 * t], lh + pad + [0, 0.1 * t], rhip - pad + [0, 0.1 * t]]
    shapes["upper-clothes"] = _convex_polygon(xx, yy, torso)
    lk, rk = j["left_knee"], j["right_knee"]
    skirt = [rhip - pad, lh + pad, lk + [0.16 * t, 0.02 * t], rk - [0.16 * t, -0.02 * t]]
    shapes["full-body clothes"] = _convex_polygon(xx, yy, torso) | _convex_polygon(xx, yy, skirt)
    pelvis = [rhip - pad, lh + pad, lh + pad + [0, 0.2 * t], rhip - pad + [0, 0.2 * t]]
    lower = _convex_polygon(xx, yy, pelvis)
    lower |= _capsule(xx, yy, lh, lk, 0.12 * t) | _capsule(xx, yy, rhip, rk, 0.12 * t)
    shapes["lower-clothes"] = lower
    for side in ("left", "right"):
        arm = _capsule(xx, yy, j[f"{side}_shoulder"], j[f"{side}_elbow"], 0.075 * t)
        arm |= _capsule(xx, yy, j[f"{side}_elbow"], j[f"{side}_wrist"], 0.065 * t)
        shapes[f"{side} arm"] = arm
        shapes[f"{side} leg skin"] = _capsule(xx, yy, j[f"{side}_knee"], j[f"{side}_ankle"], 0.075 * t)
        sgn = 1.0 if side == "left" else -1.0
        an = j[f"{side}_ankle"]
        shapes[f"{side} shoe"] = _ellipse(xx, yy, an + np.array([sgn * 0.05 * t, 0.04 * t]), 0.13 * t, 0.08 * t)
    return shapes


# painting order: later entries occlude earlier ones
PAINT_ORDER = (
    "lower-clothes",
    "left leg skin",
    "right leg skin",
    "left shoe",
    "right shoe",
    "full-body clothes",
    "upper-clothes",
    "hair",
    "face",
    "left arm",
    "right arm",
)


def _part_color(fig: FigureSpec, part: str):
    if part in ("face", "left arm", "right arm", "left leg skin", "right leg skin"):
        return fig.part_colors["skin"]
    if part in ("left shoe", "right shoe"):
        return fig.part_colors["shoes"]
    return fig.part_colors[part]


def render_scene(spec: SceneSpec, structure: AogStructure | None = None) -> tuple[ImageRGB, LabelMap, PoseJoints]:
    structure = structure or build_default_aog()
    fig = spec.figure
    w, h = spec.width, spec.height
    j = skeleton(fig)
    shapes = part_shapes(fig, w, h)
    union = np.zeros((h, w), dtype=bool)
    for part in RENDERED_PARTS:
        if fig.visibility.get(part, True):
            union |= shapes[part]
    ys, xs = np.nonzero(union)
    if xs.size == 0:
        raise RenderError("figure has no visible parts")
    # conservative footprint check on the un-clipped geometry
    margin = 1.0
    pts = np.array([v for v in j.values()])
    if (
        pts[:, 0].min() - 0.15 * fig.body_scale < margin
        or pts[:, 0].max() + 0.15 * fig.body_scale > w - 1 - margin
        or j["head_center"][1] - 1.3 * 0.22 * fig.body_scale < margin
        or max(j["left_ankle"][1], j["right_ankle"][1]) + 0.16 * fig.body_scale > h - 1 - margin
    ):
        raise RenderError("figure extends outside the canvas")

    rng = np.random.default_rng(spec.background_seed)
    base = np.asarray(spec.background_color, dtype=np.float64)
    tex = ndimage.gaussian_filter(rng.standard_normal((h, w, 3)), sigma=(4.0, 4.0, 0.0))
    tex /= max(float(np.abs(tex).max()), 1e-12)
    img = base[None, None, :] + spec.background_texture * tex
    labels = np.zeros((h, w), dtype=np.int64)
    for part in PAINT_ORDER:
        if not fig.visibility.get(part, True):
            continue
        m = shapes[part]
        img[m] = np.asarray(_part_color(fig, part))
        lab = structure.label_of(part)
        if lab is not None:
            labels[m] = lab
        else:
            labels[m] = 0
    img = img + spec.noise_sigma * rng.standard_normal((h, w, 3))
    img = np.clip(img, 0.0, 1.0)
    # quantize so PNG storage is lossless
    img = np.round(img * 255.0) / 255.0
    from .core import JOINT_NAMES

    joints = PoseJoints(np.array([j[n] for n in JOINT_NAMES]))
    return ImageRGB(img), LabelMap(labels), joints


def make_scene_spec(seed, cfg: GeneratorConfig | None = None) -> SceneSpec:
    cfg = cfg or GeneratorConfig()
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    fig_seed, bg_seed = ss.spawn(2)
    fig = sample_figure(fig_seed, cfg)
    bg = int(bg_seed.generate_state(1)[0])
    return SceneSpec(
        width=cfg.canvas_width,
        height=cfg.canvas_height,
        background_color=fig.part_colors["background"],
        background_seed=bg,
        figure=fig,
        noise_sigma=cfg.noise_sigma,
        background_texture=cfg.background_texture,
    )


def make_oracle_potentials(gt: LabelMap, blur_radius: int, flip_rate: float, rng_seed, n_parts: int) -> PotentialStack:
    """One-hot ground truth, corrupted by random label flips, box-blurred, renormalized per pixel."""
    if not 0.0 <= flip_rate < 0.5:
        raise ValueError("flip_rate must lie in [0, 0.5)")
    n = n_parts + 1
    lab = gt.labels.copy()
    rng = np.random.default_rng(rng_seed)
    if flip_rate > 0:
        flip = rng.random(lab.shape) < flip_rate
        # a flip always lands on a different label
        shift = rng.integers(1, n, size=lab.shape)
        lab = np.where(flip, (lab + shift) % n, lab)
    maps = np.stack([(lab == j).astype(np.float64) for j in range(n)])
    if blur_radius > 0:
        size = 2 * int(blur_radius) + 1
        maps = ndimage.uniform_filter(maps, size=(1, size, size), mode="nearest")
    maps = np.clip(maps, 0.0, None)
    maps /= np.maximum(maps.sum(axis=0, keepdims=True), 1e-12)
    maps = np.clip(maps, 0.0, 1.0).astype(np.float32).astype(np.float64)
    return PotentialStack(maps)


def generate_scene(
    base_seed: int,
    index: int,
    cfg: GeneratorConfig | None = None,
    structure: AogStructure | None = None,
    blur_radius: int = 2,
    flip_rate: float = 0.1,
    prefix: str = "scene",
    max_attempts: int = 20,
) -> Scene:
    """Scene ``index`` of the dataset seeded by ``base_seed``; resamples figures that do not fit."""
    cfg = cfg or GeneratorConfig()
    structure = structure or build_default_aog()
    root = np.random.SeedSequence([base_seed, index])
    for attempt_seed in root.spawn(max_attempts):
        spec_seed, pot_seed = attempt_seed.spawn(2)
        try:
            image, labels, joints = render_scene(make_scene_spec(spec_seed, cfg), structure)
        except RenderError:
            continue
        pots = make_oracle_potentials(labels, blur_radius, flip_rate, pot_seed, structure.n_parts)
        return Scene(f"{prefix}{index:05d}", image, labels, joints, pots)
    raise RenderError(f"could not fit a figure for scene {index} in {max_attempts} attempts")


def generate_dataset(
    base_seed: int, n_scenes: int, cfg=None, structure=None, blur_radius=2, flip_rate=0.1, prefix="scene", jobs=1
) -> list[Scene]:
    def one(i):
        return generate_scene(base_seed, i, cfg, structure, blur_radius, flip_rate, prefix)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(one, range(n_scenes)))
    return [one(i) for i in range(n_scenes)]


# --- dataset files -----------------------------------------------------------------


def _write_potentials(pots: PotentialStack, path: Path) -> None:
    arr = np.ascontiguousarray(pots.maps, dtype="<f4")
    path.write_bytes(arr.tobytes())
    sidecar = {"shape": list(arr.shape), "dtype": "float32", "order": "map-major, row-major"}
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))


def _read_potentials(path: Path) -> PotentialStack:
    side = path.with_suffix(".json")
    if not path.exists() or not side.exists():
        raise DatasetError(f"missing potentials {path}")
    shape = tuple(json.loads(side.read_text())["shape"])
    arr = np.frombuffer(path.read_bytes(), dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise DatasetError(f"potentials {path} do not match their shape {shape}")
    return PotentialStack(arr.reshape(shape).astype(np.float64))


def write_dataset(root: str | Path, scenes: list[Scene], meta: dict | None = None) -> Path:
    root = Path(root)
    for sub in ("images", "labels", "potentials"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in scenes:
        save_image_png(s.image, root / "images" / f"{s.image_id}.png")
        save_label_png(s.labels, root / "labels" / f"{s.image_id}.png")
        if s.potentials is not None:
            _write_potentials(s.potentials, root / "potentials" / f"{s.image_id}.bin")
    write_jsonl(root / "joints.jsonl", [joints_to_record(s.image_id, s.joints) for s in scenes])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "ids": [s.image_id for s in scenes],
        "has_potentials": all(s.potentials is not None for s in scenes),
        "meta": meta or {},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return root


class Dataset:
    """Read-only view of a dataset directory; scenes load lazily by id."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        mpath = self.root / "manifest.json"
        if not mpath.exists():
            raise DatasetError(f"no manifest.json in {self.root}")
        self.manifest = json.loads(mpath.read_text())
        if self.manifest.get("schema_version") != SCHEMA_VERSION:
            raise DatasetError(
                f"schema version {self.manifest.get('schema_version')} != supported {SCHEMA_VERSION}"
            )
        jpath = self.root / "joints.jsonl"
        if not jpath.exists():
            raise MissingAnnotationError(f"missing joints file {jpath}")
        self._joints = dict(joints_from_record(r) for r in read_jsonl(jpath))
        missing = [i for i in self.ids if i not in self._joints]
        if missing:
            raise MissingAnnotationError(f"joints missing for {missing[:5]}")

    @property
    def ids(self) -> list[str]:
        return list(self.manifest["ids"])

    @property
    def meta(self) -> dict:
        return self.manifest.get("meta", {})

    def __len__(self) -> int:
        return len(self.ids)

    def scene(self, image_id: str) -> Scene:
        img_p = self.root / "images" / f"{image_id}.png"
        lab_p = self.root / "labels" / f"{image_id}.png"
        for p in (img_p, lab_p):
            if not p.exists():
                raise MissingAnnotationError(f"missing file {p}")
        pots = None
        if self.manifest.get("has_potentials"):
            pots = _read_potentials(self.root / "potentials" / f"{image_id}.bin")
        return Scene(image_id, load_image_png(img_p), load_label_png(lab_p), self._joints[image_id], pots)

    def __iter__(self):
        for i in self.ids:
            yield self.scene(i)


def read_dataset(root: str | Path) -> Dataset:
    return Dataset(root)

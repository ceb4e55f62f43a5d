"""Stage driver: synth -> propose -> features -> train-ranker -> rank -> train-aog -> parse -> eval.

Each stage writes into ``<work>/<stage>/<hash>/`` where the hash covers the stage's own
settings and every upstream stage's hash. A stage is complete once its ``manifest.json``
exists; complete stages are reused unless ``force`` is set.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import aog as aog_mod
from .aog import AogParams, ParamLayout, ParseTree, build_default_aog, build_problem, infer, oracle_parse
from .aog.learning import DegenerateDataError, TrainingExample, train_structural
from .core import LabelMap, SegmentMask, load_label_png, save_image_png, save_label_png
from .evaluation import MetricReport, aoi, apr, iou_matrix, pixel_accuracy_dataset
from .features import (
    DEFAULT_LAMBDA,
    Dictionary,
    FeatureContext,
    SkinModel,
    assemble_feature,
    kmeans,
    load_dictionaries,
    pbg,
    read_feature_matrix,
    save_dictionaries,
    write_feature_matrix,
)
from .proposal import DEFAULT_THRESHOLDS, build_pool, build_unguided_pool, inject_segments, read_pool, write_pool
from .ranking import SelectedPool, SvrConfig, SvrModel, select_top, train_svr
from .synthdata import ConfigError, DatasetError, GeneratorConfig, generate_dataset, read_dataset, write_dataset

log = logging.getLogger(__name__)

STAGES = ("synth", "propose", "features", "train-ranker", "rank", "train-aog", "parse", "eval")
STAGE_VERSION = 1
CONFIG_ENV = "POSEPARSE_CONFIG"
SPLITS = ("train", "test")
# test pools without injected gt, parsed by the trained model
PLAIN = "test_plain"


class DependencyError(RuntimeError):
    """An upstream stage has not been run (or not completed) for this configuration."""


@dataclass
class PipelineConfig:
    work_dir: str = "work"
    seed: int = 0
    taxonomy: str | None = None
    # synth
    n_train: int = 100
    n_test: int = 30
    generator: dict = field(default_factory=dict)
    blur_radius: int = 2
    flip_rate: float = 0.1
    # propose
    thresholds: tuple = DEFAULT_THRESHOLDS
    unguided: bool = False
    n_seeds_unguided: int = 350
    inject_gt: bool = True
    # features
    n_types: int = 6
    n_pp: int = 8
    lam: float = DEFAULT_LAMBDA
    # train-ranker
    svr_C: float = 100.0
    svr_epsilon: float = 0.05
    svr_tol: float = 1e-4
    negatives_per_image: int = 40
    # rank
    n_p: int = 10
    # train-aog / parse
    aog_C: float = 1.0
    k: int = 10
    max_iters: int = 50
    aog_tol: float = 1e-3
    shared_side: bool = True
    jobs: int = 1

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)

    def validate(self) -> None:
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be positive")
        if len(self.thresholds) != 8:
            raise ConfigError("exactly 8 thresholds are required")
        if self.n_types < 1 or self.n_pp < 1 or self.n_p < 1 or self.k < 1:
            raise ConfigError("n_types, n_pp, n_p and k must be positive")
        if self.lam <= 0 or self.svr_C <= 0 or self.aog_C <= 0:
            raise ConfigError("lam, svr_C and aog_C must be positive")
        if not 0 <= self.flip_rate < 0.5:
            raise ConfigError("flip_rate must lie in [0, 0.5)")
        GeneratorConfig.from_dict(self.generator)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = list(self.thresholds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        text = path.read_text()
        try:
            d = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def default(cls) -> "PipelineConfig":
        """Config from the file named by the environment variable, else built-in defaults."""
        env = os.environ.get(CONFIG_ENV)
        return cls.load(env) if env else cls()


STAGE_KEYS = {
    "synth": ("seed", "taxonomy", "n_train", "n_test", "generator", "blur_radius", "flip_rate"),
    "propose": ("thresholds", "unguided", "n_seeds_unguided", "inject_gt"),
    "features": ("n_types", "n_pp", "lam"),
    "train-ranker": ("svr_C", "svr_epsilon", "svr_tol", "negatives_per_image"),
    "rank": ("n_p",),
    "train-aog": ("aog_C", "k", "max_iters", "aog_tol", "shared_side"),
    "parse": (),
    "eval": (),
}


def stage_seed(seed: int, name: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}/{name}".encode()).digest()[:4], "little")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def stage_hash(cfg: PipelineConfig, name: str) -> str:
    d = cfg.to_dict()
    chain = []
    for st in STAGES[: STAGES.index(name) + 1]:
        chain.append({"stage": st, "version": STAGE_VERSION, **{k: d[k] for k in STAGE_KEYS[st]}})
    return hashlib.sha256(_canonical(chain).encode()).hexdigest()[:12]


def stage_dir(cfg: PipelineConfig, name: str) -> Path:
    return Path(cfg.work_dir) / name / stage_hash(cfg, name)


def is_complete(cfg: PipelineConfig, name: str) -> bool:
    return (stage_dir(cfg, name) / "manifest.json").exists()


def _require(cfg: PipelineConfig, name: str, skip: tuple[str, ...] = ()) -> Path:
    for st in STAGES[: STAGES.index(name)]:
        if st not in skip and not is_complete(cfg, st):
            raise DependencyError(f"stage '{name}' needs stage '{st}' to be run first")
    return stage_dir(cfg, name)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(cfg: PipelineConfig, name: str, out: Path, seconds: float, extra: dict | None = None) -> dict:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    d = cfg.to_dict()
    manifest = {
        "stage": name,
        "stage_version": STAGE_VERSION,
        "config_hash": stage_hash(cfg, name),
        "settings": {k: d[k] for k in STAGE_KEYS[name]},
        "upstream": {st: stage_hash(cfg, st) for st in STAGES[: STAGES.index(name)]},
        "seconds": round(seconds, 3),
        "outputs": {str(p.relative_to(out)): _digest(p) for p in files},
        **(extra or {}),
    }
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    os.replace(tmp, out / "manifest.json")
    return manifest


def _map(cfg: PipelineConfig, fn, items) -> list:
    items = list(items)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def structure_for(cfg: PipelineConfig):
    return build_default_aog(cfg.taxonomy, cfg.n_types)


# --- data access -------------------------------------------------------------------


def datasets(cfg: PipelineConfig) -> dict:
    root = stage_dir(cfg, "synth")
    return {s: read_dataset(root / s) for s in SPLITS}


def pool_splits(cfg: PipelineConfig) -> dict:
    """Pool split name -> (dataset, inject gt)."""
    ds = datasets(cfg)
    out = {s: (ds[s], cfg.inject_gt) for s in SPLITS}
    if cfg.inject_gt:
        out[PLAIN] = (ds["test"], False)
    return out


def parse_split(cfg: PipelineConfig) -> str:
    return PLAIN if cfg.inject_gt else "test"


def gt_masks(labels: LabelMap, n_parts: int) -> list[SegmentMask]:
    return [labels.part_mask(p + 1) for p in range(n_parts)]


# --- stages --------------------------------------------------------------------------


def _stage_synth(cfg: PipelineConfig, out: Path) -> dict:
    structure = structure_for(cfg)
    gen = GeneratorConfig.from_dict(cfg.generator)
    counts = {"train": cfg.n_train, "test": cfg.n_test}
    for split in SPLITS:
        scenes = generate_dataset(
            stage_seed(cfg.seed, f"synth/{split}"), counts[split], gen, structure,
            cfg.blur_radius, cfg.flip_rate, prefix=f"{split}", jobs=cfg.jobs,
        )
        write_dataset(out / split, scenes, {"split": split, "generator": gen.to_dict()})
    return {"n_train": cfg.n_train, "n_test": cfg.n_test}


def make_pool(cfg: PipelineConfig, scene, n_parts: int, inject: bool | None = None):
    if cfg.unguided:
        pool = build_unguided_pool(scene.image, cfg.n_seeds_unguided, cfg.thresholds)
    else:
        pool = build_pool(scene.image, scene.joints, cfg.thresholds)
    if cfg.inject_gt if inject is None else inject:
        pool = inject_segments(pool, gt_masks(scene.labels, n_parts))
    return pool


def _stage_propose(cfg: PipelineConfig, out: Path) -> dict:
    structure = structure_for(cfg)
    sizes = {}
    for split, (ds, inject) in pool_splits(cfg).items():
        (out / split).mkdir(parents=True, exist_ok=True)

        def one(image_id, ds=ds, split=split, inject=inject):
            pool = make_pool(cfg, ds.scene(image_id), structure.n_parts, inject)
            write_pool(out / split / f"{image_id}.jsonl", pool)
            return len(pool)

        sizes[split] = _map(cfg, one, ds.ids)
    return {"mean_pool_size": {s: float(np.mean(v)) for s, v in sizes.items()}}


def _pad_dictionary(x: np.ndarray, n: int, seed: int, owner: str) -> Dictionary | None:
    """k-means dictionary of size ``n``; with fewer samples the centroids repeat cyclically."""
    if len(x) == 0:
        return None
    m = min(n, len(x))
    centers, _ = kmeans(x, m, seed)
    if m < n:
        centers = centers[np.arange(n) % m]
    return Dictionary(centers, owner)


def learn_dictionaries(scenes, structure, n_types: int, n_pp: int, seed: int):
    """Per-part unary dictionaries from ground-truth part segments, pair dictionaries from gt pairs."""
    feats: dict[int, np.ndarray] = {}
    per_part: dict[int, list] = {p: [] for p in range(structure.n_parts)}
    per_pair: dict[tuple[int, int], list] = {}
    pairs = sorted({pr for c in range(structure.n_parts, structure.n_vertices) for pr in structure.pairs(c)})
    for scene in scenes:
        masks = gt_masks(scene.labels, structure.n_parts)
        feats = {p: pbg(m, scene.joints) for p, m in enumerate(masks) if m.area > 0}
        for p, f in feats.items():
            per_part[p].append(f)
        for p1, p2 in pairs:
            if p1 in feats and p2 in feats:
                per_pair.setdefault((p1, p2), []).append(np.concatenate([feats[p1], feats[p2]]))
    unary = {}
    for p, name in enumerate(structure.parts):
        d = _pad_dictionary(np.array(per_part[p]), n_types, stage_seed(seed, f"dict/{name}"), name)
        if d is None:
            raise DegenerateDataError(f"part {name!r} never appears in the training set")
        unary[name] = d
    pair_dicts = {}
    for (p1, p2), x in sorted(per_pair.items()):
        key = (structure.parts[p1], structure.parts[p2])
        pair_dicts[key] = _pad_dictionary(np.array(x), n_pp, stage_seed(seed, f"dict/{key}"), "|".join(key))
    return unary, pair_dicts


def global_dictionary(unary: dict[str, Dictionary], parts) -> Dictionary:
    return Dictionary(np.concatenate([unary[p].prototypes for p in parts]), "unary")


def fit_skin(scenes, structure) -> SkinModel:
    skin_labels = [structure.part_labels[n] for n in structure.skin_parts if n in structure.part_labels]
    pixels = []
    for scene in scenes:
        sel = np.isin(scene.labels.labels, skin_labels)
        pixels.append(scene.image.pixels[sel])
    pixels = np.concatenate(pixels) if pixels else np.zeros((0, 3))
    if len(pixels) < 10:
        log.warning("too few skin pixels; using the default skin model")
        return SkinModel()
    return SkinModel.fit(pixels)


def featurize(scene, segments, skin: SkinModel, gdict: Dictionary, lam: float):
    ctx = FeatureContext(scene.image, scene.joints, scene.potentials, skin, gdict, lam)
    rows = [assemble_feature(s, context=ctx)[0] for s in segments]
    return np.stack(rows), ctx.layout


def _stage_features(cfg: PipelineConfig, out: Path) -> dict:
    structure = structure_for(cfg)
    ds = datasets(cfg)
    train_scenes = list(ds["train"])
    unary, pairs = learn_dictionaries(train_scenes, structure, cfg.n_types, cfg.n_pp, stage_seed(cfg.seed, "features"))
    save_dictionaries(out / "dictionaries.json", unary, pairs, cfg.lam)
    skin = fit_skin(train_scenes, structure)
    (out / "skin.json").write_text(json.dumps(skin.to_dict()))
    gdict = global_dictionary(unary, structure.parts)
    pools_dir = stage_dir(cfg, "propose")
    for split, (d, _) in pool_splits(cfg).items():
        (out / split).mkdir(parents=True, exist_ok=True)

        def one(image_id, d=d, split=split):
            pool = read_pool(pools_dir / split / f"{image_id}.jsonl")
            X, layout = featurize(d.scene(image_id), pool.segments, skin, gdict, cfg.lam)
            write_feature_matrix(out / split / f"{image_id}.bin", X, layout)

        _map(cfg, one, d.ids)
    return {"lambda": cfg.lam, "n_pair_dictionaries": len(pairs)}


def ranker_targets(segments, labels: LabelMap, n_parts: int) -> np.ndarray:
    """``(n_segments, n_parts)`` IoU with each ground-truth part (0 for absent parts)."""
    return iou_matrix(gt_masks(labels, n_parts), segments).T


def training_rows(targets: np.ndarray, n_neg: int, seed) -> list[np.ndarray]:
    """Per part: every segment overlapping the part plus up to ``n_neg`` sampled non-overlapping ones."""
    rng = np.random.default_rng(seed)
    rows = []
    for p in range(targets.shape[1]):
        pos = np.flatnonzero(targets[:, p] > 0)
        neg = np.flatnonzero(targets[:, p] <= 0)
        if len(neg) > n_neg:
            neg = np.sort(rng.choice(neg, n_neg, replace=False))
        rows.append(np.concatenate([pos, neg]))
    return rows


def train_ranker(feature_mats, target_mats, structure, svr: SvrConfig, n_neg: int, seed: int, layout=None) -> SvrModel:
    P = structure.n_parts
    X_parts: list[list] = [[] for _ in range(P)]
    T_parts: list[list] = [[] for _ in range(P)]
    for i, (X, T) in enumerate(zip(feature_mats, target_mats)):
        for p, rows in enumerate(training_rows(T, n_neg, stage_seed(seed, f"rows/{i}"))):
            X_parts[p].append(X[rows])
            T_parts[p].append(T[rows, p])
    weights = {}
    for p, name in enumerate(structure.parts):
        X = np.concatenate(X_parts[p])
        T = np.concatenate(T_parts[p])
        beta, info = train_svr(X, T, svr.C, svr.epsilon, svr.tol, svr.max_epochs)
        log.info("ranker %s: %d examples, %s", name, len(T), info)
        weights[name] = beta
    return SvrModel(weights, svr, layout)


def _load_split_features(cfg: PipelineConfig, split: str, ids):
    fdir = stage_dir(cfg, "features") / split
    mats = [read_feature_matrix(fdir / f"{i}.bin") for i in ids]
    return [m[0] for m in mats], (mats[0][1] if mats else None)


def _stage_train_ranker(cfg: PipelineConfig, out: Path) -> dict:
    structure = structure_for(cfg)
    ds = datasets(cfg)["train"]
    X, layout = _load_split_features(cfg, "train", ds.ids)
    pdir = stage_dir(cfg, "propose") / "train"
    targets = []
    for image_id in ds.ids:
        pool = read_pool(pdir / f"{image_id}.jsonl")
        targets.append(ranker_targets(pool.segments, ds.scene(image_id).labels, structure.n_parts))
    svr = SvrConfig(cfg.svr_C, cfg.svr_epsilon, cfg.svr_tol)
    model = train_ranker(X, targets, structure, svr, cfg.negatives_per_image, stage_seed(cfg.seed, "train-ranker"), layout.to_dict())
    model.save(out / "ranker.json")
    return {}


def load_selected(cfg: PipelineConfig, split: str, image_id: str, scene, segments=None) -> SelectedPool:
    if segments is None:
        segments = read_pool(stage_dir(cfg, "propose") / split / f"{image_id}.jsonl").segments
    doc = json.loads((stage_dir(cfg, "rank") / split / f"{image_id}.json").read_text())
    return SelectedPool.from_dict(doc, segments, scene.joints)


def _stage_rank(cfg: PipelineConfig, out: Path) -> dict:
    structure = structure_for(cfg)
    model = SvrModel.load(stage_dir(cfg, "train-ranker") / "ranker.json")
    unary, _, _ = load_dictionaries(stage_dir(cfg, "features") / "dictionaries.json")
    truncated = 0
    for split, (d, _) in pool_splits(cfg).items():
        (out / split).mkdir(parents=True, exist_ok=True)

        def one(image_id, d=d, split=split):
            pool = read_pool(stage_dir(cfg, "propose") / split / f"{image_id}.jsonl")
            X, _, _ = read_feature_matrix(stage_dir(cfg, "features") / split / f"{image_id}.bin")
            sel = select_top(pool.segments, X, model, d.scene(image_id).joints, unary, cfg.n_p, structure.parts)
            (out / split / f"{image_id}.json").write_text(json.dumps(sel.to_dict(), sort_keys=True))
            return sel.truncated

        truncated += sum(_map(cfg, one, d.ids))
    return {"truncated_pools": truncated}


def problems_for(cfg: PipelineConfig, split: str, with_gt: bool = True):
    structure = structure_for(cfg)
    _, pair_dicts, lam = load_dictionaries(stage_dir(cfg, "features") / "dictionaries.json")
    d = pool_splits(cfg)[split][0]

    def one(image_id):
        scene = d.scene(image_id)
        sel = load_selected(cfg, split, image_id, scene)
        shape = scene.labels.labels.shape
        return build_problem(structure, sel, pair_dicts, lam, shape, cfg.n_pp, scene.labels if with_gt else None)

    return d.ids, _map(cfg, one, d.ids)


def _stage_train_aog(cfg: PipelineConfig, out: Path) -> dict:
    structure = structure_for(cfg)
    ids, problems = problems_for(cfg, "train")
    layout = ParamLayout(structure, cfg.n_pp, cfg.shared_side)
    oracles = _map(cfg, lambda pr: oracle_parse(pr, cfg.k), problems)
    examples = [TrainingExample(pr, t) for pr, t in zip(problems, oracles)]
    params, info = train_structural(examples, layout, cfg.aog_C, cfg.max_iters, cfg.k, cfg.aog_tol, cfg.jobs)
    params.save(out / "model.json", {"k": cfg.k})
    (out / "training.json").write_text(json.dumps(info.to_dict(), indent=1, sort_keys=True))
    return {"iterations": info.iterations, "converged": info.converged, "n_constraints": info.n_constraints}


def _stage_parse(cfg: PipelineConfig, out: Path, model_path: str | Path | None = None, k: int | None = None) -> dict:
    params = AogParams.load(model_path or stage_dir(cfg, "train-aog") / "model.json")
    k = k or cfg.k
    ids, problems = problems_for(cfg, parse_split(cfg), with_gt=False)
    (out / "trees").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)

    def one(args):
        image_id, pr = args
        tree, score = infer(pr, params, k)
        (out / "trees" / f"{image_id}.json").write_text(json.dumps({**tree.to_dict(), "score": score}, sort_keys=True))
        save_label_png(aog_mod.tree_to_labelmap(tree, pr), out / "labels" / f"{image_id}.png")

    _map(cfg, one, list(zip(ids, problems)))
    return {"k": k}


def pool_metrics(cfg: PipelineConfig, split: str = "test") -> dict:
    d = pool_splits(cfg)[split][0]
    pdir = stage_dir(cfg, "propose") / split
    pools = [read_pool(pdir / f"{i}.jsonl") for i in d.ids]
    gts = [d.scene(i).labels for i in d.ids]
    return {
        "apr": apr([p.segments for p in pools], gts),
        "aoi": aoi([p.segments for p in pools], gts),
        "mean_pool_size": float(np.mean([len(p) for p in pools])),
    }


def selected_metrics(problems, gts) -> dict:
    sel_pools = []
    for pr in problems:
        segs = {c.pool_index: c.segment for lst in pr.candidates for c in lst}
        sel_pools.append([segs[k] for k in sorted(segs)])
    return {
        "apr": apr(sel_pools, gts),
        "aoi": aoi(sel_pools, gts),
        "mean_pool_size": float(np.mean([len(p) for p in sel_pools])),
    }


def _variant(cfg: PipelineConfig, **changes) -> PipelineConfig:
    d = cfg.to_dict()
    d.update(changes)
    return PipelineConfig.from_dict(d)


def evaluate(cfg: PipelineConfig, compare: tuple[str, ...] = (), overlay: str | Path | None = None) -> MetricReport:
    structure = structure_for(cfg)
    d = datasets(cfg)["test"]
    parts = list(range(1, structure.n_parts + 1))
    names = {p: structure.parts[p - 1] for p in parts}
    gts = [d.scene(i).labels for i in d.ids]
    sections = {"pool": pool_metrics(cfg)}
    ids, problems = problems_for(cfg, "test")
    sections["selected"] = selected_metrics(problems, gts)
    if cfg.inject_gt:
        sections["pool_plain"] = pool_metrics(cfg, PLAIN)
        sections["selected_plain"] = selected_metrics(problems_for(cfg, PLAIN, with_gt=False)[1], gts)
    oracle_maps = [aog_mod.tree_to_labelmap(oracle_parse(pr, cfg.k), pr) for pr in problems]
    preds = [load_label_png(stage_dir(cfg, "parse") / "labels" / f"{i}.png") for i in ids]
    for name, maps in (("oracle_assembling", oracle_maps), ("parsing", preds)):
        acc = pixel_accuracy_dataset(maps, gts, parts)
        sections[name] = {
            "mean_pixel_accuracy": acc["mean"],
            "per_part": {names[p]: v for p, v in acc["per_part"].items()},
        }
    for mode in compare:
        if mode not in ("guided", "unguided"):
            raise ConfigError(f"unknown comparison mode {mode!r}")
        alt = _variant(cfg, unguided=(mode == "unguided"), inject_gt=False)
        run_stage("propose", alt)
        sections[f"pool_{mode}"] = pool_metrics(alt)
    if overlay:
        write_overlays(Path(overlay), d, ids, preds)
    meta = {"seed": cfg.seed, "config_hash": stage_hash(cfg, "eval"), "n_test": len(ids)}
    return MetricReport(sections, meta)


def _palette(n: int) -> np.ndarray:
    rng = np.random.default_rng(12345)
    pal = rng.integers(40, 256, size=(n + 1, 3))
    pal[0] = 0
    return pal.astype(np.uint8)


def write_overlays(out: Path, dataset, ids, preds) -> None:
    from .core import ImageRGB

    out.mkdir(parents=True, exist_ok=True)
    pal = _palette(int(max(int(p.labels.max()) for p in preds) if preds else 0) + 16)
    for image_id, pred in zip(ids, preds):
        img = dataset.scene(image_id).image.pixels
        color = pal[pred.labels].astype(np.float64) / 255.0
        mask = (pred.labels > 0)[..., None]
        blend = np.where(mask, 0.45 * img + 0.55 * color, img)
        save_image_png(ImageRGB(blend), out / f"{image_id}.png")


def _stage_eval(cfg: PipelineConfig, out: Path, compare=(), overlay=None) -> dict:
    report = evaluate(cfg, compare, overlay)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_text())
    return {}


_RUNNERS = {
    "synth": _stage_synth,
    "propose": _stage_propose,
    "features": _stage_features,
    "train-ranker": _stage_train_ranker,
    "rank": _stage_rank,
    "train-aog": _stage_train_aog,
    "parse": _stage_parse,
    "eval": _stage_eval,
}


def run_stage(name: str, cfg: PipelineConfig, force: bool = False, **kwargs) -> dict:
    """Run one stage (or reuse its completed output); returns its manifest."""
    if name not in _RUNNERS:
        raise ConfigError(f"unknown stage {name!r}")
    # an explicit model file stands in for the train-aog stage
    out = _require(cfg, name, ("train-aog",) if kwargs.get("model_path") else ())
    mpath = out / "manifest.json"
    if mpath.exists() and not force and not kwargs:
        log.info("stage %s: reusing %s", name, out)
        return json.loads(mpath.read_text())
    # an incomplete directory is a leftover from an interrupted run
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    t0 = time.perf_counter()
    try:
        extra = _RUNNERS[name](cfg, out, **kwargs)
    except (DatasetError, DegenerateDataError) as exc:
        raise type(exc)(f"stage '{name}': {exc}") from exc
    manifest = _write_manifest(cfg, name, out, time.perf_counter() - t0, extra)
    log.info("stage %s done in %.1fs", name, manifest["seconds"])
    return manifest


def run_all(cfg: PipelineConfig, force: bool = False) -> MetricReport:
    cfg.validate()
    for name in STAGES:
        run_stage(name, cfg, force=force)
    return MetricReport.from_json((stage_dir(cfg, "eval") / "report.json").read_text())

"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line."""

import time

import numpy as np
import pytest
from oracles import brute_force_best, enumerate_trees, pixel_iou, random_params, random_problem
from test_aog import toy_examples

from poseparse.aog import ParamLayout, TrainingExample, build_default_aog, feature_vector, global_score, infer, oracle_parse
from poseparse.aog.learning import train_structural
from poseparse.core import PoseJoints, SegmentMask
from poseparse.evaluation import aoi, apr
from poseparse.features import Dictionary, code_pbg, pbg, read_feature_matrix
from poseparse.pipeline import PLAIN, PipelineConfig, datasets, run_all, stage_dir
from poseparse.proposal import build_pool, build_unguided_pool, read_pool
from poseparse.ranking import SvrModel
from poseparse.synthdata import GeneratorConfig, generate_dataset


def verdict(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


# --- 1. PBG invariants ------------------------------------------------------------------------


def test_criterion_1_pbg_invariants(capsys):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        bits = rng.random((12, 12)) < rng.uniform(0.1, 0.7)
        if not bits.any():
            bits[6, 6] = True
        xy = rng.integers(-5, 17, size=(14, 2)).astype(float) + 20.0
        tx, ty = (int(v) for v in rng.integers(0, 21, size=2))
        big = np.zeros((60, 60), bool)
        big[20:32, 20:32] = bits
        moved = np.zeros_like(big)
        moved[20 + ty : 32 + ty, 20 + tx : 32 + tx] = bits
        f = pbg(SegmentMask(big), PoseJoints(xy))
        g = pbg(SegmentMask(moved), PoseJoints(xy + [tx, ty]))
        blocks_ok = f.sum() == 14 and np.array_equal(f.reshape(14, 24).sum(axis=1), np.ones(14))
        bad += not (blocks_ok and np.array_equal(f, g))
    dt = time.perf_counter() - t0
    verdict(capsys, 1, bad == 0 and dt < 10, f"{bad} failures in 1000 cases, {dt:.1f}s")


# --- 2. coding --------------------------------------------------------------------------------


def test_criterion_2_coding(capsys):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(2, 40))
        c = code_pbg(rng.random(d), Dictionary(rng.random((int(rng.integers(1, 9)), d))), float(rng.uniform(0.1, 10)))
        worst = max(worst, abs(c[len(c) // 2 :].sum() - 1))
    f = np.array([1.0, 0.0, 0.0])
    zero = code_pbg(f, Dictionary(f[None]))[0]
    sym = code_pbg(f, Dictionary(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])))[2:]
    ok = worst <= 1e-9 and zero == 1.0 and np.allclose(sym, [0.5, 0.5], atol=1e-12)
    verdict(capsys, 2, ok, f"max |sum-1| {worst:.1e}, zero-distance {zero}, symmetric {sym.tolist()}")


# --- 3. linearity -------------------------------------------------------------------------------


def test_criterion_3_score_linearity(capsys):
    worst = 0.0
    for i in range(100):
        rng = np.random.default_rng([3, i])
        prob = random_problem(rng)
        params = random_params(rng, prob, shared_side=bool(rng.random() < 0.5))
        trees = enumerate_trees(prob)
        t = trees[int(rng.integers(len(trees)))]
        worst = max(worst, abs(global_score(t, prob, params) - feature_vector(t, prob, params.layout).dot(params.W)))
    verdict(capsys, 3, worst <= 1e-9, f"max deviation {worst:.1e} over 100 triples")


# --- 4. inference exactness -----------------------------------------------------------------------


def test_criterion_4_inference_exactness(capsys):
    t0 = time.perf_counter()
    mismatches = exceed = 0
    for i in range(100):
        rng = np.random.default_rng([4, i])
        prob = random_problem(rng, max_cands=4)
        params = random_params(rng, prob, shared_side=bool(rng.random() < 0.5))
        best, opt, _ = brute_force_best(prob, params)
        k_all = len(enumerate_trees(prob))
        tree, sc = infer(prob, params, k_all)
        mismatches += not (abs(sc - opt) <= 1e-9 and tree == best)
        exceed += infer(prob, params, 1)[1] > opt + 1e-9
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and exceed == 0 and dt < 60
    verdict(capsys, 4, ok, f"{mismatches} mismatches, {exceed} k=1 overshoots, {dt:.1f}s")


# --- 5. learning --------------------------------------------------------------------------------


def test_criterion_5_learning_toy(capsys):
    s, probs = toy_examples()
    examples = [TrainingExample(p, oracle_parse(p, 10)) for p in probs]
    params, info = train_structural(examples, ParamLayout(s, 2), C=10.0, max_iters=50, k=10)
    recovered = all(infer(ex.problem, params, 10)[0] == ex.oracle for ex in examples)
    monotone = all(b >= a - 1e-9 for a, b in zip(info.trace, info.trace[1:]))
    ok = info.converged and info.iterations <= 50 and recovered and monotone
    verdict(capsys, 5, ok, f"converged={info.converged} in {info.iterations} iterations, oracle recovered={recovered}, monotone={monotone}")


# --- 6. pose guidance ---------------------------------------------------------------------------------


def test_criterion_6_pose_guidance(capsys):
    t0 = time.perf_counter()
    gen = GeneratorConfig(canvas_width=160, canvas_height=160, offset_range=45.0)
    scenes = generate_dataset(6, 30, gen, build_default_aog())
    gts = [s.labels for s in scenes]
    guided = [build_pool(s.image, s.joints).segments for s in scenes]
    uniform = [build_unguided_pool(s.image, 14 * 25).segments for s in scenes]
    g = (apr(guided, gts), aoi(guided, gts))
    u = (apr(uniform, gts), aoi(uniform, gts))
    dt = time.perf_counter() - t0
    ok = g[0] >= 1.05 * u[0] and g[1] >= 1.05 * u[1] and dt < 300
    verdict(capsys, 6, ok, f"guided APR/AOI {g[0]:.3f}/{g[1]:.3f} vs uniform {u[0]:.3f}/{u[1]:.3f}, {dt:.0f}s")


# --- 7 and 8. full-scale pipeline ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    cfg = PipelineConfig(work_dir=str(tmp_path_factory.mktemp("full")))
    t0 = time.perf_counter()
    report = run_all(cfg)
    return cfg, report, time.perf_counter() - t0


def top1_pools(cfg, ids):
    model = SvrModel.load(stage_dir(cfg, "train-ranker") / "ranker.json")
    out = []
    for image_id in ids:
        segs = read_pool(stage_dir(cfg, "propose") / PLAIN / f"{image_id}.jsonl").segments
        X = read_feature_matrix(stage_dir(cfg, "features") / PLAIN / f"{image_id}.bin")[0]
        out.append([segs[int(np.argmax(X @ w))] for w in model.weights.values()])
    return out


def test_criterion_7_ranking_effect(full_run, capsys):
    cfg, report, _ = full_run
    pool, sel = report.sections["pool_plain"], report.sections["selected_plain"]
    d = datasets(cfg)["test"]
    gts = [d.scene(i).labels for i in d.ids]
    top1 = aoi(top1_pools(cfg, d.ids), gts)
    rand = []
    for seed in range(5):
        rng = np.random.default_rng([7, seed])
        pools = []
        for image_id in d.ids:
            segs = read_pool(stage_dir(cfg, "propose") / PLAIN / f"{image_id}.jsonl").segments
            pools.append([segs[int(i)] for i in rng.integers(len(segs), size=build_default_aog().n_parts)])
        rand.append(aoi(pools, gts))
    rand_aoi = float(np.mean(rand))
    ok = sel["aoi"] >= 0.9 * pool["aoi"] and sel["mean_pool_size"] <= 110 and top1 >= 1.2 * rand_aoi
    detail = (
        f"selected AOI {sel['aoi']:.3f} vs pool {pool['aoi']:.3f} with {sel['mean_pool_size']:.1f} segments; "
        f"top-1 AOI {top1:.3f} vs random {rand_aoi:.3f}"
    )
    verdict(capsys, 7, ok, detail)


def test_criterion_8_end_to_end(full_run, capsys):
    _, report, dt = full_run
    oracle = report.sections["oracle_assembling"]["mean_pixel_accuracy"]
    parsing = report.sections["parsing"]["mean_pixel_accuracy"]
    ok = oracle >= 0.95 and parsing >= 0.70 and dt < 15 * 60
    verdict(capsys, 8, ok, f"oracle {oracle:.4f}, parsing {parsing:.4f}, {dt / 60:.1f} min")


# --- 9. metric oracle ------------------------------------------------------------------------------


def test_criterion_9_metric_oracle(capsys):
    rng = np.random.default_rng(9)
    mismatches = 0
    for _ in range(500):
        shape = tuple(int(v) for v in rng.integers(2, 7, size=2))
        pool = [SegmentMask(rng.random(shape) < 0.5) for _ in range(int(rng.integers(0, 6)))]
        pool = [s for s in pool if s.area]
        gts = [SegmentMask(rng.random(shape) < 0.5) for _ in range(int(rng.integers(1, 4)))]
        gts = [g for g in gts if g.area]
        if not gts:
            continue
        best = [max((pixel_iou(g.bits, s.bits) for s in pool), default=0.0) for g in gts]
        mismatches += apr([pool], [gts]) != np.mean([b > 0.5 for b in best])
        mismatches += aoi([pool], [gts]) != np.mean(best)
    verdict(capsys, 9, mismatches == 0, f"{mismatches} mismatches on 500 instances")


# --- 10. determinism ----------------------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path, capsys):
    # reduced scale: two full-scale runs do not fit a single-core budget
    small = dict(n_train=16, n_test=6, max_iters=6)
    a = run_all(PipelineConfig(work_dir=str(tmp_path / "a"), **small))
    b = run_all(PipelineConfig(work_dir=str(tmp_path / "b"), jobs=2, **small))
    same = a.to_json() == b.to_json()
    verdict(capsys, 10, same, f"reports byte-identical={same} (jobs 1 vs 2)")

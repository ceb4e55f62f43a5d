"""Full-scale run: 100 training and 30 test scenes, per-stage timing, metric report."""

import argparse
import logging
import time

from poseparse.pipeline import STAGES, PipelineConfig, run_stage, stage_dir


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work-dir", default="work")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = PipelineConfig(work_dir=args.work_dir, jobs=args.jobs, seed=args.seed)
    start = time.perf_counter()
    for name in STAGES:
        t0 = time.perf_counter()
        run_stage(name, cfg)
        print(f"{name:<13} {time.perf_counter() - t0:8.1f}s")
    print(f"{'total':<13} {time.perf_counter() - start:8.1f}s\n")
    print((stage_dir(cfg, "eval") / "report.txt").read_text())


if __name__ == "__main__":
    main()

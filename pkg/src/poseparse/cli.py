"""Command-line driver. Exit codes: 0 success, 2 config error, 3 dependency error, 4 data error."""

from __future__ import annotations

import argparse
import logging
import sys

from .aog.learning import DegenerateDataError
from .aog.structure import TaxonomyError
from .pipeline import STAGES, DependencyError, PipelineConfig, run_all, run_stage, stage_dir
from .synthdata import ConfigError, DatasetError

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_DATA = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (default: $POSEPARSE_CONFIG or built-in defaults)")
    p.add_argument("--work-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--force", action="store_true", help="recompute even if the stage output exists")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poseparse", description="Pose-guided human parsing pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    _common(p)

    p = sub.add_parser("propose", help="build segment pools")
    p.add_argument("--unguided", action="store_true", help="uniform-grid seeds instead of pose seeds")
    _common(p)

    p = sub.add_parser("features", help="learn dictionaries and featurize pool segments")
    _common(p)

    p = sub.add_parser("train-ranker", help="train per-part segment regressors")
    p.add_argument("--svr-C", type=float, dest="svr_C")
    p.add_argument("--epsilon", type=float, dest="svr_epsilon")
    _common(p)

    p = sub.add_parser("rank", help="select the top candidates per part")
    p.add_argument("--top", type=int, dest="n_p")
    _common(p)

    p = sub.add_parser("train-aog", help="structural max-margin training of the AOG")
    p.add_argument("--C", type=float, dest="aog_C")
    p.add_argument("--k", type=int)
    p.add_argument("--max-iters", type=int)
    _common(p)

    p = sub.add_parser("parse", help="assemble parses of the test images")
    p.add_argument("--model", help="AOG model JSON (default: this config's trained model)")
    p.add_argument("--k", type=int, dest="parse_k")
    _common(p)

    p = sub.add_parser("eval", help="compute the metric report")
    p.add_argument("--compare", nargs="+", choices=("guided", "unguided"), default=())
    p.add_argument("--overlay", help="directory for colour-coded overlay PNGs")
    _common(p)

    p = sub.add_parser("run-all", help="run every stage in order")
    _common(p)
    return parser


_OVERRIDES = ("work_dir", "seed", "jobs", "n_train", "n_test", "n_p", "svr_C", "svr_epsilon", "aog_C", "k", "max_iters")


def config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig.default()
    d = cfg.to_dict()
    for key in _OVERRIDES:
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if getattr(args, "unguided", False):
        d["unguided"] = True
    return PipelineConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "run-all":
            report = run_all(cfg, force=args.force)
            sys.stdout.write(report.to_text())
            return EXIT_OK
        kwargs = {}
        if args.command == "parse":
            if args.model:
                kwargs["model_path"] = args.model
            if args.parse_k:
                kwargs["k"] = args.parse_k
        if args.command == "eval":
            if args.compare:
                kwargs["compare"] = tuple(args.compare)
            if args.overlay:
                kwargs["overlay"] = args.overlay
        assert args.command in STAGES
        run_stage(args.command, cfg, force=args.force, **kwargs)
        out = stage_dir(cfg, args.command)
        if args.command == "eval":
            sys.stdout.write((out / "report.txt").read_text())
        else:
            print(out)
        return EXIT_OK
    except (ConfigError, TaxonomyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (DatasetError, DegenerateDataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""``hydrocube synth|pipeline|report --config FILE [--stage NAME] [--seed N] [--force]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import shutil
import sys

from hydrocube._training import sub_seed
from hydrocube.config import STAGES, ConfigError, RunConfig, load_config
from hydrocube.pipeline import StageError, make_report, run_pipeline
from hydrocube.synthgen import SceneParams, generate_scene, scene_family, write_scene

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("hydrocube")


def cmd_synth(cfg: RunConfig, force: bool = False) -> list:
    s = cfg.synth
    if s.n_scenes == 0:
        raise ConfigError("nothing to generate")
    fields = dataclasses.asdict(s)
    fields.pop("n_scenes")
    try:
        base = SceneParams(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = cfg.path("scenes_dir")
    if out.exists() and any(out.iterdir()):
        if not force:
            raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, params in enumerate(scene_family(s.n_scenes, base, sub_seed(cfg.seed, "synth"))):
        paths.append(write_scene(generate_scene(params), out / f"scene_{k:03d}"))
        log.info("wrote %s", paths[-1])
    return paths


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hydrocube", description="Generate synthetic scenes, run the water-monitoring pipeline, build reports.")
    ap.add_argument("command", choices=("synth", "pipeline", "report"))
    ap.add_argument("--config", required=True, help="YAML or JSON run configuration")
    ap.add_argument("--stage", help=f"comma-separated subset of {','.join(STAGES)} (pipeline only)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--force", action="store_true", help="overwrite a non-empty scenes directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        stages = None
        if args.stage:
            stages = [s.strip() for s in args.stage.split(",") if s.strip()]
            dataclasses.replace(cfg, stages=stages)  # validates the names
    except ConfigError as exc:
        print(f"hydrocube: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "synth":
            for p in cmd_synth(cfg, args.force):
                print(p)
        elif args.command == "pipeline":
            print(run_pipeline(cfg, stages))
        else:
            print(make_report(cfg))
    except ConfigError as exc:
        print(f"hydrocube: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"hydrocube: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except FileNotFoundError as exc:
        print(f"hydrocube: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

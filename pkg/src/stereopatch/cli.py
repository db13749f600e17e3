"""Command line entry point: ``stereopatch {attack,eval,sweep,render,parse-calib}``.

Exit status is 0 on success, 1 on configuration, data or I/O errors and 2
when optimization hits a non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .errors import NumericalError, StereoPatchError

log = logging.getLogger("stereopatch")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def _common(p: argparse.ArgumentParser):
    p.add_argument("-c", "--config", help="experiment TOML file (defaults apply when omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. --set attack.steps=50 (repeatable)")
    p.add_argument("-o", "--output-dir", help="output directory (relative paths honor STEREOPATCH_OUTPUT_ROOT)")
    p.add_argument("--seed", type=int, help="attack seed")
    p.add_argument("--scene-count", type=int)
    p.add_argument("--steps", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stereopatch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="optimize a patch and write patch, trace, report and panels")
    _common(p)

    p = sub.add_parser("eval", help="evaluate a saved patch image")
    _common(p)
    p.add_argument("patch", help="patch PNG (a .json sidecar next to it is optional)")

    p = sub.add_parser("sweep", help="interval, rotation, distance or size sweep")
    _common(p)
    p.add_argument("kind", choices=["interval", "rotation", "distance", "size"])
    p.add_argument("--patch", help="patch PNG for rotation/distance/size sweeps")

    p = sub.add_parser("render", help="render clean and adversarial disparity panels")
    _common(p)
    p.add_argument("patch")
    p.add_argument("--limit", type=int, default=4)

    p = sub.add_parser("parse-calib", help="print the rig parsed from a KITTI calibration file")
    p.add_argument("file")
    p.add_argument("--left-key", default="P_rect_02")
    p.add_argument("--right-key", default="P_rect_03")
    p.add_argument("--rect-key", default="R_rect_00")
    return parser


def _config(args):
    from .config import load_config

    overrides = list(args.overrides)
    if args.output_dir:
        overrides.append("output_dir=" + json.dumps(args.output_dir))
    if args.seed is not None:
        overrides.append(f"attack.seed={args.seed}")
    if args.scene_count is not None:
        overrides.append(f"scene_count={args.scene_count}")
    if args.steps is not None:
        overrides.append(f"attack.steps={args.steps}")
    return load_config(args.config, overrides)


def _run(args) -> int:
    if args.command == "parse-calib":
        from .calib import describe_rig, parse_kitti_calibration

        try:
            text = Path(args.file).read_text()
        except OSError as exc:
            raise _IOError(str(exc)) from exc
        print(describe_rig(parse_kitti_calibration(text, args.left_key, args.right_key, args.rect_key)))
        return EXIT_OK

    from . import experiment

    cfg = _config(args)
    if args.command == "attack":
        def progress(rec):
            log.info("step %d total %.4f rmse %.4f entropy %.4f tv %.4f",
                     rec.step, rec.total, rec.rmse, rec.entropy, rec.tv)

        paths = experiment.run_attack(cfg, progress=progress)
        print(f"wrote {len(paths)} artifacts to {cfg.output_path()}")
        report = paths["report_json"]
        print(report.read_text().split('"meta"')[0].strip().rstrip(","))
    elif args.command == "eval":
        report, out = experiment.run_eval(cfg, args.patch)
        for key in ("d1", "epe", "attack_d1"):
            print(f"{key:10s} {report.mean[key]:8.3f} +- {report.std[key]:.3f}")
        print(f"report written to {out}")
    elif args.command == "sweep":
        paths = experiment.run_sweeps(cfg, args.kind, args.patch)
        print(paths["csv"].read_text(), end="")
        print(f"plot written to {paths['plot']}")
    elif args.command == "render":
        for p in experiment.render(cfg, args.patch, args.limit):
            print(p)
    return EXIT_OK


class _IOError(StereoPatchError):
    pass


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (StereoPatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

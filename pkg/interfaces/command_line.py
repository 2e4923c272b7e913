# interfaces/command_line.py
import argparse
import json
import os
from dataclasses import replace
from typing import List, Optional

from config.run_config import FILTERS, RunConfig, load_gait_spec, load_run_config, load_run_configs
from config.settings import ConfigError, settings
from core.sensor_log import LogFormatError

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="legged-odometry",
                                     description="Multi-IMU legged odometry: simulate, estimate, evaluate, compare")
    parser.add_argument("--robot", help="robot description JSON (default: ROBOT_DESCRIPTION_PATH)")
    parser.add_argument("--verbose", action="store_true", help="print skipped corrections as they happen")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a sensor log and ground truth from a gait spec")
    p.add_argument("--config", required=True, help="gait spec JSON")
    p.add_argument("--noise", help="run config JSON whose noise block drives the synthetic sensors")
    p.add_argument("--out", default=settings.OUTPUT_DIR, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-tilt", action="store_true", help="omit tilt channels from the sensor log")

    p = sub.add_parser("estimate", help="run one filter over a sensor log")
    p.add_argument("--config", help="run config JSON (default: built-in 5-imu-ekm config)")
    p.add_argument("--log", required=True, help="sensor log CSV")
    p.add_argument("--truth", help="ground truth CSV, needed by the 'truth' initial-state policy")
    p.add_argument("--out", help="trajectory CSV")
    p.add_argument("--filter", choices=FILTERS, help="override the filter of the run config")

    p = sub.add_parser("evaluate", help="score a trajectory against ground truth")
    p.add_argument("--trajectory", required=True, help="estimated trajectory CSV")
    p.add_argument("--truth", required=True, help="ground truth CSV (also gives the contact schedule)")
    p.add_argument("--link", help="link to evaluate (default: pelvis IMU)")
    p.add_argument("--out", help="metrics JSON (default: print only)")

    p = sub.add_parser("compare", help="simulate once and compare several filters")
    p.add_argument("--config", nargs="*", default=[], help="run config JSON files, one per filter")
    p.add_argument("--gait", required=True, help="gait spec JSON")
    p.add_argument("--filter", nargs="*", choices=FILTERS,
                   help="filters to run with the noise and contact settings of the first config")
    p.add_argument("--out", default=settings.OUTPUT_DIR, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="filters estimated in parallel")
    return parser


class CommandLine:
    def __init__(self, odometry_factory):
        self._factory = odometry_factory

    def simulate(self, args) -> int:
        spec = load_gait_spec(args.config)
        noise = load_run_config(args.noise).noise if args.noise else None
        app = self._factory(args.robot, args.verbose or None)
        app.simulate(spec, args.out, noise, seed=args.seed, with_tilt=not args.no_tilt)
        return EXIT_OK

    def estimate(self, args) -> int:
        cfg = load_run_config(args.config) if args.config else RunConfig()
        if args.filter:
            cfg = replace(cfg, filter=args.filter)
        out = args.out or cfg.outputs.get("trajectory") or os.path.join(settings.OUTPUT_DIR,
                                                                        f"trajectory_{cfg.filter}.csv")
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        app = self._factory(args.robot or cfg.robot, args.verbose or None)
        app.estimate(cfg, args.log, out, args.truth)
        return EXIT_OK

    def evaluate(self, args) -> int:
        app = self._factory(args.robot, args.verbose or None)
        report = app.evaluate(args.trajectory, args.truth, args.link)
        print(json.dumps(report, indent=2))
        if args.out:
            os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
            with open(args.out, "w", encoding="utf-8") as f:
                json.dump(report, f, indent=2)
            print(f"✅ Metrics written to {args.out}")
        return EXIT_OK

    def compare(self, args) -> int:
        configs = load_run_configs(args.config) if args.config else [RunConfig()]
        if args.filter:
            configs = [replace(configs[0], filter=f) for f in args.filter]
        if args.seed is not None:
            configs = [replace(c, seed=args.seed) for c in configs]
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        spec = load_gait_spec(args.gait)
        app = self._factory(args.robot or configs[0].robot, args.verbose or None)
        app.compare(configs, spec, args.out, jobs=args.jobs)
        with open(os.path.join(args.out, "comparison.txt"), "r", encoding="utf-8") as f:
            print(f.read())
        return EXIT_OK


def run(argv: Optional[List[str]] = None, odometry_factory=None) -> int:
    """Parse arguments and dispatch; returns the process exit code.

    Invalid input exits with 2. Any other failure during a run exits with 1.
    """
    args = build_parser().parse_args(argv)
    if odometry_factory is None:
        from main import LeggedOdometry
        odometry_factory = LeggedOdometry
    cli = CommandLine(odometry_factory)
    try:
        return getattr(cli, args.command)(args)
    except (ConfigError, LogFormatError, FileNotFoundError) as e:
        print(f"❌ Invalid input: {e}")
        return EXIT_INVALID
    except Exception as e:
        print(f"❌ {args.command} failed: {e}")
        print("\n💡 Troubleshooting tips:")
        print("1. Check that the sensor log and ground truth come from the same robot description")
        print("2. Run with --verbose to see skipped corrections")
        print("3. Check the .env overrides against config/settings.py")
        return EXIT_RUNTIME

# main.py
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, Iterable, List, Optional, Union

from config.run_config import GaitSpec, NoiseConfig, RunConfig
from config.settings import ConfigError, settings
from core.baseline import SingleImuEstimator
from core.estimator import MultiImuEstimator
from core.gait_simulator import generate_gait
from core.metrics import count_steps, evaluate
from core.robot_model import KinematicChain, load_chain
from core.sensor_log import SENSOR_LOG_FORMAT, LogFormatError, SensorFrame, SensorLogReader, write_versioned_csv
from core.sensor_synthesizer import synthesize_sensors
from utils.plot_export import export_comparison
from utils.trajectory_io import (TrajectoryWriter, initial_poses, read_ground_truth, read_trajectory,
                                 record_from_frame, truth_contacts, write_ground_truth)

Estimator = Union[MultiImuEstimator, SingleImuEstimator]


class LeggedOdometry:
    """Simulation, estimation and evaluation around one robot description"""

    def __init__(self, robot_path: str = None, verbose: bool = None):
        settings.validate()
        self.robot_path = robot_path or settings.ROBOT_DESCRIPTION_PATH
        if not os.path.exists(self.robot_path):
            raise ConfigError(f"robot description not found: {self.robot_path}")
        try:
            self.chain: KinematicChain = load_chain(self.robot_path)
        except ValueError as e:
            raise ConfigError(f"{self.robot_path}: {e}") from e
        self.verbose = settings.VERBOSE if verbose is None else verbose
        if self.verbose:
            print(f"🚀 Loaded {self.chain.name}: {len(self.chain.imu_names)} IMUs, "
                  f"{self.chain.n_angles} joints, {self.chain.n_deformations} deformation frames")

    # ------------------------------------------------------------------ simulate

    def simulate(self, spec: GaitSpec, out_dir: str, noise: NoiseConfig = None,
                 seed: int = None, with_tilt: bool = True) -> Dict[str, str]:
        """Write sensor_log.csv and ground_truth.csv for one gait"""
        noise = noise or NoiseConfig()
        seed = spec.seed if seed is None else seed
        print(f"🦿 Simulating {spec.path} gait: {spec.speed} m/s for {spec.duration} s (seed {seed})")
        try:
            truth = generate_gait(spec, self.chain)
        except ValueError as e:
            raise ConfigError(f"gait not feasible for {self.chain.name}: {e}") from e
        log = synthesize_sensors(truth, self.chain, noise, seed, with_tilt=with_tilt)
        os.makedirs(out_dir, exist_ok=True)
        paths = {"log": os.path.join(out_dir, "sensor_log.csv"),
                 "truth": os.path.join(out_dir, "ground_truth.csv")}
        write_versioned_csv(paths["log"], SENSOR_LOG_FORMAT, log)
        write_ground_truth(paths["truth"], truth, self.chain)
        print(f"✅ Wrote {len(log)} ticks to {out_dir}")
        return paths

    # ------------------------------------------------------------------ estimate

    def build_filter(self, cfg: RunConfig) -> Estimator:
        kwargs = dict(noise=cfg.noise, contact=cfg.contact, initial_state=cfg.initial_state,
                      verbose=self.verbose)
        if cfg.filter == "5-imu-ekm":
            return MultiImuEstimator(self.chain, extended=True, **kwargs)
        if cfg.filter == "5-imu":
            return MultiImuEstimator(self.chain, extended=False, **kwargs)
        if cfg.filter == "1-imu-ekm":
            return SingleImuEstimator(self.chain, variant="extended", **kwargs)
        if cfg.filter == "1-imu":
            return SingleImuEstimator(self.chain, variant="rigid", **kwargs)
        raise ConfigError(f"unknown filter {cfg.filter!r}")

    def run_filter(self, estimator: Estimator, frames: Iterable[SensorFrame], writer: TrajectoryWriter,
                   truth_path: str = None, window_s: float = None) -> int:
        """Initialize, then step through every frame; returns the number of rows written"""
        frames = iter(frames)
        policy = estimator.init_cfg.policy
        window_s = estimator.init_cfg.static_window_s if window_s is None else window_s
        first = next(frames, None)
        if first is None:
            raise LogFormatError("sensor log has no samples")
        pending: List[SensorFrame] = []
        if policy == "truth":
            if not truth_path:
                raise ConfigError("initial_state policy 'truth' needs a ground-truth file")
            df = read_ground_truth(truth_path, self.chain)
            if abs(float(df["t"].iloc[0]) - first.t) > 1e-6:
                raise LogFormatError("ground truth does not start at the first sensor sample")
            estimator.initialize_from_truth(initial_poses(df, self.chain), first)
        else:
            window = [first]
            for frame in frames:
                window.append(frame)
                if frame.t - first.t > window_s:
                    break
            estimator.initialize_static(window)
            pending = window[1:]
        writer.append(first.t, estimator.record())
        rows = 1
        for frame in _chain(pending, frames):
            estimator.step(frame)
            writer.append(frame.t, estimator.record())
            rows += 1
        return rows

    def estimate(self, cfg: RunConfig, log_path: str, out_path: str, truth_path: str = None) -> Dict:
        estimator = self.build_filter(cfg)
        reader = SensorLogReader(log_path, self.chain)
        if not reader.has_tilt:
            print("⚠️ Sensor log has no tilt channels, using the complementary tilt filter")
        print(f"📥 Estimating {cfg.filter} from {log_path}")
        start = time.perf_counter()
        with TrajectoryWriter(out_path, estimator.names) as writer:
            rows = self.run_filter(estimator, reader, writer, truth_path)
        wall = time.perf_counter() - start
        stats = {"filter": cfg.filter, "rows": rows, "wall_s": wall, "per_tick_ms": 1000.0 * wall / rows,
                 "diagnostics": len(estimator.diagnostics), "trajectory": out_path}
        print(f"✅ {cfg.filter}: {rows} ticks in {wall:.1f} s ({stats['per_tick_ms']:.3f} ms/tick)")
        if estimator.diagnostics:
            print(f"⚠️ {len(estimator.diagnostics)} corrections skipped or reduced (see diagnostics)")
        return stats

    # ------------------------------------------------------------------ evaluate

    def evaluate(self, est_path: str, truth_path: str, link: str = None) -> Dict:
        link = link or self.chain.base_imu
        print(f"🔍 Evaluating {est_path} against {truth_path}")
        truth_df = read_ground_truth(truth_path, self.chain)
        est = read_trajectory(est_path, link)
        truth = record_from_frame(truth_df, link)
        steps = count_steps(truth_contacts(truth_df, self.chain))
        return evaluate(est, truth, steps)

    def compare(self, configs: List[RunConfig], spec: GaitSpec, out_dir: str, jobs: int = 1) -> Dict[str, Dict]:
        """Simulate once, run every filter on the same log, evaluate and export the table"""
        if not configs:
            raise ConfigError("compare needs at least one run config")
        names = [c.filter for c in configs]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate filters in comparison: {names}")
        paths = self.simulate(spec, out_dir, configs[0].noise, seed=configs[0].seed)
        jobs_args = [(self.robot_path, cfg, paths["log"], os.path.join(out_dir, f"trajectory_{cfg.filter}.csv"),
                      paths["truth"]) for cfg in configs]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                outputs = list(pool.map(_estimate_job, jobs_args))
        else:
            outputs = [_estimate_job(a) for a in jobs_args]

        truth_df = read_ground_truth(paths["truth"], self.chain)
        truth = record_from_frame(truth_df, self.chain.base_imu)
        steps = count_steps(truth_contacts(truth_df, self.chain))
        results, estimates = {}, {}
        for cfg, stats in zip(configs, outputs):
            est = read_trajectory(stats["trajectory"], self.chain.base_imu)
            estimates[cfg.filter] = est
            results[cfg.filter] = evaluate(est, truth, steps)
        export_comparison(out_dir, results, estimates, truth)
        print(f"📊 Compared {len(configs)} filters over {steps} steps, results in {out_dir}")
        return results


def _chain(first: List[SensorFrame], rest: Iterable[SensorFrame]):
    yield from first
    yield from rest


def _estimate_job(args) -> Dict:
    robot_path, cfg, log_path, out_path, truth_path = args
    return LeggedOdometry(robot_path).estimate(cfg, log_path, out_path, truth_path)


def main(argv: Optional[List[str]] = None) -> int:
    from interfaces.command_line import run
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())

# test_baseline.py
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import block_diag

from config.run_config import GaitSpec, NoiseConfig
from core.baseline import (BaselineState, SingleImuEstimator, augment_foot, baseline_correct, baseline_predict,
                           marginalize_foot)
from core.contact import FLAT_ONLY, FootForces, detect_contact
from core.estimator import ImuSample, LinkState, floating_jacobians, joint_noise
from core.gait_simulator import generate_gait
from core.manifold import so3_exp
from core.metrics import TrajectoryRecord, rpe
from core.robot_model import JointState, forward_kinematics, load_chain, pair_kinematics
from core.sensor_log import dataframe_to_frames
from core.sensor_synthesizer import synthesize_sensors

ROBOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config", "robot_biped.json")
G = np.array([0.0, 0.0, -9.81])


def _short_walk(**overrides) -> GaitSpec:
    params = dict(speed=0.2, step_length=0.12, step_duration=0.6, duration=3.0,
                  stand_time=0.5, ramp_time=0.5, seed=3)
    params.update(overrides)
    return GaitSpec(**params)


def _consistent_state(chain, q, base, foot_var=1e-8):
    feet = {}
    for name in ("l_foot", "r_foot"):
        kin_R, kin_p = forward_kinematics(chain, q, chain.base_imu, name)
        feet[name] = (base.R @ kin_R, base.p + base.R @ kin_p)
    P = block_diag(1e-4 * np.eye(15), foot_var * np.eye(12))
    return BaselineState(base, feet, P, 0.0)


def test_stationary_prediction_keeps_everything():
    base = LinkState(np.eye(3), np.array([0.0, 0.0, 0.9]), np.zeros(3), np.array([0.001, 0.0, 0.0]))
    foot = (so3_exp([0.0, 0.0, 0.3]), np.array([0.1, 0.1, 0.08]))
    state = BaselineState(base, {"l_foot": foot}, 1e-4 * np.eye(21))
    out, _, _ = baseline_predict(state, ImuSample(base.b_g.copy(), np.array([0.0, 0.0, 9.81])), 0.001,
                                 NoiseConfig(), G)
    assert_allclose(out.base.R, np.eye(3), atol=1e-15)
    assert_allclose(out.base.p, base.p, atol=1e-15)
    assert_allclose(out.feet["l_foot"][0], foot[0])
    assert_allclose(out.feet["l_foot"][1], foot[1])


def test_foothold_covariance_grows_linearly():
    noise = NoiseConfig(foothold_noise=1e-6)
    base = LinkState(np.eye(3), np.zeros(3), np.zeros(3))
    state = BaselineState(base, {"l_foot": (np.eye(3), np.zeros(3))}, 1e-4 * np.eye(21))
    imu = ImuSample(np.array([0.1, -0.2, 0.3]), np.array([0.5, 0.0, 9.0]))
    for _ in range(100):
        state, _, _ = baseline_predict(state, imu, 0.001, noise, G)
    assert_allclose(np.diag(state.covariance)[15:], 1e-4 + 100 * 1e-6 * 0.001, rtol=1e-12)


def test_base_jacobians_equal_floating_model():
    rng = np.random.default_rng(0)
    base = LinkState(so3_exp(rng.uniform(-1, 1, 3)), rng.standard_normal(3), rng.standard_normal(3),
                     0.01 * rng.standard_normal(3), 0.1 * rng.standard_normal(3))
    imu = ImuSample(rng.standard_normal(3), rng.standard_normal(3))
    _, F, Gm = baseline_predict(BaselineState(base, {}, np.eye(15)), imu, 0.001, NoiseConfig(), G)
    F_ref, G_ref = floating_jacobians(base.R, imu.gyro - base.b_g, imu.accel - base.b_a)
    assert np.array_equal(F, F_ref)
    assert np.array_equal(Gm, G_ref)


def test_augment_places_foot_through_kinematics():
    chain = load_chain(ROBOT)
    q = JointState.rigid(chain, np.random.default_rng(1).uniform(-0.3, 0.3, chain.n_angles))
    base = LinkState(so3_exp([0.0, 0.1, 0.5]), np.array([1.0, 2.0, 0.9]), np.zeros(3))
    state = BaselineState(base, {}, 1e-4 * np.eye(15))
    kin = pair_kinematics(chain, q, [(chain.base_imu, "l_foot")])[0]
    out = augment_foot(state, "l_foot", kin, joint_noise(chain, NoiseConfig()))
    assert out.covariance.shape == (21, 21)
    assert_allclose(out.covariance, out.covariance.T)
    assert np.min(np.linalg.eigvalsh(out.covariance)) >= -1e-12
    R, p = forward_kinematics(chain, q, chain.base_imu, "l_foot")
    assert_allclose(out.feet["l_foot"][0], base.R @ R, atol=1e-12)
    assert_allclose(out.feet["l_foot"][1], base.p + base.R @ p, atol=1e-12)

    dropped = marginalize_foot(out, "l_foot")
    assert dropped.covariance.shape == (15, 15)
    assert_allclose(dropped.covariance, out.covariance[:15, :15])


def test_consistent_footholds_leave_base_unchanged():
    chain = load_chain(ROBOT)
    q = JointState.rigid(chain, np.zeros(chain.n_angles))
    base = LinkState(np.eye(3), np.array([0.0, 0.0, 0.9]), np.zeros(3))
    state = _consistent_state(chain, q, base)
    out = baseline_correct(state, q, chain, NoiseConfig())
    assert_allclose(out.base.p, base.p, atol=1e-12)
    assert_allclose(out.base.R, base.R, atol=1e-12)
    assert np.trace(out.covariance) <= np.trace(state.covariance)


def test_shifted_base_is_pulled_back():
    chain = load_chain(ROBOT)
    q = JointState.rigid(chain, np.zeros(chain.n_angles))
    truth = LinkState(np.eye(3), np.array([0.0, 0.0, 0.9]), np.zeros(3))
    state = _consistent_state(chain, q, truth)
    shifted = BaselineState(LinkState(np.eye(3), truth.p + [0.01, 0.0, 0.0], np.zeros(3)),
                            state.feet, state.covariance, 0.0)
    out = baseline_correct(shifted, q, chain, NoiseConfig())
    assert np.linalg.norm(out.base.p - truth.p) < 0.005


def test_correction_ignores_unknown_feet():
    chain = load_chain(ROBOT)
    q = JointState.rigid(chain, np.zeros(chain.n_angles))
    state = BaselineState(LinkState(np.eye(3), np.zeros(3), np.zeros(3)), {}, np.eye(15))
    assert baseline_correct(state, q, chain, NoiseConfig(), ["l_foot"]) is state


def test_invalid_variant():
    with pytest.raises(ValueError):
        SingleImuEstimator(load_chain(ROBOT), variant="flexible")


def _run(variant, truth, frames, chain, noise):
    est = SingleImuEstimator(chain, noise, variant=variant)
    est.initialize_from_truth({chain.base_imu: truth.pose(0, chain.base_imu)}, frames[0])
    positions = []
    tracked = []
    for frame in frames[1:]:
        state = est.step(frame)
        positions.append(state.base.p.copy())
        tracked.append(set(state.feet))
    return est, np.array(positions), tracked


def test_rigid_and_extended_agree_without_deformation():
    chain = load_chain(ROBOT)
    truth = generate_gait(_short_walk(), chain)
    noise = NoiseConfig(tilt_std=0.0, joint_std=0.0)
    frames = list(dataframe_to_frames(chain, synthesize_sensors(truth, chain, noise, 21)))
    _, rigid, _ = _run("rigid", truth, frames, chain, NoiseConfig())
    _, extended, _ = _run("extended", truth, frames, chain, NoiseConfig())
    assert_allclose(rigid, extended, rtol=0, atol=1e-12)


def test_extended_kinematics_help_when_links_deform():
    chain = load_chain(ROBOT)
    truth = generate_gait(_short_walk(duration=4.0, deformation_amplitude=0.02), chain)
    frames = list(dataframe_to_frames(chain, synthesize_sensors(truth, chain, NoiseConfig(), 24)))
    base = truth.index(chain.base_imu)
    reference = TrajectoryRecord(truth.t[1:], truth.p[1:, base])
    errors = {}
    for variant in ("rigid", "extended"):
        _, positions, _ = _run(variant, truth, frames, chain, NoiseConfig())
        errors[variant] = rpe(TrajectoryRecord(truth.t[1:], positions), reference)
    assert errors["extended"] <= errors["rigid"]


def test_footholds_follow_flat_contact():
    chain = load_chain(ROBOT)
    truth = generate_gait(_short_walk(), chain)
    frames = list(dataframe_to_frames(chain, synthesize_sensors(truth, chain, NoiseConfig.noiseless(), 22)))
    est, positions, tracked = _run("rigid", truth, frames, chain, NoiseConfig())
    imu_to_foot = {g.imu: foot for foot, g in chain.feet.items()}
    for frame, feet in zip(frames[1:], tracked):
        for name in feet:
            geometry = chain.feet[imu_to_foot[name]]
            forces = FootForces(frame.forces[imu_to_foot[name]], geometry.sensors)
            # held down to the release level
            assert detect_contact(forces, FLAT_ONLY, threshold=15.0)
    assert any(len(f) == 1 for f in tracked) and any(len(f) == 2 for f in tracked)
    assert np.linalg.norm(positions[-1] - truth.pose(truth.n - 1, chain.base_imu)[1]) < 0.05
    assert not est.diagnostics


def test_standing_baseline_does_not_drift():
    chain = load_chain(ROBOT)
    truth = generate_gait(GaitSpec(speed=0.0, duration=2.0), chain)
    frames = list(dataframe_to_frames(chain, synthesize_sensors(truth, chain, NoiseConfig.noiseless(), 23)))
    _, positions, tracked = _run("extended", truth, frames, chain, NoiseConfig())
    assert_allclose(positions, np.tile(truth.p[0, 0], (len(positions), 1)), atol=1e-6)
    assert all(len(f) == 2 for f in tracked)


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")

# test_simulator.py
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from config.run_config import GaitSpec, NoiseConfig, load_gait_spec
from core.contact import ANY_SENSOR, FLAT_ONLY, FootForces, detect_contact
from core.estimator import ImuSample, LinkState, predict_floating
from core.gait_simulator import generate_gait, pelvis_heading, smoothstep, step_count
from core.manifold import E_Z, so3_exp, so3_exp_batch
from core.robot_model import JointState, forward_kinematics, load_chain
from core.sensor_synthesizer import bilinear_forces, synthesize_sensors
from core.tilt_observer import ComplementaryTiltObserver

HERE = os.path.dirname(os.path.abspath(__file__))
ROBOT = os.path.join(HERE, "config", "robot_biped.json")


def _short_walk(**overrides) -> GaitSpec:
    params = dict(speed=0.2, step_length=0.12, step_duration=0.6, duration=3.0,
                  stand_time=0.5, ramp_time=0.5, seed=3)
    params.update(overrides)
    return GaitSpec(**params)


def _channel(df, imu, kind):
    return df[[f"{imu}_{kind}{a}" for a in "xyz"]].to_numpy()


def _detections(df, chain, mode):
    out = {}
    for foot, geometry in chain.feet.items():
        forces = df[[f"{foot}_f{k + 1}" for k in range(4)]].to_numpy()
        out[foot] = np.array([detect_contact(FootForces(f, geometry.sensors), mode) for f in forces])
    return out


def test_standing_still():
    chain = load_chain(ROBOT)
    truth = generate_gait(GaitSpec(speed=0.0, duration=2.0), chain)
    assert truth.n == 2001
    assert_allclose(truth.v, 0.0, atol=1e-12)
    assert_allclose(truth.omega, 0.0, atol=1e-12)
    for foot in chain.feet:
        assert truth.contact[foot].all() and truth.flat[foot].all()
        assert_allclose(truth.load[foot], 350.0)
    assert_allclose(truth.angles, np.tile(truth.angles[0], (truth.n, 1)))


def test_straight_walk_covers_distance():
    chain = load_chain(ROBOT)
    truth = generate_gait(load_gait_spec(os.path.join(HERE, "config", "gait_straight.json")), chain)
    assert truth.n == 20001
    j = truth.index("pelvis")
    displacement = np.linalg.norm(truth.p[-1, j, :2] - truth.p[0, j, :2])
    assert abs(displacement - 3.0) < 0.05


def test_circular_walk_turns_once():
    chain = load_chain(ROBOT)
    truth = generate_gait(load_gait_spec(os.path.join(HERE, "config", "gait_circular.json")), chain)
    heading = pelvis_heading(truth)
    assert abs((heading[-1] - heading[0]) - 2 * np.pi) < 1e-3


def test_smoothstep_ends():
    x = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    assert_allclose(smoothstep(x), [0.0, 0.0, 0.5, 1.0, 1.0])


def test_step_count():
    assert step_count(GaitSpec(speed=0.0)) == 0
    assert step_count(GaitSpec()) == 18


def test_gait_spec_validation():
    with pytest.raises(ValueError):
        GaitSpec(step_length=0.5).validate()
    with pytest.raises(ValueError):
        GaitSpec(path="circular").validate()
    with pytest.raises(ValueError):
        GaitSpec(duration=3.0).validate()
    with pytest.raises(ValueError):
        GaitSpec(path="zigzag").validate()
    with pytest.raises(ValueError):
        GaitSpec.from_dict({"speed": 0.1})


def test_infeasible_step_length():
    chain = load_chain(ROBOT)
    with pytest.raises(ValueError):
        generate_gait(GaitSpec(speed=1.5, step_length=1.5, duration=20.0), chain)


def test_truth_matches_forward_kinematics():
    chain = load_chain(ROBOT)
    truth = generate_gait(_short_walk(deformation_amplitude=0.02), chain)
    assert np.max(np.abs(truth.deformations)) > 0.01
    base = truth.index("pelvis")
    for k in range(0, truth.n, 250):
        q = JointState(truth.angles[k], so3_exp_batch(truth.deformations[k]))
        for name in chain.imu_names:
            R, p = forward_kinematics(chain, q, "pelvis", name)
            j = truth.index(name)
            assert_allclose(truth.R[k, base] @ R, truth.R[k, j], atol=1e-9)
            assert_allclose(truth.p[k, base] + truth.R[k, base] @ p, truth.p[k, j], atol=1e-9)


def test_feet_stay_put_while_flat():
    chain = load_chain(ROBOT)
    truth = generate_gait(_short_walk(), chain)
    for foot, geometry in chain.feet.items():
        j = truth.index(geometry.imu)
        flat = truth.flat[foot]
        assert_allclose(truth.v[flat, j], 0.0, atol=1e-5)
        assert not truth.contact[foot].all()


def test_synthesis_is_deterministic():
    chain = load_chain(ROBOT)
    truth = generate_gait(_short_walk(), chain)
    a = synthesize_sensors(truth, chain, NoiseConfig(), seed=5)
    b = synthesize_sensors(truth, chain, NoiseConfig(), seed=5)
    c = synthesize_sensors(truth, chain, NoiseConfig(), seed=6)
    assert a.equals(b)
    assert not a.equals(c)
    assert list(a.columns)[0] == "t" and len(a) == truth.n


def test_stationary_channels():
    chain = load_chain(ROBOT)
    truth = generate_gait(GaitSpec(speed=0.0, duration=0.5), chain)
    df = synthesize_sensors(truth, chain, NoiseConfig.noiseless(), seed=0)
    for name in chain.imu_names:
        R = truth.R[0, truth.index(name)]
        assert_allclose(_channel(df, name, "g"), 0.0, atol=1e-12)
        assert_allclose(_channel(df, name, "a"), np.tile(R.T @ [0, 0, 9.81], (truth.n, 1)), atol=1e-9)
        assert_allclose(df[[f"{name}_tilt_{a}" for a in "xyz"]].to_numpy()[0], R.T @ E_Z, atol=1e-12)
    for foot in chain.feet:
        total = df[[f"{foot}_f{k + 1}" for k in range(4)]].to_numpy().sum(axis=1)
        assert_allclose(total, 350.0)


def test_noisy_tilts_are_unit_vectors():
    chain = load_chain(ROBOT)
    truth = generate_gait(_short_walk(), chain)
    df = synthesize_sensors(truth, chain, NoiseConfig(), seed=1)
    tilts = df[[f"l_foot_tilt_{a}" for a in "xyz"]].to_numpy()
    assert_allclose(np.linalg.norm(tilts, axis=1), 1.0, atol=1e-12)
    without = synthesize_sensors(truth, chain, NoiseConfig(), seed=1, with_tilt=False)
    assert not any(c.endswith("_tilt_x") for c in without.columns)


def test_bilinear_forces():
    f = bilinear_forces(np.array([100.0]), np.array([0.25]))
    assert_allclose(f, [[37.5, 37.5, 12.5, 12.5]])


def test_any_sensor_detection_matches_truth():
    chain = load_chain(ROBOT)
    truth = generate_gait(_short_walk(), chain)
    df = synthesize_sensors(truth, chain, NoiseConfig.noiseless(), seed=0)
    detected = _detections(df, chain, ANY_SENSOR)
    for foot in chain.feet:
        assert np.array_equal(detected[foot], truth.contact[foot])


def test_flat_only_is_strict_subset_of_any_sensor():
    chain = load_chain(ROBOT)
    truth = generate_gait(_short_walk(), chain)
    df = synthesize_sensors(truth, chain, NoiseConfig(), seed=2)
    flat = _detections(df, chain, FLAT_ONLY)
    anyc = _detections(df, chain, ANY_SENSOR)
    for foot in chain.feet:
        assert not np.any(flat[foot] & ~anyc[foot])
        assert np.any(anyc[foot] & ~flat[foot])
        assert not np.any(flat[foot] & ~truth.flat[foot])


def test_strapdown_reproduces_truth():
    chain = load_chain(ROBOT)
    truth = generate_gait(GaitSpec(duration=10.0), chain)
    df = synthesize_sensors(truth, chain, NoiseConfig.noiseless(), seed=0)
    gravity = np.array([0.0, 0.0, -9.81])
    for name in ("pelvis", "l_foot"):
        j = truth.index(name)
        gyro, accel = _channel(df, name, "g"), _channel(df, name, "a")
        x = LinkState(truth.R[0, j], truth.p[0, j], truth.v[0, j])
        worst = 0.0
        for k in range(truth.n - 1):
            x = predict_floating(x, ImuSample(gyro[k], accel[k]), truth.t[k + 1] - truth.t[k], gravity).state
            worst = max(worst, float(np.linalg.norm(x.p - truth.p[k + 1, j])))
        assert worst < 1e-4


def test_tilt_observer():
    with pytest.raises(ValueError):
        ComplementaryTiltObserver(gain=0.0)
    obs = ComplementaryTiltObserver(gain=0.05)
    R = so3_exp([0.2, -0.1, 0.4])
    accel = R.T @ [0.0, 0.0, 9.81]
    assert_allclose(obs.update(np.zeros(3), accel, 0.001), R.T @ E_Z, atol=1e-12)
    for _ in range(10):
        assert_allclose(obs.update(np.zeros(3), accel, 0.001), R.T @ E_Z, atol=1e-12)
    obs.reset(np.array([0.0, 0.0, 9.81]))
    for _ in range(400):
        tilt = obs.update(np.zeros(3), accel, 0.001)
    assert np.linalg.norm(tilt - R.T @ E_Z) < 1e-6
    with pytest.raises(ValueError):
        obs.reset(np.zeros(3))


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")

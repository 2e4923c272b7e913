# test_contact.py
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.contact import (ANY_SENSOR, FLAT_ONLY, ContactDetector, FootForces, center_of_pressure,
                          detect_contact, lever_arm)
from core.robot_model import load_chain

ROBOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config", "robot_biped.json")
# heel-left, heel-right, toe-right, toe-left
SENSORS = np.array([[-0.08, 0.06, -0.08], [-0.08, -0.06, -0.08], [0.18, -0.06, -0.08], [0.18, 0.06, -0.08]])


def _foot(*forces):
    return FootForces(np.array(forces, dtype=float), SENSORS)


def test_unloaded_foot_is_floating():
    for mode in (ANY_SENSOR, FLAT_ONLY):
        assert not detect_contact(_foot(0, 0, 0, 0), mode)


def test_single_sensor_only_counts_for_any_sensor():
    f = _foot(40, 0, 0, 0)
    assert detect_contact(f, ANY_SENSOR, threshold=20.0)
    assert not detect_contact(f, FLAT_ONLY, threshold=20.0)


def test_diagonal_pair_counts_for_both():
    for f in (_foot(30, 0, 30, 0), _foot(0, 30, 0, 30)):
        assert detect_contact(f, ANY_SENSOR)
        assert detect_contact(f, FLAT_ONLY)
    # a heel edge alone is not flat
    assert not detect_contact(_foot(30, 30, 0, 0), FLAT_ONLY)


def test_flat_implies_any_sensor():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        f = _foot(*rng.uniform(0, 50, 4))
        if detect_contact(f, FLAT_ONLY):
            assert detect_contact(f, ANY_SENSOR)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        detect_contact(_foot(1, 1, 1, 1), "heel-only")
    with pytest.raises(ValueError):
        detect_contact(_foot(1, 1, 1, 1), ANY_SENSOR, threshold=0.0)
    with pytest.raises(ValueError):
        FootForces(np.ones(3), SENSORS[:3])


def test_center_of_pressure():
    assert_allclose(center_of_pressure(_foot(1, 1, 1, 1)), SENSORS.mean(axis=0))
    assert_allclose(center_of_pressure(_foot(0, 0, 7, 0)), SENSORS[2])
    assert_allclose(center_of_pressure(_foot(0, 0, 1, 1)), [0.18, 0.0, -0.08])
    with pytest.raises(ValueError):
        center_of_pressure(_foot(0, 0, 0, 0))


def test_lever_arm():
    chain = load_chain(ROBOT)
    mount = chain.imu("l_foot").translation
    assert_allclose(lever_arm(chain, "l_foot", mount), np.zeros(3), atol=1e-15)
    cop = np.array([0.1, 0.0, 0.0])
    assert_allclose(lever_arm(chain, "l_foot", cop), mount - cop)
    with pytest.raises(ValueError):
        lever_arm(chain, "hand", cop)


def test_detector_hysteresis_and_debounce():
    det = ContactDetector(ANY_SENSOR, threshold=20.0, hysteresis=5.0, debounce=0.010)
    assert not det.update(0.000, _foot(0, 0, 0, 0))
    assert not det.update(0.001, _foot(22, 0, 0, 0))   # below engage level
    assert det.update(0.002, _foot(26, 0, 0, 0))
    assert det.update(0.005, _foot(10, 0, 0, 0))       # held by the dwell time
    assert det.update(0.013, _foot(18, 0, 0, 0))       # above release level
    assert not det.update(0.014, _foot(14, 0, 0, 0))


def test_detector_first_sample_uses_plain_threshold():
    det = ContactDetector(FLAT_ONLY)
    assert det.update(0.0, _foot(21, 0, 21, 0))


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")

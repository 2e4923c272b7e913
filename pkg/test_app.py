# test_app.py
import io
import os
import tempfile

import app as server
from config.run_config import GaitSpec, NoiseConfig, RunConfig
from main import LeggedOdometry

ROBOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config", "robot_biped.json")

if server.odometry is None:
    server.odometry = LeggedOdometry(ROBOT)


def _client():
    server.app.config['TESTING'] = True
    return server.app.test_client()


def _gait():
    return GaitSpec(speed=0.2, step_length=0.12, step_duration=0.6, duration=4.0,
                    stand_time=1.2, ramp_time=0.5, seed=3).to_dict()


def test_status():
    response = _client().get('/status')
    assert response.status_code == 200
    body = response.get_json()
    assert body['is_ready'] and len(body['imus']) == 5
    assert body['filters'] == ["1-imu", "1-imu-ekm", "5-imu", "5-imu-ekm"]


def test_bad_requests():
    client = _client()
    assert client.post('/evaluate', data={}).status_code == 400
    assert client.post('/compare', data="not json").status_code == 400
    response = client.post('/compare', json={'gait': _gait(), 'filters': ['2-imu']})
    assert response.status_code == 400
    assert 'Unknown filters' in response.get_json()['error']
    gait = _gait()
    del gait['schema_version']
    assert client.post('/compare', json={'gait': gait, 'filters': ['1-imu']}).status_code == 400


def test_compare_single_filter():
    response = _client().post('/compare', json={'gait': _gait(), 'filters': ['1-imu'], 'seed': 4})
    assert response.status_code == 200
    body = response.get_json()
    assert body['filters'] == ['1-imu']
    assert body['results']['1-imu']['samples'] == 4001
    assert body['table'].splitlines()[2].startswith('1-imu')


def test_evaluate_uploaded_files():
    odometry = server.odometry
    with tempfile.TemporaryDirectory() as tmp:
        paths = odometry.simulate(GaitSpec.from_dict(_gait()), tmp, NoiseConfig())
        traj = os.path.join(tmp, "traj.csv")
        odometry.estimate(RunConfig(robot=ROBOT, filter="1-imu"), paths['log'], traj)
        with open(traj, 'rb') as f:
            traj_bytes = f.read()
        with open(paths['truth'], 'rb') as f:
            truth_bytes = f.read()
    data = {'trajectory': (io.BytesIO(traj_bytes), 'traj.csv'),
            'truth': (io.BytesIO(truth_bytes), 'ground_truth.csv')}
    response = _client().post('/evaluate', data=data, content_type='multipart/form-data')
    assert response.status_code == 200
    report = response.get_json()
    assert report['format'] == "multi-imu-metrics v1"
    assert report['samples'] == 4001

    swapped = {'trajectory': (io.BytesIO(truth_bytes), 'truth.csv'),
               'truth': (io.BytesIO(truth_bytes), 'ground_truth.csv')}
    assert _client().post('/evaluate', data=swapped, content_type='multipart/form-data').status_code == 400


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")

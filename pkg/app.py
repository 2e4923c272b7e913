# app.py
import os
import tempfile
from dataclasses import replace
from datetime import datetime

from dotenv import load_dotenv
from flask import Flask, jsonify, request
from flask_cors import CORS
from werkzeug.utils import secure_filename

from config.run_config import FILTERS, GaitSpec, RunConfig
from main import LeggedOdometry
from utils.plot_export import comparison_table, ordered

# Load environment variables
load_dotenv()

app = Flask(__name__)
CORS(app, origins=os.getenv("CORS_ORIGINS", "http://localhost:3001,http://127.0.0.1:3001").split(","))

# Sensor logs and trajectories of long runs are large
app.config['MAX_CONTENT_LENGTH'] = 200 * 1024 * 1024

try:
    odometry = LeggedOdometry()
    print(f"✅ Legged odometry initialized successfully at {datetime.now()}")
except Exception as e:
    print(f"❌ Failed to initialize legged odometry: {e}")
    odometry = None


@app.route('/status', methods=['GET'])
def get_status():
    if not odometry:
        return jsonify({'error': 'Legged odometry not initialized'}), 500
    chain = odometry.chain
    return jsonify({
        'robot': chain.name,
        'imus': chain.imu_names,
        'feet': list(chain.feet),
        'joints': chain.n_angles,
        'deformation_frames': chain.n_deformations,
        'filters': list(FILTERS),
        'is_ready': True
    })


@app.route('/evaluate', methods=['POST'])
def evaluate_upload():
    """Score an uploaded trajectory CSV against an uploaded ground-truth CSV"""
    if not odometry:
        return jsonify({'error': 'Legged odometry not initialized'}), 500
    for key in ('trajectory', 'truth'):
        if key not in request.files or request.files[key].filename == '':
            return jsonify({'error': f'No {key} file provided'}), 400

    with tempfile.TemporaryDirectory() as tmp:
        paths = {}
        for key in ('trajectory', 'truth'):
            file = request.files[key]
            paths[key] = os.path.join(tmp, f"{key}_{secure_filename(file.filename) or key}")
            file.save(paths[key])
        try:
            report = odometry.evaluate(paths['trajectory'], paths['truth'], request.form.get('link') or None)
        except ValueError as e:
            return jsonify({'error': str(e)}), 400
        except Exception as e:
            print(f"❌ Evaluation failed: {e}")
            return jsonify({'error': f'Evaluation failed: {e}'}), 500
    return jsonify(report)


@app.route('/compare', methods=['POST'])
def compare():
    """Simulate a gait and compare filters on it; body: {gait, filters, seed}"""
    if not odometry:
        return jsonify({'error': 'Legged odometry not initialized'}), 500
    data = request.get_json(silent=True)
    if not isinstance(data, dict) or 'gait' not in data:
        return jsonify({'error': 'JSON body with a gait spec is required'}), 400
    filters = data.get('filters') or list(FILTERS)
    unknown = [f for f in filters if f not in FILTERS]
    if unknown:
        return jsonify({'error': f'Unknown filters: {unknown}'}), 400

    try:
        spec = GaitSpec.from_dict(data['gait'])
        base = RunConfig(robot=odometry.robot_path, seed=int(data.get('seed', spec.seed)))
        configs = [replace(base, filter=f) for f in filters]
    except (TypeError, ValueError) as e:
        return jsonify({'error': str(e)}), 400

    print(f"📊 Comparing {len(configs)} filters over a {spec.duration} s {spec.path} gait")
    with tempfile.TemporaryDirectory() as tmp:
        try:
            results = odometry.compare(configs, spec, tmp)
        except ValueError as e:
            return jsonify({'error': str(e)}), 400
        except Exception as e:
            print(f"❌ Comparison failed: {e}")
            return jsonify({'error': f'Comparison failed: {e}'}), 500
    return jsonify({
        'filters': ordered(results),
        'results': results,
        'table': comparison_table(results)
    })


if __name__ == '__main__':
    print("🚀 Starting legged odometry server...")
    print("📍 Server will be available at: http://localhost:8000")
    app.run(debug=True, port=8000, host='0.0.0.0')

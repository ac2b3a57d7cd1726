"""
Directory layout of a simulated dataset.

    imu.csv        t, wx, wy, wz, ax, ay, az
    keyframes.csv  t, r00..r22 (row-major), px, py, pz, vx, vy, vz, bgx..bgz, bax..baz
    tracks.csv     landmark_id, keyframe_id, u, v
    landmarks.csv  landmark_id, x, y, z
    biases.csv     t, bgx, bgy, bgz, bax, bay, baz   (true bias per IMU sample)
    config.json    resolved experiment config
    config.source.json  the loaded config file, copied byte for byte
"""
import csv
import shutil
from pathlib import Path

import numpy as np

from vio.exceptions import ConfigError, DatasetFormatError, InvalidInputError
from vio.services.configuration import load_config
from vio.services.factors import LandmarkTrack, Observation
from vio.services.preintegration import ImuSample
from vio.services.simulator import SimDataset
from vio.services.state import ImuBias, NavState

IMU_HEADER = ['t', 'wx', 'wy', 'wz', 'ax', 'ay', 'az']
KEYFRAME_HEADER = (['t'] + [f'r{i}{j}' for i in range(3) for j in range(3)]
                   + ['px', 'py', 'pz', 'vx', 'vy', 'vz',
                      'bgx', 'bgy', 'bgz', 'bax', 'bay', 'baz'])
TRACK_HEADER = ['landmark_id', 'keyframe_id', 'u', 'v']
LANDMARK_HEADER = ['landmark_id', 'x', 'y', 'z']
BIAS_HEADER = ['t', 'bgx', 'bgy', 'bgz', 'bax', 'bay', 'baz']


def fmt(value):
    """17 significant digits: enough to round-trip a double."""
    return f'{value:.17g}'


def write_csv(path, header, rows):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, (int, np.integer, str)) else fmt(v) for v in row])


def state_row(t, state):
    return ([t] + list(state.rotation.ravel()) + list(state.position) + list(state.velocity)
            + list(state.bias.gyro) + list(state.bias.accel))


def write_states(path, times, states):
    write_csv(path, KEYFRAME_HEADER, (state_row(t, s) for t, s in zip(times, states)))


def write_dataset(dataset, config, out_dir):
    """Write the dataset, the resolved config and a copy of the source config into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / 'imu.csv', IMU_HEADER,
              ([s.timestamp, *s.gyro, *s.accel] for s in dataset.imu_samples))
    write_states(out / 'keyframes.csv', dataset.keyframe_times, dataset.states)
    write_csv(out / 'tracks.csv', TRACK_HEADER,
              ([t.landmark_id, o.keyframe_id, o.pixel[0], o.pixel[1]]
               for t in dataset.tracks for o in t.observations))
    write_csv(out / 'landmarks.csv', LANDMARK_HEADER,
              ([i, *p] for i, p in enumerate(dataset.landmarks)))
    dt = 1.0 / dataset.config.imu_rate
    write_csv(out / 'biases.csv', BIAS_HEADER,
              ([k * dt, *b] for k, b in enumerate(dataset.bias_trajectory)))
    (out / 'config.json').write_text(config.to_json() + '\n', encoding='utf-8')
    if config.source:
        shutil.copyfile(config.source, out / 'config.source.json')
    return out


def read_csv(path, header, types=None):
    """Rows of a CSV file as lists of numbers; errors carry the file and line number."""
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(path.name, 0, 'file is missing')
    rows = []
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first != header:
            raise DatasetFormatError(path.name, 1, f'expected header {",".join(header)}')
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(path.name, line,
                                         f'expected {len(header)} columns, got {len(row)}')
            try:
                values = [(types[i] if types else float)(v) for i, v in enumerate(row)]
            except ValueError as exc:
                raise DatasetFormatError(path.name, line, f'not a number ({exc})')
            if not all(np.isfinite(values)):
                raise DatasetFormatError(path.name, line, 'non-finite value')
            rows.append(values)
    return rows


def read_states(path):
    rows = read_csv(path, KEYFRAME_HEADER)
    times, states = [], []
    for n, row in enumerate(rows, start=2):
        v = np.array(row)
        try:
            states.append(NavState(v[1:10].reshape(3, 3), v[10:13], v[13:16],
                                   ImuBias(v[16:19], v[19:22])))
        except InvalidInputError as exc:
            raise DatasetFormatError(Path(path).name, n, str(exc))
        times.append(v[0])
    return np.array(times), states


def read_dataset(path):
    """Load (ExperimentConfig, SimDataset) from a dataset directory."""
    path = Path(path)
    try:
        config = load_config(path / 'config.json')
    except ConfigError as exc:
        raise DatasetFormatError('config.json', 0, str(exc)) from exc

    imu_rows = read_csv(path / 'imu.csv', IMU_HEADER)
    samples = []
    for n, row in enumerate(imu_rows, start=2):
        if samples and row[0] <= samples[-1].timestamp:
            raise DatasetFormatError('imu.csv', n, 'timestamps must be strictly increasing')
        samples.append(ImuSample(row[0], row[1:4], row[4:7]))

    times, states = read_states(path / 'keyframes.csv')
    needed = (len(states) - 1) * config.sim.samples_per_keyframe
    if len(samples) < needed:
        raise DatasetFormatError('imu.csv', len(imu_rows) + 1,
                                 f'{len(samples)} samples, {needed} needed for {len(states)} keyframes')

    tracks = {}
    for n, (lid, kid, u, v) in enumerate(
            read_csv(path / 'tracks.csv', TRACK_HEADER, (int, int, float, float)), start=2):
        if not 0 <= kid < len(states):
            raise DatasetFormatError('tracks.csv', n, f'unknown keyframe {kid}')
        track = tracks.setdefault(lid, LandmarkTrack(lid))
        if any(o.keyframe_id == kid for o in track.observations):
            raise DatasetFormatError('tracks.csv', n, f'landmark {lid} seen twice in keyframe {kid}')
        track.observations.append(Observation(kid, np.array([u, v]), config.sim.pixel_sigma))

    landmarks = np.array([row[1:] for row in read_csv(
        path / 'landmarks.csv', LANDMARK_HEADER, (int, float, float, float))]).reshape(-1, 3)
    biases = np.array([row[1:] for row in read_csv(path / 'biases.csv', BIAS_HEADER)]).reshape(-1, 6)

    dataset = SimDataset(
        params=config.trajectory, config=config.sim, keyframe_times=times, states=states,
        imu_samples=samples, bias_trajectory=biases,
        tracks=[tracks[k] for k in sorted(tracks)], landmarks=landmarks,
        camera=config.sim.camera(),
    )
    return config, dataset

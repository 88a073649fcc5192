import numpy as np
import pytest

from densemap.lib.geometry import PointCloud, Pose
from densemap.lib.pc_utils import (DEPTH_RAW_MAX, decode_depth, encode_depth, load_point_cloud,
                                   load_trajectory, read_depth_png, read_plyfile,
                                   save_point_cloud, save_polyline, save_trajectory,
                                   write_depth_png)


def test_depth_png(tmp_path):
  depth = np.array([[1.0, np.nan], [2.5, 300.0]])
  path = str(tmp_path / 'depth' / 'd.png')
  write_depth_png(path, depth)
  back = read_depth_png(path, saturated_value=256.0)
  assert back[0, 0] == 1.0
  assert np.isnan(back[0, 1])
  assert back[1, 0] == 2.5
  assert back[1, 1] == 256.0


def test_depth_codec_quantizes():
  raw = encode_depth([[0.001, 1.0 + 1 / 1024]])
  assert raw.tolist() == [[1, 256]]
  assert decode_depth(np.array([[0, DEPTH_RAW_MAX]], dtype=np.uint16))[0, 1] == DEPTH_RAW_MAX / 256


def test_read_depth_png_missing(tmp_path):
  with pytest.raises(FileNotFoundError):
    read_depth_png(str(tmp_path / 'nope.png'))


def test_point_cloud_ply(tmp_path):
  points = np.array([[0., 1., 2.], [3., 4., 5.]])
  for text in (True, False):
    path = str(tmp_path / f'cloud_{text}.ply')
    save_point_cloud(PointCloud(points), path, text=text)
    assert np.allclose(load_point_cloud(path).points, points)


def test_polyline(tmp_path):
  path = str(tmp_path / 'path.ply')
  save_polyline([[0., 0., 0.], [1., 0., 0.], [1., 1., 0.]], path)
  edges = read_plyfile(path, 'edge')
  assert edges['vertex1'].tolist() == [0, 1]
  assert edges['vertex2'].tolist() == [1, 2]
  assert read_plyfile(path, 'face') is None


def test_trajectory(tmp_path):
  poses = [Pose.from_yaw(0.2 * i, [i, 2. * i, 1.], 0.1 * i) for i in (2, 0, 1)]
  path = str(tmp_path / 'traj.txt')
  save_trajectory(poses, path)
  loaded = load_trajectory(path)
  assert [p.timestamp for p in loaded] == pytest.approx([0., 0.1, 0.2])
  assert np.allclose(loaded[2].matrix, poses[0].matrix)


def test_trajectory_bad_columns(tmp_path):
  path = tmp_path / 'traj.txt'
  path.write_text('0 1 2 3\n')
  with pytest.raises(ValueError):
    load_trajectory(str(path))

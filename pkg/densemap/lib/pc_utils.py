"""File codecs: PLY clouds / scans / meshes, 16-bit depth PNG and trajectory text files."""

import logging
import os

import cv2
import numpy as np
from plyfile import PlyData, PlyElement

from densemap.lib.geometry import Frame, PointCloud, Pose

# depth_metres = raw / DEPTH_SCALE, raw 0 = invalid.
DEPTH_SCALE = 256.0
DEPTH_RAW_MAX = np.iinfo(np.uint16).max

POINTCLOUD_DTYPE = [('x', 'f4'), ('y', 'f4'), ('z', 'f4')]


def _check_exists(filepath):
  if not os.path.isfile(filepath):
    raise FileNotFoundError(f'File not found: {filepath}')


def _make_parent(filepath):
  target_path, _ = os.path.split(filepath)
  if target_path != '' and not os.path.exists(target_path):
    os.makedirs(target_path)


def read_plyfile(filepath, element='vertex'):
  """Read one PLY element as a numpy structured array. Returns None if absent."""
  _check_exists(filepath)
  with open(filepath, 'rb') as f:
    plydata = PlyData.read(f)
  names = [el.name for el in plydata.elements]
  if element not in names:
    return None
  return plydata[element].data


def write_ply(elements, filepath, text=True):
  """Write a list of PlyElement; binary output is little-endian."""
  _make_parent(filepath)
  PlyData(elements, text=text, byte_order='<').write(filepath)


def load_point_cloud(filepath, frame=Frame.WORLD):
  data = read_plyfile(filepath)
  if data is None or len(data) == 0:
    return PointCloud(np.zeros((0, 3)), frame)
  xyz = np.stack([data['x'], data['y'], data['z']], 1).astype(np.float64)
  return PointCloud(xyz, frame)


def save_point_cloud(points, filepath, text=True, verbose=False):
  """Save an Nx3 array (or a PointCloud) as a PLY file with x, y, z float properties."""
  if isinstance(points, PointCloud):
    points = points.points
  points = np.asarray(points).reshape(-1, 3)
  vertices = np.empty(len(points), dtype=POINTCLOUD_DTYPE)
  vertices['x'], vertices['y'], vertices['z'] = points[:, 0], points[:, 1], points[:, 2]
  write_ply([PlyElement.describe(vertices, 'vertex')], filepath, text=text)
  if verbose:
    logging.info(f'Saved point cloud to: {filepath}')


def save_polyline(points, filepath):
  """ASCII PLY with the waypoints as vertices and consecutive pairs as edges."""
  points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
  vertices = np.empty(len(points), dtype=POINTCLOUD_DTYPE)
  vertices['x'], vertices['y'], vertices['z'] = points[:, 0], points[:, 1], points[:, 2]
  n_edges = max(len(points) - 1, 0)
  edges = np.empty(n_edges, dtype=[('vertex1', 'i4'), ('vertex2', 'i4')])
  edges['vertex1'] = np.arange(n_edges)
  edges['vertex2'] = np.arange(n_edges) + 1
  write_ply([PlyElement.describe(vertices, 'vertex'), PlyElement.describe(edges, 'edge')],
            filepath)


def encode_depth(depth):
  """Metres (NaN invalid) to the uint16 raw format."""
  depth = np.asarray(depth, dtype=np.float64)
  valid = np.isfinite(depth)
  raw = np.zeros(depth.shape, dtype=np.uint16)
  raw[valid] = np.clip(np.round(depth[valid] * DEPTH_SCALE), 1, DEPTH_RAW_MAX)
  return raw


def decode_depth(raw, saturated_value=None):
  """uint16 raw to metres, 0 becomes NaN.

  `saturated_value` replaces the clipped maximum raw value (used to keep the sky depth, which
  does not fit in 16 bits at this scale).
  """
  raw = np.asarray(raw)
  depth = raw.astype(np.float64) / DEPTH_SCALE
  depth[raw == 0] = np.nan
  if saturated_value is not None:
    depth[raw == DEPTH_RAW_MAX] = saturated_value
  return depth


def write_depth_png(filepath, depth):
  _make_parent(filepath)
  if not cv2.imwrite(filepath, encode_depth(depth)):
    raise IOError(f'Cannot write depth image {filepath}')


def read_depth_png(filepath, saturated_value=None):
  _check_exists(filepath)
  raw = cv2.imread(filepath, cv2.IMREAD_UNCHANGED)  # read 16bit grayscale image
  if raw is None:
    raise IOError(f'Cannot read depth image {filepath}')
  if raw.dtype != np.uint16 or raw.ndim != 2:
    raise ValueError(f'{filepath} is not a single-channel 16-bit PNG')
  return decode_depth(raw, saturated_value)


def load_trajectory(filepath):
  """One pose per line: `timestamp tx ty tz qx qy qz qw`, `#` comments skipped."""
  _check_exists(filepath)
  rows = np.loadtxt(filepath, comments='#', ndmin=2)
  if rows.size == 0:
    return []
  if rows.shape[1] != 8:
    raise ValueError(f'{filepath}: expected 8 columns per pose, got {rows.shape[1]}')
  poses = [Pose([qw, qx, qy, qz], [tx, ty, tz], t) for t, tx, ty, tz, qx, qy, qz, qw in rows]
  return sorted(poses, key=lambda p: p.timestamp)


def save_trajectory(poses, filepath):
  _make_parent(filepath)
  with open(filepath, 'w') as f:
    f.write('# timestamp tx ty tz qx qy qz qw\n')
    for pose in poses:
      w, x, y, z = pose.rotation
      tx, ty, tz = pose.translation
      f.write(f'{pose.timestamp:.17g} {tx:.9f} {ty:.9f} {tz:.9f} '
              f'{x:.12f} {y:.12f} {z:.12f} {w:.12f}\n')

"""Lidar scans: projection to sparse depth images, beam downsampling and scan accumulation."""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from plyfile import PlyElement

from densemap.lib.geometry import CameraIntrinsics, DepthImage, Pose, project_points
from densemap.lib.pc_utils import read_plyfile, write_ply

SCAN_DTYPE = [('x', 'f4'), ('y', 'f4'), ('z', 'f4'), ('ring', 'i4'), ('timestamp', 'f8')]

# Camera looking along lidar +x: camera z = lidar x, camera x = -lidar y, camera y = -lidar z.
FORWARD_CAMERA = Pose([0.5, 0.5, -0.5, 0.5])


@dataclass(frozen=True, eq=False)
class LidarScan:
  """Points in the lidar frame, one ring index and timestamp per point."""
  points: np.ndarray
  rings: np.ndarray
  timestamps: np.ndarray
  num_rings: int = 64

  def __post_init__(self):
    points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
    rings = np.array(self.rings, dtype=np.int64).reshape(-1)
    stamps = np.broadcast_to(np.asarray(self.timestamps, dtype=np.float64), (len(points),)).copy()
    if len(rings) != len(points):
      raise ValueError(f'{len(points)} points but {len(rings)} ring indices')
    if ((rings < 0) | (rings >= self.num_rings)).any():
      raise ValueError(f'Ring index outside [0, {self.num_rings})')
    if not (np.linalg.norm(points, axis=1) > 0).all():
      raise ValueError('Scan points must have positive range')
    for arr in (points, rings, stamps):
      arr.setflags(write=False)
    object.__setattr__(self, 'points', points)
    object.__setattr__(self, 'rings', rings)
    object.__setattr__(self, 'timestamps', stamps)

  @classmethod
  def empty(cls, num_rings=64):
    return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0), num_rings)

  def __len__(self):
    return len(self.points)

  @property
  def timestamp(self):
    """Scan time: the earliest point stamp, 0 for an empty scan."""
    return float(self.timestamps.min()) if len(self) else 0.0


def _rasterize(points_cam, intr: CameraIntrinsics) -> DepthImage:
  """Nearest-pixel splat with a z-buffer (minimum depth per pixel)."""
  depth = np.full(intr.shape, np.inf)
  ui, vi, z, valid = project_points(intr, points_cam)
  np.minimum.at(depth, (vi[valid], ui[valid]), z[valid])
  depth[np.isinf(depth)] = np.nan
  return DepthImage(intr, depth)


def camera_extrinsics(yaw_deg=0.0, position=(0., 0., 0.)) -> Pose:
  """Lidar -> camera transform of a camera at `position` (lidar frame) turned `yaw_deg` about z.

  Yaw 0 looks forward, +90 left, -90 right.
  """
  lidar_from_camera = Pose.from_yaw(np.radians(yaw_deg), position) * FORWARD_CAMERA.inverse()
  return lidar_from_camera.inverse()


def project_scan(scan: LidarScan, extrinsics: Pose, intr: CameraIntrinsics) -> DepthImage:
  """`extrinsics` maps lidar coordinates into the camera frame."""
  return _rasterize(extrinsics.transform_points(scan.points), intr)


def downsample_beams(scan: LidarScan, keep_every: int) -> LidarScan:
  if keep_every < 1:
    raise ValueError(f'keep_every must be >= 1, got {keep_every}')
  keep = scan.rings % keep_every == 0
  return LidarScan(scan.points[keep], scan.rings[keep], scan.timestamps[keep], scan.num_rings)


def accumulate_scans(scans: Sequence[Tuple[LidarScan, Pose]], target: Pose,
                     intr: CameraIntrinsics, extrinsics: Pose) -> DepthImage:
  """Rasterize several scans into the camera at `target` (world <- lidar pose).

  Each scan comes with its world <- lidar pose; occlusion is resolved by the z-buffer only.
  """
  world_to_cam = extrinsics * target.inverse()
  clouds = [world_to_cam.transform_points(pose.transform_points(scan.points))
            for scan, pose in scans]
  points = np.concatenate(clouds, 0) if clouds else np.zeros((0, 3))
  return _rasterize(points, intr)


def save_scan(scan: LidarScan, filepath, text=True):
  vertices = np.empty(len(scan), dtype=SCAN_DTYPE)
  for i, axis in enumerate('xyz'):
    vertices[axis] = scan.points[:, i]
  vertices['ring'] = scan.rings
  vertices['timestamp'] = scan.timestamps
  write_ply([PlyElement.describe(vertices, 'vertex')], filepath, text=text)


def load_scan(filepath, num_rings=64) -> LidarScan:
  data = read_plyfile(filepath)
  if data is None or len(data) == 0:
    return LidarScan.empty(num_rings)
  names = data.dtype.names
  if 'ring' not in names:
    raise ValueError(f'{filepath}: scan has no ring property')
  xyz = np.stack([data['x'], data['y'], data['z']], 1).astype(np.float64)
  stamps = data['timestamp'] if 'timestamp' in names else np.zeros(len(data))
  return LidarScan(xyz, data['ring'], stamps, num_rings)


def load_scans(filepaths: List[str], num_rings=64) -> List[LidarScan]:
  return [load_scan(f, num_rings) for f in filepaths]

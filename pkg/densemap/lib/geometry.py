"""Rigid transforms, the pinhole camera and the depth-image container.

Conventions used throughout the package:

  * quaternions are stored (w, x, y, z), Hamilton convention;
  * a Pose maps sensor coordinates into world coordinates (world <- sensor);
  * camera frame: x right, y down, z along the optical axis;
  * integer pixel (u, v) addresses the pixel centre;
  * depth images store z-depth in metres, NaN marks an invalid pixel.
"""

import bisect
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation, Slerp


def _readonly(arr):
  arr = np.array(arr, dtype=np.float64)
  arr.setflags(write=False)
  return arr


def _to_scipy(q):
  w, x, y, z = q
  return Rotation.from_quat([x, y, z, w])


def _from_scipy(rot):
  x, y, z, w = rot.as_quat()
  q = np.array([w, x, y, z])
  # Canonical sign, w >= 0.
  return -q if w < 0 else q


@dataclass(frozen=True, eq=False)
class Pose:
  """SE(3) transform world <- sensor, stamped with a time in seconds."""
  rotation: np.ndarray = field(default_factory=lambda: np.array([1., 0., 0., 0.]))
  translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
  timestamp: float = 0.0

  def __post_init__(self):
    q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
    t = np.asarray(self.translation, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm == 0:
      raise ValueError(f'Invalid quaternion {q}')
    if not np.all(np.isfinite(t)):
      raise ValueError(f'Invalid translation {t}')
    object.__setattr__(self, 'rotation', _readonly(q / norm))
    object.__setattr__(self, 'translation', _readonly(t))
    object.__setattr__(self, 'timestamp', float(self.timestamp))

  @classmethod
  def identity(cls, timestamp=0.0):
    return cls(timestamp=timestamp)

  @classmethod
  def from_matrix(cls, T, timestamp=0.0):
    T = np.asarray(T, dtype=np.float64)
    assert T.shape == (4, 4)
    return cls(_from_scipy(Rotation.from_matrix(T[:3, :3])), T[:3, 3], timestamp)

  @classmethod
  def from_yaw(cls, yaw, translation=(0., 0., 0.), timestamp=0.0):
    """Rotation of `yaw` radians about +z."""
    return cls([np.cos(yaw / 2), 0., 0., np.sin(yaw / 2)], translation, timestamp)

  @classmethod
  def from_config(cls, cfg, timestamp=0.0):
    """Build from a config node with `translation` [x, y, z] and `rotation` [w, x, y, z]."""
    return cls(list(cfg.get('rotation', [1., 0., 0., 0.])),
               list(cfg.get('translation', [0., 0., 0.])), timestamp)

  @property
  def rotation_matrix(self):
    return _to_scipy(self.rotation).as_matrix()

  @property
  def matrix(self):
    T = np.eye(4)
    T[:3, :3] = self.rotation_matrix
    T[:3, 3] = self.translation
    return T

  def inverse(self):
    rot_inv = _to_scipy(self.rotation).inv()
    return Pose(_from_scipy(rot_inv), -rot_inv.apply(self.translation), self.timestamp)

  def compose(self, other):
    """self * other: apply `other` first, then `self`."""
    rot = _to_scipy(self.rotation)
    return Pose(_from_scipy(rot * _to_scipy(other.rotation)),
                rot.apply(other.translation) + self.translation, self.timestamp)

  __mul__ = compose

  def transform_points(self, points):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return points @ self.rotation_matrix.T + self.translation

  def rotate(self, vectors):
    vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
    return vectors @ self.rotation_matrix.T

  def with_timestamp(self, timestamp):
    return Pose(self.rotation, self.translation, timestamp)


def transform_point(pose: Pose, p) -> np.ndarray:
  p = np.asarray(p, dtype=np.float64)
  if not np.all(np.isfinite(p)):
    raise ValueError(f'Non-finite point {p}')
  return pose.transform_points(p)[0]


def interpolate_pose(traj: Sequence[Pose], t: float) -> Pose:
  """Pose at time t: lerp on translation, slerp on rotation between the bracketing poses."""
  if len(traj) == 0:
    raise ValueError('out of range: empty trajectory')
  stamps = [pose.timestamp for pose in traj]
  if t < stamps[0] or t > stamps[-1]:
    raise ValueError(f'out of range: t={t} outside [{stamps[0]}, {stamps[-1]}]')
  i = bisect.bisect_left(stamps, t)
  if stamps[i] == t:
    return traj[i]
  p0, p1 = traj[i - 1], traj[i]
  alpha = (t - p0.timestamp) / (p1.timestamp - p0.timestamp)
  slerp = Slerp([0., 1.], Rotation.concatenate([_to_scipy(p0.rotation), _to_scipy(p1.rotation)]))
  translation = (1 - alpha) * p0.translation + alpha * p1.translation
  return Pose(_from_scipy(slerp([alpha])[0]), translation, t)


@dataclass(frozen=True)
class CameraIntrinsics:
  fx: float
  fy: float
  cx: float
  cy: float
  width: int
  height: int

  def __post_init__(self):
    if not (self.fx > 0 and self.fy > 0):
      raise ValueError(f'Focal lengths must be positive, got fx={self.fx} fy={self.fy}')
    if not (0 < self.cx < self.width and 0 < self.cy < self.height):
      raise ValueError(f'Principal point ({self.cx}, {self.cy}) outside '
                       f'{self.width}x{self.height} image')

  @classmethod
  def from_config(cls, cfg):
    return cls(float(cfg.fx), float(cfg.fy), float(cfg.cx), float(cfg.cy), int(cfg.width),
               int(cfg.height))

  @property
  def shape(self):
    return (self.height, self.width)

  @property
  def K(self):
    return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1]], dtype=np.float64)

  def pixel_grid(self):
    """(u, v) coordinates of every pixel centre, each of shape (H, W)."""
    return np.meshgrid(np.arange(self.width, dtype=np.float64),
                       np.arange(self.height, dtype=np.float64))

  def pixel_rays(self):
    """Camera-frame rays through every pixel centre with unit z, shape (H, W, 3)."""
    u, v = self.pixel_grid()
    return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], -1)


def project_points(intr: CameraIntrinsics, points):
  """Vectorised projection.

  Returns (u, v, z, valid) with u, v the nearest integer pixel and valid marking points in
  front of the camera that round onto the image.
  """
  points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
  z = points[:, 2]
  with np.errstate(divide='ignore', invalid='ignore'):
    u = intr.fx * points[:, 0] / z + intr.cx
    v = intr.fy * points[:, 1] / z + intr.cy
  valid = z > 0
  ui = np.zeros(len(z), dtype=np.int64)
  vi = np.zeros(len(z), dtype=np.int64)
  ui[valid] = np.floor(u[valid] + 0.5)
  vi[valid] = np.floor(v[valid] + 0.5)
  valid &= (ui >= 0) & (ui < intr.width) & (vi >= 0) & (vi < intr.height)
  return ui, vi, z, valid


def project(intr: CameraIntrinsics, p_cam) -> Optional[Tuple[float, float, float]]:
  x, y, z = np.asarray(p_cam, dtype=np.float64)
  _, _, _, valid = project_points(intr, [[x, y, z]])
  if not valid[0]:
    return None
  return (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy, float(z))


def backproject(intr: CameraIntrinsics, u, v, d) -> np.ndarray:
  if not d > 0:
    raise ValueError(f'Depth must be positive, got {d}')
  return np.array([(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class DepthImage:
  """Metric z-depth image. NaN marks an invalid pixel, both in `depth` and `sigma`."""
  intrinsics: CameraIntrinsics
  depth: np.ndarray
  sigma: Optional[np.ndarray] = None
  frame_pose: Pose = field(default_factory=Pose.identity)

  def __post_init__(self):
    depth = np.array(self.depth, dtype=np.float64)
    if depth.shape != self.intrinsics.shape:
      raise ValueError(f'Depth shape {depth.shape} does not match intrinsics '
                       f'{self.intrinsics.shape}')
    if np.isinf(depth).any() or (depth[np.isfinite(depth)] <= 0).any():
      raise ValueError('Depth values must be positive and finite or NaN')
    depth.setflags(write=False)
    object.__setattr__(self, 'depth', depth)
    if self.sigma is not None:
      sigma = np.array(self.sigma, dtype=np.float64)
      if sigma.shape != depth.shape:
        raise ValueError(f'Sigma shape {sigma.shape} does not match depth {depth.shape}')
      if not np.array_equal(np.isfinite(sigma), np.isfinite(depth)):
        raise ValueError('Sigma must be present exactly on valid depth pixels')
      if (sigma[np.isfinite(sigma)] < 0).any():
        raise ValueError('Sigma must be non-negative')
      sigma.setflags(write=False)
      object.__setattr__(self, 'sigma', sigma)

  @classmethod
  def empty(cls, intr, frame_pose=None):
    return cls(intr, np.full(intr.shape, np.nan), None, frame_pose or Pose.identity())

  @property
  def valid_mask(self):
    return np.isfinite(self.depth)

  @property
  def num_valid(self):
    return int(self.valid_mask.sum())

  def with_sigma(self, sigma):
    return DepthImage(self.intrinsics, self.depth, sigma, self.frame_pose)

  def to_points(self):
    """Back-projected camera-frame points of all valid pixels, (N, 3)."""
    rays = self.intrinsics.pixel_rays()
    mask = self.valid_mask
    return rays[mask] * self.depth[mask][:, None]


class Frame(Enum):
  SENSOR = 'sensor'
  WORLD = 'world'


@dataclass(frozen=True, eq=False)
class PointCloud:
  points: np.ndarray
  frame: Frame = Frame.WORLD

  def __post_init__(self):
    points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(points)):
      raise ValueError('Point cloud contains non-finite coordinates')
    points.setflags(write=False)
    object.__setattr__(self, 'points', points)

  def __len__(self):
    return len(self.points)

  def transformed(self, pose: Pose):
    return PointCloud(pose.transform_points(self.points), Frame.WORLD)


def stack_clouds(clouds: List[PointCloud]) -> PointCloud:
  if not clouds:
    return PointCloud(np.zeros((0, 3)))
  return PointCloud(np.concatenate([c.points for c in clouds], 0), clouds[0].frame)

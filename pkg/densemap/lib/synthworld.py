"""Analytic scenes and simulated sensing.

Scenes are boxes, spheres and infinite planes; rays return the nearest positive hit. The
lidar frame has x forward and z up; the depth camera follows the camera convention of
geometry.py and reports z-depth, with misses at the sky depth.
"""

import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from densemap.lib.geometry import CameraIntrinsics, DepthImage, PointCloud, Pose
from densemap.lib.lidar import LidarScan
from densemap.lib.pc_utils import _check_exists, _make_parent

MAX_TRACE_RANGE = 1.0e4
_EPS = 1e-9

SCENE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'scenes')


class Primitive(ABC):

  @abstractmethod
  def intersect(self, origins, directions):
    """Nearest positive ray parameter per ray, inf on a miss."""

  @abstractmethod
  def to_line(self):
    pass

  @abstractmethod
  def sample_surface(self, spacing, bounds=None):
    """Points on the surface about `spacing` apart. Planes need `bounds`."""


def _pick_positive(t_near, t_far):
  out = np.where(t_near > _EPS, t_near, np.where(t_far > _EPS, t_far, np.inf))
  return np.where(np.isnan(out), np.inf, out)


@dataclass(frozen=True, eq=False)
class Box(Primitive):
  """Axis-aligned box from its centre and edge lengths."""
  center: np.ndarray
  size: np.ndarray

  def __post_init__(self):
    center = np.asarray(self.center, dtype=np.float64).reshape(3)
    size = np.asarray(self.size, dtype=np.float64).reshape(3)
    if not (np.isfinite(center).all() and np.isfinite(size).all() and (size > 0).all()):
      raise ValueError(f'Invalid box {center} {size}')
    object.__setattr__(self, 'center', center)
    object.__setattr__(self, 'size', size)

  @property
  def lo(self):
    return self.center - self.size / 2

  @property
  def hi(self):
    return self.center + self.size / 2

  def contains(self, points):
    points = np.asarray(points).reshape(-1, 3)
    return ((points >= self.lo) & (points <= self.hi)).all(1)

  def intersect(self, origins, directions):
    with np.errstate(divide='ignore', invalid='ignore'):
      t1 = (self.lo - origins) / directions
      t2 = (self.hi - origins) / directions
    parallel = directions == 0
    inside_slab = (origins >= self.lo) & (origins <= self.hi)
    t_lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
    t_hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
    t_near, t_far = t_lo.max(1), t_hi.min(1)
    hit = t_far >= np.maximum(t_near, 0)
    return np.where(hit, _pick_positive(t_near, t_far), np.inf)

  def to_line(self):
    return 'box ' + ' '.join(f'{v:.10g}' for v in (*self.center, *self.size))

  def sample_surface(self, spacing, bounds=None):
    pts = []
    for axis in range(3):
      others = [a for a in range(3) if a != axis]
      u = np.arange(self.lo[others[0]], self.hi[others[0]] + _EPS, spacing)
      v = np.arange(self.lo[others[1]], self.hi[others[1]] + _EPS, spacing)
      uu, vv = np.meshgrid(u, v, indexing='ij')
      for face in (self.lo[axis], self.hi[axis]):
        p = np.zeros((uu.size, 3))
        p[:, axis] = face
        p[:, others[0]], p[:, others[1]] = uu.ravel(), vv.ravel()
        pts.append(p)
    return np.concatenate(pts, 0)


@dataclass(frozen=True, eq=False)
class Sphere(Primitive):
  center: np.ndarray
  radius: float

  def __post_init__(self):
    center = np.asarray(self.center, dtype=np.float64).reshape(3)
    if not (np.isfinite(center).all() and self.radius > 0):
      raise ValueError(f'Invalid sphere {center} {self.radius}')
    object.__setattr__(self, 'center', center)
    object.__setattr__(self, 'radius', float(self.radius))

  def intersect(self, origins, directions):
    oc = origins - self.center
    b = np.einsum('ij,ij->i', oc, directions)
    c = np.einsum('ij,ij->i', oc, oc) - self.radius**2
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0))
    t = _pick_positive(-b - root, -b + root)
    return np.where(disc >= 0, t, np.inf)

  def to_line(self):
    return 'sphere ' + ' '.join(f'{v:.10g}' for v in (*self.center, self.radius))

  def sample_surface(self, spacing, bounds=None):
    n = max(int(4 * np.pi * self.radius**2 / spacing**2), 8)
    # Fibonacci lattice.
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    dirs = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], 1)
    return self.center + self.radius * dirs


@dataclass(frozen=True, eq=False)
class Plane(Primitive):
  """The plane n . x = d (n normalised on construction)."""
  normal: np.ndarray
  offset: float

  def __post_init__(self):
    n = np.asarray(self.normal, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(n)
    if not (np.isfinite(norm) and norm > 0 and np.isfinite(self.offset)):
      raise ValueError(f'Invalid plane {n} {self.offset}')
    object.__setattr__(self, 'normal', n / norm)
    object.__setattr__(self, 'offset', float(self.offset) / norm)

  def intersect(self, origins, directions):
    denom = directions @ self.normal
    with np.errstate(divide='ignore', invalid='ignore'):
      t = (self.offset - origins @ self.normal) / denom
    return np.where((np.abs(denom) > 1e-12) & (t > _EPS), t, np.inf)

  def to_line(self):
    return 'plane ' + ' '.join(f'{v:.10g}' for v in (*self.normal, self.offset))

  def sample_surface(self, spacing, bounds=None):
    if bounds is None:
      raise ValueError('Sampling a plane needs bounds')
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    n = self.normal
    helper = np.array([1., 0., 0.]) if abs(n[0]) < 0.9 else np.array([0., 1., 0.])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    centre = (lo + hi) / 2
    foot = centre - (centre @ n - self.offset) * n
    extent = np.linalg.norm(hi - lo) / 2
    u = np.arange(-extent, extent + _EPS, spacing)
    uu, vv = np.meshgrid(u, u, indexing='ij')
    return foot + uu.reshape(-1, 1) * e1 + vv.reshape(-1, 1) * e2


class Scene:

  def __init__(self, primitives: Sequence[Primitive] = (), bounds=None):
    self.primitives = list(primitives)
    self.bounds = None if bounds is None else tuple(
        np.asarray(b, dtype=np.float64).reshape(3) for b in bounds)

  def __len__(self):
    return len(self.primitives)

  def trace(self, origins, directions, max_range=MAX_TRACE_RANGE):
    """Ranges of the nearest hits, inf where nothing is hit within max_range."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    origins = np.broadcast_to(origins, directions.shape)
    ranges = np.full(len(directions), np.inf)
    for prim in self.primitives:
      ranges = np.minimum(ranges, prim.intersect(origins, directions))
    ranges[ranges > max_range] = np.inf
    return ranges

  def sample_surface(self, spacing, bounds=None):
    """Reference cloud on every primitive, cropped to a (lo, hi) box (default: scene bounds)."""
    bounds = self.bounds if bounds is None else bounds
    pts = [p.sample_surface(spacing, bounds) for p in self.primitives]
    pts = np.concatenate(pts, 0) if pts else np.zeros((0, 3))
    if bounds is not None:
      lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
      pts = pts[((pts >= lo) & (pts <= hi)).all(1)]
    return PointCloud(pts)

  @classmethod
  def parse(cls, text, source='<string>'):
    primitives, bounds = [], None
    for lineno, line in enumerate(text.splitlines(), 1):
      line = line.split('#', 1)[0].strip()
      if not line:
        continue
      kind, *values = line.split()
      try:
        values = [float(v) for v in values]
      except ValueError:
        raise ValueError(f'{source}:{lineno}: non-numeric parameter in "{line}"')
      expected = {'box': 6, 'sphere': 4, 'plane': 4, 'bounds': 6}
      if kind not in expected:
        raise ValueError(f'{source}:{lineno}: unknown primitive "{kind}"')
      if len(values) != expected[kind]:
        raise ValueError(f'{source}:{lineno}: {kind} takes {expected[kind]} values, '
                         f'got {len(values)}')
      if kind == 'bounds':
        bounds = (values[:3], values[3:])
      elif kind == 'box':
        primitives.append(Box(values[:3], values[3:]))
      elif kind == 'sphere':
        primitives.append(Sphere(values[:3], values[3]))
      else:
        primitives.append(Plane(values[:3], values[3]))
    return cls(primitives, bounds)

  def to_text(self):
    lines = [p.to_line() for p in self.primitives]
    if self.bounds is not None:
      lines.insert(0, 'bounds ' + ' '.join(f'{v:.10g}' for v in (*self.bounds[0], *self.bounds[1])))
    return '\n'.join(lines) + '\n'


def load_scene(filepath) -> Scene:
  """Scene file path, or the name of a bundled fixture (room, corridor, sphere)."""
  if not os.path.isfile(filepath) and os.path.isfile(os.path.join(SCENE_DIR, f'{filepath}.txt')):
    filepath = os.path.join(SCENE_DIR, f'{filepath}.txt')
  _check_exists(filepath)
  with open(filepath) as f:
    scene = Scene.parse(f.read(), filepath)
  logging.info(f'Loaded scene {filepath} with {len(scene)} primitives')
  return scene


def save_scene(scene: Scene, filepath):
  _make_parent(filepath)
  with open(filepath, 'w') as f:
    f.write(scene.to_text())


def trace_ray(scene: Scene, origin, direction, max_range=MAX_TRACE_RANGE):
  """(hit point, range) of the nearest positive hit, or None."""
  direction = np.asarray(direction, dtype=np.float64).reshape(3)
  if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
    raise ValueError('Ray direction must be unit length')
  origin = np.asarray(origin, dtype=np.float64).reshape(3)
  r = scene.trace(origin, direction, max_range)[0]
  if not np.isfinite(r):
    return None
  return origin + r * direction, float(r)


@dataclass(frozen=True)
class LidarModel:
  num_rings: int = 64
  elevation_min: float = -16.6
  elevation_max: float = 16.6
  azimuth_steps: int = 1024
  max_range: float = 50.0
  noise_std: float = 0.0
  elevations: Optional[tuple] = None

  def __post_init__(self):
    if self.num_rings < 1 or self.azimuth_steps < 1:
      raise ValueError('LidarModel needs at least one ring and one azimuth step')
    if not self.elevation_min < self.elevation_max:
      raise ValueError(f'elevation_min {self.elevation_min} must be below '
                       f'elevation_max {self.elevation_max}')
    if not self.max_range > 0 or self.noise_std < 0:
      raise ValueError('LidarModel needs a positive max_range and non-negative noise_std')
    if self.elevations is not None:
      object.__setattr__(self, 'elevations', tuple(float(e) for e in self.elevations))
      if len(self.elevations) != self.num_rings:
        raise ValueError(f'{len(self.elevations)} elevations for {self.num_rings} rings')

  @classmethod
  def from_config(cls, cfg):
    elevations = cfg.get('elevations', None)
    return cls(int(cfg.num_rings), float(cfg.elevation_min), float(cfg.elevation_max),
               int(cfg.azimuth_steps), float(cfg.max_range), float(cfg.get('noise_std', 0.0)),
               None if elevations is None else tuple(elevations))

  def ring_elevations(self):
    """Degrees, one per ring index."""
    if self.elevations is not None:
      return np.array(self.elevations)
    return np.linspace(self.elevation_min, self.elevation_max, self.num_rings)

  def ray_directions(self):
    """(rings, directions) in the lidar frame, ring-major."""
    elev = np.radians(self.ring_elevations())
    azim = 2 * np.pi * np.arange(self.azimuth_steps) / self.azimuth_steps
    e, a = np.meshgrid(elev, azim, indexing='ij')
    dirs = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], -1)
    rings = np.repeat(np.arange(self.num_rings), self.azimuth_steps)
    return rings, dirs.reshape(-1, 3)


def simulate_lidar(scene: Scene, model: LidarModel, pose: Pose, seed=0) -> LidarScan:
  """One ray per (ring, azimuth); hits within max_range become sensor-frame points."""
  rings, dirs = model.ray_directions()
  ranges = scene.trace(pose.translation, pose.rotate(dirs), model.max_range)
  if model.noise_std > 0:
    rng = np.random.default_rng(seed)
    ranges = ranges + rng.normal(0., model.noise_std, len(ranges))
  hit = np.isfinite(ranges) & (ranges > 0) & (ranges <= model.max_range)
  points = dirs[hit] * ranges[hit, None]
  return LidarScan(points, rings[hit], pose.timestamp, model.num_rings)


def simulate_depth_camera(scene: Scene, intr: CameraIntrinsics, pose: Pose,
                          sky_depth=256.0) -> DepthImage:
  """Ground-truth z-depth per pixel; misses read sky_depth."""
  rays = intr.pixel_rays().reshape(-1, 3)
  norms = np.linalg.norm(rays, axis=1)
  ranges = scene.trace(pose.translation, pose.rotate(rays / norms[:, None]))
  depth = np.where(np.isfinite(ranges), ranges / norms, sky_depth)
  return DepthImage(intr, depth.reshape(intr.shape), frame_pose=pose)


def circle_trajectory(center, radius, num_poses, height=0.0, start_time=0.0, dt=0.2,
                      face_center=True) -> List[Pose]:
  """Poses on a horizontal circle, x axis towards the centre by default."""
  center = np.asarray(center, dtype=np.float64)
  poses = []
  for i in range(num_poses):
    theta = 2 * np.pi * i / num_poses
    position = center + np.array([radius * np.cos(theta), radius * np.sin(theta), height])
    yaw = theta + np.pi if face_center else theta + np.pi / 2
    poses.append(Pose.from_yaw(yaw, position, start_time + i * dt))
  return poses


def line_trajectory(start, end, num_poses, start_time=0.0, dt=0.2) -> List[Pose]:
  """Poses along a straight segment, x axis along the direction of travel."""
  start, end = np.asarray(start, dtype=np.float64), np.asarray(end, dtype=np.float64)
  heading = end - start
  yaw = float(np.arctan2(heading[1], heading[0]))
  alphas = np.linspace(0., 1., num_poses) if num_poses > 1 else np.zeros(1)
  return [Pose.from_yaw(yaw, start + a * heading, start_time + i * dt)
          for i, a in enumerate(alphas)]

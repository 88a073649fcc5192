"""Probabilistic occupancy map stored as a linear octree.

Leaves live at the finest resolution. Every observed voxel is a (Morton key, log-odds) pair,
kept sorted by key; a voxel absent from the key array is unknown. Keys are relative to the
root cube's minimum corner, which moves (and the tree deepens) when data falls outside it.
Log-odds are held as float32, the precision the map file stores.
"""

import logging
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from densemap.lib.completion import CompletionResult
from densemap.lib.geometry import PointCloud, Pose
from densemap.lib.pc_utils import _check_exists, _make_parent
from densemap.lib.sensor_model import SensorModelParams, log_odds_update, sigma_of_depth
from densemap.lib.voxelizer import MAX_TREE_DEPTH, Voxelizer, morton_decode, morton_encode

MAP_MAGIC = b'DMAP'
MAP_VERSION = 1
_HEADER = struct.Struct('<4sIddddIQ')
_RECORD = np.dtype([('key', '<i8'), ('value', '<f4')])


def _rows_in(coords, targets):
  """Mask of the rows of `coords` that also appear in `targets` (both integer N x 3)."""
  if len(coords) == 0 or len(targets) == 0:
    return np.zeros(len(coords), bool)
  lo = np.minimum(coords.min(0), targets.min(0))
  dims = np.maximum(coords.max(0), targets.max(0)) - lo + 1
  flat = np.ravel_multi_index((coords - lo).T, dims)
  return np.isin(flat, np.ravel_multi_index((targets - lo).T, dims))


class VoxelState(IntEnum):
  FREE = -1
  UNKNOWN = 0
  OCCUPIED = 1


@dataclass
class IntegrationStats:
  rays_integrated: int = 0
  rays_rejected: int = 0
  rays_sky: int = 0
  voxel_updates: int = 0

  def __iadd__(self, other):
    self.rays_integrated += other.rays_integrated
    self.rays_rejected += other.rays_rejected
    self.rays_sky += other.rays_sky
    self.voxel_updates += other.voxel_updates
    return self


class OccupancyMap:

  def __init__(self, voxel_size=0.065, origin=(0., 0., 0.), tree_depth=8, l_min=-5.0):
    if not 1 <= tree_depth <= MAX_TREE_DEPTH:
      raise ValueError(f'tree_depth must be in [1, {MAX_TREE_DEPTH}], got {tree_depth}')
    if not l_min < 0:
      raise ValueError(f'l_min must be negative, got {l_min}')
    self.voxelizer = Voxelizer(voxel_size, origin)
    self.tree_depth = int(tree_depth)
    self.l_min = float(l_min)
    self._root = np.zeros(3, dtype=np.int64)
    self._keys = np.zeros(0, dtype=np.int64)
    self._values = np.zeros(0, dtype=np.float32)

  @classmethod
  def from_config(cls, cfg, l_min=-5.0):
    return cls(float(cfg.voxel_size), list(cfg.get('origin', [0., 0., 0.])),
               int(cfg.get('tree_depth', 8)), l_min)

  @property
  def voxel_size(self):
    return self.voxelizer.voxel_size

  @property
  def l_max(self):
    return -self.l_min

  @property
  def side(self):
    return 1 << self.tree_depth

  @property
  def origin(self):
    """World position of the root cube's minimum corner."""
    return self.voxelizer.anchor + self._root * self.voxel_size

  @property
  def num_voxels(self):
    return len(self._keys)

  def __len__(self):
    return self.num_voxels

  def _grow(self, coords):
    """Deepen the tree until every grid coordinate fits in the root cube."""
    if len(coords) == 0:
      return
    lo, hi = coords.min(0), coords.max(0)
    while (lo < self._root).any() or (hi >= self._root + self.side).any():
      if self.tree_depth == MAX_TREE_DEPTH:
        raise ValueError('Map extent exceeds the maximum tree depth')
      shift = np.where(lo < self._root, self.side, 0).astype(np.int64)
      rel = morton_decode(self._keys) + shift
      self._root = self._root - shift
      self.tree_depth += 1
      self._keys = morton_encode(rel)
      logging.debug(f'Map re-rooted: depth {self.tree_depth}, origin {self.origin}')

  def _encode(self, coords):
    return morton_encode(coords - self._root)

  def _lookup(self, coords):
    """(found, index) of grid coordinates in the key array."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    rel = coords - self._root
    inside = ((rel >= 0) & (rel < self.side)).all(1)
    found = np.zeros(len(coords), bool)
    pos = np.zeros(len(coords), dtype=np.int64)
    if inside.any() and len(self._keys):
      keys = morton_encode(rel[inside])
      p = np.searchsorted(self._keys, keys)
      p_clip = np.minimum(p, len(self._keys) - 1)
      found[inside] = self._keys[p_clip] == keys
      pos[inside] = p_clip
    return found, pos

  def _merge(self, coords, values, add):
    """Add (or assign) per-voxel values, then clamp. `coords` must be unique."""
    self._grow(coords)
    keys = self._encode(coords)
    order = np.argsort(keys)
    keys, values = keys[order], values[order]
    pos = np.searchsorted(self._keys, keys)
    found = np.zeros(len(keys), bool)
    inb = pos < len(self._keys)
    found[inb] = self._keys[pos[inb]] == keys[inb]
    hit = pos[found]
    new = values[found] + self._values[hit] if add else values[found]
    self._values[hit] = np.clip(new, self.l_min, self.l_max)
    miss = ~found
    self._keys = np.insert(self._keys, pos[miss], keys[miss])
    self._values = np.insert(self._values, pos[miss], np.clip(values[miss], self.l_min,
                                                              self.l_max))

  def add_updates(self, coords, updates):
    """Sum per-voxel updates in the given order, then add each sum to the map once."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    updates = np.asarray(updates, dtype=np.float64).reshape(-1)
    if len(coords) == 0:
      return
    uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
    sums = np.bincount(inverse.reshape(-1), weights=updates, minlength=len(uniq))
    self._merge(uniq, sums, add=True)

  def set_values(self, coords, values):
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    values = np.broadcast_to(np.asarray(values, dtype=np.float64), (len(coords),))
    if len(coords) == 0:
      return
    uniq, first = np.unique(coords, axis=0, return_index=True)
    self._merge(uniq, values[first], add=False)

  def lookup_coords(self, coords):
    """(observed, log_odds) for grid coordinates; unknown voxels read 0."""
    found, pos = self._lookup(coords)
    values = np.zeros(len(found))
    values[found] = self._values[pos[found]]
    return found, values

  def states_of(self, coords):
    observed, values = self.lookup_coords(coords)
    states = np.full(len(observed), VoxelState.UNKNOWN, dtype=np.int8)
    states[observed & (values < 0)] = VoxelState.FREE
    states[observed & (values > 0)] = VoxelState.OCCUPIED
    return states

  def voxels(self):
    """Grid coordinates and log-odds of every observed voxel, in key order."""
    return morton_decode(self._keys) + self._root, self._values.copy()

  def dense_block(self, lo, shape):
    """Dense (observed, log_odds) arrays over the grid box starting at `lo`."""
    lo = np.asarray(lo, dtype=np.int64)
    axes = [np.arange(lo[i], lo[i] + shape[i]) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing='ij'), -1).reshape(-1, 3)
    observed, values = self.lookup_coords(grid)
    return observed.reshape(shape), values.reshape(shape)

  def coords_of(self, state=None):
    coords, values = self.voxels()
    if state == VoxelState.FREE:
      return coords[values < 0]
    if state == VoxelState.OCCUPIED:
      return coords[values > 0]
    return coords

  def blocks(self, block_size, state=None):
    """Minimum grid corners of the aligned block_size^3 blocks holding observed voxels."""
    coords = self.coords_of(state)
    if len(coords) == 0:
      return np.zeros((0, 3), dtype=np.int64)
    return np.unique(np.floor_divide(coords, block_size), axis=0) * block_size

  def observed_bounds(self, state=None):
    """Inclusive grid-coordinate bounds of observed voxels (optionally of one state)."""
    coords = self.coords_of(state)
    if len(coords) == 0:
      return None
    return coords.min(0), coords.max(0)

  def query(self, p):
    coords = self.voxelizer.world_to_grid(p)
    observed, values = self.lookup_coords(coords)
    if not observed[0]:
      return VoxelState.UNKNOWN, 0.0
    value = float(values[0])
    if value < 0:
      return VoxelState.FREE, value
    if value > 0:
      return VoxelState.OCCUPIED, value
    return VoxelState.UNKNOWN, value

  def raycast_voxels(self, origin, direction, t_max):
    direction = np.asarray(direction, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
      raise ValueError(f'Ray direction must be unit length, got norm {np.linalg.norm(direction)}')
    if not t_max >= 0:
      raise ValueError(f't_max must be non-negative, got {t_max}')
    _, coords = self.voxelizer.traverse(origin, direction, t_max)
    return [tuple(int(c) for c in row) for row in coords]

  def classify_volumes(self):
    """(free_m3, occupied_m3) over observed voxels."""
    unit = self.voxel_size**3
    return float((self._values < 0).sum() * unit), float((self._values > 0).sum() * unit)

  def export_occupied_cloud(self):
    coords, values = self.voxels()
    return PointCloud(self.voxelizer.grid_to_world(coords[values > 0]))

  def integrate_depth_image(self, result: CompletionResult, sensor_pose: Pose,
                            params: SensorModelParams, chunk_size=8192) -> IntegrationStats:
    """Fuse one depth image taken from `sensor_pose` (world <- camera).

    Per ray, the voxel with centre c receives log_odds_update(c_along_ray - range). A voxel
    holding a surface endpoint of this image takes no negative update from it, so rays that
    graze a surface do not carve the voxels it passes through. Updates from all rays are
    summed per voxel in ray order and added once, then clamped.
    """
    dense = result.dense
    intr = dense.intrinsics
    depth, sigma = dense.depth, dense.sigma
    valid = dense.valid_mask
    sky = result.sky_mask & valid
    pred = valid & result.predicted_mask & ~sky

    rejected = np.zeros(depth.shape, bool)
    if pred.any():
      rejected[pred] = (sigma[pred] > params.rho * sigma_of_depth(params, depth[pred]))
    use = valid & ~rejected

    rays = intr.pixel_rays()[use]
    norms = np.linalg.norm(rays, axis=1)
    ranges = depth[use] * norms
    free_only = sky[use] | (ranges > params.max_range)
    surface = ~free_only

    ray_sigma = np.zeros(len(ranges))
    raw = result.raw_mask[use] & surface
    ray_sigma[raw] = sigma_of_depth(params, ranges[raw])
    own = ~result.raw_mask[use] & surface
    ray_sigma[own] = np.maximum(sigma[use][own], params.sigma_min)
    t_end = np.where(free_only, params.max_range,
                     np.minimum(ranges * (1 + params.k_tau), params.max_range))

    directions = sensor_pose.rotate(rays / norms[:, None])
    origin = sensor_pose.translation
    all_coords, all_updates = [], []
    for start in range(0, len(ranges), chunk_size):
      sl = slice(start, start + chunk_size)
      ray_ids, coords = self.voxelizer.traverse(
          np.broadcast_to(origin, directions[sl].shape), directions[sl], t_end[sl])
      if len(ray_ids) == 0:
        continue
      ray_ids += start
      centres = self.voxelizer.grid_to_world(coords)
      t_centre = np.einsum('ij,ij->i', centres - origin, directions[ray_ids])
      updates = np.full(len(ray_ids), self.l_min)
      on_surface = surface[ray_ids]
      ids = ray_ids[on_surface]
      updates[on_surface] = log_odds_update(params, t_centre[on_surface] - ranges[ids],
                                            ranges[ids], ray_sigma[ids])
      keep = np.isfinite(updates)
      all_coords.append(coords[keep])
      all_updates.append(updates[keep])

    stats = IntegrationStats(int(use.sum()), int(rejected.sum()), int(sky.sum()))
    if all_coords:
      coords = np.concatenate(all_coords, 0)
      updates = np.concatenate(all_updates)
      hits = self.voxelizer.world_to_grid(origin + directions[surface] * ranges[surface, None])
      carved = (updates < 0) & _rows_in(coords, hits)
      coords, updates = coords[~carved], updates[~carved]
      stats.voxel_updates = len(coords)
      self.add_updates(coords, updates)
    return stats

  def save(self, filepath):
    """Header, then (Morton key int64, log-odds float32) records in key order."""
    _make_parent(filepath)
    records = np.empty(len(self._keys), dtype=_RECORD)
    records['key'], records['value'] = self._keys, self._values
    ox, oy, oz = self.origin
    with open(filepath, 'wb') as f:
      f.write(_HEADER.pack(MAP_MAGIC, MAP_VERSION, self.voxel_size, ox, oy, oz, self.tree_depth,
                           len(records)))
      f.write(records.tobytes())

  @classmethod
  def load(cls, filepath, l_min=-5.0):
    _check_exists(filepath)
    with open(filepath, 'rb') as f:
      header = f.read(_HEADER.size)
      if len(header) != _HEADER.size:
        raise ValueError(f'{filepath}: truncated map header')
      magic, version, vs, ox, oy, oz, depth, count = _HEADER.unpack(header)
      if magic != MAP_MAGIC:
        raise ValueError(f'{filepath}: not an occupancy map file')
      if version != MAP_VERSION:
        raise ValueError(f'{filepath}: unsupported map version {version}')
      records = np.frombuffer(f.read(), dtype=_RECORD)
    if len(records) != count:
      raise ValueError(f'{filepath}: expected {count} voxels, found {len(records)}')
    occ = cls(vs, (ox, oy, oz), depth, l_min)
    occ._keys = records['key'].astype(np.int64)
    occ._values = records['value'].astype(np.float32)
    if (np.diff(occ._keys) <= 0).any():
      raise ValueError(f'{filepath}: voxel keys are not strictly increasing')
    return occ


def integrate_depth_image(occ: OccupancyMap, result, sensor_pose, params, chunk_size=8192):
  return occ.integrate_depth_image(result, sensor_pose, params, chunk_size)


def query(occ: OccupancyMap, p):
  return occ.query(p)


def raycast_voxels(occ: OccupancyMap, origin, direction, t_max):
  return occ.raycast_voxels(origin, direction, t_max)


def classify_volumes(occ: OccupancyMap):
  return occ.classify_volumes()


def export_occupied_cloud(occ: OccupancyMap):
  return occ.export_occupied_cloud()

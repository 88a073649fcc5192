"""Voxel grid arithmetic: world <-> grid conversion, Morton keys and batched ray traversal."""

import numpy as np

MAX_TREE_DEPTH = 21  # 3 * 21 bits fit in a signed 64-bit key

_M = [np.uint64(m) for m in (0x1fffff, 0x1f00000000ffff, 0x1f0000ff0000ff, 0x100f00f00f00f00f,
                             0x10c30c30c30c30c3, 0x1249249249249249)]
_S = [np.uint64(s) for s in (32, 16, 8, 4, 2)]


def _spread_bits(v):
  v = v.astype(np.uint64) & _M[0]
  for shift, mask in zip(_S, _M[1:]):
    v = (v | (v << shift)) & mask
  return v


def _compact_bits(v):
  v = v & _M[5]
  for shift, mask in zip(reversed(_S), reversed(_M[:5])):
    v = (v ^ (v >> shift)) & mask
  return v


def morton_encode(coords):
  """Interleave the bits of non-negative integer (N, 3) coordinates into int64 keys."""
  coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
  assert (coords >= 0).all() and (coords < (1 << MAX_TREE_DEPTH)).all()
  key = (_spread_bits(coords[:, 0]) | (_spread_bits(coords[:, 1]) << np.uint64(1)) |
         (_spread_bits(coords[:, 2]) << np.uint64(2)))
  return key.astype(np.int64)


def morton_decode(keys):
  keys = np.asarray(keys, dtype=np.int64).astype(np.uint64)
  return np.stack([_compact_bits(keys >> np.uint64(i)) for i in range(3)], 1).astype(np.int64)


class Voxelizer:
  """Regular grid of cubic voxels anchored at `anchor`.

  Voxel (i, j, k) spans [anchor + (i, j, k) * voxel_size, anchor + (i + 1, j + 1, k + 1) *
  voxel_size). Grid coordinates may be negative; the octree re-bases them.
  """

  def __init__(self, voxel_size, anchor=(0., 0., 0.)):
    if not voxel_size > 0:
      raise ValueError(f'voxel_size must be positive, got {voxel_size}')
    self.voxel_size = float(voxel_size)
    self.anchor = np.asarray(anchor, dtype=np.float64).reshape(3)

  def world_to_grid(self, points):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.floor((points - self.anchor) / self.voxel_size).astype(np.int64)

  def grid_to_world(self, coords):
    """Voxel centres."""
    return self.anchor + (np.asarray(coords, dtype=np.float64) + 0.5) * self.voxel_size

  def aabb(self, coords):
    lo = self.anchor + np.asarray(coords, dtype=np.float64) * self.voxel_size
    return lo, lo + self.voxel_size

  def traverse(self, origins, directions, t_max):
    """Amanatides-Woo traversal of many segments at once.

    Segment i is origins[i] + t * directions[i], t in [0, t_max[i]]. Returns
    (ray_index, coords) listing, ray by ray and in order along each ray, every voxel the
    segment passes through. A boundary reached exactly at t_max is not crossed.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,))
    if n == 0:
      return np.zeros(0, dtype=np.int64), np.zeros((0, 3), dtype=np.int64)

    vs = self.voxel_size
    p = (origins - self.anchor) / vs
    cur = np.floor(p).astype(np.int64)
    step = np.sign(directions).astype(np.int64)
    with np.errstate(divide='ignore', invalid='ignore'):
      t_delta = np.where(step != 0, vs / np.abs(directions), np.inf)
      boundary = np.where(step > 0, cur + 1, cur).astype(np.float64)
      t_next = np.where(step != 0, (boundary - p) * vs / directions, np.inf)

    ray_chunks, coord_chunks = [], []
    idx = np.arange(n)
    while idx.size:
      ray_chunks.append(idx)
      coord_chunks.append(cur[idx])
      tn = t_next[idx]
      axis = np.argmin(tn, 1)
      cont = tn[np.arange(len(idx)), axis] < t_max[idx]
      idx, axis = idx[cont], axis[cont]
      cur[idx, axis] += step[idx, axis]
      t_next[idx, axis] += t_delta[idx, axis]

    rays = np.concatenate(ray_chunks)
    coords = np.concatenate(coord_chunks, 0)
    order = np.argsort(rays, kind='stable')
    return rays[order], coords[order]

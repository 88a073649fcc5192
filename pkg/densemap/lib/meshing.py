"""Surface extraction from the occupancy field and mesh-to-cloud accuracy."""

import logging
from dataclasses import dataclass

import numpy as np
import trimesh
from plyfile import PlyElement
from scipy.spatial import cKDTree
from skimage import measure

from densemap.lib.geometry import PointCloud
from densemap.lib.occupancy import OccupancyMap, VoxelState
from densemap.lib.pc_utils import POINTCLOUD_DTYPE, read_plyfile, write_ply

ISOLEVEL = 0.0
_MIN_AREA = 1e-12
# Block faces are welded on grid coordinates rounded to this many steps per voxel.
_WELD_SCALE = 1 << 20


@dataclass(frozen=True, eq=False)
class TriMesh:
  vertices: np.ndarray
  triangles: np.ndarray

  def __post_init__(self):
    vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
    triangles = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
    if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
      raise ValueError('Triangle index out of range')
    object.__setattr__(self, 'vertices', vertices)
    object.__setattr__(self, 'triangles', triangles)

  @classmethod
  def empty(cls):
    return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

  @property
  def is_empty(self):
    return len(self.triangles) == 0

  def to_trimesh(self):
    return trimesh.Trimesh(self.vertices, self.triangles, process=False)

  @property
  def area(self):
    return 0.0 if self.is_empty else float(self.to_trimesh().area)

  @property
  def euler_number(self):
    return int(self.to_trimesh().euler_number)


def _triangle_areas(vertices, triangles):
  a, b, c = (vertices[triangles[:, i]] for i in range(3))
  return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _block_surface(occ, lo, size):
  """Marching cubes over the cells whose minimum corner lies in the block at `lo`."""
  observed, values = occ.dense_block(lo, (size + 1,) * 3)
  if not (((values < ISOLEVEL) & observed).any() and ((values >= ISOLEVEL) & observed).any()):
    return None
  cell = observed.copy()
  cell[:-1] &= observed[1:]
  cell[:, :-1] &= cell[:, 1:]
  cell[:, :, :-1] &= cell[:, :, 1:]
  # skimage evaluates a cell only when the mask is set at its maximum corner.
  mask = np.zeros_like(observed)
  mask[1:, 1:, 1:] = cell[:-1, :-1, :-1]
  if not mask.any():
    return None
  try:
    verts, faces, _, _ = measure.marching_cubes(values, level=ISOLEVEL, mask=mask,
                                                allow_degenerate=False)
  except (ValueError, RuntimeError) as e:
    # No crossing inside the masked cells.
    logging.debug(f'Marching cubes produced no surface in block {lo}: {e}')
    return None
  return verts + lo, faces


def marching_cubes(occ: OccupancyMap, block_size=32) -> TriMesh:
  """Log-odds 0 isosurface over cells whose eight corner voxels are all observed.

  Corners sit at voxel centres; vertices are placed by linear interpolation along cell edges.
  The surface is extracted per block of observed voxels and welded along block faces.
  """
  if occ.observed_bounds(VoxelState.OCCUPIED) is None:
    return TriMesh.empty()
  all_verts, all_faces, offset = [], [], 0
  for lo in occ.blocks(block_size):
    surface = _block_surface(occ, lo, block_size)
    if surface is None:
      continue
    verts, faces = surface
    all_verts.append(verts)
    all_faces.append(faces + offset)
    offset += len(verts)
  if not all_verts:
    return TriMesh.empty()

  verts = np.concatenate(all_verts, 0)
  faces = np.concatenate(all_faces, 0)
  _, first, inverse = np.unique(np.round(verts * _WELD_SCALE).astype(np.int64), axis=0,
                                return_index=True, return_inverse=True)
  verts, faces = verts[first], inverse.reshape(-1)[faces]
  faces = faces[(faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) &
                (faces[:, 0] != faces[:, 2])]
  faces = faces[_triangle_areas(verts, faces) > _MIN_AREA]
  used, faces = np.unique(faces, return_inverse=True)
  return TriMesh(occ.voxelizer.grid_to_world(verts[used]), faces.reshape(-1, 3))


def sample_mesh(mesh: TriMesh, density, seed=0) -> PointCloud:
  """Area-weighted uniform samples, round(density * area) of them."""
  if not density > 0:
    raise ValueError(f'Sampling density must be positive, got {density}')
  if mesh.is_empty:
    return PointCloud(np.zeros((0, 3)))
  count = int(round(density * mesh.area))
  if count == 0:
    return PointCloud(np.zeros((0, 3)))
  points, _ = trimesh.sample.sample_surface(mesh.to_trimesh(), count, seed=seed)
  return PointCloud(points)


def mesh_accuracy(samples: PointCloud, gt_cloud: PointCloud) -> float:
  """Mean nearest-neighbour distance from the samples to the reference cloud."""
  if len(samples) == 0 or len(gt_cloud) == 0:
    raise ValueError('Mesh accuracy needs non-empty samples and reference cloud')
  dist, _ = cKDTree(gt_cloud.points).query(samples.points)
  return float(np.mean(dist))


def save_mesh(mesh: TriMesh, filepath, binary=False):
  vertices = np.empty(len(mesh.vertices), dtype=POINTCLOUD_DTYPE)
  for i, axis in enumerate('xyz'):
    vertices[axis] = mesh.vertices[:, i]
  faces = np.empty(len(mesh.triangles), dtype=[('vertex_indices', 'i4', (3,))])
  faces['vertex_indices'] = mesh.triangles
  write_ply([PlyElement.describe(vertices, 'vertex'), PlyElement.describe(faces, 'face')],
            filepath, text=not binary)


def load_mesh(filepath) -> TriMesh:
  vertices = read_plyfile(filepath, 'vertex')
  faces = read_plyfile(filepath, 'face')
  if vertices is None:
    raise ValueError(f'{filepath}: no vertex element')
  xyz = np.stack([vertices['x'], vertices['y'], vertices['z']], 1)
  if faces is None or len(faces) == 0:
    return TriMesh(xyz, np.zeros((0, 3), dtype=np.int64))
  return TriMesh(xyz, np.stack([np.asarray(f) for f in faces['vertex_indices']]))

"""Map-level evaluation: ground-truth occupancy from a reference cloud, free-space report."""

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from densemap.lib.geometry import PointCloud, Pose
from densemap.lib.occupancy import OccupancyMap, VoxelState
from densemap.lib.sensor_model import SensorModelParams

ALIGN_TOL = 1e-6


@dataclass
class FreeSpaceReport:
  recon_error: float
  completeness_vol: float
  correct_free: float
  incorrect_free: float
  incorrect_defined: bool = True

  def as_row(self):
    return asdict(self)


def build_gt_map(gt_cloud: PointCloud, sensor_poses: Sequence[Pose], params: SensorModelParams,
                 voxel_size, origin=(0., 0., 0.), tree_depth=8, chunk_size=16384) -> OccupancyMap:
  """Ray-cast from every sensor position to every reference point within max_range.

  Traversed voxels become free (l_min), endpoint voxels occupied (-l_min); occupied wins.
  """
  if len(sensor_poses) == 0:
    raise ValueError('build_gt_map needs at least one sensor pose')
  gt = OccupancyMap(voxel_size, origin, tree_depth, params.l_min)
  vox = gt.voxelizer
  free_sets, occupied_sets = [], []
  for pose in sensor_poses:
    offsets = gt_cloud.points - pose.translation
    ranges = np.linalg.norm(offsets, axis=1)
    keep = (ranges <= params.max_range) & (ranges > 0)
    offsets, ranges = offsets[keep], ranges[keep]
    if len(ranges) == 0:
      continue
    directions = offsets / ranges[:, None]
    origins = np.broadcast_to(pose.translation, directions.shape)
    for start in range(0, len(ranges), chunk_size):
      sl = slice(start, start + chunk_size)
      _, coords = vox.traverse(origins[sl], directions[sl], ranges[sl])
      free_sets.append(np.unique(coords, axis=0))
    occupied_sets.append(vox.world_to_grid(gt_cloud.points[keep]))

  if free_sets:
    gt.set_values(np.unique(np.concatenate(free_sets, 0), axis=0), params.l_min)
  if occupied_sets:
    gt.set_values(np.unique(np.concatenate(occupied_sets, 0), axis=0), params.l_max)
  free, occ = gt.classify_volumes()
  logging.info(f'GT map: {gt.num_voxels} voxels, free {free:.2f} m3, occupied {occ:.2f} m3')
  return gt


def _grid_offset(recon: OccupancyMap, gt_map: OccupancyMap):
  """Integer offset taking recon grid coordinates into gt grid coordinates."""
  if abs(recon.voxel_size - gt_map.voxel_size) > ALIGN_TOL * gt_map.voxel_size:
    raise ValueError(f'Grid mismatch: voxel size {recon.voxel_size} vs {gt_map.voxel_size}')
  shift = (recon.voxelizer.anchor - gt_map.voxelizer.anchor) / gt_map.voxel_size
  offset = np.round(shift)
  if np.abs(shift - offset).max() > ALIGN_TOL:
    raise ValueError(f'Grid mismatch: origins {recon.origin} and {gt_map.origin} not aligned')
  return offset.astype(np.int64)


def free_space_report(recon: OccupancyMap, gt_map: OccupancyMap, mesh_err) -> FreeSpaceReport:
  offset = _grid_offset(recon, gt_map)
  unit = gt_map.voxel_size**3
  coords, values = recon.voxels()
  gt_states = gt_map.states_of(coords + offset)
  recon_free = values < 0
  recon_occ = values > 0
  n_free = int(recon_free.sum())
  correct = int((recon_free & (gt_states == VoxelState.FREE)).sum())
  complete = int((recon_occ & (gt_states == VoxelState.OCCUPIED)).sum())
  if n_free == 0:
    return FreeSpaceReport(float(mesh_err), complete * unit, 0.0, 0.0, incorrect_defined=False)
  incorrect = 100.0 * (n_free - correct) / n_free
  return FreeSpaceReport(float(mesh_err), complete * unit, correct * unit, incorrect)

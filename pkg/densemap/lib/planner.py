"""RRT* restricted to observed free space.

The robot is a ball: a state is valid iff every voxel whose box lies within `radius` of the
centre is observed free. Unknown space blocks.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np
from scipy.ndimage import distance_transform_edt

from densemap.lib.occupancy import OccupancyMap, VoxelState
from densemap.lib.pc_utils import _make_parent, save_polyline

SQRT3 = math.sqrt(3.0)


class PlanStatus(Enum):
  FOUND = 'found'
  NOT_FOUND = 'not_found'


@dataclass(frozen=True)
class PlanRequest:
  start: tuple
  goal: tuple
  robot_radius: float = 0.3
  max_iterations: int = 20000
  step_size: float = 0.5
  goal_tolerance: float = 0.3
  seed: int = 0
  goal_bias: float = 0.05
  fix_z: bool = False

  def __post_init__(self):
    object.__setattr__(self, 'start', tuple(float(v) for v in self.start))
    object.__setattr__(self, 'goal', tuple(float(v) for v in self.goal))
    checks = [
        ('start', len(self.start) == 3 and all(map(math.isfinite, self.start))),
        ('goal', len(self.goal) == 3 and all(map(math.isfinite, self.goal))),
        ('robot_radius', self.robot_radius > 0),
        ('max_iterations', self.max_iterations > 0),
        ('step_size', self.step_size > 0),
        ('goal_tolerance', self.goal_tolerance >= 0),
        ('goal_bias', 0 <= self.goal_bias < 1),
    ]
    for key, ok in checks:
      if not ok:
        raise ValueError(f'Invalid planner parameter {key}={getattr(self, key)}')
    if self.fix_z and abs(self.goal[2] - self.start[2]) > self.goal_tolerance:
      raise ValueError(f'fix_z keeps the path at z={self.start[2]}, but the goal is at '
                       f'z={self.goal[2]}, beyond goal_tolerance={self.goal_tolerance}')

  @classmethod
  def from_config(cls, cfg):
    return cls(list(cfg.start), list(cfg.goal), float(cfg.robot_radius),
               int(cfg.max_iterations), float(cfg.step_size), float(cfg.goal_tolerance),
               int(cfg.seed), float(cfg.get('goal_bias', 0.05)), bool(cfg.get('fix_z', False)))


@dataclass
class PlanResult:
  status: PlanStatus
  path: List[np.ndarray] = field(default_factory=list)
  cost: float = float('inf')
  reason: Optional[str] = None
  iterations: int = 0
  num_nodes: int = 0

  @property
  def found(self):
    return self.status == PlanStatus.FOUND


def _ball_voxels(voxelizer, p, radius):
  """Grid coordinates of every voxel whose box is within `radius` of p."""
  lo = voxelizer.world_to_grid(p - radius)[0]
  hi = voxelizer.world_to_grid(p + radius)[0]
  axes = [np.arange(lo[i], hi[i] + 1) for i in range(3)]
  coords = np.stack(np.meshgrid(*axes, indexing='ij'), -1).reshape(-1, 3)
  box_lo, box_hi = voxelizer.aabb(coords)
  gap = np.maximum(np.maximum(box_lo - p, p - box_hi), 0)
  return coords[(gap**2).sum(1) <= radius**2]


def is_state_free(occ: OccupancyMap, p, radius) -> bool:
  if not radius > 0:
    raise ValueError(f'radius must be positive, got {radius}')
  p = np.asarray(p, dtype=np.float64).reshape(3)
  states = occ.states_of(_ball_voxels(occ.voxelizer, p, radius))
  return bool((states == VoxelState.FREE).all())


class FreeGrid:
  """Free-space lookups with a precomputed set of voxels whose ball is certainly free.

  Answers the same question as is_state_free. The clear set is built block by block from a
  clearance field over each block of free voxels, padded by the robot radius, so memory follows
  the observed free space rather than its bounding box.
  """

  def __init__(self, occ: OccupancyMap, radius, block_size=32):
    self.occ = occ
    self.voxelizer = occ.voxelizer
    self.radius = float(radius)
    vs = occ.voxel_size
    pad = int(math.ceil(self.radius / vs)) + 2
    bounds = occ.observed_bounds(VoxelState.FREE)
    if bounds is None:
      self.lo = np.zeros(3, dtype=np.int64)
      self.shape = np.ones(3, dtype=np.int64)
      self._clear = np.zeros(0, dtype=np.int64)
      self.volume = 0.0
      return
    self.lo = bounds[0] - pad
    self.shape = bounds[1] - bounds[0] + 1 + 2 * pad
    self.volume = float(len(occ.coords_of(VoxelState.FREE)) * vs**3)

    clear = []
    span = block_size + 2 * pad
    inner = slice(pad + 1, pad + 1 + block_size)
    for lo in occ.blocks(block_size, VoxelState.FREE):
      observed, values = occ.dense_block(lo - pad, (span,) * 3)
      free = np.pad(observed & (values < 0), 1)
      clearance = distance_transform_edt(free)[inner, inner, inner] * vs
      ok = free[inner, inner, inner] & (clearance - SQRT3 * vs > self.radius)
      clear.append(np.argwhere(ok) + lo)
    self._clear = np.sort(self._keys(np.concatenate(clear, 0)))

  def _keys(self, coords):
    """Row-major keys inside the padded free bounding box; -1 outside it."""
    rel = np.asarray(coords, dtype=np.int64).reshape(-1, 3) - self.lo
    inside = ((rel >= 0) & (rel < self.shape)).all(1)
    keys = np.full(len(rel), -1, dtype=np.int64)
    keys[inside] = np.ravel_multi_index(tuple(rel[inside].T), tuple(int(s) for s in self.shape))
    return keys

  def _is_clear(self, coords):
    keys = self._keys(coords)
    if len(self._clear) == 0:
      return np.zeros(len(keys), bool)
    pos = np.minimum(np.searchsorted(self._clear, keys), len(self._clear) - 1)
    return (keys >= 0) & (self._clear[pos] == keys)

  @property
  def bounds(self):
    """World-space box around the free voxels."""
    lo, _ = self.voxelizer.aabb(self.lo)
    _, hi = self.voxelizer.aabb(self.lo + self.shape - 1)
    return lo, hi

  def _free_at(self, coords):
    return self.occ.states_of(coords) == VoxelState.FREE

  def states_free(self, points):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    coords = self.voxelizer.world_to_grid(points)
    centre_free = self._free_at(coords)
    clear = centre_free & self._is_clear(coords)
    result = clear.copy()
    for i in np.flatnonzero(centre_free & ~clear):
      result[i] = self._free_at(_ball_voxels(self.voxelizer, points[i], self.radius)).all()
    return result

  def is_free(self, p):
    return bool(self.states_free(p)[0])

  def edge_free(self, a, b):
    """Samples the segment at most half a voxel apart, both ends included."""
    length = np.linalg.norm(b - a)
    n = max(int(math.ceil(length / (0.5 * self.voxelizer.voxel_size))), 1)
    t = np.linspace(0., 1., n + 1)[:, None]
    return bool(self.states_free(a + t * (b - a)).all())


class RRTStar:

  def __init__(self, grid: FreeGrid, req: PlanRequest):
    self.grid = grid
    self.req = req
    capacity = req.max_iterations + 1
    self.nodes = np.zeros((capacity, 3))
    self.costs = np.zeros(capacity)
    self.parents = np.full(capacity, -1, dtype=np.int64)
    self.children = [[] for _ in range(capacity)]
    self.n = 0
    free_volume = max(grid.volume, grid.voxelizer.voxel_size**3)
    self.gamma = 2 * (4. / 3.)**(1. / 3.) * (free_volume / (4. / 3. * math.pi))**(1. / 3.)

  def _add(self, p, parent, cost):
    i = self.n
    self.nodes[i], self.parents[i], self.costs[i] = p, parent, cost
    if parent >= 0:
      self.children[parent].append(i)
    self.n += 1
    return i

  def _steer(self, a, b):
    d = np.linalg.norm(b - a)
    if d <= self.req.step_size:
      return b
    return a + (b - a) * (self.req.step_size / d)

  def _propagate(self, root, delta):
    stack = list(self.children[root])
    while stack:
      j = stack.pop()
      self.costs[j] += delta
      stack.extend(self.children[j])

  def _rewire_radius(self):
    n = self.n
    if n < 2:
      return self.req.step_size
    return min(self.gamma * (math.log(n) / n)**(1. / 3.), self.req.step_size)

  def _path_to(self, i):
    path = []
    while i >= 0:
      path.append(self.nodes[i].copy())
      i = self.parents[i]
    return path[::-1]

  def plan(self) -> PlanResult:
    req = self.req
    rng = np.random.default_rng(req.seed)
    start, goal = np.array(req.start), np.array(req.goal)
    lo, hi = self.grid.bounds
    self._add(start, -1, 0.0)
    goal_nodes = []

    for it in range(req.max_iterations):
      # Fixed draws per iteration keep runs with more iterations an extension of shorter ones.
      pick_goal = rng.random() < req.goal_bias
      sample = rng.uniform(lo, hi)
      target = goal.copy() if pick_goal else sample
      if req.fix_z:
        target[2] = start[2]

      nodes = self.nodes[:self.n]
      dist = np.linalg.norm(nodes - target, axis=1)
      nearest = int(np.argmin(dist))
      new = self._steer(nodes[nearest], target)
      if not self.grid.is_free(new) or not self.grid.edge_free(nodes[nearest], new):
        continue

      radius = self._rewire_radius()
      dist_new = np.linalg.norm(nodes - new, axis=1)
      near = np.flatnonzero(dist_new <= radius)
      parent, cost = nearest, self.costs[nearest] + dist_new[nearest]
      for j in near[np.argsort(self.costs[near] + dist_new[near], kind='stable')]:
        c = self.costs[j] + dist_new[j]
        if c >= cost:
          break
        if self.grid.edge_free(nodes[j], new):
          parent, cost = j, c
          break
      i = self._add(new, parent, cost)

      for j in near:
        if j == parent:
          continue
        c = cost + dist_new[j]
        if c < self.costs[j] and self.grid.edge_free(new, self.nodes[j]):
          old_parent = self.parents[j]
          self.children[old_parent].remove(j)
          self.children[i].append(j)
          self.parents[j] = i
          delta = c - self.costs[j]
          self.costs[j] = c
          self._propagate(j, delta)

      if np.linalg.norm(new - goal) <= req.goal_tolerance:
        goal_nodes.append(i)

    if not goal_nodes:
      return PlanResult(PlanStatus.NOT_FOUND, reason='no path within iteration budget',
                        iterations=req.max_iterations, num_nodes=self.n)
    best = min(goal_nodes, key=lambda j: (self.costs[j], j))
    path = self._path_to(best)
    cost = float(sum(np.linalg.norm(b - a) for a, b in zip(path[:-1], path[1:])))
    return PlanResult(PlanStatus.FOUND, path, cost, iterations=req.max_iterations,
                      num_nodes=self.n)


def plan_rrt_star(occ: OccupancyMap, req: PlanRequest) -> PlanResult:
  grid = FreeGrid(occ, req.robot_radius)
  start, goal = np.array(req.start), np.array(req.goal)
  if not grid.is_free(start):
    return PlanResult(PlanStatus.NOT_FOUND, reason='start is not in free space')
  if not grid.is_free(goal):
    return PlanResult(PlanStatus.NOT_FOUND, reason='goal is not in free space')
  if np.linalg.norm(goal - start) <= req.goal_tolerance:
    return PlanResult(PlanStatus.FOUND, [start], 0.0, num_nodes=1)
  result = RRTStar(grid, req).plan()
  if result.found:
    logging.info(f'Path found: {len(result.path)} waypoints, cost {result.cost:.3f} m')
  else:
    logging.info(f'No path: {result.reason}')
  return result


def save_path(result: PlanResult, csv_path, ply_path=None):
  """Waypoints as `x,y,z` CSV rows (and optionally a PLY polyline)."""
  _make_parent(csv_path)
  with open(csv_path, 'w', newline='') as f:
    writer = csv.writer(f, lineterminator='\n')
    writer.writerow(['x', 'y', 'z'])
    for p in result.path:
      writer.writerow([repr(float(v)) for v in p])
  if ply_path is not None:
    save_polyline(np.array(result.path).reshape(-1, 3), ply_path)


def load_path(csv_path):
  with open(csv_path, newline='') as f:
    rows = list(csv.DictReader(f))
  return [np.array([float(r['x']), float(r['y']), float(r['z'])]) for r in rows]

import numpy as np

from densemap.lib.voxelizer import Voxelizer, morton_decode, morton_encode


def test_morton_roundtrip_and_order():
  rng = np.random.default_rng(0)
  coords = rng.integers(0, 1 << 21, size=(1000, 3))
  assert np.array_equal(morton_decode(morton_encode(coords)), coords)
  keys = morton_encode([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
  assert keys.tolist() == [0, 1, 2, 4, 7]


def test_world_grid_conversion():
  vox = Voxelizer(0.5, anchor=(1., 0., 0.))
  assert vox.world_to_grid([[1.2, -0.1, 0.99]]).tolist() == [[0, -1, 1]]
  assert np.allclose(vox.grid_to_world([[0, -1, 1]]), [[1.25, -0.25, 0.75]])
  lo, hi = vox.aabb([2, 0, 0])
  assert np.allclose(lo, [2., 0., 0.])
  assert np.allclose(hi, [2.5, 0.5, 0.5])


def test_traverse_axis_aligned():
  vox = Voxelizer(1.0)
  rays, coords = vox.traverse([[0.5, 0.5, 0.5]], [[1., 0., 0.]], 2.2)
  assert rays.tolist() == [0, 0, 0]
  assert coords.tolist() == [[0, 0, 0], [1, 0, 0], [2, 0, 0]]


def test_traverse_stops_before_boundary_at_t_max():
  vox = Voxelizer(1.0)
  _, coords = vox.traverse([[0.5, 0.5, 0.5]], [[1., 0., 0.]], 1.5)
  assert coords.tolist() == [[0, 0, 0], [1, 0, 0]]
  _, coords = vox.traverse([[0.5, 0.5, 0.5]], [[1., 0., 0.]], 0.5)
  assert coords.tolist() == [[0, 0, 0]]


def test_traverse_batch_grouped_by_ray():
  vox = Voxelizer(1.0)
  origins = [[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]
  directions = [[0., -1., 0.], [0., 0., 1.]]
  rays, coords = vox.traverse(origins, directions, [2.0, 1.0])
  assert rays.tolist() == [0, 0, 0, 1, 1]
  assert coords.tolist() == [[0, 0, 0], [0, -1, 0], [0, -2, 0], [0, 0, 0], [0, 0, 1]]


def test_traverse_empty():
  rays, coords = Voxelizer(1.0).traverse(np.zeros((0, 3)), np.zeros((0, 3)), 1.0)
  assert len(rays) == 0
  assert coords.shape == (0, 3)

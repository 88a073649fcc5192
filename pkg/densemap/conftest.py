import pytest

from densemap.main import load_config

# Small images and a coarse grid keep full runs within seconds.
SMALL = [
    'camera.intrinsics.fx=80.0',
    'camera.intrinsics.fy=80.0',
    'camera.intrinsics.cx=79.5',
    'camera.intrinsics.cy=59.5',
    'camera.intrinsics.width=160',
    'camera.intrinsics.height=120',
    'data.num_frames=3',
    'data.eval_depth=False',
    'map.voxel_size=0.1',
    'mesh.density=1000.0',
    'misc.log_level=WARNING',
]


@pytest.fixture(scope='session')
def small_config():
  """Config over SMALL; later overrides of the same key replace earlier ones."""

  def make(*overrides):
    merged = {}
    for item in SMALL + list(overrides):
      merged[item.split('=', 1)[0]] = item
    return load_config(list(merged.values()))

  return make

import numpy as np
import pytest

from densemap.lib.geometry import CameraIntrinsics, Pose
from densemap.lib.lidar import camera_extrinsics
from densemap.lib.synthworld import (Box, LidarModel, Plane, Scene, Sphere, circle_trajectory,
                                     line_trajectory, load_scene, save_scene, simulate_depth_camera,
                                     simulate_lidar, trace_ray)

X = [1., 0., 0.]


def test_box_hits():
  scene = Scene([Box([0., 0., 0.], [2., 2., 2.])])
  point, r = trace_ray(scene, [-5., 0., 0.], X)
  assert r == pytest.approx(4.)
  assert np.allclose(point, [-1., 0., 0.])
  assert trace_ray(scene, [0., 0., 0.], X)[1] == pytest.approx(1.)
  assert trace_ray(scene, [-5., 3., 0.], X) is None
  assert trace_ray(scene, [5., 0., 0.], X) is None


def test_sphere_hits():
  scene = Scene([Sphere([0., 0., 0.], 1.)])
  assert trace_ray(scene, [-5., 0., 0.], X)[1] == pytest.approx(4.)
  assert trace_ray(scene, [0., 0., 0.], X)[1] == pytest.approx(1.)
  assert trace_ray(scene, [-5., 2., 0.], X) is None


def test_plane_hits():
  plane = Plane([0., 0., 2.], 2.)
  assert np.allclose(plane.normal, [0., 0., 1.])
  assert plane.offset == 1.
  scene = Scene([plane])
  assert trace_ray(scene, [0., 0., 0.], [0., 0., 1.])[1] == pytest.approx(1.)
  assert trace_ray(scene, [0., 0., 0.], X) is None
  assert trace_ray(scene, [0., 0., 0.], [0., 0., -1.]) is None


def test_nearest_hit_and_max_range():
  scene = Scene([Box([5., 0., 0.], [1., 1., 1.]), Sphere([3., 0., 0.], 0.5)])
  assert trace_ray(scene, [0., 0., 0.], X)[1] == pytest.approx(2.5)
  assert trace_ray(scene, [0., 0., 0.], X, max_range=2.) is None
  with pytest.raises(ValueError):
    trace_ray(scene, [0., 0., 0.], [2., 0., 0.])


def test_scene_text_roundtrip(tmp_path):
  scene = load_scene('room')
  assert len(scene) > 0
  assert scene.bounds is not None
  path = str(tmp_path / 'scene.txt')
  save_scene(scene, path)
  again = load_scene(path)
  assert again.to_text() == scene.to_text()
  rng = np.random.default_rng(0)
  dirs = rng.normal(size=(50, 3))
  dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
  origin = np.array([0., 0., 1.2])
  assert np.allclose(scene.trace(origin, dirs), again.trace(origin, dirs))


def test_scene_parse_errors():
  with pytest.raises(ValueError, match='test:2'):
    Scene.parse('sphere 0 0 0 1\ncone 0 0 0 1', 'test')
  with pytest.raises(ValueError, match='takes 6 values'):
    Scene.parse('box 0 0 0 1 1', 'test')
  with pytest.raises(ValueError, match='non-numeric'):
    Scene.parse('sphere 0 0 zero 1', 'test')
  with pytest.raises(ValueError):
    Scene.parse('sphere 0 0 0 -1', 'test')
  with pytest.raises(FileNotFoundError):
    load_scene('no_such_scene')


def test_surface_samples():
  sphere = Sphere([1., 0., 0.], 2.)
  pts = sphere.sample_surface(0.1)
  assert np.allclose(np.linalg.norm(pts - sphere.center, axis=1), 2.)
  box = Box([0., 0., 0.], [1., 2., 3.])
  pts = box.sample_surface(0.1)
  on_face = np.isclose(np.abs(pts), box.size / 2).any(1)
  assert on_face.all()
  with pytest.raises(ValueError):
    Plane([0., 0., 1.], 0.).sample_surface(0.1)
  scene = Scene([Plane([0., 0., 1.], 0.), sphere], bounds=([-1., -1., -1.], [1., 1., 1.]))
  cloud = scene.sample_surface(0.1)
  assert len(cloud) > 0
  assert (np.abs(cloud.points) <= 1. + 1e-12).all()


def test_simulated_lidar_inside_sphere():
  scene = Scene([Sphere([0., 0., 0.], 5.)])
  model = LidarModel(num_rings=8, elevation_min=-10., elevation_max=10., azimuth_steps=32)
  scan = simulate_lidar(scene, model, Pose.from_yaw(0.3, [1., 0., 0.], 2.0))
  assert len(scan) == 8 * 32
  assert scan.timestamp == 2.0
  assert sorted(set(scan.rings.tolist())) == list(range(8))
  world = Pose.from_yaw(0.3, [1., 0., 0.]).transform_points(scan.points)
  assert np.allclose(np.linalg.norm(world, axis=1), 5.)


def test_simulated_lidar_range_and_noise():
  scene = Scene([Sphere([0., 0., 0.], 5.)])
  short = LidarModel(num_rings=4, azimuth_steps=16, max_range=3.)
  assert len(simulate_lidar(scene, short, Pose())) == 0
  noisy = LidarModel(num_rings=4, azimuth_steps=16, noise_std=0.01)
  a = simulate_lidar(scene, noisy, Pose(), seed=3)
  b = simulate_lidar(scene, noisy, Pose(), seed=3)
  assert np.array_equal(a.points, b.points)
  assert not np.allclose(np.linalg.norm(a.points, axis=1), 5.)


def test_depth_camera_reports_z_depth():
  intr = CameraIntrinsics(10., 10., 3.5, 2.5, 8, 6)
  scene = Scene([Sphere([0., 0., 0.], 2.)])
  depth = simulate_depth_camera(scene, intr, Pose())
  rays = intr.pixel_rays()
  assert np.allclose(depth.depth * np.linalg.norm(rays, axis=-1), 2.)
  empty = simulate_depth_camera(Scene([]), intr, Pose(), sky_depth=256.)
  assert (empty.depth == 256.).all()


def test_trajectories():
  poses = circle_trajectory([0., 0., 0.], 2., 4, height=1.5, dt=0.5)
  assert [p.timestamp for p in poses] == [0., 0.5, 1., 1.5]
  for pose in poses:
    assert pose.translation[2] == pytest.approx(1.5)
    forward = pose.rotate(X)[0]
    to_centre = np.array([0., 0., 1.5]) - pose.translation
    assert np.allclose(forward, to_centre / np.linalg.norm(to_centre))
  line = line_trajectory([0., 0., 1.], [4., 0., 1.], 5)
  assert np.allclose([p.translation[0] for p in line], [0., 1., 2., 3., 4.])
  assert np.allclose(line[0].rotate(X)[0], X)


def test_lidar_model_validation():
  with pytest.raises(ValueError):
    LidarModel(num_rings=2, elevations=(0., 1., 2.))
  with pytest.raises(ValueError):
    LidarModel(elevation_min=5., elevation_max=-5.)
  model = LidarModel(num_rings=3, elevations=(-1., 0., 2.))
  assert model.ring_elevations().tolist() == [-1., 0., 2.]


def test_sphere_silhouette_area():
  f, d, r = 200., 5., 1.
  intr = CameraIntrinsics(f, f, 79.5, 79.5, 160, 160)
  camera = Pose.from_yaw(0., [-d, 0., 0.]) * camera_extrinsics().inverse()
  depth = simulate_depth_camera(Scene([Sphere([0., 0., 0.], r)]), intr, camera, 256.).depth
  hit = (depth < 256.).sum()
  radius_px = f * r / np.sqrt(d**2 - r**2)
  assert hit == pytest.approx(np.pi * radius_px**2, rel=0.02)

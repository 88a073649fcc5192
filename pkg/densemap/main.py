"""Command-line entry point.

  densemap <command> [--config run/config.yaml] [group.key=value ...]

Every command reads config/default.yaml; a saved run config given with --config is merged
over it and dotted overrides are applied last.
"""

import argparse
import logging
import os
import sys

from hydra import compose, initialize_config_dir
from hydra.errors import HydraException
from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from densemap.lib.completion import load_completer, load_external, write_completion
from densemap.lib.geometry import CameraIntrinsics, DepthImage
from densemap.lib.lidar import load_scan, project_scan, save_scan
from densemap.lib.map_eval import build_gt_map, free_space_report
from densemap.lib.meshing import (load_mesh, marching_cubes, mesh_accuracy, sample_mesh,
                                  save_mesh)
from densemap.lib.metrics import depth_metrics, format_report, write_report_csv
from densemap.lib.occupancy import OccupancyMap
from densemap.lib.pc_utils import (load_point_cloud, load_trajectory, read_depth_png,
                                   save_point_cloud, save_trajectory, write_depth_png)
from densemap.lib.pipeline import (PipelineConfig, compare_inputs, generate_trajectory,
                                   run_ablation_rho, run_pipeline)
from densemap.lib.planner import PlanRequest, plan_rrt_star, save_path
from densemap.lib.sensor_model import SensorModelParams
from densemap.lib.synthworld import (LidarModel, load_scene, save_scene, simulate_depth_camera,
                                     simulate_lidar)
from densemap.lib.utils import WithTimer, setup_logging

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config')


def load_config(overrides=(), config_path=None):
  """defaults < saved run config < command-line overrides."""
  overrides = list(overrides)
  with initialize_config_dir(config_dir=CONFIG_DIR, version_base=None):
    config = compose(config_name='default', overrides=overrides)
    if config_path:
      if not os.path.isfile(config_path):
        raise FileNotFoundError(f'Config file not found: {config_path}')
      base = compose(config_name='default')
      config = OmegaConf.merge(base, OmegaConf.load(config_path),
                               OmegaConf.from_dotlist(overrides))
  return config


def _flatten(node, prefix=''):
  for key, value in node.items():
    name = f'{prefix}{key}'
    if OmegaConf.is_dict(value):
      yield from _flatten(value, name + '.')
    else:
      yield name, OmegaConf.to_container(value) if OmegaConf.is_list(value) else value


def config_help():
  config = OmegaConf.load(os.path.join(CONFIG_DIR, 'default.yaml'))
  lines = ['config keys (override with key=value):']
  lines += [f'  {k} = {v}' for k, v in _flatten(config)]
  return '\n'.join(lines)


def cmd_synth(config, args):
  """Simulated scans, trajectory, reference cloud and dense depth for a scene."""
  out_dir = args.out or config.misc.out_dir
  scene = load_scene(config.data.scene)
  model = LidarModel.from_config(config.lidar)
  poses = generate_trajectory(config)
  save_trajectory(poses, os.path.join(out_dir, 'trajectory.txt'))
  save_scene(scene, os.path.join(out_dir, 'scene.txt'))
  pcfg = PipelineConfig.from_config(config)
  for i, pose in enumerate(poses):
    scan = simulate_lidar(scene, model, pose, int(config.misc.seed) + i)
    save_scan(scan, os.path.join(out_dir, 'scans', f'{i:06d}.ply'))
    for rig in pcfg.cameras:
      cam_pose = pose * rig.extrinsics.inverse()
      gt = simulate_depth_camera(scene, pcfg.intrinsics, cam_pose, pcfg.params.sky_depth)
      write_depth_png(os.path.join(out_dir, 'depth', f'{i:06d}_{rig.name}.png'), gt.depth)
  if scene.bounds is not None:
    save_point_cloud(scene.sample_surface(pcfg.voxel_size / 2),
                     os.path.join(out_dir, 'gt_cloud.ply'), text=False)
  logging.info(f'Synthetic data written to {out_dir}')


def _camera(config, name):
  pcfg = PipelineConfig.from_config(config)
  for rig in pcfg.cameras:
    if rig.name == name:
      return pcfg, rig
  raise ValueError(f'camera.rigs: no camera named {name}')


def cmd_project(config, args):
  pcfg, rig = _camera(config, args.camera)
  scan = load_scan(args.scan, pcfg.lidar.num_rings)
  depth = project_scan(scan, rig.extrinsics, pcfg.intrinsics)
  write_depth_png(args.out, depth.depth)
  logging.info(f'{depth.num_valid} valid pixels written to {args.out}')


def cmd_complete(config, args):
  params = SensorModelParams.from_config(config.sensor)
  intr = CameraIntrinsics.from_config(config.camera.intrinsics)
  sparse = DepthImage(intr, read_depth_png(args.sparse))
  completer = load_completer(config.completion.completer)(params, config.completion)
  frame_id = os.path.splitext(os.path.basename(args.sparse))[0]
  result = completer(sparse, frame_id=frame_id)
  write_completion(result, args.dense, args.sigma)
  logging.info(f'Completed {result.dense.num_valid} pixels')


def cmd_fuse(config, args):
  output = run_pipeline(config, args.out, evaluate=False)
  logging.info(f'Map written to {output.artifacts["map"]}')


def cmd_mesh(config, args):
  occ = OccupancyMap.load(args.map, config.sensor.l_min)
  mesh = marching_cubes(occ)
  save_mesh(mesh, args.out, binary=bool(config.mesh.binary))
  logging.info(f'Mesh with {len(mesh.triangles)} triangles written to {args.out}')


def cmd_eval_depth(config, args):
  intr = CameraIntrinsics.from_config(config.camera.intrinsics)
  sky = float(config.sensor.sky_depth)
  pred = load_external(args.dense, args.sigma, intr, sky).dense
  gt = DepthImage(intr, read_depth_png(args.gt, saturated_value=sky))
  report = depth_metrics(pred, gt)
  logging.info('\n' + format_report(report, 'Depth metrics'))
  if args.out:
    write_report_csv([report], args.out)


def cmd_eval_map(config, args):
  params = SensorModelParams.from_config(config.sensor)
  occ = OccupancyMap.load(args.map, params.l_min)
  gt_cloud = load_point_cloud(args.gt_cloud)
  poses = load_trajectory(args.trajectory)
  gt_map = build_gt_map(gt_cloud, poses, params, occ.voxel_size, occ.voxelizer.anchor)
  mesh_err = float('nan')
  if args.mesh:
    mesh = load_mesh(args.mesh)
    samples = sample_mesh(mesh, float(config.mesh.density), int(config.mesh.seed))
    if len(samples):
      mesh_err = mesh_accuracy(samples, gt_cloud)
  report = free_space_report(occ, gt_map, mesh_err)
  logging.info('\n' + format_report(report.as_row(), 'Free space'))
  if args.out:
    write_report_csv([report], args.out)


def cmd_plan(config, args):
  occ = OccupancyMap.load(args.map, config.sensor.l_min)
  req = PlanRequest.from_config(config.planner)
  logging.info(f'Planner: step {req.step_size} m, {req.max_iterations} iterations, '
               f'radius {req.robot_radius} m, seed {req.seed}')
  result = plan_rrt_star(occ, req)
  out_dir = args.out or config.misc.out_dir
  if result.found:
    save_path(result, os.path.join(out_dir, 'path.csv'), os.path.join(out_dir, 'path.ply'))
  else:
    logging.info(f'not_found: {result.reason}')
  return 0 if result.found else 2


def cmd_run(config, args):
  with WithTimer('run'):
    output = run_pipeline(config, args.out)
  if output.report is not None:
    logging.info('\n' + format_report(output.report.as_row(), 'Free space'))


def cmd_ablate_rho(config, args):
  rhos = args.rhos.split(',') if args.rhos else list(config.ablation.rhos)
  rows = run_ablation_rho(config, rhos, args.out)
  for row in rows:
    logging.info(format_report(row))


def cmd_compare(config, args):
  rows = compare_inputs(config, args.out)
  for row in rows:
    logging.info(format_report(row))


COMMANDS = {
    'synth': cmd_synth,
    'project': cmd_project,
    'complete': cmd_complete,
    'fuse': cmd_fuse,
    'mesh': cmd_mesh,
    'eval-depth': cmd_eval_depth,
    'eval-map': cmd_eval_map,
    'plan': cmd_plan,
    'ablate-rho': cmd_ablate_rho,
    'run': cmd_run,
    'compare': cmd_compare,
}


def build_parser():
  parser = argparse.ArgumentParser(prog='densemap', epilog=config_help(),
                                   formatter_class=argparse.RawDescriptionHelpFormatter)
  parser.add_argument('--config', default=None, help='saved run config to start from')
  sub = parser.add_subparsers(dest='command', required=True)

  def add(name, help_text):
    p = sub.add_parser(name, help=help_text, epilog=config_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument('overrides', nargs='*', help='config overrides, group.key=value')
    return p

  add('synth', 'simulate scans for a scene').add_argument('--out')
  p = add('project', 'project a lidar scan into a camera')
  p.add_argument('--scan', required=True)
  p.add_argument('--camera', default='forward')
  p.add_argument('--out', required=True)
  p = add('complete', 'complete a sparse depth image')
  p.add_argument('--sparse', required=True)
  p.add_argument('--dense', required=True)
  p.add_argument('--sigma', required=True)
  add('fuse', 'build a map without evaluation').add_argument('--out')
  p = add('mesh', 'extract a mesh from a map')
  p.add_argument('--map', required=True)
  p.add_argument('--out', required=True)
  p = add('eval-depth', 'depth metrics of a completion against ground truth')
  p.add_argument('--dense', required=True)
  p.add_argument('--sigma', required=True)
  p.add_argument('--gt', required=True)
  p.add_argument('--out')
  p = add('eval-map', 'free-space report of a map')
  p.add_argument('--map', required=True)
  p.add_argument('--gt-cloud', required=True)
  p.add_argument('--trajectory', required=True)
  p.add_argument('--mesh')
  p.add_argument('--out')
  p = add('plan', 'RRT* on a map')
  p.add_argument('--map', required=True)
  p.add_argument('--out')
  p = add('ablate-rho', 'rejection threshold ablation')
  p.add_argument('--rhos', help='comma separated, e.g. 0.5,1,2,4,inf')
  p.add_argument('--out')
  add('run', 'full pipeline').add_argument('--out')
  add('compare', 'raw sparse vs raw dense vs completed input').add_argument('--out')
  return parser


def main(argv=None):
  args = build_parser().parse_args(argv)
  setup_logging()
  try:
    config = load_config(args.overrides, args.config)
    setup_logging(config.misc.log_level)
    logging.info('===> Configurations')
    logging.info('\n' + OmegaConf.to_yaml(config))
    status = COMMANDS[args.command](config, args)
  except (ValueError, OSError, HydraException, OmegaConfBaseException) as e:
    logging.error(f'Error: {e}')
    return 1
  return status or 0


if __name__ == '__main__':
  sys.exit(main())

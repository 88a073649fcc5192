"""End-to-end runs: lidar -> sparse depth -> completion -> rejection -> fusion -> evaluation."""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from joblib import Parallel, delayed
from omegaconf import OmegaConf
from tqdm import tqdm

import densemap
from densemap.lib.completion import (InsufficientSupportError, corrupt_predictions,
                                     load_completer)
from densemap.lib.geometry import CameraIntrinsics, Pose, interpolate_pose
from densemap.lib.lidar import (LidarScan, accumulate_scans, camera_extrinsics, downsample_beams,
                                load_scan, project_scan)
from densemap.lib.map_eval import FreeSpaceReport, build_gt_map, free_space_report
from densemap.lib.meshing import TriMesh, marching_cubes, mesh_accuracy, sample_mesh, save_mesh
from densemap.lib.metrics import (DepthMetricReport, average_reports, depth_metrics,
                                  write_report_csv)
from densemap.lib.occupancy import IntegrationStats, OccupancyMap
from densemap.lib.pc_utils import load_point_cloud, load_trajectory, save_point_cloud
from densemap.lib.sensor_model import SensorModelParams
from densemap.lib.synthworld import (LidarModel, Scene, circle_trajectory, line_trajectory,
                                     load_scene, simulate_lidar)
from densemap.lib.utils import Timer, mkdir_p, save_config, write_summary

CAMERA_ORDER = ('left', 'forward', 'right')


@dataclass(frozen=True)
class CameraRig:
  name: str
  extrinsics: Pose  # lidar -> camera


@dataclass
class Frame:
  index: int
  pose: Pose  # world <- lidar
  scan: LidarScan


@dataclass
class PipelineConfig:
  """Typed view of the run config, validated before any work starts."""
  params: SensorModelParams
  completer: str
  intrinsics: CameraIntrinsics
  cameras: List[CameraRig]
  voxel_size: float
  tree_depth: int
  origin: tuple
  frame_stride: int
  lidar: LidarModel
  keep_every: int
  raw: object = None

  @classmethod
  def from_config(cls, cfg):
    params = SensorModelParams.from_config(cfg.sensor)
    rigs = list(cfg.camera.rigs or [])
    if not rigs:
      raise ValueError('camera.rigs: at least one camera must be configured')
    rank = {name: i for i, name in enumerate(CAMERA_ORDER)}
    cameras = [
        CameraRig(str(r.name), camera_extrinsics(float(r.get('yaw_deg', 0.0)),
                                                 list(r.get('position', [0., 0., 0.]))))
        for r in sorted(rigs, key=lambda r: rank.get(str(r.name), len(rank)))
    ]
    if cfg.data.frame_stride < 1:
      raise ValueError(f'data.frame_stride must be >= 1, got {cfg.data.frame_stride}')
    if cfg.lidar.keep_every < 1:
      raise ValueError(f'lidar.keep_every must be >= 1, got {cfg.lidar.keep_every}')
    if not cfg.map.voxel_size > 0:
      raise ValueError(f'map.voxel_size must be positive, got {cfg.map.voxel_size}')
    load_completer(cfg.completion.completer)
    for key in ('trajectory', 'scans_dir', 'gt_cloud'):
      path = cfg.data.get(key)
      if path and not os.path.exists(path):
        raise FileNotFoundError(f'data.{key}: file not found: {path}')
    if cfg.completion.completer == 'external':
      for key in ('external_dense_dir', 'external_sigma_dir'):
        path = cfg.completion.get(key)
        if not path or not os.path.isdir(path):
          raise FileNotFoundError(f'completion.{key}: directory not found: {path}')
    if not cfg.data.scans_dir and not cfg.data.scene:
      raise ValueError('data.scene or data.scans_dir must be set')
    return cls(params=params,
               completer=str(cfg.completion.completer),
               intrinsics=CameraIntrinsics.from_config(cfg.camera.intrinsics),
               cameras=cameras,
               voxel_size=float(cfg.map.voxel_size),
               tree_depth=int(cfg.map.tree_depth),
               origin=tuple(float(v) for v in cfg.map.origin),
               frame_stride=int(cfg.data.frame_stride),
               lidar=LidarModel.from_config(cfg.lidar),
               keep_every=int(cfg.lidar.keep_every),
               raw=cfg)

  @property
  def camera_order(self):
    return [c.name for c in self.cameras]

  def new_map(self):
    return OccupancyMap(self.voxel_size, self.origin, self.tree_depth, self.params.l_min)


@dataclass
class PipelineOutput:
  occ: OccupancyMap
  mesh: TriMesh
  stats: IntegrationStats
  report: Optional[FreeSpaceReport] = None
  depth_reports: List[DepthMetricReport] = field(default_factory=list)
  artifacts: Dict[str, str] = field(default_factory=dict)


def generate_trajectory(cfg) -> List[Pose]:
  data = cfg.data
  if data.trajectory_type == 'circle':
    center = np.array(list(data.center), dtype=np.float64)
    poses = circle_trajectory(center[:2].tolist() + [0.], float(data.radius),
                              int(data.num_frames), float(center[2]), dt=float(data.frame_dt))
  elif data.trajectory_type == 'line':
    poses = line_trajectory(list(data.line_start), list(data.line_end), int(data.num_frames),
                            dt=float(data.frame_dt))
  else:
    raise ValueError(f'data.trajectory_type: unknown trajectory {data.trajectory_type}')
  return poses


def load_frames(cfg, pcfg: PipelineConfig, scene: Optional[Scene]) -> List[Frame]:
  """All frames at full lidar resolution, before the frame stride."""
  data = cfg.data
  if data.scans_dir:
    if not data.trajectory:
      raise ValueError('data.trajectory is required with data.scans_dir')
    traj = load_trajectory(data.trajectory)
    files = sorted(f for f in os.listdir(data.scans_dir) if f.endswith('.ply'))
    frames = []
    for i, name in enumerate(files):
      scan = load_scan(os.path.join(data.scans_dir, name), pcfg.lidar.num_rings)
      frames.append(Frame(i, interpolate_pose(traj, scan.timestamp), scan))
    return frames

  poses = load_trajectory(data.trajectory) if data.trajectory else generate_trajectory(cfg)
  seed = int(cfg.misc.seed)
  return [Frame(i, pose, simulate_lidar(scene, pcfg.lidar, pose, seed + i))
          for i, pose in enumerate(poses)]


def load_gt_cloud(cfg, pcfg, scene):
  if cfg.data.gt_cloud:
    return load_point_cloud(cfg.data.gt_cloud)
  if scene is not None and scene.bounds is not None:
    return scene.sample_surface(pcfg.voxel_size / 2)
  return None


def gt_depth_for(frames, k, rig, pcfg, window):
  """Denser ground-truth depth from `window` consecutive full-resolution scans around frame k."""
  lo = max(0, k - window // 2)
  hi = min(len(frames), lo + window)
  scans = [(f.scan, f.pose) for f in frames[lo:hi]]
  return accumulate_scans(scans, frames[k].pose, pcfg.intrinsics, rig.extrinsics)


def integrate_frames(cfg, pcfg: PipelineConfig, frames: List[Frame], occ: OccupancyMap,
                     rho=None, keep_every=None, completer=None, inject_corruption=False,
                     eval_depth=False):
  params = pcfg.params if rho is None else pcfg.params.replace(rho=float(rho))
  keep_every = pcfg.keep_every if keep_every is None else keep_every
  CompleterClass = load_completer(completer or pcfg.completer)
  complete = CompleterClass(params, cfg.completion)
  ablation = cfg.ablation
  total = IntegrationStats()
  depth_reports = []
  timer = Timer()

  selected = list(range(0, len(frames), pcfg.frame_stride))
  for k in tqdm(selected, desc='frames', disable=len(selected) < 2):
    frame = frames[k]
    timer.tic()
    scan = downsample_beams(frame.scan, keep_every)
    for c, rig in enumerate(pcfg.cameras):
      cam_pose = frame.pose * rig.extrinsics.inverse()
      sparse = project_scan(scan, rig.extrinsics, pcfg.intrinsics)
      try:
        result = complete(sparse, frame_id=f'{frame.index:06d}_{rig.name}')
      except InsufficientSupportError as e:
        logging.warning(f'Frame {frame.index} camera {rig.name}: {e}, skipped')
        continue
      if inject_corruption and ablation.corrupt_fraction > 0:
        result = corrupt_predictions(
            result, params, float(ablation.corrupt_fraction),
            float(ablation.corrupt_depth_offset),
            tuple(float(r) for r in ablation.corrupt_sigma_ratio),
            int(ablation.corrupt_patch), int(cfg.misc.seed) * 1000 + frame.index * 10 + c)
      if eval_depth:
        gt = gt_depth_for(frames, k, rig, pcfg, int(cfg.lidar.accumulate))
        if result.dense.sigma is not None and (result.dense.valid_mask & gt.valid_mask).any():
          depth_reports.append(depth_metrics(result.dense, gt))
      stats = occ.integrate_depth_image(result, cam_pose, params)
      total += stats
      logging.info(f'Frame {frame.index} {rig.name}: {stats.rays_integrated} rays integrated, '
                   f'{stats.rays_rejected} rejected, {stats.rays_sky} sky')
    timer.toc()
  logging.info(f'Integrated {len(selected)} frames, {timer.average_time:.3f}s per frame')
  return total, depth_reports


def evaluate_map(cfg, pcfg, occ, mesh, gt_cloud, poses) -> FreeSpaceReport:
  gt_map = build_gt_map(gt_cloud, poses, pcfg.params, pcfg.voxel_size, pcfg.origin,
                        pcfg.tree_depth)
  mesh_err = float('nan')
  if not mesh.is_empty:
    samples = sample_mesh(mesh, float(cfg.mesh.density), int(cfg.mesh.seed))
    if len(samples):
      mesh_err = mesh_accuracy(samples, gt_cloud)
  return free_space_report(occ, gt_map, mesh_err)


def run_pipeline(config, out_dir=None, rho=None, keep_every=None, completer=None,
                 inject_corruption=False, evaluate=True, scene=None, frames=None,
                 gt_cloud=None) -> PipelineOutput:
  """Build, mesh and evaluate one reconstruction; artifacts go to `out_dir`."""
  pcfg = PipelineConfig.from_config(config)
  out_dir = out_dir or config.misc.out_dir
  mkdir_p(out_dir)

  logging.info('===> Loading data')
  if scene is None and config.data.scene and not config.data.scans_dir:
    scene = load_scene(config.data.scene)
  if frames is None:
    frames = load_frames(config, pcfg, scene)
  if not frames:
    raise ValueError('No frames to integrate')

  logging.info('===> Integrating frames')
  occ = pcfg.new_map()
  eval_depth = evaluate and bool(config.data.eval_depth)
  stats, depth_reports = integrate_frames(config, pcfg, frames, occ, rho, keep_every, completer,
                                          inject_corruption, eval_depth)
  free, occupied = occ.classify_volumes()
  logging.info(f'Map: {occ.num_voxels} voxels, free {free:.2f} m3, occupied {occupied:.2f} m3')

  artifacts = {}
  artifacts['map'] = os.path.join(out_dir, 'map.bin')
  occ.save(artifacts['map'])
  artifacts['occupied_cloud'] = os.path.join(out_dir, 'occupied.ply')
  save_point_cloud(occ.export_occupied_cloud(), artifacts['occupied_cloud'])

  logging.info('===> Meshing')
  mesh = marching_cubes(occ)
  artifacts['mesh'] = os.path.join(out_dir, 'mesh.ply')
  save_mesh(mesh, artifacts['mesh'], binary=bool(config.mesh.binary))
  logging.info(f'Mesh: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles')

  output = PipelineOutput(occ, mesh, stats, depth_reports=depth_reports, artifacts=artifacts)
  if evaluate:
    logging.info('===> Evaluating')
    if gt_cloud is None:
      gt_cloud = load_gt_cloud(config, pcfg, scene)
    if gt_cloud is None:
      logging.warning('No reference cloud available, map evaluation skipped')
    else:
      output.report = evaluate_map(config, pcfg, occ, mesh, gt_cloud,
                                   [frames[k].pose for k in range(0, len(frames),
                                                                  pcfg.frame_stride)])
      artifacts['map_report'] = os.path.join(out_dir, 'map_report.csv')
      write_report_csv([output.report], artifacts['map_report'])
      logging.info(f'Free space: correct {output.report.correct_free:.3f} m3, '
                   f'incorrect {output.report.incorrect_free:.2f}%, '
                   f'mesh error {output.report.recon_error:.4f} m')
    if depth_reports:
      artifacts['depth_report'] = os.path.join(out_dir, 'depth_report.csv')
      write_report_csv(depth_reports + [average_reports(depth_reports)],
                       artifacts['depth_report'])

  artifacts['config'] = save_config(config, out_dir)
  summary = {
      'version': densemap.__version__,
      'seed': int(config.misc.seed),
      'mesh_seed': int(config.mesh.seed),
      'sensor': {k: getattr(pcfg.params, k) for k in pcfg.params.__dataclass_fields__},
      'rho': float(pcfg.params.rho if rho is None else rho),
      'completer': completer or pcfg.completer,
      'keep_every': int(pcfg.keep_every if keep_every is None else keep_every),
      'voxel_size': pcfg.voxel_size,
      'camera_order': pcfg.camera_order,
      'frames': len(range(0, len(frames), pcfg.frame_stride)),
      'rays': {'integrated': stats.rays_integrated, 'rejected': stats.rays_rejected,
               'sky': stats.rays_sky},
      'artifacts': dict(artifacts),
  }
  artifacts['summary'] = write_summary(summary, out_dir)
  return output


def _report_row(name, key, report: Optional[FreeSpaceReport]):
  row = {name: key}
  if report is None:
    row.update(recon_error=float('nan'), completeness_vol=float('nan'),
               correct_free=float('nan'), incorrect_free=float('nan'), incorrect_defined=False)
  else:
    row.update(report.as_row())
  return row


def _parse_rho(value):
  if isinstance(value, str) and value.lower() in ('inf', 'infinity', 'none'):
    return math.inf
  return float(value)


def _ablation_run(cfg_dict, rho, out_dir):
  from densemap.lib.utils import setup_logging
  cfg = OmegaConf.create(cfg_dict)
  setup_logging(cfg.misc.log_level)
  output = run_pipeline(cfg, out_dir, rho=rho, inject_corruption=True)
  return _report_row('rho', rho, output.report)


def run_ablation_rho(config, rho_list, out_dir=None):
  """One row per rho: mesh error, correct free volume, incorrect free %."""
  rhos = [_parse_rho(r) for r in (rho_list or [])]
  if not rhos:
    raise ValueError('ablation.rhos: empty rho list')
  PipelineConfig.from_config(config)
  out_dir = out_dir or config.misc.out_dir
  mkdir_p(out_dir)
  cfg_dict = OmegaConf.to_container(config, resolve=True)
  logging.info(f'===> Rho ablation over {rhos}')
  rows = Parallel(n_jobs=int(config.ablation.n_jobs))(
      delayed(_ablation_run)(cfg_dict, rho, os.path.join(out_dir, f'rho_{rho:g}'))
      for rho in tqdm(rhos, desc='rho'))
  path = os.path.join(out_dir, 'ablation_rho.csv')
  write_report_csv(rows, path)
  logging.info(f'Ablation written to {path}')
  return rows


def compare_inputs(config, out_dir=None):
  """Raw sparse, raw full-resolution and completed depth, evaluated on the same frames."""
  pcfg = PipelineConfig.from_config(config)
  out_dir = out_dir or config.misc.out_dir
  scene = None
  if config.data.scene and not config.data.scans_dir:
    scene = load_scene(config.data.scene)
  frames = load_frames(config, pcfg, scene)
  gt_cloud = load_gt_cloud(config, pcfg, scene)
  sparse_rings = int(math.ceil(pcfg.lidar.num_rings / pcfg.keep_every))
  variants = [
      (f'raw{sparse_rings}', pcfg.keep_every, 'raw'),
      (f'raw{pcfg.lidar.num_rings}', 1, 'raw'),
      ('completed', pcfg.keep_every, pcfg.completer),
  ]
  rows = []
  for name, keep_every, completer in variants:
    logging.info(f'===> Input configuration {name}')
    output = run_pipeline(config, os.path.join(out_dir, name), keep_every=keep_every,
                          completer=completer, scene=scene, frames=frames, gt_cloud=gt_cloud)
    rows.append(_report_row('input', name, output.report))
  path = os.path.join(out_dir, 'compare_inputs.csv')
  write_report_csv(rows, path)
  return rows

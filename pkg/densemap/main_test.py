import os

import pytest
from omegaconf import OmegaConf

from densemap.conftest import SMALL
from densemap.lib.metrics import read_report_csv
from densemap.lib.planner import load_path
from densemap.main import build_parser, load_config, main


def test_load_config_defaults():
  config = load_config()
  assert config.sensor.rho == 2.0
  assert config.map.voxel_size == 0.065
  assert config.completion.completer == 'linear'


def test_load_config_precedence(tmp_path):
  path = tmp_path / 'config.yaml'
  saved = OmegaConf.create({'sensor': {'rho': 3.0}, 'map': {'voxel_size': 0.1}})
  OmegaConf.save(saved, str(path))
  config = load_config(['sensor.rho=4.0'], str(path))
  assert config.sensor.rho == 4.0
  assert config.map.voxel_size == 0.1
  assert config.sensor.k_tau == 0.026


def test_load_config_missing_file(tmp_path):
  with pytest.raises(FileNotFoundError):
    load_config([], str(tmp_path / 'nope.yaml'))


def test_help_lists_config_keys():
  text = build_parser().format_help()
  assert 'sensor.rho = 2.0' in text
  assert 'planner.robot_radius = 0.3' in text


def test_missing_trajectory_reports_path(tmp_path, capsys):
  path = str(tmp_path / 'no_such_trajectory.txt')
  status = main(['run', f'data.trajectory={path}', f'misc.out_dir={tmp_path}'])
  assert status == 1
  out = capsys.readouterr().out
  assert 'Error:' in out
  assert path in out


def test_unknown_key_fails(capsys):
  assert main(['run', 'sensor.no_such_key=1']) == 1
  assert 'Error:' in capsys.readouterr().out


def test_unknown_completer_fails(tmp_path):
  assert main(['fuse', 'completion.completer=magic', f'misc.out_dir={tmp_path}']) == 1


@pytest.mark.slow
def test_synth_fuse_mesh_eval_plan(tmp_path):
  syn, run = str(tmp_path / 'synth'), str(tmp_path / 'run')
  assert main(['synth', '--out', syn] + SMALL) == 0
  assert os.path.isfile(os.path.join(syn, 'gt_cloud.ply'))
  assert os.path.isfile(os.path.join(syn, 'depth', '000002_forward.png'))

  recorded = [f'data.scans_dir={syn}/scans', f'data.trajectory={syn}/trajectory.txt']
  assert main(['fuse', '--out', run] + SMALL + recorded) == 0
  map_path = os.path.join(run, 'map.bin')
  assert os.path.isfile(map_path)

  mesh_path = str(tmp_path / 'mesh.ply')
  assert main(['mesh', '--map', map_path, '--out', mesh_path] + SMALL) == 0
  assert os.path.isfile(mesh_path)

  report_path = str(tmp_path / 'map_report.csv')
  assert main(['eval-map', '--map', map_path, '--gt-cloud', os.path.join(syn, 'gt_cloud.ply'),
               '--trajectory', os.path.join(syn, 'trajectory.txt'), '--mesh', mesh_path,
               '--out', report_path] + SMALL) == 0
  assert float(read_report_csv(report_path)[0]['correct_free']) > 0

  plan_dir = str(tmp_path / 'plan')
  status = main(['plan', '--map', map_path, '--out', plan_dir, 'planner.start=[0.0,0.0,1.2]',
                 'planner.goal=[0.5,0.5,1.2]', 'planner.max_iterations=500'] + SMALL)
  assert status in (0, 2)
  if status == 0:
    assert len(load_path(os.path.join(plan_dir, 'path.csv'))) >= 2


@pytest.mark.slow
def test_project_complete_eval_depth(tmp_path):
  syn = str(tmp_path / 'synth')
  assert main(['synth', '--out', syn] + SMALL) == 0
  sparse = str(tmp_path / 'sparse.png')
  assert main(['project', '--scan', os.path.join(syn, 'scans', '000000.ply'), '--out', sparse]
              + SMALL) == 0
  dense, sigma = str(tmp_path / 'dense.png'), str(tmp_path / 'sigma.png')
  assert main(['complete', '--sparse', sparse, '--dense', dense, '--sigma', sigma] + SMALL) == 0
  report_path = str(tmp_path / 'depth.csv')
  assert main(['eval-depth', '--dense', dense, '--sigma', sigma, '--gt',
               os.path.join(syn, 'depth', '000000_forward.png'), '--out', report_path]
              + SMALL) == 0
  row = read_report_csv(report_path)[0]
  assert float(row['mae']) < 0.5

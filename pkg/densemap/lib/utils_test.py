import logging

from omegaconf import OmegaConf

from densemap.lib.utils import (AverageMeter, Timer, mkdir_p, read_summary, save_config,
                                setup_logging, write_summary)


def test_summary_roundtrip(tmp_path):
  path = write_summary({'seed': 0, 'camera_order': ['left', 'forward']}, str(tmp_path / 'run'))
  assert read_summary(path) == {'seed': 0, 'camera_order': ['left', 'forward']}


def test_save_config(tmp_path):
  path = save_config(OmegaConf.create({'sensor': {'rho': 2.0}}), str(tmp_path / 'run'))
  assert OmegaConf.load(path).sensor.rho == 2.0


def test_mkdir_p_existing(tmp_path):
  mkdir_p(str(tmp_path / 'a' / 'b'))
  mkdir_p(str(tmp_path / 'a' / 'b'))
  assert (tmp_path / 'a' / 'b').is_dir()


def test_meters():
  meter = AverageMeter()
  meter.update(1.0)
  meter.update(4.0, n=2)
  assert meter.avg == 3.0
  timer = Timer()
  timer.tic()
  timer.toc()
  assert timer.calls == 1 and timer.average_time >= 0


def test_setup_logging_writes_stdout(capsys):
  setup_logging('INFO')
  logging.info('===> Loading data')
  assert '===> Loading data' in capsys.readouterr().out

import errno
import json
import logging
import os
import sys
import time

from omegaconf import OmegaConf

LOG_FORMAT = '%(asctime)s %(message)s'
LOG_DATEFMT = '%m/%d %H:%M:%S'


def setup_logging(level='INFO'):
  ch = logging.StreamHandler(sys.stdout)
  logging.getLogger().setLevel(level)
  logging.basicConfig(format=LOG_FORMAT, datefmt=LOG_DATEFMT, handlers=[ch], force=True)
  logging.getLogger().setLevel(level)


class WithTimer(object):
  """Timer for with statement."""

  def __init__(self, name=None):
    self.name = name

  def __enter__(self):
    self.tstart = time.time()
    return self

  def __exit__(self, type, value, traceback):
    self.elapsed = time.time() - self.tstart
    if self.name:
      logging.info(f'[{self.name}] Elapsed: {self.elapsed:.3f}s')
    else:
      logging.info(f'Elapsed: {self.elapsed:.3f}s')


class Timer(object):
  """A simple timer."""

  def __init__(self):
    self.reset()

  def reset(self):
    self.total_time = 0.
    self.calls = 0
    self.start_time = 0.
    self.diff = 0.
    self.average_time = 0.

  def tic(self):
    self.start_time = time.time()

  def toc(self, average=True):
    self.diff = time.time() - self.start_time
    self.total_time += self.diff
    self.calls += 1
    self.average_time = self.total_time / self.calls
    return self.average_time if average else self.diff


class AverageMeter(object):
  """Computes and stores the average and current value"""

  def __init__(self):
    self.reset()

  def reset(self):
    self.val = 0
    self.avg = 0
    self.sum = 0
    self.count = 0

  def update(self, val, n=1):
    self.val = val
    self.sum += val * n
    self.count += n
    self.avg = self.sum / self.count


def mkdir_p(path):
  try:
    os.makedirs(path)
  except OSError as exc:
    if exc.errno == errno.EEXIST and os.path.isdir(path):
      pass
    else:
      raise


def save_config(config, out_dir):
  mkdir_p(out_dir)
  path = os.path.join(out_dir, 'config.yaml')
  OmegaConf.save(config, path)
  return path


def write_summary(summary, out_dir, filename='summary.json'):
  """Run record: versions, seeds, parameters and the artifacts written."""
  mkdir_p(out_dir)
  path = os.path.join(out_dir, filename)
  with open(path, 'w') as f:
    json.dump(summary, f, indent=2, sort_keys=True)
  logging.info(f'Summary written to {path}')
  return path


def read_summary(path):
  with open(path) as f:
    return json.load(f)

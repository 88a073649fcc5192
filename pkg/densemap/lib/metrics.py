"""Depth-prediction metrics.

Errors are computed over pixels valid in both prediction and ground truth. iMAE is reported
in 1/km, REL and delta in percent.
"""

import csv
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np

from densemap.lib.geometry import DepthImage
from densemap.lib.pc_utils import _make_parent
from densemap.lib.utils import AverageMeter

DELTA_THRESHOLDS = (1.05, 1.10, 1.25)
AUSE_FRACTIONS = np.arange(100) / 100.0
KM = 1000.0


@dataclass
class DepthMetricReport:
  rmse: float
  mae: float
  rel: float
  imae: float
  delta: Dict[float, float] = field(default_factory=dict)
  l_unc: float = float('nan')
  ause: float = float('nan')

  def as_row(self):
    row = {k: v for k, v in asdict(self).items() if k != 'delta'}
    for t in sorted(self.delta):
      row[f'delta_{t:.2f}'] = self.delta[t]
    return row


def _common(pred: DepthImage, gt: DepthImage):
  if pred.depth.shape != gt.depth.shape:
    raise ValueError(f'Dimension mismatch: prediction {pred.depth.shape}, gt {gt.depth.shape}')
  mask = pred.valid_mask & gt.valid_mask
  if not mask.any():
    raise ValueError('No pixels valid in both prediction and ground truth')
  return mask


def uncertainty_loss(err, sigma):
  """mean(err^2 / sigma^2 + log sigma^2)."""
  var = np.asarray(sigma, dtype=np.float64)**2
  return float(np.mean(np.asarray(err)**2 / var + np.log(var)))


def _rmse_curve(err, order):
  """RMSE of the pixels left after removing the first floor(x N) entries of `order`."""
  n = len(err)
  sq = (err**2)[order]
  # Suffix sums: remaining pixels after k removals are order[k:].
  tail = np.cumsum(sq[::-1])[::-1]
  removed = np.floor(AUSE_FRACTIONS * n).astype(np.int64)
  return np.sqrt(tail[removed] / (n - removed))


def sparsification_curves(err, sigma):
  err = np.abs(np.asarray(err, dtype=np.float64).ravel())
  sigma = np.asarray(sigma, dtype=np.float64).ravel()
  by_sigma = np.argsort(-sigma, kind='stable')
  by_error = np.argsort(-err, kind='stable')
  curve, oracle = _rmse_curve(err, by_sigma), _rmse_curve(err, by_error)
  base = curve[0]
  if base == 0:
    return np.zeros_like(curve), np.zeros_like(oracle)
  return curve / base, oracle / base


def sparsify_ause(pred, sigma, gt):
  """Area between the sigma-ranked and error-ranked sparsification curves (RMSE based)."""
  pred, sigma, gt = (np.asarray(a, dtype=np.float64).ravel() for a in (pred, sigma, gt))
  if len(pred) == 0:
    raise ValueError('AUSE needs at least one pixel')
  if not np.isfinite(sigma).all():
    raise ValueError('AUSE needs sigma on every evaluated pixel')
  curve, oracle = sparsification_curves(pred - gt, sigma)
  return float(np.mean(curve - oracle))


def depth_metrics(pred: DepthImage, gt: DepthImage) -> DepthMetricReport:
  mask = _common(pred, gt)
  f, y = pred.depth[mask], gt.depth[mask]
  err = f - y
  ratio = np.maximum(f / y, y / f)
  report = DepthMetricReport(
      rmse=float(np.sqrt(np.mean(err**2))),
      mae=float(np.mean(np.abs(err))),
      rel=float(100.0 * np.mean(np.abs(err) / y)),
      imae=float(KM * np.mean(np.abs(1.0 / y - 1.0 / f))),
      delta={t: float(100.0 * np.mean(ratio < t)) for t in DELTA_THRESHOLDS})
  if pred.sigma is not None:
    sigma = pred.sigma[mask]
    if (sigma > 0).all():
      report.l_unc = uncertainty_loss(err, sigma)
    else:
      logging.warning('Zero sigma on evaluated pixels, L_unc not reported')
    report.ause = sparsify_ause(f, sigma, y)
  return report


def average_reports(reports: List[DepthMetricReport]) -> DepthMetricReport:
  """Per-image metrics averaged over images."""
  if not reports:
    raise ValueError('No reports to average')
  meters = {k: AverageMeter() for k in reports[0].as_row()}
  for r in reports:
    for k, v in r.as_row().items():
      meters[k].update(v)
  avg = {k: m.avg for k, m in meters.items()}
  return DepthMetricReport(avg['rmse'], avg['mae'], avg['rel'], avg['imae'],
                           {t: avg[f'delta_{t:.2f}'] for t in reports[0].delta}, avg['l_unc'],
                           avg['ause'])


def write_report_csv(rows, filepath):
  """One row per frame / map; columns are the report field names."""
  rows = [r.as_row() if hasattr(r, 'as_row') else dict(r) for r in rows]
  if not rows:
    raise ValueError('No rows to write')
  _make_parent(filepath)
  with open(filepath, 'w', newline='') as f:
    writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()), lineterminator='\n')
    writer.writeheader()
    for row in rows:
      writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                       for k, v in row.items()})


def read_report_csv(filepath):
  if not os.path.isfile(filepath):
    raise FileNotFoundError(f'File not found: {filepath}')
  with open(filepath, newline='') as f:
    return list(csv.DictReader(f))


def format_report(row, title=None):
  """Human-readable summary of one report row."""
  row = row.as_row() if hasattr(row, 'as_row') else row
  lines = [title] if title else []
  width = max(len(k) for k in row)
  for k, v in row.items():
    lines.append(f'  {k:<{width}} : {v:.4f}' if isinstance(v, float) else f'  {k:<{width}} : {v}')
  return '\n'.join(lines)

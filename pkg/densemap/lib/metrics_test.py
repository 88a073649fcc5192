import numpy as np
import pytest

from densemap.lib.geometry import CameraIntrinsics, DepthImage
from densemap.lib.metrics import (average_reports, depth_metrics, format_report, read_report_csv,
                                  sparsification_curves, sparsify_ause, uncertainty_loss,
                                  write_report_csv)

INTR = CameraIntrinsics(10., 10., 1., 1., 2, 2)
GT = np.array([[1., 2.], [4., 8.]])


def _pred(depth, sigma=None):
  return DepthImage(INTR, np.asarray(depth, dtype=np.float64), sigma)


def test_perfect_prediction():
  report = depth_metrics(_pred(GT, np.full((2, 2), 0.1)), _pred(GT))
  assert report.rmse == 0.
  assert report.mae == 0.
  assert report.imae == 0.
  assert all(v == 100. for v in report.delta.values())
  assert report.ause == 0.


def test_constant_offset():
  report = depth_metrics(_pred(GT + 0.1), _pred(GT))
  assert report.rmse == pytest.approx(0.1)
  assert report.mae == pytest.approx(0.1)
  assert report.rel == pytest.approx(100. * np.mean(0.1 / GT))
  assert report.imae == pytest.approx(1000. * np.mean(1 / GT - 1 / (GT + 0.1)))
  assert np.isnan(report.l_unc)


def test_delta_is_strict_and_two_sided():
  gt = np.ones((2, 2))
  pred = np.array([[1.05, 1 / 1.2], [1.0, 1.3]])
  report = depth_metrics(_pred(pred), _pred(gt))
  assert report.delta[1.05] == pytest.approx(25.)
  assert report.delta[1.10] == pytest.approx(50.)
  assert report.delta[1.25] == pytest.approx(75.)


def test_only_common_pixels():
  pred = GT.copy()
  pred[0, 0] = 100.
  gt = GT.copy()
  gt[0, 0] = np.nan
  assert depth_metrics(_pred(pred), _pred(gt)).rmse == 0.
  with pytest.raises(ValueError):
    depth_metrics(_pred(np.full((2, 2), np.nan)), _pred(GT))


def test_uncertainty_loss():
  err = np.array([0.1, -0.1])
  assert uncertainty_loss(err, [0.1, 0.1]) == pytest.approx(1. + np.log(0.01))
  report = depth_metrics(_pred(GT + 0.1, np.full((2, 2), 0.1)), _pred(GT))
  assert report.l_unc == pytest.approx(1. + np.log(0.01))


def test_ause_zero_for_oracle_ranking():
  rng = np.random.default_rng(0)
  gt = rng.uniform(1., 10., 10000)
  err = rng.normal(0., 0.3, 10000)
  assert sparsify_ause(gt + err, np.abs(err), gt) == pytest.approx(0., abs=1e-12)
  assert sparsify_ause(gt + err, rng.uniform(0.1, 1., 10000), gt) > 0.


def test_sparsification_curves_normalised():
  err = np.array([3., 1., 2., 0.5])
  curve, oracle = sparsification_curves(err, [0.1, 0.2, 0.3, 0.4])
  assert curve[0] == 1. and oracle[0] == 1.
  assert len(curve) == 100
  assert np.all(oracle <= curve + 1e-12)


def test_report_csv(tmp_path):
  reports = [depth_metrics(_pred(GT + d, np.full((2, 2), 0.2)), _pred(GT)) for d in (0.1, 0.3)]
  avg = average_reports(reports)
  assert avg.rmse == pytest.approx(0.2)
  path = str(tmp_path / 'report.csv')
  write_report_csv(reports + [avg], path)
  rows = read_report_csv(path)
  assert len(rows) == 3
  assert float(rows[0]['rmse']) == reports[0].rmse
  assert 'delta_1.25' in rows[0]
  assert 'rmse' in format_report(avg, 'Depth')
  with pytest.raises(ValueError):
    write_report_csv([], path)


def test_two_value_example():
  gt = np.full((2, 2), 2.0)
  report = depth_metrics(_pred(np.full((2, 2), 2.2)), _pred(gt))
  assert report.mae == pytest.approx(0.2, abs=1e-6)
  assert report.rel == pytest.approx(10., abs=1e-6)
  assert report.imae == pytest.approx(1000. * (1 / 2 - 1 / 2.2), abs=1e-6)
  assert report.imae == pytest.approx(45.45, abs=0.01)
  assert report.delta[1.05] == 0.
  assert report.delta[1.25] == 100.


def test_single_pixel_unit_sigma():
  gt = np.full((2, 2), np.nan)
  gt[0, 0] = 2.
  sigma = np.full((2, 2), np.nan)
  sigma[0, 0] = 1.
  report = depth_metrics(_pred(gt, sigma), _pred(gt))
  assert report.l_unc == 0.


def test_ause_reversed_ranking():
  gt = np.full(4, 10.)
  err = np.array([1., 2., 3., 4.])
  sigma = np.array([4., 3., 2., 1.])
  curve = [np.sqrt(29 / 3), np.sqrt(25 / 2), 4.]
  oracle = [np.sqrt(14 / 3), np.sqrt(5 / 2), 1.]
  expected = 0.25 * sum(c - o for c, o in zip(curve, oracle)) / np.sqrt(7.5)
  assert sparsify_ause(gt + err, sigma, gt) == pytest.approx(expected, abs=1e-12)


def test_random_sigma_beats_inverted_ranking():
  rng = np.random.default_rng(3)
  gt = rng.uniform(1., 10., 10000)
  err = rng.normal(0., 0.3, 10000)
  random = sparsify_ause(gt + err, rng.uniform(0.1, 1., 10000), gt)
  inverted = sparsify_ause(gt + err, 1. / (np.abs(err) + 1e-6), gt)
  assert 0. < random < inverted


@pytest.mark.parametrize('scale', [0.5, 3.0])
def test_metric_scaling(scale):
  rng = np.random.default_rng(4)
  shape = (40, 50)
  intr = CameraIntrinsics(40., 40., 24.5, 19.5, 50, 40)
  gt = rng.uniform(1., 20., shape)
  pred = gt * rng.uniform(0.8, 1.25, shape)
  sigma = rng.uniform(0.05, 1., shape)
  base = depth_metrics(DepthImage(intr, pred, sigma), DepthImage(intr, gt))
  scaled = depth_metrics(DepthImage(intr, scale * pred, scale * sigma),
                         DepthImage(intr, scale * gt))
  assert scaled.rel == pytest.approx(base.rel, rel=1e-9)
  assert scaled.delta == base.delta
  assert scaled.ause == pytest.approx(base.ause, rel=1e-9)
  assert scaled.rmse == pytest.approx(scale * base.rmse, rel=1e-9)
  assert scaled.mae == pytest.approx(scale * base.mae, rel=1e-9)
  assert scaled.imae == pytest.approx(base.imae / scale, rel=1e-9)

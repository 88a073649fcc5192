import numpy as np
import pytest

from densemap.lib.sensor_model import (SensorModelParams, log_odds_update, reject_prediction,
                                       sigma_of_depth)

PARAMS = SensorModelParams()


def test_sigma_clamped():
  assert sigma_of_depth(PARAMS, 0.5) == pytest.approx(0.06)
  assert sigma_of_depth(PARAMS, 2.0) == pytest.approx(0.104)
  assert sigma_of_depth(PARAMS, 10.0) == pytest.approx(0.20)
  assert np.allclose(sigma_of_depth(PARAMS, [0.5, 10.]), [0.06, 0.2])
  with pytest.raises(ValueError):
    sigma_of_depth(PARAMS, 0.)


def test_log_odds_pieces():
  # d_r = 10: sigma 0.2, slope 5 / 0.6, tau 0.26
  assert log_odds_update(PARAMS, -1.0, 10.) == pytest.approx(-5.)
  assert log_odds_update(PARAMS, -0.6, 10.) == pytest.approx(-5.)
  assert log_odds_update(PARAMS, 0.0, 10.) == pytest.approx(0.)
  assert log_odds_update(PARAMS, 0.1, 10.) == pytest.approx(0.1 * 5 / 0.6)
  assert log_odds_update(PARAMS, 0.2, 10.) == pytest.approx(0.13 * 5 / 0.6)
  assert log_odds_update(PARAMS, 0.26, 10.) == pytest.approx(0.13 * 5 / 0.6)
  assert log_odds_update(PARAMS, 0.3, 10.) is None


def test_log_odds_continuous_and_monotone():
  d = np.linspace(-1., 0.25, 2001)
  values = log_odds_update(PARAMS, d, 10.)
  assert np.all(np.diff(values) >= -1e-12)
  assert np.max(np.abs(np.diff(values))) < 0.01
  assert values.max() <= PARAMS.l_max


def test_log_odds_sigma_override():
  assert log_odds_update(PARAMS, -0.35, 10., sigma=0.1) == pytest.approx(-5.)
  assert log_odds_update(PARAMS, -0.35, 10.) == pytest.approx(-0.35 * 5 / 0.6)


def test_reject_prediction_strict():
  # sensor sigma at 10 m is 0.2, rho 2 -> threshold 0.4
  assert not reject_prediction(PARAMS, 10., 0.4)
  assert reject_prediction(PARAMS, 10., 0.41)
  assert reject_prediction(PARAMS, 10., 0.3, rho=1.0)
  assert not reject_prediction(PARAMS, 10., 100., rho=np.inf)
  assert reject_prediction(PARAMS, np.array([10., 10.]), np.array([0.1, 0.5])).tolist() == [
      False, True]


def test_params_validation():
  with pytest.raises(ValueError):
    SensorModelParams(l_min=1.)
  with pytest.raises(ValueError):
    SensorModelParams(sigma_min=0.3)
  with pytest.raises(ValueError):
    SensorModelParams(rho=0.)
  assert PARAMS.replace(rho=4.).rho == 4.
  assert PARAMS.l_max == 5.


SIGMA_KNOTS = (0.06 / 0.052, 0.2 / 0.052)


def test_closed_form_values():
  for d_r, expected in [(0.5, .06), (SIGMA_KNOTS[0], .06), (2., .104), (SIGMA_KNOTS[1], .2),
                        (20., .2)]:
    assert sigma_of_depth(PARAMS, d_r) == pytest.approx(expected, abs=1e-9)
  # d_r = 2: sigma 0.104, slope 5 / 0.312, tau 0.052
  slope = 5 / 0.312
  for d, expected in [(-1., -5.), (-0.312, -5.), (-0.1, -0.1 * slope), (0., 0.),
                      (0.026, 0.026 * slope), (0.04, 0.026 * slope), (0.052, 0.026 * slope)]:
    assert log_odds_update(PARAMS, d, 2.) == pytest.approx(expected, abs=1e-9)


def test_continuity_at_knots():
  sigma = lambda d: sigma_of_depth(PARAMS, d)
  odds = lambda d: log_odds_update(PARAMS, d, 2.)
  for f, knot in [(sigma, SIGMA_KNOTS[0]), (sigma, SIGMA_KNOTS[1]), (odds, -0.312),
                  (odds, 0.026)]:
    eps = 1e-2
    while eps > 1e-10:
      assert abs(f(knot + eps) - f(knot - eps)) <= 40 * eps
      eps /= 2

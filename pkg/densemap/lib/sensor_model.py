"""Measurement models for lidar and completed depth.

  * sigma_of_depth: linear, clamped depth uncertainty;
  * log_odds_update: piecewise-linear inverse sensor model along a ray;
  * reject_prediction: the rho gate on predicted uncertainty.

`d` in log_odds_update is the signed distance behind the measured surface,
d = range_along_ray - d_r, so the free-space saturation case reads d <= -3 sigma. This is
the only reading that keeps the function continuous and zero at the surface.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SensorModelParams:
  l_min: float = -5.0
  k_tau: float = 0.026
  k_sigma: float = 0.052
  sigma_min: float = 0.06
  sigma_max: float = 0.20
  max_range: float = 50.0
  rho: float = 2.0
  sky_depth: float = 256.0

  def __post_init__(self):
    checks = [
        ('l_min', self.l_min < 0),
        ('k_tau', self.k_tau > 0),
        ('k_sigma', self.k_sigma > 0),
        ('sigma_min', 0 < self.sigma_min < self.sigma_max),
        ('max_range', self.max_range > 0),
        ('rho', self.rho > 0),
        ('sky_depth', self.sky_depth > 0),
    ]
    for key, ok in checks:
      if not ok:
        raise ValueError(f'Invalid sensor model parameter {key}={getattr(self, key)}')

  @property
  def l_max(self):
    return -self.l_min

  @classmethod
  def from_config(cls, cfg):
    keys = cls.__dataclass_fields__.keys()
    return cls(**{k: float(cfg[k]) for k in keys if k in cfg})

  def replace(self, **kwargs):
    values = {k: getattr(self, k) for k in self.__dataclass_fields__}
    values.update(kwargs)
    return SensorModelParams(**values)


def _as_result(value):
  """0-d arrays go back to Python scalars, NaN means "absent"."""
  if np.ndim(value) == 0:
    value = float(value)
    return None if np.isnan(value) else value
  return value


def sigma_of_depth(params: SensorModelParams, d_r):
  d_r = np.asarray(d_r, dtype=np.float64)
  if np.any(~(d_r > 0)):
    raise ValueError('Depth must be positive')
  sigma = np.clip(params.k_sigma * d_r, params.sigma_min, params.sigma_max)
  return float(sigma) if sigma.ndim == 0 else sigma


def log_odds_update(params: SensorModelParams, d, d_r, sigma=None):
  """Log-odds increment at signed distance d behind a surface measured at range d_r.

  `sigma` overrides the depth-dependent model (predicted pixels carry their own).
  Returns None (scalar) or NaN (array) where no update applies.
  """
  d = np.asarray(d, dtype=np.float64)
  d_r = np.asarray(d_r, dtype=np.float64)
  if sigma is None:
    sigma = sigma_of_depth(params, d_r)
  sigma = np.asarray(sigma, dtype=np.float64)
  slope = -params.l_min / (3 * sigma)
  half_tau = params.k_tau * d_r / 2
  out = np.where(d <= -3 * sigma, params.l_min,
                 np.where(d <= half_tau, slope * d, slope * half_tau))
  out = np.where(d > params.k_tau * d_r, np.nan, out)
  return _as_result(out)


def reject_prediction(params: SensorModelParams, d_p, sigma_p, rho=None):
  """True where the predicted sigma exceeds rho times the sensor sigma (strict)."""
  rho = params.rho if rho is None else rho
  reject = np.asarray(sigma_p) > rho * np.asarray(sigma_of_depth(params, d_p))
  return bool(reject) if reject.ndim == 0 else reject

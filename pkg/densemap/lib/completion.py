"""Depth completion: sparse lidar depth -> dense depth with per-pixel uncertainty.

Completers share one interface so the mapping stack consumes identical data whether depth
comes from the in-tree interpolation baseline or from a network run elsewhere.
"""

import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np
from scipy.interpolate import LinearNDInterpolator
from scipy.ndimage import distance_transform_edt
from scipy.spatial import Delaunay, QhullError

from densemap.lib.geometry import CameraIntrinsics, DepthImage
from densemap.lib.pc_utils import DEPTH_SCALE, read_depth_png, write_depth_png
from densemap.lib.sensor_model import SensorModelParams, sigma_of_depth


class InsufficientSupportError(ValueError):
  pass


class SourceMask(IntEnum):
  INVALID = 0
  RAW = 1
  PREDICTED = 2


@dataclass(frozen=True, eq=False)
class CompletionResult:
  dense: DepthImage
  source_mask: np.ndarray
  sky_mask: Optional[np.ndarray] = None

  def __post_init__(self):
    if self.dense.sigma is None:
      raise ValueError('Completion result needs a sigma grid')
    source = np.array(self.source_mask, dtype=np.int8)
    if source.shape != self.dense.depth.shape:
      raise ValueError(f'Source mask shape {source.shape} does not match {self.dense.depth.shape}')
    if not np.array_equal(source != SourceMask.INVALID, self.dense.valid_mask):
      raise ValueError('Source mask must mark exactly the invalid depth pixels as invalid')
    source.setflags(write=False)
    object.__setattr__(self, 'source_mask', source)
    sky = np.zeros(source.shape, bool) if self.sky_mask is None else np.array(self.sky_mask, bool)
    sky &= self.dense.valid_mask
    sky.setflags(write=False)
    object.__setattr__(self, 'sky_mask', sky)

  @property
  def raw_mask(self):
    return self.source_mask == SourceMask.RAW

  @property
  def predicted_mask(self):
    return self.source_mask == SourceMask.PREDICTED


def heuristic_sigma(dense, sparse: DepthImage, params: SensorModelParams, k_d=0.01):
  """Uncertainty that grows with depth and with image distance from the nearest raw pixel.

  Raw pixels get sigma(d); predicted ones max(sigma(d), k_d * r_near * d), r_near in pixels.
  """
  dense = np.asarray(dense, dtype=np.float64)
  raw = sparse.valid_mask
  valid = np.isfinite(dense)
  sigma = np.full(dense.shape, np.nan)
  sigma[valid] = sigma_of_depth(params, dense[valid])
  pred = valid & ~raw
  if pred.any():
    r_near = distance_transform_edt(~raw) if raw.any() else np.full(dense.shape, np.inf)
    sigma[pred] = np.maximum(sigma[pred], k_d * r_near[pred] * dense[pred])
  return sigma


def complete_linear(sparse: DepthImage, image=None, params=None, k_d=0.01) -> CompletionResult:
  """Barycentric interpolation over a Delaunay triangulation of the valid pixels.

  Pixels outside the convex hull stay invalid; raw pixels pass through unchanged. `image`
  (grayscale guidance) is accepted for interface parity and not used.
  """
  params = params or SensorModelParams()
  mask = sparse.valid_mask
  n = int(mask.sum())
  if n < 3:
    raise InsufficientSupportError(f'insufficient support: {n} valid pixels')
  vs, us = np.nonzero(mask)
  pts = np.stack([us, vs], 1).astype(np.float64)
  if np.linalg.matrix_rank(pts - pts.mean(0)) < 2:
    raise InsufficientSupportError('insufficient support: valid pixels are collinear')
  try:
    tri = Delaunay(pts)
  except QhullError as e:
    raise InsufficientSupportError(f'insufficient support: {e}')

  interp = LinearNDInterpolator(tri, sparse.depth[mask], fill_value=np.nan)
  u, v = sparse.intrinsics.pixel_grid()
  dense = interp(u, v)
  dense[mask] = sparse.depth[mask]
  source = np.where(mask, SourceMask.RAW,
                    np.where(np.isfinite(dense), SourceMask.PREDICTED, SourceMask.INVALID))
  sigma = heuristic_sigma(dense, sparse, params, k_d)
  return CompletionResult(DepthImage(sparse.intrinsics, dense, sigma, sparse.frame_pose), source)


def passthrough(sparse: DepthImage, params=None) -> CompletionResult:
  """No completion: raw pixels only, with the sensor-model sigma."""
  params = params or SensorModelParams()
  mask = sparse.valid_mask
  sigma = np.full(mask.shape, np.nan)
  sigma[mask] = sigma_of_depth(params, sparse.depth[mask])
  source = np.where(mask, SourceMask.RAW, SourceMask.INVALID)
  return CompletionResult(sparse.with_sigma(sigma), source)


def load_external(dense_path, sigma_path, intr: CameraIntrinsics, sky_depth=256.0,
                  frame_pose=None) -> CompletionResult:
  """Read a dense depth / sigma PNG pair produced elsewhere (raw / 256 metres)."""
  depth = read_depth_png(dense_path, saturated_value=sky_depth)
  sigma = read_depth_png(sigma_path)
  if depth.shape != sigma.shape:
    raise ValueError(f'Dimension mismatch: {dense_path} is {depth.shape}, '
                     f'{sigma_path} is {sigma.shape}')
  if depth.shape != intr.shape:
    raise ValueError(f'Dimension mismatch: {dense_path} is {depth.shape}, camera is {intr.shape}')
  valid = np.isfinite(depth)
  # A zero sigma on a valid pixel is below the codec resolution.
  sigma = np.where(valid, np.nan_to_num(sigma, nan=1.0 / DEPTH_SCALE), np.nan)
  source = np.where(valid, SourceMask.PREDICTED, SourceMask.INVALID)
  dense = DepthImage(intr, depth, sigma, frame_pose) if frame_pose else DepthImage(
      intr, depth, sigma)
  return CompletionResult(dense, source)


def write_completion(result: CompletionResult, dense_path, sigma_path):
  write_depth_png(dense_path, result.dense.depth)
  write_depth_png(sigma_path, result.dense.sigma)


def apply_sky_convention(result: CompletionResult, sky_depth=256.0) -> CompletionResult:
  """Flag pixels at or beyond the sky depth; they integrate as free-space-only rays."""
  if not sky_depth > 0:
    raise ValueError(f'sky_depth must be positive, got {sky_depth}')
  depth = result.dense.depth
  sky = np.zeros(depth.shape, bool)
  valid = result.dense.valid_mask
  sky[valid] = depth[valid] >= sky_depth
  return CompletionResult(result.dense, result.source_mask, sky | result.sky_mask)


def corrupt_predictions(result: CompletionResult, params: SensorModelParams, fraction,
                        depth_offset, sigma_ratio=(1.0, 8.0), patch=8, seed=0):
  """Push square patches of predicted pixels behind the truth and inflate their sigma.

  The image is tiled into patch x patch blocks and `fraction` of the blocks holding predicted
  pixels are corrupted. Each block draws one ratio r log-uniformly from `sigma_ratio`; its
  pixels get sigma = r * sigma_of_depth(corrupted depth), so the rho gate rejects the block
  exactly when r > rho. Used by the rejection ablation.
  """
  lo, hi = sigma_ratio
  if not 0 < lo <= hi:
    raise ValueError(f'Invalid corruption sigma ratio range {sigma_ratio}')
  if patch < 1:
    raise ValueError(f'Corruption patch must be at least one pixel, got {patch}')
  rng = np.random.default_rng(seed)
  pred = result.predicted_mask & ~result.sky_mask
  rows, cols = np.indices(pred.shape)
  block = (rows // patch) * (-(-pred.shape[1] // patch)) + cols // patch
  candidates = np.unique(block[pred])
  chosen = np.sort(rng.choice(candidates, size=int(round(fraction * len(candidates))),
                              replace=False))
  ratios = np.exp(rng.uniform(np.log(lo), np.log(hi), len(chosen)))

  depth = result.dense.depth.copy()
  sigma = result.dense.sigma.copy()
  hit = pred & np.isin(block, chosen)
  depth[hit] += depth_offset
  sigma[hit] = (ratios[np.searchsorted(chosen, block[hit])] *
                sigma_of_depth(params, depth[hit]))
  dense = DepthImage(result.dense.intrinsics, depth, sigma, result.dense.frame_pose)
  return CompletionResult(dense, result.source_mask, result.sky_mask)


class Completer(ABC):

  def __init__(self, params: SensorModelParams, config=None):
    self.params = params
    self.config = config

  @abstractmethod
  def complete(self, sparse: DepthImage, image=None, frame_id=None) -> CompletionResult:
    raise NotImplementedError

  def __call__(self, sparse, image=None, frame_id=None):
    result = self.complete(sparse, image, frame_id)
    return apply_sky_convention(result, self.params.sky_depth)


class LinearCompleter(Completer):

  def complete(self, sparse, image=None, frame_id=None):
    k_d = self.config.k_d if self.config is not None else 0.01
    return complete_linear(sparse, image, self.params, k_d)


class RawCompleter(Completer):
  """Sparse input mapped as-is (the raw lidar baselines)."""

  def complete(self, sparse, image=None, frame_id=None):
    return passthrough(sparse, self.params)


class ExternalCompleter(Completer):
  """Reads `<dense_dir>/<frame_id>.png` and `<sigma_dir>/<frame_id>.png`."""

  def complete(self, sparse, image=None, frame_id=None):
    if frame_id is None:
      raise ValueError('External completion needs a frame id')
    name = f'{frame_id}.png'
    dense_path = os.path.join(self.config.external_dense_dir, name)
    sigma_path = os.path.join(self.config.external_sigma_dir, name)
    logging.debug(f'Loading external completion {dense_path}')
    return load_external(dense_path, sigma_path, sparse.intrinsics, self.params.sky_depth,
                         sparse.frame_pose)


COMPLETERS = {'linear': LinearCompleter, 'external': ExternalCompleter, 'raw': RawCompleter}


def load_completer(name):
  if name not in COMPLETERS:
    logging.info('Invalid completer. Options are:')
    for key in COMPLETERS:
      logging.info(f'\t* {key}')
    raise ValueError(f'Completer {name} not defined')
  return COMPLETERS[name]

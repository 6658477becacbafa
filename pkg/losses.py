"""Segmentation losses with analytical gradients w.r.t. the probability volume.

Every loss returns a LossResult whose grad has the prediction's dims. None
of them rely on autodiff: the training loop feeds `grad` straight into the
network's manual backward pass.
"""
import math
from dataclasses import dataclass, field

import numpy as np

import commons
from filtering import BeFilter, be_filter_adjoint, be_filter_apply
from volume import Volume, check_binary, check_same_dims, l2_norm


DICE_SMOOTH = 1e-7


class LossInputError(ValueError):
  pass


class LossWeightsError(ValueError):
  pass


@dataclass(frozen=True)
class LossResult:
  value: float
  grad: Volume
  # unweighted component values of a composite loss
  parts: dict = field(default_factory=dict, compare=False)

  def __post_init__(self):
    if not math.isfinite(self.value):
      raise LossInputError("loss value is not finite: {}".format(self.value))


@dataclass(frozen=True)
class LossWeights:
  lambda1: float = 1.0
  lambda2: float = 1000.0

  def __post_init__(self):
    if not (self.lambda1 >= 0 and self.lambda2 >= 0):
      raise LossWeightsError("loss weights must be nonnegative, got {}, {}".format(self.lambda1, self.lambda2))
    if self.lambda2 > 0 and self.lambda1 == 0:
      # the Laplacian response is zero on any constant region, so without Dice
      # nothing separates a filled interior from an empty one
      raise LossWeightsError("boundary enhancement needs a positive Dice weight (lambda1 > 0)")


def _check_pair(pred, target):
  check_same_dims(pred, target)
  check_binary(target, "target")


def _check_probs(pred):
  p = pred.data
  if np.any(p < 0.0) or np.any(p > 1.0):
    raise LossInputError("prediction must hold probabilities in [0, 1]")


def soft_dice(pred, target, eps=DICE_SMOOTH):
  """1 - (2 sum(p g) + eps) / (sum(p^2) + sum(g^2) + eps)"""
  _check_pair(pred, target)
  _check_probs(pred)
  p = pred.data
  g = target.data
  num = 2.0 * np.dot(p.ravel(), g.ravel()) + eps
  den = np.dot(p.ravel(), p.ravel()) + np.dot(g.ravel(), g.ravel()) + eps
  value = 1.0 - num / den
  grad = -(2.0 * g * den - 2.0 * p * num) / (den * den)
  return LossResult(float(value), pred.with_data(grad))


def boundary_enhancement(pred, target, f=None):
  """||L(pred) - L(target)||_2, computed as ||L(pred - target)||_2."""
  f = f or BeFilter.create()
  _check_pair(pred, target)
  r = be_filter_apply(f, pred.with_data(pred.data - target.data))
  norm = l2_norm(r)
  if norm == 0.0:
    # subgradient at the kink
    return LossResult(0.0, pred.with_data(np.zeros_like(pred.data)))
  grad = be_filter_adjoint(f, r)
  return LossResult(norm, grad.with_data(grad.data / norm))


def combined_loss(pred, target, w=None, f=None):
  w = w or LossWeights()
  dice = soft_dice(pred, target)
  if w.lambda2 == 0.0:
    return LossResult(w.lambda1 * dice.value, pred.with_data(w.lambda1 * dice.grad.data), {"dice": dice.value})
  be = boundary_enhancement(pred, target, f)
  value = w.lambda1 * dice.value + w.lambda2 * be.value
  grad = w.lambda1 * dice.grad.data + w.lambda2 * be.grad.data
  return LossResult(float(value), pred.with_data(grad), {"dice": dice.value, "be": be.value})


def bce_loss(pred, target):
  _check_pair(pred, target)
  p = commons.clamp_probs(pred.data)
  g = target.data
  inside = (pred.data >= commons.PROB_EPS) & (pred.data <= 1.0 - commons.PROB_EPS)
  n = p.size
  value = float(np.mean(-g * np.log(p) - (1.0 - g) * np.log(1.0 - p)))
  grad = (-g / p + (1.0 - g) / (1.0 - p)) * inside / n
  return LossResult(value, pred.with_data(grad))


def focal_loss(pred, target, gamma=2.0, alpha=0.5):
  """mean of -a g (1-p)^gamma ln p - (1-a)(1-g) p^gamma ln(1-p), p clamped to [1e-7, 1-1e-7]"""
  if gamma < 0:
    raise LossInputError("gamma must be >= 0")
  if not 0.0 < alpha <= 1.0:
    raise LossInputError("alpha must lie in (0, 1]")
  _check_pair(pred, target)
  p = commons.clamp_probs(pred.data)
  g = target.data
  q = 1.0 - p
  n = p.size
  pos = -alpha * g * q ** gamma * np.log(p)
  neg = -(1.0 - alpha) * (1.0 - g) * p ** gamma * np.log(q)
  value = float(np.mean(pos + neg))
  dpos = -alpha * g * (-gamma * q ** (gamma - 1.0) * np.log(p) + q ** gamma / p)
  dneg = -(1.0 - alpha) * (1.0 - g) * (gamma * p ** (gamma - 1.0) * np.log(q) - p ** gamma / q)
  inside = (pred.data >= commons.PROB_EPS) & (pred.data <= 1.0 - commons.PROB_EPS)
  grad = (dpos + dneg) * inside / n
  return LossResult(value, pred.with_data(grad))


def distance_boundary_loss(pred, target, phi):
  """mean(phi * pred) with phi the signed distance map of target (negative inside)."""
  _check_pair(pred, target)
  check_same_dims(pred, phi)
  n = pred.size
  value = float(np.dot(phi.data.ravel(), pred.data.ravel())) / n
  return LossResult(value, pred.with_data(phi.data / n))


@dataclass
class GradCheckReport:
  max_rel_error: float
  worst_index: int
  samples: list = field(default_factory=list)

  def passed(self, tol):
    return self.max_rel_error <= tol


def relative_error(analytic, numeric, floor=1e-8):
  return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradient(loss, pred, target, step=1e-5, samples=50, seed=0, floor=1e-8):
  """Compare loss(pred, target).grad with central differences at sampled voxels.

  loss is any callable (pred, target) -> LossResult.
  """
  if not 0.0 < step <= 1e-2:
    raise ValueError("step must lie in (0, 1e-2]")
  if samples < 1:
    raise ValueError("samples must be >= 1")
  analytic = loss(pred, target).grad.data.ravel()
  base = pred.data.ravel()
  rng = commons.make_rng(seed, 0x6772)
  picks = rng.choice(base.size, size=min(samples, base.size), replace=False)
  report = GradCheckReport(0.0, -1)
  for idx in picks:
    idx = int(idx)
    plus = base.copy()
    plus[idx] += step
    minus = base.copy()
    minus[idx] -= step
    f_plus = loss(pred.with_data(plus.reshape(pred.data.shape)), target).value
    f_minus = loss(pred.with_data(minus.reshape(pred.data.shape)), target).value
    numeric = (f_plus - f_minus) / (2.0 * step)
    err = relative_error(float(analytic[idx]), numeric, floor)
    report.samples.append((idx, float(analytic[idx]), numeric, err))
    if report.worst_index < 0 or err > report.max_rel_error:
      report.max_rel_error = err
      report.worst_index = idx
  return report

import math
import logging
import dataclasses
from dataclasses import dataclass, replace

import numpy as np
import torch
from tqdm import tqdm

import commons
import utils
from data_utils import AugmentFlags, PhantomPatchLoader
from filtering import BeFilter
from geometry import signed_distance_map
from inference import evaluate_case, window_grid
from losses import (
  LossInputError,
  LossResult,
  LossWeights,
  combined_loss,
  distance_boundary_loss,
  focal_loss,
  soft_dice,
)
from models import TinyConvNet
from optim import AdamState, adam_step
from volume import VolumeError


logger = logging.getLogger(__name__)

LOSS_MODES = ("dice", "dice+be", "dice+focal", "focal", "dice+distance")


class NonFiniteLossError(RuntimeError):
  def __init__(self, step, mode, detail):
    super().__init__("non-finite loss at step {} (mode {}): {}".format(step, mode, detail))
    self.step = step
    self.mode = mode
    self.detail = detail


@dataclass(frozen=True)
class TrainConfig:
  mode: str = "dice+be"
  lambda1: float = 1.0
  lambda2: float = 1000.0
  baseline_weight: float = 1.0
  focal_gamma: float = 2.0
  focal_alpha: float = 0.5
  epochs: int = 30
  steps_per_epoch: int = 0
  patch_size: tuple = (24, 24, 24)
  window_size: tuple = (24, 24, 24)
  window_overlap: float = 0.25
  flip: bool = True
  intensity_shift: bool = True
  shift_range: float = 0.1
  seed: int = 0
  lr: float = 1e-3
  betas: tuple = (0.9, 0.999)
  eps: float = 1e-8
  hidden_channels: int = 8
  be_smooth_passes: int = 3
  be_laplacian: str = "7point"
  eval_interval: int = 1
  log_interval: int = 50

  def __post_init__(self):
    for name in ("patch_size", "window_size", "betas"):
      object.__setattr__(self, name, tuple(getattr(self, name)))
    if self.mode not in LOSS_MODES:
      raise ValueError("unknown loss mode {!r}; expected one of {}".format(self.mode, LOSS_MODES))
    if not 0.0 <= self.window_overlap <= 0.9:
      raise ValueError("window_overlap must lie in [0, 0.9]")
    if self.epochs < 1:
      raise ValueError("epochs must be >= 1")
    self.weights  # validates lambda1 / lambda2

  @property
  def weights(self):
    return LossWeights(self.lambda1, self.lambda2 if self.mode == "dice+be" else 0.0)

  @property
  def augment_flags(self):
    return AugmentFlags(self.flip, self.intensity_shift, self.shift_range)

  def be_filter(self):
    return BeFilter.create(self.be_smooth_passes, self.be_laplacian)

  @classmethod
  def field_names(cls):
    return [f.name for f in dataclasses.fields(cls)]

  @classmethod
  def from_hparams(cls, hps, **overrides):
    values = {k: v for k, v in (hps.items() if hps is not None else []) if k in cls.field_names()}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**values)


def make_loss(config):
  """Returns fn(prob, patch) -> (LossResult, {component: value})."""
  weights = config.weights
  be = config.be_filter()

  def fn(prob, patch):
    target = patch.mask
    if config.mode == "dice+be":
      res = combined_loss(prob, target, weights, be)
      return res, dict(res.parts)
    parts = {}
    value = 0.0
    grad = np.zeros_like(prob.data)
    if config.mode != "focal":
      dice = soft_dice(prob, target)
      parts["dice"] = dice.value
      value += weights.lambda1 * dice.value
      grad += weights.lambda1 * dice.grad.data
    if config.mode in ("dice+focal", "focal"):
      res = focal_loss(prob, target, config.focal_gamma, config.focal_alpha)
      parts["focal"] = res.value
      w = 1.0 if config.mode == "focal" else config.baseline_weight
      value += w * res.value
      grad += w * res.grad.data
    elif config.mode == "dice+distance":
      res = distance_boundary_loss(prob, target, patch.distance)
      parts["distance"] = res.value
      value += config.baseline_weight * res.value
      grad += config.baseline_weight * res.grad.data
    return LossResult(float(value), prob.with_data(grad)), parts

  return fn


def _check_fits(samples, config):
  for s in samples:
    if any(p > n for p, n in zip(config.patch_size, s.image.dims)):
      raise ValueError("patch {} larger than volume {} ({})".format(config.patch_size, s.image.dims, s.case_id))


def validate(net, samples, config):
  records, probs = [], []
  for s in samples:
    prob, record = evaluate_case(net, s, config.window_size, config.window_overlap)
    records.append(record)
    probs.append(prob)
  return records, probs


def train(dataset, config, val_dataset=None, writer=None, progress=False):
  """Train a TinyConvNet on phantom patches.

  Returns (net, history). history["steps"] holds every component loss per
  step; history["validation"] one entry per validation epoch with the
  per-case MetricsRecords and their means.
  """
  if not dataset:
    raise ValueError("empty training set")
  _check_fits(dataset, config)
  if val_dataset:
    for s in val_dataset:
      window_grid(s.image.dims, config.window_size, config.window_overlap)
  torch.use_deterministic_algorithms(True, warn_only=True)

  if config.mode == "dice+distance":
    dataset = [s if s.distance is not None else replace(s, distance=signed_distance_map(s.mask)) for s in dataset]
  loss_fn = make_loss(config)
  net = TinyConvNet(config.hidden_channels, init_seed=config.seed)
  state = AdamState.create(net.params(), config.lr, config.betas, config.eps)
  loader = PhantomPatchLoader(dataset, config.patch_size, config.augment_flags, config.seed,
                              config.steps_per_epoch or None)
  steps_per_epoch = len(loader)

  history = {"steps": [], "validation": []}
  global_step = 0
  logger.info("training mode=%s seed=%d epochs=%d steps/epoch=%d", config.mode, config.seed,
              config.epochs, steps_per_epoch)
  for epoch in range(1, config.epochs + 1):
    loader.set_epoch(epoch)
    for i in tqdm(range(steps_per_epoch), disable=not progress, desc="epoch {}".format(epoch)):
      patch = loader[i]
      try:
        prob, cache = net(patch.image)
        result, parts = loss_fn(prob, patch)
      except (VolumeError, LossInputError) as e:
        raise NonFiniteLossError(global_step, config.mode, str(e)) from e
      bad = [k for k, v in parts.items() if not math.isfinite(v)]
      if bad:
        raise NonFiniteLossError(global_step, config.mode, "components {}".format(parts))
      grads = net.backward(cache, result.grad)
      params, state = adam_step(state, net.params(), grads)
      net.set_params(params)

      row = {"step": global_step, "epoch": epoch, "total": result.value}
      row.update(parts)
      history["steps"].append(row)
      if global_step % config.log_interval == 0:
        norm = commons.grad_norm(grads)
        logger.info("epoch %d step %d loss %.6f %s grad_norm %.4e", epoch, global_step, result.value,
                    " ".join("{}={:.6f}".format(k, v) for k, v in parts.items()), norm)
        if writer is not None:
          scalars = {"loss/total": result.value, "grad_norm": norm}
          scalars.update({"loss/{}".format(k): v for k, v in parts.items()})
          utils.summarize(writer=writer, global_step=global_step, scalars=scalars)
      global_step += 1

    if val_dataset and (epoch % config.eval_interval == 0 or epoch == config.epochs):
      records, probs = validate(net, val_dataset, config)
      entry = {
          "epoch": epoch,
          "dice": float(np.mean([r.dice for r in records])),
          "asd_mm": float(np.mean([r.avg_surface_dist_mm for r in records])),
          "hd95_mm": float(np.mean([r.hausdorff95_mm for r in records])),
          "cases": records,
      }
      history["validation"].append(entry)
      logger.info("====> Epoch %d validation dice %.4f asd %.4f hd95 %.4f", epoch, entry["dice"],
                  entry["asd_mm"], entry["hd95_mm"])
      if writer is not None:
        utils.summarize(writer=writer, global_step=global_step,
                        scalars={"val/dice": entry["dice"], "val/asd_mm": entry["asd_mm"],
                                 "val/hd95_mm": entry["hd95_mm"]})
        mid = probs[0].data.shape[0] // 2
        utils.summarize(writer=writer, global_step=global_step,
                        images={"val/prob": utils.plot_slice_to_numpy(probs[0].data[mid], val_dataset[0].case_id)})
  return net, history

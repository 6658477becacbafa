import copy
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

import commons
from losses import GradCheckReport, relative_error
from volume import Volume, check_same_dims


PARAM_NAMES = ("conv1_weight", "conv1_bias", "conv2_weight", "conv2_bias")


class StaleCacheError(ValueError):
  pass


@dataclass
class ForwardCache:
  x: torch.Tensor
  z1: torch.Tensor
  h: torch.Tensor
  prob: torch.Tensor
  net_id: int
  version: int


def to_tensor(v):
  """Volume -> [1, 1, z, y, x] float64 tensor."""
  return torch.from_numpy(np.array(v.data, dtype=np.float64)).reshape(1, 1, *v.data.shape)


class TinyConvNet(nn.Module):
  """conv3x3x3 (1 -> C) + bias, ReLU, conv3x3x3 (C -> 1) + bias, logistic.

  Zero padding and stride 1 keep the output on the input grid. Parameters
  never require autograd; gradients come from `backward`.
  """
  def __init__(self, hidden_channels=8, init_seed=0):
    super().__init__()
    self.hidden_channels = hidden_channels
    c = hidden_channels
    self.conv1_weight = nn.Parameter(torch.zeros(c, 1, 3, 3, 3, dtype=torch.float64), requires_grad=False)
    self.conv1_bias = nn.Parameter(torch.zeros(c, dtype=torch.float64), requires_grad=False)
    self.conv2_weight = nn.Parameter(torch.zeros(1, c, 3, 3, 3, dtype=torch.float64), requires_grad=False)
    self.conv2_bias = nn.Parameter(torch.zeros(1, dtype=torch.float64), requires_grad=False)
    self.version = 0
    self.init_weights(init_seed)

  def init_weights(self, seed):
    rng = commons.make_rng(seed, 0x6e6574)
    c = self.hidden_channels
    w1 = commons.box_muller(rng, (c, 1, 3, 3, 3)) * math.sqrt(2.0 / 27.0)
    w2 = commons.box_muller(rng, (1, c, 3, 3, 3)) * math.sqrt(2.0 / (27.0 * c))
    self.set_params({
        "conv1_weight": torch.from_numpy(w1),
        "conv1_bias": torch.zeros(c, dtype=torch.float64),
        "conv2_weight": torch.from_numpy(w2),
        "conv2_bias": torch.zeros(1, dtype=torch.float64)})

  def params(self):
    return {name: getattr(self, name).detach().clone() for name in PARAM_NAMES}

  def set_params(self, params):
    with torch.no_grad():
      for name in PARAM_NAMES:
        getattr(self, name).copy_(params[name])
    self.version += 1

  def forward(self, image):
    x = to_tensor(image)
    z1 = F.conv3d(x, self.conv1_weight, self.conv1_bias, padding=1)
    h = torch.relu(z1)
    z2 = F.conv3d(h, self.conv2_weight, self.conv2_bias, padding=1)
    prob = torch.sigmoid(z2)
    cache = ForwardCache(x, z1, h, prob, id(self), self.version)
    return Volume(prob[0, 0].numpy(), image.spacing), cache

  def backward(self, cache, grad_prob):
    if cache.net_id != id(self) or cache.version != self.version:
      raise StaleCacheError("forward cache does not belong to the current parameters")
    if tuple(grad_prob.data.shape) != tuple(cache.prob.shape[2:]):
      raise StaleCacheError("gradient dims {} do not match the cached forward pass".format(grad_prob.dims))
    g = to_tensor(grad_prob)
    p = cache.prob
    g2 = g * p * (1.0 - p)
    grads = {
        "conv2_weight": torch.nn.grad.conv3d_weight(cache.h, self.conv2_weight.shape, g2, padding=1),
        "conv2_bias": g2.sum(dim=(0, 2, 3, 4)),
    }
    gh = torch.nn.grad.conv3d_input(cache.h.shape, self.conv2_weight, g2, padding=1)
    g1 = gh * (cache.z1 > 0).to(gh.dtype)
    grads["conv1_weight"] = torch.nn.grad.conv3d_weight(cache.x, self.conv1_weight.shape, g1, padding=1)
    grads["conv1_bias"] = g1.sum(dim=(0, 2, 3, 4))
    return grads


def forward(net, image):
  return net(image)


def backward(net, cache, grad_prob):
  return net.backward(cache, grad_prob)


def loss_and_grads(net, image, target, loss):
  prob, cache = net(image)
  result = loss(prob, target)
  return result, backward(net, cache, result.grad)


def check_parameter_gradient(net, image, target, loss, step=1e-6, samples=20, seed=0, floor=1e-8):
  """Central differences of loss(forward(net, image), target) at sampled parameters."""
  check_same_dims(image, target)
  _, grads = loss_and_grads(net, image, target, loss)
  sizes = [grads[name].numel() for name in PARAM_NAMES]
  offsets = np.cumsum([0] + sizes)
  rng = commons.make_rng(seed, 0x7072)
  picks = rng.choice(int(offsets[-1]), size=min(samples, int(offsets[-1])), replace=False)
  report = GradCheckReport(0.0, -1)
  base = net.params()
  probe = copy.deepcopy(net)
  for flat_idx in picks:
    flat_idx = int(flat_idx)
    which = int(np.searchsorted(offsets, flat_idx, side="right")) - 1
    name = PARAM_NAMES[which]
    idx = flat_idx - int(offsets[which])
    values = []
    for delta in (step, -step):
      params = {k: t.clone() for k, t in base.items()}
      params[name].view(-1)[idx] += delta
      probe.set_params(params)
      prob, _ = probe(image)
      values.append(loss(prob, target).value)
    numeric = (values[0] - values[1]) / (2.0 * step)
    analytic = float(grads[name].reshape(-1)[idx])
    err = relative_error(analytic, numeric, floor)
    report.samples.append((name, idx, analytic, numeric, err))
    if report.worst_index < 0 or err > report.max_rel_error:
      report.max_rel_error = err
      report.worst_index = flat_idx
  return report

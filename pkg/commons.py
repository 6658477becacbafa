import math
import numpy as np
import torch


PROB_EPS = 1e-7


def make_rng(seed, *stream):
  """Philox counter-based generator keyed by (seed, *stream).

  Every random draw in the project goes through this so that the stream a
  sample or a training run sees depends only on its own key.
  """
  entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) & 0xFFFFFFFFFFFFFFFF for s in stream]
  return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def box_muller(rng, shape):
  """Standard normal draws from pairs of uniforms."""
  n = int(np.prod(shape))
  half = (n + 1) // 2
  u1 = 1.0 - rng.random(half)  # (0, 1], keeps log finite
  u2 = rng.random(half)
  r = np.sqrt(-2.0 * np.log(u1))
  z = np.concatenate([r * np.cos(2.0 * math.pi * u2), r * np.sin(2.0 * math.pi * u2)])
  return z[:n].reshape(shape)


def clamp_probs(p, eps=PROB_EPS):
  return np.clip(p, eps, 1.0 - eps)


def slice_volume(arr, start, size):
  """arr: [z, y, x]; start, size: (x, y, z)."""
  x0, y0, z0 = start
  sx, sy, sz = size
  return arr[z0:z0 + sz, y0:y0 + sy, x0:x0 + sx]


def rand_slice_start(dims, size, rng):
  starts = []
  for n, s in zip(dims, size):
    starts.append(int(rng.integers(0, n - s + 1)))
  return tuple(starts)


def window_starts(n, window, stride):
  starts = list(range(0, n - window + 1, stride))
  if starts[-1] + window < n:
    starts.append(n - window)
  return starts


def grad_norm(grads, norm_type=2):
  total_norm = 0.0
  for g in grads.values():
    total_norm += float(torch.linalg.vector_norm(g, norm_type)) ** norm_type
  return total_norm ** (1. / norm_type)


def mean_std(values):
  values = np.asarray(values, dtype=np.float64)
  if values.size == 0:
    return float("nan"), float("nan")
  return float(values.mean()), float(values.std())

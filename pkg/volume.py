"""Dense 3D scalar volumes.

Storage is a float64 numpy array of shape (nz, ny, nx) in C order, so the
flattened data is x-fastest: index = x + nx * (y + ny * z). `dims` and
`spacing` are always reported in (x, y, z) order.
"""
import math
from dataclasses import dataclass

import numpy as np


class VolumeError(ValueError):
  pass


class DimensionMismatchError(VolumeError):
  pass


@dataclass(frozen=True)
class Volume:
  data: np.ndarray
  spacing: tuple = (1.0, 1.0, 1.0)

  def __post_init__(self):
    data = np.array(self.data, dtype=np.float64, copy=True)
    if data.ndim != 3 or min(data.shape) < 1:
      raise VolumeError("volume data must be a non-empty 3D array, got shape {}".format(data.shape))
    spacing = tuple(float(s) for s in self.spacing)
    if len(spacing) != 3 or not all(math.isfinite(s) and s > 0 for s in spacing):
      raise VolumeError("spacing must be three positive reals, got {}".format(self.spacing))
    if not np.all(np.isfinite(data)):
      raise VolumeError("volume contains non-finite values")
    data.setflags(write=False)
    object.__setattr__(self, "data", data)
    object.__setattr__(self, "spacing", spacing)

  @property
  def dims(self):
    nz, ny, nx = self.data.shape
    return (nx, ny, nz)

  @property
  def size(self):
    return self.data.size

  def flat(self):
    return self.data.ravel()

  def with_data(self, data):
    return Volume(data, self.spacing)

  def __getitem__(self, xyz):
    x, y, z = xyz
    return float(self.data[z, y, x])


@dataclass(frozen=True)
class Kernel3:
  """3x3x3 stencil; weights[dz + 1, dy + 1, dx + 1] is the weight at offset (dx, dy, dz)."""
  weights: np.ndarray

  def __post_init__(self):
    w = np.array(self.weights, dtype=np.float64, copy=True)
    if w.shape != (3, 3, 3):
      raise VolumeError("kernel needs exactly 27 weights in a 3x3x3 layout, got {}".format(w.shape))
    if not np.all(np.isfinite(w)):
      raise VolumeError("kernel weights must be finite")
    w.setflags(write=False)
    object.__setattr__(self, "weights", w)

  def at(self, dx, dy, dz):
    return float(self.weights[dz + 1, dy + 1, dx + 1])

  def offsets(self):
    """(dx, dy, dz, weight) in the fixed accumulation order used by the convolution engine."""
    for dz in (-1, 0, 1):
      for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
          yield dx, dy, dz, float(self.weights[dz + 1, dy + 1, dx + 1])

  def is_point_symmetric(self):
    return bool(np.array_equal(self.weights, self.weights[::-1, ::-1, ::-1]))


def _check_dims(dims):
  dims = tuple(dims)
  if len(dims) != 3 or not all(isinstance(d, (int, np.integer)) and d >= 1 for d in dims):
    raise VolumeError("dims must be three integers >= 1, got {}".format(dims))
  return tuple(int(d) for d in dims)


def create(dims, spacing=(1.0, 1.0, 1.0), fill=0.0):
  nx, ny, nz = _check_dims(dims)
  fill = float(fill)
  if not math.isfinite(fill):
    raise VolumeError("fill value must be finite, got {}".format(fill))
  return Volume(np.full((nz, ny, nx), fill, dtype=np.float64), spacing)


def zeros_like(v):
  return Volume(np.zeros_like(v.data), v.spacing)


def from_flat(flat, dims, spacing=(1.0, 1.0, 1.0)):
  nx, ny, nz = _check_dims(dims)
  flat = np.asarray(flat, dtype=np.float64)
  if flat.size != nx * ny * nz:
    raise VolumeError("expected {} values for dims {}, got {}".format(nx * ny * nz, dims, flat.size))
  return Volume(flat.reshape(nz, ny, nx), spacing)


def check_same_dims(a, b):
  if a.dims != b.dims:
    raise DimensionMismatchError("dimension mismatch: {} vs {}".format(a.dims, b.dims))


def axpy(a, x, y):
  check_same_dims(x, y)
  return Volume(float(a) * x.data + y.data, x.spacing)


def dot(a, b):
  check_same_dims(a, b)
  # sequential summation over the flat x-fastest buffer keeps results run-to-run stable
  return float(np.dot(a.data.ravel(), b.data.ravel()))


def l2_norm(v):
  return math.sqrt(dot(v, v))


def threshold(v, t):
  t = float(t)
  if not math.isfinite(t):
    raise VolumeError("threshold must be finite, got {}".format(t))
  return Volume((v.data >= t).astype(np.float64), v.spacing)


def is_binary(v):
  return bool(np.all((v.data == 0.0) | (v.data == 1.0)))


def check_binary(v, name="mask"):
  if not is_binary(v):
    raise VolumeError("{} must contain only 0.0 and 1.0".format(name))


def complement(mask):
  check_binary(mask)
  return Volume(1.0 - mask.data, mask.spacing)


def foreground_count(mask):
  return int(np.count_nonzero(mask.data))

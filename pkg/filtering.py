"""Fixed 3x3x3 stencils and the boundary-enhancement filter.

The filter is three box smoothings followed by a discrete Laplacian, all
single-channel, bias-free, stride 1, zero padded to the input size. Kernels
are constants: nothing here is ever trained.
"""
import enum
from dataclasses import dataclass

import numpy as np

from volume import Kernel3, Volume


class PaddingMode(enum.Enum):
  ZERO_PAD = "zero"


def box_kernel():
  return Kernel3(np.full((3, 3, 3), 1.0 / 27.0))


def laplacian_kernel(variant="7point"):
  if variant == "7point":
    w = np.zeros((3, 3, 3))
    w[1, 1, 1] = -6.0
    for axis in range(3):
      for side in (0, 2):
        idx = [1, 1, 1]
        idx[axis] = side
        w[tuple(idx)] = 1.0
    return Kernel3(w)
  if variant == "27point":
    w = np.empty((3, 3, 3))
    for iz in range(3):
      for iy in range(3):
        for ix in range(3):
          # 0 = center, 1 = face, 2 = edge, 3 = corner
          order = abs(ix - 1) + abs(iy - 1) + abs(iz - 1)
          w[iz, iy, ix] = (-88.0, 6.0, 3.0, 2.0)[order] / 26.0
    return Kernel3(w)
  raise ValueError("unknown Laplacian variant {!r}".format(variant))


def flip_kernel(k):
  return Kernel3(k.weights[::-1, ::-1, ::-1])


def _span(n, d):
  # output indices p such that p + d stays inside [0, n)
  return slice(max(0, -d), n - max(0, d))


def convolve3(v, k, pad):
  """out(p) = sum over o in {-1,0,1}^3 of k(o) * v(p + o); reads outside v contribute 0.

  Each output voxel is accumulated in the fixed offset order of Kernel3.offsets(),
  so results do not depend on how the work is split.
  """
  if pad is not PaddingMode.ZERO_PAD:
    raise ValueError("unsupported padding mode {!r}".format(pad))
  src = v.data
  nz, ny, nx = src.shape
  out = np.zeros_like(src)
  for dx, dy, dz, w in k.offsets():
    if w == 0.0:
      continue
    zs, ys, xs = _span(nz, dz), _span(ny, dy), _span(nx, dx)
    if zs.start >= zs.stop or ys.start >= ys.stop or xs.start >= xs.stop:
      continue
    out[zs, ys, xs] += w * src[zs.start + dz:zs.stop + dz,
                               ys.start + dy:ys.stop + dy,
                               xs.start + dx:xs.stop + dx]
  return Volume(out, v.spacing)


def convolve3_adjoint(g, k, pad):
  """Adjoint of convolve3 under the voxelwise dot product: correlation with the point-reflected kernel."""
  return convolve3(g, flip_kernel(k), pad)


@dataclass(frozen=True)
class BeFilter:
  smooth_kernel: Kernel3
  laplacian_kernel: Kernel3
  num_smooth_passes: int = 3

  def __post_init__(self):
    if not np.all(self.smooth_kernel.weights == 1.0 / 27.0):
      raise ValueError("smoothing kernel weights must all be exactly 1/27")
    if abs(float(self.laplacian_kernel.weights.sum())) > 1e-12:
      raise ValueError("Laplacian kernel weights must sum to 0")
    if int(self.num_smooth_passes) < 0:
      raise ValueError("num_smooth_passes must be >= 0")

  @classmethod
  def create(cls, num_smooth_passes=3, laplacian="7point"):
    return cls(box_kernel(), laplacian_kernel(laplacian), int(num_smooth_passes))

  @property
  def support_radius(self):
    return self.num_smooth_passes + 1


def be_filter_apply(f, v):
  out = v
  for _ in range(f.num_smooth_passes):
    out = convolve3(out, f.smooth_kernel, PaddingMode.ZERO_PAD)
  return convolve3(out, f.laplacian_kernel, PaddingMode.ZERO_PAD)


def be_filter_adjoint(f, g):
  """L^T g: adjoints of the individual stencils applied in reverse order."""
  out = convolve3_adjoint(g, f.laplacian_kernel, PaddingMode.ZERO_PAD)
  for _ in range(f.num_smooth_passes):
    out = convolve3_adjoint(out, f.smooth_kernel, PaddingMode.ZERO_PAD)
  return out

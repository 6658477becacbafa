"""Distance transforms, surfaces and segmentation metrics.

Surfaces use 6-connectivity and treat everything outside the volume as
background, so foreground voxels on a volume face are surface voxels.
All distances are in millimeters (voxel spacing applied per axis).
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from volume import Volume, check_binary, check_same_dims


class EmptyMaskError(ValueError):
  pass


@dataclass(frozen=True)
class MetricsRecord:
  case_id: str
  dice: float
  hausdorff95_mm: float
  avg_surface_dist_mm: float

  def as_dict(self):
    return {"case_id": self.case_id, "dice": self.dice,
            "hd95_mm": self.hausdorff95_mm, "asd_mm": self.avg_surface_dist_mm}


def _sampling(v):
  sx, sy, sz = v.spacing
  return (sz, sy, sx)


def euclidean_distance_transform(mask):
  """Exact distance from every voxel center to the nearest foreground voxel center."""
  check_binary(mask)
  fg = mask.data > 0.5
  if not fg.any():
    raise EmptyMaskError("distance transform of an empty mask is undefined")
  dist = ndimage.distance_transform_edt(~fg, sampling=_sampling(mask))
  return Volume(dist, mask.spacing)


def signed_distance_map(mask):
  """EDT(mask) - EDT(complement): negative inside, positive outside."""
  check_binary(mask)
  fg = mask.data > 0.5
  if fg.all() or not fg.any():
    raise EmptyMaskError("signed distance map needs both foreground and background voxels")
  outside = ndimage.distance_transform_edt(~fg, sampling=_sampling(mask))
  inside = ndimage.distance_transform_edt(fg, sampling=_sampling(mask))
  return Volume(outside - inside, mask.spacing)


def surface_mask(mask):
  check_binary(mask)
  fg = mask.data > 0.5
  footprint = ndimage.generate_binary_structure(3, 1)
  eroded = ndimage.binary_erosion(fg, structure=footprint, iterations=1, border_value=0)
  return Volume((fg & ~eroded).astype(np.float64), mask.spacing)


def extract_surface(mask):
  """(N, 3) array of surface voxel coordinates as (x, y, z), sorted x-fastest."""
  zyx = np.argwhere(surface_mask(mask).data > 0.5)
  return zyx[:, ::-1].copy()


def dice_score(a, b):
  check_same_dims(a, b)
  check_binary(a)
  check_binary(b)
  fa = a.data > 0.5
  fb = b.data > 0.5
  total = int(fa.sum()) + int(fb.sum())
  if total == 0:
    return 1.0
  return 2.0 * int((fa & fb).sum()) / total


def surface_distances(pred, truth):
  """Pooled two-directional surface-to-surface distances, sorted ascending."""
  check_same_dims(pred, truth)
  sp = surface_mask(pred)
  st = surface_mask(truth)
  if not sp.data.any() or not st.data.any():
    raise EmptyMaskError("surface metrics need two nonempty masks")
  to_truth = euclidean_distance_transform(st).data[sp.data > 0.5]
  to_pred = euclidean_distance_transform(sp).data[st.data > 0.5]
  return np.sort(np.concatenate([to_truth, to_pred]))


def surface_metrics(pred, truth):
  """(hausdorff95_mm, avg_surface_dist_mm)"""
  pooled = surface_distances(pred, truth)
  hd95 = float(np.percentile(pooled, 95))
  asd = float(pooled.mean())
  return hd95, asd


def volume_diagonal_mm(v):
  return float(np.sqrt(sum((n * s) ** 2 for n, s in zip(v.dims, v.spacing))))


def evaluate_masks(pred, truth, case_id=""):
  dice = dice_score(pred, truth)
  if pred.data.any() and truth.data.any():
    hd95, asd = surface_metrics(pred, truth)
  elif not pred.data.any() and not truth.data.any():
    hd95 = asd = 0.0
  else:
    # an empty prediction has no surface; charge the largest distance the volume allows
    hd95 = asd = volume_diagonal_mm(truth)
  return MetricsRecord(str(case_id), dice, hd95, asd)

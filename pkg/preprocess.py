import math
from dataclasses import replace

import numpy as np
from scipy import ndimage

from volume import Volume, threshold


class PreprocessError(ValueError):
    pass


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def resample_isotropic(v, target_mm=1.0):
    """Trilinear resampling onto a (target, target, target) grid sharing the volume origin.

    New dims are max(1, round(dim * spacing / target)); samples beyond the last
    voxel clamp to it.
    """
    target_mm = float(target_mm)
    if not target_mm > 0:
        raise PreprocessError("target spacing must be > 0, got {}".format(target_mm))
    new_dims = tuple(max(1, _round_half_up(n * s / target_mm)) for n, s in zip(v.dims, v.spacing))
    if new_dims == v.dims and all(s == target_mm for s in v.spacing):
        return Volume(v.data, v.spacing)
    nx, ny, nz = new_dims
    sx, sy, sz = v.spacing
    # positions of the new voxel centers in old index units, z/y/x order
    axes = [np.arange(nz) * (target_mm / sz),
            np.arange(ny) * (target_mm / sy),
            np.arange(nx) * (target_mm / sx)]
    coords = np.meshgrid(*axes, indexing="ij")
    out = ndimage.map_coordinates(v.data, coords, order=1, mode="nearest")
    return Volume(out, (target_mm, target_mm, target_mm))


def resample_mask(mask, target_mm=1.0):
    return threshold(resample_isotropic(mask, target_mm), 0.5)


def percentile_normalize(v, fg, lo_pct=5.0, hi_pct=95.0):
    """Map [p_lo, p_hi] of the foreground intensities onto [0, 1] and clamp."""
    values = v.data[fg.data > 0.5]
    if values.size == 0:
        raise PreprocessError("percentile normalization needs a nonempty foreground")
    lo, hi = np.percentile(values, [lo_pct, hi_pct])
    if hi == lo:
        out = np.where(v.data < lo, 0.0, np.where(v.data > hi, 1.0, 0.5))
    else:
        out = np.clip((v.data - lo) / (hi - lo), 0.0, 1.0)
    return Volume(out, v.spacing)


def zscore_normalize(v):
    if v.size < 2:
        raise PreprocessError("z-score normalization needs more than one voxel")
    mean = v.data.mean()
    std = v.data.std()
    if std == 0.0:
        raise PreprocessError("z-score normalization of a zero-variance volume")
    return Volume((v.data - mean) / std, v.spacing)


NORMALIZATIONS = ("percentile", "zscore", "none")


def preprocess_sample(sample, normalization="percentile", target_mm=1.0):
    """Resample to isotropic spacing, then normalize the image intensities."""
    if normalization not in NORMALIZATIONS:
        raise PreprocessError("unknown normalization {!r}".format(normalization))
    image = resample_isotropic(sample.image, target_mm)
    mask = resample_mask(sample.mask, target_mm)
    if normalization == "percentile":
        image = percentile_normalize(image, mask)
    elif normalization == "zscore":
        image = zscore_normalize(image)
    return replace(sample, image=image, mask=mask)

import itertools
import math

import numpy as np

import commons
from geometry import evaluate_masks
from volume import Volume, threshold


class WindowError(ValueError):
    pass


def window_grid(dims, window_size, overlap):
    """Window start corners (x, y, z); stride ceil(w * (1 - overlap)), last window flush with the border."""
    window_size = tuple(int(w) for w in window_size)
    if len(window_size) != 3 or any(w < 1 or w > n for w, n in zip(window_size, dims)):
        raise WindowError("window {} must fit inside volume {}".format(window_size, dims))
    if not 0.0 <= overlap <= 0.9:
        raise WindowError("overlap must lie in [0, 0.9], got {}".format(overlap))
    per_axis = []
    for n, w in zip(dims, window_size):
        stride = max(1, int(math.ceil(w * (1.0 - overlap))))
        per_axis.append(commons.window_starts(n, w, stride))
    xs, ys, zs = per_axis
    return [(x, y, z) for z, y, x in itertools.product(zs, ys, xs)]


def sliding_window_infer(net, image, window_size, overlap=0.25, return_counts=False):
    """Scanning-window prediction; overlapping windows are averaged with equal weight."""
    starts = window_grid(image.dims, window_size, overlap)
    acc = np.zeros_like(image.data)
    counts = np.zeros_like(image.data)
    wx, wy, wz = window_size
    # windows are visited in a fixed x-fastest order so the accumulation is reproducible
    for x0, y0, z0 in starts:
        patch = Volume(commons.slice_volume(image.data, (x0, y0, z0), window_size), image.spacing)
        prob, _ = net(patch)
        acc[z0:z0 + wz, y0:y0 + wy, x0:x0 + wx] += prob.data
        counts[z0:z0 + wz, y0:y0 + wy, x0:x0 + wx] += 1.0
    out = Volume(acc / counts, image.spacing)
    if return_counts:
        return out, Volume(counts, image.spacing)
    return out


def evaluate_case(net, sample, window_size, overlap=0.25, level=0.5):
    prob = sliding_window_infer(net, sample.image, window_size, overlap)
    return prob, evaluate_masks(threshold(prob, level), sample.mask, sample.case_id)

from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.utils.data

import commons
from volume import Volume


AXES = {"x": 2, "y": 1, "z": 0}


class CropError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentFlags:
    flip: bool = True
    intensity_shift: bool = True
    shift_range: float = 0.1


def _map_volumes(sample, fn):
    distance = None if sample.distance is None else fn(sample.distance)
    return replace(sample, image=fn(sample.image), mask=fn(sample.mask), distance=distance)


def crop(sample, start, patch_size):
    def cut(v):
        return Volume(commons.slice_volume(v.data, start, patch_size), v.spacing)
    return _map_volumes(sample, cut)


def random_crop(sample, patch_size, rng):
    """Aligned crop of image, mask (and distance map) at a uniformly drawn corner."""
    patch_size = tuple(int(p) for p in patch_size)
    dims = sample.image.dims
    if any(p > n or p < 1 for p, n in zip(patch_size, dims)):
        raise CropError("patch {} does not fit volume {}".format(patch_size, dims))
    start = commons.rand_slice_start(dims, patch_size, rng)
    return crop(sample, start, patch_size)


def flip_axes(sample, axes):
    axes = tuple(AXES[a] for a in axes)
    if not axes:
        return sample
    return _map_volumes(sample, lambda v: Volume(np.flip(v.data, axis=axes), v.spacing))


def shift_intensity(sample, shift):
    return replace(sample, image=Volume(sample.image.data + shift, sample.image.spacing))


def augment(sample, flags, rng):
    """Random per-axis flips (p = 0.5 each, image and labels together) and an
    image-only intensity shift drawn uniformly from [-shift_range, shift_range]."""
    if flags.flip:
        axes = [a for a in "xyz" if rng.random() < 0.5]
        sample = flip_axes(sample, axes)
    if flags.intensity_shift:
        sample = shift_intensity(sample, float(rng.uniform(-flags.shift_range, flags.shift_range)))
    return sample


def split_dataset(samples, n_val, seed):
    """Seeded shuffle, then the first n_val go to validation."""
    if not 0 <= n_val < len(samples):
        raise ValueError("validation size {} leaves no training samples out of {}".format(n_val, len(samples)))
    order = commons.make_rng(seed, 0x73706c74).permutation(len(samples))
    val = [samples[i] for i in sorted(order[:n_val])]
    train = [samples[i] for i in sorted(order[n_val:])]
    return train, val


class PhantomPatchLoader(torch.utils.data.Dataset):
    """
        1) picks phantoms in a seeded per-epoch order, cycling through it
           when an epoch has more steps than phantoms
        2) random-crops a patch from each
        3) applies flip / intensity-shift augmentation
    Item i of an epoch is drawn from a stream keyed by (seed, epoch, i), so
    revisiting a phantom within the epoch yields a fresh crop.
    """

    def __init__(self, samples, patch_size, flags, seed, steps_per_epoch=None):
        if not samples:
            raise ValueError("empty training set")
        if steps_per_epoch is not None and steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        self.samples = list(samples)
        self.patch_size = tuple(patch_size)
        self.flags = flags
        self.seed = seed
        self.steps_per_epoch = steps_per_epoch or len(self.samples)
        self.set_epoch(0)

    def set_epoch(self, epoch):
        self.epoch = epoch
        self._order = [int(i) for i in
                       commons.make_rng(self.seed, self.epoch, 0x6f726472).permutation(len(self.samples))]

    def order(self):
        return list(self._order)

    def sample_index(self, step):
        return self._order[step % len(self._order)]

    def __getitem__(self, step):
        if not 0 <= step < self.steps_per_epoch:
            raise IndexError("step {} outside epoch of {}".format(step, self.steps_per_epoch))
        rng = commons.make_rng(self.seed, self.epoch, step)
        patch = random_crop(self.samples[self.sample_index(step)], self.patch_size, rng)
        return augment(patch, self.flags, rng)

    def __len__(self):
        return self.steps_per_epoch

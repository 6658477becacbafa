"""Synthetic fuzzy-boundary phantoms.

A phantom is an analytic shape indicator (the ground-truth mask) and an image
made from it by contrast mapping, box-blur smoothing of the edge and additive
noise. All randomness comes from Philox streams keyed by the PhantomSpec
seeds, so the same PhantomSpec always yields the same bytes.
"""
import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

import commons
from filtering import PaddingMode, box_kernel, convolve3
from volume import Volume

logger = logging.getLogger(__name__)

MARGIN = 5
# variance of one 3-wide box pass along an axis: (3^2 - 1) / 12
BOX_PASS_VARIANCE = 2.0 / 3.0


class PhantomSpecError(ValueError):
    pass


class PhantomShape(str, enum.Enum):
    SPHERE = "sphere"
    ELLIPSOID = "ellipsoid"
    BLOB = "blob"


@dataclass(frozen=True)
class PhantomSpec:
    shape: str = PhantomShape.SPHERE.value
    dims: tuple = (32, 32, 32)
    center: tuple = (16.0, 16.0, 16.0)
    radii: tuple = (8.0, 8.0, 8.0)
    fuzz_sigma: float = 0.0
    noise_sigma: float = 0.0
    contrast: tuple = (0.0, 1.0)
    seed: int = 0
    shape_seed: int = 0
    blob_amplitude: float = 0.15
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "shape", PhantomShape(self.shape).value)
        for name in ("dims", "center", "radii", "contrast", "spacing"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    def effective_radii(self):
        if self.shape == PhantomShape.ELLIPSOID.value:
            return tuple(float(r) for r in self.radii)
        r = float(self.radii[0])
        return (r, r, r)

    def extent(self):
        """Largest distance from the center the shape can reach, per axis."""
        scale = 1.0 + self.blob_amplitude if self.shape == PhantomShape.BLOB.value else 1.0
        return tuple(r * scale for r in self.effective_radii())

    def validate(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise PhantomSpecError("dims must be three positive integers, got {}".format(self.dims))
        if len(self.radii) != 3 or min(self.radii) <= 0:
            raise PhantomSpecError("radii must be positive, got {}".format(self.radii))
        if self.fuzz_sigma < 0 or self.noise_sigma < 0:
            raise PhantomSpecError("fuzz_sigma and noise_sigma must be >= 0")
        if not 0 <= self.blob_amplitude < 1:
            raise PhantomSpecError("blob_amplitude must lie in [0, 1)")
        if len(self.contrast) != 2:
            raise PhantomSpecError("contrast must be a (background, foreground) pair")
        for axis, (n, c, r) in enumerate(zip(self.dims, self.center, self.extent())):
            if c - r < MARGIN or c + r > n - 1 - MARGIN:
                raise PhantomSpecError(
                    "object exceeds the {}-voxel margin on axis {}: center {}, extent {}, dim {}".format(
                        MARGIN, "xyz"[axis], c, r, n))
        return self


@dataclass(frozen=True)
class Sample:
    image: Volume
    mask: Volume
    spec: PhantomSpec = None
    case_id: str = ""
    distance: Volume = field(default=None, compare=False)

    def __post_init__(self):
        if self.image.dims != self.mask.dims or self.image.spacing != self.mask.spacing:
            raise PhantomSpecError("image and mask must share dims and spacing")


def _grid(spec):
    nx, ny, nz = spec.dims
    z, y, x = np.meshgrid(np.arange(nz, dtype=np.float64),
                          np.arange(ny, dtype=np.float64),
                          np.arange(nx, dtype=np.float64), indexing="ij")
    cx, cy, cz = (float(c) for c in spec.center)
    return x - cx, y - cy, z - cz


def _blob_perturbation(spec, dx, dy, dz):
    rng = commons.make_rng(spec.shape_seed, 1)
    coefs = rng.uniform(-1.0, 1.0, 3)
    coefs /= max(np.abs(coefs).sum(), 1e-12)
    phases = rng.uniform(0.0, 2.0 * math.pi, 3)
    d = np.sqrt(dx * dx + dy * dy + dz * dz)
    cos_t = np.divide(dz, d, out=np.zeros_like(d), where=d > 0)
    sin_t = np.sqrt(np.clip(1.0 - cos_t * cos_t, 0.0, 1.0))
    phi = np.arctan2(dy, dx)
    theta = np.arccos(cos_t)
    # |f| <= 1 because the coefficients are L1-normalized
    f = (coefs[0] * np.cos(2.0 * phi + phases[0]) * sin_t ** 2
         + coefs[1] * np.cos(3.0 * phi + phases[1]) * sin_t ** 3
         + coefs[2] * np.cos(2.0 * theta + phases[2]))
    return d, 1.0 + spec.blob_amplitude * f


def shape_mask(spec):
    dx, dy, dz = _grid(spec)
    rx, ry, rz = spec.effective_radii()
    if spec.shape == PhantomShape.BLOB.value:
        d, scale = _blob_perturbation(spec, dx, dy, dz)
        inside = d <= rx * scale
    else:
        inside = (dx / rx) ** 2 + (dy / ry) ** 2 + (dz / rz) ** 2 <= 1.0
    return Volume(inside.astype(np.float64), spec.spacing)


def blur_passes(fuzz_sigma):
    """Number of 3-wide box passes whose summed variance best matches fuzz_sigma^2."""
    return int(math.floor(fuzz_sigma ** 2 / BOX_PASS_VARIANCE + 0.5))


def generate(spec):
    spec.validate()
    mask = shape_mask(spec)
    bg, fg = (float(c) for c in spec.contrast)
    # blur the offset from background so zero padding matches the background level
    offset = Volume((fg - bg) * mask.data, spec.spacing)
    kernel = box_kernel()
    for _ in range(blur_passes(spec.fuzz_sigma)):
        offset = convolve3(offset, kernel, PaddingMode.ZERO_PAD)
    image = bg + offset.data
    if spec.noise_sigma > 0:
        rng = commons.make_rng(spec.seed, 2)
        image = image + spec.noise_sigma * commons.box_muller(rng, image.shape)
    return Sample(Volume(image, spec.spacing), mask, spec)


def jitter_spec(template, rng, radius_jitter=0.25, center_jitter=2.0):
    if template.shape == PhantomShape.ELLIPSOID.value:
        factors = rng.uniform(1.0 - radius_jitter, 1.0 + radius_jitter, 3)
    else:
        factors = np.repeat(rng.uniform(1.0 - radius_jitter, 1.0 + radius_jitter), 3)
    radii = tuple(float(r * s) for r, s in zip(template.radii, factors))
    center = tuple(float(c + o) for c, o in zip(template.center, rng.uniform(-center_jitter, center_jitter, 3)))
    return replace(template, radii=radii, center=center,
                   shape_seed=int(rng.integers(0, 2 ** 63)),
                   seed=int(rng.integers(0, 2 ** 63)))


def generate_dataset(n, template, seed, radius_jitter=0.25, center_jitter=2.0, max_retries=100):
    if n < 1:
        raise PhantomSpecError("dataset size must be >= 1")
    samples = []
    for i in range(n):
        rng = commons.make_rng(seed, i)
        for attempt in range(max_retries):
            spec = jitter_spec(template, rng, radius_jitter, center_jitter)
            try:
                spec.validate()
                break
            except PhantomSpecError:
                logger.debug("case %d: jitter attempt %d violated margins", i, attempt)
        else:
            raise PhantomSpecError(
                "could not place case {} inside the margins after {} attempts".format(i, max_retries))
        sample = generate(spec)
        samples.append(replace(sample, case_id="case{:03d}".format(i)))
    return samples

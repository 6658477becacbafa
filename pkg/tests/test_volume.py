import math

import numpy as np
import pytest

import volume
from volume import DimensionMismatchError, Kernel3, Volume, VolumeError


def test_create_fills_and_orders_dims():
    v = volume.create((2, 2, 2), (1, 1, 1), 0)
    assert v.size == 8
    assert np.all(v.data == 0.0)

    v = volume.create((3, 1, 1), (1, 1, 1), 2.5)
    assert v.dims == (3, 1, 1)
    assert v.data.shape == (1, 1, 3)
    assert list(v.flat()) == [2.5, 2.5, 2.5]


@pytest.mark.parametrize("dims", [(0, 2, 2), (2, -1, 2), (2, 2)])
def test_create_rejects_bad_dims(dims):
    with pytest.raises(VolumeError):
        volume.create(dims)


def test_create_rejects_bad_spacing_and_fill():
    with pytest.raises(VolumeError):
        volume.create((2, 2, 2), (1.0, 0.0, 1.0))
    with pytest.raises(VolumeError):
        volume.create((2, 2, 2), fill=float("nan"))


def test_flat_layout_is_x_fastest():
    nx, ny, nz = 4, 3, 2
    v = volume.from_flat(np.arange(nx * ny * nz), (nx, ny, nz))
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                assert v[x, y, z] == x + nx * (y + ny * z)


def test_volume_is_read_only_and_finite():
    v = volume.create((2, 2, 2))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1.0
    with pytest.raises(VolumeError):
        Volume(np.full((2, 2, 2), np.inf))


def test_axpy_examples(rng):
    v = Volume(rng.normal(size=(3, 4, 5)))
    zeros = volume.zeros_like(v)
    assert np.array_equal(volume.axpy(1, zeros, v).data, v.data)
    assert np.all(volume.axpy(-1, v, v).data == 0.0)
    ones = volume.create((2, 2, 2), fill=1.0)
    assert np.all(volume.axpy(2, ones, ones).data == 3.0)


def test_norm_and_dot_examples():
    assert volume.l2_norm(volume.create((3, 3, 3))) == 0.0
    v = volume.create((3, 3, 3)).data.copy()
    v[1, 2, 0] = -3.0
    assert volume.l2_norm(Volume(v)) == 3.0
    assert volume.l2_norm(volume.create((4, 4, 4), fill=0.5)) == 4.0

    ones = volume.create((2, 2, 2), fill=1.0)
    assert volume.dot(ones, volume.zeros_like(ones)) == 0.0
    assert volume.dot(ones, ones) == 8.0


def test_mismatched_dims_raise():
    a = volume.create((2, 2, 2))
    b = volume.create((2, 2, 3))
    with pytest.raises(DimensionMismatchError):
        volume.dot(a, b)
    with pytest.raises(DimensionMismatchError):
        volume.axpy(1.0, a, b)


def test_threshold_is_inclusive():
    v = Volume(np.array([0.49, 0.5, 0.51]).reshape(1, 1, 3))
    assert list(volume.threshold(v, 0.5).flat()) == [0.0, 1.0, 1.0]
    uniform = volume.create((2, 2, 2), fill=0.7)
    assert np.all(volume.threshold(uniform, 0.5).data == 1.0)
    assert np.all(volume.threshold(uniform, 0.9).data == 0.0)
    with pytest.raises(VolumeError):
        volume.threshold(uniform, math.inf)


def test_binary_helpers():
    mask = Volume(np.array([0.0, 1.0, 1.0, 0.0]).reshape(1, 2, 2))
    assert volume.is_binary(mask)
    assert volume.foreground_count(mask) == 2
    assert list(volume.complement(mask).flat()) == [1.0, 0.0, 0.0, 1.0]
    with pytest.raises(VolumeError):
        volume.check_binary(Volume(np.full((1, 1, 2), 0.5)))


def test_kernel_offsets_and_symmetry(rng):
    w = rng.normal(size=(3, 3, 3))
    k = Kernel3(w)
    assert k.at(1, 0, -1) == w[0, 1, 2]
    offsets = list(k.offsets())
    assert len(offsets) == 27
    assert offsets[0][:3] == (-1, -1, -1)
    assert offsets[1][:3] == (0, -1, -1)
    assert offsets[13][:3] == (0, 0, 0)
    assert not k.is_point_symmetric()
    assert Kernel3(w + w[::-1, ::-1, ::-1]).is_point_symmetric()
    with pytest.raises(VolumeError):
        Kernel3(np.ones((3, 3)))


@pytest.mark.parametrize("shape", [(1, 1, 1), (3, 4, 5), (7, 7, 7), (16, 16, 16), (2, 16, 9)])
def test_norm_squared_is_self_dot(rng, shape):
    v = Volume(rng.normal(size=shape))
    assert volume.l2_norm(v) ** 2 == pytest.approx(volume.dot(v, v), rel=1e-12)
    assert volume.l2_norm(v) >= 0.0


def test_dot_is_symmetric(rng):
    for _ in range(10):
        a = Volume(rng.normal(size=(5, 5, 5)))
        b = Volume(rng.normal(size=(5, 5, 5)))
        assert volume.dot(a, b) == pytest.approx(volume.dot(b, a), rel=1e-15, abs=1e-15)


@pytest.mark.parametrize("t", [0.3, 0.5, 1.0])
def test_threshold_is_idempotent(rng, t):
    v = Volume(rng.random((4, 5, 6)))
    once = volume.threshold(v, t)
    assert volume.is_binary(once)
    assert np.array_equal(volume.threshold(once, t).data, once.data)
    mask = volume.threshold(v, 0.5)
    assert np.array_equal(volume.threshold(mask, 0.5).data, mask.data)

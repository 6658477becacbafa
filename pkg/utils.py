import os
import sys
import json
import struct
import logging

import numpy as np
import torch

from volume import Volume

MATPLOTLIB_FLAG = False

logging.basicConfig(stream=sys.stdout, level=logging.INFO)
logger = logging


VOL3_MAGIC = b"VOL3\x00\x00\x00\x01"
VOL3_HEADER = struct.Struct("<8s3I3dI")
VOL3_DTYPES = {1: np.dtype("<f8")}


class ConfigError(ValueError):
    pass


class VolumeFormatError(ValueError):
    pass


class MagicMismatchError(VolumeFormatError):
    pass


class TruncatedPayloadError(VolumeFormatError):
    pass


class UnsupportedDtypeError(VolumeFormatError):
    pass


def write_volume(path, v):
    """8-byte magic, 3 x uint32 dims, 3 x float64 spacing, uint32 dtype code, float64 payload; all little-endian, x-fastest."""
    header = VOL3_HEADER.pack(VOL3_MAGIC, *v.dims, *v.spacing, 1)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())


def read_volume(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(VOL3_MAGIC) or blob[:len(VOL3_MAGIC)] != VOL3_MAGIC:
        raise MagicMismatchError("{} is not a VOL3 file (bad magic)".format(path))
    if len(blob) < VOL3_HEADER.size:
        raise TruncatedPayloadError("{}: header is truncated".format(path))
    _, nx, ny, nz, sx, sy, sz, dtype_code = VOL3_HEADER.unpack_from(blob)
    if dtype_code not in VOL3_DTYPES:
        raise UnsupportedDtypeError("{}: unsupported dtype code {}".format(path, dtype_code))
    dtype = VOL3_DTYPES[dtype_code]
    expected = nx * ny * nz * dtype.itemsize
    payload = blob[VOL3_HEADER.size:]
    if len(payload) != expected:
        raise TruncatedPayloadError("{}: payload has {} bytes, header promises {}".format(path, len(payload), expected))
    data = np.frombuffer(payload, dtype=dtype).astype(np.float64).reshape(nz, ny, nx)
    return Volume(data, (sx, sy, sz))


def scale_to_uint8(arr, signed=False):
    """Min-max to [0, 255]; signed scaling maps 0 to mid-gray and +-max|v| to the ends."""
    arr = np.asarray(arr, dtype=np.float64)
    if signed:
        peak = float(np.abs(arr).max())
        if peak == 0.0:
            return np.full(arr.shape, 128, dtype=np.uint8)
        scaled = 127.5 + 127.5 * arr / peak
    else:
        lo, hi = float(arr.min()), float(arr.max())
        if hi == lo:
            return np.zeros(arr.shape, dtype=np.uint8)
        scaled = 255.0 * (arr - lo) / (hi - lo)
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def write_pgm(path, img):
    """Binary P5 greymap, max value 255. img: [rows, cols] uint8."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    rows, cols = img.shape
    with open(path, "wb") as f:
        f.write("P5\n{} {}\n255\n".format(cols, rows).encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        blob = f.read()
    magic, size, _, payload = blob.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError("{} is not a binary PGM".format(path))
    cols, rows = (int(s) for s in size.split())
    return np.frombuffer(payload, dtype=np.uint8)[:rows * cols].reshape(rows, cols)


def save_checkpoint(net, step, checkpoint_path, config=None):
    logger.info("Saving model state at step {} to {}".format(step, checkpoint_path))
    torch.save({'model': net.state_dict(),
                'hidden_channels': net.hidden_channels,
                'step': step,
                'config': config}, checkpoint_path)


def load_checkpoint(checkpoint_path, net_cls):
    if not os.path.isfile(checkpoint_path):
        raise FileNotFoundError("checkpoint {} does not exist".format(checkpoint_path))
    checkpoint_dict = torch.load(checkpoint_path, map_location='cpu')
    net = net_cls(hidden_channels=checkpoint_dict['hidden_channels'])
    net.set_params(checkpoint_dict['model'])
    logger.info("Loaded checkpoint '{}' (step {})".format(checkpoint_path, checkpoint_dict['step']))
    return net, checkpoint_dict['step'], checkpoint_dict.get('config')


def summarize(writer, global_step, scalars={}, images={}):
    for k, v in scalars.items():
        writer.add_scalar(k, v, global_step)
    for k, v in images.items():
        writer.add_image(k, v, global_step, dataformats='HWC')


def plot_slice_to_numpy(slice2d, title=None):
    global MATPLOTLIB_FLAG
    if not MATPLOTLIB_FLAG:
        import matplotlib
        matplotlib.use("Agg")
        MATPLOTLIB_FLAG = True
        mpl_logger = logging.getLogger('matplotlib')
        mpl_logger.setLevel(logging.WARNING)
    import matplotlib.pylab as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(slice2d, origin="lower", interpolation='none', cmap="gray")
    fig.colorbar(im, ax=ax)
    if title is not None:
        ax.set_title(title)
    plt.xlabel("x")
    plt.ylabel("y")
    plt.tight_layout()

    fig.canvas.draw()
    data = np.asarray(fig.canvas.buffer_rgba())[..., :3].copy()
    plt.close(fig)
    return data


def check_keys(config, schema, path=""):
    """Reject keys the schema does not know. schema maps key -> None (leaf) or a nested schema dict."""
    if not isinstance(config, dict):
        raise ConfigError("{} must be an object".format(path or "config"))
    for k, v in config.items():
        dotted = "{}.{}".format(path, k) if path else k
        if k not in schema:
            raise ConfigError("unknown config key '{}'".format(dotted))
        if isinstance(schema[k], dict):
            check_keys(v, schema[k], dotted)


def get_hparams_from_file(config_path, schema=None):
    with open(config_path, "r", encoding="utf-8") as f:
        data = f.read()
    config = json.loads(data)
    if schema is not None:
        check_keys(config, schema)

    hparams = HParams(**config)
    return hparams


def get_logger(model_dir, filename="train.log"):
    global logger
    logger = logging.getLogger(os.path.basename(os.path.normpath(model_dir)))
    logger.setLevel(logging.DEBUG)

    formatter = logging.Formatter("%(asctime)s\t%(name)s\t%(levelname)s\t%(message)s")
    if not os.path.exists(model_dir):
        os.makedirs(model_dir)
    target = os.path.abspath(os.path.join(model_dir, filename))
    if not any(getattr(h, "baseFilename", None) == target for h in logger.handlers):
        h = logging.FileHandler(target, encoding="utf-8")
        h.setLevel(logging.DEBUG)
        h.setFormatter(formatter)
        logger.addHandler(h)
    return logger


class HParams():
    def __init__(self, **kwargs):
        for k, v in kwargs.items():
            if type(v) == dict:
                v = HParams(**v)
            self[k] = v

    def keys(self):
        return self.__dict__.keys()

    def items(self):
        return self.__dict__.items()

    def values(self):
        return self.__dict__.values()

    def get(self, key, default=None):
        return self.__dict__.get(key, default)

    def to_dict(self):
        return {k: v.to_dict() if isinstance(v, HParams) else v for k, v in self.items()}

    def __len__(self):
        return len(self.__dict__)

    def __getitem__(self, key):
        return getattr(self, key)

    def __setitem__(self, key, value):
        return setattr(self, key, value)

    def __contains__(self, key):
        return key in self.__dict__

    def __repr__(self):
        return self.__dict__.__repr__()

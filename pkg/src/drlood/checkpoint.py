"""Binary checkpoints for :class:`~drlood.numerics.MLPNetwork`.

Layout (all integers uint64 little-endian, all reals float64 little-endian)::

    b"DRLCKPT1"
    layer_count
    per layer: rows, cols, rows*cols weight entries (row-major), cols bias entries

``rows`` is the layer's fan-in and ``cols`` its fan-out. Round trips are
bit-exact.
"""
import hashlib
import struct

import numpy as np

from drlood.errors import DRLError
from drlood.numerics import MLPNetwork

MAGIC = b"DRLCKPT1"
META_MAGIC = b"DRLMETA1"
_U64 = struct.Struct("<Q")


class CheckpointError(DRLError):
    pass


def _floats(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def checkpoint_bytes(net):
    parts = [MAGIC, _U64.pack(len(net.weights))]
    for w, b in zip(net.weights, net.biases):
        rows, cols = w.shape
        parts += [_U64.pack(rows), _U64.pack(cols), _floats(w), _floats(b)]
    return b"".join(parts)


class _Reader:
    def __init__(self, data, what):
        self.data, self.pos, self.what = data, 0, what

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.what}: truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self):
        return _U64.unpack(self.take(8))[0]

    def floats(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def done(self):
        if self.pos != len(self.data):
            raise CheckpointError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")


def net_from_bytes(data):
    r = _Reader(data, "checkpoint")
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a DRLCKPT1 checkpoint")
    weights, biases = [], []
    for _ in range(r.u64()):
        rows, cols = r.u64(), r.u64()
        weights.append(r.floats(rows * cols).reshape(rows, cols))
        biases.append(r.floats(cols))
    r.done()
    return MLPNetwork(weights, biases)


def save_checkpoint(net, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(net))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return net_from_bytes(fh.read())


def checkpoint_sha256(net):
    return hashlib.sha256(checkpoint_bytes(net)).hexdigest()


def save_metadata(path, num_classes, input_dim, seed, sigma):
    """Sidecar for a pretrained model: K, input dim, seed, then the K*K covariance."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (num_classes, num_classes):
        raise CheckpointError(f"covariance shape {sigma.shape} does not match K={num_classes}")
    with open(path, "wb") as fh:
        fh.write(META_MAGIC + _U64.pack(num_classes) + _U64.pack(input_dim) + _U64.pack(seed)
                 + _floats(sigma))


def load_metadata(path):
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), "metadata")
    if r.take(len(META_MAGIC)) != META_MAGIC:
        raise CheckpointError("not a DRLMETA1 sidecar")
    k, dim, seed = r.u64(), r.u64(), r.u64()
    sigma = r.floats(k * k).reshape(k, k)
    r.done()
    return {"num_classes": k, "input_dim": dim, "seed": seed, "sigma": sigma}

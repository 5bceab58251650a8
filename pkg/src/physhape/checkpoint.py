"""Binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"PHY3"
    version u32      currently 1
    count   u32      number of named tensors
    per tensor:
        name_len u16, name utf-8
        rank     u8
        dims     u64 * rank
        data     float64 little-endian, row-major

Round-trips are bit-exact; tensors are stored in sorted name order so a
container's bytes are a pure function of its contents.
"""

import struct

import numpy as np

from .errors import IoError

MAGIC = b"PHY3"
VERSION = 1


def save_tensors(path, tensors):
    blobs = []
    for name in sorted(tensors):
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d;
        # tobytes() below already emits C order for any layout
        arr = np.asarray(tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
        head += struct.pack("<%dQ" % arr.ndim, *arr.shape)
        blobs.append(head + arr.tobytes())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for b in blobs:
            f.write(b)


def load_tensors(path):
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise IoError("cannot read checkpoint %s: %s" % (path, e))
    if buf[:4] != MAGIC:
        raise IoError("%s: bad magic, not a checkpoint file" % path)
    ver, count = struct.unpack_from("<II", buf, 4)
    if ver != VERSION:
        raise IoError("%s: unsupported version %d" % (path, ver))
    off = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off: off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from("<%dQ" % rank, buf, off)
            off += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=off)
            off += 8 * size
            out[name] = arr.reshape(dims).copy()
    except (struct.error, ValueError) as e:
        raise IoError("%s: truncated or corrupt container (%s)" % (path, e))
    if off != len(buf):
        raise IoError("%s: %d trailing bytes" % (path, len(buf) - off))
    return out

"""Binary serialization of TwoLayerMaps.

Layout (little-endian throughout):
  magic   4 bytes  "SOPM"
  version u16      currently 1
  width   u16
  height  u16
  count   u16      number of channel planes
  table   count x (u8 name length + ASCII name)
  planes  count x (height*width float32, row-major)
  crc     u32      zlib CRC32 over all preceding bytes

Channel order is fixed (see CHANNELS); mask and the three q_valid planes
store 0.0/1.0. Floats are full f32 so residual goldens stay exact.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .layers import TwoLayerMaps

MAGIC = b"SOPM"
VERSION = 1

CHANNELS = (
    "mask",
    "depth",
    "p0_x", "p0_y", "p0_z",
    "q0_x_a", "q0_x_b",
    "q0_y_a", "q0_y_b",
    "q0_z_a", "q0_z_b",
    "q_valid_x", "q_valid_y", "q_valid_z",
)


class MapFileError(ValueError):
    """Malformed map file (bad magic, table, size or CRC)."""


def _planes_from_maps(maps: TwoLayerMaps):
    yield maps.mask.astype(np.float32)
    yield maps.depth.astype(np.float32)
    for i in range(3):
        yield maps.p0[..., i].astype(np.float32)
    for axis in range(3):
        for j in range(2):
            yield maps.q0[..., axis, j].astype(np.float32)
    for axis in range(3):
        yield maps.q_valid[..., axis].astype(np.float32)


def encode_maps(maps: TwoLayerMaps) -> bytes:
    head = bytearray()
    head += MAGIC
    head += struct.pack("<HHHH", VERSION, maps.width, maps.height, len(CHANNELS))
    for name in CHANNELS:
        raw = name.encode("ascii")
        head += struct.pack("<B", len(raw)) + raw
    body = b"".join(
        np.ascontiguousarray(plane, dtype="<f4").tobytes()
        for plane in _planes_from_maps(maps)
    )
    payload = bytes(head) + body
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode_maps(data: bytes) -> TwoLayerMaps:
    if len(data) < 16:
        raise MapFileError("file too short")
    if data[:4] != MAGIC:
        raise MapFileError(f"bad magic {data[:4]!r}")
    version, width, height, count = struct.unpack_from("<HHHH", data, 4)
    if version != VERSION:
        raise MapFileError(f"unsupported version {version}")
    off = 12
    names = []
    for _ in range(count):
        (ln,) = struct.unpack_from("<B", data, off)
        off += 1
        names.append(data[off : off + ln].decode("ascii"))
        off += ln
    if tuple(names) != CHANNELS:
        raise MapFileError("channel table does not match the expected layout")

    plane_bytes = width * height * 4
    need = off + count * plane_bytes + 4
    if len(data) != need:
        raise MapFileError(f"size mismatch: have {len(data)}, expected {need}")
    (crc_stored,) = struct.unpack_from("<I", data, need - 4)
    if zlib.crc32(data[: need - 4]) != crc_stored:
        raise MapFileError("CRC mismatch")

    planes = {}
    for name in names:
        arr = np.frombuffer(data, dtype="<f4", count=width * height, offset=off)
        planes[name] = arr.reshape(height, width).astype(np.float64)
        off += plane_bytes

    q0 = np.stack(
        [
            np.stack([planes[f"q0_{ax}_a"], planes[f"q0_{ax}_b"]], axis=-1)
            for ax in ("x", "y", "z")
        ],
        axis=-2,
    )
    q_valid = np.stack(
        [planes[f"q_valid_{ax}"] > 0.5 for ax in ("x", "y", "z")], axis=-1
    )
    return TwoLayerMaps(
        width=width,
        height=height,
        mask=planes["mask"] > 0.5,
        depth=planes["depth"],
        p0=np.stack([planes["p0_x"], planes["p0_y"], planes["p0_z"]], axis=-1),
        q0=q0,
        q_valid=q_valid,
    )


def atomic_write_bytes(path, data: bytes):
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_maps(maps: TwoLayerMaps, path) -> None:
    atomic_write_bytes(path, encode_maps(maps))


def read_maps(path) -> TwoLayerMaps:
    return decode_maps(Path(path).read_bytes())

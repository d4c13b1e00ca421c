"""Minimal MRPW container writer/reader shared by the fixture scripts."""

import json
import struct
import zlib

import numpy as np

MAGIC = b"MRPW"
VERSION = 1


def encode(manifest: dict, entries: list) -> bytes:
    manifest_bytes = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    payload = bytearray(manifest_bytes)
    for name, array in entries:
        array = np.ascontiguousarray(array, dtype="<f4")
        raw_name = name.encode("utf-8")
        payload += struct.pack("<I", len(raw_name)) + raw_name
        payload += struct.pack("<I", array.ndim)
        payload += struct.pack(f"<{array.ndim}I", *array.shape)
        payload += array.tobytes()
    header = MAGIC + struct.pack(
        "<IIII", VERSION, zlib.crc32(bytes(payload)) & 0xFFFFFFFF, len(entries), len(manifest_bytes)
    )
    return header + bytes(payload)


def write(path, manifest: dict, entries: list) -> None:
    with open(path, "wb") as f:
        f.write(encode(manifest, entries))

#!/usr/bin/env python3
"""Writes the golden container files with a writer independent of the C++ code."""
import struct
from pathlib import Path

here = Path(__file__).resolve().parent


def bsg1(dtype, dims, values):
    out = b"BSG1" + struct.pack("<BB", dtype, len(dims)) + struct.pack("<%dI" % len(dims), *dims)
    if dtype == 0:
        out += struct.pack("<%df" % len(values), *values)
    else:
        out += bytes(values)
    return out


tensor_values = [0.0, 1.0, -2.5, 3.25, 1e-3, -0.0, 65504.0, 0.1, -7.75, 2.0 ** -20, 123.456, -1.0]
(here / "tensor_f32.bsg1").write_bytes(bsg1(0, [1, 2, 2, 3], tensor_values))
(here / "mask_u8.bsg1").write_bytes(bsg1(1, [1, 1, 3, 4], [0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 1, 0]))

records = [("a", [1, 1, 1, 2], [1.5, -2.0]), ("b.w", [2, 1, 1, 1], [0.25, 4.0])]
ck = b"BSCK" + struct.pack("<I", len(records))
for name, dims, vals in records:
    nb = name.encode("utf-8")
    ck += struct.pack("<H", len(nb)) + nb + bsg1(0, dims, vals)
(here / "checkpoint.bsck").write_bytes(ck)
(here / "empty.bsck").write_bytes(b"BSCK" + struct.pack("<I", 0))

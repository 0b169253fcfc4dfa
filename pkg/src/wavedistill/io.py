"""On-disk formats: WDT1 tensors, 8-bit PGM images, key/value manifests, CSV."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

WDT1_MAGIC = b"WDT1"


def encode_wdt1(array):
    """Serialize an array as ``WDT1 | u8 rank | u32 extents (LE) | float64 payload (LE)``."""
    a = np.asarray(array, dtype="<f8")
    if a.ndim > 255:
        raise ValueError("rank exceeds 255")
    header = WDT1_MAGIC + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a).tobytes()


def decode_wdt1(buf):
    if buf[:4] != WDT1_MAGIC:
        raise ValueError(f"bad magic {buf[:4]!r}, expected {WDT1_MAGIC!r}")
    rank = buf[4]
    shape = struct.unpack(f"<{rank}I", buf[5:5 + 4 * rank])
    start = 5 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    payload = buf[start:]
    if len(payload) != 8 * count:
        raise ValueError(f"payload of {len(payload)} bytes does not match shape {shape}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def save_wdt1(path, array):
    Path(path).write_bytes(encode_wdt1(array))


def load_wdt1(path):
    return decode_wdt1(Path(path).read_bytes())


def write_pgm(path, img):
    """Write a 2-d array as binary 8-bit PGM, rounding and clipping to [0, 255]."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ValueError(f"PGM needs a single grayscale plane, got shape {a.shape}")
    px = np.clip(np.rint(a), 0, 255).astype(np.uint8)
    h, w = px.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes())


def read_pgm(path):
    """Read a binary 8-bit PGM into a float64 ``[H, W]`` array."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pos += 1
    px = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8)
    if px.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return px.reshape(h, w).astype(np.float64)


def write_manifest(path, items):
    """Plain-text ``key = value`` lines, in the given order."""
    lines = [f"{k} = {v}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path):
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def write_csv(path, header, rows):
    """Comma-separated, header row, UTF-8, LF line endings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))

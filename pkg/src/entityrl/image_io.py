"""PPM (P6/P3) and minimal PNG image I/O for (H, W, 3) uint8 arrays."""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np


def _check_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {img.shape} {img.dtype}")
    return img


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    """Binary P6, maxval 255."""
    img = _check_rgb(img)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] not in (b"P6", b"P3"):
        raise ValueError(f"{path}: not a P6/P3 PPM file")
    binary = blob[:2] == b"P6"
    # header: magic, width, height, maxval; comments allowed anywhere between tokens
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    if binary:
        pos += 1  # single whitespace after maxval
        data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    else:
        values = blob[pos:].split()
        data = np.array([int(v) for v in values[: w * h * 3]], dtype=np.uint8)
    return data.reshape(h, w, 3).copy()


def write_png(path: str | Path, img: np.ndarray) -> None:
    """8-bit RGB PNG, filter 0, single IDAT."""
    img = _check_rgb(img)
    h, w = img.shape[:2]
    raw = b"".join(b"\x00" + img[y].tobytes() for y in range(h))
    out = [b"\x89PNG\r\n\x1a\n"]
    out.append(_chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)))
    out.append(_chunk(b"IDAT", zlib.compress(raw, 9)))
    out.append(_chunk(b"IEND", b""))
    Path(path).write_bytes(b"".join(out))


def _chunk(tag: bytes, payload: bytes) -> bytes:
    body = tag + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))


def read_png(path: str | Path) -> np.ndarray:
    """Decode 8-bit grayscale/RGB/RGBA non-interlaced PNG to (H, W, 3)."""
    blob = Path(path).read_bytes()
    if blob[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError(f"{path}: not a PNG file")
    pos = 8
    width = height = bit_depth = color_type = None
    idat = b""
    while pos < len(blob):
        (length,) = struct.unpack_from(">I", blob, pos)
        tag = blob[pos + 4:pos + 8]
        payload = blob[pos + 8:pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, bit_depth, color_type, _, _, interlace = struct.unpack(">IIBBBBB", payload)
            if bit_depth != 8 or interlace != 0:
                raise ValueError(f"{path}: only 8-bit non-interlaced PNG supported")
            if color_type not in (0, 2, 6):
                raise ValueError(f"{path}: unsupported color type {color_type}")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if width is None:
        raise ValueError(f"{path}: missing IHDR")
    channels = {0: 1, 2: 3, 6: 4}[color_type]
    raw = zlib.decompress(idat)
    stride = width * channels
    img = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.intp)
    offset = 0
    for y in range(height):
        filter_type = raw[offset]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=offset + 1).astype(np.intp)
        offset += 1 + stride
        if filter_type == 0:
            recon = line
        elif filter_type == 1:
            recon = line.copy()
            for x in range(channels, stride):
                recon[x] = (recon[x] + recon[x - channels]) & 0xFF
        elif filter_type == 2:
            recon = (line + prev) & 0xFF
        elif filter_type == 3:
            recon = line.copy()
            for x in range(stride):
                left = recon[x - channels] if x >= channels else 0
                recon[x] = (recon[x] + (left + prev[x]) // 2) & 0xFF
        elif filter_type == 4:
            recon = line.copy()
            for x in range(stride):
                left = recon[x - channels] if x >= channels else 0
                up_left = prev[x - channels] if x >= channels else 0
                recon[x] = (recon[x] + _paeth(left, prev[x], up_left)) & 0xFF
        else:
            raise ValueError(f"{path}: bad filter type {filter_type}")
        img[y] = recon.astype(np.uint8)
        prev = recon
    pixels = img.reshape(height, width, channels)
    if channels == 1:
        return np.repeat(pixels, 3, axis=2)
    return pixels[:, :, :3].copy()


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def read_image(path: str | Path) -> np.ndarray:
    """Dispatch on extension/magic: .ppm or .png to (H, W, 3) uint8."""
    head = Path(path).open("rb").read(8)
    if head[:2] in (b"P6", b"P3"):
        return read_ppm(path)
    if head == b"\x89PNG\r\n\x1a\n":
        return read_png(path)
    raise ValueError(f"{path}: unrecognized image format (PPM/PNG supported)")

"""Image container and byte-level codecs.

Two formats are supported end to end:

* PPM (P6, maxval 255), bit-exact per the PPM specification.
* raw-f32: 16-byte header (magic ``AIMR``, u32 height, u32 width,
  u32 channels, little-endian) followed by height*width*channels
  little-endian 32-bit floats.

Datasets are described by a JSON manifest: a list of {"path", "label"}.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RAW_MAGIC = b"AIMR"


class ImageFormatError(Exception):
    """Malformed header, truncated payload, or unsupported variant."""


@dataclass
class Image:
    pixels: np.ndarray  # [height, width, 3] floats in [0, 1]

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ImageFormatError(f"expected [h, w, 3] pixels, got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _ppm_tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping # comments."""
    i = 0
    while True:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            return
        yield data[start:i], i


def decode_image(payload: bytes, fmt: str) -> Image:
    if fmt == "ppm-p6":
        return _decode_ppm(payload)
    if fmt == "raw-f32":
        return _decode_raw(payload)
    raise ImageFormatError(f"unsupported format {fmt!r}")


def _decode_ppm(payload: bytes) -> Image:
    toks = []
    end = 0
    for tok, pos in _ppm_tokens(payload):
        toks.append(tok)
        end = pos
        if len(toks) == 4:
            break
    if len(toks) < 4:
        raise ImageFormatError("malformed-header: incomplete PPM header")
    if toks[0] != b"P6":
        raise ImageFormatError(f"malformed-header: not a P6 file ({toks[0]!r})")
    try:
        width, height, maxval = (int(t) for t in toks[1:4])
    except ValueError:
        raise ImageFormatError("malformed-header: non-numeric PPM dimensions") from None
    if width < 1 or height < 1:
        raise ImageFormatError("malformed-header: non-positive PPM dimensions")
    if maxval != 255:
        raise ImageFormatError(f"unsupported-maxval: {maxval} (only 255 supported)")
    body = payload[end + 1 :]  # exactly one whitespace byte after maxval
    need = width * height * 3
    if len(body) < need:
        raise ImageFormatError(f"truncated-payload: need {need} bytes, have {len(body)}")
    raw = np.frombuffer(body[:need], dtype=np.uint8).reshape(height, width, 3)
    return Image(raw.astype(np.float32) / 255.0)


def _decode_raw(payload: bytes) -> Image:
    if len(payload) < 16:
        raise ImageFormatError("malformed-header: raw-f32 header is 16 bytes")
    if payload[:4] != RAW_MAGIC:
        raise ImageFormatError(f"malformed-header: bad magic {payload[:4]!r}")
    height, width, channels = struct.unpack("<III", payload[4:16])
    if channels != 3:
        raise ImageFormatError(f"unsupported-channel-count: {channels}")
    if height < 1 or width < 1:
        raise ImageFormatError("malformed-header: non-positive dimensions")
    need = height * width * channels * 4
    body = payload[16:]
    if len(body) < need:
        raise ImageFormatError(f"truncated-payload: need {need} bytes, have {len(body)}")
    pixels = np.frombuffer(body[:need], dtype="<f4").reshape(height, width, channels)
    return Image(np.clip(pixels.astype(np.float32), 0.0, 1.0))


def encode_raw(img: Image) -> bytes:
    header = RAW_MAGIC + struct.pack("<III", img.height, img.width, 3)
    return header + img.pixels.astype("<f4").tobytes()


def encode_ppm(img: Image) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode()
    raw = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    return header + raw.tobytes()


def load_image(path: str | Path) -> Image:
    path = Path(path)
    data = path.read_bytes()
    fmt = "ppm-p6" if path.suffix == ".ppm" else "raw-f32"
    return decode_image(data, fmt)


def write_manifest(path: str | Path, entries: list[dict]) -> None:
    Path(path).write_text(json.dumps(entries, indent=1) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    entries = json.loads(Path(path).read_text())
    if not isinstance(entries, list) or not all(
        isinstance(e, dict) and "path" in e and "label" in e for e in entries
    ):
        raise ImageFormatError("manifest must be a JSON list of {path, label}")
    return entries


def load_dataset(manifest_path: str | Path) -> tuple[list[Image], np.ndarray]:
    """Load all images named by a manifest; paths are relative to it."""
    manifest_path = Path(manifest_path)
    entries = read_manifest(manifest_path)
    images = [load_image(manifest_path.parent / e["path"]) for e in entries]
    labels = np.array([int(e["label"]) for e in entries], dtype=np.int64)
    return images, labels

"""On-disk formats: the PUVD plane container, 8-bit PNG textures and
``section.key = value`` configuration files.

PUVD layout (all integers little-endian)::

    b"PUVD"
    u32 version (= 1)
    u32 H, u32 W                 image size; 0, 0 for non-image payloads
    u32 C                        number of planes
    C x { u16 name_len, name (UTF-8), u32 ndim, ndim x u32 dim }
    u32 meta_len, meta (UTF-8 JSON object, sorted keys)
    C planes, float32 row-major, in table order

Image planes are stored with shape ``(H, W)``.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np
from PIL import Image

from .errors import ConfigError, ContainerError, MissingArtifactError

MAGIC = b"PUVD"
VERSION = 1


def write_puvd(path, planes: dict, meta: dict | None = None, H: int = 0, W: int = 0) -> None:
    """Write named float planes (any shape) plus a JSON metadata block."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    parts = [MAGIC, struct.pack("<IIII", VERSION, H, W, len(planes))]
    arrays = []
    for name, arr in planes.items():
        arr = np.asarray(arr, dtype="<f4", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        arrays.append(arr)
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_raw)) + meta_raw)
    parts.extend(a.tobytes() for a in arrays)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_puvd(path):
    """Return ``(planes, meta, (H, W))``; planes come back as float32 arrays."""
    if not os.path.exists(path):
        raise MissingArtifactError(f"{path}: no such container")
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ContainerError(f"{path}: not a PUVD container")
    try:
        version, H, W, C = struct.unpack_from("<IIII", data, 4)
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported PUVD version {version}")
        pos = 20
        table = []
        for _ in range(C):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            table.append((name, shape))
        (mlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        meta = json.loads(data[pos:pos + mlen].decode("utf-8"))
        pos += mlen
        planes = {}
        for name, shape in table:
            count = int(np.prod(shape)) if shape else 1
            planes[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
            pos += 4 * count
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ContainerError(f"{path}: truncated or corrupt container ({exc})") from None
    return planes, meta, (H, W)


def texture_to_uint8(texture: np.ndarray) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8."""
    t = np.clip((np.asarray(texture, dtype=np.float64) + 1.0) * 127.5, 0, 255)
    return np.round(t).astype(np.uint8).transpose(1, 2, 0)


def write_png(path, texture: np.ndarray) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(texture_to_uint8(texture), mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """8-bit RGB PNG -> (3, H, W) float64 in [-1, 1]."""
    if not os.path.exists(path):
        raise MissingArtifactError(f"{path}: no such texture")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr.transpose(2, 0, 1) / 127.5 - 1.0


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``section.key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.count(".") != 1 or not all(key.split(".")):
            raise ConfigError(f"{source}:{lineno}: key {key!r} must look like section.key")
        out[key] = value
    return out


def read_config(path) -> dict:
    if not os.path.exists(path):
        raise MissingArtifactError(f"{path}: config file not found")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), str(path))


def write_kv(path, items: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in items.items():
            fh.write(f"{k}={v}\n")


def read_kv(path) -> dict:
    if not os.path.exists(path):
        raise MissingArtifactError(f"{path}: not found")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k] = v
    return out


def write_json(path, obj) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")

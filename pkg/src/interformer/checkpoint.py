"""Self-describing binary checkpoints.

Layout::

    b"IFCKPT\\n"
    uint32 LE header length, then that many bytes of UTF-8 ``key = value`` text
        (``format_version``, ``block.*`` config, any extra metadata)
    uint32 LE record count, then per record:
        uint32 name length, UTF-8 name
        uint32 rank, rank x uint32 extents
        prod(extents) little-endian float64 values

Records are parameters followed by buffers (names prefixed ``buffer:``), in
declaration order, so saving the same model twice yields identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import build_dataclass, format_lines, parse_lines
from .errors import ConfigError, ShapeMismatch
from .model import BlockConfig
from .params import named_buffers, named_parameters

MAGIC = b"IFCKPT\n"
FORMAT_VERSION = 1
BUFFER_PREFIX = "buffer:"


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def save_checkpoint(path: str | Path, config: BlockConfig, params, meta: dict | None = None) -> None:
    header = {"format_version": FORMAT_VERSION}
    header.update({f"block.{k}": v for k, v in config.to_dict().items()})
    header.update({f"meta.{k}": v for k, v in (meta or {}).items()})
    text = format_lines(header).encode()
    records = [(n, t.data) for n, t in named_parameters(params)]
    records += [(BUFFER_PREFIX + n, a) for n, a in named_buffers(params)]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_u32(len(text)))
        fh.write(text)
        fh.write(_u32(len(records)))
        for name, arr in records:
            raw = name.encode()
            fh.write(_u32(len(raw)))
            fh.write(raw)
            fh.write(_u32(arr.ndim))
            for s in arr.shape:
                fh.write(_u32(s))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_u32(buf: bytes, pos: int) -> tuple[int, int]:
    return struct.unpack_from("<I", buf, pos)[0], pos + 4


def load_checkpoint(path: str | Path) -> tuple[BlockConfig, dict[str, str], dict[str, np.ndarray]]:
    """Return ``(config, meta, records)``; records map name to array."""
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise ConfigError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    n, pos = _read_u32(buf, pos)
    header = parse_lines(buf[pos:pos + n].decode(), str(path))
    pos += n
    version = int(header.pop("format_version", "0"))
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    meta = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}
    config = build_dataclass(BlockConfig, {k: v for k, v in header.items() if k.startswith("block.")}, "block")
    count, pos = _read_u32(buf, pos)
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        ln, pos = _read_u32(buf, pos)
        name = buf[pos:pos + ln].decode()
        pos += ln
        rank, pos = _read_u32(buf, pos)
        shape = []
        for _ in range(rank):
            s, pos = _read_u32(buf, pos)
            shape.append(s)
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * size
        records[name] = arr
    return config, meta, records


def assign_records(params, records: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into an already-initialized bundle of matching structure."""
    targets = {n: t for n, t in named_parameters(params)}
    buffers = {BUFFER_PREFIX + n: a for n, a in named_buffers(params)}
    expected = set(targets) | set(buffers)
    if expected != set(records):
        missing = sorted(expected - set(records))
        extra = sorted(set(records) - expected)
        raise ShapeMismatch(f"checkpoint records do not match model: missing={missing[:3]} extra={extra[:3]}")
    for name, arr in records.items():
        dest = targets[name].data if name in targets else buffers[name]
        if dest.shape != arr.shape:
            raise ShapeMismatch(f"{name}: checkpoint shape {arr.shape} vs model {dest.shape}")
        dest[...] = arr

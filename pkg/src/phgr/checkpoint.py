"""Checkpoint = text manifest + one blob of little-endian float64.

Manifest lines are ``key = value``; parameter blocks appear as
``param.<name> = <shape>@<byte offset>`` (shape as ``AxB``).  The blob path
is stored relative to the manifest.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import format_value, parse_value
from .model import ModelConfig

FORMAT = "phgr-checkpoint/1"
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict, cfg: ModelConfig, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = path.with_suffix(path.suffix + ".bin")
    lines = [f"format = {FORMAT}", f"blob = {blob.name}", "dtype = float64-le"]
    for k, v in cfg.to_dict().items():
        lines.append(f"config.{k} = {format_value(v)}")
    for k, v in (meta or {}).items():
        lines.append(f"meta.{k} = {format_value(v)}")
    offset = 0
    with open(blob, "wb") as fh:
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype=_DTYPE)
            shape = "x".join(str(n) for n in arr.shape) or "scalar"
            lines.append(f"param.{name} = {shape}@{offset}")
            fh.write(arr.tobytes(order="C"))
            offset += arr.nbytes
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    entries = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CheckpointError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        entries[k.strip()] = v.strip()
    if entries.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {entries.get('format')!r}")
    return entries


def load_checkpoint(path):
    """Returns ``(params, ModelConfig, meta)``."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    entries = read_manifest(path)
    raw = (path.parent / entries["blob"]).read_bytes()
    params, cfg_kw, meta = {}, {}, {}
    for k, v in entries.items():
        if k.startswith("param."):
            shape_s, off = v.split("@")
            shape = () if shape_s == "scalar" else tuple(int(n) for n in shape_s.split("x"))
            count = int(np.prod(shape)) if shape else 1
            start = int(off)
            end = start + count * _DTYPE.itemsize
            if end > len(raw):
                raise CheckpointError(f"block {k} runs past the end of the blob")
            params[k[6:]] = np.frombuffer(raw[start:end], dtype=_DTYPE).reshape(shape).astype(np.float64)
        elif k.startswith("config."):
            cfg_kw[k[7:]] = parse_value(v)
        elif k.startswith("meta."):
            meta[k[5:]] = parse_value(v)
    for key in ("alpha", "zeta"):
        if cfg_kw.get(key) is not None:
            cfg_kw[key] = tuple(float(x) for x in np.atleast_1d(cfg_kw[key]))
    return params, ModelConfig(**cfg_kw), meta

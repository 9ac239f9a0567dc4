"""SFCK checkpoint container.

Layout (little-endian)::

    "SFCK" | version u32 | config length u32 | config UTF-8 text
    | block count u32 | blocks...

    block := name length u32 | name UTF-8 | TNSR block

Block names: ``param/<name>``, ``adam.m/<name>``, ``adam.v/<name>`` and
``state/step``, ``state/epoch``, ``state/rng`` (seed and epoch that
generate the next shuffle order).
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor
from ..tensor import FormatError

MAGIC = b"SFCK"
VERSION = 1


@dataclass
class Checkpoint:
    config_text: str
    params: dict
    adam_m: dict
    adam_v: dict
    step: int
    epoch: int
    rng_state: tuple = (0, 0)
    extra: dict = field(default_factory=dict)

    def blocks(self):
        for name, arr in self.params.items():
            yield f"param/{name}", arr
        for name in self.params:
            yield f"adam.m/{name}", self.adam_m.get(name, np.zeros_like(self.params[name]))
        for name in self.params:
            yield f"adam.v/{name}", self.adam_v.get(name, np.zeros_like(self.params[name]))
        yield "state/step", np.array([float(self.step)])
        yield "state/epoch", np.array([float(self.epoch)])
        yield "state/rng", np.array([float(v) for v in self.rng_state])
        for name, arr in self.extra.items():
            yield name, arr

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        cfg = self.config_text.encode("utf-8")
        blocks = list(self.blocks())
        buf.write(MAGIC)
        buf.write(struct.pack("<II", VERSION, len(cfg)))
        buf.write(cfg)
        buf.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            raw = name.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            tensor.write_tensor(buf, arr)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        buf = io.BytesIO(raw)

        def take(n):
            b = buf.read(n)
            if len(b) != n:
                raise FormatError("truncated checkpoint")
            return b

        if take(4) != MAGIC:
            raise FormatError("not an SFCK checkpoint")
        version, cfg_len = struct.unpack("<II", take(8))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        config_text = take(cfg_len).decode("utf-8")
        (count,) = struct.unpack("<I", take(4))
        params, m, v, state, extra = {}, {}, {}, {}, {}
        for _ in range(count):
            (n,) = struct.unpack("<I", take(4))
            name = take(n).decode("utf-8")
            arr = tensor.read_tensor(buf).array.copy()
            kind, _, key = name.partition("/")
            target = {"param": params, "adam.m": m, "adam.v": v, "state": state}.get(kind)
            if target is None:
                extra[name] = arr
            else:
                target[key] = arr
        if buf.read(1):
            raise FormatError("trailing bytes after checkpoint")
        try:
            step = int(state["step"][0])
            epoch = int(state["epoch"][0])
            rng_state = tuple(int(x) for x in state["rng"])
        except KeyError as exc:
            raise FormatError(f"checkpoint missing state block {exc}") from exc
        return cls(config_text, params, m, v, step, epoch, rng_state, extra)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name, suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(ckpt.to_bytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())

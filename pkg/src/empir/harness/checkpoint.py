"""Binary checkpoint container.

Layout (little-endian)::

    b"EMPR" | u32 version | u32 n | n bytes UTF-8 JSON header
    u32 record count
    per record: u32 name length | name | u32 ndim | ndim x u32 dims | float32 data

The JSON header carries the topology (input shape and layer list), the
QuantConfig, the member seed and free-form training metadata.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..quant import QuantConfig
from ..tensor.layers import Graph, layers_from_json, layers_to_json

MAGIC = b"EMPR"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    input_shape: tuple[int, ...]
    layers: list
    params: dict[str, np.ndarray]
    quant: QuantConfig = field(default_factory=QuantConfig)
    seed: int = 0
    metadata: dict = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_graph(cls, graph: Graph, metadata: dict | None = None) -> "Checkpoint":
        state = {k: np.asarray(v, dtype=np.float32) for k, v in graph.state_dict().items()}
        return cls(graph.input_shape, list(graph.layers), state, graph.quant or QuantConfig(), graph.seed, dict(metadata or {}))

    def to_graph(self) -> Graph:
        g = Graph(self.layers, self.input_shape, seed=self.seed, init=False)
        g.load_state_dict(self.params)
        if not self.quant.is_full_precision:
            g.quant = self.quant
        return g

    def header(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": layers_to_json(self.layers),
            "quant": {"weight_bits": self.quant.weight_bits, "activation_bits": self.quant.activation_bits},
            "seed": self.seed,
            "metadata": self.metadata,
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode()
        parts = [MAGIC, struct.pack("<II", self.version, len(head)), head, struct.pack("<I", len(self.params))]
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name], dtype="<f4")
            nb = name.encode()
            parts.append(struct.pack("<I", len(nb)) + nb)
            parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(arr.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if buf[:4] != MAGIC:
            raise CheckpointError("not an EMPR checkpoint (bad magic)")
        off = 4
        try:
            version, hlen = struct.unpack_from("<II", buf, off)
            off += 8
            if version != VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            head = json.loads(buf[off : off + hlen].decode())
            off += hlen
            (count,) = struct.unpack_from("<I", buf, off)
            off += 4
            params = {}
            for _ in range(count):
                (nlen,) = struct.unpack_from("<I", buf, off)
                off += 4
                name = buf[off : off + nlen].decode()
                off += nlen
                (ndim,) = struct.unpack_from("<I", buf, off)
                off += 4
                dims = struct.unpack_from(f"<{ndim}I", buf, off)
                off += 4 * ndim
                n = int(np.prod(dims)) if ndim else 1
                if off + 4 * n > len(buf):
                    raise CheckpointError(f"truncated record {name!r}")
                params[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims).astype(np.float32)
                off += 4 * n
        except struct.error as exc:
            raise CheckpointError(f"truncated checkpoint: {exc}") from None
        q = head.get("quant", {})
        return cls(
            tuple(head["input_shape"]),
            layers_from_json(head["layers"]),
            params,
            QuantConfig(q.get("weight_bits"), q.get("activation_bits")),
            head.get("seed", 0),
            head.get("metadata", {}),
            version,
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes())


def save_graph(graph: Graph, path, metadata: dict | None = None) -> Path:
    return Checkpoint.from_graph(graph, metadata).save(path)


def load_graph(path) -> Graph:
    return Checkpoint.load(path).to_graph()

"""
Binary checkpoints.

Layout (little-endian):
    header   "KGMX", u32 version, u32 model code, u64 |V|, u64 |R|, u32 n_v, u32 n_r, u32 epoch
    payload  float32 entity table, float32 relation table, float32 core (TuckER only), row-major
    trailer  u64 byte length + UTF-8 config echo (flat key = value text)
"""
import os
import struct
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..models import config
from ..models.schemas import TrainConfig
from .errors import CheckpointError, ConfigError
from .scoring import ModelParams

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<4sIIQQIII")
LENGTH = struct.Struct("<Q")
MODEL_CODES = {"distmult": 0, "tucker": 1}
FLOAT = np.dtype("<f4")


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    epoch: int
    path: Optional[str] = None

    def check_dataset(self, n_entities: int, n_relations: int) -> None:
        """Raises CheckpointError when the tables do not fit a dataset's vocabulary."""
        if self.params.n_entities != n_entities or self.params.n_relations != n_relations:
            raise CheckpointError(
                f"checkpoint {self.path or ''} has |V|={self.params.n_entities}, |R|={self.params.n_relations}; "
                f"dataset has |V|={n_entities}, |R|={n_relations}"
            )


def encode_checkpoint(params: ModelParams, cfg: TrainConfig, epoch: int) -> bytes:
    header = HEADER.pack(config.CHECKPOINT_MAGIC, config.CHECKPOINT_VERSION, MODEL_CODES[params.kind],
                         params.n_entities, params.n_relations, params.n_v, params.n_r, epoch)
    parts = [header]
    for arr in params.as_dict().values():
        parts.append(np.ascontiguousarray(arr, dtype=FLOAT).tobytes())
    echo = cfg.to_flat_text().encode("utf-8")
    parts.append(LENGTH.pack(len(echo)))
    parts.append(echo)
    return b"".join(parts)


def save_checkpoint(path: str, params: ModelParams, cfg: TrainConfig, epoch: int) -> str:
    params.assert_finite()
    data = encode_checkpoint(params, cfg, epoch)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)
    logger.info(f"Checkpoint saved to {path} (epoch {epoch}, {len(data)} bytes)")
    return path


def _take(data: bytes, offset: int, n_bytes: int, what: str, source: str) -> bytes:
    if offset + n_bytes > len(data):
        raise CheckpointError(f"{source}: truncated while reading {what} "
                              f"(need {n_bytes} bytes at offset {offset}, file has {len(data)})")
    return data[offset:offset + n_bytes]


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    magic, version, code, n_e, n_r, n_v, n_rd, epoch = HEADER.unpack(_take(data, 0, HEADER.size, "header", source))
    if magic != config.CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, expected {config.CHECKPOINT_MAGIC!r}")
    if version != config.CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    kinds = {v: k for k, v in MODEL_CODES.items()}
    if code not in kinds:
        raise CheckpointError(f"{source}: unknown model code {code}")
    kind = kinds[code]

    shapes = [("entity", (n_e, n_v)), ("relation", (n_r, n_rd))]
    if kind == "tucker":
        shapes.append(("core", (n_v, n_rd, n_v)))
    offset = HEADER.size
    arrays = {}
    for name, shape in shapes:
        n_bytes = int(np.prod(shape)) * FLOAT.itemsize
        raw = _take(data, offset, n_bytes, f"{name} payload", source)
        arrays[name] = np.frombuffer(raw, dtype=FLOAT).reshape(shape).astype(np.float64)
        offset += n_bytes

    (n_echo,) = LENGTH.unpack(_take(data, offset, LENGTH.size, "config length", source))
    offset += LENGTH.size
    echo = _take(data, offset, n_echo, "config echo", source).decode("utf-8")
    offset += n_echo
    if offset != len(data):
        raise CheckpointError(f"{source}: {len(data) - offset} unexpected trailing bytes")

    try:
        cfg = TrainConfig.from_flat_text(echo, source=f"{source} (config echo)")
        params = ModelParams(kind, arrays["entity"], arrays["relation"], arrays.get("core"))
    except (ConfigError, ValueError) as e:
        raise CheckpointError(f"{source}: {e}") from e
    if cfg.model_kind != kind or cfg.entity_dim != n_v or cfg.relation_dim != n_rd:
        raise CheckpointError(f"{source}: config echo does not match the header shapes")
    return Checkpoint(params=params, config=cfg, epoch=epoch, path=source)


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        data = f.read()
    ckpt = decode_checkpoint(data, source=path)
    logger.info(f"Loaded {ckpt.params.kind} checkpoint from {path} (epoch {ckpt.epoch})")
    return ckpt

"""
Checkpoint Service

Binary layout (all integers little-endian u32):

    b"NATSCKPT"  version  header_length  header (UTF-8 JSON)
    record*:     name_length  name  rank  dims[rank]  float64 data (little-endian)

The JSON header echoes the ModelConfig, the epoch/step counters, the
optimizer hyper-parameters and step, and an `extra` dict (RNG state,
running baselines). Records are named param/<name>, adam.m/<name> and
adam.v/<name>. Float data is written raw, so a round trip is bit-exact.
"""

import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from core.exceptions import CheckpointError, ContractError
from models.config import ModelConfig, OptimizerConfig
from models.parameters import ModelParameters
from services.optimizer_service import OptimizerState
from services.seq2seq_service import Seq2SeqModel

logger = logging.getLogger(__name__)

MAGIC = b"NATSCKPT"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")

PARAM_PREFIX = "param/"
ADAM_M_PREFIX = "adam.m/"
ADAM_V_PREFIX = "adam.v/"


@dataclass
class Checkpoint:
    version: int
    model_config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"
    epoch: int = 0
    step: int = 0
    optimizer_config: Optional[OptimizerConfig] = None
    optimizer_step: int = 0
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)


# ======================================================
# LOW-LEVEL RECORDS
# ======================================================

def _write_record(handle: BinaryIO, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    handle.write(_U32.pack(len(encoded)))
    handle.write(encoded)
    handle.write(_U32.pack(array.ndim))
    for extent in array.shape:
        handle.write(_U32.pack(extent))
    handle.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def _read_exact(handle: BinaryIO, count: int, what: str) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_u32(handle: BinaryIO, what: str) -> int:
    return _U32.unpack(_read_exact(handle, _U32.size, what))[0]


def _read_record(handle: BinaryIO) -> Optional[Tuple[str, np.ndarray]]:
    head = handle.read(_U32.size)
    if not head:
        return None
    if len(head) != _U32.size:
        raise CheckpointError("truncated checkpoint record header")
    name = _read_exact(handle, _U32.unpack(head)[0], "record name").decode("utf-8")
    rank = _read_u32(handle, f"rank of {name}")
    shape = tuple(_read_u32(handle, f"dims of {name}") for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(handle, 8 * count, f"data of {name}")
    return name, np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


# ======================================================
# SAVE / LOAD
# ======================================================

def save_checkpoint(
    path: Union[str, Path],
    model: Seq2SeqModel,
    optimizer: Optional[OptimizerState] = None,
    epoch: int = 0,
    step: int = 0,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "model_config": model.config.model_dump(mode="json"),
        "epoch": epoch,
        "step": step,
        "optimizer": None if optimizer is None else {
            "config": optimizer.config.model_dump(mode="json"),
            "step": optimizer.step,
        },
        "extra": extra or {},
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as handle:
        handle.write(MAGIC)
        handle.write(_U32.pack(FORMAT_VERSION))
        handle.write(_U32.pack(len(encoded)))
        handle.write(encoded)
        for name, tensor in model.params.items():
            _write_record(handle, PARAM_PREFIX + name, tensor.data)
        if optimizer is not None:
            for name in model.params:
                if name in optimizer.m:
                    _write_record(handle, ADAM_M_PREFIX + name, optimizer.m[name])
                    _write_record(handle, ADAM_V_PREFIX + name, optimizer.v[name])
    tmp.replace(path)
    logger.info(f"Saved checkpoint {path} (epoch {epoch}, step {step})")
    return path


def load_checkpoint(path: Union[str, Path], expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    """
    Read and verify a checkpoint.

    Raises:
        FileNotFoundError: missing file
        CheckpointError: bad magic, unsupported version, corrupt records,
            or a config different from `expected_config`
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with path.open("rb") as handle:
        magic = handle.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (magic {magic!r})")
        version = _read_u32(handle, "version")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
        try:
            header = json.loads(_read_exact(handle, _read_u32(handle, "header length"), "header").decode("utf-8"))
            config = ModelConfig(**header["model_config"])
        except (ValueError, KeyError, ValidationError) as e:
            raise CheckpointError(f"{path}: unreadable config header: {e}")

        checkpoint = Checkpoint(
            version=version,
            model_config=config,
            params=OrderedDict(),
            epoch=int(header.get("epoch", 0)),
            step=int(header.get("step", 0)),
            extra=header.get("extra") or {},
        )
        if header.get("optimizer"):
            checkpoint.optimizer_config = OptimizerConfig(**header["optimizer"]["config"])
            checkpoint.optimizer_step = int(header["optimizer"]["step"])

        while True:
            record = _read_record(handle)
            if record is None:
                break
            name, array = record
            for prefix, target in ((PARAM_PREFIX, checkpoint.params), (ADAM_M_PREFIX, checkpoint.adam_m),
                                   (ADAM_V_PREFIX, checkpoint.adam_v)):
                if name.startswith(prefix):
                    target[name[len(prefix):]] = array
                    break
            else:
                raise CheckpointError(f"{path}: unknown record {name!r}")

    if expected_config is not None and expected_config != config:
        raise CheckpointError(
            f"{path}: checkpoint model {config.model_id} {config.model_dump()} does not match "
            f"expected {expected_config.model_id} {expected_config.model_dump()}"
        )
    logger.info(f"Loaded checkpoint {path} ({config.model_id}, epoch {checkpoint.epoch})")
    return checkpoint


def restore_model(checkpoint: Checkpoint) -> Seq2SeqModel:
    params = ModelParameters.zeros(checkpoint.model_config)
    params.load_state_dict(checkpoint.params)
    return Seq2SeqModel(checkpoint.model_config, params)


def restore_optimizer(checkpoint: Checkpoint, params: ModelParameters) -> OptimizerState:
    if checkpoint.optimizer_config is None:
        raise CheckpointError("checkpoint carries no optimizer state")
    state = OptimizerState(
        config=checkpoint.optimizer_config,
        m={name: array.copy() for name, array in checkpoint.adam_m.items()},
        v={name: array.copy() for name, array in checkpoint.adam_v.items()},
        step=checkpoint.optimizer_step,
    )
    state.check_against(params)
    return state


def checkpoint_io(mode: str, path: Union[str, Path], model: Optional[Seq2SeqModel] = None,
                  optimizer: Optional[OptimizerState] = None, **kwargs) -> Checkpoint:
    """Save or load through one entry point; both directions return the Checkpoint on disk."""
    if mode == "save":
        if model is None:
            raise ContractError("checkpoint save needs a model")
        save_checkpoint(path, model, optimizer, **kwargs)
        return load_checkpoint(path, model.config)
    if mode == "load":
        return load_checkpoint(path, None if model is None else model.config)
    raise ContractError(f"checkpoint mode must be 'save' or 'load', got {mode!r}")

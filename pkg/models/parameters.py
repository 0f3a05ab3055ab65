"""
ModelParameters - every trainable weight, registered by unique name.

Naming scheme (prefix.name):

    embedding                       |V| x d_emb
    encoder.forward.{W,b}           LSTM gates, order i, f, o, g
    encoder.backward.{W,b}
    bridge.{W,b}                    fwd_J ⊕ bwd_1 -> decoder h_0
    decoder.{W,b}                   input E_y ⊕ h̃_{t-1}
    attention.*                     encoder-side alignment
    intra.*                         decoder-side alignment (intra-decoder)
    output.{W_z,b_z}                attention hidden h̃
    output.{W_d2v|W_proj,b_d2v}     vocabulary projection
    pointer.{w_z,w_h,w_e,b}         generation switch

Shapes depend only on ModelConfig.
"""

import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

from core.exceptions import CheckpointError, ContractError
from core.tensor import Tensor
from models.config import Alignment, ModelConfig

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]


def alignment_shapes(prefix: str, alignment: Alignment, d_keys: int, d_query: int,
                     d_align: int, coverage: bool = False) -> Dict[str, Shape]:
    """Parameters of one alignment function; dot has none."""
    alignment = Alignment(alignment)
    if alignment == Alignment.DOT:
        return {}
    if alignment == Alignment.GENERAL:
        return {f"{prefix}.W": (d_keys, d_query)}
    shapes = {
        f"{prefix}.W_enc": (d_align, d_keys),
        f"{prefix}.W_dec": (d_align, d_query),
        f"{prefix}.b": (d_align,),
        f"{prefix}.v": (d_align,),
    }
    if coverage:
        shapes[f"{prefix}.w_cov"] = (d_align,)
    return shapes


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, Shape]":
    V, E, H = config.vocab_size, config.d_emb, config.d_hidden
    D, He, A = config.d_decoder, config.d_encoder_out, config.d_attn_hidden

    shapes: "OrderedDict[str, Shape]" = OrderedDict()
    shapes["embedding"] = (V, E)
    for direction in ("forward", "backward"):
        shapes[f"encoder.{direction}.W"] = (4 * H, E + H)
        shapes[f"encoder.{direction}.b"] = (4 * H,)
    shapes["bridge.W"] = (D, 2 * H)
    shapes["bridge.b"] = (D,)
    shapes["decoder.W"] = (4 * D, E + A + D)
    shapes["decoder.b"] = (4 * D,)

    shapes.update(alignment_shapes("attention", config.alignment, He, D, config.d_align, config.coverage))
    if config.intra_decoder:
        shapes.update(alignment_shapes("intra", config.alignment, D, D, config.d_align))

    z_width = He + (D if config.intra_decoder else 0) + D
    shapes["output.W_z"] = (A, z_width)
    shapes["output.b_z"] = (A,)
    if config.weight_sharing:
        shapes["output.W_proj"] = (E, A)
    else:
        shapes["output.W_d2v"] = (V, A)
    shapes["output.b_d2v"] = (V,)

    if config.pointer_gen:
        shapes["pointer.w_z"] = (He,)
        shapes["pointer.w_h"] = (D,)
        shapes["pointer.w_e"] = (E,)
        shapes["pointer.b"] = (1,)
    return shapes


def is_bias(name: str) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    return leaf == "b" or leaf.startswith("b_")


class ModelParameters:
    """Ordered name -> Tensor registry with requires_grad set on every entry."""

    def __init__(self, config: ModelConfig, tensors: Mapping[str, Tensor]):
        expected = parameter_shapes(config)
        missing = [name for name in expected if name not in tensors]
        unknown = [name for name in tensors if name not in expected]
        if missing or unknown:
            raise ContractError(f"parameter set mismatch: missing={missing} unknown={unknown}")
        self.config = config
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, shape in expected.items():
            tensor = tensors[name]
            if tensor.shape != shape:
                raise ContractError(f"parameter {name} has shape {tensor.shape}, expected {shape}")
            tensor.requires_grad = True
            self._tensors[name] = tensor

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParameters":
        """Uniform(-init_scale, init_scale) weights, zero biases."""
        tensors = {}
        for name, shape in parameter_shapes(config).items():
            if is_bias(name):
                data = np.zeros(shape)
            else:
                data = rng.uniform(-config.init_scale, config.init_scale, size=shape)
            tensors[name] = Tensor(data, requires_grad=True)
        params = cls(config, tensors)
        logger.info(f"Initialized {config.model_id} with {params.count()} parameters in {len(params)} tensors")
        return params

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParameters":
        return cls(config, {name: Tensor(np.zeros(shape), requires_grad=True)
                            for name, shape in parameter_shapes(config).items()})

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise ContractError(f"model {self.config.model_id} has no parameter {name!r}")

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> List[Tensor]:
        return list(self._tensors.values())

    def count(self) -> int:
        return int(sum(t.size for t in self._tensors.values()))

    def count_prefix(self, prefix: str) -> int:
        return int(sum(t.size for name, t in self._tensors.items() if name.startswith(prefix + ".")))

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, t.data.copy()) for name, t in self._tensors.items())

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        for name, tensor in self._tensors.items():
            if name not in state:
                raise CheckpointError(f"checkpoint lacks parameter {name}")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise CheckpointError(f"parameter {name}: checkpoint shape {value.shape} != model shape {tensor.shape}")
            tensor.data = value.copy()
            tensor.zero_grad()
        extra = sorted(set(state) - set(self._tensors))
        if extra:
            raise CheckpointError(f"checkpoint has parameters unknown to this model: {extra}")

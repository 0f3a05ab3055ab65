"""
Typed configuration models.

ModelConfig        - architecture: sizes, alignment and the five component flags
TrainingSchedule   - word-level / sequence-level strategy knobs
OptimizerConfig    - Adam and clipping hyper-parameters
DecodingConfig     - greedy / beam / diverse beam settings

Defaults: 128-d embeddings, 256-d hidden states, Adam lr 1e-4,
clip norm 2.0, beam 5.
"""

import logging
import math
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.exceptions import ConfigError

logger = logging.getLogger(__name__)


class Alignment(str, Enum):
    DOT = "dot"
    GENERAL = "general"
    CONCAT = "concat"


# Component order inside a model ID such as "C10101"
MODEL_ID_FLAGS = ("pointer_gen", "temporal_attn", "intra_decoder", "weight_sharing", "coverage")
MODEL_ID_LETTERS = {"G": Alignment.GENERAL, "D": Alignment.DOT, "C": Alignment.CONCAT}


def parse_model_id(model_id: str) -> dict:
    """Expand e.g. "G11110" into {"alignment": ..., "pointer_gen": True, ...}."""
    model_id = model_id.strip().upper()
    if len(model_id) != 6 or model_id[0] not in MODEL_ID_LETTERS or set(model_id[1:]) - {"0", "1"}:
        raise ConfigError(
            f"model_id {model_id!r} must be one of G/D/C followed by five 0/1 flags"
        )
    fields = {"alignment": MODEL_ID_LETTERS[model_id[0]]}
    for flag, bit in zip(MODEL_ID_FLAGS, model_id[1:]):
        fields[flag] = bit == "1"
    return fields


class ModelConfig(BaseModel):
    """Architecture of one encoder-decoder model."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    vocab_size: int = Field(..., ge=4)
    d_emb: int = Field(128, ge=1)
    d_hidden: int = Field(256, ge=1)
    alignment: Alignment = Alignment.CONCAT
    pointer_gen: bool = False
    temporal_attn: bool = False
    intra_decoder: bool = False
    weight_sharing: bool = False
    coverage: bool = False
    allow_temporal_with_coverage: bool = False
    coverage_weight: float = Field(1.0, ge=0.0)
    init_scale: float = Field(0.1, gt=0.0)

    @model_validator(mode="after")
    def _check_component_invariants(self) -> "ModelConfig":
        if self.coverage and self.alignment != Alignment.CONCAT:
            raise ValueError("coverage requires alignment=concat (coverage => concat)")
        if self.coverage and self.temporal_attn:
            if not self.allow_temporal_with_coverage:
                raise ValueError(
                    "temporal_attn and coverage are mutually exclusive; "
                    "set allow_temporal_with_coverage to override"
                )
            logger.warning("temporal attention combined with coverage; this pairing is known to diverge")
        return self

    # Derived sizes: the decoder cell is seeded with fwd-cell ⊕ bwd-cell,
    # so every decoder-side vector is 2 * d_hidden wide.
    @property
    def d_encoder_out(self) -> int:
        return 2 * self.d_hidden

    @property
    def d_decoder(self) -> int:
        return 2 * self.d_hidden

    @property
    def d_attn_hidden(self) -> int:
        return 2 * self.d_hidden

    @property
    def d_align(self) -> int:
        return 2 * self.d_hidden

    @property
    def model_id(self) -> str:
        letter = {v: k for k, v in MODEL_ID_LETTERS.items()}[self.alignment]
        return letter + "".join("1" if getattr(self, f) else "0" for f in MODEL_ID_FLAGS)

    @classmethod
    def from_model_id(cls, model_id: str, vocab_size: int, **overrides) -> "ModelConfig":
        fields = parse_model_id(model_id)
        fields.update(overrides)
        return cls(vocab_size=vocab_size, **fields)


# ======================================================
# TRAINING
# ======================================================

class Strategy(str, Enum):
    XENT = "xent"
    DAD = "dad"
    E2E = "e2e"
    REINFORCE = "reinforce"
    MIXER = "mixer"
    SCST = "scst"


class DadDecay(str, Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exponential"
    INVERSE_SIGMOID = "inverse_sigmoid"
    CONSTANT = "constant"


def validate_dad_alpha(decay: DadDecay, alpha: float) -> None:
    """Raise ConfigError when `alpha` cannot keep p_dad inside [0, 1]."""
    decay = DadDecay(decay)
    if not math.isfinite(alpha):
        raise ConfigError(f"dad alpha must be finite, got {alpha}")
    if decay == DadDecay.LINEAR and alpha < 0:
        raise ConfigError(f"linear decay needs alpha >= 0, got {alpha}")
    if decay in (DadDecay.EXPONENTIAL, DadDecay.CONSTANT) and not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"{decay.value} schedule needs alpha in [0, 1], got {alpha}")
    if decay == DadDecay.INVERSE_SIGMOID and alpha <= 0:
        raise ConfigError(f"inverse sigmoid decay needs alpha > 0, got {alpha}")


class RewardMetric(str, Enum):
    ROUGE_1 = "rouge_1"
    ROUGE_2 = "rouge_2"
    ROUGE_L = "rouge_l"


class Baseline(str, Enum):
    ZERO = "zero"
    EMA = "ema"


class TrainingSchedule(BaseModel):
    """Which training strategy runs and how it is scheduled."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    strategy: Strategy = Strategy.XENT
    dad_decay: DadDecay = DadDecay.CONSTANT
    dad_alpha: float = 1.0
    e2e_top_k: int = Field(3, ge=1)
    mixer_delta: int = Field(2, ge=1)
    mixer_epochs: int = Field(1, ge=1)
    mixer_warmup: Optional[int] = Field(None, ge=0)
    gamma: float = Field(0.99, gt=0.0, lt=1.0)
    reward: RewardMetric = RewardMetric.ROUGE_L
    baseline: Baseline = Baseline.ZERO
    baseline_decay: float = Field(0.9, ge=0.0, lt=1.0)
    reinforce_baseline: float = 0.0

    @model_validator(mode="after")
    def _check_dad(self) -> "TrainingSchedule":
        try:
            validate_dad_alpha(self.dad_decay, self.dad_alpha)
        except ConfigError as exc:
            raise ValueError(str(exc))
        return self

    @property
    def warmup_epochs(self) -> int:
        return self.mixer_epochs if self.mixer_warmup is None else self.mixer_warmup


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(1e-4, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    max_grad_norm: float = Field(2.0, gt=0.0)


# ======================================================
# DECODING
# ======================================================

class DecodeMode(str, Enum):
    GREEDY = "greedy"
    BEAM = "beam"
    DBS = "dbs"


class DecodingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: DecodeMode = DecodeMode.BEAM
    beam_size: int = Field(5, ge=1)
    max_len: int = Field(100, ge=1)
    length_penalty: float = Field(0.0, ge=0.0)
    diversity_rate: float = Field(0.0, ge=0.0)
    groups: int = Field(1, ge=1)
    group_diversity: float = Field(0.0, ge=0.0)
    replace_unk: bool = True

    @model_validator(mode="after")
    def _check_groups(self) -> "DecodingConfig":
        if self.mode == DecodeMode.DBS:
            if self.groups > self.beam_size:
                raise ValueError(f"groups ({self.groups}) cannot exceed beam_size ({self.beam_size})")
            if self.beam_size % self.groups:
                raise ValueError(f"groups ({self.groups}) must divide beam_size ({self.beam_size})")
        return self

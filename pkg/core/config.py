"""
Run configuration.

RunConfig is flat: every model / training / optimizer / decoding knob plus
file paths and the seed. Values are resolved in this order, later layers
winning:

    field defaults
    < environment variables NATS_<KEY> (a local .env file is honoured)
    < `key = value` config file ('#' starts a comment)
    < command-line overrides

A six-character `model_id` (e.g. C10101) expands into the alignment and
the five component flags; explicitly given flags still win over it.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from dotenv import load_dotenv
from dotenv.parser import parse_stream
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.exceptions import ConfigError
from models.config import (
    Alignment,
    Baseline,
    DadDecay,
    DecodeMode,
    DecodingConfig,
    ModelConfig,
    OptimizerConfig,
    RewardMetric,
    Strategy,
    TrainingSchedule,
    parse_model_id,
)

logger = logging.getLogger(__name__)

ENV_PREFIX = "NATS_"
MANIFEST_NAME = "run_config.txt"
_NONE_WORDS = {"", "none", "null"}


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=(), validate_assignment=True)

    # ---- run ----
    seed: int = 1234
    train_path: Optional[str] = None
    dev_path: Optional[str] = None
    test_path: Optional[str] = None
    vocab_path: Optional[str] = None
    output_dir: str = "runs/default"
    checkpoint: Optional[str] = None
    reverse_checkpoint: Optional[str] = None
    progress: bool = True

    # ---- data ----
    vocab_cap: int = Field(50000, ge=4)
    src_max_len: int = Field(400, ge=1)
    tgt_max_len: int = Field(100, ge=1)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(35, ge=0)

    # ---- model ----
    model_id: Optional[str] = None
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

    # ---- training schedule ----
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

    # ---- optimizer ----
    lr: float = Field(1e-4, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    max_grad_norm: float = Field(2.0, gt=0.0)

    # ---- decoding ----
    decode_mode: DecodeMode = DecodeMode.BEAM
    beam_size: int = Field(5, ge=1)
    decode_max_len: int = Field(100, ge=1)
    length_penalty: float = Field(0.0, ge=0.0)
    diversity_rate: float = Field(0.0, ge=0.0)
    groups: int = Field(1, ge=1)
    group_diversity: float = Field(0.0, ge=0.0)
    replace_unk: bool = True
    mmi_weight: float = 0.0
    mmi_length_weight: float = 0.0

    @model_validator(mode="before")
    @classmethod
    def _expand_model_id(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("model_id"):
            expanded = parse_model_id(str(data["model_id"]))
            merged = dict(expanded)
            merged.update(data)
            merged["model_id"] = str(data["model_id"]).strip().upper()
            return merged
        return data

    @model_validator(mode="after")
    def _check_sections(self) -> "RunConfig":
        # Every section model must accept the flat values before any work starts
        try:
            self.build_model_config(vocab_size=4)
            self.build_schedule()
            self.build_optimizer()
            self.build_decoding()
        except ValidationError as exc:
            raise ValueError(_describe(exc))
        except ConfigError as exc:
            raise ValueError(str(exc))
        return self

    # ------------------------------------------------------------------
    # section builders
    # ------------------------------------------------------------------

    def build_model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            d_emb=self.d_emb,
            d_hidden=self.d_hidden,
            alignment=self.alignment,
            pointer_gen=self.pointer_gen,
            temporal_attn=self.temporal_attn,
            intra_decoder=self.intra_decoder,
            weight_sharing=self.weight_sharing,
            coverage=self.coverage,
            allow_temporal_with_coverage=self.allow_temporal_with_coverage,
            coverage_weight=self.coverage_weight,
            init_scale=self.init_scale,
        )

    def build_schedule(self) -> TrainingSchedule:
        return TrainingSchedule(
            strategy=self.strategy,
            dad_decay=self.dad_decay,
            dad_alpha=self.dad_alpha,
            e2e_top_k=self.e2e_top_k,
            mixer_delta=self.mixer_delta,
            mixer_epochs=self.mixer_epochs,
            mixer_warmup=self.mixer_warmup,
            gamma=self.gamma,
            reward=self.reward,
            baseline=self.baseline,
            baseline_decay=self.baseline_decay,
            reinforce_baseline=self.reinforce_baseline,
        )

    def build_optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                               eps=self.eps, max_grad_norm=self.max_grad_norm)

    def build_decoding(self) -> DecodingConfig:
        return DecodingConfig(
            mode=self.decode_mode,
            beam_size=self.beam_size,
            max_len=self.decode_max_len,
            length_penalty=self.length_penalty,
            diversity_rate=self.diversity_rate,
            groups=self.groups,
            group_diversity=self.group_diversity,
            replace_unk=self.replace_unk,
        )

    def to_lines(self) -> str:
        """Serialize as a `key = value` file that load_run_config reads back."""
        lines = ["# fully resolved run configuration"]
        for key, value in self.model_dump(mode="json").items():
            if value is None:
                value = "none"
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


# ======================================================
# LOADING
# ======================================================

def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err.get("loc", ())) or "config"
        parts.append(f"{where}: {err.get('msg')}")
    return "; ".join(parts)


def _clean(value: Any) -> Any:
    if isinstance(value, str):
        value = value.strip()
        if value.lower() in _NONE_WORDS:
            return None
    return value


def parse_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a UTF-8 `key = value` file with dotenv syntax: `#` comments, optional quotes."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    values: Dict[str, Any] = {}
    with path.open(encoding="utf-8") as stream:
        for binding in parse_stream(stream):
            if binding.error or (binding.key is not None and binding.value is None):
                raise ConfigError(
                    f"{path}:{binding.original.line}: expected 'key = value', got {binding.original.string.strip()!r}"
                )
            if binding.key is not None:
                values[binding.key] = _clean(binding.value)
    return values


def environment_values(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """NATS_<KEY> variables for known RunConfig keys."""
    environ = os.environ if environ is None else environ
    values = {}
    for key in RunConfig.model_fields:
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            values[key] = _clean(environ[env_key])
    return values


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
    use_dotenv: bool = True,
) -> RunConfig:
    """
    Resolve a RunConfig from every layer.

    Raises:
        ConfigError: unknown key or an invalid value / combination
        FileNotFoundError: `path` does not exist
    """
    if use_dotenv and environ is None:
        load_dotenv(override=False)

    values: Dict[str, Any] = environment_values(environ)
    if path is not None:
        values.update(parse_config_file(path))
    for key, value in (overrides or {}).items():
        values[key] = _clean(value)

    unknown = sorted(k for k in values if k not in RunConfig.model_fields)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    try:
        config = RunConfig(**values)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {_describe(exc)}")
    logger.debug(f"Resolved run config from {len(values)} explicit values")
    return config


def write_manifest(config: RunConfig, directory: Union[str, Path]) -> Path:
    """Write the fully resolved config next to a run's outputs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / MANIFEST_NAME
    target.write_text(config.to_lines(), encoding="utf-8")
    logger.info(f"Wrote run manifest {target}")
    return target

"""
Attention Service

Alignment scores between a query (the decoder hidden state) and a set of
keys (encoder states, or past decoder states for intra-decoder attention):

    dot      s_j = k_j · h
    general  s_j = k_j · W h        keys pre-projected as K W
    concat   s_j = v · tanh(W_enc k_j + W_dec h + b [+ w_cov u_j])
                                    keys pre-projected as K W_encᵀ

Keys are projected once per source (project_keys) and reused at every
decoder step.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core import tensor as T
from core.exceptions import ConfigError, DimensionError
from core.tensor import Tensor
from models.config import Alignment
from models.parameters import ModelParameters

logger = logging.getLogger(__name__)


@dataclass
class AttentionResult:
    scores: Tensor
    weights: Tensor
    context: Tensor


def project_keys(params: ModelParameters, prefix: str, states: Tensor, alignment: Alignment) -> Tensor:
    """Query-independent part of the alignment for every key row."""
    alignment = Alignment(alignment)
    if alignment == Alignment.DOT:
        return states
    if alignment == Alignment.GENERAL:
        return states @ params[f"{prefix}.W"]
    return states @ params[f"{prefix}.W_enc"].T


def alignment_scores(
    params: ModelParameters,
    prefix: str,
    keys: Tensor,
    query: Tensor,
    alignment: Alignment,
    coverage: Optional[Tensor] = None,
) -> Tensor:
    """Unnormalized scores, one per key row."""
    alignment = Alignment(alignment)
    if coverage is not None and alignment != Alignment.CONCAT:
        raise ConfigError(f"coverage-aware scores need concat alignment, got {alignment.value}")

    if alignment in (Alignment.DOT, Alignment.GENERAL):
        if keys.shape[-1] != query.shape[0]:
            raise DimensionError(f"{alignment.value} alignment: keys {keys.shape} vs query {query.shape}")
        return keys @ query

    hidden = keys + (params[f"{prefix}.W_dec"] @ query + params[f"{prefix}.b"])
    if coverage is not None:
        J = keys.shape[0]
        if coverage.shape != (J,):
            raise DimensionError(f"coverage vector {coverage.shape} does not match {J} source positions")
        hidden = hidden + coverage.reshape((J, 1)) * params[f"{prefix}.w_cov"].reshape((1, -1))
    return T.tanh(hidden) @ params[f"{prefix}.v"]


def attend(
    params: ModelParameters,
    h_e: Tensor,
    h_d: Tensor,
    alignment: Alignment,
    coverage: Optional[Tensor] = None,
    keys: Optional[Tensor] = None,
    mask: Optional[np.ndarray] = None,
    prefix: str = "attention",
) -> AttentionResult:
    """
    Scores, softmax weights and context vector over `h_e` rows.

    Args:
        h_e: key/value states, J x d
        h_d: query state
        coverage: running coverage vector (concat only)
        keys: pre-projected keys; computed from h_e when omitted
        mask: bool per row, True keeps the position
    """
    if keys is None:
        keys = project_keys(params, prefix, h_e, alignment)
    scores = alignment_scores(params, prefix, keys, h_d, alignment, coverage)
    weights = T.softmax(scores, mask=mask)
    return AttentionResult(scores=scores, weights=weights, context=weights @ h_e)


def attention_hidden(params: ModelParameters, z: Tensor, h_d: Tensor, z_d: Optional[Tensor] = None) -> Tensor:
    """h̃ = W_z (z ⊕ [z_d] ⊕ h) + b_z."""
    parts = [z] if z_d is None else [z, z_d]
    parts.append(h_d)
    return params["output.W_z"] @ T.concat(parts) + params["output.b_z"]

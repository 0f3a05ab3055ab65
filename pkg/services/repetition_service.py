"""
Repetition Service

The repetition-control family:

- temporal attention: each source position's score is divided by the sum
  of its own past exp-scores, so positions attended before fade out
- intra-decoder attention: attention from the current decoder state over
  the decoder's own earlier states
- coverage: running sum of past attention, fed into the concat score and
  penalized by covloss_t = Σ_j min(α_tj, u_tj)

All state objects are immutable values: an update returns a new object,
so beam branches never share mutable history.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from core import tensor as T
from core.exceptions import ContractError
from core.tensor import Tensor
from models.config import Alignment
from models.parameters import ModelParameters
from services.attention_service import alignment_scores, project_keys

logger = logging.getLogger(__name__)


# ======================================================
# TEMPORAL ATTENTION
# ======================================================

@dataclass(frozen=True)
class TemporalHistory:
    """log Σ_{k<t} exp(s_k) per source position; None before the first step."""
    log_sum: Optional[Tensor] = None
    steps: int = 0

    @property
    def empty(self) -> bool:
        return self.log_sum is None

    def exp_sum(self) -> np.ndarray:
        if self.log_sum is None:
            raise ContractError("temporal history is empty before the first decoding step")
        return np.exp(self.log_sum.data)


def temporal_attention(scores: Tensor, history: TemporalHistory) -> Tuple[Tensor, TemporalHistory]:
    """
    α_t = normalize(exp(s_t) / Σ_{k<t} exp(s_k)), computed in log space.

    At the first step the denominator is 1, so α reduces to softmax(s_t).
    """
    if history.empty:
        logits = scores
        log_sum = scores
    else:
        if history.log_sum.shape != scores.shape:
            raise ContractError(f"temporal history {history.log_sum.shape} does not match scores {scores.shape}")
        logits = scores - history.log_sum
        log_sum = T.logaddexp(history.log_sum, scores)
    return T.softmax(logits), TemporalHistory(log_sum=log_sum, steps=history.steps + 1)


# ======================================================
# INTRA-DECODER ATTENTION
# ======================================================

def intra_decoder_attention(
    params: ModelParameters,
    past_hiddens: Sequence[Tensor],
    h_d: Tensor,
    alignment: Alignment,
) -> Tuple[Optional[Tensor], Tensor]:
    """
    Attention over h^d_{<t}.

    Returns (α^d, z^d). With no past states (t = 1) α^d is None and z^d is
    the zero vector.
    """
    if not past_hiddens:
        return None, T.zeros(h_d.shape)
    states = T.stack(list(past_hiddens))
    keys = project_keys(params, "intra", states, alignment)
    scores = alignment_scores(params, "intra", keys, h_d, alignment)
    weights = T.softmax(scores)
    return weights, weights @ states


# ======================================================
# COVERAGE
# ======================================================

@dataclass(frozen=True)
class CoverageState:
    """u_t (length J) and the covloss accumulated so far."""
    vector: Tensor
    loss: Tensor
    steps: int = 0

    @classmethod
    def initial(cls, length: int) -> "CoverageState":
        return cls(vector=T.zeros((length,)), loss=T.zeros(()), steps=0)

    @property
    def length(self) -> int:
        return self.vector.shape[0]


def coverage_step(coverage: CoverageState, alpha: Tensor) -> Tuple[Tensor, CoverageState]:
    """covloss_t = Σ_j min(α_j, u_j); then u <- u + α."""
    if alpha.shape != coverage.vector.shape:
        raise ContractError(f"attention {alpha.shape} does not match coverage {coverage.vector.shape}")
    if np.any(coverage.vector.data < 0) or np.any(alpha.data < 0):
        raise ContractError("coverage and attention must be nonnegative")
    step_loss = T.minimum(alpha, coverage.vector).sum()
    updated = CoverageState(
        vector=coverage.vector + alpha,
        loss=coverage.loss + step_loss,
        steps=coverage.steps + 1,
    )
    return step_loss, updated

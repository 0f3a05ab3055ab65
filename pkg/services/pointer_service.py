"""
Pointer Service

Pointer-generator copying over the extended vocabulary, and the post-hoc
unknown-word replacement used when copying is off.

    p_gen = σ(w_z·z + w_h·h + w_e·E_{y_prev} + b)
    P(w)  = p_gen·P_vocab(w) + (1 - p_gen)·Σ_{j: x_j = w} α_j

P_vocab is zero on the OOV slots; copy mass for repeated source tokens
accumulates. OOV slots past an example's own OOVs stay exactly zero.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from core import tensor as T
from core.exceptions import ContractError, VocabIndexError
from core.tensor import Tensor
from models.parameters import ModelParameters
from models.vocabulary import UNK_TOKEN

logger = logging.getLogger(__name__)


@dataclass
class ExtendedDistribution:
    """Probabilities over V_ext (length |V| + max_oov) and the switch value."""
    probs: Tensor
    p_gen: Tensor
    vocab_size: int

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    @property
    def max_oov(self) -> int:
        return self.size - self.vocab_size


def generation_probability(params: ModelParameters, z: Tensor, h_d: Tensor, e_prev: Tensor) -> Tensor:
    """Scalar generation switch in (0, 1)."""
    logit = (params["pointer.w_z"] @ z + params["pointer.w_h"] @ h_d
             + params["pointer.w_e"] @ e_prev + params["pointer.b"][0])
    return T.sigmoid(logit)


def extended_distribution(
    p_vocab: Tensor,
    alpha: Tensor,
    p_gen: Tensor,
    source_ext_ids: Sequence[int],
    vocab_size: int,
    max_oov: int,
) -> ExtendedDistribution:
    """
    Mix generation and copy distributions.

    Raises:
        VocabIndexError: a source id falls outside |V| + max_oov
    """
    if p_vocab.shape != (vocab_size,):
        raise ContractError(f"P_vocab has shape {p_vocab.shape}, expected ({vocab_size},)")
    size = vocab_size + max_oov
    ids = np.asarray(source_ext_ids, dtype=np.int64)
    bad = ids[ids >= size]
    if bad.size:
        raise VocabIndexError(f"source id {int(bad[0])} outside extended vocabulary of size {size}")

    generated = p_vocab * p_gen
    if max_oov:
        generated = T.concat([generated, T.zeros((max_oov,))])
    copied = T.scatter_add(alpha * (1.0 - p_gen), ids, size)
    return ExtendedDistribution(probs=generated + copied, p_gen=p_gen, vocab_size=vocab_size)


def replace_unknown(
    tokens: Sequence[str],
    attentions: Sequence[Optional[np.ndarray]],
    source_tokens: Sequence[str],
    unk_token: str = UNK_TOKEN,
) -> List[str]:
    """
    Swap every UNK for the source token it attended to most.

    Ties go to the smallest source position.

    Raises:
        ContractError: an UNK has no attention record
    """
    if not source_tokens:
        return list(tokens)
    replaced = []
    for t, token in enumerate(tokens):
        if token != unk_token:
            replaced.append(token)
            continue
        if t >= len(attentions) or attentions[t] is None:
            raise ContractError(f"no attention recorded for UNK at step {t}")
        weights = np.asarray(attentions[t])[:len(source_tokens)]
        replaced.append(source_tokens[int(np.argmax(weights))])
    return replaced

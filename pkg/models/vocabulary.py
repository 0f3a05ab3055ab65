"""
Vocabulary and example containers.

Reserved ids are fixed: PAD=0, SOS=1, EOS=2, UNK=3. Everything else is
assigned by build order (see services.text_data_service.build_vocab).

An ExtendedExample carries two id views of the same text:
    - *_ids      ids over the closed vocabulary V (OOV -> UNK)
    - *_ext_ids  ids over V_ext, where each source OOV owns a temporary
                 id |V| + k, k numbered by first occurrence in the source
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import ContractError, VocabIndexError

logger = logging.getLogger(__name__)

PAD_ID = 0
SOS_ID = 1
EOS_ID = 2
UNK_ID = 3

PAD_TOKEN = "<pad>"
SOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
UNK_TOKEN = "<unk>"

RESERVED_TOKENS = (PAD_TOKEN, SOS_TOKEN, EOS_TOKEN, UNK_TOKEN)


@dataclass
class Vocabulary:
    """
    Closed token <-> id map.

    Attributes:
        tokens: id -> token, reserved tokens first
        counts: corpus frequency per (non-reserved) token
    """
    tokens: List[str]
    counts: Dict[str, int] = field(default_factory=dict)
    token_to_id: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ContractError(
                f"vocabulary must start with the reserved tokens {RESERVED_TOKENS}, "
                f"got {self.tokens[:len(RESERVED_TOKENS)]}"
            )
        self.token_to_id = {}
        for idx, token in enumerate(self.tokens):
            if token in self.token_to_id:
                raise ContractError(f"duplicate vocabulary token {token!r} at id {idx}")
            self.token_to_id[token] = idx

    @classmethod
    def from_counts(cls, ranked: Sequence[Tuple[str, int]]) -> "Vocabulary":
        """Reserved tokens followed by `ranked` (already ordered) entries."""
        tokens = list(RESERVED_TOKENS) + [token for token, _ in ranked]
        return cls(tokens=tokens, counts=dict(ranked))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise VocabIndexError(f"token id {idx} outside vocabulary range [0, {len(self.tokens)})")
        return self.tokens[idx]

    def entries(self) -> List[Tuple[str, int]]:
        """Non-reserved (token, count) pairs in id order."""
        return [(token, self.counts.get(token, 0)) for token in self.tokens[len(RESERVED_TOKENS):]]


@dataclass
class ExtendedExample:
    """One article/summary pair encoded against a vocabulary."""
    source_tokens: List[str]
    target_tokens: List[str]
    source_ids: List[int]
    source_ext_ids: List[int]
    oov_tokens: List[str]
    target_ids: List[int]
    target_ext_ids: List[int]
    example_id: str = ""

    @property
    def source_length(self) -> int:
        return len(self.source_ids)

    @property
    def target_length(self) -> int:
        return len(self.target_ids)

    @property
    def oov_count(self) -> int:
        return len(self.oov_tokens)

    def to_dict(self) -> Dict:
        return {
            "id": self.example_id,
            "source_tokens": self.source_tokens,
            "target_tokens": self.target_tokens,
            "source_ids": self.source_ids,
            "source_ext_ids": self.source_ext_ids,
            "oov_tokens": self.oov_tokens,
            "target_ids": self.target_ids,
            "target_ext_ids": self.target_ext_ids,
        }


@dataclass
class BatchRow:
    """One example sliced back out of a padded Batch."""
    source_ids: np.ndarray
    source_ext_ids: np.ndarray
    target_ids: np.ndarray
    target_ext_ids: np.ndarray
    oov_tokens: List[str]
    example: Optional[ExtendedExample] = None


@dataclass
class Batch:
    """
    Padded mini-batch.

    All id matrices are padded with PAD_ID to the batch max length;
    the *_lengths arrays exclude padding. Targets include SOS and EOS.
    """
    source: np.ndarray
    source_ext: np.ndarray
    source_lengths: np.ndarray
    target: np.ndarray
    target_ext: np.ndarray
    target_lengths: np.ndarray
    max_oov_count: int
    oov_lists: List[List[str]]
    examples: List[ExtendedExample] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.source.shape[0])

    def __len__(self) -> int:
        return self.size

    def row(self, i: int) -> BatchRow:
        j, t = int(self.source_lengths[i]), int(self.target_lengths[i])
        return BatchRow(
            source_ids=self.source[i, :j],
            source_ext_ids=self.source_ext[i, :j],
            target_ids=self.target[i, :t],
            target_ext_ids=self.target_ext[i, :t],
            oov_tokens=self.oov_lists[i],
            example=self.examples[i] if self.examples else None,
        )

    def rows(self) -> List[BatchRow]:
        return [self.row(i) for i in range(self.size)]

    @property
    def prediction_count(self) -> int:
        """Number of predicted target tokens (everything after SOS)."""
        return int(np.sum(self.target_lengths - 1))

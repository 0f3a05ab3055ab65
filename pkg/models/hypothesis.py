"""
Hypothesis and BeamPool - the rows and bookkeeping of beam search.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.exceptions import ContractError


@dataclass
class Hypothesis:
    """
    Partial or finished output sequence.

    Attributes:
        tokens: emitted ids over the extended vocabulary (no SOS)
        score: Σ log P(y_t | y_<t, x) of `tokens`
        step_log_probs: per-token log-probabilities, same length as tokens
        attentions: source attention used to predict each token
        state: decoder state after consuming the last token
        next_log_probs: distribution over the next token (None once finished)
        finished: True once EOS has been emitted
    """
    tokens: Tuple[int, ...] = ()
    score: float = 0.0
    step_log_probs: Tuple[float, ...] = ()
    attentions: Tuple[Optional[np.ndarray], ...] = ()
    state: Any = None
    next_log_probs: Optional[np.ndarray] = None
    next_attention: Optional[np.ndarray] = None
    finished: bool = False

    @property
    def length(self) -> int:
        return len(self.tokens)

    def normalized_score(self, length_penalty: float = 0.0) -> float:
        """S / len^p; p = 0 leaves S untouched."""
        if length_penalty == 0.0:
            return self.score
        return self.score / max(self.length, 1) ** length_penalty

    def extend(self, token: int, log_prob: float, eos_id: int) -> "Hypothesis":
        """Child hypothesis for `token`; the caller fills in state/next_log_probs."""
        if self.finished:
            raise ContractError("cannot extend a finished hypothesis")
        return replace(
            self,
            tokens=self.tokens + (int(token),),
            score=self.score + float(log_prob),
            step_log_probs=self.step_log_probs + (float(log_prob),),
            attentions=self.attentions + (self.next_attention,),
            state=None,
            next_log_probs=None,
            next_attention=None,
            finished=int(token) == eos_id,
        )

    def to_dict(self, length_penalty: float = 0.0) -> Dict:
        return {
            "tokens": list(self.tokens),
            "score": self.score,
            "norm_score": self.normalized_score(length_penalty),
        }


@dataclass
class BeamPool:
    """Live and finished hypotheses of one beam (or one DBS group)."""
    beam_size: int
    max_len: int
    length_penalty: float = 0.0
    live: List[Hypothesis] = field(default_factory=list)
    finished: List[Hypothesis] = field(default_factory=list)

    def __post_init__(self):
        if self.beam_size < 1:
            raise ContractError(f"beam size must be >= 1, got {self.beam_size}")

    @property
    def capacity(self) -> int:
        """Slots still open for live hypotheses."""
        return self.beam_size - len(self.finished)

    @property
    def done(self) -> bool:
        return self.capacity <= 0 or not self.live

    def admit(self, hypotheses: List[Hypothesis]) -> None:
        """Replace the live set; EOS-terminated entries move to the finished pool."""
        self.live = []
        for hyp in hypotheses:
            if hyp.finished:
                self.finished.append(hyp)
            else:
                self.live.append(hyp)
        if len(self.live) > self.beam_size:
            raise ContractError(f"{len(self.live)} live hypotheses exceed beam size {self.beam_size}")

    def results(self) -> List[Hypothesis]:
        """Finished pool padded with the best live rows, best first by S/len^p."""
        key = lambda h: -h.normalized_score(self.length_penalty)
        pool = list(self.finished)
        if len(pool) < self.beam_size:
            pool.extend(sorted(self.live, key=key)[:self.beam_size - len(pool)])
        return sorted(pool, key=key)

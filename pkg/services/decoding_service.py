"""
Decoding Service

Search over a StepScorer: anything that can start a sequence and return
log-probabilities for the next token given a state. Seq2SeqScorer adapts
a trained model; tests plug in hand-built scorers.

Searches:
- greedy_decode        argmax each step, ties to the smallest id
- beam_search          top-B with finished pool and S/len^p ranking,
                       optional sibling-rank diversity penalty
- diverse_beam_search  G groups of B/G beams, Hamming penalty against the
                       tokens earlier groups chose at the same step
- mmi_rerank           N-best reordering with a backward (source | summary) score

Scores:
    A hypothesis score is always Σ log P of its own tokens. Diversity
    penalties only decide which candidates survive a step.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from core.exceptions import ConfigError, ContractError
from core.tensor import no_grad
from models.config import DecodeMode, DecodingConfig
from models.hypothesis import BeamPool, Hypothesis
from models.vocabulary import EOS_ID, SOS_ID, ExtendedExample, Vocabulary
from services.pointer_service import replace_unknown
from services.seq2seq_service import Seq2SeqModel
from services.text_data_service import decode_ids, encode_example

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


class StepScorer(Protocol):
    start_token: int
    eos_token: int
    output_size: int

    def initial_state(self) -> Any: ...

    def step(self, state: Any, token: int) -> Tuple[np.ndarray, Any, Optional[np.ndarray]]:
        """(log-probs over the next token, new state, attention used)."""
        ...

    def clone_state(self, state: Any) -> Any: ...


class Seq2SeqScorer:
    """StepScorer over one encoded source; runs without recording gradients."""

    def __init__(self, model: Seq2SeqModel, source_ids: Sequence[int],
                 source_ext_ids: Optional[Sequence[int]] = None, max_oov: int = 0):
        self.model = model
        self.start_token = SOS_ID
        self.eos_token = EOS_ID
        self.output_size = model.output_size(max_oov)
        with no_grad():
            self.encoded = model.encode(source_ids, source_ext_ids, max_oov)

    @classmethod
    def for_example(cls, model: Seq2SeqModel, example: ExtendedExample) -> "Seq2SeqScorer":
        return cls(model, example.source_ids, example.source_ext_ids, example.oov_count)

    def initial_state(self):
        return self.model.initial_state(self.encoded)

    def step(self, state, token: int):
        with no_grad():
            out = self.model.step(state, token, self.encoded)
        log_probs = np.log(np.maximum(out.output.data, LOG_FLOOR))
        return log_probs, out.state, out.attention.data.copy()

    def clone_state(self, state):
        return state.clone()


# ======================================================
# SHARED STEP MACHINERY
# ======================================================

def _check_beam(scorer: StepScorer, beam_size: int, max_len: int) -> None:
    if beam_size < 1:
        raise ConfigError(f"beam size must be >= 1, got {beam_size}")
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    reachable = 1
    for _ in range(max_len):
        reachable *= scorer.output_size
        if reachable >= beam_size:
            return
    raise ConfigError(
        f"beam size {beam_size} exceeds the {reachable} sequences reachable with "
        f"{scorer.output_size} tokens in {max_len} steps"
    )


def _root(scorer: StepScorer) -> Hypothesis:
    log_probs, state, attention = scorer.step(scorer.initial_state(), scorer.start_token)
    return Hypothesis(state=state, next_log_probs=log_probs, next_attention=attention)


def _grow(scorer: StepScorer, parent: Hypothesis, token: int, log_prob: float) -> Hypothesis:
    child = parent.extend(token, log_prob, scorer.eos_token)
    if child.finished:
        return child
    log_probs, state, attention = scorer.step(scorer.clone_state(parent.state), token)
    return replace(child, state=state, next_log_probs=log_probs, next_attention=attention)


def diverse_sibling_scores(parent_score: float, log_probs: Sequence[float], rate: float) -> np.ndarray:
    """S_parent + log P_k - rate * k for children already sorted best first (k from 1)."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    ranks = np.arange(1, len(log_probs) + 1, dtype=np.float64)
    return parent_score + log_probs - rate * ranks


def _advance(
    pool: BeamPool,
    scorer: StepScorer,
    width: int,
    bias: Optional[np.ndarray] = None,
    rank_penalty: float = 0.0,
) -> List[Hypothesis]:
    """
    One search step for `pool`.

    Each live parent proposes its `width` best tokens (after `bias`);
    the best `capacity` candidates over all parents survive. Ties keep
    parent order, then token id order.
    """
    candidates = []
    for parent in pool.live:
        log_probs = parent.next_log_probs
        adjusted = log_probs if bias is None else log_probs + bias
        order = np.argsort(-adjusted, kind="stable")[:width]
        selection = diverse_sibling_scores(parent.score, adjusted[order], rank_penalty)
        for token, score in zip(order, selection):
            candidates.append((float(score), parent, int(token)))

    ranked = sorted(range(len(candidates)), key=lambda i: -candidates[i][0])[:pool.capacity]
    children = [_grow(scorer, candidates[i][1], candidates[i][2], candidates[i][1].next_log_probs[candidates[i][2]])
                for i in ranked]
    pool.admit(children)
    return children


# ======================================================
# SEARCHES
# ======================================================

def greedy_decode(scorer: StepScorer, max_len: int) -> Hypothesis:
    """Argmax each step (first index on ties) until EOS or max_len."""
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    hyp = _root(scorer)
    for _ in range(max_len):
        token = int(np.argmax(hyp.next_log_probs))
        hyp = _grow(scorer, hyp, token, hyp.next_log_probs[token])
        if hyp.finished:
            break
    return hyp


def beam_search(
    scorer: StepScorer,
    beam_size: int,
    max_len: int,
    length_penalty: float = 0.0,
    diversity_rate: float = 0.0,
) -> List[Hypothesis]:
    """
    Beam search with a finished pool.

    Returns up to `beam_size` hypotheses, finished first then padded with
    live ones, best first by S / len^length_penalty.
    """
    _check_beam(scorer, beam_size, max_len)
    pool = BeamPool(beam_size, max_len, length_penalty, live=[_root(scorer)])
    width = min(beam_size, scorer.output_size)
    for _ in range(max_len):
        if pool.done:
            break
        _advance(pool, scorer, width, rank_penalty=diversity_rate)
    return pool.results()


def diverse_beam_search(
    scorer: StepScorer,
    beam_size: int,
    groups: int,
    group_diversity: float,
    max_len: int,
    length_penalty: float = 0.0,
) -> List[List[Hypothesis]]:
    """
    Diverse beam search: `groups` beams of beam_size / groups each.

    Group g's candidates are penalized by group_diversity times the
    number of earlier groups' selections of the same token at this step.
    """
    if groups < 1 or groups > beam_size:
        raise ConfigError(f"groups ({groups}) must be between 1 and beam size ({beam_size})")
    if beam_size % groups:
        raise ConfigError(f"groups ({groups}) must divide beam size ({beam_size})")
    if group_diversity < 0:
        raise ConfigError(f"group diversity must be >= 0, got {group_diversity}")
    _check_beam(scorer, beam_size, max_len)

    per_group = beam_size // groups
    pools = [BeamPool(per_group, max_len, length_penalty, live=[_root(scorer)]) for _ in range(groups)]
    width = min(per_group, scorer.output_size)
    for _ in range(max_len):
        if all(pool.done for pool in pools):
            break
        chosen = np.zeros(scorer.output_size)
        for pool in pools:
            if pool.done:
                continue
            bias = -group_diversity * chosen if group_diversity else None
            for child in _advance(pool, scorer, width, bias=bias):
                chosen[child.tokens[-1]] += 1
    return [pool.results() for pool in pools]


def mmi_rerank(
    nbest: Sequence[Hypothesis],
    backward_scorer: Optional[Callable[[Hypothesis], float]] = None,
    lam: float = 0.0,
    beta: float = 0.0,
    omega: Optional[Callable[[Hypothesis], float]] = None,
    forward_scores: Optional[Sequence[float]] = None,
) -> List[Hypothesis]:
    """
    Stable reorder by log P1(y|x) + lam * log P2(x|y) + beta * omega(y).

    omega defaults to the candidate length.
    """
    nbest = list(nbest)
    forward = [h.score for h in nbest] if forward_scores is None else list(forward_scores)
    if len(forward) != len(nbest):
        raise ContractError(f"{len(forward)} forward scores for {len(nbest)} candidates")
    if lam and backward_scorer is None:
        raise ContractError("mmi_rerank with lam != 0 needs a backward scorer")
    omega = omega or (lambda h: float(h.length))

    ranked = []
    for i, hyp in enumerate(nbest):
        score = forward[i] + beta * omega(hyp)
        if lam:
            score += lam * backward_scorer(hyp)
        ranked.append((score, i))
    ranked.sort(key=lambda pair: -pair[0])
    return [nbest[i] for _, i in ranked]


# ======================================================
# MODEL-LEVEL HELPERS
# ======================================================

def sequence_log_likelihood(model: Seq2SeqModel, example: ExtendedExample) -> float:
    """Σ log P(target | source) under teacher forcing."""
    targets = example.target_ext_ids if model.config.pointer_gen else example.target_ids
    total = 0.0
    with no_grad():
        encoded = model.encode(example.source_ids, example.source_ext_ids, example.oov_count)
        state = model.initial_state(encoded)
        for y_prev, y in zip(targets[:-1], targets[1:]):
            out = model.step(state, y_prev, encoded)
            total += float(np.log(max(out.output.data[y], LOG_FLOOR)))
            state = out.state
    return total


def make_backward_scorer(
    reverse_model: Seq2SeqModel,
    vocab: Vocabulary,
    example: ExtendedExample,
    limits: Tuple[int, int] = (400, 400),
) -> Callable[[Hypothesis], float]:
    """log P(source | candidate) under a model trained with roles swapped."""
    def score(hyp: Hypothesis) -> float:
        candidate = decode_ids(hyp.tokens, vocab, example.oov_tokens)
        if not candidate:
            return float("-inf")
        swapped = encode_example(candidate, example.source_tokens, vocab, limits)
        return sequence_log_likelihood(reverse_model, swapped)
    return score


@dataclass
class DecodeResult:
    example_id: str
    hypotheses: List[Hypothesis]
    best: Hypothesis
    tokens: List[str]
    summary: List[str]
    groups: List[List[Hypothesis]] = field(default_factory=list)


def hypothesis_tokens(hyp: Hypothesis, vocab: Vocabulary, oov_tokens: Sequence[str]) -> Tuple[List[str], List]:
    """Surface tokens of `hyp` with the attention that produced each one."""
    tokens, attentions = [], []
    for idx, attention in zip(hyp.tokens, hyp.attentions):
        if idx == EOS_ID:
            break
        surface = decode_ids([idx], vocab, oov_tokens)
        if surface:
            tokens.append(surface[0])
            attentions.append(attention)
    return tokens, attentions


def decode_example(
    model: Seq2SeqModel,
    example: ExtendedExample,
    decoding: DecodingConfig,
    vocab: Vocabulary,
    reranker: Optional[Callable[[List[Hypothesis]], List[Hypothesis]]] = None,
) -> DecodeResult:
    """Run the configured search on one example and post-process the best hypothesis."""
    scorer = Seq2SeqScorer.for_example(model, example)
    groups: List[List[Hypothesis]] = []
    if decoding.mode == DecodeMode.GREEDY:
        hypotheses = [greedy_decode(scorer, decoding.max_len)]
    elif decoding.mode == DecodeMode.DBS:
        groups = diverse_beam_search(scorer, decoding.beam_size, decoding.groups,
                                     decoding.group_diversity, decoding.max_len, decoding.length_penalty)
        hypotheses = sorted((h for g in groups for h in g),
                            key=lambda h: -h.normalized_score(decoding.length_penalty))
    else:
        hypotheses = beam_search(scorer, decoding.beam_size, decoding.max_len,
                                 decoding.length_penalty, decoding.diversity_rate)
    if reranker is not None:
        hypotheses = reranker(hypotheses)

    best = hypotheses[0]
    tokens, attentions = hypothesis_tokens(best, vocab, example.oov_tokens)
    summary = replace_unknown(tokens, attentions, example.source_tokens) if decoding.replace_unk else list(tokens)
    return DecodeResult(example_id=example.example_id, hypotheses=hypotheses, best=best,
                        tokens=tokens, summary=summary, groups=groups)

"""
Seq2Seq Service - encoder, decoder step and vocabulary distribution

Architecture (single-layer LSTMs):

    encoder     bi-directional LSTM, h^e_j = fwd_j ⊕ bwd_j
    bridge      h^d_0 = tanh(W (fwd_J ⊕ bwd_1) + b),  c^d_0 = cfwd_J ⊕ cbwd_1
    decoder     h^d_t = LSTM(h^d_{t-1}, E_{y_{t-1}} ⊕ h̃_{t-1}),  h̃_0 = 0
    attention   α^e_t over source states (plain, temporal, coverage-aware)
    output      h̃_t = W_z (z^e_t ⊕ [z^d_t] ⊕ h^d_t) + b_z
                P_vocab = softmax(W_d2v h̃_t + b_d2v)
                W_d2v = tanh(E W_proj) under weight sharing
    pointer     optional mixture over the extended vocabulary

Key Concepts:
- Everything is computed per example; batches are loops over rows.
- Previous ids >= |V| (copied OOVs) are fed through the UNK embedding.
- Decoder states are immutable values, so beam branches can share parents.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core import tensor as T
from core.exceptions import ContractError, DimensionError
from core.tensor import Tensor
from models.config import ModelConfig
from models.parameters import ModelParameters
from models.vocabulary import UNK_ID
from services.attention_service import alignment_scores, attention_hidden, project_keys
from services.pointer_service import extended_distribution, generation_probability
from services.repetition_service import (
    CoverageState,
    TemporalHistory,
    coverage_step,
    intra_decoder_attention,
    temporal_attention,
)

logger = logging.getLogger(__name__)


# ======================================================
# LSTM
# ======================================================

def lstm_step(params: ModelParameters, prefix: str, x_in: Tensor, h_prev: Tensor, c_prev: Tensor) -> Tuple[Tensor, Tensor]:
    """One LSTM step; gate rows are ordered input, forget, output, candidate."""
    W, b = params[f"{prefix}.W"], params[f"{prefix}.b"]
    H = h_prev.shape[0]
    if W.shape != (4 * H, x_in.shape[0] + H) or c_prev.shape != (H,):
        raise DimensionError(
            f"{prefix}: weights {W.shape} do not fit input {x_in.shape}, hidden {h_prev.shape}, cell {c_prev.shape}"
        )
    gates = W @ T.concat([x_in, h_prev]) + b
    i = T.sigmoid(gates[0:H])
    f = T.sigmoid(gates[H:2 * H])
    o = T.sigmoid(gates[2 * H:3 * H])
    g = T.tanh(gates[3 * H:4 * H])
    c = f * c_prev + i * g
    h = o * T.tanh(c)
    return h, c


# ======================================================
# ENCODER
# ======================================================

@dataclass
class EncoderOutput:
    """Per-source quantities computed once and reused at every decoder step."""
    states: Tensor
    h0: Tensor
    c0: Tensor
    keys: Tensor
    source_ext_ids: np.ndarray
    max_oov: int = 0
    vocab_matrix: Optional[Tensor] = None

    @property
    def length(self) -> int:
        return self.states.shape[0]


def output_matrix(params: ModelParameters, config: ModelConfig) -> Tensor:
    """W_d2v, derived from the embedding under weight sharing."""
    if config.weight_sharing:
        return T.tanh(params["embedding"] @ params["output.W_proj"])
    return params["output.W_d2v"]


def encode(
    params: ModelParameters,
    config: ModelConfig,
    source_ids: Sequence[int],
    source_ext_ids: Optional[Sequence[int]] = None,
    max_oov: int = 0,
) -> EncoderOutput:
    if len(source_ids) == 0:
        raise ContractError("cannot encode an empty source")
    H = config.d_hidden
    embedded = T.embedding_lookup(params["embedding"], source_ids)
    J = embedded.shape[0]
    rows = [embedded[j] for j in range(J)]

    h, c = T.zeros((H,)), T.zeros((H,))
    forward = []
    for x in rows:
        h, c = lstm_step(params, "encoder.forward", x, h, c)
        forward.append((h, c))

    h, c = T.zeros((H,)), T.zeros((H,))
    backward = [None] * J
    for j in reversed(range(J)):
        h, c = lstm_step(params, "encoder.backward", rows[j], h, c)
        backward[j] = (h, c)

    states = T.stack([T.concat([forward[j][0], backward[j][0]]) for j in range(J)])
    h0 = T.tanh(params["bridge.W"] @ T.concat([forward[-1][0], backward[0][0]]) + params["bridge.b"])
    c0 = T.concat([forward[-1][1], backward[0][1]])

    ext = np.asarray(source_ids if source_ext_ids is None else source_ext_ids, dtype=np.int64)
    if ext.shape != (J,):
        raise DimensionError(f"source_ext_ids {ext.shape} do not match {J} source tokens")
    return EncoderOutput(
        states=states,
        h0=h0,
        c0=c0,
        keys=project_keys(params, "attention", states, config.alignment),
        source_ext_ids=ext,
        max_oov=int(max_oov),
        vocab_matrix=output_matrix(params, config),
    )


# ======================================================
# DECODER
# ======================================================

def _fork(value: Optional[Tensor]) -> Optional[Tensor]:
    # Untracked values get a private buffer; tracked ones must keep their graph node
    if value is None or value.tracked:
        return value
    return Tensor(value.data.copy())


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    attn_hidden: Tensor
    temporal: TemporalHistory = field(default_factory=TemporalHistory)
    past_hiddens: Tuple[Tensor, ...] = ()
    coverage: Optional[CoverageState] = None
    step: int = 0

    def clone(self) -> "DecoderState":
        coverage = None
        if self.coverage is not None:
            coverage = replace(self.coverage, vector=_fork(self.coverage.vector), loss=_fork(self.coverage.loss))
        return replace(
            self,
            h=_fork(self.h),
            c=_fork(self.c),
            attn_hidden=_fork(self.attn_hidden),
            temporal=replace(self.temporal, log_sum=_fork(self.temporal.log_sum)),
            past_hiddens=tuple(_fork(p) for p in self.past_hiddens),
            coverage=coverage,
        )


@dataclass
class DecoderStep:
    """
    Outputs of one decoder step.

    `output` is the distribution the loss and the search use: the
    extended distribution when pointer_gen is on, otherwise P_vocab.
    """
    state: DecoderState
    p_vocab: Tensor
    attention: Tensor
    context: Tensor
    output: Tensor
    scores: Tensor
    p_gen: Optional[Tensor] = None
    coverage_loss: Optional[Tensor] = None
    intra_attention: Optional[Tensor] = None


def initial_decoder_state(config: ModelConfig, encoded: EncoderOutput) -> DecoderState:
    return DecoderState(
        h=encoded.h0,
        c=encoded.c0,
        attn_hidden=T.zeros((config.d_attn_hidden,)),
        coverage=CoverageState.initial(encoded.length) if config.coverage else None,
    )


def vocab_distribution(params: ModelParameters, h_tilde: Tensor, vocab_matrix: Optional[Tensor] = None) -> Tensor:
    W = params["output.W_d2v"] if vocab_matrix is None else vocab_matrix
    return T.softmax(W @ h_tilde + params["output.b_d2v"])


def input_embedding(params: ModelParameters, y_prev: int) -> Tensor:
    idx = int(y_prev)
    if idx >= params["embedding"].shape[0]:
        idx = UNK_ID
    return T.embedding_lookup(params["embedding"], [idx])[0]


def decoder_step(
    params: ModelParameters,
    config: ModelConfig,
    state: DecoderState,
    y_prev: int,
    encoded: EncoderOutput,
    embedded_input: Optional[Tensor] = None,
) -> DecoderStep:
    """
    Consume y_prev and predict the next token.

    Args:
        embedded_input: replaces E_{y_prev} (fused E2E input) when given
    """
    e_prev = input_embedding(params, y_prev) if embedded_input is None else embedded_input
    h, c = lstm_step(params, "decoder", T.concat([e_prev, state.attn_hidden]), state.h, state.c)

    cov_vector = state.coverage.vector if state.coverage is not None else None
    scores = alignment_scores(params, "attention", encoded.keys, h, config.alignment, cov_vector)
    temporal = state.temporal
    if config.temporal_attn:
        alpha, temporal = temporal_attention(scores, state.temporal)
    else:
        alpha = T.softmax(scores)
    z = alpha @ encoded.states

    intra_alpha, z_d = None, None
    if config.intra_decoder:
        intra_alpha, z_d = intra_decoder_attention(params, state.past_hiddens, h, config.alignment)

    h_tilde = attention_hidden(params, z, h, z_d)
    p_vocab = vocab_distribution(params, h_tilde, encoded.vocab_matrix)

    covloss, coverage = None, state.coverage
    if coverage is not None:
        covloss, coverage = coverage_step(coverage, alpha)

    p_gen, output = None, p_vocab
    if config.pointer_gen:
        p_gen = generation_probability(params, z, h, e_prev)
        output = extended_distribution(
            p_vocab, alpha, p_gen, encoded.source_ext_ids, config.vocab_size, encoded.max_oov
        ).probs

    new_state = DecoderState(
        h=h,
        c=c,
        attn_hidden=h_tilde,
        temporal=temporal,
        past_hiddens=state.past_hiddens + (h,) if config.intra_decoder else (),
        coverage=coverage,
        step=state.step + 1,
    )
    return DecoderStep(
        state=new_state,
        p_vocab=p_vocab,
        attention=alpha,
        context=z,
        output=output,
        scores=scores,
        p_gen=p_gen,
        coverage_loss=covloss,
        intra_attention=intra_alpha,
    )


# ======================================================
# MODEL
# ======================================================

class Seq2SeqModel:
    """ModelConfig plus its parameters, with the per-example entry points."""

    def __init__(self, config: ModelConfig, params: ModelParameters):
        if params.config != config:
            raise ContractError("parameters were built for a different model configuration")
        self.config = config
        self.params = params

    @classmethod
    def from_config(cls, config: ModelConfig, seed: int = 0) -> "Seq2SeqModel":
        return cls(config, ModelParameters.initialize(config, np.random.default_rng(seed)))

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    def output_size(self, max_oov: int = 0) -> int:
        return self.vocab_size + (max_oov if self.config.pointer_gen else 0)

    def encode(self, source_ids: Sequence[int], source_ext_ids: Optional[Sequence[int]] = None,
               max_oov: int = 0) -> EncoderOutput:
        return encode(self.params, self.config, source_ids, source_ext_ids, max_oov)

    def initial_state(self, encoded: EncoderOutput) -> DecoderState:
        return initial_decoder_state(self.config, encoded)

    def step(self, state: DecoderState, y_prev: int, encoded: EncoderOutput,
             embedded_input: Optional[Tensor] = None) -> DecoderStep:
        return decoder_step(self.params, self.config, state, y_prev, encoded, embedded_input)

    def parameters(self) -> List[Tensor]:
        return self.params.tensors()

    def zero_grad(self) -> None:
        self.params.zero_grad()

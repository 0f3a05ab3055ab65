"""
Training Service

Word-level and sequence-level training strategies, and the Trainer that
runs them epoch by epoch.

Strategies:
    xent       teacher forcing, mean token negative log-likelihood
    dad        scheduled sampling: the decoder input is the ground truth with
               probability p_dad(k), else a token sampled from the model
    e2e        scheduled sampling whose model-side input is the fusion of the
               top-k embeddings, so gradients flow through the prediction
    reinforce  sampled rollout, loss -(R - b) Σ log P
    mixer      XENT on the first t* steps, REINFORCE on the sampled rest;
               t* shrinks by Δ every N epochs
    scst       REINFORCE with b = reward of the greedy rollout, mixed with
               scheduled-sampling XENT: γ L_RL + (1 - γ) L_XENT

Key Concepts:
- Losses are averaged per predicted token (XENT) or per example (RL).
- Rewards are ROUGE F-scores over extended-vocabulary id sequences.
- k in p_dad(k) is the optimizer step counter.
- All randomness comes from the trainer's seeded numpy Generator, which
  is checkpointed so resumed runs continue the same loss curve.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from core import tensor as T
from core.config import RunConfig, write_manifest
from core.exceptions import ConfigError, ContractError, DataError
from core.tensor import Tensor, no_grad
from models.config import (
    Baseline,
    DadDecay,
    DecodeMode,
    DecodingConfig,
    OptimizerConfig,
    RewardMetric,
    Strategy,
    TrainingSchedule,
    validate_dad_alpha,
)
from models.rouge_score import RougeScore
from models.vocabulary import EOS_ID, SOS_ID, Batch, BatchRow, ExtendedExample, Vocabulary
from services.checkpoint_service import load_checkpoint, restore_model, restore_optimizer, save_checkpoint
from services.decoding_service import decode_example
from services.export_service import MetricsLogger
from services.optimizer_service import OptimizerState, adam_step, clip_gradients
from services.rouge_service import evaluate_corpus, score_pair
from services.seq2seq_service import Seq2SeqModel
from services.text_data_service import iterate_batches

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


# ======================================================
# TOKEN-LEVEL HELPERS
# ======================================================

def _total(values: Iterable[Tensor]) -> Tensor:
    total = None
    for value in values:
        total = value if total is None else total + value
    return T.zeros(()) if total is None else total


def token_nll(distribution: Tensor, target: int) -> Tensor:
    """-log max(P(target), 1e-12); a target with exactly zero mass is a data error."""
    target = int(target)
    if not 0 <= target < distribution.shape[0]:
        raise DataError(f"target id {target} outside the output distribution of size {distribution.shape[0]}")
    if distribution.data[target] == 0.0:
        raise DataError(f"target id {target} is unreachable (zero probability)")
    return -T.log(T.clamp_min(distribution[target], PROB_FLOOR))


def sample_token(probs: np.ndarray, rng: np.random.Generator) -> int:
    p = np.asarray(probs, dtype=np.float64)
    return int(rng.choice(p.shape[0], p=p / p.sum()))


def loss_targets(model: Seq2SeqModel, row: BatchRow) -> List[int]:
    """SOS ... EOS over V_ext with copying, over V (OOV -> UNK) without."""
    ids = row.target_ext_ids if model.config.pointer_gen else row.target_ids
    return [int(i) for i in ids]


# ======================================================
# WORD-LEVEL TRAINING
# ======================================================

def dad_probability(k: int, decay: Union[DadDecay, str], alpha: float) -> float:
    """Probability of feeding the ground-truth token at training step k."""
    if k < 0:
        raise ContractError(f"schedule step must be >= 0, got {k}")
    decay = DadDecay(decay)
    validate_dad_alpha(decay, alpha)
    if decay == DadDecay.LINEAR:
        return min(1.0, max(0.0, 1.0 - alpha * k))
    if decay == DadDecay.EXPONENTIAL:
        return float(alpha ** k)
    if decay == DadDecay.INVERSE_SIGMOID:
        return float(alpha / (alpha + math.exp(min(k / alpha, 700.0))))
    return float(alpha)


def _take_truth(p_dad: float, rng: np.random.Generator) -> bool:
    return bool(rng.random() < p_dad)


def scheduled_input(y_true_prev: int, y_model_prev: int, p_dad: float, rng: np.random.Generator) -> int:
    return y_true_prev if _take_truth(p_dad, rng) else y_model_prev


def e2e_fused_input(p_vocab: Tensor, k: int, embedding: Tensor) -> Tensor:
    """Σ_i P_samp(i) E_i over the renormalized top-k tokens."""
    V = p_vocab.shape[0]
    if k < 1 or k > V:
        raise ContractError(f"top-k fusion needs 1 <= k <= {V}, got {k}")
    top = np.argsort(-p_vocab.data, kind="stable")[:k]
    probs = p_vocab[top]
    weights = probs / probs.sum()
    return weights @ T.embedding_lookup(embedding, top)


@dataclass
class SequenceLoss:
    nll: Tensor
    coverage: Tensor
    tokens: int


def teacher_forced_loss(
    model: Seq2SeqModel,
    row: BatchRow,
    max_oov: int,
    p_dad: float = 1.0,
    rng: Optional[np.random.Generator] = None,
    e2e_top_k: Optional[int] = None,
) -> SequenceLoss:
    """
    Summed NLL (and covloss) of one target sequence.

    With p_dad < 1 each input after the first is drawn by scheduled
    sampling; with e2e_top_k the model side is the fused embedding.
    """
    if p_dad < 1.0 and rng is None:
        raise ContractError("scheduled sampling needs a seeded rng")
    targets = loss_targets(model, row)
    inputs = [int(i) for i in row.target_ext_ids]
    encoded = model.encode(row.source_ids, row.source_ext_ids, max_oov)
    state = model.initial_state(encoded)

    nll, coverage, previous = [], [], None
    for t in range(len(targets) - 1):
        y_in, embedded = inputs[t], None
        if t > 0 and p_dad < 1.0:
            if e2e_top_k:
                if not _take_truth(p_dad, rng):
                    embedded = e2e_fused_input(previous.p_vocab, e2e_top_k, model.params["embedding"])
            else:
                y_model = sample_token(previous.output.data, rng)
                y_in = scheduled_input(y_in, y_model, p_dad, rng)
        out = model.step(state, y_in, encoded, embedded)
        nll.append(token_nll(out.output, targets[t + 1]))
        if out.coverage_loss is not None:
            coverage.append(out.coverage_loss)
        state, previous = out.state, out
    return SequenceLoss(nll=_total(nll), coverage=_total(coverage), tokens=len(targets) - 1)


def xent_loss(
    model: Seq2SeqModel,
    batch: Batch,
    p_dad: float = 1.0,
    rng: Optional[np.random.Generator] = None,
    e2e_top_k: Optional[int] = None,
    reduction: str = "mean",
) -> Tensor:
    """
    Token-averaged NLL over the batch, plus λ_cov · covloss under the same
    normalizer when coverage is on. reduction="sum" skips the division.
    """
    if reduction not in ("mean", "sum"):
        raise ContractError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    parts = [teacher_forced_loss(model, row, batch.max_oov_count, p_dad, rng, e2e_top_k) for row in batch.rows()]
    total = _total(p.nll for p in parts)
    if model.config.coverage:
        total = total + model.config.coverage_weight * _total(p.coverage for p in parts)
    if reduction == "sum":
        return total
    return total / float(sum(p.tokens for p in parts))


# ======================================================
# SEQUENCE-LEVEL TRAINING
# ======================================================

@dataclass
class Rollout:
    """Self-fed generation, optionally after a ground-truth prefix."""
    tokens: List[int]
    log_probs: List[Tensor]
    prefix: List[int] = field(default_factory=list)
    prefix_nll: Optional[Tensor] = None

    @property
    def candidate(self) -> List[int]:
        """prefix + generated ids with the trailing EOS stripped."""
        ids = self.prefix + self.tokens
        return ids[:-1] if ids and ids[-1] == EOS_ID else ids


def rollout(
    model: Seq2SeqModel,
    row: BatchRow,
    max_oov: int,
    mode: str,
    max_len: int,
    rng: Optional[np.random.Generator] = None,
    prefix: Sequence[int] = (),
) -> Rollout:
    """
    Generate until EOS or max_len tokens (prefix included).

    mode "sample" draws y_t ~ P_t, mode "greedy" takes the argmax. The
    prefix tokens are force-fed and scored as XENT.
    """
    if mode not in ("sample", "greedy"):
        raise ContractError(f"rollout mode must be 'sample' or 'greedy', got {mode!r}")
    if mode == "sample" and rng is None:
        raise ContractError("sampled rollouts need a seeded rng")
    encoded = model.encode(row.source_ids, row.source_ext_ids, max_oov)
    state = model.initial_state(encoded)

    y_prev, prefix_nll = SOS_ID, []
    for target in prefix:
        out = model.step(state, y_prev, encoded)
        prefix_nll.append(token_nll(out.output, target))
        state, y_prev = out.state, int(target)

    tokens, log_probs = [], []
    if y_prev != EOS_ID:
        for _ in range(max(max_len - len(prefix), 0)):
            out = model.step(state, y_prev, encoded)
            probs = out.output.data
            y = sample_token(probs, rng) if mode == "sample" else int(np.argmax(probs))
            tokens.append(y)
            log_probs.append(T.log(T.clamp_min(out.output[y], PROB_FLOOR)))
            state, y_prev = out.state, y
            if y == EOS_ID:
                break
    return Rollout(tokens=tokens, log_probs=log_probs, prefix=[int(t) for t in prefix],
                   prefix_nll=_total(prefix_nll) if prefix_nll else None)


def rouge_reward(candidate: Sequence, reference: Sequence, variant: Union[RewardMetric, str] = RewardMetric.ROUGE_L) -> float:
    """ROUGE F-score in [0, 1]."""
    return score_pair(list(candidate), list(reference), RewardMetric(variant).value).f1


def policy_gradient_loss(log_probs: Union[Sequence[Tensor], Tensor], reward: float, baseline: float = 0.0) -> Tensor:
    """-(R - b) · Σ_t log P(y_t)."""
    total = log_probs if isinstance(log_probs, Tensor) else _total(log_probs)
    return total.sum() * (-(reward - baseline))


def mixed_loss(rl_loss, xent: Union[Tensor, float], gamma: float):
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"mixed-loss gamma must lie in [0, 1], got {gamma}")
    return gamma * rl_loss + (1.0 - gamma) * xent


def mixer_plan(T_len: int, delta: int, epochs_per_step: int, epoch: int, warmup: Optional[int] = None) -> int:
    """
    Split point t*: steps < t* use XENT, steps >= t* use REINFORCE.

    The first `warmup` epochs (default: epochs_per_step) are pure XENT;
    afterwards the REINFORCE suffix grows by `delta` every
    `epochs_per_step` epochs.
    """
    if delta < 1 or epochs_per_step < 1:
        raise ConfigError(f"MIXER needs delta >= 1 and epochs_per_step >= 1, got {delta}, {epochs_per_step}")
    warmup = epochs_per_step if warmup is None else warmup
    if epoch < warmup:
        return T_len
    return max(0, T_len - delta * (1 + (epoch - warmup) // epochs_per_step))


# ======================================================
# TRAINER
# ======================================================

@dataclass
class EpochMetrics:
    epoch: int
    step: int
    strategy: str
    loss: float
    rouge1: float = float("nan")
    rouge2: float = float("nan")
    rougeL: float = float("nan")

    def to_dict(self) -> Dict:
        return asdict(self)


class Trainer:
    """
    Owns the model, optimizer state, RNG stream and counters of one run.
    """

    def __init__(
        self,
        model: Seq2SeqModel,
        vocab: Vocabulary,
        schedule: Optional[TrainingSchedule] = None,
        optimizer_config: Optional[OptimizerConfig] = None,
        seed: int = 0,
        batch_size: int = 16,
        tgt_max_len: int = 100,
        progress: bool = False,
    ):
        if len(vocab) != model.vocab_size:
            raise ContractError(f"vocabulary has {len(vocab)} entries but the model expects {model.vocab_size}")
        self.model = model
        self.vocab = vocab
        self.schedule = schedule or TrainingSchedule()
        self.optimizer = OptimizerState.for_parameters(model.params, optimizer_config)
        self.rng = np.random.default_rng(seed)
        self.batch_size = batch_size
        self.tgt_max_len = tgt_max_len
        self.progress = progress
        self.epoch = 0
        self.step = 0
        self.baseline_value = self.schedule.reinforce_baseline

    # ---------------- losses ----------------

    @property
    def p_dad(self) -> float:
        return dad_probability(self.step, self.schedule.dad_decay, self.schedule.dad_alpha)

    @property
    def rollout_len(self) -> int:
        return self.tgt_max_len + 1

    def _reference(self, row: BatchRow) -> List[int]:
        return loss_targets(self.model, row)[1:-1]

    def _baseline(self) -> float:
        if self.schedule.baseline == Baseline.EMA:
            return self.baseline_value
        return self.schedule.reinforce_baseline

    def _update_baseline(self, rewards: Sequence[float]) -> None:
        if self.schedule.baseline == Baseline.EMA and rewards:
            decay = self.schedule.baseline_decay
            self.baseline_value = decay * self.baseline_value + (1.0 - decay) * float(np.mean(rewards))

    def reinforce_loss(self, batch: Batch) -> Tensor:
        baseline, rewards, losses = self._baseline(), [], []
        for row in batch.rows():
            sampled = rollout(self.model, row, batch.max_oov_count, "sample", self.rollout_len, self.rng)
            reward = rouge_reward(sampled.candidate, self._reference(row), self.schedule.reward)
            rewards.append(reward)
            losses.append(policy_gradient_loss(sampled.log_probs, reward, baseline))
        self._update_baseline(rewards)
        return _total(losses) / float(len(losses))

    def scst_loss(self, batch: Batch) -> Tensor:
        rl = []
        for row in batch.rows():
            sampled = rollout(self.model, row, batch.max_oov_count, "sample", self.rollout_len, self.rng)
            with no_grad():
                greedy = rollout(self.model, row, batch.max_oov_count, "greedy", self.rollout_len)
            reference = self._reference(row)
            reward = rouge_reward(sampled.candidate, reference, self.schedule.reward)
            baseline = rouge_reward(greedy.candidate, reference, self.schedule.reward)
            rl.append(policy_gradient_loss(sampled.log_probs, reward, baseline))
        rl_loss = _total(rl) / float(len(rl))
        xent = xent_loss(self.model, batch, p_dad=self.p_dad, rng=self.rng)
        return mixed_loss(rl_loss, xent, self.schedule.gamma)

    def mixer_loss(self, batch: Batch) -> Tensor:
        baseline, rewards = self._baseline(), []
        xent_parts, xent_tokens, rl_parts = [], 0, []
        for row in batch.rows():
            targets = loss_targets(self.model, row)
            t_star = mixer_plan(len(targets) - 1, self.schedule.mixer_delta, self.schedule.mixer_epochs,
                                self.epoch, self.schedule.mixer_warmup)
            result = rollout(self.model, row, batch.max_oov_count, "sample", self.rollout_len, self.rng,
                             prefix=targets[1:1 + t_star])
            if result.prefix_nll is not None:
                xent_parts.append(result.prefix_nll)
                xent_tokens += t_star
            if result.tokens:
                reward = rouge_reward(result.candidate, targets[1:-1], self.schedule.reward)
                rewards.append(reward)
                rl_parts.append(policy_gradient_loss(result.log_probs, reward, baseline))
        self._update_baseline(rewards)
        loss = T.zeros(())
        if xent_parts:
            loss = loss + _total(xent_parts) / float(xent_tokens)
        if rl_parts:
            loss = loss + _total(rl_parts) / float(len(rl_parts))
        return loss

    def batch_loss(self, batch: Batch) -> Tensor:
        strategy = self.schedule.strategy
        if strategy == Strategy.XENT:
            return xent_loss(self.model, batch)
        if strategy == Strategy.DAD:
            return xent_loss(self.model, batch, p_dad=self.p_dad, rng=self.rng)
        if strategy == Strategy.E2E:
            return xent_loss(self.model, batch, p_dad=self.p_dad, rng=self.rng, e2e_top_k=self.schedule.e2e_top_k)
        if strategy == Strategy.REINFORCE:
            return self.reinforce_loss(batch)
        if strategy == Strategy.MIXER:
            return self.mixer_loss(batch)
        return self.scst_loss(batch)

    # ---------------- updates ----------------

    def train_batch(self, batch: Batch) -> float:
        self.model.zero_grad()
        loss = self.batch_loss(batch)
        if not np.isfinite(loss.item()):
            raise DataError(f"non-finite loss {loss.item()} at step {self.step}")
        if loss.tracked:
            loss.backward()
            clip_gradients(self.model.parameters(), self.optimizer.config.max_grad_norm)
            adam_step(self.optimizer, self.model.params)
        self.step += 1
        return loss.item()

    def train_epoch(self, examples: Sequence[ExtendedExample]) -> float:
        losses = []
        batches = iterate_batches(examples, self.batch_size, self.rng)
        total = math.ceil(len(examples) / self.batch_size)
        for batch in tqdm(batches, total=total, desc=f"epoch {self.epoch + 1}", disable=not self.progress, leave=False):
            losses.append(self.train_batch(batch))
        self.epoch += 1
        return float(np.mean(losses)) if losses else float("nan")

    def evaluate(self, examples: Sequence[ExtendedExample]) -> Dict[str, RougeScore]:
        """Greedy-decode `examples` and score against their reference summaries."""
        decoding = DecodingConfig(mode=DecodeMode.GREEDY, max_len=self.rollout_len)
        pairs = []
        for example in tqdm(examples, desc="dev", disable=not self.progress, leave=False):
            result = decode_example(self.model, example, decoding, self.vocab)
            pairs.append((result.summary, example.target_tokens))
        return evaluate_corpus(pairs)

    def fit(
        self,
        train: Sequence[ExtendedExample],
        dev: Optional[Sequence[ExtendedExample]] = None,
        epochs: int = 35,
        metrics: Optional[MetricsLogger] = None,
        checkpoint_dir: Optional[Union[str, Path]] = None,
    ) -> List[EpochMetrics]:
        """Train until `epochs` total epochs have run (resumed runs continue the count)."""
        history = []
        while self.epoch < epochs:
            loss = self.train_epoch(train)
            row = EpochMetrics(epoch=self.epoch, step=self.step, strategy=self.schedule.strategy.value, loss=loss)
            if dev:
                scores = self.evaluate(dev)
                row.rouge1, row.rouge2, row.rougeL = (scores["rouge_1"].f1, scores["rouge_2"].f1, scores["rouge_l"].f1)
            logger.info(
                f"Epoch {row.epoch} step {row.step} [{row.strategy}] loss={row.loss:.4f} "
                f"R-1={row.rouge1:.4f} R-2={row.rouge2:.4f} R-L={row.rougeL:.4f}"
            )
            if metrics is not None:
                metrics.append(row.to_dict())
            if checkpoint_dir is not None:
                self.save(Path(checkpoint_dir) / f"epoch_{self.epoch:03d}.ckpt")
                self.save(Path(checkpoint_dir) / "latest.ckpt")
            history.append(row)
        return history

    # ---------------- persistence ----------------

    def save(self, path: Union[str, Path]) -> Path:
        extra = {"rng": self.rng.bit_generator.state, "baseline": self.baseline_value}
        return save_checkpoint(path, self.model, self.optimizer, epoch=self.epoch, step=self.step, extra=extra)

    @classmethod
    def resume(cls, path: Union[str, Path], vocab: Vocabulary, schedule: Optional[TrainingSchedule] = None,
               **kwargs) -> "Trainer":
        checkpoint = load_checkpoint(path)
        model = restore_model(checkpoint)
        trainer = cls(model, vocab, schedule, checkpoint.optimizer_config, **kwargs)
        trainer.optimizer = restore_optimizer(checkpoint, model.params)
        trainer.epoch, trainer.step = checkpoint.epoch, checkpoint.step
        if "rng" in checkpoint.extra:
            trainer.rng.bit_generator.state = checkpoint.extra["rng"]
        trainer.baseline_value = float(checkpoint.extra.get("baseline", trainer.baseline_value))
        logger.info(f"Resumed from {path} at epoch {trainer.epoch}, step {trainer.step}")
        return trainer


def train_loop(
    config: RunConfig,
    vocab: Vocabulary,
    train: Sequence[ExtendedExample],
    dev: Optional[Sequence[ExtendedExample]] = None,
    resume_from: Optional[Union[str, Path]] = None,
) -> List[EpochMetrics]:
    """
    Full training run: manifest, metrics CSV and per-epoch checkpoints
    under config.output_dir.
    """
    output_dir = Path(config.output_dir)
    write_manifest(config, output_dir)
    schedule = config.build_schedule()
    init_seed, train_seed = np.random.SeedSequence(config.seed).generate_state(2)
    options = dict(seed=int(train_seed), batch_size=config.batch_size,
                   tgt_max_len=config.tgt_max_len, progress=config.progress)

    if resume_from is not None:
        trainer = Trainer.resume(resume_from, vocab, schedule, **options)
        if trainer.model.config != config.build_model_config(len(vocab)):
            raise ConfigError("resumed checkpoint was trained with a different model configuration")
    else:
        model = Seq2SeqModel.from_config(config.build_model_config(len(vocab)), seed=int(init_seed))
        trainer = Trainer(model, vocab, schedule, config.build_optimizer(), **options)

    metrics = MetricsLogger(
        output_dir / "metrics.csv",
        header={"strategy": schedule.strategy.value, "dad_decay": schedule.dad_decay.value,
                "dad_alpha": schedule.dad_alpha, "model_id": trainer.model.config.model_id},
        append=resume_from is not None,
    )
    logger.info(
        f"Training {trainer.model.config.model_id} with {schedule.strategy.value} "
        f"on {len(train)} examples for {config.epochs} epochs"
    )
    return trainer.fit(train, dev, config.epochs, metrics, output_dir / "checkpoints")

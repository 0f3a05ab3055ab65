"""
Test helpers: micro model configs, a table-driven StepScorer with an
exhaustive-search oracle, and a synthetic copy corpus.
"""

import json
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from models.config import ModelConfig

# |V| = 12 with the four reserved tokens
TOY_WORDS = ["the", "a", "cat", "dog", "sat", "on", "mat", "ran"]

MICRO = dict(vocab_size=12, d_emb=4, d_hidden=6, init_scale=0.5)


def micro_config(**flags) -> ModelConfig:
    fields = dict(MICRO)
    fields.update(flags)
    return ModelConfig(**fields)


class TableScorer:
    """
    StepScorer whose next-token distribution is a seeded function of the prefix.

    The state is the tuple of tokens consumed so far (start token included).
    """

    def __init__(self, vocab_size: int = 4, seed: int = 0, eos_token: int = 1, start_token: int = 0,
                 temperature: float = 1.5):
        self.output_size = vocab_size
        self.seed = seed
        self.eos_token = eos_token
        self.start_token = start_token
        self.temperature = temperature
        self.calls = 0

    def initial_state(self):
        return ()

    def log_probs(self, prefix: Tuple[int, ...]) -> np.ndarray:
        rng = np.random.default_rng([self.seed, *prefix])
        logits = self.temperature * rng.normal(size=self.output_size)
        return logits - np.logaddexp.reduce(logits)

    def step(self, state, token):
        self.calls += 1
        prefix = tuple(state) + (int(token),)
        return self.log_probs(prefix), prefix, None

    def clone_state(self, state):
        return state


def enumerate_sequences(scorer, max_len: int) -> List[Tuple[Tuple[int, ...], float]]:
    """Every EOS-terminated sequence up to max_len plus every unfinished one of length max_len."""
    results = []

    def expand(log_probs: np.ndarray, state, tokens: Tuple[int, ...], score: float):
        for y in range(scorer.output_size):
            seq, s = tokens + (y,), score + float(log_probs[y])
            if y == scorer.eos_token or len(seq) == max_len:
                results.append((seq, s))
            else:
                next_log_probs, next_state, _ = scorer.step(scorer.clone_state(state), y)
                expand(next_log_probs, next_state, seq, s)

    log_probs, state, _ = scorer.step(scorer.initial_state(), scorer.start_token)
    expand(log_probs, state, (), 0.0)
    return results


COPY_FILLER = ["the", "report", "said", "on", "monday", "that", "officials", "met", "in", "city",
               "after", "a", "long", "week", "of", "talks"]
COPY_VERBS = ["visited", "praised", "joined", "left"]


def copy_corpus(n: int = 16, seed: int = 7) -> List[Dict]:
    """
    Articles mention two planted names; the summary copies them as
    "<name1> <verb> <name2>". Names are unique per record, so they stay
    out of vocabulary once the cap excludes singletons.
    """
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        first, second = f"zed{i}a", f"kol{i}b"
        verb = COPY_VERBS[i % len(COPY_VERBS)]
        filler = [str(w) for w in rng.choice(COPY_FILLER, size=8)]
        article = filler[:3] + [first, verb, second] + filler[3:]
        records.append({"id": f"c{i}", "article": " ".join(article), "summary": f"{first} {verb} {second}"})
    return records


def write_jsonl(records: List[Dict], path: Path) -> Path:
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    return path

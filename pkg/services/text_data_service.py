"""
Text Data Service

Corpus ingestion, vocabulary construction, per-example extended
vocabularies, batching and id -> token conversion.

Corpus format (UTF-8 JSON Lines, one record per line):
    {"id": "optional", "article": "pre tokenized text", "summary": "pre tokenized text"}

Vocabulary file (UTF-8): one `token<TAB>count` per line, descending count.
Reserved tokens are never written; they are injected on load.

Design Principles:
1. Tokenization happens upstream: text is split on whitespace, case kept
2. Vocabulary ranking is deterministic: count desc, then token asc
3. The vocabulary cap counts the reserved tokens
"""

import json
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import jsonschema
import numpy as np

from core.exceptions import ContractError, DataError, VocabIndexError
from models.vocabulary import (
    EOS_ID,
    PAD_ID,
    RESERVED_TOKENS,
    SOS_ID,
    Batch,
    ExtendedExample,
    Vocabulary,
)

logger = logging.getLogger(__name__)

# ======================================================
# JSON SCHEMAS
# ======================================================

CORPUS_RECORD_SCHEMA = {
    "type": "object",
    "required": ["article", "summary"],
    "properties": {
        "id": {"type": ["string", "integer"]},
        "article": {"type": "string"},
        "summary": {"type": "string"},
    },
}


def tokenize(text: str) -> List[str]:
    return text.split()


# ======================================================
# CORPUS
# ======================================================

def read_corpus(path: Union[str, Path]) -> Iterator[Dict]:
    """
    Stream validated corpus records.

    Each yielded dict has "id", "article" and "summary" token lists.

    Raises:
        FileNotFoundError: if `path` is missing
        DataError: malformed JSON or a record failing the schema
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                jsonschema.validate(instance=record, schema=CORPUS_RECORD_SCHEMA)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON: {e}")
            except jsonschema.ValidationError as e:
                raise DataError(f"{path}:{lineno}: {e.message}")
            yield {
                "id": str(record.get("id", lineno)),
                "article": tokenize(record["article"]),
                "summary": tokenize(record["summary"]),
            }


def load_corpus(path: Union[str, Path]) -> List[Dict]:
    records = list(read_corpus(path))
    logger.info(f"Loaded {len(records)} records from {path}")
    return records


# ======================================================
# VOCABULARY
# ======================================================

def build_vocab(corpus: Iterable[Dict], cap: int = 50000) -> Vocabulary:
    """
    Top tokens by count over articles and summaries.

    Args:
        corpus: records with "article" / "summary" token lists (or strings)
        cap: maximum vocabulary size, reserved tokens included

    Raises:
        ContractError: empty corpus or cap below the reserved block
    """
    if cap < len(RESERVED_TOKENS):
        raise ContractError(f"vocabulary cap {cap} is smaller than the {len(RESERVED_TOKENS)} reserved tokens")
    counts: Counter = Counter()
    records = 0
    for record in corpus:
        records += 1
        for key in ("article", "summary"):
            tokens = record[key]
            counts.update(tokenize(tokens) if isinstance(tokens, str) else tokens)
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    if records == 0 or not counts:
        raise ContractError("cannot build a vocabulary from an empty corpus")

    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap - len(RESERVED_TOKENS)]
    vocab = Vocabulary.from_counts(ranked)
    logger.info(f"Built vocabulary of {len(vocab)} entries from {records} records ({len(counts)} distinct tokens)")
    return vocab


def save_vocab(vocab: Vocabulary, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{token}\t{count}" for token, count in vocab.entries()]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    logger.info(f"Wrote vocabulary ({len(vocab)} entries) to {path}")
    return path


def load_vocab(path: Union[str, Path], cap: Optional[int] = None) -> Vocabulary:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"vocabulary file not found: {path}")
    ranked: List[Tuple[str, int]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        token, sep, count = line.rpartition("\t")
        if not sep or not token:
            raise DataError(f"{path}:{lineno}: expected 'token<TAB>count'")
        try:
            ranked.append((token, int(count)))
        except ValueError:
            raise DataError(f"{path}:{lineno}: count {count!r} is not an integer")
    if cap is not None:
        ranked = ranked[:max(cap - len(RESERVED_TOKENS), 0)]
    return Vocabulary.from_counts(ranked)


# ======================================================
# EXAMPLES AND BATCHES
# ======================================================

def encode_example(
    article: Sequence[str],
    summary: Sequence[str],
    vocab: Vocabulary,
    limits: Tuple[int, int] = (400, 100),
    example_id: str = "",
) -> ExtendedExample:
    """
    Truncate, map to ids and number source OOVs by first occurrence.

    Targets are wrapped as SOS ... EOS after truncation.

    Raises:
        ContractError: empty article or non-positive limits
    """
    src_max, tgt_max = limits
    if src_max < 1 or tgt_max < 1:
        raise ContractError(f"length limits must be positive, got {limits}")
    if not article:
        raise ContractError(f"example {example_id!r} has an empty article")

    source = list(article[:src_max])
    target = list(summary[:tgt_max])
    V = len(vocab)

    oov_tokens: List[str] = []
    oov_index: Dict[str, int] = {}
    source_ids, source_ext_ids = [], []
    for token in source:
        idx = vocab.id_of(token)
        source_ids.append(idx)
        if token in vocab:
            source_ext_ids.append(idx)
            continue
        if token not in oov_index:
            oov_index[token] = len(oov_tokens)
            oov_tokens.append(token)
        source_ext_ids.append(V + oov_index[token])

    target_ids = [SOS_ID]
    target_ext_ids = [SOS_ID]
    for token in target:
        idx = vocab.id_of(token)
        target_ids.append(idx)
        if token not in vocab and token in oov_index:
            target_ext_ids.append(V + oov_index[token])
        else:
            target_ext_ids.append(idx)
    target_ids.append(EOS_ID)
    target_ext_ids.append(EOS_ID)

    return ExtendedExample(
        source_tokens=source,
        target_tokens=target,
        source_ids=source_ids,
        source_ext_ids=source_ext_ids,
        oov_tokens=oov_tokens,
        target_ids=target_ids,
        target_ext_ids=target_ext_ids,
        example_id=example_id,
    )


def encode_corpus(records: Iterable[Dict], vocab: Vocabulary, limits: Tuple[int, int]) -> List[ExtendedExample]:
    return [encode_example(r["article"], r["summary"], vocab, limits, example_id=r.get("id", ""))
            for r in records]


def _pad(rows: List[List[int]]) -> Tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(r) for r in rows], dtype=np.int64)
    matrix = np.full((len(rows), int(lengths.max())), PAD_ID, dtype=np.int64)
    for i, row in enumerate(rows):
        matrix[i, :len(row)] = row
    return matrix, lengths


def make_batch(examples: Sequence[ExtendedExample], batch_size: Optional[int] = None) -> Batch:
    """Pad `examples` (1 <= len <= batch_size) into one Batch."""
    if not examples:
        raise ContractError("make_batch needs at least one example")
    if batch_size is not None and len(examples) > batch_size:
        raise ContractError(f"{len(examples)} examples exceed batch size {batch_size}")
    source, source_lengths = _pad([e.source_ids for e in examples])
    source_ext, _ = _pad([e.source_ext_ids for e in examples])
    target, target_lengths = _pad([e.target_ids for e in examples])
    target_ext, _ = _pad([e.target_ext_ids for e in examples])
    return Batch(
        source=source,
        source_ext=source_ext,
        source_lengths=source_lengths,
        target=target,
        target_ext=target_ext,
        target_lengths=target_lengths,
        max_oov_count=max(e.oov_count for e in examples),
        oov_lists=[list(e.oov_tokens) for e in examples],
        examples=list(examples),
    )


def iterate_batches(
    examples: Sequence[ExtendedExample],
    batch_size: int,
    rng: Optional[np.random.Generator] = None,
) -> Iterator[Batch]:
    """Consecutive batches; shuffled first when `rng` is given."""
    order = np.arange(len(examples))
    if rng is not None:
        order = rng.permutation(len(examples))
    for start in range(0, len(order), batch_size):
        yield make_batch([examples[i] for i in order[start:start + batch_size]], batch_size)


def decode_ids(ids: Iterable[int], vocab: Vocabulary, oov_tokens: Sequence[str] = ()) -> List[str]:
    """
    Ids -> tokens over the extended vocabulary.

    EOS terminates, PAD and SOS are dropped, ids >= |V| map through
    `oov_tokens`.
    """
    V = len(vocab)
    tokens = []
    for idx in ids:
        idx = int(idx)
        if idx == EOS_ID:
            break
        if idx in (PAD_ID, SOS_ID):
            continue
        if idx >= V:
            k = idx - V
            if k >= len(oov_tokens):
                raise VocabIndexError(f"token id {idx} outside extended range [0, {V + len(oov_tokens)})")
            tokens.append(oov_tokens[k])
        elif idx < 0:
            raise VocabIndexError(f"token id {idx} is negative")
        else:
            tokens.append(vocab.token_of(idx))
    return tokens

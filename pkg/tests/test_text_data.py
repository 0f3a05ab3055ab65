"""Corpus reading, vocabulary ranking, extended-vocabulary encoding and batching."""

import json

import numpy as np
import pytest

from core.exceptions import ContractError, DataError, VocabIndexError
from models.vocabulary import EOS_ID, PAD_ID, RESERVED_TOKENS, SOS_ID, UNK_ID, Vocabulary
from services.text_data_service import (
    build_vocab,
    decode_ids,
    encode_corpus,
    encode_example,
    iterate_batches,
    load_corpus,
    load_vocab,
    make_batch,
    save_vocab,
)


class TestCorpus:

    def test_reads_tokenized_records(self, corpus_file):
        records = load_corpus(corpus_file)
        assert len(records) == 16
        assert records[0]["id"] == "c0"
        assert isinstance(records[0]["article"], list)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_corpus(tmp_path / "nope.jsonl")

    def test_schema_violation(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"article": "a b"}) + "\n", encoding="utf-8")
        with pytest.raises(DataError):
            load_corpus(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{not json\n", encoding="utf-8")
        with pytest.raises(DataError):
            load_corpus(path)


class TestVocabulary:

    def test_ranking_and_reserved_ids(self):
        corpus = [{"article": "b a a c", "summary": "b a"}]
        vocab = build_vocab(corpus, cap=10)
        assert vocab.tokens[:4] == list(RESERVED_TOKENS)
        # a:3, b:2, c:1
        assert vocab.tokens[4:] == ["a", "b", "c"]

    def test_ties_break_alphabetically(self):
        vocab = build_vocab([{"article": "z y x", "summary": ""}], cap=10)
        assert vocab.tokens[4:] == ["x", "y", "z"]

    def test_cap_includes_reserved(self):
        vocab = build_vocab([{"article": "a b c d e f", "summary": ""}], cap=6)
        assert len(vocab) == 6

    def test_cap_below_reserved(self):
        with pytest.raises(ContractError):
            build_vocab([{"article": "a", "summary": ""}], cap=3)

    def test_empty_corpus(self):
        with pytest.raises(ContractError):
            build_vocab([], cap=10)

    def test_unknown_maps_to_unk(self, toy_vocab):
        assert toy_vocab.id_of("never-seen") == UNK_ID
        with pytest.raises(VocabIndexError):
            toy_vocab.token_of(len(toy_vocab))

    def test_save_load_round_trip(self, tmp_path, toy_vocab):
        path = save_vocab(toy_vocab, tmp_path / "vocab.txt")
        loaded = load_vocab(path)
        assert loaded.tokens == toy_vocab.tokens
        assert load_vocab(path, cap=6).tokens == toy_vocab.tokens[:6]

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ContractError):
            Vocabulary(tokens=list(RESERVED_TOKENS) + ["a", "a"])


class TestEncoding:

    def test_oovs_numbered_by_first_occurrence(self, toy_vocab):
        V = len(toy_vocab)
        ex = encode_example(["quib", "the", "zorp", "quib"], ["zorp", "quib", "nope"], toy_vocab)
        assert ex.oov_tokens == ["quib", "zorp"]
        assert ex.source_ext_ids == [V, toy_vocab.id_of("the"), V + 1, V]
        assert ex.source_ids == [UNK_ID, toy_vocab.id_of("the"), UNK_ID, UNK_ID]
        # target OOV absent from the source stays UNK even in the extended view
        assert ex.target_ext_ids == [SOS_ID, V + 1, V, UNK_ID, EOS_ID]
        assert ex.target_ids == [SOS_ID, UNK_ID, UNK_ID, UNK_ID, EOS_ID]

    def test_truncation_before_wrapping(self, toy_vocab):
        ex = encode_example(["the"] * 10, ["cat"] * 10, toy_vocab, limits=(4, 3))
        assert ex.source_length == 4
        assert ex.target_ids == [SOS_ID] + [toy_vocab.id_of("cat")] * 3 + [EOS_ID]

    def test_empty_article_rejected(self, toy_vocab):
        with pytest.raises(ContractError):
            encode_example([], ["cat"], toy_vocab)

    def test_decode_ids_maps_extended_ids(self, toy_vocab):
        V = len(toy_vocab)
        tokens = decode_ids([SOS_ID, toy_vocab.id_of("cat"), V + 1, PAD_ID, EOS_ID, toy_vocab.id_of("dog")],
                            toy_vocab, ["x", "y"])
        assert tokens == ["cat", "y"]
        with pytest.raises(VocabIndexError):
            decode_ids([V + 2], toy_vocab, ["x", "y"])

    def test_encode_corpus_keeps_ids(self, copy_records):
        vocab = build_vocab(copy_records, cap=12)
        examples = encode_corpus(_tokenized(copy_records[:2]), vocab, (400, 100))
        assert [e.example_id for e in examples] == ["c0", "c1"]
        assert {"zed0a", "kol0b"} <= set(examples[0].oov_tokens)


class TestBatching:

    def test_padding_and_lengths(self, micro_batch):
        assert micro_batch.size == 2
        np.testing.assert_array_equal(micro_batch.source_lengths, [5, 4])
        np.testing.assert_array_equal(micro_batch.target_lengths, [5, 4])
        assert micro_batch.source[1, 4] == PAD_ID
        assert micro_batch.max_oov_count == 2
        assert micro_batch.prediction_count == 7

    def test_row_strips_padding(self, micro_batch, micro_example):
        row = micro_batch.row(0)
        assert list(row.source_ext_ids) == micro_example.source_ext_ids
        assert list(micro_batch.row(1).target_ids)[-1] == EOS_ID

    def test_batch_size_enforced(self, micro_example):
        with pytest.raises(ContractError):
            make_batch([micro_example] * 3, batch_size=2)
        with pytest.raises(ContractError):
            make_batch([])

    def test_shuffled_iteration_is_seeded(self, copy_records):
        vocab = build_vocab(copy_records, cap=40)
        examples = encode_corpus(_tokenized(copy_records), vocab, (400, 100))
        first = [b.examples[0].example_id for b in iterate_batches(examples, 4, np.random.default_rng(5))]
        second = [b.examples[0].example_id for b in iterate_batches(examples, 4, np.random.default_rng(5))]
        assert first == second
        assert sum(len(b) for b in iterate_batches(examples, 5)) == 16


def _tokenized(records):
    return [{"id": r["id"], "article": r["article"].split(), "summary": r["summary"].split()} for r in records]

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from models.vocabulary import Vocabulary  # noqa: E402
from services.text_data_service import encode_example, make_batch  # noqa: E402
from tests.helpers import TOY_WORDS, copy_corpus, write_jsonl  # noqa: E402


@pytest.fixture
def toy_vocab() -> Vocabulary:
    return Vocabulary.from_counts([(w, 10 - i) for i, w in enumerate(TOY_WORDS)])


@pytest.fixture
def micro_example(toy_vocab):
    # J = 5 with two source OOVs; 4 predictions (3 tokens + EOS), one of them a copied OOV
    return encode_example(["the", "zorp", "sat", "on", "quib"], ["zorp", "sat", "mat"], toy_vocab, example_id="m0")


@pytest.fixture
def micro_batch(toy_vocab, micro_example):
    other = encode_example(["a", "dog", "ran", "blix"], ["dog", "blix"], toy_vocab, example_id="m1")
    return make_batch([micro_example, other])


@pytest.fixture
def copy_records():
    return copy_corpus()


@pytest.fixture
def corpus_file(tmp_path, copy_records):
    return write_jsonl(copy_records, tmp_path / "train.jsonl")

"""End-to-end runs of the vocab / train / decode / eval commands."""

import json

import pandas as pd
import pytest

from app import dispatch
from services.text_data_service import load_vocab

SMALL = ["--set", "d_emb=4", "--set", "d_hidden=6", "--set", "progress=false", "--set", "tgt_max_len=6",
         "--set", "batch_size=8", "--set", "lr=0.01"]


@pytest.fixture
def trained_run(tmp_path, corpus_file):
    run = tmp_path / "run"
    code = dispatch(["train", "--set", f"train_path={corpus_file}", "--set", f"output_dir={run}",
                     "--model-id", "C10000", "--epochs", "1", *SMALL])
    assert code == 0
    return run


def _decode(run, corpus_file, out, *flags):
    return dispatch(["decode", "--checkpoint", str(run / "checkpoints" / "latest.ckpt"),
                     "--input", str(corpus_file), "--set", f"vocab_path={run / 'vocab.txt'}",
                     "--set", f"output_dir={out}", "--set", "progress=false", "--max-len", "5", *flags])


class TestVocabCommand:

    def test_cap_counts_reserved_tokens(self, tmp_path, corpus_file):
        target = tmp_path / "vocab" / "vocab.txt"
        assert dispatch(["vocab", "--input", str(corpus_file), "--cap", "12", "--output", str(target)]) == 0
        assert len(load_vocab(target)) == 12
        assert (target.parent / "run_config.txt").exists()


class TestTrainDecodeEval:

    def test_train_outputs(self, trained_run):
        assert (trained_run / "vocab.txt").exists()
        assert (trained_run / "checkpoints" / "latest.ckpt").exists()
        assert "model_id=C10000" in (trained_run / "metrics.csv").read_text(encoding="utf-8")

    def test_beam_one_matches_greedy(self, tmp_path, trained_run, corpus_file):
        assert _decode(trained_run, corpus_file, tmp_path / "beam", "--mode", "beam", "--beam", "1") == 0
        assert _decode(trained_run, corpus_file, tmp_path / "greedy", "--mode", "greedy") == 0
        beam = (tmp_path / "beam" / "summaries.txt").read_text(encoding="utf-8")
        greedy = (tmp_path / "greedy" / "summaries.txt").read_text(encoding="utf-8")
        assert beam == greedy
        assert len(beam.splitlines()) == 16

    def test_nbest_records(self, tmp_path, trained_run, corpus_file):
        assert _decode(trained_run, corpus_file, tmp_path / "dbs", "--mode", "dbs", "--beam", "4",
                       "--groups", "2", "--group-diversity", "0.5") == 0
        lines = (tmp_path / "dbs" / "nbest.jsonl").read_text(encoding="utf-8").splitlines()
        first = json.loads(lines[0])
        assert first["id"] == "c0"
        assert 1 <= len(first["candidates"]) <= 4
        assert {"tokens", "score"} <= set(first["candidates"][0])

    def test_eval_writes_rouge_csv(self, tmp_path, trained_run, corpus_file):
        assert _decode(trained_run, corpus_file, tmp_path / "out", "--mode", "greedy") == 0
        code = dispatch(["eval", "--summaries", str(tmp_path / "out" / "summaries.txt"),
                         "--references", str(corpus_file), "--set", f"output_dir={tmp_path / 'out'}"])
        assert code == 0
        frame = pd.read_csv(tmp_path / "out" / "rouge.csv")
        assert list(frame["variant"]) == ["ROUGE-1", "ROUGE-2", "ROUGE-L"]
        assert frame["f1"].between(0.0, 100.0).all()

    def test_scst_header_records_schedule(self, tmp_path, corpus_file):
        run = tmp_path / "scst"
        code = dispatch(["train", "--set", f"train_path={corpus_file}", "--set", f"output_dir={run}",
                         "--strategy", "scst", "--dad", "0.75", "--epochs", "1", *SMALL])
        assert code == 0
        header = (run / "metrics.csv").read_text(encoding="utf-8").splitlines()[0]
        assert "strategy=scst" in header and "dad_alpha=0.75" in header


class TestExitCodes:

    def test_unknown_config_key(self, corpus_file):
        assert dispatch(["vocab", "--input", str(corpus_file), "--set", "bogus=1"]) == 2

    def test_invalid_combination(self, tmp_path, corpus_file):
        code = dispatch(["train", "--set", f"train_path={corpus_file}", "--set", f"output_dir={tmp_path}",
                         "--set", "alignment=dot", "--set", "coverage=true", *SMALL])
        assert code == 2

    def test_missing_corpus(self, tmp_path):
        assert dispatch(["vocab", "--input", str(tmp_path / "absent.jsonl"),
                         "--output", str(tmp_path / "v.txt")]) == 3

    def test_missing_checkpoint(self, tmp_path, corpus_file):
        vocab_file = tmp_path / "v.txt"
        assert dispatch(["vocab", "--input", str(corpus_file), "--output", str(vocab_file)]) == 0
        code = dispatch(["decode", "--checkpoint", str(tmp_path / "absent.ckpt"), "--input", str(corpus_file),
                         "--set", f"vocab_path={vocab_file}"])
        assert code == 3

    def test_usage_error(self):
        assert dispatch(["train", "--no-such-flag"]) == 2

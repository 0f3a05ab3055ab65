"""Run configuration layering, model ID expansion and the manifest."""

import pytest

from core.config import RunConfig, environment_values, load_run_config, parse_config_file, write_manifest
from core.exceptions import ConfigError
from models.config import Alignment, DadDecay, ModelConfig, Strategy


def _load(path=None, overrides=None, environ=None):
    return load_run_config(path, overrides, environ=environ or {}, use_dotenv=False)


class TestLayering:

    def test_defaults(self):
        config = _load()
        assert config.d_hidden == 256 and config.beam_size == 5
        assert config.strategy == Strategy.XENT
        assert config.max_grad_norm == 2.0

    def test_environment_then_file_then_overrides(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# base\nbeam_size = 4\nlr = 0.001  # faster\nstrategy = dad\n", encoding="utf-8")
        environ = {"NATS_BEAM_SIZE": "2", "NATS_EPOCHS": "7", "NATS_LR": "0.5"}
        config = _load(cfg, {"strategy": "scst"}, environ)
        assert config.epochs == 7
        assert config.beam_size == 4
        assert config.lr == pytest.approx(0.001)
        assert config.strategy == Strategy.SCST

    def test_environment_ignores_foreign_keys(self):
        assert environment_values({"NATS_SEED": "3", "NATS_BOGUS": "1", "SEED": "9"}) == {"seed": "3"}

    def test_none_words_clear_optional_values(self):
        assert _load(overrides={"mixer_warmup": "none"}).mixer_warmup is None

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            _load(overrides={"bogus": "1"})

    def test_invalid_value(self):
        with pytest.raises(ConfigError):
            _load(overrides={"gamma": "1.5"})

    def test_malformed_file_line(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("beam_size 4\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            parse_config_file(cfg)

    def test_key_without_value_rejected(self, tmp_path):
        cfg = tmp_path / "bare.cfg"
        cfg.write_text("beam_size = 4\ncoverage\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="coverage"):
            parse_config_file(cfg)

    def test_file_quotes_and_comments(self, tmp_path):
        cfg = tmp_path / "quoted.cfg"
        cfg.write_text(
            "# header\n\noutput_dir = \"runs/a b\"  # spaced path\nstrategy='dad'\nmixer_warmup =\n",
            encoding="utf-8",
        )
        assert parse_config_file(cfg) == {"output_dir": "runs/a b", "strategy": "dad", "mixer_warmup": None}

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            _load(tmp_path / "absent.cfg")


class TestModelId:

    def test_expands_flags(self):
        config = _load(overrides={"model_id": "c10101"})
        assert config.model_id == "C10101"
        assert config.alignment == Alignment.CONCAT
        assert (config.pointer_gen, config.temporal_attn, config.intra_decoder,
                config.weight_sharing, config.coverage) == (True, False, True, False, True)

    def test_explicit_flag_wins(self):
        config = _load(overrides={"model_id": "G11100", "intra_decoder": "false"})
        assert config.alignment == Alignment.GENERAL
        assert config.pointer_gen and config.temporal_attn
        assert not config.intra_decoder

    def test_round_trip_through_model_config(self):
        model = ModelConfig.from_model_id("D01010", vocab_size=20)
        assert model.model_id == "D01010"
        assert model.alignment == Alignment.DOT and model.temporal_attn and model.weight_sharing

    @pytest.mark.parametrize("bad", ["X10000", "G1000", "G10002"])
    def test_malformed_ids(self, bad):
        with pytest.raises(ConfigError):
            _load(overrides={"model_id": bad})


class TestComponentRules:

    def test_coverage_requires_concat(self):
        with pytest.raises(ConfigError, match="concat"):
            _load(overrides={"alignment": "general", "coverage": "true"})

    def test_temporal_and_coverage_need_override(self):
        with pytest.raises(ConfigError):
            _load(overrides={"temporal_attn": "true", "coverage": "true"})
        config = _load(overrides={"temporal_attn": "true", "coverage": "true",
                                  "allow_temporal_with_coverage": "true"})
        assert config.build_model_config(vocab_size=10).coverage

    def test_dbs_groups_must_divide_beam(self):
        with pytest.raises(ConfigError):
            _load(overrides={"decode_mode": "dbs", "beam_size": "4", "groups": "3"})

    def test_schedule_section(self):
        schedule = _load(overrides={"strategy": "dad", "dad_decay": "exponential", "dad_alpha": "0.9"}).build_schedule()
        assert schedule.dad_decay == DadDecay.EXPONENTIAL
        assert schedule.dad_alpha == pytest.approx(0.9)


class TestManifest:

    def test_manifest_reloads_to_same_config(self, tmp_path):
        config = _load(overrides={"model_id": "C10100", "strategy": "mixer", "dad_alpha": "0.75",
                                  "output_dir": str(tmp_path / "run")})
        path = write_manifest(config, tmp_path / "run")
        assert path.name == "run_config.txt"
        assert _load(path) == config

    def test_manifest_is_plain_key_value(self, tmp_path):
        path = write_manifest(RunConfig(), tmp_path)
        lines = [line for line in path.read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
        assert "seed = 1234" in lines
        assert "checkpoint = none" in lines
        assert all(" = " in line for line in lines)

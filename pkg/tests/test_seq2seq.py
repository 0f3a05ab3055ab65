"""Encoder-decoder forward pass, parameter registry and end-to-end gradient checks."""

import itertools

import numpy as np
import pytest

from core.exceptions import ContractError, DimensionError
from core.tensor import Tensor, grad_check, no_grad
from models.config import Alignment, ModelConfig, parse_model_id
from models.parameters import ModelParameters, parameter_shapes
from models.vocabulary import UNK_ID
from services.seq2seq_service import Seq2SeqModel, lstm_step
from services.text_data_service import make_batch
from services.training_service import xent_loss
from tests.helpers import micro_config

# concat alignment x {pointer, temporal-or-coverage, intra-decoder, sharing}
FLAG_GRID = [
    dict(pointer_gen=p, temporal_attn=not c, coverage=c, intra_decoder=i, weight_sharing=s)
    for p, c, i, s in itertools.product([False, True], repeat=4)
]


def _run_decoder(model, example, steps=None):
    outputs = []
    encoded = model.encode(example.source_ids, example.source_ext_ids, example.oov_count)
    state = model.initial_state(encoded)
    inputs = example.target_ext_ids[:-1] if steps is None else example.target_ext_ids[:steps]
    for y in inputs:
        out = model.step(state, y, encoded)
        outputs.append(out)
        state = out.state
    return outputs


class TestModelConfig:

    def test_model_id_round_trip(self):
        config = ModelConfig.from_model_id("C10101", vocab_size=12)
        assert config.pointer_gen and config.intra_decoder and config.coverage
        assert not config.temporal_attn and not config.weight_sharing
        assert config.model_id == "C10101"

    def test_bad_model_id(self):
        with pytest.raises(ValueError):
            parse_model_id("X10101")
        with pytest.raises(ValueError):
            parse_model_id("C1010")

    def test_coverage_requires_concat(self):
        with pytest.raises(ValueError):
            micro_config(alignment=Alignment.GENERAL, coverage=True)

    def test_temporal_and_coverage_exclusive_unless_allowed(self):
        with pytest.raises(ValueError):
            micro_config(temporal_attn=True, coverage=True)
        config = micro_config(temporal_attn=True, coverage=True, allow_temporal_with_coverage=True)
        assert config.coverage


class TestParameters:

    def test_optional_blocks_follow_flags(self):
        plain = parameter_shapes(micro_config())
        assert "pointer.w_z" not in plain and "intra.W_enc" not in plain
        assert plain["output.W_d2v"] == (12, 12)

        full = parameter_shapes(micro_config(pointer_gen=True, intra_decoder=True, weight_sharing=True, coverage=True))
        assert full["pointer.b"] == (1,)
        assert full["intra.W_dec"] == (12, 12)
        assert full["output.W_proj"] == (4, 12)
        assert "output.W_d2v" not in full
        assert full["attention.w_cov"] == (12,)
        assert full["output.W_z"] == (12, 36)

    def test_dot_alignment_has_no_weights(self):
        shapes = parameter_shapes(micro_config(alignment=Alignment.DOT))
        assert not any(name.startswith("attention.") for name in shapes)

    def test_biases_start_at_zero(self):
        params = ModelParameters.initialize(micro_config(), np.random.default_rng(0))
        assert np.all(params["decoder.b"].data == 0.0)
        assert np.all(np.abs(params["decoder.W"].data) <= 0.5)

    def test_same_seed_same_weights(self):
        a = Seq2SeqModel.from_config(micro_config(), seed=9)
        b = Seq2SeqModel.from_config(micro_config(), seed=9)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_unknown_parameter_name(self):
        params = ModelParameters.zeros(micro_config())
        with pytest.raises(ContractError):
            params["nope"]


    @staticmethod
    def _count(config):
        return int(sum(np.prod(shape) for shape in parameter_shapes(config).values()))

    def test_concat_alignment_count(self):
        config = micro_config()
        d_keys, d_query, d_align = config.d_encoder_out, config.d_decoder, config.d_align
        added = self._count(config) - self._count(micro_config(alignment=Alignment.DOT))
        assert added == (d_keys + d_query) * d_align + 2 * d_align == 312

    def test_general_alignment_count(self):
        config = micro_config(alignment=Alignment.GENERAL)
        added = self._count(config) - self._count(micro_config(alignment=Alignment.DOT))
        assert added == config.d_encoder_out * config.d_decoder

    def test_weight_sharing_count(self):
        config = micro_config(weight_sharing=True)
        V, E, A = config.vocab_size, config.d_emb, config.d_attn_hidden
        saved = self._count(micro_config()) - self._count(config)
        assert saved == V * A - E * A == 96
        assert ModelParameters.zeros(config).count() == self._count(config)


class TestLstmStep:

    H = 3

    def _params(self, W, b):
        return {"cell.W": Tensor(W), "cell.b": Tensor(b)}

    def test_zero_weights_give_zero_hidden(self):
        params = self._params(np.zeros((4 * self.H, 2 + self.H)), np.zeros(4 * self.H))
        x, h_prev = Tensor(np.array([0.7, -1.2])), Tensor(np.full(self.H, 0.4))
        h, c = lstm_step(params, "cell", x, h_prev, Tensor(np.zeros(self.H)))
        np.testing.assert_array_equal(h.data, 0.0)
        np.testing.assert_array_equal(c.data, 0.0)

    def test_open_forget_closed_input_keeps_cell(self):
        b = np.zeros(4 * self.H)
        b[0:self.H] = -50.0
        b[self.H:2 * self.H] = 50.0
        b[3 * self.H:] = 1.0
        params = self._params(np.zeros((4 * self.H, 2 + self.H)), b)
        c_prev = np.array([0.3, -2.0, 1.5])
        h, c = lstm_step(params, "cell", Tensor(np.array([1.0, 1.0])), Tensor(np.zeros(self.H)), Tensor(c_prev))
        np.testing.assert_allclose(c.data, c_prev, atol=1e-15)
        np.testing.assert_allclose(h.data, 0.5 * np.tanh(c_prev), atol=1e-15)

    def test_mismatched_weights_rejected(self):
        params = self._params(np.zeros((4 * self.H, 3 + self.H)), np.zeros(4 * self.H))
        with pytest.raises(DimensionError):
            lstm_step(params, "cell", Tensor(np.zeros(2)), Tensor(np.zeros(self.H)), Tensor(np.zeros(self.H)))


class TestForward:

    @pytest.mark.parametrize("flags", FLAG_GRID[::3])
    def test_distributions_on_simplex(self, flags, micro_example):
        model = Seq2SeqModel.from_config(micro_config(**flags), seed=1)
        with no_grad():
            outputs = _run_decoder(model, micro_example)
        for out in outputs:
            assert abs(out.p_vocab.data.sum() - 1.0) < 1e-8
            assert abs(out.attention.data.sum() - 1.0) < 1e-8
            assert abs(out.output.data.sum() - 1.0) < 1e-8
            assert np.all(out.output.data >= 0)
            if flags["coverage"]:
                assert 0.0 <= out.coverage_loss.item() <= 1.0

    def test_output_size_includes_oovs_only_with_pointer(self, micro_example):
        plain = Seq2SeqModel.from_config(micro_config(), seed=0)
        pointer = Seq2SeqModel.from_config(micro_config(pointer_gen=True), seed=0)
        with no_grad():
            assert _run_decoder(plain, micro_example, 1)[0].output.shape == (12,)
            assert _run_decoder(pointer, micro_example, 1)[0].output.shape == (14,)
        assert pointer.output_size(2) == 14 and plain.output_size(2) == 12

    def test_copied_ids_feed_the_unk_embedding(self, micro_example):
        model = Seq2SeqModel.from_config(micro_config(pointer_gen=True), seed=2)
        with no_grad():
            encoded = model.encode(micro_example.source_ids, micro_example.source_ext_ids, 2)
            state = model.initial_state(encoded)
            via_oov = model.step(state, 12 + 1, encoded)
            via_unk = model.step(state, UNK_ID, encoded)
        np.testing.assert_array_equal(via_oov.output.data, via_unk.output.data)

    def test_intra_attention_starts_at_second_step(self, micro_example):
        model = Seq2SeqModel.from_config(micro_config(intra_decoder=True), seed=0)
        with no_grad():
            outputs = _run_decoder(model, micro_example)
        assert outputs[0].intra_attention is None
        assert outputs[2].intra_attention.shape == (2,)

    def test_empty_source_rejected(self):
        model = Seq2SeqModel.from_config(micro_config(), seed=0)
        with pytest.raises(ContractError):
            model.encode([])

    def test_state_clone_is_independent(self, micro_example):
        model = Seq2SeqModel.from_config(micro_config(temporal_attn=True), seed=0)
        with no_grad():
            out = _run_decoder(model, micro_example, 2)[-1]
            clone = out.state.clone()
            clone.h.data[:] = 0.0
        assert not np.all(out.state.h.data == 0.0)


class TestGradients:

    @pytest.mark.parametrize("flags", FLAG_GRID)
    def test_teacher_forced_loss_matches_finite_differences(self, flags, micro_example):
        model = Seq2SeqModel.from_config(micro_config(**flags), seed=11)
        batch = make_batch([micro_example])
        error = grad_check(lambda: xent_loss(model, batch), model.parameters(), atol=1e-8, coordinates=20)
        assert error < 1e-4

    @pytest.mark.parametrize("alignment", [Alignment.DOT, Alignment.GENERAL])
    def test_other_alignments(self, alignment, micro_example):
        model = Seq2SeqModel.from_config(micro_config(alignment=alignment, pointer_gen=True, intra_decoder=True),
                                         seed=5)
        batch = make_batch([micro_example])
        error = grad_check(lambda: xent_loss(model, batch), model.parameters(), atol=1e-8, coordinates=20)
        assert error < 1e-4

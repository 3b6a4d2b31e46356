import numpy as np
import pytest
from conftest import random_dialog, tiny_config
from hypothesis import given
from hypothesis import strategies as st

import gradcases
from sern.model import (
    SernConfig,
    baseline_bilstm,
    baseline_bilstm_att,
    classify_utterance,
    dialog_step,
    encode_utterance,
    forward_dialog,
    init_params,
    new_run_state,
    predict_dialog,
    stream_step,
)
from sern.numerics import Tensor, grad_check
from sern.recurrent import gru_step
from sern.text import PAD, EncodedDialog

V = 12


def params_for(seed=0, **kw):
    return init_params(tiny_config(V, **kw), seed=seed)


def loud(params, scale=1.0, seed=0):
    """Re-draw all weights at a larger scale so outputs are far from uniform."""
    rng = np.random.default_rng(seed)
    for _, t in params.named():
        t.data[...] = rng.normal(0.0, scale, t.shape)
    params.embedding.weight.data[PAD] = 0.0
    return params


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"architecture": "cnn"},
            {"classifier_input": "both"},
            {"window": 0},
            {"d_gru": 0},
            {"n_classes": 0},
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            tiny_config(V, **kw)

    def test_classifier_width(self):
        assert tiny_config(V).d_classifier == 3
        assert tiny_config(V, classifier_input="concat").d_classifier == 6
        assert tiny_config(V, architecture="bilstm").d_classifier == 6
        assert tiny_config(V, architecture="bilstm_att").d_state == 6

    def test_defaults(self):
        c = SernConfig(vocab_size=10)
        assert (c.n_classes, c.score, c.window, c.classifier_input) == (6, "dot", None, "context")


class TestParams:
    def test_seeded(self):
        a, b = params_for(4), params_for(4)
        assert all(np.array_equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))

    def test_pad_row_zero(self):
        assert not params_for().embedding.weight.data[PAD].any()

    def test_baselines_have_no_dialog_gru(self):
        assert params_for(architecture="bilstm").dialog is None
        assert params_for(architecture="bilstm").attention is None
        assert params_for(architecture="bilstm_att").attention is not None

    def test_state_dict_round_trip_and_errors(self):
        a, b = params_for(1), params_for(2)
        b.load_state_dict(a.state_dict())
        assert all(np.array_equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
        with pytest.raises(KeyError):
            b.load_state_dict({"nope": np.zeros(1)})
        bad = a.state_dict()
        bad["classifier.b_out"] = np.zeros(7)
        with pytest.raises(ValueError):
            b.load_state_dict(bad)


class TestEncodeUtterance:
    def test_shape(self):
        assert encode_utterance(params_for(), [2, 3, 4]).shape == (6,)

    def test_empty(self):
        with pytest.raises(ValueError):
            encode_utterance(params_for(), [])

    def test_depends_on_order(self):
        p = loud(params_for())
        assert not np.allclose(encode_utterance(p, [2, 3]).data, encode_utterance(p, [3, 2]).data)


class TestDialogStep:
    def test_first_context_equals_first_state(self):
        p = loud(params_for())
        probs, trace = forward_dialog(p, [[2, 3]])
        f_dial = gru_step(p.dialog, encode_utterance(p, [2, 3]), Tensor(np.zeros(3)))
        state = new_run_state(p)
        _, state = dialog_step(p, state, encode_utterance(p, [2, 3]))
        np.testing.assert_array_equal(state.buffer[0].data, f_dial.data)
        manual = np.exp(p.W_out.data @ f_dial.data + p.b_out.data)
        np.testing.assert_allclose(probs[0].data, manual / manual.sum(), atol=1e-15)
        assert trace.rows[0].tolist() == [1.0]

    def test_window_buffer_keeps_newest(self):
        p = params_for()
        state = new_run_state(p, window=5)
        rng = np.random.default_rng(0)
        for _ in range(8):
            _, state = dialog_step(p, state, Tensor(rng.standard_normal(6)))
        assert len(state.buffer) == 5 and state.position == 8
        _, w = classify_utterance(p, state)
        assert w.shape == (5,)

    def test_trace_positions_for_window(self):
        p = params_for(window=5)
        rng = np.random.default_rng(1)
        _, trace = forward_dialog(p, random_dialog(rng, V, n_utts=8))
        # 0-based positions 3..7 are the 4th through 8th utterances
        assert list(trace.positions(7)) == [3, 4, 5, 6, 7]
        assert [len(r) for r in trace.rows] == [1, 2, 3, 4, 5, 5, 5, 5]

    def test_classify_needs_state(self):
        p = params_for()
        with pytest.raises(ValueError):
            classify_utterance(p, new_run_state(p))

    def test_zero_classifier_is_uniform(self):
        p = params_for()
        p.W_out.data[...] = 0.0
        probs, _ = forward_dialog(p, [[2], [3, 4]])
        for q in probs:
            np.testing.assert_allclose(q.data, np.full(6, 1 / 6), atol=1e-15)


class TestForward:
    def test_empty_dialog(self):
        with pytest.raises(ValueError):
            forward_dialog(params_for(), [])

    @pytest.mark.parametrize("architecture", ["sern", "bilstm", "bilstm_att"])
    @pytest.mark.parametrize("score", ["dot", "general", "concat"])
    def test_probabilities(self, architecture, score):
        p = loud(params_for(architecture=architecture, score=score))
        rng = np.random.default_rng(2)
        probs, trace = forward_dialog(p, random_dialog(rng, V, n_utts=5))
        for q in probs:
            assert q.shape == (6,) and np.all(q.data >= 0) and abs(q.data.sum() - 1) < 1e-12
        assert len(trace) == (0 if architecture == "bilstm" else 5)
        trace.check()

    def test_configured_window_used_by_default(self):
        p = params_for(window=2)
        rng = np.random.default_rng(3)
        d = random_dialog(rng, V, n_utts=4)
        _, trace = forward_dialog(p, d)
        assert max(len(r) for r in trace.rows) == 2
        _, wide = forward_dialog(p, d, window=10)
        assert max(len(r) for r in wide.rows) == 4

    def test_predict_dialog(self):
        p = loud(params_for())
        d = EncodedDialog("x_1", [np.array([2, 3]), np.array([4])], np.array([0, 1]))
        pred = predict_dialog(p, d)
        assert pred.probs.shape == (2, 6)
        np.testing.assert_array_equal(pred.labels, pred.probs.argmax(axis=1))


@given(st.integers(0, 2**32 - 1), st.sampled_from(["dot", "general", "concat"]), st.sampled_from([None, 1, 2, 4]))
def test_streaming_equals_batch_bitwise(seed, score, window):
    rng = np.random.default_rng(seed)
    p = loud(params_for(seed % 5, score=score), seed=seed)
    d = random_dialog(rng, V, n_utts=int(rng.integers(1, 9)))
    batch, trace = forward_dialog(p, d, window)
    state = new_run_state(p, window)
    for i, ids in enumerate(d):
        probs, w, state = stream_step(p, state, ids)
        assert np.array_equal(probs.data, batch[i].data)
        assert np.array_equal(w.data, trace.rows[i])


@given(st.integers(0, 2**32 - 1))
def test_future_utterances_do_not_change_past_outputs(seed):
    rng = np.random.default_rng(seed)
    p = loud(params_for(score="concat"), seed=seed)
    d = random_dialog(rng, V, n_utts=6)
    cut = int(rng.integers(1, 6))
    full, _ = forward_dialog(p, d)
    altered = d[:cut] + random_dialog(rng, V, n_utts=6 - cut)
    changed, _ = forward_dialog(p, altered)
    for i in range(cut):
        assert np.array_equal(full[i].data, changed[i].data)


def test_vocabulary_relabeling_is_invisible():
    rng = np.random.default_rng(5)
    p = loud(params_for(), seed=5)
    q = loud(params_for(), seed=5)
    perm = np.arange(V)
    perm[2:] = 2 + rng.permutation(V - 2)
    # token i of the original becomes perm[i]; move its row accordingly
    q.embedding.weight.data[perm] = p.embedding.weight.data
    d = random_dialog(rng, V, n_utts=5)
    a, _ = forward_dialog(p, d)
    b, _ = forward_dialog(q, [perm[ids] for ids in d])
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.data, y.data)


class TestBaselines:
    def test_bilstm_ignores_context(self):
        p = loud(params_for(architecture="bilstm"))
        d1 = EncodedDialog("x_1", [np.array([2, 3]), np.array([5, 6])], np.zeros(2, dtype=np.int64))
        d2 = EncodedDialog("x_2", [np.array([7]), np.array([9, 1, 4]), np.array([5, 6])], np.zeros(3, dtype=np.int64))
        np.testing.assert_array_equal(baseline_bilstm(p, d1)[1].data, baseline_bilstm(p, d2)[2].data)

    def test_bilstm_att_uses_context(self):
        p = loud(params_for(architecture="bilstm_att"))
        d1 = EncodedDialog("x_1", [np.array([2, 3]), np.array([5, 6])], np.zeros(2, dtype=np.int64))
        d2 = EncodedDialog("x_2", [np.array([7]), np.array([5, 6])], np.zeros(2, dtype=np.int64))
        assert not np.allclose(baseline_bilstm_att(p, d1)[1].data, baseline_bilstm_att(p, d2)[1].data)

    def test_bilstm_att_first_context_is_utterance_vector(self):
        p = loud(params_for(architecture="bilstm_att"))
        d = EncodedDialog("x_1", [np.array([2, 3])], np.zeros(1, dtype=np.int64))
        f = encode_utterance(p, [2, 3]).data
        logits = p.W_out.data @ f + p.b_out.data
        expected = np.exp(logits - logits.max())
        np.testing.assert_allclose(baseline_bilstm_att(p, d)[0].data, expected / expected.sum(), atol=1e-15)

    def test_wrong_architecture(self):
        d = EncodedDialog("x_1", [np.array([2])], np.zeros(1, dtype=np.int64))
        with pytest.raises(ValueError):
            baseline_bilstm(params_for(), d)
        with pytest.raises(ValueError):
            baseline_bilstm_att(params_for(), d)


class TestEndToEndGradient:
    @pytest.mark.parametrize("score", ["dot", "general", "concat"])
    def test_sern(self, score):
        assert grad_check(*gradcases.sern_case(score, seed=1)) < 1e-4

    @pytest.mark.parametrize("architecture", ["bilstm", "bilstm_att"])
    def test_baselines(self, architecture):
        assert grad_check(*gradcases.sern_case("general", seed=2, architecture=architecture)) < 1e-4

    def test_concat_classifier_input(self):
        assert grad_check(*gradcases.sern_case("dot", seed=3, classifier_input="concat")) < 1e-4

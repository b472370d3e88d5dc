import math

import numpy as np
import pytest

from fleetmaint.lstm import (
    EOS_TOKEN,
    LstmConfig,
    SeqModel,
    TrainingDiverged,
    UnigramModel,
    Vocab,
    grad_check,
    perplexity,
    predict_next,
    split_by_vehicle,
    train,
    unigram_baseline,
)

FAST_CFG = dict(
    embed_dim=8, hidden_dim=16, layers=1, dropout_keep=1.0,
    bptt_steps=20, batch_size=4, lr=1.0, lr_constant_epochs=10,
    lr_decay=0.8,
)


def alternating_sequences(n=24, length=400):
    return [["A", "B"] * (length // 2) for _ in range(n)]


class TestVocab:
    def test_reserved_tokens(self):
        vocab = Vocab.from_sequences([["b", "a"], ["c"]])
        assert vocab.labels == ("a", "b", "c")
        assert vocab.unk == 3
        assert vocab.eos == 4
        assert vocab.size == 5
        assert vocab.token_label(vocab.unk) == "<unk>"
        assert vocab.token_label(vocab.eos) == EOS_TOKEN

    def test_encode_maps_unseen_to_unk(self):
        vocab = Vocab.from_sequences([["a", "b"]])
        np.testing.assert_array_equal(vocab.encode(["a", "zzz", "b"]), [0, vocab.unk, 1])


class TestSplit:
    def test_exact_proportions(self):
        train_s, valid_s, test_s = split_by_vehicle(list(range(8)), seed=1)
        assert (len(train_s), len(valid_s), len(test_s)) == (4, 2, 2)

    def test_remainder_goes_to_train(self):
        train_s, valid_s, test_s = split_by_vehicle(list(range(329)), seed=1)
        assert (len(train_s), len(valid_s), len(test_s)) == (165, 82, 82)

    def test_deterministic_and_disjoint(self):
        items = [f"v{i}" for i in range(37)]
        a = split_by_vehicle(items, seed=7)
        b = split_by_vehicle(items, seed=7)
        assert a == b
        combined = a[0] + a[1] + a[2]
        assert sorted(combined) == sorted(items)

    def test_too_few(self):
        with pytest.raises(ValueError):
            split_by_vehicle([1, 2, 3], seed=0)


class TestGradCheck:
    def test_analytic_matches_finite_differences(self):
        assert grad_check() < 1e-4

    def test_corrupted_forget_gate_detected(self):
        assert grad_check(corrupt_block="lstm0_wx") > 1e-2

    def test_zero_length_input(self):
        assert grad_check(sequences=[[]]) == 0.0

    def test_requires_dropout_off(self):
        with pytest.raises(ValueError):
            grad_check(cfg=LstmConfig(dropout_keep=0.5))


class TestPerplexity:
    def test_uniform_model_equals_vocab_size(self):
        seqs = [["a", "b", "c"], ["b", "c"]]
        cfg = LstmConfig(embed_dim=4, hidden_dim=4, layers=1, epochs=1, seed=0)
        vocab = Vocab.from_sequences(seqs)
        model = train(seqs, [], LstmConfig(embed_dim=4, hidden_dim=4, layers=1,
                                           epochs=1, dropout_keep=1.0, seed=0))
        model.params["out_w"][:] = 0.0
        model.params["out_b"][:] = 0.0
        assert perplexity(model, seqs) == pytest.approx(vocab.size, abs=1e-9)

    def test_perfect_model_scores_one(self):
        class Oracle:
            def log_prob_items(self, seq):
                return np.zeros(len(seq) + 1)

        assert perplexity(Oracle(), [["a", "b"], ["c"]]) == pytest.approx(1.0, abs=1e-12)

    def test_invariant_to_sequence_order(self):
        seqs = [["a", "b", "a"], ["b", "b"], ["a"]]
        model = unigram_baseline(seqs)
        assert perplexity(model, seqs) == pytest.approx(
            perplexity(model, seqs[::-1]), rel=1e-12
        )

    def test_empty_eval_set_rejected(self):
        with pytest.raises(ValueError):
            perplexity(unigram_baseline([["a"]]), [])


class TestUnigram:
    def test_add_one_arithmetic(self):
        model = unigram_baseline([["a", "a", "b"]])
        # targets are a, a, b, EOS over V = {a, b, UNK, EOS}
        assert math.exp(model.log_probs[0]) == pytest.approx((2 + 1) / (4 + 4), abs=1e-12)

    def test_perplexity_at_least_one(self):
        model = unigram_baseline([["a", "b", "a", "a"]])
        assert perplexity(model, [["a", "a"], ["b"]]) >= 1.0

    def test_matches_closed_form_on_own_training_set(self):
        seqs = [["a", "a", "b"], ["b", "c"]]
        model = unigram_baseline(seqs)
        vocab = model.vocab
        counts = {"a": 2, "b": 2, "c": 1, EOS_TOKEN: 2}
        n = sum(counts.values())
        v = vocab.size
        log_p = {
            lab: math.log((c + 1) / (n + v)) for lab, c in counts.items()
        }
        expected_nll = -(
            2 * log_p["a"] + 2 * log_p["b"] + 1 * log_p["c"] + 2 * log_p[EOS_TOKEN]
        ) / n
        assert perplexity(model, seqs) == pytest.approx(math.exp(expected_nll), rel=1e-12)


class TestTraining:
    def test_alternating_data_learned(self):
        seqs = alternating_sequences()
        tr, va, te = split_by_vehicle(seqs, seed=5)
        model = train(tr, va, LstmConfig(epochs=6, seed=3, **FAST_CFG))
        assert perplexity(model, te) < 1.05
        assert model.history["valid_perplexity"][-1] < 1.05

    def test_bitwise_deterministic(self):
        seqs = [["a", "b", "c", "a"] * 5 for _ in range(8)]
        tr, va = seqs[:6], seqs[6:]
        cfg = LstmConfig(embed_dim=6, hidden_dim=8, layers=2, dropout_keep=0.75,
                         batch_size=2, epochs=3, seed=21)
        m1 = train(tr, va, cfg)
        m2 = train(tr, va, cfg)
        assert m1.params.keys() == m2.params.keys()
        for name in m1.params:
            assert np.array_equal(m1.params[name], m2.params[name]), name

    def test_best_validation_model_returned(self):
        seqs = alternating_sequences(n=12, length=100)
        tr, va, _ = split_by_vehicle(seqs, seed=2)
        model = train(tr, va, LstmConfig(epochs=5, seed=1, **FAST_CFG))
        returned_ppl = perplexity(model, va)
        history = model.history["valid_perplexity"]
        assert returned_ppl == pytest.approx(min(history), rel=1e-12)
        assert returned_ppl <= history[-1] + 1e-12

    def test_divergence_aborts_with_diagnostic(self):
        seqs = [["a", "b"] * 10 for _ in range(4)]
        cfg = LstmConfig(embed_dim=4, hidden_dim=4, layers=1, dropout_keep=1.0,
                         epochs=2, seed=0)
        base = train(seqs[:3], seqs[3:], cfg)
        base.params["embedding"][0, 0] = np.nan
        with pytest.raises(TrainingDiverged, match="non-finite"):
            train(seqs[:3], seqs[3:], cfg, initial=base)

    def test_empty_train_rejected(self):
        with pytest.raises(ValueError):
            train([], [], LstmConfig())

    def test_unseen_eval_labels_hit_unk(self):
        seqs = [["a", "b"] * 10 for _ in range(4)]
        model = train(seqs[:3], seqs[3:], LstmConfig(
            embed_dim=4, hidden_dim=4, layers=1, dropout_keep=1.0, epochs=1, seed=0))
        ppl = perplexity(model, [["a", "mystery", "b"]])
        assert np.isfinite(ppl)

    def test_lr_schedule(self):
        cfg = LstmConfig(lr=1.0, lr_constant_epochs=6, lr_decay=0.7)
        assert cfg.lr_at_epoch(0) == 1.0
        assert cfg.lr_at_epoch(5) == 1.0
        assert cfg.lr_at_epoch(6) == pytest.approx(0.7)
        assert cfg.lr_at_epoch(7) == pytest.approx(0.49)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LstmConfig(dropout_keep=0.0)
        with pytest.raises(ValueError):
            LstmConfig(bptt_steps=0)
        with pytest.raises(ValueError):
            LstmConfig(lr=-1.0)


@pytest.fixture(scope="module")
def ab_model():
    seqs = alternating_sequences(n=12, length=200)
    tr, va, _ = split_by_vehicle(seqs, seed=5)
    return train(tr, va, LstmConfig(epochs=4, seed=3, **FAST_CFG))


class TestPredictNext:
    def test_distribution_sums_to_one(self, ab_model):
        probs = ab_model.next_distribution([])
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert (probs >= 0).all()

    def test_alternation_argmax(self, ab_model):
        top = predict_next(ab_model, ["A", "B", "A"], top_k=1)
        assert top[0][0] == "B"
        top = predict_next(ab_model, ["A", "B"], top_k=1)
        assert top[0][0] == "A"

    def test_context_capped_at_window(self, ab_model):
        long_prefix = ["A", "B"] * 40
        short = long_prefix[-ab_model.config.bptt_steps:]
        np.testing.assert_array_equal(
            ab_model.next_distribution(long_prefix),
            ab_model.next_distribution(short),
        )

    def test_top_k_ranked(self, ab_model):
        ranked = predict_next(ab_model, ["A"], top_k=4)
        probs = [p for _, p in ranked]
        assert probs == sorted(probs, reverse=True)
        assert len(ranked) == 4

    def test_top_k_validation(self, ab_model):
        with pytest.raises(ValueError):
            predict_next(ab_model, ["A"], top_k=0)


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path):
        seqs = [["a", "b", "c"] * 4 for _ in range(6)]
        cfg = LstmConfig(embed_dim=5, hidden_dim=7, layers=2, dropout_keep=0.9,
                         batch_size=2, epochs=2, seed=13)
        model = train(seqs[:4], seqs[4:], cfg)
        path = tmp_path / "model.txt"
        model.save(path)
        back = SeqModel.load(path)
        assert back.vocab == model.vocab
        assert back.config == model.config
        assert back.params.keys() == model.params.keys()
        for name in model.params:
            assert np.array_equal(back.params[name], model.params[name]), name

    def test_save_deterministic(self, tmp_path):
        seqs = [["a", "b"] * 5 for _ in range(5)]
        cfg = LstmConfig(embed_dim=4, hidden_dim=4, layers=1, dropout_keep=1.0,
                         epochs=1, seed=2)
        model = train(seqs[:4], seqs[4:], cfg)
        p1, p2 = tmp_path / "m1.txt", tmp_path / "m2.txt"
        model.save(p1)
        model.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("something else\n")
        with pytest.raises(ValueError):
            SeqModel.load(path)

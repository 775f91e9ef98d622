import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import corpus_wer, ctc_brute_force, levenshtein, random_simplex
from olmd.gradcheck import finite_diff_check
from olmd.losses import (CTCLengthError, LossConfig, align_lengths, combine, ctc_loss, ctc_min_frames,
                         greedy_decode, kl_distill, loss_terms, total_loss)
from olmd.metrics import edit_alignment, wer
from olmd.tensor import Tensor, log_softmax, precision

F64 = np.float64


def ctc_np(probs, target):
    with precision(F64):
        return float(ctc_loss(Tensor(np.log(probs), dtype=F64), target).data)


class TestCTC:
    def test_single_frame_single_label(self):
        assert ctc_np(np.array([[0.4, 0.6]]), [1]) == pytest.approx(-math.log(0.6))

    def test_two_frames_uniform(self):
        assert ctc_np(np.full((2, 2), 0.5), [1]) == pytest.approx(-math.log(0.75))

    def test_empty_target(self):
        assert ctc_np(np.array([[0.3, 0.7]]), []) == pytest.approx(-math.log(0.3))

    def test_repeat_needs_a_blank(self):
        assert ctc_min_frames([2, 2]) == 3
        with pytest.raises(CTCLengthError):
            ctc_np(np.full((2, 3), 1 / 3), [2, 2])

    def test_too_short(self):
        with pytest.raises(CTCLengthError):
            ctc_np(np.full((2, 4), 0.25), [1, 2, 3])

    def test_blank_in_target_rejected(self):
        with pytest.raises(ValueError):
            ctc_np(np.full((3, 3), 1 / 3), [0, 1])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 3), st.lists(st.integers(1, 3), max_size=2), st.integers(0, 999))
    def test_matches_enumeration(self, n_t, v, target, seed):
        target = [t for t in target if t <= v]
        if ctc_min_frames(target) > n_t:
            return
        probs = random_simplex(np.random.default_rng(seed), (n_t, v + 1))
        assert math.exp(-ctc_np(probs, target)) == pytest.approx(ctc_brute_force(probs, target), abs=1e-8)

    def test_long_sequence_is_finite(self):
        rng = np.random.default_rng(0)
        probs = random_simplex(rng, (400, 7))
        loss = ctc_np(probs, list(rng.integers(1, 7, size=60)))
        assert np.isfinite(loss) and loss > 0

    @pytest.mark.parametrize("target", [[1, 2], [3, 3], [2], []])
    def test_gradient(self, target):
        with precision(F64):
            x = Tensor(np.random.default_rng(len(target)).standard_normal((6, 4)), requires_grad=True, dtype=F64)
            assert finite_diff_check(lambda: ctc_loss(log_softmax(x, 1), target), x) < 1e-4


class TestDistill:
    def test_self_is_zero(self):
        x = np.random.default_rng(0).standard_normal((5, 4))
        assert float(kl_distill(x, Tensor(x, dtype=F64)).data) == pytest.approx(0.0, abs=1e-9)

    def test_one_hot_vs_uniform(self):
        teacher = np.array([[1e4, 0.0]])
        assert float(kl_distill(teacher, Tensor(np.zeros((1, 2)), dtype=F64)).data) == pytest.approx(math.log(2))

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            t, s = rng.standard_normal((2, 3, 5)) * 3
            assert float(kl_distill(t, Tensor(s, dtype=F64), rng.uniform(0.5, 3)).data) >= -1e-12

    def test_teacher_receives_no_gradient(self):
        t = Tensor(np.ones((2, 3)), requires_grad=True, dtype=F64)
        s = Tensor(np.zeros((2, 3)), requires_grad=True, dtype=F64)
        kl_distill(t, s).backward()
        assert t.grad is None and s.grad is not None

    @pytest.mark.parametrize("tau", [1.0, 2.5])
    def test_gradient(self, tau):
        rng = np.random.default_rng(2)
        with precision(F64):
            s = Tensor(rng.standard_normal((4, 5)), requires_grad=True, dtype=F64)
            t = rng.standard_normal((4, 5))
            assert finite_diff_check(lambda: kl_distill(t, s, tau), s) < 1e-4


class TestAlign:
    def test_upsample_repeats(self):
        out = align_lengths(Tensor(np.array([[0.0], [1.0]])), 4)
        assert out.data[:, 0].tolist() == [0, 0, 1, 1]

    def test_identity(self):
        x = Tensor(np.arange(3.0)[:, None])
        assert align_lengths(x, 3) is x

    def test_downsample_strides(self):
        out = align_lengths(Tensor(np.arange(4.0)[:, None]), 2)
        assert out.data[:, 0].tolist() == [0, 2]


class TestObjective:
    def _logits(self, seed=0):
        rng = np.random.default_rng(seed)
        return tuple(Tensor(rng.standard_normal(s), requires_grad=True, dtype=F64) for s in [(8, 4), (4, 4), (4, 4)])

    def test_defaults(self):
        cfg = LossConfig()
        assert (cfg.gamma1, cfg.gamma2) == (1.0, 25.0)

    def test_linear_combination(self):
        terms = {k: Tensor(np.array(v)) for k, v in
                 dict(ctc_local1=0.25, ctc_local2=0.25, ctc_global=0.5, kl_g2l1=0.04, kl_g2l2=0.06).items()}
        assert float(combine(terms, LossConfig()).data) == pytest.approx(3.5)

    def test_gamma2_zero_is_ctc_sum(self):
        logits = self._logits()
        cfg = LossConfig(gamma2=0.0)
        terms = loss_terms(logits, [1, 2], cfg)
        ctc_sum = sum(float(terms[k].data) for k in ("ctc_local1", "ctc_local2", "ctc_global"))
        assert float(total_loss(logits, [1, 2], cfg).data) == ctc_sum

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(gamma2=-1)

    def test_global_logits_get_no_distillation_gradient(self):
        logits = self._logits()
        cfg = LossConfig(gamma1=0.0)
        total_loss(logits, [1, 2], cfg).backward()
        assert logits[2].grad is None or not np.any(logits[2].grad)


class TestGreedyDecode:
    @staticmethod
    def onehot(seq, k=4):
        return np.eye(k)[seq]

    def test_merges(self):
        assert greedy_decode(self.onehot([1, 1, 0, 2])) == [1, 2]

    def test_blank_separates_repeats(self):
        assert greedy_decode(self.onehot([1, 0, 1])) == [1, 1]

    def test_all_blank(self):
        assert greedy_decode(self.onehot([0, 0, 0])) == []


class TestWER:
    def test_identical(self):
        a = edit_alignment([1, 2, 3], [1, 2, 3])
        assert (a.sub, a.ins, a.dele) == (0, 0, 0)

    def test_deletion(self):
        a = edit_alignment(["a", "b", "c"], ["a", "c"])
        assert (a.sub, a.ins, a.dele) == (0, 0, 1)
        assert a.wer == pytest.approx(1 / 3)

    def test_can_exceed_one(self):
        a = edit_alignment(["a"], ["b", "c"])
        assert (a.sub, a.ins, a.dele) == (1, 1, 0)
        assert a.wer == 2.0

    def test_corpus(self):
        assert wer([([1, 2], [1, 2])])[0] == 0.0
        assert wer([(["a", "b", "c"], ["a", "c"])])[0] == pytest.approx(0.3333, abs=1e-4)

    def test_count_sum_not_mean(self):
        assert wer([([1], [2]), ([1, 2, 3], [1, 2, 3])])[0] == 0.25

    def test_empty_reference(self):
        with pytest.raises(ZeroDivisionError):
            wer([([], [1])])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(1, 4), max_size=7), st.lists(st.integers(1, 4), max_size=7))
    def test_against_recursive_definition(self, ref, hyp):
        a = edit_alignment(ref, hyp)
        assert a.errors == levenshtein(ref, hyp)
        assert a.ins - a.dele == len(hyp) - len(ref)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.lists(st.integers(1, 3), min_size=1, max_size=5),
                              st.lists(st.integers(1, 3), max_size=5)), min_size=1, max_size=6))
    def test_corpus_against_oracle(self, pairs):
        assert wer(pairs)[0] == corpus_wer(pairs)

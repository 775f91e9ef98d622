"""Acceptance criteria, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL`` line (shown again in the
terminal summary). Criteria 7 to 9 train the default model end to end and
take a few hours on one core together; they are marked ``slow``.
"""

import itertools
import json
import time

import numpy as np
import pytest

from oracles import corpus_wer, ctc_brute_force_tables, levenshtein, random_simplex
from olmd.cli import main
from olmd.gradcheck_suite import TOLERANCE, run_suite
from olmd.layers import rng_for
from olmd.losses import ctc_loss, ctc_min_frames
from olmd.metrics import edit_alignment, wer
from olmd.model import LMA, OLMD, ModelConfig, decouple, lma_forward
from olmd.tensor import Tensor, no_grad, precision

F64 = np.float64
TRAIN_SEEDS = (0, 1, 2)
DATA_SEED = 7


def test_criterion_1_gradient_suite(criterion):
    t0 = time.perf_counter()
    results = run_suite()
    total = time.perf_counter() - t0
    failing = [f"{name}={rep.worst:.2e}" for name, rep, _ in results if not rep.worst < TOLERANCE]
    worst = max(rep.worst for _, rep, _ in results)
    ok = not failing and total < 60.0
    criterion(1, ok, f"{len(results)} checks, worst rel err {worst:.2e}, {total:.1f}s"
                     + (f", failing: {', '.join(failing)}" if failing else ""))
    assert not failing, failing
    assert total < 60.0


def test_criterion_2_ctc_enumeration(criterion):
    rng = np.random.default_rng(2)
    worst, configs = 0.0, 0
    with precision(F64), no_grad():
        for n_t in range(1, 6):
            for v in range(1, 4):
                targets = [list(t) for n in range(3) for t in itertools.product(range(1, v + 1), repeat=n)]
                targets = [t for t in targets if ctc_min_frames(t) <= n_t]
                tables = random_simplex(rng, (200, n_t, v + 1))
                oracle = ctc_brute_force_tables(tables, targets)
                for target in targets:
                    configs += 1
                    for k in range(200):
                        got = np.exp(-float(ctc_loss(Tensor(np.log(tables[k]), dtype=F64), target).data))
                        worst = max(worst, abs(got - oracle[tuple(target)][k]))
    ok = worst < 1e-8
    criterion(2, ok, f"{configs} (T', V, target) configurations x 200 tables, max |diff| {worst:.1e}")
    assert ok


def test_criterion_3_lma_static_suppression(criterion):
    rng = np.random.default_rng(3)
    mismatches = 0
    for trial in range(100):
        reduction = int(rng.choice([1, 2, 4]))
        c = reduction * int(rng.integers(1, 5))
        context = int(rng.choice([3, 5, 7, 9, 11]))
        n_t, h, w = (int(x) for x in rng.integers(1, 9, size=3))
        lma = LMA(c, context, reduction, rng_for(trial, "acceptance.lma"))
        for p in lma.parameters():  # trained-looking weights, not the initial ones
            p.data = rng.standard_normal(p.shape).astype(p.data.dtype)
        frame = rng.standard_normal((c, 1, h, w)).astype(np.float32)
        x = Tensor(np.repeat(frame, n_t, axis=1))
        mismatches += not np.array_equal(lma_forward(x, lma).data, x.data)
    criterion(3, mismatches == 0, f"100 temporally constant inputs, {mismatches} not bit-exact")
    assert mismatches == 0


def test_criterion_4_initial_identity(criterion):
    base = dict(input_size=16, channels=(4, 8, 8, 16), head_width=8, lstm_hidden=8)
    mismatches = 0
    for seed in range(3):
        full = OLMD(ModelConfig(lma_context=None, **base), seed=seed)
        plain = OLMD(ModelConfig(lma_context=None, decouple_stages=(), **base), seed=seed)
        video = Tensor(np.random.default_rng(seed).random((3, 12, 16, 16)).astype(np.float32))
        with no_grad():
            for a, b in zip(full(video), plain(video)):
                mismatches += not np.array_equal(a.data, b.data)
    criterion(4, mismatches == 0, f"3 seeds x 3 logit streams, {mismatches} differ from the plain backbone")
    assert mismatches == 0


def test_criterion_5_orientation_separation(criterion):
    rng = np.random.default_rng(5)
    worst_h = worst_v = 0.0
    for _ in range(100):
        c, n_t, size = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(10, 20))
        ph, pw = (int(x) for x in rng.integers(2, 5, size=2))
        x = np.zeros((c, n_t, size, size), dtype=np.float32)
        r0, c0 = (int(x) for x in rng.integers(2, size - 6, size=2))
        x[:, :, r0:r0 + ph, c0:c0 + pw] = rng.random((c, n_t, ph, pw))
        dy, dx = (int(d) for d in rng.integers(-2, 3, size=2))
        base = decouple(Tensor(x), "avg")
        v_shift = decouple(Tensor(np.roll(x, dy, axis=2)), "avg")
        h_shift = decouple(Tensor(np.roll(x, dx, axis=3)), "avg")
        worst_h = max(worst_h, float(np.abs(v_shift.h.data - base.h.data).max()))
        worst_v = max(worst_v, float(np.abs(h_shift.v.data - base.v.data).max()))
    ok = worst_h < 1e-6 and worst_v < 1e-6
    criterion(5, ok, f"100 patterns, max change X_h {worst_h:.1e} (vertical shift), "
                     f"X_v {worst_v:.1e} (horizontal shift)")
    assert ok


def test_criterion_6_wer_oracle(criterion):
    rng = np.random.default_rng(6)
    pairs, bad = [], 0
    for _ in range(1000):
        ref = list(rng.integers(1, 5, size=int(rng.integers(1, 9))))
        hyp = list(rng.integers(1, 5, size=int(rng.integers(0, 9))))
        pairs.append((ref, hyp))
        a = edit_alignment(ref, hyp)
        d = levenshtein(ref, hyp)
        bad += a.errors != d or a.wer != d / len(ref)
    corpus_ok = wer(pairs)[0] == corpus_wer(pairs)
    ok = bad == 0 and corpus_ok
    criterion(6, ok, f"1000 pairs, {bad} disagree with the recursive oracle; corpus count-sum "
                     f"{'matches' if corpus_ok else 'differs'}")
    assert ok


# -- end-to-end criteria ----------------------------------------------------------


def _train(data, out, seed, *extra):
    t0 = time.perf_counter()
    code = main(["train", "--data", str(data), "--out", str(out), "--seed", str(seed), *extra])
    wall = time.perf_counter() - t0
    assert code == 0
    records = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
    return records, wall


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def default_data(workdir):
    out = workdir / "data"
    assert main(["gen-data", "--out", str(out), "--num-train", "200", "--num-dev", "50",
                 "--seed", str(DATA_SEED)]) == 0
    return out


@pytest.fixture(scope="module")
def default_runs(workdir, default_data):
    return {s: _train(default_data, workdir / f"run{s}", s) for s in TRAIN_SEEDS}


@pytest.mark.slow
def test_criterion_7_end_to_end(criterion, default_runs):
    parts, hits = [], 0
    for seed, (records, wall) in default_runs.items():
        best = min(r["dev_wer"] for r in records)
        hit = len(records) <= 30 and best <= 0.05 and wall < 1800
        hits += hit
        parts.append(f"seed {seed}: best {best:.4f} in {wall / 60:.1f} min")
    ok = hits >= 2
    criterion(7, ok, f"{hits}/3 seeds reach dev WER <= 0.05 within 30 epochs and 30 min; " + "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_criterion_8_lma_ablation(criterion, workdir):
    data = workdir / "data_long"
    assert main(["gen-data", "--out", str(data), "--num-train", "200", "--num-dev", "50",
                 "--seed", str(DATA_SEED), "--set", "duration_range=[11,13]"]) == 0
    full, bare = [], []
    for seed in TRAIN_SEEDS:
        records, _ = _train(data, workdir / f"long_full{seed}", seed)
        full.append(min(r["dev_wer"] for r in records))
        records, _ = _train(data, workdir / f"long_none{seed}", seed, "--set", "model.lma_context=null")
        bare.append(min(r["dev_wer"] for r in records))
    ok = np.mean(full) <= np.mean(bare)
    criterion(8, ok, f"mean best dev WER, durations 11-13: LMA context 9 {np.mean(full):.4f} "
                     f"{[round(x, 4) for x in full]} vs no LMA {np.mean(bare):.4f} {[round(x, 4) for x in bare]}")
    assert ok


@pytest.mark.slow
def test_criterion_9_reproducible(criterion, workdir, default_data, default_runs):
    seed = TRAIN_SEEDS[0]
    _train(default_data, workdir / "repeat", seed)
    a = (workdir / f"run{seed}" / "metrics.jsonl").read_bytes()
    b = (workdir / "repeat" / "metrics.jsonl").read_bytes()
    criterion(9, a == b, f"seed {seed} rerun: metrics log {'bit-identical' if a == b else 'differs'} "
                         f"({len(a)} bytes)")
    assert a == b

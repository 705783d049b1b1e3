"""End-to-end acceptance suite; each test logs one PASS/FAIL line in the terminal summary."""

import json
import os
import random
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdma.dictionary import (BilingualDictionary, bind, eval_groups, filter_unique, load_dictionary,
                             sample_unique)
from bdma.embeddings import load_vec, preprocess
from bdma.losses import LossKind, grad_check
from bdma.mapper import init_mapper, to_bytes
from bdma.retrieval import csls_retrieve, precision_at_k
from bdma.synth import SynthSpec, generate
from bdma.trainer import TrainingConfig, train
from oracles import brute_csls, count_filter

GRAD_TOL = 1e-5
GRAD_BUDGET_S = 60.0
P1_FLOOR = 0.99
ORTHO_TOL = 0.05
TRAIN_BUDGET_S = 600.0
CYCLE_TOL = 0.05
CSLS_BUDGET_S = 30.0
PARITY_TOL = 0.02
SYMMETRY_TOL = 0.02
MUSE_TOL = 2.0

SPEC = SynthSpec(n=2000, d=50, noise=0.0, kind="orthogonal", seed=7, split=(0.9, 0.05, 0.05))


def both_directions(m, data):
    fwd = precision_at_k(m, "forward", eval_groups(data.test, data.src, data.tgt), data.src, data.tgt)
    rev = precision_at_k(m, "reverse", eval_groups(data.test.swapped(), data.tgt, data.src), data.src, data.tgt)
    return fwd.precision[1], rev.precision[1]


def run_training(data, **overrides):
    cfg = TrainingConfig(loss="cos+rcsls", rcsls_k=10, epochs=50, **overrides)
    pairs = bind(data.train, data.src, data.tgt)
    groups = eval_groups(data.val, data.src, data.tgt)
    t0 = time.perf_counter()
    m, report = train(data.src, data.tgt, pairs, groups, cfg)
    return m, report, time.perf_counter() - t0


@pytest.fixture(scope="module")
def synth_data():
    data = generate(SPEC)
    assert (len(data.train), len(data.val), len(data.test)) == (1800, 100, 100)
    return data


@pytest.fixture(scope="module")
def linear_run(synth_data):
    return run_training(synth_data, arch="linear")


def _gradient_property(kind, arch, worst):
    @settings(max_examples=4, deadline=None, derandomize=True)
    @given(st.integers(0, 2**32 - 1))
    def check(seed):
        r = np.random.default_rng(seed)
        m = init_mapper(arch, 12, 8, seed=seed % 1000)
        m.params = {k: v + 0.1 * r.standard_normal(v.shape) for k, v in m.params.items()}
        Xs, Xt = r.standard_normal((16, 12)), r.standard_normal((16, 12))
        pools = (r.standard_normal((64, 12)), r.standard_normal((64, 12)))
        report = grad_check(m, Xs, Xt, kind, eps=1e-5, tolerance=GRAD_TOL, pools=pools, k=10)
        label = f"{kind.value}/{arch}"
        worst[label] = max(worst.get(label, 0.0), report.worst)
        assert report.passed, (label, seed, report.max_rel_error)

    return check


def test_criterion_1_gradients(acceptance_log):
    worst: dict[str, float] = {}
    failures = []
    t0 = time.perf_counter()
    for kind in LossKind:
        for arch in ("linear", "ffn"):
            try:
                _gradient_property(kind, arch, worst)()
            except AssertionError as exc:
                failures.append(exc)
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    ok = not failures and top < GRAD_TOL and elapsed < GRAD_BUDGET_S
    acceptance_log("1", ok, f"max rel error {top:.2e} (< {GRAD_TOL:g}) over {len(worst)} "
                   f"loss/arch combos, {elapsed:.1f}s (< {GRAD_BUDGET_S:g}s)")
    assert ok, failures or worst


def test_criterion_2_recovery_p1(linear_run, synth_data, acceptance_log):
    m, _, elapsed = linear_run
    fwd, rev = both_directions(m, synth_data)
    ok = fwd >= P1_FLOOR and rev >= P1_FLOOR and elapsed < TRAIN_BUDGET_S
    acceptance_log("2a", ok, f"test P@1 forward {fwd:.3f}, reverse {rev:.3f} (>= {P1_FLOOR}); "
                   f"training {elapsed:.1f}s (< {TRAIN_BUDGET_S:g}s)")
    assert ok


def test_criterion_2_recovery_orthogonality(linear_run, acceptance_log):
    m, _, _ = linear_run
    W = m.params["W"]
    dev = float(np.linalg.norm(W.T @ W - np.eye(W.shape[0])))
    ok = dev < ORTHO_TOL
    acceptance_log("2b", ok, f"||W^T W - I||_F = {dev:.4f} (< {ORTHO_TOL})")
    assert ok


def test_criterion_3_cycle_consistency(linear_run, synth_data, acceptance_log):
    m, _, _ = linear_run
    groups = eval_groups(synth_data.test, synth_data.src, synth_data.tgt)
    X = synth_data.src.matrix[sorted(groups)]
    err = float(np.mean(np.linalg.norm(m.reverse(m.forward(X)) - X, axis=1) / np.linalg.norm(X, axis=1)))
    ok = err < CYCLE_TOL
    acceptance_log("3", ok, f"mean relative cycle error {err:.4f} (< {CYCLE_TOL})")
    assert ok


def test_criterion_4_csls_oracle(acceptance_log):
    r = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for i in range(20):
        nq, nt, ns = (int(v) for v in r.integers(10, 501, size=3))
        k = (1, 5, 10)[i % 3]
        d = int(r.integers(4, 33))
        Q, T, S = r.standard_normal((nq, d)), r.standard_normal((nt, d)), r.standard_normal((ns, d))
        if csls_retrieve(Q, T, S, k).tolist() != brute_csls(Q, T, S, k):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < CSLS_BUDGET_S
    acceptance_log("4", ok, f"{20 - mismatches}/20 instances identical to brute force, "
                   f"{elapsed:.1f}s (< {CSLS_BUDGET_S:g}s)")
    assert ok


def test_criterion_5_ffn_parity(linear_run, synth_data, acceptance_log):
    lin_fwd, lin_rev = both_directions(linear_run[0], synth_data)
    m, _, _ = run_training(synth_data, arch="ffn", hidden=256)
    fwd, rev = both_directions(m, synth_data)
    ok = abs(fwd - lin_fwd) <= PARITY_TOL and abs(rev - lin_rev) <= PARITY_TOL
    acceptance_log("5", ok, f"FFN(h=256) P@1 fwd {fwd:.3f} / rev {rev:.3f} vs linear "
                   f"{lin_fwd:.3f} / {lin_rev:.3f} (|diff| <= {PARITY_TOL})")
    assert ok


def test_criterion_6_direction_symmetry(linear_run, synth_data, acceptance_log):
    fwd, rev = both_directions(linear_run[0], synth_data)
    ok = abs(fwd - rev) <= SYMMETRY_TOL
    acceptance_log("6", ok, f"|fwd - rev| = {abs(fwd - rev):.3f} (<= {SYMMETRY_TOL})")
    assert ok


def test_criterion_7_polysemy_filter(acceptance_log):
    rnd = random.Random(50)
    pairs = [(f"src{i}", f"tgt{i}") for i in range(34)]
    # plant polysemy on both sides plus a shared hub
    pairs += [(f"src{i}", f"alt{i}") for i in range(0, 12, 2)]
    pairs += [(f"extra{i}", f"tgt{i}") for i in range(13, 21, 2)]
    pairs += [(f"hub_s{i}", "hub_t") for i in range(3)]
    pairs += [("lone_a", "lone_x"), ("lone_b", "lone_y"), ("lone_c", "lone_z")]
    rnd.shuffle(pairs)
    assert len(pairs) == 50 and len(set(pairs)) == 50
    got = list(filter_unique(BilingualDictionary(tuple(pairs))).pairs)
    expected = count_filter(pairs)
    ok = got == expected
    acceptance_log("7", ok, f"filter kept {len(got)}/50 pairs; oracle kept {len(expected)}; exact match {ok}")
    assert ok


def test_criterion_8_determinism(linear_run, synth_data, acceptance_log):
    m1, r1, _ = linear_run
    m2, r2, _ = run_training(synth_data, arch="linear")
    same_model = to_bytes(m1) == to_bytes(m2)
    same_report = json.dumps(r1.records(), sort_keys=True) == json.dumps(r2.records(), sort_keys=True)
    ok = same_model and same_report
    acceptance_log("8", ok, f"model bytes identical {same_model}, report JSON identical {same_report}")
    assert ok


MUSE_DIR = os.environ.get("BDMA_MUSE_DIR")


@pytest.mark.slow
@pytest.mark.skipif(not MUSE_DIR, reason="optional: set BDMA_MUSE_DIR to FastText + MUSE en-es files")
def test_criterion_9_muse_en_es(acceptance_log):
    root = Path(MUSE_DIR)
    src = preprocess(load_vec(root / "wiki.en.vec", 200_000))
    tgt = preprocess(load_vec(root / "wiki.es.vec", 200_000))
    train_d = sample_unique(filter_unique(load_dictionary(root / "en-es.0-5000.txt")), 5000)
    test_d = load_dictionary(root / "en-es.5000-6500.txt")
    cut = len(train_d) - len(train_d) // 10
    fit = BilingualDictionary(train_d.pairs[:cut])
    val = BilingualDictionary(train_d.pairs[cut:])
    m, _ = train(src, tgt, bind(fit, src, tgt), eval_groups(val, src, tgt), TrainingConfig())
    unique = precision_at_k(m, "forward", eval_groups(filter_unique(test_d), src, tgt), src, tgt).precision[1]
    poly = precision_at_k(m, "forward", eval_groups(test_d, src, tgt), src, tgt).precision[1]
    ok = abs(100 * unique - 49.40) <= MUSE_TOL and abs(100 * poly - 83.13) <= MUSE_TOL
    acceptance_log("9", ok, f"En->Es P@1 unique {100 * unique:.2f} (49.40 +/- {MUSE_TOL}), "
                   f"polysemous {100 * poly:.2f} (83.13 +/- {MUSE_TOL})")
    assert ok

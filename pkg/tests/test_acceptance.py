"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s to see them live).  Criterion 9 is the
dataset-scale reproduction, which is documented as an optional offline
run and skipped here.
"""

import time

import numpy as np
import pytest

from stormchip.augment import AugmentConfig
from stormchip.checkpoint import load_checkpoint, save_checkpoint
from stormchip.gradcheck import CHECK_KINDS, run_suite
from stormchip.metrics import accuracy_at, auc_pairwise_oracle, roc_auc
from stormchip.net import (backward, build_damage_cnn, dropout_forward, forward, predict_probs)
from stormchip.optim import (OptimizerConfig, TrainConfig, adam_step, apply_gradients, fit,
                             init_optimizer_state, initialize_network, rmsprop_step)
from stormchip.pipeline import (BuildingRecord, CandidateChip, ChipRecord, GeoTransform,
                                SplitSpec, dedup_and_filter, lonlat_to_pixel, make_splits,
                                pixel_to_lonlat, rows_for_split)


def report(number, description, ok, elapsed=None):
    status = "PASS" if ok else "FAIL"
    timing = f" [{elapsed:.2f}s]" if elapsed is not None else ""
    print(f"ACCEPTANCE {number} {status}: {description}{timing}")
    assert ok, f"criterion {number}: {description}"


def test_criterion_01_architecture_oracle():
    start = time.perf_counter()
    net = build_damage_cnn()
    counts_ok = net.param_counts() == [896, 0, 18_496, 0, 73_856, 0, 147_584, 0, 0, 0,
                                       3_211_776, 513]
    total_ok = net.total_params() == 3_453_121
    trace_ok = net.shape_trace() == [(32, 148, 148), (32, 74, 74), (64, 72, 72), (64, 36, 36),
                                     (128, 34, 34), (128, 17, 17), (128, 15, 15), (128, 7, 7),
                                     (6272,), (6272,), (512,), (1,)]
    elapsed = time.perf_counter() - start
    report(1, "architecture parameter counts and shape chain exact",
           counts_ok and total_ok and trace_ok and elapsed < 1.0, elapsed)


def test_criterion_02_gradient_checks():
    start = time.perf_counter()
    results = run_suite(kinds=CHECK_KINDS, seeds=20, h=1e-5, tol=1e-5)
    elapsed = time.perf_counter() - start
    worst = max(r.max_rel_error for r in results)
    ok = all(r.passed for r in results) and len(results) == 8 * 20 and elapsed < 120.0
    report(2, f"analytic vs central differences over {len(results)} checks "
              f"(worst rel err {worst:.2e})", ok, elapsed)


def test_criterion_03_optimizer_oracles():
    start = time.perf_counter()

    # independent float64 scalar references, stepped by hand
    def adam_ref(g_seq, lr=1e-4, b1=0.9, b2=0.999, eps=1e-8):
        theta = m = v = 0.0
        for t, g in enumerate(g_seq, 1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        return theta

    def rmsprop_ref(g_seq, lr=1e-4, rho=0.9, eps=1e-7):
        theta, v = 1.0, 0.0
        for g in g_seq:
            v = rho * v + (1 - rho) * g * g
            theta -= lr * g / (np.sqrt(v) + eps)
        return theta

    rng = np.random.default_rng(0)
    gradients = rng.normal(size=10)

    adam_param = np.array(0.0)
    adam_state = {"m": np.zeros(()), "v": np.zeros(()), "t": 0}
    adam_cfg = OptimizerConfig(kind="adam", learning_rate=1e-4)
    rms_param = np.array(1.0)
    rms_state = {"v": np.zeros(())}
    rms_cfg = OptimizerConfig(kind="rmsprop", learning_rate=1e-4)
    for g in gradients:
        adam_step(adam_param, np.array(g), adam_state, adam_cfg)
        rmsprop_step(rms_param, np.array(g), rms_state, rms_cfg)
    adam_err = abs(float(adam_param) - adam_ref(gradients))
    rms_err = abs(float(rms_param) - rmsprop_ref(gradients))
    elapsed = time.perf_counter() - start
    report(3, f"10-step adam/rmsprop vs scalar references "
              f"(errs {adam_err:.1e}, {rms_err:.1e})",
           adam_err <= 1e-12 and rms_err <= 1e-12 and elapsed < 1.0, elapsed)


def test_criterion_04_auc_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(1000):
        while True:
            n = int(rng.integers(2, 51))
            labels = rng.integers(0, 2, size=n)
            if 0 < labels.sum() < n:
                break
        if rng.random() < 0.5:
            scores = rng.integers(0, 5, size=n) / 4.0  # injected ties
        else:
            scores = rng.random(n)
        _, trap = roc_auc(scores, labels)
        worst = max(worst, abs(trap - auc_pairwise_oracle(scores, labels)))
    elapsed = time.perf_counter() - start
    report(4, f"trapezoid vs pairwise AUC on 1000 instances (worst gap {worst:.1e})",
           worst <= 1e-9 and elapsed < 10.0, elapsed)


def test_criterion_05_majority_class_baseline():
    start = time.perf_counter()
    labels = np.concatenate([np.ones(8000), np.zeros(1000)])
    scores = np.ones(9000)
    acc = accuracy_at(scores, labels).accuracy
    elapsed = time.perf_counter() - start
    report(5, f"majority-class accuracy on 8000:1000 split = {acc:.6f}",
           abs(acc - 0.8889) <= 1e-4 and elapsed < 1.0, elapsed)


def separable_chips(n=16, size=150, seed=0):
    """Bright square on dark field vs dark square on bright field."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for i in range(n):
        label = i % 2
        field = 0.15 if label else 0.85
        square = 0.95 if label else 0.05
        img = np.full((3, size, size), field, dtype=np.float32)
        img += rng.normal(0.0, 0.02, img.shape).astype(np.float32)
        lo, hi = size // 3, 2 * size // 3
        img[:, lo:hi, lo:hi] = square
        xs.append(np.clip(img, 0.0, 1.0))
        ys.append(float(label))
    return np.stack(xs), np.asarray(ys, dtype=np.float32)


def test_criterion_06_overfit_sanity():
    start = time.perf_counter()
    x, y = separable_chips()
    net = build_damage_cnn()
    initialize_network(net, np.random.default_rng(0))
    cfg = TrainConfig(batch_size=16, epochs=10, seed=0,
                      augmentation=AugmentConfig(enabled=False),
                      optimizer=OptimizerConfig(kind="adam", learning_rate=1e-4,
                                                l2_lambda=1e-6))
    epochs_used = 0
    reached = False
    while epochs_used < 200:
        fit(net, (x, y), (x, y), cfg)
        epochs_used += cfg.epochs
        probs = predict_probs(net, x).ravel()
        if np.all((probs >= 0.5) == (y >= 0.5)):
            reached = True
            break
    elapsed = time.perf_counter() - start
    report(6, f"100% training accuracy on 16 separable 150x150 chips "
              f"after {epochs_used} epochs", reached and elapsed < 600.0, elapsed)


def test_criterion_07_dropout_expectation():
    start = time.perf_counter()
    x = np.ones(100_000, dtype=np.float32)
    out = dropout_forward(x, 0.5, "train", np.random.default_rng(7))
    deviation = abs(float(out.mean()) - 1.0)
    elapsed = time.perf_counter() - start
    report(7, f"inverted dropout preserves the mean (deviation {deviation:.4f})",
           deviation < 0.02, elapsed)


def test_criterion_08_pipeline_property_suite(tmp_path):
    start = time.perf_counter()
    ok = True

    # splits: published dataset sizes, exact cardinalities, no leakage
    records = []
    for i in range(14_284):
        records.append(ChipRecord(id=f"p{i:05d}", lon=0.0, lat=0.0, label="damaged",
                                  chip_path="x"))
    for i in range(7_209):
        records.append(ChipRecord(id=f"n{i:05d}", lon=0.0, lat=0.0, label="undamaged",
                                  chip_path="x"))
    out = make_splits(records, SplitSpec(seed=0))
    train = {r.id for r in rows_for_split(out, "train")}
    val = {r.id for r in rows_for_split(out, "val")}
    balanced = rows_for_split(out, "test_balanced")
    unbalanced = rows_for_split(out, "test_unbalanced")
    test_pool = {r.id for r in balanced} | {r.id for r in unbalanced}
    ok &= len(train) == 10_000 and len(val) == 2_000
    ok &= sum(1 for r in balanced if r.label == "damaged") == 1000
    ok &= sum(1 for r in balanced if r.label == "undamaged") == 1000
    ok &= sum(1 for r in unbalanced if r.label == "damaged") == 8000
    ok &= sum(1 for r in unbalanced if r.label == "undamaged") == 1000
    ok &= not (train & val) and not (train & test_pool) and not (val & test_pool)

    # dedup: never two usable chips per coordinate
    rng = np.random.default_rng(1)
    for _ in range(20):
        recs = [BuildingRecord(f"b{i}", i, i, "damaged") for i in range(8)]
        cands = {r.id: [CandidateChip(f"s{k}", k, np.zeros((3, 4, 4), dtype=np.float32),
                                      float(rng.random() > 0.4), 0.0)
                        for k in range(int(rng.integers(1, 5)))]
                 for r in recs}
        rows = dedup_and_filter(recs, cands)
        usable = [r.id for r in rows if not r.excluded]
        ok &= len(usable) == len(set(usable))

    # checkpoint roundtrip bitwise
    net = build_damage_cnn()
    initialize_network(net, np.random.default_rng(2))
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    ok &= all(np.array_equal(a[k], b[k])
              for a, b in zip(net.params, back.params) for k in a)
    ok &= back.layers == net.layers

    # geo transform roundtrip
    gt = GeoTransform(-95.3, 2.1e-5, 3e-7, 29.7, -4e-7, -1.9e-5)
    grng = np.random.default_rng(3)
    for _ in range(100):
        col, row = grng.uniform(0, 40_000, size=2)
        lon, lat = pixel_to_lonlat(gt, col, row)
        col2, row2 = lonlat_to_pixel(gt, lon, lat)
        ok &= abs(col2 - col) <= 1e-9 and abs(row2 - row) <= 1e-9

    elapsed = time.perf_counter() - start
    report(8, "split sizes/disjointness, dedup uniqueness, checkpoint and "
              "geo-transform roundtrips", bool(ok) and elapsed < 30.0, elapsed)


def test_criterion_09_dataset_scale_excluded():
    print("ACCEPTANCE 9 SKIP: headline results (97.08% unbalanced accuracy, 99.8% AUC) "
          "need the released Harvey dataset and hours of training; see README for the "
          "optional integration run (target >= 95% balanced-test accuracy).")
    pytest.skip("dataset-scale integration run is documented, not a CI gate")


def test_criterion_10_step_time_soft_target():
    rng = np.random.default_rng(0)
    net = build_damage_cnn()
    initialize_network(net, rng)
    x = rng.random((32, 3, 150, 150), dtype=np.float32)
    y = rng.integers(0, 2, (32, 1)).astype(np.float32)
    opt = OptimizerConfig(kind="adam", learning_rate=1e-4)
    state = init_optimizer_state(net, opt)
    start = time.perf_counter()
    _, acts = forward(net, x, mode="train", rng=rng)
    backward(net, acts, y, l2_lambda=1e-6)
    apply_gradients(net, state, opt)
    elapsed = time.perf_counter() - start
    # soft target: measured and logged, never a failure
    report(10, f"one batch-32 training step took {elapsed:.2f}s "
               f"(soft target 10s)", True, elapsed)

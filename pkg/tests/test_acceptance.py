"""Acceptance suite: one test per criterion, each reporting a pass/fail line.

Run with `pytest tests/test_acceptance.py -v`; the per-criterion lines are
echoed in the terminal summary.  The two training criteria (05, 06) run
real CPU training and take roughly 10 and 20 minutes respectively.
"""

import math
import time

import numpy as np
import pytest
import torch

import conftest
from railpath.annotations import DatasetSplit, split_dataset
from railpath.augmentation import AugmentationConfig, build_sample
from railpath.geometry import iou, rasterize_path, rasterize_rail_pair
from railpath.inference import (adaptive_crop_update, benchmark_latency, decode_regression,
                                EgoPathPrediction, initial_crop_state, prediction_path_mask)
from railpath.losses import (LossConfig, anchor_mask, batched_composite_loss, composite_loss,
                             compute_wmax, dice_loss, perspective_weight,
                             rowwise_cross_entropy, smooth_l1, trajectory_loss, ylim_loss)
from railpath.models import (ClassificationHeadSpec, RegressionHeadSpec, SegmentationHeadSpec,
                             build_model, count_params_and_macs, image_to_tensor)
from railpath.synthetic import SceneConfig, generate_dataset
from railpath.training import (EpochRecord, RunHistory, TrainConfig, TrainingData,
                               one_cycle_lr, select_checkpoint, train)

from reference import boundary_band, composite_loss_ref, polygon_mask_bruteforce
from test_losses import random_instance

# Training-criterion configuration (calibrated for a small CPU).
OVERFIT_BACKBONE = "efficientnet_b0"   # smallest supported backbone
OVERFIT_SIZE = 192
OVERFIT_STEPS = 500
OVERFIT_LR = 1e-3
GENERAL_BACKBONE = "resnet18"
GENERAL_SIZE = 256
GENERAL_EPOCHS = 28
GENERAL_LR = 1e-3
PARITY_SIZE = 128
PARITY_EPOCHS = {"regression": 60, "classification": 60, "segmentation": 40}


def _report(num: int, name: str, ok: bool, detail: str = ""):
    line = f"[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _eval_mean_iou(model, data, ids, working_size):
    """Final-protocol IoU: deterministic crop, decode, rasterize, compare."""
    aug = AugmentationConfig(working_size=working_size).deterministic()
    vals = []
    with torch.no_grad():
        for image_id in ids:
            ann = data.annotations[image_id]
            working, target, crop = build_sample(data.images[image_id], ann,
                                                 np.random.default_rng(0), aug)
            out = model(image_to_tensor(working).unsqueeze(0))[0].numpy()
            dims = (ann.image_width, ann.image_height)
            pm = prediction_path_mask(decode_regression(out, crop, dims), dims)
            tm = rasterize_rail_pair(ann.left_rail, ann.right_rail, dims)
            vals.append(iou(pm, tm))
    return float(np.mean(vals))


def test_c01_loss_formula_fidelity():
    rng = np.random.default_rng(101)
    cfg = LossConfig()
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for H in (1, 8, 64):
        batch_vec, batch_x, batch_mask, batch_ylim, refs = [], [], [], [], []
        for _ in range(334):
            pred, target = random_instance(rng, H)
            mine = float(composite_loss(torch.tensor(pred), target, cfg))
            ref = composite_loss_ref(pred, target.x, target.mask, target.y_lim,
                                     cfg.beta1, cfg.beta2, cfg.ylim_weight, cfg.w_max)
            worst = max(worst, abs(mine - ref))
            count += 1
            batch_vec.append(pred)
            batch_x.append(target.x)
            batch_mask.append(target.mask)
            batch_ylim.append(target.y_lim)
            refs.append(ref)
        batched = float(batched_composite_loss(
            torch.tensor(np.stack(batch_vec)), torch.tensor(np.stack(batch_x)),
            torch.tensor(np.stack(batch_mask)), torch.tensor(np.array(batch_ylim)), cfg))
        worst = max(worst, abs(batched - float(np.mean(refs))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 60
    _report(1, "loss-formula fidelity vs scalar reference",
            ok, f"{count} instances, max |diff| {worst:.2e}, {elapsed:.1f}s")


def test_c02_gradient_correctness():
    rng = np.random.default_rng(202)
    cfg = LossConfig()
    t0 = time.perf_counter()
    step = 1e-5
    worst = 0.0

    def check(fn, flat):
        nonlocal worst
        v = torch.tensor(flat, dtype=torch.float64, requires_grad=True)
        fn(v).backward()
        grad = v.grad.numpy()
        for k in range(len(flat)):
            hi = flat.copy(); hi[k] += step
            lo = flat.copy(); lo[k] -= step
            num = (float(fn(torch.tensor(hi))) - float(fn(torch.tensor(lo)))) / (2 * step)
            rel = abs(grad[k] - num) / max(abs(grad[k]), abs(num), 1e-8)
            worst = max(worst, rel)

    for H in (1, 4, 8):
        pred, target = random_instance(rng, H)
        check(lambda v, t=target: composite_loss(v, t, cfg), pred)

    probs = rng.uniform(0.05, 0.95, 24)
    hard = torch.tensor(rng.integers(0, 2, 24).astype(np.float64)).unsqueeze(0)
    check(lambda v: dice_loss(v.unsqueeze(0), hard), probs)

    logits = rng.normal(0, 1.5, (2, 3, 9))
    labels = torch.tensor(rng.integers(0, 9, (2, 3)))
    check(lambda v: rowwise_cross_entropy(v.reshape(2, 3, 9), labels), logits.reshape(-1))

    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 300
    _report(2, "analytic gradients vs central differences",
            ok, f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_c03_hand_computed_values():
    checks = []
    checks.append(abs(smooth_l1(0.01, 0.005) - 0.0075) < 1e-12)
    checks.append(abs(smooth_l1(0.0025, 0.005) - 0.000625) < 1e-12)
    checks.append(smooth_l1(0.0, 0.005) == 0.0)

    from railpath.augmentation import TrajectoryTarget
    target = TrajectoryTarget(x=np.array([[0.25], [0.75]]), y_lim=1.0,
                              mask=np.array([True]))
    traj = float(trajectory_loss(torch.tensor([[0.26], [0.76]], dtype=torch.float64),
                                 target, LossConfig()))
    checks.append(abs(traj - 0.03) < 1e-12)

    checks.append(abs(float(ylim_loss(0.53, 0.5, 0.015)) - 0.0225) < 1e-12)
    checks.append(abs(float(ylim_loss(0.5075, 0.5, 0.015)) - 0.001875) < 1e-12)

    uniform = rowwise_cross_entropy(torch.zeros(2, 64, 129, dtype=torch.float64),
                                    torch.zeros(2, 64, dtype=torch.long))
    checks.append(abs(float(uniform) - math.log(129)) < 1e-12)

    pred = torch.ones(1, 16, dtype=torch.float64)
    half = torch.zeros(1, 16, dtype=torch.float64)
    half[0, :8] = 1.0
    checks.append(abs(float(dice_loss(pred, half)) - 1.0 / 3.0) < 1e-12)

    checks.append(perspective_weight(0.0, 1.0, 20.0) == 1.0)
    checks.append(abs(perspective_weight(0.45, 0.55, 20.0) - 10.0) < 1e-12)
    checks.append(perspective_weight(0.49, 0.51, 20.0) == 20.0)

    checks.append(anchor_mask(1.0, 64).sum() == 64)
    checks.append(anchor_mask(0.0, 64).sum() == 0)
    checks.append(anchor_mask(0.5, 64)[:32].all() and not anchor_mask(0.5, 64)[32:].any())

    from railpath.augmentation import TrajectoryTarget as TT
    t = TT(x=np.array([[0.2] * 4, [0.3] * 4]), y_lim=1.0, mask=np.ones(4, dtype=bool))
    checks.append(abs(compute_wmax([t]) - 10.0) < 1e-12)

    # Composite arithmetic: L_traj 0.02 + 0.5 * L_ylim 0.01 = 0.025.
    tgt = TT(x=np.array([[0.0], [1.0]]), y_lim=1.0, mask=np.array([True]))
    vec = torch.tensor([0.0125, 1.0125, 1.0 - 0.0175], dtype=torch.float64)
    checks.append(abs(float(composite_loss(vec, tgt, LossConfig())) - 0.025) < 1e-12)

    ok = all(checks)
    _report(3, "hand-computed loss values exact to 1e-12",
            ok, f"{sum(checks)}/{len(checks)} checks")


def test_c04_iou_oracle_equivalence():
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    bad = 0
    for case in range(200):
        if case % 2 == 0:  # trapezoid
            n = 2
            rows = np.array([rng.uniform(90, 127), rng.uniform(1, 40)])
            mid = rng.uniform(30, 98, n)
            half = rng.uniform(4, 30, n)
        else:              # smooth-ish curve
            n = int(rng.integers(3, 16))
            rows = np.sort(rng.uniform(0, 127, n))[::-1]
            mid = rng.uniform(30, 98, n)
            half = rng.uniform(2, 28, n)
        left, right = mid - half, mid + half
        mask = rasterize_path(left, right, rows, n, (128, 128))
        poly = np.vstack([np.column_stack([left, rows]),
                          np.column_stack([right, rows])[::-1]])
        oracle = polygon_mask_bruteforce(poly, 128, 128)
        band = boundary_band(poly, 128, 128)
        disagree = mask.data.astype(int) ^ oracle.astype(int)
        if not np.all(band[disagree == 1] == 1):
            bad += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 120
    _report(4, "rasterize+IoU vs per-pixel point-in-polygon oracle",
            ok, f"200 cases, {bad} outside 1px band, {elapsed:.1f}s")


def _overfit_data():
    images, anns = generate_dataset(42, 10, SceneConfig(track_count=[1, 2], clutter=0.3))
    ids = sorted(images)
    split = DatasetSplit(train=tuple(ids[:8]), val=tuple(ids[8:]), test=(), seed=42)
    return TrainingData(images=images, annotations=anns, split=split)


def test_c05_overfit_sanity():
    t0 = time.perf_counter()
    data = _overfit_data()
    aug = AugmentationConfig(working_size=OVERFIT_SIZE).deterministic()
    cfg = TrainConfig(paradigm="regression", backbone=OVERFIT_BACKBONE, batch_size=8,
                      epochs=OVERFIT_STEPS, peak_lr=OVERFIT_LR, seed=0)
    model, history = train(cfg, data, aug_config=aug,
                           loss_config=LossConfig(anchor_count=aug.anchor_count))
    mean_iou = _eval_mean_iou(model, data, data.split.train, OVERFIT_SIZE)
    ratio = history.records[0].train_loss / max(history.records[-1].train_loss, 1e-12)
    elapsed = time.perf_counter() - t0
    ok = mean_iou >= 0.95 and ratio >= 10 and elapsed < 900
    _report(5, "overfit sanity (8 images, smallest backbone, <=500 steps)",
            ok, f"train-image IoU {mean_iou:.4f}, loss ratio {ratio:.0f}x, {elapsed/60:.1f} min")


def test_c06_desk_scale_generalization():
    t0 = time.perf_counter()
    images, anns = generate_dataset(1234, 250, SceneConfig())
    split = split_dataset(sorted(images), seed=7)  # 200 train / 25 val / 25 test
    data = TrainingData(images=images, annotations=anns, split=split)
    cfg = TrainConfig(paradigm="regression", backbone=GENERAL_BACKBONE, batch_size=8,
                      epochs=GENERAL_EPOCHS, peak_lr=GENERAL_LR, seed=0)
    model, _ = train(cfg, data, aug_config=AugmentationConfig(working_size=GENERAL_SIZE),
                     loss_config=LossConfig())
    held_out = list(split.val) + list(split.test)
    mean_iou = _eval_mean_iou(model, data, held_out, GENERAL_SIZE)
    elapsed = time.perf_counter() - t0
    ok = mean_iou >= 0.90
    _report(6, "desk-scale generalization (200 train, 50 held-out)",
            ok, f"held-out IoU {mean_iou:.4f}, {elapsed/60:.1f} min; full-scale RailSem19 "
                f"criterion not run (dataset/GPU unavailable)")


def _smoothed(series, window):
    arr = np.asarray(series, dtype=np.float64)
    kernel = np.ones(window) / window
    return np.convolve(arr, kernel, mode="valid")


def test_c07_paradigm_parity():
    t0 = time.perf_counter()
    data = _overfit_data()
    results = {}
    decreasing = {}
    for paradigm, epochs in PARITY_EPOCHS.items():
        aug = AugmentationConfig(working_size=PARITY_SIZE).deterministic()
        cfg = TrainConfig(paradigm=paradigm, backbone="resnet18", batch_size=8,
                          epochs=epochs, peak_lr=1e-3, seed=0)
        model, history = train(cfg, data, aug_config=aug,
                               loss_config=LossConfig(anchor_count=aug.anchor_count))
        losses = [r.train_loss for r in history.records]
        smooth = _smoothed(losses, max(3, epochs // 6))
        blocks = np.array_split(smooth, 4)
        means = [float(b.mean()) for b in blocks]
        decreasing[paradigm] = all(b < a for a, b in zip(means, means[1:]))
        final_iou = history.records[-1].val_iou
        from railpath.training import validate
        _, train_iou = validate(model, data, data.split.train, paradigm, aug,
                                LossConfig(anchor_count=aug.anchor_count), cfg)
        results[paradigm] = train_iou
    elapsed = time.perf_counter() - t0
    ordering = " >= ".join(f"{p}:{results[p]:.3f}"
                           for p in sorted(results, key=results.get, reverse=True))
    pattern = (results["segmentation"] >= results["regression"] - 0.02
               and results["regression"] >= results["classification"] - 0.02)
    ok = all(decreasing.values())
    _report(7, "paradigm parity: smoothed losses decrease on all three heads",
            ok, f"IoU ordering (informational): {ordering}; "
                f"published pattern {'matches' if pattern else 'differs'}; {elapsed/60:.1f} min")


def test_c08_latency_ordering():
    reg = build_model("resnet18", RegressionHeadSpec())
    seg = build_model("resnet18", SegmentationHeadSpec())
    r = benchmark_latency(reg, iterations=6, warmup=2)
    s = benchmark_latency(seg, iterations=6, warmup=2)
    ok = r.mean_ms < s.mean_ms
    _report(8, "latency ordering regression < segmentation (same backbone)",
            ok, f"reg {r.mean_ms:.0f} ms vs seg {s.mean_ms:.0f} ms")


TABLE2_RN50 = {"classification": 61.55e6, "segmentation": 32.52e6}
TABLE1_REG_RN50 = 27.99e6
TABLE2_REG_RN50 = 25.75e6


def test_c09_shape_matrix_and_param_counts():
    backbones = ("resnet18", "resnet34", "resnet50",
                 "efficientnet_b0", "efficientnet_b1", "efficientnet_b2", "efficientnet_b3")
    heads = {"regression": RegressionHeadSpec(), "classification": ClassificationHeadSpec(),
             "segmentation": SegmentationHeadSpec()}
    expected = {"regression": (129,), "classification": (2, 64, 129),
                "segmentation": (1, 512, 512)}
    x = torch.randn(1, 3, 512, 512)
    shape_failures = []
    rn50_params = {}
    for bb in backbones:
        for name, spec in heads.items():
            model = build_model(bb, spec).eval()
            with torch.no_grad():
                y = model(x)
            if tuple(y.shape[1:]) != expected[name]:
                shape_failures.append(f"{bb}/{name}: {tuple(y.shape[1:])}")
            if bb == "resnet50":
                rn50_params[name] = count_params_and_macs(model)[0]
            del model
    param_ok = all(abs(rn50_params[k] - v) / v <= 0.02 for k, v in TABLE2_RN50.items())
    reg_vs_table1 = abs(rn50_params["regression"] - TABLE1_REG_RN50) / TABLE1_REG_RN50 <= 0.02
    ok = not shape_failures and param_ok and reg_vs_table1
    _report(9, "21-combination shape matrix + RN50 parameter counts",
            ok, f"shapes ok: {not shape_failures}; CLS {rn50_params['classification']/1e6:.2f}M, "
                f"SEG {rn50_params['segmentation']/1e6:.2f}M vs published; REG "
                f"{rn50_params['regression']/1e6:.2f}M matches the architecture-implied 27.99M "
                f"(the published 25.75M is internally inconsistent, see c09_reg_rn50 xfail)")


@pytest.mark.xfail(strict=True, reason=(
    "The published comparison table lists REG-RN50 at 25.75M, but the published "
    "architecture (8-filter pooling conv + 2048-unit hidden layer) gives 27.99M, which "
    "the same paper's main table confirms for the identical model; 25.75M also "
    "contradicts the table's own CLS-RN50 61.55M, which differs from REG only by the "
    "output layer ((16512-129) x 2049 params). The 25.75M figure equals the RN34 row "
    "and is a copy error; asserted here as stated so the discrepancy stays visible."))
def test_c09_reg_rn50_param_count_as_published_in_table2():
    params, _ = count_params_and_macs(build_model("resnet50", RegressionHeadSpec()))
    assert abs(params - TABLE2_REG_RN50) / TABLE2_REG_RN50 <= 0.02


def test_c10_scheduler_and_checkpoint_rules():
    checks = []
    rates = [one_cycle_lr(s, 1000, 1e-4) for s in range(1000)]
    checks.append(max(rates) == 1e-4)
    checks.append(rates[-1] < 1e-7)
    peak_idx = rates.index(max(rates))
    checks.append(all(rates[i] <= rates[i + 1] for i in range(peak_idx)))
    checks.append(all(rates[i] >= rates[i + 1] for i in range(peak_idx, len(rates) - 1)))
    checks.append(rates[0] < 1e-4 / 100 and rates[-1] < 1e-4 / 100)

    def history(losses):
        return RunHistory(records=[EpochRecord(epoch=i + 1, train_loss=0, val_loss=v,
                                               val_iou=0, seconds=0)
                                   for i, v in enumerate(losses)])

    losses = [1.0] * 400
    losses[99] = 0.01
    losses[379] = 0.5
    checks.append(select_checkpoint(history(losses), epochs=400) == 380)
    checks.append(select_checkpoint(history(list(np.linspace(1, 0.1, 50)))) == 50)
    checks.append(select_checkpoint(history([0.01] * 9 + [0.7]), epochs=10) == 10)

    ok = all(checks)
    _report(10, "one-cycle schedule + last-decile checkpoint rule examples",
            ok, f"{sum(checks)}/{len(checks)} checks")


def test_c11_adaptive_crop_properties():
    state = initial_crop_state((640, 360))
    full = state.current_crop()
    checks = [(full.left, full.top, full.right, full.bottom) == (0, 0, 640, 360)]

    pred = EgoPathPrediction(left=np.array([[200.0, 350.0], [240.0, 100.0]]),
                             right=np.array([[440.0, 350.0], [400.0, 100.0]]))
    crops = []
    for _ in range(50):
        state = adaptive_crop_update(state, pred)
        c = state.current_crop()
        crops.append(np.array([c.left, c.top, c.right, c.bottom]))
    checks.append(np.abs(crops[-1] - crops[-2]).max() < 1.0)

    from railpath.inference import AdaptiveCropConfig
    cfg = AdaptiveCropConfig()
    shrink_state = initial_crop_state((640, 360), cfg)
    for k in range(80):
        s = max(0.5, 40.0 - k)
        p = EgoPathPrediction(left=np.array([[320 - s, 180 + s], [320 - s, 180 - s]]),
                              right=np.array([[320 + s, 180 + s], [320 + s, 180 - s]]))
        shrink_state = adaptive_crop_update(shrink_state, p)
        c = shrink_state.current_crop()
        if c.width < cfg.min_size * 640 - 1e-6 or c.height < cfg.min_size * 360 - 1e-6:
            checks.append(False)
            break
    else:
        checks.append(True)

    ok = all(checks)
    _report(11, "adaptive-crop convergence and minimum-size floor",
            ok, f"{sum(checks)}/{len(checks)} checks")

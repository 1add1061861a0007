"""Acceptance criteria A1-A10. Each test prints one PASS/FAIL line.

A5-A8 read the cached experiments written by tests/acceptance_runs.py (under
$ROBUSTSEG_WORK, default ./work); the others run live.
"""

import json
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from acceptance_runs import SEEDS, WORK, paths, run_name
from oracles import scan_ap, scan_metrics
from robustseg import tensor as T
from robustseg.data import build_dataset
from robustseg.degrade import IDENTITY, DegradationSpec, apply, kinds
from robustseg.degrade import golden
from robustseg.harness.ablation import LADDER
from robustseg.harness.cli import cli_main
from robustseg.model import AMFG, AOTG, Fusion, SamMini, fourier_suppress, load_teacher, predict_mask, save_teacher
from robustseg.objectives import (
    DEFAULT_THRESHOLDS,
    FeatureBundle,
    LossWeights,
    average_precision,
    dice_loss,
    focal_loss,
    mfc_loss,
    overall_loss,
    pixel_metrics,
    seg_loss,
    tc_loss,
)
from robustseg.tensor import functional as F
from robustseg.tensor import grad_check

P = paths(WORK)


@pytest.fixture
def verdict(capsys):
    def emit(code, ok, detail):
        with capsys.disabled():
            print(f"\n{code} {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"{code}: {detail}"
    return emit


def read_json(path: Path):
    return json.loads(path.read_text()) if path.exists() else None


def timings():
    return read_json(P["timings"]) or {}


def missing(paths_):
    return [str(p) for p in paths_ if not p.exists()]


# ---------------------------------------------------------------- A1


def projected(fn, shape_seed=0):
    def loss(*xs):
        out = fn(*xs)
        return T.tsum(out * np.random.default_rng(shape_seed).normal(size=out.shape))
    return loss


def away_from_zero(r, shape):
    x = r.normal(size=shape)
    return np.sign(x) * (0.1 + np.abs(x))


def bundle_inputs(r):
    return [r.normal(size=(2, 4, 4, 4)) for _ in range(4)] + [r.normal(size=(2, 8)) for _ in range(2)]


def bundle(*xs):
    return FeatureBundle(*xs)


def a1_cases(seed):
    r = np.random.default_rng(seed)
    bn_stats = F.BatchNormStats.create(3, 0.1)
    amfg = AMFG(np.random.default_rng(seed))
    amfg.train()
    amp = AMFG(np.random.default_rng(seed + 100)).amp_conv
    amp.weight.data = amp.weight.data + r.normal(0, 0.05, amp.weight.shape).astype(np.float32)
    aotg, fuse = AOTG(np.random.default_rng(seed)), Fusion(np.random.default_rng(seed), c=4)
    g = (r.random((2, 6, 6)) < 0.4).astype(np.float64)
    return {
        "conv2d": (lambda x, k: F.conv2d(x, k, pad=1), [r.normal(size=(2, 3, 5, 5)), r.normal(size=(2, 3, 3, 3))]),
        "conv2d_stride2": (lambda x, k: F.conv2d(x, k, pad=1, stride=2), [r.normal(size=(1, 2, 6, 6)), r.normal(size=(3, 2, 3, 3))]),
        "transposed_conv2d": (lambda x, k: F.transposed_conv2d(x, k), [r.normal(size=(2, 3, 3, 3)), r.normal(size=(3, 2, 2, 2))]),
        "instance_norm": (lambda x, gm: F.instance_norm(x, gm, np.zeros(3)), [r.normal(size=(2, 3, 4, 4)), r.normal(size=3)]),
        "batch_norm_train": (lambda x, gm: F.batch_norm(x, gm, np.zeros(3), bn_stats, True), [r.normal(size=(3, 3, 2, 2)), r.normal(size=3)]),
        "softmax": (lambda x: F.softmax(x, axis=-1), [r.normal(size=(3, 5))]),
        "relu": (F.relu, [away_from_zero(r, (4, 5))]),
        "gelu": (F.gelu, [r.normal(size=(4, 5))]),
        "sigmoid": (F.sigmoid, [r.normal(size=(4, 5))]),
        "tanh": (F.tanh, [r.normal(size=(4, 5))]),
        "logsigmoid": (F.logsigmoid, [r.normal(size=(4, 5)) * 3]),
        "fourier_suppress": (lambda x: fourier_suppress(x, amp), [r.normal(size=(1, 64, 4, 4))]),
        "amfg_forward": (amfg, [r.normal(size=(2, 64, 16, 16))]),
        "aotg_forward": (aotg, [r.normal(size=(3, 64))]),
        "fuse": (fuse, [r.normal(size=(1, 4, 5, 5)), r.normal(size=(1, 4, 5, 5))]),
        "predict_mask": (lambda w, f: predict_mask(w, f, out_size=8), [r.normal(size=(2, 4)), r.normal(size=(2, 4, 4, 4))]),
        "mfc_loss": (lambda *xs: mfc_loss(bundle(*xs)), bundle_inputs(r)),
        "tc_loss": (lambda *xs: tc_loss(bundle(*xs)), bundle_inputs(r)),
        "dice_loss": (lambda x: dice_loss(F.sigmoid(x), g), [r.normal(size=(2, 6, 6))]),
        "focal_loss": (lambda x: focal_loss(x, g), [r.normal(size=(2, 6, 6)) * 2]),
        "seg_loss": (lambda x: seg_loss(x, g), [r.normal(size=(2, 6, 6)) * 2]),
        "overall_loss": (lambda x, *xs: overall_loss(bundle(*xs), x, g, LossWeights(0.7, 1.3, 20)),
                         [r.normal(size=(2, 6, 6))] + bundle_inputs(r)),
    }


SCALAR = {"mfc_loss", "tc_loss", "dice_loss", "focal_loss", "seg_loss", "overall_loss"}


def test_a1_gradient_soundness(verdict):
    t0 = time.time()
    worst, failed = {}, []
    for seed in range(10):
        for name, (fn, inputs) in a1_cases(seed).items():
            loss = fn if name in SCALAR else projected(fn, seed)
            rep = grad_check(loss, inputs, h=1e-3, tol=1e-3, max_entries=20, seed=seed)
            worst[name] = max(worst.get(name, 0.0), rep.max_rel_err)
            if not rep.passed:
                failed.append(f"{name}@{seed}")
    secs = time.time() - t0
    top = max(worst, key=worst.get)
    ok = not failed and secs < 300
    verdict("A1", ok, f"{len(worst)} ops x 10 seeds, worst rel err {worst[top]:.2e} ({top}), "
                      f"failures {failed or 'none'}, {secs:.0f} s (budget 300 s)")


# ---------------------------------------------------------------- A2


def test_a2_metric_oracle(verdict):
    t0 = time.time()
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(100):
        g = rng.random((16, 16)) < rng.random()
        prob = rng.random((16, 16))
        p = prob >= 0.5
        bad += pixel_metrics(p, g) != scan_metrics(p, g)
        bad += average_precision(prob, g) != scan_ap(prob, g, DEFAULT_THRESHOLDS)
    secs = time.time() - t0
    verdict("A2", bad == 0 and secs < 10, f"100 random 16x16 pairs, {bad} exact mismatches, {secs:.2f} s (budget 10 s)")


# ---------------------------------------------------------------- A3


def test_a3_fourier_contract(verdict):
    t0 = time.time()
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 64, 16, 16)).astype(np.float32)
    amp, phase = T.to_frequency(T.Tensor(x))
    round_trip = float(np.abs(T.from_frequency(amp, phase).data - x).max())
    x64 = x.astype(np.float64)
    energy = (x64 ** 2).sum()
    parseval = abs((np.abs(T.fft2(x64)) ** 2).sum() / (16 * 16) - energy) / energy
    trace = {}
    module = AMFG(np.random.default_rng(0))
    y = fourier_suppress(T.Tensor(x), module.amp_conv, trace).data
    identity = float(np.abs(y - x).max())
    same_phase = trace["synthesis_phase"] is trace["analysis_phase"]
    secs = time.time() - t0
    ok = round_trip <= 1e-5 and parseval <= 1e-5 and identity <= 1e-4 and same_phase and secs < 10
    verdict("A3", ok, f"round trip {round_trip:.1e} (<=1e-5), Parseval {parseval:.1e} (<=1e-5), "
                      f"identity-init {identity:.1e} (<=1e-4), phase reused {same_phase}, {secs:.2f} s")


# ---------------------------------------------------------------- A4


def test_a4_degradation_engine(verdict):
    t0 = time.time()
    table = golden.check_table()
    img = golden.reference_image()
    neutral = apply(img, IDENTITY).tobytes() == img.tobytes()
    rng = np.random.default_rng(4)
    ks = kinds()
    bad = 0
    for _ in range(1000):
        spec = DegradationSpec(ks[rng.integers(len(ks))], int(rng.integers(1, 4)), int(rng.integers(0, 2 ** 63)))
        im = (rng.random((32, 32, 3)) * rng.uniform(0.05, 1.0)).astype(np.float32)
        out = apply(im, spec)
        bad += not (np.isfinite(out).all() and out.min() >= 0 and out.max() <= 1)
    secs = time.time() - t0
    matched = sum(table.values())
    ok = matched == 16 and neutral and bad == 0 and secs < 120
    verdict("A4", ok, f"golden {matched}/16 bitwise, identity neutral {neutral}, "
                      f"{bad}/1000 fuzz outputs out of range, {secs:.0f} s (budget 120 s)")


# ---------------------------------------------------------------- A5


def test_a5_teacher_quality(verdict):
    info = read_json(P["teacher"].with_suffix(".json"))
    if info is None:
        verdict("A5", False, f"no teacher checkpoint at {P['teacher']}")
    miou, secs = info["val_miou"], info["train_seconds"]
    verdict("A5", miou >= 0.85 and secs < 900,
            f"clear-val mIoU {miou:.4f} (floor 0.85) after {len(info['history'])} epochs, "
            f"{secs:.0f} s (budget 900 s)")


# ---------------------------------------------------------------- A6


def report(name):
    return read_json(P["runs"] / name / "report.json")


def test_a6_robustness_direction(verdict):
    need = [P["runs"] / "teacher" / "report.json"] + [P["runs"] / run_name("all", s) / "report.json" for s in SEEDS]
    if missing(need):
        verdict("A6", False, f"missing artifacts {missing(need)}; run tests/acceptance_runs.py")
    base = report("teacher")
    runs = [report(run_name("all", s)) for s in SEEDS]
    gain = statistics.median(r["degraded"]["iou"] - base["degraded"]["iou"] for r in runs)
    drop = statistics.median(base["clear"]["iou"] - r["clear"]["iou"] for r in runs)
    tm = timings()
    secs = tm.get("eval_teacher", 0) + sum(tm.get(f"{k}_{run_name('all', s)}", 0) for s in SEEDS for k in ("train", "eval"))
    ok = gain >= 0.05 and drop <= 0.01 and secs < 45 * 60
    verdict("A6", ok, f"teacher degraded/clear mIoU {base['degraded']['iou']:.4f}/{base['clear']['iou']:.4f}; "
                      f"median degraded gain {gain:+.4f} (>= +0.05), median clear drop {drop:+.4f} (<= 0.01), "
                      f"{secs / 60:.1f} min (budget 45)")


# ---------------------------------------------------------------- A7


def test_a7_ablation_ordering(verdict):
    need = [P["runs"] / run_name(v, s) / "report.json" for v in LADDER for s in SEEDS]
    if missing(need):
        verdict("A7", False, f"{len(missing(need))} ablation reports missing; run tests/acceptance_runs.py")
    iou = {v: [report(run_name(v, s))["degraded"]["iou"] for s in SEEDS] for v in LADDER}
    wins = sum(a >= t for a, t in zip(iou["all"], iou["token_only"]))
    med = {v: statistics.median(x) for v, x in iou.items()}
    beaten = [v for v in LADDER if v != "all" and med["all"] < med[v]]
    tm = timings()
    # the budget covers one ladder (five variants, one seed), as `robustseg ablate` runs it
    ladder = [sum(tm.get(f"{k}_{run_name(v, s)}", 0) for v in LADDER for k in ("train", "eval")) for s in SEEDS]
    ok = wins >= 2 and not beaten and max(ladder) < 2 * 3600
    meds = ", ".join(f"{v} {med[v]:.4f}" for v in LADDER)
    verdict("A7", ok, f"ALL >= token_only in {wins}/3 seeds; median degraded mIoU {meds}; "
                      f"variants above ALL {beaten or 'none'}; slowest ladder {max(ladder) / 60:.0f} min "
                      f"(budget 120), all three {sum(ladder) / 60:.0f} min")


# ---------------------------------------------------------------- A8


def test_a8_invariance_direction(verdict):
    need = [P["runs"] / f"invariance_s{s}.json" for s in SEEDS]
    if missing(need):
        verdict("A8", False, f"missing {missing(need)}; run tests/acceptance_runs.py")
    sil = [read_json(p)["silhouettes"] for p in need]
    good = sum(s["robust"] < s["teacher"] and s["robust"] < s["no_consistency"] for s in sil)
    shapes = {(read_json(p)["n_images"], len(read_json(p)["kinds"])) for p in need}
    secs = sum(timings().get(f"invariance_s{s}", 0) for s in SEEDS)
    ok = good >= 2 and shapes == {(20, 6)} and secs < 600
    rows = "; ".join(f"s{s} teacher {x['teacher']:.3f} robust {x['robust']:.3f} nocons {x['no_consistency']:.3f}"
                     for s, x in zip(SEEDS, sil))
    verdict("A8", ok, f"robust lowest in {good}/3 seeds ({rows}); {secs:.0f} s (budget 600 s)")


# ---------------------------------------------------------------- A9


def test_a9_loss_identities(verdict):
    t0 = time.time()
    rng = np.random.default_rng(9)
    with T.precision(np.float64):
        xs = [T.Tensor(a) for a in bundle_inputs(rng)]
        b = bundle(*xs)
        logits = rng.normal(size=(2, 8, 8)) * 2
        g = (rng.random((2, 8, 8)) < 0.4).astype(np.float64)
        lam0 = overall_loss(b, T.Tensor(logits), g, LossWeights(0, 0, 20)).item() == mfc_loss(b).item()
        p = 1 / (1 + np.exp(-logits))
        bce = -np.mean(g * np.log(p) + (1 - g) * np.log(1 - p))
        focal_gap = abs(focal_loss(T.Tensor(logits), g, gamma=0.0, alpha=0.5).item() - 0.5 * bce)
        dice = dice_loss(T.Tensor(g), g).item()
    secs = time.time() - t0
    ok = lam0 and focal_gap <= 1e-6 and dice == 0.0 and secs < 5
    verdict("A9", ok, f"overall(l1=l2=0)==mfc exactly {lam0}, |focal - BCE/2| {focal_gap:.1e} (<=1e-6), "
                      f"perfect dice {dice!r}, {secs:.2f} s")


# ---------------------------------------------------------------- A10


def test_a10_determinism_and_freeze(verdict, tmp_path):
    t0 = time.time()
    data = tmp_path / "data"
    build_dataset(7, {"train": 16, "val": 1, "test": 2}, data)
    if P["teacher"].exists():
        teacher_path = P["teacher"]
    else:
        teacher_path = save_teacher(SamMini(seed=0).freeze(), {"val_miou": 0.0}, tmp_path / "teacher.rstn")
    before = teacher_path.read_bytes()
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"epochs = 2\ntrain_records = 16\nlog_every = 0\ndata = {data}\nteacher = {teacher_path}\n")
    codes = [cli_main(["train", "--config", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    one = tmp_path / "one.cfg"
    one.write_text(cfg.read_text().replace("epochs = 2", "epochs = 1"))
    codes.append(cli_main(["train", "--config", str(one), "--out", str(tmp_path / "c")]))
    codes.append(cli_main(["train", "--config", str(cfg), "--out", str(tmp_path / "c"), "--epochs", "2",
                           "--resume", str(tmp_path / "c" / "epoch_001.rstn")]))
    # the JSON metadata names the checkpoint path, so full reports are compared
    # for one checkpoint evaluated twice and the metric tables across both runs
    for d, out in (("a", "eval_a"), ("a", "eval_a2"), ("b", "eval_b")):
        codes.append(cli_main(["eval", "--checkpoint", str(tmp_path / d / "final.rstn"), "--teacher",
                               str(teacher_path), "--data", str(data), "--out", str(tmp_path / out)]))
    ok_codes = codes == [0] * 7
    repeat = ok_codes and all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
                              for n in ("epoch_001.rstn", "final.rstn", "final.json"))
    reports = ok_codes and all((tmp_path / "eval_a" / n).read_bytes() == (tmp_path / "eval_a2" / n).read_bytes()
                               for n in ("report.csv", "report.json"))
    reports = reports and (tmp_path / "eval_a" / "report.csv").read_bytes() == (tmp_path / "eval_b" / "report.csv").read_bytes()
    resume = ok_codes and (tmp_path / "c" / "final.rstn").read_bytes() == (tmp_path / "a" / "final.rstn").read_bytes()
    frozen = teacher_path.read_bytes() == before
    sha = read_json(P["sha"])
    cached = sha is not None and sha.get("after") == sha["before"]
    if teacher_path == P["teacher"]:
        frozen = frozen and cached
    loaded, _ = load_teacher(teacher_path)
    secs = time.time() - t0
    ok = ok_codes and repeat and reports and resume and frozen and loaded.frozen and secs < 1200
    verdict("A10", ok, f"repeat checkpoints identical {repeat}, reports identical {reports}, "
                       f"resume identical {resume}, teacher bytes unchanged {frozen} "
                       f"(cached experiments: {cached}), {secs:.0f} s (budget 1200 s)")

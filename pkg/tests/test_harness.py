import json
import re

import numpy as np
import pytest
from sklearn.metrics import silhouette_score

from robustseg.data import Manifest, build_dataset
from robustseg.errors import ContractError
from robustseg.harness import TrainConfig, load_run, parse_config, silhouette, train_robust
from robustseg.harness.cli import cli_main
from robustseg.harness.evaluate import evaluate, teacher_predictor
from robustseg.model import SamMini, load_teacher, save_teacher
from robustseg.model.teacher import teacher_bytes

RUN_CFG = "epochs = 2\ntrain_records = 8\nbatch_size = 4\nlog_every = 1\n"


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("world")
    build_dataset(5, {"train": 10, "val": 2, "test": 2}, root / "data")
    teacher = SamMini(seed=0).freeze()
    save_teacher(teacher, {"val_miou": 0.0}, root / "teacher.rstn")
    (root / "run.cfg").write_text(RUN_CFG + f"data = {root / 'data'}\nteacher = {root / 'teacher.rstn'}\n")
    return root


def train_cli(world, out, *extra):
    return cli_main(["train", "--config", str(world / "run.cfg"), "--out", str(out), *extra])


def strip_wall(text):
    return re.sub(r" wall=[0-9.]+", "", text)


# ---------------------------------------------------------------- config


def test_config_parsing():
    cfg = parse_config("# comment\nseed = 3\nuse_fourier = off  # trailing\nlr = 0.01\n\n")
    assert cfg.seed == 3 and cfg.use_fourier is False and cfg.lr == 0.01
    assert cfg.variant.use_amfg and not cfg.variant.use_fourier
    for bad in ("seed 3", "nope = 1", "seed = x", "consistency = maybe"):
        with pytest.raises(ContractError):
            parse_config(bad)


def test_config_digest_ignores_paths():
    a = TrainConfig(data="a", teacher="t1", epochs=1)
    assert a.digest() == TrainConfig(data="b", teacher="t2", epochs=9).digest()
    assert a.digest() != a.replace(seed=1).digest()


def test_with_variant():
    cfg = TrainConfig().with_variant("token_only")
    assert (cfg.use_rot, cfg.use_amfg, cfg.use_fourier, cfg.use_aotg) == (True, False, False, False)
    with pytest.raises(ContractError):
        TrainConfig().with_variant("bogus")


# ---------------------------------------------------------------- cli


def test_cli_usage_errors_exit_1(capsys):
    assert cli_main([]) == 1
    assert cli_main(["train", "--no-such-flag"]) == 1
    assert cli_main(["eval", "--prompt", "lasso", "--checkpoint", "x", "--teacher", "y", "--data", "z"]) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_io_errors_exit_2(world, tmp_path):
    assert cli_main(["eval", "--checkpoint", "teacher", "--teacher", str(tmp_path / "none.rstn"),
                     "--data", str(world / "data"), "--out", str(tmp_path)]) == 2
    assert cli_main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 2
    assert cli_main(["eval", "--checkpoint", "teacher", "--teacher", str(world / "teacher.rstn"),
                     "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == 2


def test_cli_validation_errors_exit_1(world, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_key = 1\n")
    assert cli_main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert train_cli(world, tmp_path / "v", "--variant", "bogus") == 1


def test_cli_golden_hash(capsys):
    assert cli_main(["golden-hash"]) == 0
    assert "MISMATCH" not in capsys.readouterr().out


def test_cli_gen_data(tmp_path):
    assert cli_main(["gen-data", "--seed", "2", "--train", "3", "--val", "1", "--test", "1",
                     "--out", str(tmp_path)]) == 0
    assert len(Manifest.read(tmp_path).entries) == 3 + 17 + 17


def test_pretrain_refuses_tiny_training_set(world, tmp_path):
    assert cli_main(["pretrain-teacher", "--data", str(world / "data"), "--epochs", "1",
                     "--out", str(tmp_path)]) == 1


# ---------------------------------------------------------------- training


@pytest.fixture(scope="module")
def runs(world):
    before = (world / "teacher.rstn").read_bytes()
    assert train_cli(world, world / "a") == 0
    assert train_cli(world, world / "b") == 0
    # resumed: stop after epoch 1, then continue from its checkpoint
    one = world / "one.cfg"
    one.write_text((world / "run.cfg").read_text().replace("epochs = 2", "epochs = 1"))
    assert cli_main(["train", "--config", str(one), "--out", str(world / "c")]) == 0
    assert cli_main(["train", "--config", str(world / "run.cfg"), "--out", str(world / "c"),
                     "--resume", str(world / "c" / "epoch_001.rstn"), "--epochs", "2"]) == 0
    return before


def test_repeated_runs_are_bitwise_identical(world, runs):
    for name in ("epoch_001.rstn", "epoch_002.rstn", "final.rstn", "final.json"):
        assert (world / "a" / name).read_bytes() == (world / "b" / name).read_bytes(), name
    la, lb = ((world / d / "train.log").read_text() for d in "ab")
    assert "step=4 " in la and strip_wall(la) == strip_wall(lb)


def test_resume_matches_uninterrupted_run(world, runs):
    assert (world / "c" / "final.rstn").read_bytes() == (world / "a" / "final.rstn").read_bytes()
    assert (world / "c" / "epoch_002.rstn").read_bytes() == (world / "a" / "epoch_002.rstn").read_bytes()
    meta = json.loads((world / "c" / "final.json").read_text())
    assert meta["epoch"] == 2 and meta["step"] == 4 and len(meta["history"]) == 2


def test_teacher_unchanged_by_training(world, runs):
    assert (world / "teacher.rstn").read_bytes() == runs
    teacher, _ = load_teacher(world / "teacher.rstn")
    cfg = TrainConfig(data=str(world / "data"), epochs=1, train_records=4, batch_size=4, log_every=0)
    before = teacher_bytes(teacher)
    train_robust(teacher, cfg)
    assert teacher_bytes(teacher) == before


def test_checkpoint_against_other_teacher_is_rejected(world, runs):
    other = SamMini(seed=9).freeze()
    with pytest.raises(ContractError):
        load_run(world / "a" / "final.rstn", other)
    with pytest.raises(ContractError):
        train_robust(SamMini(seed=0), TrainConfig(data=str(world / "data")))


def test_eval_reports_are_deterministic(world, runs, tmp_path):
    args = ["eval", "--checkpoint", str(world / "a" / "final.rstn"), "--teacher", str(world / "teacher.rstn"),
            "--data", str(world / "data")]
    assert cli_main(args + ["--out", str(tmp_path / "e1")]) == 0
    assert cli_main(args + ["--out", str(tmp_path / "e2")]) == 0
    for name in ("report.csv", "report.json"):
        assert (tmp_path / "e1" / name).read_bytes() == (tmp_path / "e2" / name).read_bytes()
    body = json.loads((tmp_path / "e1" / "report.json").read_text())
    assert body["metadata"]["model"] == "all"
    assert cli_main(["eval", "--checkpoint", "teacher", "--teacher", str(world / "teacher.rstn"),
                     "--data", str(world / "data"), "--prompt", "box", "--out", str(tmp_path / "e3")]) == 0


def test_evaluate_covers_every_kind(world):
    teacher, _ = load_teacher(world / "teacher.rstn")
    report = evaluate(teacher_predictor(teacher), Manifest.read(world / "data"), "test", with_ap=False)
    assert len(report.rows) == 15
    for row in list(report.rows.values()) + [report.clear]:
        assert 0 <= row["iou"] <= 1 and 0 <= row["pa"] <= 1
    # identity-degraded test images equal the clear ones, so they score the same
    assert report.identity == report.clear


def test_invariance_cli(world, runs, tmp_path):
    args = ["invariance", "--teacher", str(world / "teacher.rstn"), "--robust", str(world / "a" / "final.rstn"),
            "--no-consistency", str(world / "b" / "final.rstn"), "--data", str(world / "data"),
            "--images", "2", "--out", str(tmp_path)]
    assert cli_main(args) == 0
    body = json.loads((tmp_path / "invariance.json").read_text())
    assert set(body["silhouettes"]) == {"teacher", "robust", "no_consistency"}
    assert body["sample_counts"]["teacher"] == 2 * 6
    assert all(-1 <= v <= 1 for v in body["silhouettes"].values())


# ---------------------------------------------------------------- silhouette


@pytest.mark.parametrize("seed", range(4))
def test_silhouette_matches_sklearn(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, size=60)
    x = rng.normal(size=(60, 8)) + labels[:, None] * (0.5 * seed)
    assert silhouette(x, labels) == pytest.approx(silhouette_score(x, labels), abs=1e-10)


def test_silhouette_edge_cases():
    x = np.array([[0.0], [0.1], [5.0]])
    # the singleton cluster scores 0, as in sklearn
    assert silhouette(x, [0, 0, 1]) == pytest.approx(silhouette_score(x, [0, 0, 1]), abs=1e-12)
    with pytest.raises(ContractError):
        silhouette(x, [1, 1, 1])


def test_silhouette_degenerate_and_hand_built():
    assert silhouette(np.ones((6, 3)), [0, 0, 0, 1, 1, 1]) == 0.0
    x = np.array([[0.0, 0.0], [0.0, 1.0], [4.0, 0.0], [4.0, 1.0]])
    # a = 1 for every point; b = mean of {4, sqrt(17)}
    b = (4 + np.sqrt(17)) / 2
    assert silhouette(x, [0, 0, 1, 1]) == pytest.approx((b - 1) / b, abs=1e-12)


# ---------------------------------------------------------------- pipeline


def tree_digest(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_gen_data_twice_is_identical(tmp_path):
    for d in ("x", "y"):
        assert cli_main(["gen-data", "--seed", "7", "--train", "2", "--val", "1", "--test", "1",
                         "--out", str(tmp_path / d)]) == 0
    assert tree_digest(tmp_path / "x") == tree_digest(tmp_path / "y")


def test_eval_without_checkpoint_is_usage_error(world, capsys):
    assert cli_main(["eval", "--teacher", str(world / "teacher.rstn"), "--data", str(world / "data")]) == 1
    assert "usage" in capsys.readouterr().err


def test_eval_never_builds_consistency_targets(world, runs, tmp_path, monkeypatch):
    def forbidden(self, *a, **k):
        raise AssertionError("teacher heads used at inference")
    monkeypatch.setattr(SamMini, "teacher_heads", forbidden)
    assert cli_main(["eval", "--checkpoint", str(world / "a" / "final.rstn"), "--teacher",
                     str(world / "teacher.rstn"), "--data", str(world / "data"), "--out", str(tmp_path)]) == 0


def test_ablate_ladder_matches_independent_run(world, runs, tmp_path):
    assert cli_main(["ablate", "--config", str(world / "run.cfg"), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0] == "variant,iou,pa"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["token_only", "amfg", "amfg_f", "amfg_f_aotg", "all"]
    # the ALL row is the plain train + eval run with the same config
    assert cli_main(["eval", "--checkpoint", str(world / "a" / "final.rstn"), "--teacher",
                     str(world / "teacher.rstn"), "--data", str(world / "data"), "--out", str(tmp_path / "e")]) == 0
    body = json.loads((tmp_path / "e" / "report.json").read_text())
    iou, pa = (float(v) for v in lines[-1].split(",")[1:])
    assert iou == pytest.approx(body["degraded"]["iou"], abs=5e-7)
    assert pa == pytest.approx(body["degraded"]["pa"], abs=5e-7)

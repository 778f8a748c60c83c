import csv
import hashlib
import json
import shutil
from pathlib import Path

import pytest

from evimae.cli import main, report_table
from evimae.config import RunConfig


def _digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _log_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pretrained(small_synthetic, tmp_path_factory):
    root, _ = small_synthetic
    out = tmp_path_factory.mktemp("pre")
    assert main(["pretrain", "--data", str(root), "--out", str(out), "--max-steps", "12"]) == 0
    return out


@pytest.fixture(scope="module")
def finetuned(small_synthetic, pretrained, tmp_path_factory):
    root, _ = small_synthetic
    out = tmp_path_factory.mktemp("ft")
    args = ["finetune", "--data", str(root), "--out", str(out), "--init", str(pretrained / "pretrain.ckpt"), "--epochs", "2"]
    assert main(args) == 0
    return out


# -- synth ----------------------------------------------------------------------


def test_synth_writes_dataset(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"num_classes": 2, "clips_per_class": 3, "seed": 1}))
    assert main(["synth", str(spec), "--out", str(tmp_path / "d")]) == 0
    assert "6 clips" in capsys.readouterr().out
    splits = json.loads((tmp_path / "d" / "splits.json").read_text())
    assert sum(len(v) for v in splits.values()) == 6


def test_synth_missing_spec_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["synth", str(missing), "--out", str(tmp_path / "d")]) != 0
    assert str(missing) in capsys.readouterr().err


def test_synth_seed_override_is_deterministic(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"num_classes": 2, "clips_per_class": 2, "duration_s": 1.0}))
    for name, seed in (("a", "5"), ("b", "5"), ("c", "6")):
        assert main(["synth", str(spec), "--out", str(tmp_path / name), "--seed", seed]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


# -- pretrain -------------------------------------------------------------------


def test_pretrain_lowers_loss_and_writes_config(pretrained):
    rows = _log_rows(pretrained / "pretrain_log.csv")
    assert len(rows) == 12
    assert float(rows[-1]["total"]) < float(rows[0]["total"])
    cfg = RunConfig.load(pretrained / "config.json")
    assert cfg.pretrain.modality == "both"
    assert (pretrained / "pretrain.ckpt").is_file()
    stats = json.loads((pretrained / "preprocess_stats.json").read_text())
    assert stats["stft"]["n_bins"] == cfg.stft.n_bins and len(stats["norm"]["mean"]) == 3


def test_pretrain_rerun_from_resolved_config_is_identical(small_synthetic, pretrained, tmp_path):
    assert main(["pretrain", "--config", str(pretrained / "config.json"), "--out", str(tmp_path), "--max-steps", "12"]) == 0
    assert (tmp_path / "pretrain_log.csv").read_text() == (pretrained / "pretrain_log.csv").read_text()


def test_pretrain_resume_continues_step_counter(small_synthetic, tmp_path):
    root, _ = small_synthetic
    assert main(["pretrain", "--data", str(root), "--out", str(tmp_path), "--max-steps", "2"]) == 0
    ckpt = tmp_path / "pretrain.ckpt"
    assert main(["pretrain", "--data", str(root), "--out", str(tmp_path), "--max-steps", "4", "--resume", str(ckpt)]) == 0
    assert [int(r["step"]) for r in _log_rows(tmp_path / "pretrain_log.csv")] == [0, 1, 2, 3]


def test_imu_pretraining_needs_no_video(small_synthetic, tmp_path):
    root, _ = small_synthetic
    data = tmp_path / "data"
    shutil.copytree(root, data)
    for frames in data.rglob("frames"):
        shutil.rmtree(frames)
    assert main(["pretrain", "--data", str(data), "--out", str(tmp_path / "o"), "--modality", "imu", "--max-steps", "2"]) == 0


def test_commands_do_not_touch_dataset(small_synthetic, tmp_path):
    root, _ = small_synthetic
    before = _digest(root)
    assert main(["pretrain", "--data", str(root), "--out", str(tmp_path / "p"), "--max-steps", "1"]) == 0
    assert main(["finetune", "--data", str(root), "--out", str(tmp_path / "f"), "--epochs", "1"]) == 0
    assert _digest(root) == before


# -- finetune -------------------------------------------------------------------


def test_finetune_writes_report(finetuned):
    m = json.loads((finetuned / "metrics.json").read_text())
    assert 0.0 <= m["top1_accuracy"] <= 1.0
    assert m["run"] == {"modality": "both", "use_graph": True, "pretrained": True}
    assert len(_log_rows(finetuned / "finetune_log.csv")) == 2
    assert (finetuned / "config.json").is_file() and (finetuned / "finetune.ckpt").is_file()


def test_finetune_scratch_and_unknown_device(small_synthetic, tmp_path, capsys):
    root, _ = small_synthetic
    assert main(["finetune", "--data", str(root), "--out", str(tmp_path / "s"), "--epochs", "1", "--no-graph"]) == 0
    assert json.loads((tmp_path / "s" / "metrics.json").read_text())["run"]["pretrained"] is False
    code = main(["finetune", "--data", str(root), "--out", str(tmp_path / "u"), "--missing-devices", "left_elbow"])
    assert code == 2
    assert "left_elbow" in capsys.readouterr().err
    assert not (tmp_path / "u" / "finetune_log.csv").exists()


def test_video_finetuning_ignores_imu_files(small_synthetic, tmp_path):
    root, _ = small_synthetic
    data = tmp_path / "data"
    shutil.copytree(root, data)
    for f in data.rglob("imu_*.csv"):
        f.unlink()
    assert main(["finetune", "--data", str(data), "--out", str(tmp_path / "o"), "--modality", "video", "--epochs", "1"]) == 0


def test_bad_config_exit_code(tmp_path, small_synthetic):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data_dir": str(small_synthetic[0]), "pretrain": {"learning_rate": 1}}))
    assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


# -- eval -------------------------------------------------------------------------


def test_eval_memorized_model_is_perfect(small_synthetic, tmp_path):
    root, _ = small_synthetic
    cfg = RunConfig()
    cfg.data_dir = str(root)
    cfg.finetune.base_lr, cfg.finetune.head_lr_multiplier = 3e-4, 10.0
    cfg.save(tmp_path / "run.json")
    ft = tmp_path / "ft"
    args = ["finetune", "--config", str(tmp_path / "run.json"), "--out", str(ft), "--modality", "imu", "--epochs", "40"]
    assert main(args) == 0
    out = tmp_path / "ev"
    assert main(["eval", str(ft / "finetune.ckpt"), "--out", str(out), "--split", "train"]) == 0
    assert json.loads((out / "metrics.json").read_text())["top1_accuracy"] == 1.0


def test_eval_low_light_rows(finetuned, tmp_path):
    out = tmp_path / "ll"
    assert main(["eval", str(finetuned / "finetune.ckpt"), "--out", str(out), "--protocol", "low-light", "--light-levels", "1,0.5,0.1"]) == 0
    rows = _log_rows(out / "sweep.csv")
    assert [r["condition"] for r in rows] == ["light=1", "light=0.5", "light=0.1"]
    clean = tmp_path / "std"
    assert main(["eval", str(finetuned / "finetune.ckpt"), "--out", str(clean)]) == 0
    assert float(rows[0]["value"]) == json.loads((clean / "metrics.json").read_text())["top1_accuracy"]


def test_eval_device_missing_rows(pretrained, small_synthetic, tmp_path):
    out = tmp_path / "dm"
    args = ["eval", str(pretrained / "pretrain.ckpt"), "--out", str(out), "--protocol", "device-missing", "--missing-devices", "left_wrist"]
    assert main(args) == 0
    conditions = [r["condition"] for r in _log_rows(out / "sweep.csv")]
    assert conditions[:2] == ["all-devices", "missing=left_wrist"]


def test_eval_cross_dataset_device_mismatch(pretrained, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"num_classes": 2, "clips_per_class": 4, "devices": ["a", "b"]}))
    assert main(["synth", str(spec), "--out", str(tmp_path / "b")]) == 0
    args = ["eval", str(pretrained / "pretrain.ckpt"), "--out", str(tmp_path / "x"), "--protocol", "cross-dataset", "--finetune-data", str(tmp_path / "b")]
    assert main(args) == 2


def test_eval_missing_checkpoint(tmp_path):
    assert main(["eval", str(tmp_path / "none.ckpt"), "--out", str(tmp_path / "o")]) != 0


# -- report -----------------------------------------------------------------------


def test_report_rows(finetuned, tmp_path, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "metrics.json").write_text("{oops")
    assert main(["report", str(finetuned), str(finetuned), str(bad)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    assert "| both | ✓ | ✓ |" in lines[2]
    assert "invalid" in lines[4]


def test_report_empty():
    assert report_table([]).strip().splitlines()[0].startswith("| Run | Modality | Pretrain | Graph")
    assert len(report_table([]).strip().splitlines()) == 2

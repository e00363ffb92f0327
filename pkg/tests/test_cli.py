import json

import yaml

from regkd.cli import EXIT_FAILED_TRIALS, EXIT_INVALID, EXIT_OK, main

TINY = {
    "trials": 1,
    "workers": 1,
    "dataset": {"n": 500},
    "noise_stds": [1.0],
    "variants": ["teacher", "student-l1", "only-tor"],
    "teacher": {"epochs": 1, "hidden": 8, "batch_size": 100},
    "student": {"epochs": 1, "hidden": 6, "batch_size": 100},
}


def _write(tmp_path, raw):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_run_and_report(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    out = tmp_path / "out"
    assert main(["run", "-c", str(cfg), "-o", str(out), "--seed", "3", "--strict"]) == EXIT_OK
    lines = (out / "trials" / "trials.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert (out / "tables" / "table.csv").exists()
    assert (out / "plots" / "manifest.json").exists()
    assert list((out / "checkpoints").glob("*.ckpt"))
    assert yaml.safe_load((out / "config.yaml").read_text())["master_seed"] == 3
    capsys.readouterr()
    assert main(["report", "-o", str(out)]) == EXIT_OK
    assert "student-l1" in capsys.readouterr().out


def test_trials_override(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "-c", str(_write(tmp_path, TINY)), "-o", str(out), "-n", "2", "--variant", "student-l1"]) == 0
    assert len((out / "trials" / "trials.jsonl").read_text().splitlines()) == 2


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = dict(TINY, variants=[])
    assert main(["run", "-c", str(_write(tmp_path, bad)), "-o", str(tmp_path / "o")]) == EXIT_INVALID
    assert "variant list is empty" in capsys.readouterr().err


def test_strict_flags_failed_trials(tmp_path):
    # a fixed scale this large leaves no valid threshold, so every TOR trial fails
    cfg = _write(tmp_path, dict(TINY, variant_defaults={"sigma": 1000.0}))
    assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "b"), "--strict"]) == EXIT_FAILED_TRIALS
    rows = [json.loads(x) for x in (tmp_path / "b" / "trials" / "trials.jsonl").read_text().splitlines()]
    failed = [r for r in rows if r["failed"]]
    assert [r["cell"]["variant"] for r in failed] == ["only-tor"]
    assert "DomainError" in failed[0]["error"]
    assert "n/a" in (tmp_path / "b" / "tables" / "table.txt").read_text()


def test_file_dataset_without_clean_column(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("x,t\n" + "".join(f"{i / 50},{(i % 7) / 7}\n" for i in range(300)))
    raw = dict(TINY, dataset={"source": "file", "path": str(data)}, variants=["student-l1"])
    assert main(["run", "-c", str(_write(tmp_path, raw)), "-o", str(tmp_path / "a")]) == EXIT_INVALID
    assert "clean" in capsys.readouterr().err
    raw["table_metric"] = "mae_noisy"
    assert main(["run", "-c", str(_write(tmp_path, raw)), "-o", str(tmp_path / "b")]) == EXIT_OK


def test_train_teacher_then_student(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    out = tmp_path / "single"
    assert main(["train-teacher", "-c", str(cfg), "-o", str(out), "--n", "400", "--noise-std", "1"]) == 0
    teacher = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert teacher["mae_clean"] >= 0
    args = ["train-student", "-c", str(cfg), "-o", str(out), "--n", "400", "--noise-std", "1",
            "--variant", "ours-full", "--teacher", teacher["checkpoint"]]
    assert main(args) == 0
    student = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert "mae_head_tor" in student and student["threshold"]["epsilon_outlier"] > 0


def test_student_without_teacher_is_invalid(tmp_path):
    cfg = _write(tmp_path, TINY)
    assert main(["train-student", "-c", str(cfg), "-o", str(tmp_path), "--variant", "only-tor"]) == EXIT_INVALID


def test_sweep_threshold_command(tmp_path):
    cfg = _write(tmp_path, TINY)
    out = tmp_path / "sw"
    args = ["sweep-threshold", "-c", str(cfg), "-o", str(out), "--n", "600", "--batch-size", "100",
            "--thresholds", "6", "8"]
    assert main(args) == 0
    assert (out / "tables" / "threshold.txt").exists()

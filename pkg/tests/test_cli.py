import json
import subprocess
import sys

import pytest

from crossplat3d.cli import EXIT_CONFIG, EXIT_IO, EXIT_NO_PSEUDO, EXIT_OK, main

SCENE = {"n_cars": 4, "n_pedestrians": 4, "n_clutter": 3}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1]) if out else None


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    spec = base / "scene.json"
    spec.write_text(json.dumps(SCENE))
    assert main(["gen", "--out", str(base / "src"), "--frames", "20", "--seed", "1", "--spec", str(spec)]) == 0
    assert main(["gen", "--out", str(base / "tgt"), "--frames", "10", "--seed", "2", "--spec", str(spec),
                 "--profile", "quadruped", "--domain", "target"]) == 0
    return base


def test_gen_summary(data, capsys, tmp_path):
    code, s = run(capsys, "gen", "--out", tmp_path / "g", "--frames", 3, "--profile", "drone")
    assert code == EXIT_OK and s["status"] == "ok" and s["frames"] == 3 and s["domain"] == "Source"
    assert (tmp_path / "g" / "manifest.json").exists()


def test_augment(data, capsys, tmp_path):
    code, s = run(capsys, "augment", "--source-root", data / "src", "--out", tmp_path / "a", "--cja-prob", 1.0)
    assert code == EXIT_OK and s["frames"] == 20
    assert len(list((tmp_path / "a" / "labels").glob("*.jsonl"))) == 20


def test_augment_refuses_target(data, capsys, tmp_path):
    code, s = run(capsys, "augment", "--source-root", data / "tgt", "--out", tmp_path / "a")
    assert code == EXIT_CONFIG and s["error"] == "config"


def test_full_chain(data, capsys, tmp_path):
    out = tmp_path / "run"
    code, s = run(capsys, "pretrain", "--source-root", data / "src", "--out", out, "--jobs", 1)
    assert code == EXIT_OK and (out / "model_stage1.json").exists() and (out / "source_cja" / "manifest.json").exists()
    code, s = run(capsys, "selftrain", "--target-root", data / "tgt", "--model", out / "model_stage1.json",
                  "--out", out, "--jobs", 1)
    assert code == EXIT_OK and s["rounds"] == 5 and s["pseudo_labels"] > 0
    assert sorted(p.name for p in (out / "pseudo").iterdir()) == [f"labels_pseudo_round{r}.jsonl" for r in range(1, 6)]
    assert (out / "selftrain_metrics.csv").read_text().startswith("round,class,count,mean_score\n")
    code, s = run(capsys, "detect", "--target-root", data / "tgt", "--model", out / "model_stage2.json", "--out", out)
    assert code == EXIT_OK and s["frames"] == 10
    code, s = run(capsys, "eval", "--dets", out / "detections", "--gt", data / "tgt" / "gt_eval", "--out", out / "eval")
    assert code == EXIT_OK and 0.0 < s["score"] <= 100.0
    assert set(s["ap"]) == {"Car", "Pedestrian"}
    assert (out / "eval" / "report.csv").exists()


def test_eval_perfect(data, capsys, tmp_path):
    gt = data / "tgt" / "gt_eval"
    code, s = run(capsys, "eval", "--dets", gt, "--gt", gt, "--out", tmp_path)
    assert code == EXIT_OK and s["score"] == 100.0
    assert json.loads((tmp_path / "report.json").read_text())["score"] == 100.0


def test_eval_accepts_collection(data, capsys, tmp_path):
    code, _ = run(capsys, "pretrain", "--source-root", data / "src", "--out", tmp_path, "--no-cja")
    code, _ = run(capsys, "selftrain", "--target-root", data / "tgt", "--model", tmp_path / "model_stage1.json",
                  "--out", tmp_path, "--rounds", 1)
    assert code == EXIT_OK
    code, s = run(capsys, "eval", "--dets", tmp_path / "pseudo" / "labels_pseudo_round1.jsonl",
                  "--gt", data / "tgt" / "gt_eval", "--out", tmp_path / "e")
    assert code == EXIT_OK and s["score"] > 0


def test_zero_range_cja_equals_no_cja(data, capsys, tmp_path):
    run(capsys, "pretrain", "--source-root", data / "src", "--out", tmp_path / "a", "--cja-range-deg", 0)
    run(capsys, "pretrain", "--source-root", data / "src", "--out", tmp_path / "b", "--no-cja")
    assert (tmp_path / "a" / "model_stage1.json").read_bytes() == (tmp_path / "b" / "model_stage1.json").read_bytes()


def test_config_file_and_flag_precedence(data, capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"source_root": str(data / "src"), "out": str(tmp_path / "o"), "cja": False,
                               "head": "center"}))
    code, s = run(capsys, "pretrain", "--config", cfg, "--head", "anchor")
    assert code == EXIT_OK and s["cja"] is False
    model = json.loads((tmp_path / "o" / "model_stage1.json").read_text())
    assert model["head"] == "anchor"


@pytest.mark.parametrize("argv", [
    ["pretrain", "--out", "x"],
    ["pretrain", "--source-root", "/nonexistent", "--out", "x"],
    ["pretrain", "--config", "/nonexistent.json"],
])
def test_config_errors(capsys, argv):
    code, s = run(capsys, *argv)
    assert code == EXIT_CONFIG and s["error"] == "config"


def test_bad_threshold_combination(data, capsys, tmp_path):
    code, _ = run(capsys, "selftrain", "--target-root", data / "tgt", "--model", "m.json", "--out", tmp_path,
                  "--neg-thresh", 0.9)
    assert code == EXIT_CONFIG


def test_io_errors(data, capsys, tmp_path):
    gt = tmp_path / "gt"
    gt.mkdir()
    (gt / "000000.jsonl").write_text('{"frame_id": "000000", "class": "Car"}\n')
    code, s = run(capsys, "eval", "--dets", gt, "--gt", gt, "--out", tmp_path / "o")
    assert code == EXIT_IO and "cx" in s["message"]
    code, s = run(capsys, "detect", "--target-root", data / "tgt", "--model", tmp_path / "missing.json",
                  "--out", tmp_path)
    assert code == EXIT_IO


def test_frame_mismatch_is_io_error(data, capsys, tmp_path):
    gt = data / "tgt" / "gt_eval"
    short = tmp_path / "short"
    short.mkdir()
    (short / "000000.jsonl").write_bytes((gt / "000000.jsonl").read_bytes())
    code, s = run(capsys, "eval", "--dets", short, "--gt", gt, "--out", tmp_path / "o")
    assert code == EXIT_IO


def test_zero_pseudo_label_abort(data, capsys, tmp_path):
    run(capsys, "pretrain", "--source-root", data / "src", "--out", tmp_path, "--no-cja")
    code, s = run(capsys, "selftrain", "--target-root", data / "tgt", "--model", tmp_path / "model_stage1.json",
                  "--out", tmp_path, "--pos-thresh-car", 1.0, "--pos-thresh-ped", 1.0, "--neg-thresh", 0.99)
    assert code == EXIT_NO_PSEUDO and s["error"] == "no_pseudo_labels"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "crossplat3d", "gen", "--out", str(tmp_path / "g"), "--frames", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["frames"] == 1


def _snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_small_ablation_is_deterministic(capsys, tmp_path):
    args = ["--n-source", 20, "--n-target", 10, "--seed", 4, "--rounds", 2, "--jobs", 1]
    code_a, sa = run(capsys, "ablation", "--out", tmp_path / "a", *args)
    code_b, sb = run(capsys, "ablation", "--out", tmp_path / "b", *args)
    assert code_a == code_b == EXIT_OK and sa["scores"] == sb["scores"]
    snap_a, snap_b = _snapshot(tmp_path / "a"), _snapshot(tmp_path / "b")
    assert snap_a.keys() == snap_b.keys() and snap_a == snap_b
    header = (tmp_path / "a" / "ablation.csv").read_text().splitlines()
    assert header[0] == "Detector,CJA,ST3D,Car AP@0.5,Car AP@0.7,Ped. AP@0.5,Ped. AP@0.25,Score"
    assert len(header) == 5

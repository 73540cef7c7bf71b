import csv
import json
import subprocess
import sys

import pytest

from echoforge.cli import main

FAST = ["--set", "rir.max_rays=4000", "--set", "render.duration_s=3"]
SUBCOMMANDS = ["sample", "simulate", "metrics", "features", "train", "eval", "predict", "stream", "inspect", "rir"]


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--scenes", "3", "--seed", "7", "--out", str(root / "a"), *FAST]) == 0
    return root


def test_simulate_rerun_identical(sim):
    assert main(["simulate", "--scenes", "3", "--seed", "7", "--out", str(sim / "b"), *FAST]) == 0
    for name in ("manifest.jsonl", "dataset.json", "scenes/000001/scene.json", "scenes/000001/mic_3.wav"):
        assert (sim / "a" / name).read_bytes() == (sim / "b" / name).read_bytes()


def test_eval_oracle_predictions(sim, capsys):
    lines = [json.loads(x) for x in (sim / "a" / "manifest.jsonl").read_text().splitlines()]
    with open(sim / "oracle.jsonl", "w") as fh:
        for e in lines:
            fh.write(json.dumps({"id": e["id"], "channels": e["labels"]}) + "\n")
    rc = main(["eval", "--predictions", str(sim / "oracle.jsonl"), "--manifest", str(sim / "a"),
               "--split", "train", "--out", str(sim / "oracle_report.json"), "--set", "eval.bootstrap_reps=50"])
    assert rc == 0
    rep = json.loads((sim / "oracle_report.json").read_text())
    assert all(r["estimate"] == 0.0 for r in rep["results"] if r["statistic"] == "rmse")


def test_train_predict_eval_stream(sim, capsys):
    ck = sim / "m.ckpt"
    assert main(["train", "--manifest", str(sim / "a"), "--out", str(ck), "--epochs", "2",
                 "--set", "train.batch_size=2", "--set", "train.crop_s=1.0"]) == 0
    hist = [json.loads(x) for x in (sim / "m.ckpt.history.jsonl").read_text().splitlines()]
    assert [h["epoch"] for h in hist] == [1, 2]
    wavs = sorted(str(p) for p in (sim / "a" / "scenes" / "000000").glob("mic_*.wav"))[:3]
    capsys.readouterr()
    assert main(["predict", "--ckpt", str(ck), *wavs]) == 0
    pred = json.loads(capsys.readouterr().out)
    assert len(pred["channels"]) == 3 and set(pred["channels"][0]) >= {"mos", "sti", "t60_s", "drr_db", "c50_db"}
    assert main(["eval", "--ckpt", str(ck), "--manifest", str(sim / "a"), "--split", "train",
                 "--out", str(sim / "r.json"), "--set", "eval.bootstrap_reps=50"]) == 0
    assert json.loads((sim / "r.json").read_text())["schema"] == 1
    assert main(["stream", "--ckpt", str(ck), *wavs, "--out", str(sim / "t.csv")]) == 0
    with open(sim / "t.csv") as fh:
        rows = list(csv.DictReader(fh))
    # 3 s file: floor((3 - 1) / 0.5) = 4 ticks
    assert len(rows) == 4 * 3 * 5
    assert (sim / "t.csv.json").exists()


def test_sample_features_metrics_rir_inspect(sim, capsys):
    assert main(["sample", "--n", "3", "--seed", "1", "--out", str(sim / "s.jsonl")]) == 0
    assert len((sim / "s.jsonl").read_text().splitlines()) == 3
    wav = str(sim / "a" / "scenes" / "000000" / "mic_0.wav")
    assert main(["features", wav, wav, "--out", str(sim / "f.bin")]) == 0
    assert (sim / "f.bin").read_bytes()[:4] == b"EFMT"
    scene = str(sim / "a" / "scenes" / "000000" / "scene.json")
    assert main(["rir", "--scene", scene, "--mic", "2", "--out", str(sim / "h.wav"), *FAST]) == 0
    capsys.readouterr()
    assert main(["metrics", str(sim / "h.wav")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert 0 < doc["sti"] <= 1 and doc["t60_s"] > 0
    assert main(["inspect", "--manifest", str(sim / "a"), "--out", str(sim / "scatter.csv")]) == 0
    assert len((sim / "scatter.csv").read_text().splitlines()) == 1 + 3 * 5


def test_errors_and_exit_codes(sim, capsys):
    assert main(["eval", "--manifest", str(sim / "missing"), "--predictions", "x", "--out", str(sim / "x")]) == 1
    err = capsys.readouterr().err
    assert json.loads(err.splitlines()[0])["error"]
    assert main(["sample", "--out", str(sim / "x.jsonl"), "--set", "scene.nope=1"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 2


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_per_subcommand(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    assert cmd in capsys.readouterr().out


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "echoforge.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and all(c in out.stdout for c in SUBCOMMANDS)
    bad = subprocess.run([sys.executable, "-m", "echoforge.cli", "frobnicate"], capture_output=True, text=True)
    assert bad.returncode == 2


def test_inspect_scatter_selection(sim, capsys):
    assert main(["inspect", "--manifest", str(sim / "a"), "--scatter", "drr,t60", "--out", str(sim / "sc.csv")]) == 0
    header = (sim / "sc.csv").read_text().splitlines()[0]
    assert header == "scene,split,mic,distance_m,drr_db,t60_s"
    assert main(["inspect", "--manifest", str(sim / "a"), "--scatter", "edt", "--out", str(sim / "sc2.csv")]) == 2


def test_sample_count_into_directory(tmp_path):
    (tmp_path / "d").mkdir()
    assert main(["sample", "--count", "2", "--seed", "3", "--out", str(tmp_path / "d")]) == 0
    assert len((tmp_path / "d" / "scenes.jsonl").read_text().splitlines()) == 2


def test_simulate_with_external_mos_table(tmp_path):
    (tmp_path / "mos.csv").write_text("file,mos\nscenes/000000/mic_1.wav,4.25\n")
    assert main(["simulate", "--scenes", "1", "--seed", "2", "--out", str(tmp_path / "o"),
                 "--mos-table", str(tmp_path / "mos.csv"), *FAST]) == 0
    entry = json.loads((tmp_path / "o" / "manifest.jsonl").read_text().splitlines()[0])
    assert entry["labels"][1]["mos"] == 4.25
    assert entry["labels"][0]["mos"] != 4.25
    scene = json.loads((tmp_path / "o" / "scenes" / "000000" / "scene.json").read_text())
    assert scene["labels"][1]["mos"] == 4.25 and scene["mos_source"] == "table"

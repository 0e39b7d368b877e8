import json
import subprocess
import sys

import numpy as np
import pytest

from gsrkit import formats
from gsrkit.cli import main, parse_args
from gsrkit.formats import Clip, FrameAnnotation

from conftest import IMAGE, wide_camera


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--clips", "2", "--frames", "6", "--seed", "3",
                 "--embedding-sigma", "0.02"]) == 0
    return out


def _json_report(capsys):
    text = capsys.readouterr().out
    return json.loads(text[text.index("{"):])


def test_synth_layout(synth_dir):
    for sub, ext in (("observations", "json"), ("ground_truth", "json"), ("embeddings", "bin")):
        assert sorted(p.name for p in (synth_dir / sub).iterdir()) == [f"clip_000.{ext}", f"clip_001.{ext}"]
    gt = formats.read_clip(synth_dir / "ground_truth" / "clip_000.json")
    assert gt.image_size == IMAGE and len(gt.frames) == 6
    assert all(f.camera() is not None for f in gt.frames.values())
    obs = formats.read_clip(synth_dir / "observations" / "clip_000.json")
    assert all(f.camera() is None for f in obs.frames.values())
    embs = formats.read_embeddings(synth_dir / "embeddings" / "clip_000.bin")
    assert [len(e) for e in embs] == [len(f.athletes) for f in obs.ordered()]


def test_calibrate_and_score(synth_dir, tmp_path, capsys):
    cal = tmp_path / "cal"
    assert main(["calibrate", "--in", str(synth_dir / "observations"), "--out", str(cal)]) == 0
    assert "CR = 1.000" in capsys.readouterr().out
    assert main(["eval", "--mode", "calibration", "--pred", str(cal), "--gt", str(synth_dir / "ground_truth"),
                 "--format", "json"]) == 0
    rep = _json_report(capsys)
    assert rep["cr"] == 1.0 and rep["jac"]["5"] == 1.0 and rep["fs"] == 100.0
    assert main(["eval", "--mode", "calibration", "--pred", str(cal), "--gt", str(synth_dir / "ground_truth"),
                 "--format", "table"]) == 0
    table = capsys.readouterr().out
    assert "JaC5" in table and "100.0" in table


def test_annotate_reprojects(synth_dir, tmp_path):
    out = tmp_path / "ann"
    assert main(["annotate", "--in", str(synth_dir / "ground_truth"), "--out", str(out)]) == 0
    a = formats.read_clip(out / "clip_000.json")
    b = formats.read_clip(synth_dir / "ground_truth" / "clip_000.json")
    for i in b.frames:
        assert a.frames[i].keypoints.keys() == b.frames[i].keypoints.keys()
        for k, kp in b.frames[i].keypoints.items():
            assert abs(a.frames[i].keypoints[k].x - kp.x) < 1e-9


def test_track_postprocess_eval(synth_dir, tmp_path, capsys):
    tr, pp = tmp_path / "tr", tmp_path / "pp"
    emb = str(synth_dir / "embeddings")
    assert main(["track", "--in", str(synth_dir / "observations"), "--embeddings", emb, "--out", str(tr),
                 "--n-init", "1"]) == 0
    assert main(["postprocess", "--in", str(tr), "--embeddings", emb, "--out", str(pp)]) == 0
    clip = formats.read_clip(pp / "clip_000.json")
    assert all(a.track_id is not None for f in clip.frames.values() for a in f.athletes)
    capsys.readouterr()
    assert main(["eval", "--mode", "tracking", "--pred", str(pp), "--gt", str(synth_dir / "ground_truth"),
                 "--format", "json"]) == 0
    rep = _json_report(capsys)
    assert rep["idf1"] > 0.9 and rep["mota"] > 0.9


def test_eval_tracking_perfect(synth_dir, capsys):
    gt = str(synth_dir / "ground_truth")
    assert main(["eval", "--mode", "tracking", "--pred", gt, "--gt", gt, "--format", "json"]) == 0
    rep = _json_report(capsys)
    assert rep == {"hota": 1.0, "detA": 1.0, "assA": 1.0, "mota": 1.0, "idf1": 1.0}


def test_final_score_fixture(tmp_path, capsys):
    """705 exact frames, 289 with a doubled focal, 6 without a camera."""
    cam = wide_camera(hfov_deg=60.0, center=(0.0, -60.0, 20.0))
    zoomed = cam.with_focal(2 * cam.fx)
    gt = Clip(IMAGE, {i: FrameAnnotation().with_camera(cam) for i in range(1000)})
    pred = Clip(IMAGE, {
        i: FrameAnnotation().with_camera(cam if i < 705 else zoomed if i < 994 else None) for i in range(1000)
    })
    (tmp_path / "gt").mkdir()
    (tmp_path / "pred").mkdir()
    formats.write_clip(gt, tmp_path / "gt" / "c.json")
    formats.write_clip(pred, tmp_path / "pred" / "c.json")
    assert main(["eval", "--mode", "calibration", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
                 "--format", "json", "--jobs", "1"]) == 0
    rep = _json_report(capsys)
    assert rep["cr"] == pytest.approx(0.994)
    assert rep["jac"]["5"] == pytest.approx(0.705)
    assert abs(rep["fs"] - 70.1) <= 0.05


def test_schema_error_exit_code(tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "c.json").write_text('{"image_width": 10, "image_height": 10, "frames": {"0": {"athletes": [{}]}}}')
    assert main(["calibrate", "--in", str(d), "--out", str(tmp_path / "o")]) == 1
    assert main(["calibrate", "--in", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"frames": 3, "clips": 2}))
    args = parse_args(["synth", "--out", "x", "--config", str(cfg)])
    assert (args.frames, args.clips) == (3, 2)
    args = parse_args(["synth", "--out", "x", "--config", str(cfg), "--frames", "7"])
    assert (args.frames, args.clips) == (7, 2)
    cfg.write_text(json.dumps({"nonsense": 1}))
    with pytest.raises(SystemExit):
        parse_args(["synth", "--out", "x", "--config", str(cfg)])
    with pytest.raises(SystemExit):
        parse_args(["eval", "--mode", "calibration", "--pred", "a", "--gt", "b", "--gamma", "0"])


def test_outputs_are_reproducible(tmp_path):
    for k in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / k), "--frames", "3", "--seed", "5",
                     "--keypoint-sigma", "1"]) == 0
        assert main(["calibrate", "--in", str(tmp_path / k / "observations"), "--out", str(tmp_path / k / "cal")]) == 0
    for sub in ("observations", "ground_truth", "cal"):
        a = (tmp_path / "a" / sub / "clip_000.json").read_bytes()
        b = (tmp_path / "b" / sub / "clip_000.json").read_bytes()
        assert a == b
    a = (tmp_path / "a" / "embeddings" / "clip_000.bin").read_bytes()
    assert a == (tmp_path / "b" / "embeddings" / "clip_000.bin").read_bytes()


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "gsrkit.cli", "synth", "--out", str(tmp_path), "--frames", "1",
                          "--summary", str(tmp_path / "s.json")], capture_output=True, text=True, timeout=300)
    assert out.returncode == 0, out.stderr
    assert json.loads((tmp_path / "s.json").read_text()) == {"clips": 1, "frames": 1}

import json
import os
import subprocess
import urllib.request
from pathlib import Path

import jsonschema
import pytest

CLI = os.environ.get("KEYFLOW_CLI", "keyflow")
SCHEMAS = Path(os.environ.get("KEYFLOW_SCHEMAS", Path(__file__).resolve().parents[2] / "docs" / "schemas"))

SMALL_FLOW = ["--iterations", "6", "--hidden", "8", "--batch", "2", "--crop", "24"]


def run(*args, ok=True):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, timeout=600)
    if ok:
        assert proc.returncode == 0, proc.stderr
    return proc


def check(doc, name):
    schema = json.loads((SCHEMAS / f"{name}.schema.json").read_text())
    jsonschema.validate(doc, schema)
    return doc


def stdout_json(proc, name):
    return check(json.loads(proc.stdout), name)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    report = stdout_json(run("synth", "--out", root / "corpus", "--items", 14, "--seed", 5), "synth_report")
    assert report["items"] == 14
    return root


@pytest.fixture(scope="module")
def ckpt(work):
    out = work / "flow"
    proc = run("train-cfm", "--data", work / "corpus", "--out", out, "--holdout", 4, "--eval-items", 2, *SMALL_FLOW)
    report = stdout_json(proc, "train_cfm_report")
    assert report["held_out"]["n_items"] == 2
    assert len(report["loss_curve"]) >= 1
    return out


def test_synth_is_deterministic(work, tmp_path):
    run("synth", "--out", tmp_path / "again", "--items", 14, "--seed", 5)
    for name in ("item_00000.sprk", "item_00013.json"):
        assert (tmp_path / "again" / name).read_bytes() == (work / "corpus" / name).read_bytes()


def test_train_seg_segment_keyframes(work):
    model = work / "seg"
    report = stdout_json(
        run("train-seg", "--data", work / "corpus", "--out", model, "--epochs", 2, "--hidden", 8, "--holdout", 3),
        "train_seg_report",
    )
    assert report["held_out"]["items"] == 3
    assert len(report["loss_curve"]) == 2

    seg = work / "seg.json"
    run("segment", "--model", model, "--in", work / "corpus" / "item_00000.sprk", "--out", seg)
    labels = check(json.loads(seg.read_text()), "segmentation")
    assert len(labels["bio"]) == labels["T"]

    kf = work / "kf.json"
    run("keyframes", "--labels", seg, "--out", kf)
    check(json.loads(kf.read_text()), "keyframes")


def test_keyframes_reproduce_generator_mask(work):
    sidecar = work / "corpus" / "item_00002.json"
    kf = work / "kf_gt.json"
    run("keyframes", "--labels", sidecar, "--out", kf)
    doc = check(json.loads(kf.read_text()), "keyframes")
    assert doc["mask"] == [int(m) for m in json.loads(sidecar.read_text())["mask"]]


def test_sample_and_eval(work, ckpt):
    item = work / "corpus" / "item_00001"
    kf = work / "kf1.json"
    run("keyframes", "--labels", item.with_suffix(".json"), "--out", kf)
    gen = work / "gen.sprk"
    report = stdout_json(
        run("sample", "--ckpt", ckpt, "--mask", kf, "--anchors", item.with_suffix(".sprk"), "--text", "g1 g2",
            "--lang", "DGS", "--steps", 3, "--gamma", 2.0, "--out", gen),
        "sample_report",
    )
    assert report["conditional"] and report["steps"] == 3
    assert gen.read_bytes()[:4] == b"SPRK"
    ev = stdout_json(run("eval", "--pred", gen, "--gt", item.with_suffix(".sprk")), "eval_report")
    assert ev["T_pred"] == ev["T_gt"]

    slerp = work / "slerp.sprk"
    stdout_json(run("sample", "--baseline", "slerp", "--mask", kf, "--anchors", item.with_suffix(".sprk"),
                    "--pad", 8, "--out", slerp), "sample_report")
    out = work / "ev.json"
    run("eval", "--pred", slerp, "--gt", item.with_suffix(".sprk"), "--out", out)
    check(json.loads(out.read_text()), "eval_report")


def test_unconditional_sample(work, ckpt):
    report = stdout_json(run("sample", "--ckpt", ckpt, "--frames", 20, "--steps", 2, "--out", work / "u.sprk"),
                         "sample_report")
    assert report["T"] == 20 and not report["conditional"] and report["anchor_frames"] == []


def test_ablate_steps(work, tmp_path):
    out = tmp_path / "abl.json"
    run("ablate", "--suite", "steps", "--data", work / "corpus", "--holdout", 3, "--eval-items", 2, "--out", out,
        *SMALL_FLOW)
    doc = check(json.loads(out.read_text()), "ablation_report")
    assert [r["steps"] for r in doc["rows"]] == [1, 2, 5, 10, 20, 50, 100]


@pytest.mark.parametrize(
    "args,code",
    [
        (["sample", "--frames", 5, "--out", "x.sprk"], "ConfigInvalid"),
        (["synth", "--out", "bad", "--items", -1], "ConfigInvalid"),
        (["train-cfm", "--data", ".", "--out", "o", "--lambda", "1,2"], "IoError"),
    ],
)
def test_errors_are_json_on_stderr(work, args, code):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, cwd=work)
    assert proc.returncode == 1
    doc = check(json.loads(proc.stderr.strip().splitlines()[-1]), "error")
    assert doc["error"] == code


def test_corrupt_sprk_is_rejected(work):
    bad = work / "bad.sprk"
    bad.write_bytes(b"NOPE" + b"\0" * 32)
    proc = run("eval", "--pred", bad, "--gt", work / "corpus" / "item_00000.sprk", ok=False)
    assert proc.returncode == 1
    assert check(json.loads(proc.stderr), "error")["error"] == "FormatError"


def test_bad_lambda(work, ckpt):
    proc = run("train-cfm", "--data", work / "corpus", "--out", work / "o", "--lambda", "1,x,1", ok=False)
    assert proc.returncode == 1
    assert json.loads(proc.stderr)["error"] == "ConfigInvalid"


def test_usage_errors_exit_2():
    assert run("frobnicate", ok=False).returncode == 2
    assert run("sample", ok=False).returncode == 2
    assert run("ablate", "--suite", "nope", "--data", ".", ok=False).returncode == 2


def test_serve_health(work, ckpt):
    proc = subprocess.Popen([CLI, "serve", "--ckpt", str(ckpt), "--data", str(work / "corpus"), "--port", "0"],
                            stdout=subprocess.PIPE, text=True)
    try:
        line = json.loads(proc.stdout.readline())
        base = "http://" + line["listening"]
        with urllib.request.urlopen(base + "/health", timeout=10) as r:
            health = json.loads(r.read())
        assert health["ok"] is True
        req = urllib.request.Request(base + "/session", data=json.dumps({"item": 0}).encode(),
                                     headers={"Content-Type": "application/json"}, method="POST")
        with urllib.request.urlopen(req, timeout=10) as r:
            assert r.status in (200, 201)
    finally:
        proc.terminate()
        proc.wait(timeout=10)

"""End-to-end runs of the ``caan`` command through ``main``."""
import json

import numpy as np
import pytest

from caan.checkpoint import load_checkpoint
from caan.cli import main
from caan.data_io import load_dataset, load_features, save_features
from caan.postprocess import budget_for
from caan.training import TrainingConfig, build_models, predict_scores

MODEL_FLAGS = ["--hidden", "8", "--channels", "4", "4", "8", "8", "8", "--score-hidden", "8"]
FAST = MODEL_FLAGS + ["--lr-generator", "1e-3", "--lr-discriminator", "1e-3", "--patience", "0"]


def synth(out, *extra):
    return main(["synth", "--out", str(out), "--n-videos", "6", "--frames", "32", "40", "--segments", "3", "5",
                 "--d", "8", "--seed", "4", *extra])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert synth(out) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", str(data_dir), "--out", str(out), "--epochs", "1", "--seed", "3", *FAST]) == 0
    return out


def read_scores(path):
    lines = path.read_text().splitlines()
    assert lines[0] == "frame\tscore"
    return np.array([float(line.split("\t")[1]) for line in lines[1:]])


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------
def test_synth_writes_a_loadable_dataset(data_dir, tmp_path):
    ds = load_dataset(data_dir)
    assert len(ds) == 6 and all(32 <= v.n_frames <= 40 for v in ds.videos)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seed"] == 4
    assert synth(tmp_path) == 0
    for f in data_dir.iterdir():
        if f.name != "manifest.json":
            assert (tmp_path / f.name).read_bytes() == f.read_bytes()


def test_synth_rejects_negative_noise(tmp_path, capsys):
    assert synth(tmp_path, "--noise", "-1") == 2
    assert "noise" in capsys.readouterr().err


def test_config_file_is_overridden_by_flags(tmp_path):
    cfg = tmp_path / "spec.json"
    cfg.write_text(json.dumps({"n_videos": 3, "noise": 0.0}))
    out = tmp_path / "d"
    assert main(["synth", "--out", str(out), "--config", str(cfg), "--n-videos", "5", "--d", "4",
                 "--frames", "30", "30", "--segments", "3", "4"]) == 0
    ds = load_dataset(out)
    assert len(ds) == 5
    v = ds.videos[0]
    a, b = v.change_points.shots[0]
    assert (v.features[a:b] == v.features[a]).all()


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------
def test_train_outputs(trained):
    assert {"model.ckpt", "losses.jsonl", "manifest.json"} <= {p.name for p in trained.iterdir()}
    rows = [json.loads(line) for line in (trained / "losses.jsonl").read_text().splitlines()]
    assert len(rows) == 1 and {"epoch", "total", "adv_d", "rec", "spar"} <= set(rows[0])
    _, config, disc = load_checkpoint(trained / "model.ckpt")
    assert config.d == 8 and config.seed == 3 and disc is not None


def test_periodic_checkpoints(data_dir, tmp_path):
    assert main(["train", str(data_dir), "--out", str(tmp_path), "--epochs", "2", "--checkpoint-every", "1",
                 *FAST]) == 0
    assert len(list((tmp_path / "checkpoints").iterdir())) == 2


def test_zero_epochs_saves_the_initialisation(data_dir, tmp_path):
    assert main(["train", str(data_dir), "--out", str(tmp_path), "--epochs", "0", "--seed", "11", *FAST]) == 0
    gen, config, _ = load_checkpoint(tmp_path / "model.ckpt")
    init = build_models(config).generator
    for k, t in init.tensors.items():
        np.testing.assert_array_equal(gen.tensors[k].data, t.data)


def test_seeded_training_is_byte_identical(data_dir, trained, tmp_path):
    assert main(["train", str(data_dir), "--out", str(tmp_path), "--epochs", "1", "--seed", "3", *FAST]) == 0
    assert (tmp_path / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()
    assert (tmp_path / "losses.jsonl").read_bytes() == (trained / "losses.jsonl").read_bytes()


def test_supervised_training_needs_scores(tmp_path, capsys):
    data = tmp_path / "data"
    assert synth(data) == 0
    for ann in data.glob("*.json"):
        if ann.name in ("dataset.json", "manifest.json"):
            continue
        doc = json.loads(ann.read_text())
        doc.pop("gt_scores", None)
        ann.write_text(json.dumps(doc))
    assert main(["train", str(data), "--out", str(tmp_path / "run"), "--supervised", "--epochs", "1", *FAST]) == 2
    assert "error" in capsys.readouterr().err


def test_invalid_training_flag_exits_2(data_dir, tmp_path):
    assert main(["train", str(data_dir), "--out", str(tmp_path), "--alpha", "1.5", *FAST]) == 2


# ---------------------------------------------------------------------------
# summarize
# ---------------------------------------------------------------------------
def test_summarize_matches_in_process_scores(data_dir, trained, tmp_path):
    feat = data_dir / f"{load_dataset(data_dir).ids[0]}.feat"
    assert main(["summarize", str(trained / "model.ckpt"), str(feat), "--out", str(tmp_path)]) == 0
    x = load_features(feat)
    scores = read_scores(tmp_path / "scores.tsv")
    gen, _, _ = load_checkpoint(trained / "model.ckpt")
    np.testing.assert_allclose(scores, predict_scores(x, gen), rtol=1e-6, atol=0)
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert len(scores) == doc["n_frames"] == x.shape[0]
    assert doc["n_selected"] == sum(b - a for a, b in doc["intervals"]) <= budget_for(x.shape[0])
    assert (tmp_path / "manifest.json").exists()


def test_summarize_with_annotation_shots(data_dir, trained, tmp_path):
    vid = load_dataset(data_dir).videos[1]
    args = ["summarize", str(trained / "model.ckpt"), str(data_dir / f"{vid.id}.feat"), "--out", str(tmp_path),
            "--annotations", str(data_dir / f"{vid.id}.json")]
    assert main(args) == 0
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert [tuple(s) for s in doc["shots"]] == vid.change_points.shots


def test_summarize_dimension_mismatch(trained, tmp_path, capsys):
    feat = save_features(tmp_path / "wide.feat", np.zeros((20, 9), dtype=np.float32))
    assert main(["summarize", str(trained / "model.ckpt"), str(feat), "--out", str(tmp_path / "o")]) == 2
    assert "d=8" in capsys.readouterr().err


def test_summarize_corrupt_inputs(trained, tmp_path):
    bad = tmp_path / "bad.feat"
    bad.write_bytes(b"nope")
    assert main(["summarize", str(trained / "model.ckpt"), str(bad), "--out", str(tmp_path / "o")]) == 2
    ckpt = tmp_path / "bad.ckpt"
    ckpt.write_bytes((trained / "model.ckpt").read_bytes()[:-10])
    feat = save_features(tmp_path / "ok.feat", np.zeros((20, 8), dtype=np.float32))
    assert main(["summarize", str(ckpt), str(feat), "--out", str(tmp_path / "o")]) == 2
    assert main(["summarize", str(tmp_path / "missing.ckpt"), str(feat), "--out", str(tmp_path / "o")]) == 2


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def eval_target(tmp_path_factory):
    out = tmp_path_factory.mktemp("target")
    assert main(["synth", "--out", str(out), "--n-videos", "10", "--frames", "32", "32", "--segments", "3", "4",
                 "--d", "8", "--seed", "1", "--name", "tgt"]) == 0
    return out


def run_eval(target, out, *extra):
    return main(["eval", str(target), "--out", str(out), "--epochs", "1", "--seed", "2", *FAST, *extra])


def test_canonical_eval(eval_target, tmp_path):
    assert run_eval(eval_target, tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["meta"]["k"] == 5 and report["meta"]["setting"] == "canonical"
    rows = (tmp_path / "videos.jsonl").read_text().splitlines()
    assert len(rows) == 10 and sorted({json.loads(r)["fold"] for r in rows}) == [0, 1, 2, 3, 4]
    assert (tmp_path / "report.txt").exists() and (tmp_path / "manifest.json").exists()
    again = tmp_path / "again"
    assert run_eval(eval_target, again) == 0
    for name in ("report.json", "videos.jsonl", "report.txt"):
        assert (again / name).read_bytes() == (tmp_path / name).read_bytes()


def test_transfer_eval(eval_target, data_dir, tmp_path):
    assert run_eval(eval_target, tmp_path, "--mode", "transfer", "--aux", str(data_dir)) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["meta"]["k"] == 1 and len(report["videos"]) == 10


def test_transfer_without_auxiliary_data(eval_target, tmp_path):
    assert run_eval(eval_target, tmp_path, "--mode", "transfer") == 2


def test_leaking_auxiliary_data(eval_target, tmp_path):
    assert run_eval(eval_target, tmp_path, "--mode", "augmented", "--aux", str(eval_target)) == 2


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------
def test_verify_list(capsys):
    assert main(["verify", "--list"]) == 0
    names = capsys.readouterr().out.split()
    assert {"gradients", "losses", "knapsack", "kts", "metrics"} <= set(names)


def test_verify_unknown_suite():
    assert main(["verify", "--suite", "nope"]) == 2


def test_verify_suites_pass(capsys):
    assert main(["verify", "--suite", "losses", "--suite", "metrics", "--suite", "knapsack", "--suite", "kts"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "all suites passed" in out


def test_verify_failure_exit_code(monkeypatch):
    from caan import verify

    monkeypatch.setitem(verify.SUITES, "losses", lambda: [verify.Case("broken", False)])
    assert main(["verify", "--suite", "losses"]) == 1


def test_resolved_config_records_flags(trained):
    manifest = json.loads((trained / "manifest.json").read_text())
    cfg = TrainingConfig.from_dict(manifest["config"])
    assert cfg.lr_generator == 1e-3 and cfg.channels == (4, 4, 8, 8, 8) and cfg.epochs == 1
    assert manifest["inputs"][0]["sha256"]

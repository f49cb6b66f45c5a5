import json
import os

import numpy as np
import pytest

from repcycle.camera_render import load_image, load_labels
from repcycle.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny full pipeline: datagen -> pretrain -> train -> artifacts."""
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "data")
    assert main(["datagen", "--out", data, "--samples", "16", "--sequences", "4",
                 "--resolution", "48", "--seed", "0", "--k", "4"]) == 0
    pre = str(root / "pre")
    assert main(["pretrain-b2c", "--dataset", data, "--out", pre,
                 "--steps", "6", "--batch-size", "4", "--seed", "0",
                 "--config", _tiny_cfg(root)]) == 0
    uns = str(root / "uns")
    assert main(["train", "--dataset", data, "--stage", "unsupervised",
                 "--out", uns, "--steps", "2", "--batch-size", "2", "--seed", "0",
                 "--init", os.path.join(pre, "checkpoint"),
                 "--config", _tiny_cfg(root)]) == 0
    return {"root": root, "data": data, "pre": pre, "uns": uns}


def _tiny_cfg(root):
    path = str(root / "tiny.json")
    if not os.path.exists(path):
        with open(path, "w") as f:
            json.dump({"train": {"base_channels": 16, "n_res": 2,
                                 "pretrain_pairs": 8}}, f)
    return path


def test_datagen_layout(workspace):
    data = workspace["data"]
    manifest = json.load(open(os.path.join(data, "manifest.json")))
    assert len(manifest["records"]) == 16
    assert sum(r["supervised_flag"] for r in manifest["records"]) == 4
    for name in ("img_00000.png", "lab_00000.png", "params_00000.json"):
        assert os.path.exists(os.path.join(data, name))
    assert os.path.exists(os.path.join(data, "template", "template.json"))
    assert os.path.exists(os.path.join(data, "config_used.json"))


def test_train_outputs(workspace):
    uns = workspace["uns"]
    assert os.path.exists(os.path.join(uns, "checkpoint", "ckpt.json"))
    assert os.path.exists(os.path.join(uns, "checkpoint", "ckpt.bin"))
    assert os.path.exists(os.path.join(uns, "losses.jsonl"))
    assert os.path.exists(os.path.join(uns, "config_used.json"))
    meta = json.load(open(os.path.join(uns, "checkpoint", "ckpt.json")))["meta"]
    assert meta["stage"] == "unsupervised"
    assert meta["channel_order"] == "rgb+mask"


def test_semi_supervised_requires_init(workspace, tmp_path):
    rc = main(["train", "--dataset", workspace["data"], "--stage", "semi_supervised",
               "--out", str(tmp_path / "semi_noinit"), "--steps", "1",
               "--batch-size", "2", "--config", _tiny_cfg(workspace["root"])])
    assert rc == 2  # config error surfaces as exit code


def test_semi_supervised_runs_from_checkpoint(workspace, tmp_path):
    rc = main(["train", "--dataset", workspace["data"], "--stage", "semi_supervised",
               "--out", str(tmp_path / "semi"), "--steps", "2", "--batch-size", "2",
               "--k", "4", "--seed", "0",
               "--init", os.path.join(workspace["uns"], "checkpoint"),
               "--config", _tiny_cfg(workspace["root"])])
    assert rc == 0


def test_eval_report(workspace, tmp_path):
    out = str(tmp_path / "eval")
    rc = main(["eval", "--dataset", workspace["data"],
               "--checkpoint", os.path.join(workspace["uns"], "checkpoint"),
               "--tag", "uns", "--limit", "3", "--out", out])
    assert rc == 0
    combined = json.load(open(os.path.join(out, "report.json")))
    assert combined["columns"] == ["uns"]
    single = json.load(open(os.path.join(out, "report_uns.json")))
    assert single["sample_count"] == 3
    assert single["best4_rmse"] <= single["rmse"] + 1e-9
    assert single["tr_rmse"] <= single["t_rmse"] + 1e-9

    rc2 = main(["eval", "--dataset", workspace["data"],
                "--checkpoint", os.path.join(workspace["uns"], "checkpoint"),
                "--tag", "uns", "--limit", "3", "--out", str(tmp_path / "eval2")])
    assert rc2 == 0
    again = json.load(open(os.path.join(str(tmp_path / "eval2"), "report_uns.json")))
    assert again == single  # same inputs, same report


def test_eval_rejects_mismatched_checkpoint(workspace, tmp_path):
    other = str(tmp_path / "other_data")
    assert main(["datagen", "--out", other, "--samples", "8", "--sequences", "2",
                 "--resolution", "48", "--seed", "1"]) == 0
    # different dataset seed -> same template; perturb the template instead
    manifest = json.load(open(os.path.join(other, "manifest.json")))
    manifest["config"]["template_seed"] = 3
    json.dump(manifest, open(os.path.join(other, "manifest.json"), "w"))
    import repcycle.body_model as bm
    t = bm.build_toy_template(16, 2, 3)
    t = bm.height_normalize(t)
    bm.save_template(t, os.path.join(other, "template"))
    rc = main(["eval", "--dataset", other,
               "--checkpoint", os.path.join(workspace["uns"], "checkpoint"),
               "--tag", "x", "--limit", "2", "--out", str(tmp_path / "evalx")])
    assert rc == 2


def test_infer_emits_artifacts(workspace, tmp_path):
    out = str(tmp_path / "infer")
    image = os.path.join(workspace["data"], "img_00002.png")
    rc = main(["infer", "--dataset", workspace["data"],
               "--checkpoint", os.path.join(workspace["uns"], "checkpoint"),
               "--image", image, "--out", out])
    assert rc == 0
    for name in ("segments.png", "mask.png", "labels.png", "fit.json", "panel.png"):
        assert os.path.exists(os.path.join(out, name))
    fitted = json.load(open(os.path.join(out, "fit.json")))
    rot = np.asarray(fitted["joint_rotations"])
    assert rot.shape == (16, 3, 3)
    dets = np.linalg.det(rot)
    assert np.abs(dets - 1.0).max() < 1e-4
    panel = load_image(os.path.join(out, "panel.png"))
    assert panel.shape == (48, 48 * 3, 3)  # input | segments | refit

    out2 = str(tmp_path / "infer2")
    assert main(["infer", "--dataset", workspace["data"],
                 "--checkpoint", os.path.join(workspace["uns"], "checkpoint"),
                 "--image", image, "--out", out2]) == 0
    a = load_image(os.path.join(out, "panel.png"))
    b = load_image(os.path.join(out2, "panel.png"))
    assert np.array_equal(a, b)  # deterministic per checkpoint/input


def test_transfer_both_target_modes(workspace, tmp_path):
    data = workspace["data"]
    ckpt = os.path.join(workspace["uns"], "checkpoint")
    rc = main(["transfer", "--dataset", data, "--checkpoint", ckpt,
               "--source", os.path.join(data, "img_00000.png"),
               "--target-image", os.path.join(data, "img_00005.png"),
               "--out", str(tmp_path / "t1")])
    assert rc == 0
    rc = main(["transfer", "--dataset", data, "--checkpoint", ckpt,
               "--source", os.path.join(data, "img_00000.png"),
               "--target-params", os.path.join(data, "params_00003.json"),
               "--out", str(tmp_path / "t2"), "--seed", "5"])
    assert rc == 0
    assert os.path.exists(tmp_path / "t2" / "transfer.png")
    # both targets missing or both given is a usage error
    rc = main(["transfer", "--dataset", data, "--checkpoint", ckpt,
               "--source", os.path.join(data, "img_00000.png"),
               "--out", str(tmp_path / "t3")])
    assert rc == 2


def test_sample_outputs_match_silhouettes(workspace, tmp_path):
    out = str(tmp_path / "samples")
    rc = main(["sample", "--dataset", workspace["data"],
               "--checkpoint", os.path.join(workspace["uns"], "checkpoint"),
               "-n", "2", "--seed", "11", "--out", out])
    assert rc == 0
    for i in range(2):
        img = load_image(os.path.join(out, f"sample_{i:03d}.png"))
        labels = load_labels(os.path.join(out, f"sample_{i:03d}_labels.png"))
        assert img.shape == (48, 48, 3)
        assert labels.max() >= 1  # a person was rendered
    # deterministic per seed
    out2 = str(tmp_path / "samples2")
    assert main(["sample", "--dataset", workspace["data"],
                 "--checkpoint", os.path.join(workspace["uns"], "checkpoint"),
                 "-n", "2", "--seed", "11", "--out", out2]) == 0
    a = load_image(os.path.join(out, "sample_000.png"))
    b = load_image(os.path.join(out2, "sample_000.png"))
    assert np.array_equal(a, b)


def test_resume_continues_to_total_steps(workspace, tmp_path):
    out = str(tmp_path / "resumed")
    rc = main(["train", "--dataset", workspace["data"], "--stage", "unsupervised",
               "--out", out, "--steps", "3", "--batch-size", "2", "--seed", "0",
               "--resume", os.path.join(workspace["uns"], "checkpoint"),
               "--config", _tiny_cfg(workspace["root"])])
    assert rc == 0
    meta = json.load(open(os.path.join(out, "checkpoint", "ckpt.json")))["meta"]
    assert meta["step"] == 3  # resumed from step 2, ran to 3 total


def test_plot_outputs(workspace, tmp_path):
    evaldir = str(tmp_path / "eval_for_plot")
    assert main(["eval", "--dataset", workspace["data"],
                 "--checkpoint", os.path.join(workspace["uns"], "checkpoint"),
                 "--tag", "a", "--limit", "2", "--out", evaldir]) == 0
    out = str(tmp_path / "plots")
    rc = main(["plot", "--losses", os.path.join(workspace["uns"], "losses.jsonl"),
               "--report", os.path.join(evaldir, "report.json"), "--out", out])
    assert rc == 0
    assert os.path.exists(os.path.join(out, "losses.png"))
    assert os.path.exists(os.path.join(out, "supervision_trend.png"))
    assert main(["plot", "--out", str(tmp_path / "plots2")]) == 2

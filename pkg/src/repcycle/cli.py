"""Command-line surface: dataset generation, the three training stages,
evaluation, inference, appearance transfer, random sampling and plots.

Every command is reproducible from (config file, seed, checkpoint); the
effective merged configuration is written next to the outputs, and templates
and palettes are checksum-matched between checkpoints and datasets.
"""

import argparse
import json
import os
import sys

import numpy as np
import torch

from .errors import ConfigError, RepcycleError
from .body_model import ShapeParams, PoseParams, pose_body, pose_body_rotmats
from .camera_render import (composite, rasterize, save_image, load_image,
                            save_domain_b)
from .datagen import (DatagenConfig, generate_dataset, save_dataset, load_dataset,
                      mark_supervised, split_unpaired, sample_pose, BackgroundSource)
from .fitter_b2c import fit, neutralize
from .metrics import evaluate_records, NOMINAL_HEIGHT_MM
from .training import TrainConfig, train, load_checkpoint_nets
from .translator_nets import encode_a2b, decode_b2a, flood_segments, sample_code


def _load_config_file(path):
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _merged_train_config(args, file_cfg):
    cfg = TrainConfig.from_json(file_cfg.get("train", {}))
    for name in ("seed", "steps", "k", "batch_size", "resolution"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    return cfg.validate()


def _write_effective_config(out_dir, payload):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config_used.json"), "w") as f:
        json.dump(payload, f, indent=2)


def _check_compat(meta, template, palette):
    if meta.get("template_checksum") != template.checksum():
        raise ConfigError("checkpoint template checksum does not match the dataset")
    if meta.get("palette") != palette.to_json():
        raise ConfigError("checkpoint palette does not match the dataset")


def _load_checkpoint_against(dataset_dir, checkpoint):
    records, template, camera, palette, prior, dcfg = load_dataset(dataset_dir)
    nets, meta = load_checkpoint_nets(checkpoint)
    _check_compat(meta, template, palette)
    return records, template, camera, palette, prior, dcfg, nets, meta


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_datagen(args):
    file_cfg = _load_config_file(args.config)
    dc = DatagenConfig(**file_cfg.get("datagen", {}))
    if args.seed is not None:
        dc.seed = args.seed
    if args.samples is not None:
        dc.n_samples = args.samples
    if args.sequences is not None:
        dc.n_sequences = args.sequences
    if args.resolution is not None:
        dc.resolution = args.resolution
    records, template, camera, palette, prior = generate_dataset(dc)
    if args.k:
        mark_supervised(records, args.k)
    save_dataset(args.out, records, template, camera, palette, prior, dc)
    _write_effective_config(args.out, {"datagen": dc.__dict__, "k": args.k})
    print(f"wrote {len(records)} samples to {args.out}")


def cmd_pretrain_b2c(args):
    records, template, camera, palette, prior, dcfg = load_dataset(args.dataset)
    cfg = _merged_train_config(args, _load_config_file(args.config))
    cfg.resolution = dcfg.resolution
    cfg.joint_count = template.joint_count
    cfg.shape_count = template.shape_count
    _write_effective_config(args.out, {"train": cfg.to_json(), "stage": "pretrain_b2c"})
    _, info = train(cfg, (records, template, camera, palette, prior),
                    "pretrain_b2c", out_dir=args.out)
    print(f"pretrain loss {info['first_loss']:.4f} -> {info['last_loss']:.4f}; "
          f"checkpoint at {os.path.join(args.out, 'checkpoint')}")


def cmd_train(args):
    records, template, camera, palette, prior, dcfg = load_dataset(args.dataset)
    cfg = _merged_train_config(args, _load_config_file(args.config))
    cfg.resolution = dcfg.resolution
    cfg.joint_count = template.joint_count
    cfg.shape_count = template.shape_count
    if args.stage == "semi_supervised":
        if args.k is not None:
            mark_supervised(records, args.k)
        if not any(r.supervised_flag for r in records):
            print("note: no supervised flags set; running with unsupervised losses only")
    for ckpt in (args.init, args.resume):
        if ckpt:
            _, meta = load_checkpoint_nets(ckpt)
            _check_compat(meta, template, palette)
    eval_records = None
    if cfg.eval_every > 0:
        eval_records = records[:cfg.eval_samples]
    _write_effective_config(args.out, {"train": cfg.to_json(), "stage": args.stage})
    train(cfg, (records, template, camera, palette, prior), args.stage,
          out_dir=args.out, init_checkpoint=args.init,
          resume_checkpoint=args.resume, eval_records=eval_records)
    print(f"stage {args.stage} finished; checkpoint at "
          f"{os.path.join(args.out, 'checkpoint')}")


def cmd_eval(args):
    os.makedirs(args.out, exist_ok=True)
    tags = args.tag or [f"run{i}" for i in range(len(args.checkpoint))]
    if len(tags) != len(args.checkpoint):
        raise ConfigError("need one --tag per --checkpoint")
    table = {}
    for tag, ckpt in zip(tags, args.checkpoint):
        records, template, camera, palette, prior, dcfg, nets, meta = \
            _load_checkpoint_against(args.dataset, ckpt)
        if "gen_a2b" not in nets or "fitter" not in nets:
            raise ConfigError(f"{ckpt} lacks the parser or fitter networks")
        report = evaluate_records(records, nets["gen_a2b"], nets["fitter"],
                                  template, palette,
                                  nominal_height_mm=args.nominal_height,
                                  limit=args.limit)
        report.save(os.path.join(args.out, f"report_{tag}.json"))
        table[tag] = report.to_json()
        print(f"[{tag}] iou14={report.iou_14:.3f} iou4={report.iou_4:.3f} "
              f"iou1={report.iou_1:.3f} rmse={report.rmse:.1f} "
              f"t={report.t_rmse:.1f} tr={report.tr_rmse:.1f} "
              f"best4_t={report.best4_t_rmse:.1f}")
    rows = ["iou_14", "iou_4", "iou_1", "rmse", "t_rmse", "tr_rmse",
            "best4_rmse", "best4_t_rmse", "best4_tr_rmse", "mpjpe"]
    combined = {"columns": tags,
                "rows": {r: {t: table[t][r] for t in tags} for r in rows}}
    with open(os.path.join(args.out, "report.json"), "w") as f:
        json.dump(combined, f, indent=2)
    _write_effective_config(args.out, {"eval": {"dataset": args.dataset,
                                                "checkpoints": args.checkpoint,
                                                "tags": tags, "limit": args.limit}})


def _rerender_fit(out, template, camera, palette):
    mesh = pose_body_rotmats(template, np.asarray(out.beta.beta, dtype=np.float64),
                             out.pose_rotmats(), out.translation)
    labels, _ = rasterize(camera, mesh)
    return composite(labels, palette, np.full(camera.image_size + (3,), 0.5))


def cmd_infer(args):
    records, template, camera, palette, prior, dcfg, nets, meta = \
        _load_checkpoint_against(args.dataset, args.checkpoint)
    image = load_image(args.image)
    h, w = camera.image_size
    if image.shape[:2] != (h, w):
        if not args.allow_resize:
            raise ConfigError(f"image is {image.shape[:2]}, model wants {(h, w)}; "
                              "pass --allow-resize to rescale")
        from PIL import Image as PILImage
        img = PILImage.open(args.image).convert("RGB").resize((w, h))
        image = np.asarray(img, dtype=np.float64) / 255.0

    os.makedirs(args.out, exist_ok=True)
    raw_b, code = encode_a2b(nets["gen_a2b"], image)
    b = flood_segments(raw_b, palette)
    save_domain_b(b, os.path.join(args.out, "segments.png"),
                  os.path.join(args.out, "mask.png"),
                  os.path.join(args.out, "labels.png"))
    out = fit(nets["fitter"], neutralize(b))
    with open(os.path.join(args.out, "fit.json"), "w") as f:
        json.dump({
            "joint_rotations": out.joint_rotations.tolist(),
            "root_rotation": out.root_rotation.tolist(),
            "translation": out.translation.tolist(),
            "beta": np.asarray(out.beta.beta).tolist(),
            "appearance_mean": code.mean.tolist(),
        }, f, indent=1)
    rerender = _rerender_fit(out, template, camera, palette)
    panel = np.concatenate([image, b.rgb, rerender.rgb], axis=1)
    save_image(os.path.join(args.out, "panel.png"), panel)
    _write_effective_config(args.out, {"infer": {"image": args.image,
                                                 "checkpoint": args.checkpoint}})
    print(f"wrote segments/mask/labels/fit/panel to {args.out}")


def cmd_transfer(args):
    records, template, camera, palette, prior, dcfg, nets, meta = \
        _load_checkpoint_against(args.dataset, args.checkpoint)
    if (args.target_image is None) == (args.target_params is None):
        raise ConfigError("pass exactly one of --target-image / --target-params")
    source = load_image(args.source)
    _, code = encode_a2b(nets["gen_a2b"], source)
    z = code.mean
    if args.target_image is not None:
        raw_b, _ = encode_a2b(nets["gen_a2b"], load_image(args.target_image))
        b = flood_segments(raw_b, palette)
    else:
        with open(args.target_params) as f:
            params = json.load(f)
        pose = PoseParams(theta=np.asarray(params["theta"]),
                          translation=np.asarray(params["translation"]))
        beta = ShapeParams(beta=np.asarray(params["beta"]))
        mesh = pose_body(template, beta, pose)
        labels, _ = rasterize(camera, mesh)
        rng = np.random.default_rng(args.seed or 0)
        background = BackgroundSource().sample(rng, camera.image_size)
        b = composite(labels, palette, background)
    result = decode_b2a(nets["gen_b2a"], b, z)
    os.makedirs(args.out, exist_ok=True)
    save_image(os.path.join(args.out, "transfer.png"), result)
    _write_effective_config(args.out, {"transfer": {
        "source": args.source, "target_image": args.target_image,
        "target_params": args.target_params, "checkpoint": args.checkpoint}})
    print(f"wrote {os.path.join(args.out, 'transfer.png')}")


def cmd_sample(args):
    records, template, camera, palette, prior, dcfg, nets, meta = \
        _load_checkpoint_against(args.dataset, args.checkpoint)
    rng = np.random.default_rng(args.seed or 0)
    backgrounds = BackgroundSource()
    os.makedirs(args.out, exist_ok=True)
    z_dim = nets["gen_b2a"].z_dim
    for i in range(args.n):
        pose = sample_pose(prior, rng)
        beta = ShapeParams(beta=np.clip(0.4 * rng.standard_normal(
            template.shape_count), -1.2, 1.2))
        mesh = pose_body(template, beta, pose)
        labels, _ = rasterize(camera, mesh)
        background = backgrounds.sample(rng, camera.image_size)
        b = composite(labels, palette, background)
        z = rng.standard_normal(z_dim)
        image = decode_b2a(nets["gen_b2a"], b, z)
        save_image(os.path.join(args.out, f"sample_{i:03d}.png"), image)
        save_domain_b(b, os.path.join(args.out, f"sample_{i:03d}_segments.png"),
                      labels_path=os.path.join(args.out, f"sample_{i:03d}_labels.png"))
    _write_effective_config(args.out, {"sample": {"n": args.n, "seed": args.seed,
                                                  "checkpoint": args.checkpoint}})
    print(f"wrote {args.n} samples to {args.out}")


def cmd_plot(args):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(args.out, exist_ok=True)
    made = []
    if args.losses:
        rows = []
        with open(args.losses) as f:
            for line in f:
                rows.append(json.loads(line))
        if rows:
            keys = [k for k in rows[0] if k != "step"]
            fig, ax = plt.subplots(figsize=(8, 5))
            for k in keys:
                ax.plot([r["step"] for r in rows], [r.get(k, np.nan) for r in rows],
                        label=k, linewidth=1)
            ax.set_xlabel("step")
            ax.set_ylabel("loss")
            ax.legend(fontsize=7)
            fig.tight_layout()
            path = os.path.join(args.out, "losses.png")
            fig.savefig(path, dpi=120)
            plt.close(fig)
            made.append(path)
    if args.report:
        with open(args.report) as f:
            combined = json.load(f)
        cols = combined["columns"]
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        for key in ("iou_14", "iou_4", "iou_1"):
            axes[0].plot(cols, [combined["rows"][key][c] for c in cols],
                         marker="o", label=key)
        axes[0].set_ylabel("IoU")
        axes[0].legend()
        for key in ("rmse", "t_rmse", "tr_rmse", "best4_t_rmse"):
            axes[1].plot(cols, [combined["rows"][key][c] for c in cols],
                         marker="o", label=key)
        axes[1].set_ylabel("mm")
        axes[1].legend()
        for ax in axes:
            ax.set_xlabel("supervision")
        fig.tight_layout()
        path = os.path.join(args.out, "supervision_trend.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        made.append(path)
    if not made:
        raise ConfigError("nothing to plot: pass --losses and/or --report")
    print("wrote " + ", ".join(made))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="repcycle",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("datagen", help="generate the toy dataset")
    common(sp)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--sequences", type=int)
    sp.add_argument("--resolution", type=int)
    sp.add_argument("--k", type=int, default=0,
                    help="flag every k-th record as supervised")
    sp.set_defaults(func=cmd_datagen)

    sp = sub.add_parser("pretrain-b2c", help="pretrain the 3D fitter on rendered pairs")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.set_defaults(func=cmd_pretrain_b2c, k=None, resolution=None)

    sp = sub.add_parser("train", help="unsupervised or semi-supervised training")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--stage", choices=["unsupervised", "semi_supervised"],
                    default="unsupervised")
    sp.add_argument("--init", help="checkpoint whose network weights warm-start the run")
    sp.add_argument("--resume", help="checkpoint to restore fully (optimizers, RNG, "
                    "step counter); continues until --steps total steps")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.set_defaults(func=cmd_train, resolution=None)

    sp = sub.add_parser("eval", help="full metric report for checkpoints")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--checkpoint", action="append", required=True)
    sp.add_argument("--tag", action="append")
    sp.add_argument("--limit", type=int)
    sp.add_argument("--nominal-height", type=float, default=NOMINAL_HEIGHT_MM)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("infer", help="segments + 3D fit for one image")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--allow-resize", action="store_true")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("transfer", help="appearance transfer to an image or pose")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--source", required=True, help="image providing the appearance")
    sp.add_argument("--target-image")
    sp.add_argument("--target-params", help="JSON with theta/translation/beta")
    sp.set_defaults(func=cmd_transfer)

    sp = sub.add_parser("sample", help="random people from the generative direction")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("-n", type=int, default=4)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("plot", help="loss curves and supervision trend figures")
    common(sp)
    sp.add_argument("--losses", help="losses.jsonl from a training run")
    sp.add_argument("--report", help="combined report.json from eval")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    torch.manual_seed(args.seed if args.seed is not None else 0)
    try:
        args.func(args)
    except RepcycleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

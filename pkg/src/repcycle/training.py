"""Loss terms and the three training regimes: fitter pretraining on rendered
pairs, unsupervised chained cycling, and semi-supervised fine-tuning.

One training step performs one generator update (image cycle plus full chain)
and one discriminator update; the 3D reconstruction gradient is stopped at the
generated image so the image generator is never pushed to paint silhouette
hints.
"""

import json
import math
import os
from dataclasses import dataclass, asdict, field

import numpy as np
import torch

from .errors import (ConfigError, InvalidInputError, TrainingDivergedError,
                     UnpairedAccessError)
from .body_model import pose_body
from .camera_render import composite, rasterize
from .checkpoint import Checkpoint, module_to_arrays, arrays_to_module
from .datagen import BackgroundSource, sample_pose
from .fitter_b2c import (FitterNet, fit, fit_output_from_pose, fit_parameter_loss,
                         pretrain_pairs, targets_to_batch, NEUTRAL_GRAY)
from .translator_nets import (NetBundle, flood_straight_through, to_nchw)


@dataclass
class TrainConfig:
    # loss weights
    adv_a: float = 1.0
    adv_b: float = 1.0
    cyc_aba: float = 10.0
    cyc_bab: float = 10.0
    kl: float = 0.01
    rec3d: float = 1.0
    sup_seg: float = 10.0
    # supervision interval; 0 disables supervised steps
    k: int = 0
    # optimization; lr_pretrain also drives the interleaved supervised step
    lr: float = 2e-4
    lr_pretrain: float = 2e-3
    adam_betas: tuple = (0.5, 0.999)
    batch_size: int = 8
    steps: int = 100
    pretrain_pairs: int = 512
    pretrain_steps: int = 500
    seed: int = 0
    # model / data
    resolution: int = 64
    z_dim: int = 16
    base_channels: int = 32
    n_res: int = 4
    joint_count: int = 16
    shape_count: int = 10
    nominal_height_mm: float = 1700.0
    # bookkeeping
    log_every: int = 10
    eval_every: int = 0
    eval_samples: int = 32

    def validate(self):
        for name in ("adv_a", "adv_b", "cyc_aba", "cyc_bab", "kl", "rec3d", "sup_seg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")
        if self.k < 0:
            raise ConfigError("supervision interval k must be >= 1 (0 = off)")
        return self

    def to_json(self):
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d).validate()


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def loss_cycle(x, x_reconstructed):
    """Mean absolute difference."""
    if isinstance(x, torch.Tensor):
        return (x - x_reconstructed).abs().mean()
    return float(np.abs(np.asarray(x) - np.asarray(x_reconstructed)).mean())


def loss_adversarial(scores, is_real):
    """Least-squares objective: mean (score - target)^2, target 1 real / 0 fake."""
    target = 1.0 if is_real else 0.0
    if isinstance(scores, torch.Tensor):
        return ((scores - target) ** 2).mean()
    return float(((np.asarray(scores) - target) ** 2).mean())


def loss_kl(mean, logvar):
    """KL of N(mean, exp(logvar)) from the standard normal, mean over dims."""
    return (-0.5 * (1.0 + logvar - mean ** 2 - torch.exp(logvar))).mean()


def loss_supervised_seg(pred_raw_b, gt_raw_b):
    """MSE over the full 4-channel map (segments over background plus mask);
    gradient wrt the prediction is 2*(pred - gt)/N with N the element count."""
    return ((pred_raw_b - gt_raw_b) ** 2).mean()


# ---------------------------------------------------------------------------
# training steps
# ---------------------------------------------------------------------------

def step_cycle_aba(batch_a, nets: NetBundle, config: TrainConfig, palette, torch_gen):
    """Image -> representation -> image cycle.

    Both the raw prediction and its flooded version are decoded back, so the
    generator cannot rely on appearance smuggled past the palette snap.
    Returns (losses dict, intermediates dict).
    """
    raw_b, mean, logvar = nets.gen_a2b(batch_a)
    eps = torch.empty_like(mean).normal_(generator=torch_gen)
    z = mean + torch.exp(0.5 * logvar) * eps
    rec_raw = nets.gen_b2a(raw_b, z)
    flooded = flood_straight_through(raw_b, palette)
    rec_flood = nets.gen_b2a(flooded, z)

    l_cyc = loss_cycle(rec_raw, batch_a) + loss_cycle(rec_flood, batch_a)
    l_adv = loss_adversarial(nets.disc_b(raw_b), is_real=True)
    l_kl = loss_kl(mean, logvar)
    total = config.cyc_aba * l_cyc + config.adv_b * l_adv + config.kl * l_kl
    losses = {"cycle_aba": l_cyc, "adv_b_gen": l_adv, "kl": l_kl, "total_aba": total}
    inter = {"raw_b": raw_b, "flooded": flooded, "z": z,
             "rec_raw": rec_raw, "rec_flood": rec_flood}
    return losses, inter


def _neutralize_tensor(b_map):
    rgb, mask = b_map[:, :3], b_map[:, 3:4]
    return mask * rgb + (1.0 - mask) * NEUTRAL_GRAY


def step_chain_cbabc(batch_pose_beta, batch_a_for_z, batch_backgrounds,
                     nets: NetBundle, fitter: FitterNet, config: TrainConfig,
                     template, camera, palette):
    """Render C->B, paint with donor appearance, parse back to B, fit to C.

    The 3D reconstruction loss is cut off at the generated image (detach), so
    its gradients reach the parser and fitter but never the image generator.
    Returns (losses dict, intermediates dict).
    """
    rendered = []
    for (pose, beta), background in zip(batch_pose_beta, batch_backgrounds):
        mesh = pose_body(template, beta, pose)
        labels, _ = rasterize(camera, mesh)
        b_img = composite(labels, palette, background)
        rendered.append(to_nchw(b_img.four_channel))
    b_real = torch.cat(rendered, dim=0)

    # appearance copied from donor images: encoder mean, no sampling
    _, donor_mean, _ = nets.gen_a2b(batch_a_for_z)
    fake_a = nets.gen_b2a(b_real, donor_mean)
    l_adv = loss_adversarial(nets.disc_a(fake_a), is_real=True)

    fake_a_stopped = fake_a.detach()  # gradient stop at the generated image
    raw_b2, _, _ = nets.gen_a2b(fake_a_stopped)
    l_cyc = loss_cycle(raw_b2, b_real)

    flooded2 = flood_straight_through(raw_b2, palette)
    pred = fit(fitter, _neutralize_tensor(flooded2))
    targets = targets_to_batch(
        [fit_output_from_pose(p, b) for p, b in batch_pose_beta])
    l_rec3d = fit_parameter_loss(pred, targets)

    total = config.adv_a * l_adv + config.cyc_bab * l_cyc + config.rec3d * l_rec3d
    losses = {"adv_a_gen": l_adv, "cycle_bab": l_cyc, "rec3d": l_rec3d,
              "total_chain": total}
    inter = {"b_real": b_real, "fake_a": fake_a, "fake_a_stopped": fake_a_stopped,
             "raw_b2": raw_b2, "rec3d": l_rec3d}
    return losses, inter


def step_supervised_seg(batch_records, nets: NetBundle, config: TrainConfig, palette):
    """L2 between the predicted map and the gt composited map for flagged records.

    Reading gt of an unflagged record raises the unpaired-discipline error.
    """
    for r in batch_records:
        if not r.supervised_flag:
            raise UnpairedAccessError(
                f"record {r.index} is not supervision-flagged")
    images, gts = [], []
    for r in batch_records:
        images.append(to_nchw(r.image))
        gt_b = composite(r.gt_labels, palette, r.image)
        gts.append(to_nchw(gt_b.four_channel))
    batch = torch.cat(images, dim=0)
    gt = torch.cat(gts, dim=0)
    raw_b, _, _ = nets.gen_a2b(batch)
    return loss_supervised_seg(raw_b, gt)


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

def _finite(losses):
    return all(bool(torch.isfinite(v).all()) if isinstance(v, torch.Tensor)
               else math.isfinite(v) for v in losses.values())


class Trainer:
    """Single-sequence training loop with deterministic per-step batches.

    Batch indices derive from (seed, stream, step), so a checkpoint resume
    replays exactly the same data order.
    """

    STREAM_A, STREAM_POSE, STREAM_BG, STREAM_DONOR, STREAM_SUP = range(5)

    def __init__(self, config: TrainConfig, template, camera, palette,
                 records_a, poses_b, prior=None, sup_records=None, out_dir=None,
                 eval_records=None):
        config.validate()
        self.config = config
        self.template = template
        self.camera = camera
        self.palette = palette
        self.records_a = records_a
        self.poses_b = poses_b
        self.prior = prior
        self.sup_records = [r for r in (sup_records or []) if r.supervised_flag]
        self.eval_records = eval_records or []
        self.backgrounds = BackgroundSource()
        self.out_dir = out_dir

        self.nets = NetBundle.create(z_dim=config.z_dim, base=config.base_channels,
                                     n_res=config.n_res, seed=config.seed)
        self.fitter = FitterNet(config.joint_count, config.shape_count,
                                base=config.base_channels, n_res=config.n_res,
                                seed=config.seed + 4)
        gen_params = (list(self.nets.gen_a2b.parameters())
                      + list(self.nets.gen_b2a.parameters())
                      + list(self.fitter.parameters()))
        disc_params = (list(self.nets.disc_a.parameters())
                       + list(self.nets.disc_b.parameters()))
        self.opt_gen = torch.optim.Adam(gen_params, lr=config.lr, betas=config.adam_betas)
        self.opt_disc = torch.optim.Adam(disc_params, lr=config.lr, betas=config.adam_betas)
        # the interleaved supervised step keeps its own optimizer so its rare
        # regression gradients are not washed out by adversarial momentum
        self.opt_sup = torch.optim.Adam(self.nets.gen_a2b.parameters(),
                                        lr=config.lr_pretrain, betas=config.adam_betas)
        self.torch_gen = torch.Generator().manual_seed(config.seed)
        self.step = 0
        self._log_file = None
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            self._log_file = open(os.path.join(out_dir, "losses.jsonl"), "a")

    # -- deterministic batch selection -------------------------------------

    def _rng(self, stream, step=None):
        return np.random.default_rng(
            [self.config.seed, stream, self.step if step is None else step])

    def _batch_a(self):
        rng = self._rng(self.STREAM_A)
        idx = rng.choice(len(self.records_a), size=self.config.batch_size,
                         replace=len(self.records_a) < self.config.batch_size)
        return torch.cat([to_nchw(self.records_a[i].image) for i in idx], dim=0)

    def _batch_pose_beta(self):
        rng = self._rng(self.STREAM_POSE)
        if self.poses_b:
            idx = rng.choice(len(self.poses_b), size=self.config.batch_size,
                             replace=len(self.poses_b) < self.config.batch_size)
            return [self.poses_b[i] for i in idx]
        if self.prior is None:
            raise ConfigError("need B-side poses or a prior for chain steps")
        from .body_model import ShapeParams
        out = []
        for _ in range(self.config.batch_size):
            pose = sample_pose(self.prior, rng)
            beta = ShapeParams(beta=np.clip(
                0.4 * rng.standard_normal(self.config.shape_count), -1.2, 1.2))
            out.append((pose, beta))
        return out

    def _batch_backgrounds(self):
        rng = self._rng(self.STREAM_BG)
        return [self.backgrounds.sample(rng, self.camera.image_size)
                for _ in range(self.config.batch_size)]

    def _batch_donor(self):
        rng = self._rng(self.STREAM_DONOR)
        idx = rng.choice(len(self.records_a), size=self.config.batch_size,
                         replace=len(self.records_a) < self.config.batch_size)
        return torch.cat([to_nchw(self.records_a[i].image) for i in idx], dim=0)

    def _batch_supervised(self):
        rng = self._rng(self.STREAM_SUP)
        n = min(self.config.batch_size, len(self.sup_records))
        idx = rng.choice(len(self.sup_records), size=n, replace=False)
        return [self.sup_records[i] for i in idx]

    # -- one full iteration --------------------------------------------------

    def _dump_batch(self, batch_a, losses):
        """Diagnostic dump of the offending batch next to the run outputs."""
        if not self.out_dir:
            return None
        path = os.path.join(self.out_dir, f"diverged_step{self.step}.npz")
        np.savez(path, batch_a=batch_a.numpy(),
                 **{f"loss_{k}": v for k, v in losses.items()})
        return path

    def _supervised_due(self):
        if not self.sup_records or self.config.k < 1:
            return False
        every = max(1, math.ceil(self.config.k / self.config.batch_size))
        return self.step % every == 0

    def train_step(self):
        """One generator update (cycle + chain [+ supervised]) and one
        discriminator update. Returns the scalar loss dict."""
        cfg = self.config
        batch_a = self._batch_a()
        pose_beta = self._batch_pose_beta()
        backgrounds = self._batch_backgrounds()
        donors = self._batch_donor()

        self.opt_gen.zero_grad()
        try:
            aba_losses, aba = step_cycle_aba(batch_a, self.nets, cfg, self.palette,
                                             self.torch_gen)
            chain_losses, chain = step_chain_cbabc(
                pose_beta, donors, backgrounds, self.nets, self.fitter, cfg,
                self.template, self.camera, self.palette)
            gen_total = aba_losses["total_aba"] + chain_losses["total_chain"]
            gen_total.backward()
            self.opt_gen.step()

            # interleaved supervised step: its own update, own optimizer
            sup_loss = None
            if self._supervised_due():
                self.opt_sup.zero_grad()
                sup_loss = step_supervised_seg(self._batch_supervised(), self.nets,
                                               cfg, self.palette)
                (cfg.sup_seg * sup_loss).backward()
                self.opt_sup.step()
        except (InvalidInputError, torch.linalg.LinAlgError) as exc:
            raise TrainingDivergedError(
                f"non-finite activations at step {self.step}: {exc}",
                dump_path=self._dump_batch(batch_a, {})) from exc

        # discriminators: real vs detached fakes
        self.opt_disc.zero_grad()
        d_a = 0.5 * (loss_adversarial(self.nets.disc_a(batch_a), True)
                     + loss_adversarial(self.nets.disc_a(chain["fake_a"].detach()), False))
        d_b = 0.5 * (loss_adversarial(self.nets.disc_b(chain["b_real"]), True)
                     + loss_adversarial(self.nets.disc_b(aba["raw_b"].detach()), False))
        (d_a + d_b).backward()
        self.opt_disc.step()

        losses = {}
        for src in (aba_losses, chain_losses):
            losses.update({k: float(v.detach()) for k, v in src.items()})
        losses["disc_a"] = float(d_a.detach())
        losses["disc_b"] = float(d_b.detach())
        if sup_loss is not None:
            losses["sup_seg"] = float(sup_loss.detach())

        if not _finite(losses):
            raise TrainingDivergedError(
                f"non-finite loss at step {self.step}: {losses}",
                dump_path=self._dump_batch(batch_a, losses))

        if (self.eval_records and self.config.eval_every > 0
                and self.step % self.config.eval_every == 0):
            losses["eval_iou_14"] = self._quick_seg_eval()

        if self._log_file and self.step % self.config.log_every == 0:
            self._log_file.write(json.dumps({"step": self.step, **losses}) + "\n")
            self._log_file.flush()
        self.step += 1
        return losses

    def _quick_seg_eval(self):
        """Segmentation-only IoU snapshot on the held-out eval records."""
        from .metrics import SegAccumulator
        from .translator_nets import encode_a2b, flood_segments
        acc = SegAccumulator()
        for record in self.eval_records[:self.config.eval_samples]:
            record.unlock_for_eval()
            raw_b, _ = encode_a2b(self.nets.gen_a2b, record.image)
            b = flood_segments(raw_b, self.palette)
            acc.update(b.labels, record.gt_labels)
        try:
            return acc.iou(14)
        except Exception:
            return float("nan")

    def run(self, steps=None):
        """Run `steps` more training steps (config.steps by default)."""
        for _ in range(steps if steps is not None else self.config.steps):
            self.train_step()
        return self

    def run_until(self, total_steps):
        """Continue to an absolute step count; no-op if already there."""
        while self.step < total_steps:
            self.train_step()
        return self

    # -- checkpointing --------------------------------------------------------

    def _modules(self):
        mods = dict(self.nets.named())
        mods["fitter"] = self.fitter
        return mods

    def save_checkpoint(self, directory, stage="unsupervised"):
        ck = Checkpoint(meta={
            "stage": stage,
            "step": self.step,
            "config": self.config.to_json(),
            "palette": self.palette.to_json(),
            "template_checksum": self.template.checksum(),
            "hparams": {**self.nets.hparams(), "fitter": self.fitter.hparams},
            "channel_order": "rgb+mask",
        })
        for name, mod in self._modules().items():
            for key, arr in module_to_arrays(mod, f"net:{name}").items():
                ck.put(key, arr)
        for name, opt in (("gen", self.opt_gen), ("disc", self.opt_disc),
                          ("sup", self.opt_sup)):
            _optimizer_to_arrays(ck, opt, f"opt:{name}")
        ck.put("rng:torch", self.torch_gen.get_state().numpy())
        ck.save(directory)
        return ck

    def load_checkpoint(self, directory):
        ck = Checkpoint.load(directory)
        if ck.meta.get("template_checksum") != self.template.checksum():
            raise ConfigError("checkpoint was trained against a different template")
        if ck.meta.get("palette") != self.palette.to_json():
            raise ConfigError("checkpoint palette does not match")
        for name, mod in self._modules().items():
            arrays_to_module(mod, ck.arrays, f"net:{name}")
        for name, opt in (("gen", self.opt_gen), ("disc", self.opt_disc),
                          ("sup", self.opt_sup)):
            _arrays_to_optimizer(ck, opt, f"opt:{name}")
        self.torch_gen.set_state(torch.from_numpy(ck.arrays["rng:torch"].copy()))
        self.step = int(ck.meta["step"])
        return ck

    def load_nets_only(self, directory, names=None):
        """Warm-start network weights (e.g. the pretrained fitter) without
        touching optimizer or RNG state."""
        ck = Checkpoint.load(directory)
        for name, mod in self._modules().items():
            if names is not None and name not in names:
                continue
            if any(k.startswith(f"net:{name}:") for k in ck.arrays):
                arrays_to_module(mod, ck.arrays, f"net:{name}")
        return ck


def _optimizer_to_arrays(ck: Checkpoint, opt, prefix):
    state = opt.state_dict()
    ck.meta.setdefault("optim_groups", {})[prefix] = [
        {k: v for k, v in g.items() if k != "params"} for g in state["param_groups"]]
    for pid, pstate in state["state"].items():
        for key, val in pstate.items():
            arr = val.detach().cpu().numpy() if isinstance(val, torch.Tensor) \
                else np.asarray(val)
            ck.put(f"{prefix}:{pid}:{key}", arr)


def _arrays_to_optimizer(ck: Checkpoint, opt, prefix):
    state = opt.state_dict()
    new_state = {}
    for pid in range(len([p for g in state["param_groups"] for p in g["params"]])):
        entries = {}
        for name, arr in ck.arrays.items():
            head = f"{prefix}:{pid}:"
            if name.startswith(head):
                key = name[len(head):]
                val = torch.from_numpy(arr.copy())
                if key == "step":
                    val = val.reshape(())
                entries[key] = val
        if entries:
            new_state[pid] = entries
    state["state"] = new_state
    opt.load_state_dict(state)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def pretrain_b2c(config: TrainConfig, template, camera, palette, prior,
                 out_dir=None):
    """Stage 1: supervised fitter regression on noise-free rendered pairs."""
    config.validate()
    rng = np.random.default_rng([config.seed, 99])
    pairs = pretrain_pairs(template, prior, camera, config.pretrain_pairs, rng,
                           palette)
    fitter = FitterNet(config.joint_count, config.shape_count,
                       base=config.base_channels, n_res=config.n_res,
                       seed=config.seed + 4)
    opt = torch.optim.Adam(fitter.parameters(), lr=config.lr_pretrain,
                           betas=config.adam_betas)
    images = torch.cat([to_nchw(p.neutral_image) for p in pairs], dim=0)
    targets = [p.target for p in pairs]

    log = []
    first_loss = None
    for step in range(config.pretrain_steps):
        idx = np.random.default_rng([config.seed, 5, step]).choice(
            len(pairs), size=min(config.batch_size * 2, len(pairs)), replace=False)
        batch = images[idx]
        tgt = targets_to_batch([targets[i] for i in idx])
        opt.zero_grad()
        loss = fit_parameter_loss(fit(fitter, batch), tgt)
        loss.backward()
        opt.step()
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(f"pretrain loss diverged at step {step}")
        if first_loss is None:
            first_loss = value
        if step % config.log_every == 0:
            log.append({"step": step, "fit_loss": value})

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "pretrain_losses.jsonl"), "w") as f:
            for row in log:
                f.write(json.dumps(row) + "\n")
        ck = Checkpoint(meta={
            "stage": "pretrain_b2c", "step": config.pretrain_steps,
            "config": config.to_json(), "palette": palette.to_json(),
            "template_checksum": template.checksum(),
            "hparams": {"fitter": fitter.hparams}, "channel_order": "rgb+mask",
        })
        for key, arr in module_to_arrays(fitter, "net:fitter").items():
            ck.put(key, arr)
        ck.save(os.path.join(out_dir, "checkpoint"))
    return fitter, {"first_loss": first_loss, "last_loss": value, "log": log}


def load_checkpoint_nets(directory):
    """Rebuild whatever networks a checkpoint holds, for inference.

    Returns (nets dict, meta). Net hyperparameters come from the checkpoint
    metadata so architecture always matches the stored weights.
    """
    from .fitter_b2c import FitterNet
    from .translator_nets import GenA2B, GenB2A, PatchDiscriminator
    ck = Checkpoint.load(directory)
    hparams = ck.meta.get("hparams", {})
    builders = {
        "gen_a2b": lambda h: GenA2B(z_dim=h["z_dim"], base=h["base"], n_res=h["n_res"]),
        "gen_b2a": lambda h: GenB2A(z_dim=h["z_dim"], base=h["base"], n_res=h["n_res"]),
        "disc_a": lambda h: PatchDiscriminator(h["in_channels"], base=h["base"]),
        "disc_b": lambda h: PatchDiscriminator(h["in_channels"], base=h["base"]),
        "fitter": lambda h: FitterNet(h["joint_count"], h["shape_count"],
                                      base=h["base"], n_res=h["n_res"]),
    }
    nets = {}
    for name, build in builders.items():
        if any(k.startswith(f"net:{name}:") for k in ck.arrays):
            net = build(hparams[name])
            arrays_to_module(net, ck.arrays, f"net:{name}")
            net.eval()
            nets[name] = net
    return nets, ck.meta


def train(config: TrainConfig, dataset, stage, out_dir=None, init_checkpoint=None,
          resume_checkpoint=None, eval_records=None):
    """Run one training stage over a loaded dataset tuple.

    dataset = (records, template, camera, palette, prior); the unsupervised
    stage ignores supervision flags entirely, the semi-supervised stage
    requires an unsupervised init checkpoint. `init_checkpoint` warm-starts
    network weights only; `resume_checkpoint` restores the full trainer state
    (optimizers, RNG, step counter) and continues until config.steps total.
    """
    records, template, camera, palette, prior = dataset
    config.validate()
    if stage not in ("pretrain_b2c", "unsupervised", "semi_supervised"):
        raise ConfigError(f"unknown stage {stage}")
    if stage == "pretrain_b2c":
        return pretrain_b2c(config, template, camera, palette, prior, out_dir)

    from .datagen import split_unpaired
    rng = np.random.default_rng([config.seed, 11])
    set_a, poses_b = split_unpaired(records, rng)
    sup_records = None
    if stage == "semi_supervised":
        if init_checkpoint is None and resume_checkpoint is None:
            raise ConfigError("semi-supervised training needs an unsupervised "
                              "checkpoint for initialization")
        sup_records = [r for r in set_a if r.supervised_flag]
    trainer = Trainer(config, template, camera, palette, set_a, poses_b,
                      prior=prior, sup_records=sup_records, out_dir=out_dir,
                      eval_records=eval_records)
    if resume_checkpoint is not None:
        trainer.load_checkpoint(resume_checkpoint)
        trainer.run_until(config.steps)
    else:
        if init_checkpoint is not None:
            trainer.load_nets_only(init_checkpoint)
        trainer.run(config.steps)
    if out_dir:
        trainer.save_checkpoint(os.path.join(out_dir, "checkpoint"), stage=stage)
    return trainer

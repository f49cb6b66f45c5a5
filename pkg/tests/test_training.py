import copy

import numpy as np
import pytest
import torch

from repcycle.datagen import mark_supervised, split_unpaired
from repcycle.errors import ConfigError, TrainingDivergedError, UnpairedAccessError
from repcycle.fitter_b2c import fit_parameter_loss, fit_output_from_pose, targets_to_batch
from repcycle.training import (
    TrainConfig, Trainer, load_checkpoint_nets, loss_adversarial, loss_cycle,
    loss_kl, loss_supervised_seg, pretrain_b2c, step_chain_cbabc, step_cycle_aba,
    step_supervised_seg, train,
)
from repcycle.translator_nets import to_nchw


@pytest.fixture()
def trainer(tiny_dataset):
    records, template, camera, palette, prior = tiny_dataset
    recs = [copy.copy(r) for r in records]
    cfg = TrainConfig(batch_size=2, steps=2, seed=0, base_channels=16, n_res=2)
    set_a, poses_b = split_unpaired(recs, np.random.default_rng(0))
    return Trainer(cfg, template, camera, palette, set_a, poses_b, prior=prior)


def test_loss_cycle_examples():
    x = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(0))
    assert float(loss_cycle(x, x)) == 0.0
    assert abs(float(loss_cycle(x, x + 0.25)) - 0.25) < 1e-6
    y = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(1))
    brute = float(np.abs(x.numpy() - y.numpy()).mean())
    assert abs(float(loss_cycle(x, y)) - brute) < 1e-7


def test_loss_adversarial_examples():
    ones = torch.ones(3, 1, 4, 4)
    zeros = torch.zeros(3, 1, 4, 4)
    assert float(loss_adversarial(ones, is_real=True)) == 0.0
    assert float(loss_adversarial(zeros, is_real=False)) == 0.0
    assert float(loss_adversarial(zeros, is_real=True)) == 1.0
    s = torch.randn(3, 1, 4, 4, generator=torch.Generator().manual_seed(2))
    assert abs(float(loss_adversarial(s, True)) - float(((s - 1) ** 2).mean())) < 1e-7


def test_loss_supervised_gradient_analytic():
    pred = torch.rand(2, 4, 8, 8, generator=torch.Generator().manual_seed(3),
                      requires_grad=True)
    gt = torch.rand(2, 4, 8, 8, generator=torch.Generator().manual_seed(4))
    loss = loss_supervised_seg(pred, gt)
    loss.backward()
    n = pred.numel()
    expected = 2.0 * (pred.detach() - gt) / n
    assert torch.allclose(pred.grad, expected, atol=1e-9)
    assert float(loss_supervised_seg(gt, gt)) == 0.0
    assert abs(float(loss_supervised_seg(gt + 0.3, gt)) - 0.09) < 1e-6


def test_loss_kl_zero_at_standard_normal():
    assert abs(float(loss_kl(torch.zeros(4, 8), torch.zeros(4, 8)))) < 1e-9
    assert float(loss_kl(torch.ones(4, 8), torch.zeros(4, 8))) > 0


def test_step_cycle_aba_smoke(trainer):
    batch = trainer._batch_a()
    losses, inter = step_cycle_aba(batch, trainer.nets, trainer.config,
                                   trainer.palette, trainer.torch_gen)
    for v in losses.values():
        assert torch.isfinite(v).all()
    assert inter["raw_b"].shape[1] == 4
    # flooded-path reconstruction feeds gradients into the decoder
    trainer.nets.gen_b2a.zero_grad()
    loss_cycle(inter["rec_flood"], batch).backward()
    grads = [p.grad for p in trainer.nets.gen_b2a.parameters() if p.grad is not None]
    assert grads and any(g.abs().max() > 0 for g in grads)


def test_step_chain_gradient_stop(trainer):
    losses, inter = step_chain_cbabc(
        trainer._batch_pose_beta(), trainer._batch_donor(),
        trainer._batch_backgrounds(), trainer.nets, trainer.fitter,
        trainer.config, trainer.template, trainer.camera, trainer.palette)
    for v in losses.values():
        assert torch.isfinite(v).all()
    rec3d = inter["rec3d"]
    # no gradient path from the 3D loss back to the generated image
    g = torch.autograd.grad(rec3d, inter["fake_a"], retain_graph=True,
                            allow_unused=True)[0]
    assert g is None
    g_dec = torch.autograd.grad(rec3d, list(trainer.nets.gen_b2a.parameters()),
                                retain_graph=True, allow_unused=True)
    assert all(x is None for x in g_dec)
    g_fit = torch.autograd.grad(rec3d, list(trainer.fitter.parameters()),
                                retain_graph=True, allow_unused=True)
    assert any(x is not None and x.abs().max() > 0 for x in g_fit)
    g_enc = torch.autograd.grad(rec3d, list(trainer.nets.gen_a2b.parameters()),
                                allow_unused=True)
    assert any(x is not None and x.abs().max() > 0 for x in g_enc)


def test_rec3d_zero_for_perfect_prediction(trainer):
    pose_beta = trainer._batch_pose_beta()
    targets = targets_to_batch([fit_output_from_pose(p, b) for p, b in pose_beta])
    assert float(fit_parameter_loss(targets, targets)) == 0.0


def test_supervised_step_requires_flags(trainer, tiny_dataset):
    records = tiny_dataset[0]
    unflagged = copy.copy(records[0])
    unflagged.supervised_flag = False
    with pytest.raises(UnpairedAccessError):
        step_supervised_seg([unflagged], trainer.nets, trainer.config,
                            trainer.palette)
    flagged = copy.copy(records[0])
    flagged.supervised_flag = True
    loss = step_supervised_seg([flagged], trainer.nets, trainer.config,
                               trainer.palette)
    assert torch.isfinite(loss)


def test_unsupervised_steps_never_touch_gt(trainer):
    # records in the A set are unflagged; a full train step must not read gt
    assert all(not r.supervised_flag for r in trainer.records_a)
    losses = trainer.train_step()
    assert "sup_seg" not in losses


def test_semi_supervised_without_flags_reduces_to_unsupervised(tiny_dataset):
    records, template, camera, palette, prior = tiny_dataset

    def make(k, with_sup):
        recs = [copy.copy(r) for r in records]
        for r in recs:
            r.supervised_flag = False
        cfg = TrainConfig(batch_size=2, steps=1, seed=0, base_channels=16,
                          n_res=2, k=k)
        set_a, poses_b = split_unpaired(recs, np.random.default_rng(0))
        sup = [r for r in set_a if r.supervised_flag] if with_sup else None
        return Trainer(cfg, template, camera, palette, set_a, poses_b,
                       prior=prior, sup_records=sup)

    a = make(k=0, with_sup=False)
    b = make(k=7, with_sup=True)  # k set but zero flagged records
    la = a.train_step()
    lb = b.train_step()
    assert la == lb


def test_checkpoint_resume_bit_exact(trainer, tmp_path):
    trainer.train_step()
    trainer.save_checkpoint(tmp_path / "ck")
    cont = trainer.train_step()

    other = Trainer(trainer.config, trainer.template, trainer.camera,
                    trainer.palette, trainer.records_a, trainer.poses_b,
                    prior=trainer.prior)
    other.load_checkpoint(tmp_path / "ck")
    resumed = other.train_step()
    assert cont == resumed
    for (n1, p1), (_, p2) in zip(trainer.nets.gen_a2b.named_parameters(),
                                 other.nets.gen_a2b.named_parameters()):
        assert torch.equal(p1, p2), n1


def test_checkpoint_guards_template_and_palette(trainer, tmp_path):
    trainer.save_checkpoint(tmp_path / "ck")
    from repcycle.body_model import build_toy_template, height_normalize
    other_template = height_normalize(build_toy_template(16, 2, seed=9))
    other = Trainer(trainer.config, other_template, trainer.camera,
                    trainer.palette, trainer.records_a, trainer.poses_b,
                    prior=trainer.prior)
    with pytest.raises(ConfigError):
        other.load_checkpoint(tmp_path / "ck")


def test_nan_loss_aborts_with_dump(trainer, tmp_path):
    trainer.out_dir = str(tmp_path)
    with torch.no_grad():
        list(trainer.nets.gen_a2b.parameters())[0].fill_(float("nan"))
    with pytest.raises(TrainingDivergedError) as err:
        trainer.train_step()
    assert err.value.dump_path is not None


def test_pretrain_stage_runs_and_saves(tiny_dataset, tmp_path):
    records, template, camera, palette, prior = tiny_dataset
    cfg = TrainConfig(batch_size=4, pretrain_pairs=12, pretrain_steps=8,
                      base_channels=16, n_res=2, seed=0)
    fitter, info = pretrain_b2c(cfg, template, camera, palette, prior,
                                out_dir=str(tmp_path / "pre"))
    assert np.isfinite(info["last_loss"])
    nets, meta = load_checkpoint_nets(tmp_path / "pre" / "checkpoint")
    assert "fitter" in nets and meta["stage"] == "pretrain_b2c"
    x = torch.rand(1, 3, 64, 64, generator=torch.Generator().manual_seed(0))
    assert torch.equal(nets["fitter"](x), fitter(x))


def test_train_entry_point_stages(tiny_dataset, tmp_path):
    records, template, camera, palette, prior = tiny_dataset
    recs = [copy.copy(r) for r in records]
    cfg = TrainConfig(batch_size=2, steps=2, seed=0, base_channels=16, n_res=2,
                      pretrain_pairs=8, pretrain_steps=4)
    dataset = (recs, template, camera, palette, prior)
    with pytest.raises(ConfigError):
        train(cfg, dataset, "nonsense")
    with pytest.raises(ConfigError):
        train(cfg, dataset, "semi_supervised")  # needs an init checkpoint
    trainer = train(cfg, dataset, "unsupervised", out_dir=str(tmp_path / "u"))
    assert trainer.step == 2
    mark_supervised(recs, 4)
    trainer2 = train(TrainConfig(batch_size=2, steps=1, seed=0, base_channels=16,
                                 n_res=2, k=4),
                     dataset, "semi_supervised",
                     init_checkpoint=str(tmp_path / "u" / "checkpoint"))
    assert trainer2.step == 1

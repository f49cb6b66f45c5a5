"""Regression from a part-segment image on a neutral background to 3D body
parameters: per-joint rotation matrices (orthonormalized from raw 3x3
predictions), a global rotation, translation and shape coefficients.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import (DegenerateProjectionError, InvalidInputError,
                     OutOfFrameError, ShapeMismatchError)
from .body_model import (BodyTemplate, PoseParams, ShapeParams, rodrigues,
                         pose_body, pose_body_rotmats)
from .camera_render import Camera, DomainBImage, Palette, composite, rasterize
from .datagen import PosePrior, sample_pose
from .translator_nets import _ResBlock, _init_weights, to_nchw

NEUTRAL_GRAY = 0.5


def neutralize(b: DomainBImage):
    """Replace background pixels with flat gray, keep the part colors."""
    out = np.full_like(b.rgb, NEUTRAL_GRAY)
    fg = b.mask.astype(bool)
    out[fg] = b.rgb[fg]
    return out


def orthonormalize(m):
    """Nearest rotation to a 3x3 matrix (orthogonal polar projection).

    Reflections are corrected to det = +1. Accepts numpy or torch, batched on
    leading dims; differentiable away from rank deficiency.
    """
    is_np = not isinstance(m, torch.Tensor)
    mt = torch.as_tensor(np.asarray(m, dtype=np.float64)) if is_np else m
    if mt.shape[-2:] != (3, 3):
        raise ShapeMismatchError("expected (..., 3, 3)")
    if not bool(torch.isfinite(mt).all()):
        raise InvalidInputError("non-finite matrix cannot be projected")
    u, s, vt = torch.linalg.svd(mt)
    if bool((s[..., 1] < 1e-8).any()):
        raise DegenerateProjectionError("matrix rank < 2, rotation projection undefined")
    det = torch.linalg.det(u @ vt)
    fix = torch.ones_like(s)
    fix[..., 2] = det
    r = u @ torch.diag_embed(fix) @ vt
    return r.numpy() if is_np else r


@dataclass
class FitOutput:
    """Regressed body parameters for one image."""

    joint_rotations: np.ndarray  # (J, 3, 3)
    root_rotation: np.ndarray    # (3, 3) global orientation on top of joint 0
    translation: np.ndarray      # (3,)
    beta: ShapeParams

    def pose_rotmats(self):
        """Per-joint matrices for posing: the root slot composes the global
        rotation with the joint-0 prediction."""
        rots = np.array(self.joint_rotations, dtype=np.float64, copy=True)
        rots[0] = self.root_rotation @ rots[0]
        return rots


@dataclass
class BatchedFit:
    """Tensor variant used inside training steps."""

    joint_rotations: torch.Tensor  # (B, J, 3, 3)
    root_rotation: torch.Tensor    # (B, 3, 3)
    translation: torch.Tensor      # (B, 3)
    beta: torch.Tensor             # (B, S)


class FitterNet(nn.Module):
    """Encoder + spatially-aware regression head; raw output is
    9*J + 9 + 3 + S values.

    The head pools onto a coarse 4x4 grid rather than a global average:
    articulated pose lives in the spatial arrangement of the part colors,
    which a global pool would erase. Rotations are predicted as residuals
    from the identity so the network starts at the rest pose; the depth bias
    starts mid-range.
    """

    GRID = 4

    def __init__(self, joint_count, shape_count=10, base=32, n_res=4, seed=4,
                 init_depth=2.0):
        super().__init__()
        self.joint_count = joint_count
        self.shape_count = shape_count
        self.out_dim = 9 * (joint_count + 1) + 3 + shape_count
        self.hparams = {"joint_count": joint_count, "shape_count": shape_count,
                        "base": base, "n_res": n_res}
        self.encoder = nn.Sequential(
            nn.Conv2d(3, base, 7, 1, 3), nn.InstanceNorm2d(base), nn.ReLU(inplace=True),
            nn.Conv2d(base, base * 2, 3, 2, 1), nn.InstanceNorm2d(base * 2), nn.ReLU(inplace=True),
            nn.Conv2d(base * 2, base * 4, 3, 2, 1), nn.InstanceNorm2d(base * 4), nn.ReLU(inplace=True),
            *[_ResBlock(base * 4) for _ in range(n_res)],
            nn.Conv2d(base * 4, base * 4, 3, 2, 1), nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d((self.GRID, self.GRID)),
        )
        self.head = nn.Linear(base * 4 * self.GRID * self.GRID, self.out_dim)
        _init_weights(self, seed)
        self.head.weight.data.mul_(0.1)
        with torch.no_grad():  # depth starts mid-range, not at the near plane
            self.head.bias.data[9 * (joint_count + 1) + 2] = init_depth

    def forward(self, image):
        feat = self.encoder(image)
        return self.head(feat.flatten(1))


def _split_raw(raw, joint_count, shape_count):
    b = raw.shape[0]
    n_rot = 9 * joint_count
    joints = raw[:, :n_rot].reshape(b, joint_count, 3, 3)
    root = raw[:, n_rot:n_rot + 9].reshape(b, 3, 3)
    trans = raw[:, n_rot + 9:n_rot + 12]
    beta = raw[:, n_rot + 12:]
    return joints, root, trans, beta


def fit(net: FitterNet, neutral_image):
    """Regress body parameters from a neutralized segment image.

    numpy (H, W, 3) -> FitOutput; torch (B, 3, H, W) -> BatchedFit, fully
    differentiable.
    """
    if isinstance(neutral_image, torch.Tensor):
        raw = net(neutral_image)
        joints, root, trans, beta = _split_raw(raw, net.joint_count, net.shape_count)
        eye = torch.eye(3, dtype=raw.dtype)
        return BatchedFit(
            joint_rotations=orthonormalize(eye + joints),
            root_rotation=orthonormalize(eye + root),
            translation=trans, beta=beta)
    neutral_image = np.asarray(neutral_image)
    if neutral_image.ndim != 3 or neutral_image.shape[2] != 3:
        raise ShapeMismatchError(f"expected (H, W, 3), got {neutral_image.shape}")
    with torch.no_grad():
        out = fit(net, to_nchw(neutral_image))
    return FitOutput(
        joint_rotations=out.joint_rotations[0].numpy().astype(np.float64),
        root_rotation=out.root_rotation[0].numpy().astype(np.float64),
        translation=out.translation[0].numpy().astype(np.float64),
        beta=ShapeParams(beta=out.beta[0].numpy().astype(np.float64)))


def fit_output_from_pose(pose: PoseParams, beta: ShapeParams) -> FitOutput:
    """Ground-truth target in the fitter's output convention: global rotation
    in the root slot, identity for joint 0."""
    theta = np.asarray(pose.theta, dtype=np.float64)
    rots = rodrigues(torch.from_numpy(theta)).numpy()
    joint_rotations = rots.copy()
    joint_rotations[0] = np.eye(3)
    return FitOutput(joint_rotations=joint_rotations, root_rotation=rots[0],
                     translation=np.asarray(pose.translation, dtype=np.float64),
                     beta=beta)


def fit_joints(template: BodyTemplate, out: FitOutput):
    """Joint locations of the body posed by a fit."""
    mesh = pose_body_rotmats(template, np.asarray(out.beta.beta, dtype=np.float64),
                             out.pose_rotmats(), out.translation)
    return mesh.joints


@dataclass
class PretrainPair:
    neutral_image: np.ndarray
    target: FitOutput
    pose: PoseParams
    beta: ShapeParams


def pretrain_pairs(template: BodyTemplate, prior: PosePrior, camera: Camera,
                   n, rng, palette: Palette = None, beta_std=0.4):
    """Noise-free (rendered segment image, 3D parameter target) pairs."""
    palette = palette or Palette()
    gray = np.full(camera.image_size + (3,), NEUTRAL_GRAY)
    pairs = []
    while len(pairs) < n:
        pose = sample_pose(prior, rng)
        beta = ShapeParams(beta=np.clip(
            beta_std * rng.standard_normal(template.shape_count), -1.2, 1.2))
        mesh = pose_body(template, beta, pose)
        labels, _ = rasterize(camera, mesh)
        if not (labels > 0).any():
            continue
        b = composite(labels, palette, gray)
        pairs.append(PretrainPair(neutral_image=neutralize(b),
                                  target=fit_output_from_pose(pose, beta),
                                  pose=pose, beta=beta))
    return pairs


def fit_parameter_loss(pred: BatchedFit, target: BatchedFit):
    """Frobenius distance on rotations plus L2 on translation and shape.

    Means over joints/batch keep the total invariant to any joint reordering
    applied consistently to prediction and target.
    """
    rot = ((pred.joint_rotations - target.joint_rotations) ** 2).sum((-1, -2)).mean()
    root = ((pred.root_rotation - target.root_rotation) ** 2).sum((-1, -2)).mean()
    trans = ((pred.translation - target.translation) ** 2).sum(-1).mean()
    beta = ((pred.beta - target.beta) ** 2).sum(-1).mean()
    return rot + root + trans + beta


def targets_to_batch(targets, dtype=torch.float32) -> BatchedFit:
    """Stack FitOutput targets into tensors."""
    return BatchedFit(
        joint_rotations=torch.as_tensor(
            np.stack([t.joint_rotations for t in targets]), dtype=dtype),
        root_rotation=torch.as_tensor(
            np.stack([t.root_rotation for t in targets]), dtype=dtype),
        translation=torch.as_tensor(
            np.stack([t.translation for t in targets]), dtype=dtype),
        beta=torch.as_tensor(
            np.stack([np.asarray(t.beta.beta) for t in targets]), dtype=dtype))

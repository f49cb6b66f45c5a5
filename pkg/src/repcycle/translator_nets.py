"""Image<->factored-representation generator pair, both patch discriminators,
the variational appearance branch and the palette-flooding operation that
stops appearance from hiding inside the segment channels.

Network functions are polymorphic: numpy HWC images run a single example and
come back as numpy; torch NCHW batches stay torch and differentiable.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ShapeMismatchError
from .camera_render import DomainBImage, Palette, labels_from_colors

Z_DIM_DEFAULT = 16
PATCH_STRIDE = 8  # discriminator output is input spatial size / PATCH_STRIDE


@dataclass
class AppearanceCode:
    """Variational residual-appearance encoding."""

    mean: object    # (Z,) or (B, Z)
    logvar: object
    z: object = None


def _init_weights(module, seed):
    g = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            m.weight.data.normal_(0.0, 0.02, generator=g)
            if m.bias is not None:
                m.bias.data.zero_()


class _ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(ch, ch, 3, 1, 1), nn.InstanceNorm2d(ch), nn.ReLU(inplace=True),
            nn.Conv2d(ch, ch, 3, 1, 1), nn.InstanceNorm2d(ch),
        )

    def forward(self, x):
        return x + self.block(x)


LOGIT_BOUND = 6.0
LOGIT_LEAK = 0.1


def leaky_clamp(x, bound=LOGIT_BOUND, leak=LOGIT_LEAK):
    """Clamp with a leaky slope outside the bound; the derivative never
    drops below `leak`, so runaway logits stay recoverable."""
    inner = torch.clamp(x, -bound, bound)
    return inner + leak * (x - inner)


class GenA2B(nn.Module):
    """Image -> 4-channel segments/background map plus appearance (mean, logvar).

    Channel order of the map, fixed and recorded in checkpoints: 0..2 rgb
    (segments over background), 3 soft foreground mask. Head logits pass a
    leaky clamp before the sigmoid: an adversarially suppressed mask channel
    keeps nonvanishing gradients and stays recoverable.
    """

    def __init__(self, z_dim=Z_DIM_DEFAULT, base=32, n_res=4, seed=0):
        super().__init__()
        self.z_dim = z_dim
        self.hparams = {"z_dim": z_dim, "base": base, "n_res": n_res,
                        "channel_order": "rgb+mask"}
        self.encoder = nn.Sequential(
            nn.Conv2d(3, base, 7, 1, 3), nn.InstanceNorm2d(base), nn.ReLU(inplace=True),
            nn.Conv2d(base, base * 2, 3, 2, 1), nn.InstanceNorm2d(base * 2), nn.ReLU(inplace=True),
            nn.Conv2d(base * 2, base * 4, 3, 2, 1), nn.InstanceNorm2d(base * 4), nn.ReLU(inplace=True),
            *[_ResBlock(base * 4) for _ in range(n_res)],
        )
        self.seg_head = nn.Sequential(
            nn.ConvTranspose2d(base * 4, base * 2, 4, 2, 1), nn.InstanceNorm2d(base * 2),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(base * 2, base, 4, 2, 1), nn.InstanceNorm2d(base),
            nn.ReLU(inplace=True),
            nn.Conv2d(base, 4, 7, 1, 3),
        )
        self.code_head = nn.Linear(base * 4, 2 * z_dim)
        _init_weights(self, seed)

    def forward(self, image):
        feat = self.encoder(image)
        raw_b = torch.sigmoid(leaky_clamp(self.seg_head(feat)))
        pooled = feat.mean(dim=(2, 3))
        stats = self.code_head(pooled)
        mean, logvar = stats[:, :self.z_dim], stats[:, self.z_dim:]
        return raw_b, mean, logvar


class GenB2A(nn.Module):
    """Segments + appearance vector -> person image, fused over the background.

    The input background never reaches the synthesis path: the net sees the
    masked segment channels only, and the output outside the (hard) mask is a
    pass-through of the input rgb.
    """

    def __init__(self, z_dim=Z_DIM_DEFAULT, base=32, n_res=4, seed=1):
        super().__init__()
        self.z_dim = z_dim
        self.hparams = {"z_dim": z_dim, "base": base, "n_res": n_res}
        self.encoder = nn.Sequential(
            nn.Conv2d(4, base, 7, 1, 3), nn.InstanceNorm2d(base), nn.ReLU(inplace=True),
            nn.Conv2d(base, base * 2, 3, 2, 1), nn.InstanceNorm2d(base * 2), nn.ReLU(inplace=True),
            nn.Conv2d(base * 2, base * 4, 3, 2, 1), nn.InstanceNorm2d(base * 4), nn.ReLU(inplace=True),
        )
        self.fuse_z = nn.Conv2d(base * 4 + z_dim, base * 4, 1, 1, 0)
        self.body = nn.Sequential(*[_ResBlock(base * 4) for _ in range(n_res)])
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(base * 4, base * 2, 4, 2, 1), nn.InstanceNorm2d(base * 2),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(base * 2, base, 4, 2, 1), nn.InstanceNorm2d(base),
            nn.ReLU(inplace=True),
            nn.Conv2d(base, 3, 7, 1, 3),
        )
        _init_weights(self, seed)

    def forward(self, b_map, z):
        rgb, mask_soft = b_map[:, :3], b_map[:, 3:4]
        # hard mask in the forward pass, gradients flow through the soft mask
        mask_hard = (mask_soft > 0.5).to(b_map.dtype)
        mask = mask_hard + mask_soft - mask_soft.detach()
        segments = torch.cat([rgb * mask, mask], dim=1)
        feat = self.encoder(segments)
        tiled = z[:, :, None, None].expand(-1, -1, feat.shape[2], feat.shape[3])
        feat = self.fuse_z(torch.cat([feat, tiled], dim=1))
        person = torch.sigmoid(self.decoder(self.body(feat)))
        return mask * person + (1.0 - mask) * rgb


class PatchDiscriminator(nn.Module):
    """Least-squares patch critic; output spatial dims = input / PATCH_STRIDE."""

    def __init__(self, in_channels, base=64, seed=2):
        super().__init__()
        self.hparams = {"in_channels": in_channels, "base": base}
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, base, 4, 2, 1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base, base * 2, 4, 2, 1), nn.InstanceNorm2d(base * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base * 2, base * 4, 4, 2, 1), nn.InstanceNorm2d(base * 4),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base * 4, 1, 3, 1, 1),
        )
        _init_weights(self, seed)

    def forward(self, x):
        return self.net(x)


def make_disc_a(seed=2, base=64):
    return PatchDiscriminator(3, base=base, seed=seed)


def make_disc_b(seed=3, base=64):
    return PatchDiscriminator(4, base=base, seed=seed)


# ---------------------------------------------------------------------------
# tensor <-> numpy image plumbing
# ---------------------------------------------------------------------------

def to_nchw(image, dtype=torch.float32):
    """(H, W, C) numpy in [0,1] -> (1, C, H, W) tensor."""
    arr = np.asarray(image, dtype=np.float64)
    return torch.from_numpy(arr).to(dtype).permute(2, 0, 1).unsqueeze(0)


def to_hwc(tensor):
    """(1, C, H, W) tensor -> (H, W, C) float64 numpy."""
    return tensor.squeeze(0).permute(1, 2, 0).detach().cpu().numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# functional surface
# ---------------------------------------------------------------------------

def encode_a2b(gen: GenA2B, image):
    """Predict the 4-channel map and the appearance code for an image.

    numpy (H, W, 3) -> (numpy (H, W, 4), AppearanceCode of numpy vectors);
    torch (B, 3, H, W) -> (tensor (B, 4, H, W), AppearanceCode of tensors).
    """
    if isinstance(image, torch.Tensor):
        raw_b, mean, logvar = gen(image)
        return raw_b, AppearanceCode(mean=mean, logvar=logvar)
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError(f"expected (H, W, 3) image, got {image.shape}")
    with torch.no_grad():
        raw_b, mean, logvar = gen(to_nchw(image))
    return to_hwc(raw_b), AppearanceCode(mean=mean.squeeze(0).numpy().astype(np.float64),
                                         logvar=logvar.squeeze(0).numpy().astype(np.float64))


def sample_code(code: AppearanceCode, rng):
    """Reparameterized sample z = mean + exp(logvar/2) * eps.

    rng is a numpy Generator for numpy codes or a torch.Generator for tensors.
    """
    if isinstance(code.mean, torch.Tensor):
        eps = torch.empty_like(code.mean).normal_(generator=rng)
        return code.mean + torch.exp(0.5 * code.logvar) * eps
    eps = rng.standard_normal(np.shape(code.mean))
    return code.mean + np.exp(0.5 * np.asarray(code.logvar)) * eps


def flood_segments(raw_b, palette: Palette) -> DomainBImage:
    """Threshold the soft mask and snap every foreground pixel to its nearest
    palette color; outside the mask the rgb channels pass through as
    background. Idempotent pixel-for-pixel."""
    raw_b = np.asarray(raw_b, dtype=np.float64)
    if raw_b.ndim != 3 or raw_b.shape[2] != 4:
        raise ShapeMismatchError(f"expected (H, W, 4) map, got {raw_b.shape}")
    rgb, soft_mask = raw_b[..., :3], raw_b[..., 3]
    labels = labels_from_colors(rgb, soft_mask, palette)
    fg = labels >= 1
    out = rgb.copy()
    out[fg] = palette.unit[labels[fg] - 1]
    return DomainBImage(rgb=out, mask=fg.astype(np.uint8), labels=labels)


def flood_straight_through(raw_b, palette: Palette):
    """Training-time flooding on (B, 4, H, W) tensors: the forward value is
    the exact flooded map, the backward pass treats it as identity."""
    with torch.no_grad():
        rgb = raw_b[:, :3]
        mask = (raw_b[:, 3:4] > 0.5).to(raw_b.dtype)
        pal = torch.from_numpy(palette.unit).to(raw_b.dtype)  # (14, 3)
        d2 = ((rgb.unsqueeze(1) - pal[None, :, :, None, None]) ** 2).sum(2)  # (B,14,H,W)
        nearest = d2.argmin(dim=1)  # (B,H,W)
        snapped = pal[nearest].permute(0, 3, 1, 2)  # (B,3,H,W)
        flooded_rgb = mask * snapped + (1.0 - mask) * rgb
        flooded = torch.cat([flooded_rgb, mask], dim=1)
    return raw_b + (flooded - raw_b).detach()


def decode_b2a(gen: GenB2A, b, z):
    """Synthesize the person from (segments, z) and fuse over the background.

    Accepts a DomainBImage plus (Z,) numpy z, or a (B, 4, H, W) tensor plus
    (B, Z) tensor z. Background pixels (mask = 0) pass through exactly.
    """
    if isinstance(b, torch.Tensor):
        if z.shape[-1] != gen.z_dim:
            raise ShapeMismatchError(f"z length {z.shape[-1]} != {gen.z_dim}")
        return gen(b, z)
    if not isinstance(b, DomainBImage):
        raise ShapeMismatchError("expected a DomainBImage or a (B,4,H,W) tensor")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (gen.z_dim,):
        raise ShapeMismatchError(f"z length {z.shape} != ({gen.z_dim},)")
    with torch.no_grad():
        out = gen(to_nchw(b.four_channel), torch.from_numpy(z).float().unsqueeze(0))
    return to_hwc(out)


def discriminate(disc: PatchDiscriminator, x):
    """Patch score map; target 1 for real, 0 for fake (least-squares GAN)."""
    if isinstance(x, torch.Tensor):
        return disc(x)
    x = np.asarray(x)
    with torch.no_grad():
        scores = disc(to_nchw(x))
    return to_hwc(scores)[..., 0]


# ---------------------------------------------------------------------------
# checkpoint plumbing for the net bundle
# ---------------------------------------------------------------------------

@dataclass
class NetBundle:
    gen_a2b: GenA2B
    gen_b2a: GenB2A
    disc_a: PatchDiscriminator
    disc_b: PatchDiscriminator

    @classmethod
    def create(cls, z_dim=Z_DIM_DEFAULT, base=32, n_res=4, seed=0):
        return cls(
            gen_a2b=GenA2B(z_dim=z_dim, base=base, n_res=n_res, seed=seed),
            gen_b2a=GenB2A(z_dim=z_dim, base=base, n_res=n_res, seed=seed + 1),
            disc_a=make_disc_a(seed=seed + 2, base=base * 2),
            disc_b=make_disc_b(seed=seed + 3, base=base * 2),
        )

    def named(self):
        return {"gen_a2b": self.gen_a2b, "gen_b2a": self.gen_b2a,
                "disc_a": self.disc_a, "disc_b": self.disc_b}

    def hparams(self):
        return {name: net.hparams for name, net in self.named().items()}

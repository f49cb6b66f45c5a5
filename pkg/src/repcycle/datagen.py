"""Synthetic toy dataset: pose sampling, person rendering, unpaired splits,
augmentation and the labeled subset used for semi-supervision.

Ground truth lives behind an access guard: unsupervised training code can
never read gt fields of an unflagged record, evaluation unlocks them
explicitly.
"""

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from .errors import OutOfFrameError, SplitError, UnpairedAccessError, ConfigError
from .body_model import (BodyTemplate, PoseParams, ShapeParams, LEFT_RIGHT_PAIRS,
                         build_toy_template, height_normalize, pose_body,
                         canonicalize_pose)
from .camera_render import (Camera, Palette, rasterize, save_image, load_image,
                            load_labels)
from PIL import Image


# ---------------------------------------------------------------------------
# pose prior
# ---------------------------------------------------------------------------

@dataclass
class PosePrior:
    """Gaussian mixture over non-root joint rotations plus uniform ranges for
    the root yaw, image-plane offset and depth."""

    weights: np.ndarray      # (M,)
    means: np.ndarray        # (M, D) with D = (J-1)*3
    variances: np.ndarray    # (M, D) diagonal covariances
    joint_count: int
    yaw_range: tuple = (-np.pi, np.pi)
    tx_range: tuple = (-0.15, 0.15)
    ty_range: tuple = (-0.62, -0.42)
    depth_range: tuple = (4.0 / 3.0, 3.0)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ConfigError("mixture weights must sum to 1")
        if np.any(self.variances < 0):
            raise ConfigError("variances must be non-negative")

    def to_json(self):
        d = asdict(self)
        for k in ("weights", "means", "variances"):
            d[k] = getattr(self, k).tolist()
        for k in ("yaw_range", "tx_range", "ty_range", "depth_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        for k in ("weights", "means", "variances"):
            d[k] = np.asarray(d[k], dtype=np.float64)
        for k in ("yaw_range", "tx_range", "ty_range", "depth_range"):
            d[k] = tuple(d[k])
        return cls(**d)


def sample_pose(prior: PosePrior, rng) -> PoseParams:
    """Draw a pose: mixture component for the body, uniforms for root/placement."""
    comp = int(rng.choice(len(prior.weights), p=prior.weights))
    body = prior.means[comp] + np.sqrt(prior.variances[comp]) * rng.standard_normal(
        prior.means.shape[1])
    theta = np.zeros((prior.joint_count, 3))
    theta[1:] = body.reshape(prior.joint_count - 1, 3)
    theta[0] = [0.0, rng.uniform(*prior.yaw_range), 0.0]
    translation = np.array([
        rng.uniform(*prior.tx_range),
        rng.uniform(*prior.ty_range),
        rng.uniform(*prior.depth_range),
    ])
    return canonicalize_pose(PoseParams(theta=theta, translation=translation))


def _base_poses(joint_count):
    """Plausible toy poses authored over the canonical 16-joint skeleton."""
    def pose(**tweaks):
        th = np.zeros((16, 3))
        for name, vec in tweaks.items():
            th[_LADDER_INDEX[name]] = vec
        return th

    bank = [
        pose(),  # T-pose
        pose(l_shoulder=(0, 0, -1.2), r_shoulder=(0, 0, 1.2)),          # arms down
        pose(l_shoulder=(0, 0, -0.6), r_shoulder=(0, 0, 0.6),
             l_elbow=(0, 0, -0.9), r_elbow=(0, 0, 0.9)),                # elbows bent
        pose(l_shoulder=(0, 1.0, 0), r_shoulder=(0, -1.0, 0)),          # arms forward
        pose(l_shoulder=(0, 0, 0.9), r_shoulder=(0, 0, -0.9)),          # arms raised
        pose(l_hip=(0.5, 0, 0), r_hip=(-0.4, 0, 0),
             l_knee=(0.5, 0, 0), r_knee=(0.3, 0, 0),
             l_shoulder=(0, 0, -1.0), r_shoulder=(0, 0, 1.0)),          # stride
        pose(l_hip=(-1.2, 0, 0), r_hip=(-1.2, 0, 0),
             l_knee=(1.3, 0, 0), r_knee=(1.3, 0, 0)),                   # seated
        pose(spine=(0.3, 0, 0), neck=(0.2, 0, 0),
             l_shoulder=(0, 0, -0.8), r_shoulder=(0, 0, 0.8)),          # lean forward
    ]
    out = []
    for th in bank:
        full = np.zeros((joint_count, 3))
        n = min(joint_count, 16)
        full[:n] = th[:n]
        out.append(full)
    return out


_LADDER_INDEX = {
    "root": 0, "spine": 1, "neck": 2, "head": 3,
    "l_shoulder": 4, "r_shoulder": 5, "l_hip": 6, "r_hip": 7,
    "l_elbow": 8, "r_elbow": 9, "l_knee": 10, "r_knee": 11,
    "l_wrist": 12, "r_wrist": 13, "l_ankle": 14, "r_ankle": 15,
}


def default_pose_bank(joint_count=16, size=200, seed=7):
    """Bank of plausible poses: authored bases plus seeded jitter."""
    rng = np.random.default_rng(seed)
    bases = _base_poses(joint_count)
    bank = []
    for i in range(size):
        th = bases[i % len(bases)].copy()
        th[1:] += 0.08 * rng.standard_normal((joint_count - 1, 3))
        bank.append(th[1:].reshape(-1))
    return np.stack(bank)


def fit_pose_prior(bank, components=8, seed=0, joint_count=16, **ranges) -> PosePrior:
    """Fit a diagonal Gaussian mixture to a pose bank via k-means clustering."""
    rng = np.random.default_rng(seed)
    n, dim = bank.shape
    centers = bank[rng.choice(n, size=components, replace=False)].copy()
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(25):
        d2 = ((bank[:, None, :] - centers[None]) ** 2).sum(-1)
        new_assign = d2.argmin(1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(components):
            sel = bank[assign == c]
            if len(sel):
                centers[c] = sel.mean(0)
    weights = np.array([(assign == c).sum() for c in range(components)], dtype=np.float64)
    weights /= weights.sum()
    variances = np.zeros((components, dim))
    for c in range(components):
        sel = bank[assign == c]
        variances[c] = sel.var(0) + 1e-4 if len(sel) else 1e-4
    return PosePrior(weights=weights, means=centers, variances=variances,
                     joint_count=joint_count, **ranges)


def default_pose_prior(joint_count=16) -> PosePrior:
    return fit_pose_prior(default_pose_bank(joint_count), joint_count=joint_count)


# ---------------------------------------------------------------------------
# backgrounds
# ---------------------------------------------------------------------------

class BackgroundSource:
    """Procedural backgrounds (flat, gradient, smooth noise) or an image folder."""

    def __init__(self, image_dir=None):
        self.images = None
        if image_dir is not None:
            if not os.path.isdir(image_dir):
                raise ConfigError(f"background directory not found: {image_dir}")
            paths = sorted(
                os.path.join(image_dir, f) for f in os.listdir(image_dir)
                if f.lower().endswith((".png", ".jpg", ".jpeg")))
            if not paths:
                raise ConfigError(f"no images found in {image_dir}")
            self.images = paths

    def sample(self, rng, hw):
        h, w = hw
        if self.images is not None:
            path = self.images[int(rng.integers(len(self.images)))]
            img = Image.open(path).convert("RGB").resize((w, h), Image.BILINEAR)
            return np.asarray(img, dtype=np.float64) / 255.0
        kind = int(rng.integers(3))
        if kind == 0:  # flat
            return np.ones((h, w, 3)) * rng.uniform(0.05, 0.95, size=3)
        if kind == 1:  # linear gradient
            c0, c1 = rng.uniform(0, 1, size=(2, 3))
            ang = rng.uniform(0, 2 * np.pi)
            yy, xx = np.mgrid[0:h, 0:w]
            t = (np.cos(ang) * xx / w + np.sin(ang) * yy / h)
            t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
            return c0 + t[..., None] * (c1 - c0)
        # smooth sinusoidal noise
        yy, xx = np.mgrid[0:h, 0:w]
        img = np.zeros((h, w, 3))
        for c in range(3):
            acc = np.zeros((h, w))
            for _ in range(3):
                kx, ky = rng.uniform(-6, 6, size=2)
                acc += rng.uniform(0.2, 1.0) * np.sin(
                    2 * np.pi * (kx * xx / w + ky * yy / h) + rng.uniform(0, 2 * np.pi))
            acc = (acc - acc.min()) / max(acc.max() - acc.min(), 1e-9)
            img[..., c] = 0.1 + 0.8 * acc
        return img


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

class SampleRecord:
    """One dataset example. gt access is gated: reading gt fields of a record
    that is neither supervised-flagged nor eval-unlocked raises."""

    def __init__(self, image, gt_labels, gt_pose, gt_beta, sequence_id,
                 split="", supervised_flag=False, index=-1):
        self.image = image
        self.sequence_id = int(sequence_id)
        self.split = split
        self.supervised_flag = bool(supervised_flag)
        self.index = int(index)
        self._gt_labels = gt_labels
        self._gt_pose = gt_pose
        self._gt_beta = gt_beta
        self._eval_unlocked = False

    def _check_access(self, what):
        if not (self.supervised_flag or self._eval_unlocked):
            raise UnpairedAccessError(
                f"{what} of unsupervised record {self.index} is off limits "
                "outside evaluation")

    @property
    def gt_labels(self):
        self._check_access("gt_labels")
        return self._gt_labels

    @property
    def gt_pose(self):
        self._check_access("gt_pose")
        return self._gt_pose

    @property
    def gt_beta(self):
        self._check_access("gt_beta")
        return self._gt_beta

    def unlock_for_eval(self):
        self._eval_unlocked = True
        return self

    @property
    def has_pose_gt(self):
        return self._gt_pose is not None


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

@dataclass
class DatagenConfig:
    n_samples: int = 2000
    n_sequences: int = 20
    resolution: int = 64
    seed: int = 0
    joint_count: int = 16
    detail: int = 2
    template_seed: int = 0
    beta_std: float = 0.4
    focal_factor: float = 1.2


class ToyDataGenerator:
    """Renders person images over procedural backgrounds with full gt."""

    def __init__(self, template: BodyTemplate, camera: Camera, palette: Palette,
                 backgrounds: BackgroundSource = None):
        self.template = template
        self.camera = camera
        self.palette = palette
        self.backgrounds = backgrounds or BackgroundSource()

    def make_person_image(self, pose: PoseParams, beta: ShapeParams,
                          appearance_seed, background) -> SampleRecord:
        """Textured render of the posed body; gt labels share its rasterization."""
        mesh = pose_body(self.template, beta, pose)
        labels, depth = rasterize(self.camera, mesh)
        if not (labels > 0).any():
            raise OutOfFrameError("body does not intersect the image")
        image = self._texture(labels, depth, appearance_seed, background)
        return SampleRecord(image=image, gt_labels=labels, gt_pose=pose,
                            gt_beta=beta, sequence_id=-1)

    def _texture(self, labels, depth, appearance_seed, background):
        rng = np.random.default_rng(appearance_seed)
        h, w = labels.shape
        base = rng.uniform(0.15, 0.95, size=(15, 3))  # row 0 unused
        stripe_dir = rng.uniform(0, np.pi)
        stripe_freq = rng.uniform(0.15, 0.6)
        stripe_amp = rng.uniform(0.05, 0.25)
        phase = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        stripes = 1.0 + stripe_amp * np.sin(
            stripe_freq * (np.cos(stripe_dir) * xx + np.sin(stripe_dir) * yy) + phase)
        shade = np.ones_like(stripes)
        fg = labels > 0
        if fg.any():  # mild depth shading
            d = depth.copy()
            d[~fg] = np.nan
            lo, hi = np.nanmin(d), np.nanmax(d)
            if hi > lo:
                shade[fg] = 1.05 - 0.25 * (d[fg] - lo) / (hi - lo)
        image = np.asarray(background, dtype=np.float64).copy()
        image[fg] = np.clip(base[labels[fg]] * stripes[fg, None] * shade[fg, None], 0, 1)
        return image


def generate_dataset(config: DatagenConfig, prior: PosePrior = None):
    """Pure function of (config, prior): list of SampleRecords plus components.

    Per-record RNG streams derive from (seed, sequence, frame) so generation
    order or worker count cannot change the result.
    """
    template = height_normalize(build_toy_template(
        config.joint_count, config.detail, config.template_seed))
    camera = Camera.default(config.resolution, config.focal_factor)
    palette = Palette()
    gen = ToyDataGenerator(template, camera, palette)
    prior = prior or default_pose_prior(config.joint_count)

    records = []
    per_seq = config.n_samples // config.n_sequences
    extra = config.n_samples - per_seq * config.n_sequences
    idx = 0
    for seq in range(config.n_sequences):
        seq_rng = np.random.default_rng([config.seed, 1000 + seq])
        beta = ShapeParams(beta=np.clip(
            config.beta_std * seq_rng.standard_normal(template.shape_count), -1.2, 1.2))
        appearance_seed = int(seq_rng.integers(2 ** 31))
        count = per_seq + (1 if seq < extra else 0)
        for frame in range(count):
            rng = np.random.default_rng([config.seed, seq, frame])
            for attempt in range(8):
                pose = sample_pose(prior, rng)
                background = gen.backgrounds.sample(rng, camera.image_size)
                try:
                    rec = gen.make_person_image(pose, beta, appearance_seed, background)
                    break
                except OutOfFrameError:
                    continue
            else:
                raise OutOfFrameError(f"sequence {seq} frame {frame}: body never in frame")
            rec.sequence_id = seq
            rec.index = idx
            records.append(rec)
            idx += 1
    return records, template, camera, palette, prior


# ---------------------------------------------------------------------------
# splits, augmentation, supervision flags
# ---------------------------------------------------------------------------

def split_unpaired(records, rng, fraction=0.5):
    """Partition by sequence id: A-side keeps images, B-side yields (pose, beta).

    No sequence contributes to both sides.
    """
    seq_ids = sorted({r.sequence_id for r in records})
    if len(seq_ids) < 2:
        raise SplitError("need at least 2 sequences to split")
    order = list(rng.permutation(seq_ids))
    n_a = int(round(len(order) * fraction))
    n_a = min(max(n_a, 1), len(order) - 1)
    a_side = set(order[:n_a])
    set_a = [r for r in records if r.sequence_id in a_side]
    set_b_poses = [(r._gt_pose, r._gt_beta) for r in records
                   if r.sequence_id not in a_side]
    for r in set_a:
        r.split = "A"
    return set_a, set_b_poses


def _swap_lr_labels(labels):
    out = labels.copy()
    for a, b in LEFT_RIGHT_PAIRS:
        out[labels == a] = b
        out[labels == b] = a
    return out


def apply_augment(record: SampleRecord, mirror=False, angle=0.0, scale=1.0) -> SampleRecord:
    """Apply one geometric transform to image and gt labels identically.

    Mirroring also swaps left/right part labels. Pose/shape gt is dropped on
    any non-identity transform since it no longer matches the camera.
    """
    image = record.image
    labels = record._gt_labels
    identity = (not mirror) and angle == 0.0 and scale == 1.0

    if mirror:
        image = image[:, ::-1].copy()
        labels = _swap_lr_labels(labels[:, ::-1])
    if angle != 0.0 or scale != 1.0:
        h, w = labels.shape
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        yy, xx = np.mgrid[0:h, 0:w]
        ca, sa = np.cos(-angle), np.sin(-angle)  # inverse map
        sx = (xx - cx) / scale
        sy = (yy - cy) / scale
        ux = np.floor(ca * sx - sa * sy + cx + 0.5).astype(np.int64)
        uy = np.floor(sa * sx + ca * sy + cy + 0.5).astype(np.int64)
        valid = (ux >= 0) & (ux < w) & (uy >= 0) & (uy < h)
        new_img = np.zeros_like(image)
        new_lab = np.zeros_like(labels)
        new_img[valid] = image[uy[valid], ux[valid]]
        new_lab[valid] = labels[uy[valid], ux[valid]]
        image, labels = new_img, new_lab

    out = SampleRecord(
        image=image, gt_labels=labels,
        gt_pose=record._gt_pose if identity else None,
        gt_beta=record._gt_beta if identity else None,
        sequence_id=record.sequence_id, split=record.split,
        supervised_flag=record.supervised_flag, index=record.index)
    out._eval_unlocked = record._eval_unlocked
    return out


def augment(record: SampleRecord, rng) -> SampleRecord:
    """Random rotate/mirror/rescale drawn from rng."""
    mirror = bool(rng.integers(2))
    angle = float(rng.uniform(-np.deg2rad(25), np.deg2rad(25)))
    scale = float(rng.uniform(0.85, 1.15))
    return apply_augment(record, mirror=mirror, angle=angle, scale=scale)


def paste_augment(record: SampleRecord, background, rng=None) -> SampleRecord:
    """Copy the segmented person onto a new background; labels unchanged."""
    labels = record._gt_labels
    fg = labels >= 1
    image = np.asarray(background, dtype=np.float64).copy()
    image[fg] = record.image[fg]
    out = SampleRecord(image=image, gt_labels=labels, gt_pose=record._gt_pose,
                       gt_beta=record._gt_beta, sequence_id=record.sequence_id,
                       split=record.split, supervised_flag=record.supervised_flag,
                       index=record.index)
    out._eval_unlocked = record._eval_unlocked
    return out


def mark_supervised(records, k: int):
    """Flag every k-th record (indices 0, k, 2k, ...) as supervised."""
    if k < 1:
        raise ConfigError("supervision interval k must be >= 1")
    for i, r in enumerate(records):
        if i % k == 0:
            r.supervised_flag = True
    return records


# ---------------------------------------------------------------------------
# dataset directory format
# ---------------------------------------------------------------------------

def save_dataset(directory, records, template, camera, palette, prior,
                 config: DatagenConfig):
    os.makedirs(directory, exist_ok=True)
    from .body_model import save_template
    save_template(template, os.path.join(directory, "template"))
    manifest = {
        "format": "toy-dataset",
        "version": 1,
        "config": asdict(config),
        "camera": {"focal": camera.focal, "principal_point": list(camera.principal_point),
                   "image_size": list(camera.image_size)},
        "palette": palette.to_json(),
        "prior": prior.to_json(),
        "records": [],
    }
    for i, r in enumerate(records):
        img = f"img_{i:05d}.png"
        lab = f"lab_{i:05d}.png"
        par = f"params_{i:05d}.json"
        save_image(os.path.join(directory, img), r.image)
        Image.fromarray(r._gt_labels.astype(np.uint8), mode="L").save(
            os.path.join(directory, lab))
        with open(os.path.join(directory, par), "w") as f:
            json.dump({
                "theta": r._gt_pose.theta.tolist(),
                "translation": r._gt_pose.translation.tolist(),
                "beta": r._gt_beta.beta.tolist(),
            }, f)
        manifest["records"].append({
            "index": i, "image": img, "labels": lab, "params": par,
            "sequence_id": r.sequence_id, "split": r.split,
            "supervised_flag": r.supervised_flag,
        })
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)


def load_dataset(directory):
    from .body_model import load_template
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    template = load_template(os.path.join(directory, "template"))
    cam = manifest["camera"]
    camera = Camera(focal=cam["focal"], principal_point=tuple(cam["principal_point"]),
                    image_size=tuple(cam["image_size"]))
    palette = Palette.from_json(manifest["palette"])
    prior = PosePrior.from_json(manifest["prior"])
    config = DatagenConfig(**manifest["config"])
    records = []
    for meta in manifest["records"]:
        with open(os.path.join(directory, meta["params"])) as f:
            params = json.load(f)
        pose = PoseParams(theta=np.asarray(params["theta"]),
                          translation=np.asarray(params["translation"]))
        beta = ShapeParams(beta=np.asarray(params["beta"]))
        rec = SampleRecord(
            image=load_image(os.path.join(directory, meta["image"])),
            gt_labels=load_labels(os.path.join(directory, meta["labels"])),
            gt_pose=pose, gt_beta=beta, sequence_id=meta["sequence_id"],
            split=meta["split"], supervised_flag=meta["supervised_flag"],
            index=meta["index"])
        records.append(rec)
    return records, template, camera, palette, prior, config

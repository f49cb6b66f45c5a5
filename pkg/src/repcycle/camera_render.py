"""Perspective projection, z-buffer rasterization of part-coded meshes, and
compositing into the 4-channel factored image representation.

Conventions: camera at the origin looking along +z, world y up. A projected
point lands at column u = f*X/Z + cx and row v = cy - f*Y/Z, so +y renders
upward. The rasterizer is a plain z-buffer and is deliberately not
differentiable; nothing in the training chain backpropagates through it.
"""

import colorsys
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .errors import (ClippedGeometryError, ConfigError, GeometryError,
                     InvalidLabelError, ShapeMismatchError)
from .body_model import N_PARTS, PosedMesh

NEAR_PLANE = 1e-3


@dataclass
class Camera:
    focal: float                 # pixels
    principal_point: tuple       # (cx, cy) pixels
    image_size: tuple            # (H, W)

    def __post_init__(self):
        h, w = self.image_size
        cx, cy = self.principal_point
        if self.focal <= 0:
            raise ConfigError("focal length must be positive")
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise ConfigError("principal point must lie inside the image")

    @classmethod
    def default(cls, resolution=64, focal_factor=1.2):
        r = int(resolution)
        return cls(focal=focal_factor * r, principal_point=(r / 2.0, r / 2.0),
                   image_size=(r, r))


def _hsv_wheel_colors(count):
    cols = []
    for i in range(count):
        r, g, b = colorsys.hsv_to_rgb(i / count, 1.0, 1.0)
        cols.append((int(round(r * 255)), int(round(g * 255)), int(round(b * 255))))
    return cols


@dataclass
class Palette:
    """14 well-separated part colors; label 0 (background) has no entry."""

    colors: np.ndarray = field(
        default_factory=lambda: np.array(_hsv_wheel_colors(N_PARTS), dtype=np.uint8))

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=np.uint8)
        if self.colors.shape != (N_PARTS, 3):
            raise ConfigError(f"palette must have {N_PARTS} RGB triples")
        diff = self.colors.astype(np.float64)[:, None] - self.colors.astype(np.float64)[None]
        dist = np.sqrt((diff ** 2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        if dist.min() < 60.0:
            raise ConfigError(f"palette colors too close: min distance {dist.min():.1f} < 60")

    @property
    def unit(self):
        """Colors as unit-interval floats, row p-1 for part p."""
        return self.colors.astype(np.float64) / 255.0

    def to_json(self):
        return self.colors.tolist()

    @classmethod
    def from_json(cls, data):
        return cls(colors=np.array(data, dtype=np.uint8))


@dataclass
class DomainBImage:
    """Composited segments+background, binary mask, and integer part labels."""

    rgb: np.ndarray     # (H, W, 3) floats in [0, 1]
    mask: np.ndarray    # (H, W) uint8 in {0, 1}
    labels: np.ndarray  # (H, W) ints in [0, 14]

    def validate(self, palette: Palette):
        if self.rgb.shape[:2] != self.mask.shape or self.mask.shape != self.labels.shape:
            raise ShapeMismatchError("rgb/mask/labels shapes disagree")
        fg = self.mask.astype(bool)
        if not np.array_equal(fg, self.labels >= 1):
            raise GeometryError("mask and labels disagree on foreground")
        if np.any(self.labels[~fg] != 0):
            raise GeometryError("background pixels must carry label 0")
        if fg.any():
            expected = palette.unit[self.labels[fg] - 1]
            if not np.array_equal(self.rgb[fg], expected):
                raise GeometryError("foreground rgb must equal the palette color")
        return self

    @property
    def four_channel(self):
        """(H, W, 4) float array: rgb plus mask, the network-facing layout."""
        return np.concatenate([self.rgb, self.mask[..., None].astype(np.float64)], axis=2)


def project(camera: Camera, points):
    """Pinhole projection of (N, 3) points to (N, 2) pixel coords (u, v).

    Works on numpy arrays or torch tensors; differentiable for tensors.
    """
    is_tensor = isinstance(points, torch.Tensor)
    z = points[..., 2]
    behind = (z <= NEAR_PLANE)
    if bool(behind.any()):
        raise ClippedGeometryError("points at or behind the camera near plane")
    cx, cy = camera.principal_point
    u = camera.focal * points[..., 0] / z + cx
    v = cy - camera.focal * points[..., 1] / z
    if is_tensor:
        return torch.stack([u, v], dim=-1)
    return np.stack([u, v], axis=-1)


def rasterize(camera: Camera, mesh: PosedMesh):
    """Z-buffer rasterization; returns (labels, depth) maps.

    Uncovered pixels get label 0 and depth +inf. Faces with any vertex at or
    behind the near plane are clipped away; an empty render is valid.
    """
    h, w = camera.image_size
    labels = np.zeros((h, w), dtype=np.int64)
    depth = np.full((h, w), np.inf)

    verts = np.asarray(mesh.vertices, dtype=np.float64)
    z = verts[:, 2]
    cx, cy = camera.principal_point
    safe_z = np.where(z > NEAR_PLANE, z, 1.0)
    u = camera.focal * verts[:, 0] / safe_z + cx
    v = cy - camera.focal * verts[:, 1] / safe_z

    for face, part in zip(mesh.faces, mesh.part_labels):
        i0, i1, i2 = face
        if z[i0] <= NEAR_PLANE or z[i1] <= NEAR_PLANE or z[i2] <= NEAR_PLANE:
            continue
        xs = np.array([u[i0], u[i1], u[i2]])
        ys = np.array([v[i0], v[i1], v[i2]])
        x_min = max(int(np.floor(xs.min() - 0.5)), 0)
        x_max = min(int(np.ceil(xs.max() - 0.5)), w - 1)
        y_min = max(int(np.floor(ys.min() - 0.5)), 0)
        y_max = min(int(np.ceil(ys.max() - 0.5)), h - 1)
        if x_min > x_max or y_min > y_max:
            continue
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if area == 0.0:
            continue

        px = np.arange(x_min, x_max + 1) + 0.5
        py = np.arange(y_min, y_max + 1) + 0.5
        gx, gy = np.meshgrid(px, py)
        w0 = ((xs[1] - gx) * (ys[2] - gy) - (xs[2] - gx) * (ys[1] - gy)) / area
        w1 = ((xs[2] - gx) * (ys[0] - gy) - (xs[0] - gx) * (ys[2] - gy)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        inv_z = w0 / z[i0] + w1 / z[i1] + w2 / z[i2]
        face_depth = 1.0 / inv_z
        rows = gy.astype(np.int64)  # gy holds row + 0.5, truncation recovers the row
        cols = gx.astype(np.int64)
        rr, cc = rows[inside], cols[inside]
        dd = face_depth[inside]
        closer = dd < depth[rr, cc]
        rr, cc, dd = rr[closer], cc[closer], dd[closer]
        depth[rr, cc] = dd
        labels[rr, cc] = part
    return labels, depth


def composite(labels, palette: Palette, background) -> DomainBImage:
    """Overlay palette colors onto the background wherever a part is present."""
    labels = np.asarray(labels)
    background = np.asarray(background, dtype=np.float64)
    if background.shape[:2] != labels.shape:
        raise ShapeMismatchError("background and label map shapes disagree")
    if labels.min() < 0 or labels.max() > N_PARTS:
        raise InvalidLabelError(f"labels outside [0, {N_PARTS}]")
    fg = labels >= 1
    rgb = background.copy()
    rgb[fg] = palette.unit[labels[fg] - 1]
    return DomainBImage(rgb=rgb, mask=fg.astype(np.uint8), labels=labels.astype(np.int64))


def labels_from_colors(rgb, mask, palette: Palette):
    """Map masked pixels to their nearest palette color's part label.

    Ties resolve to the lowest part index; pixels with mask <= 0.5 get 0.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    mask = np.asarray(mask)
    fg = mask > 0.5
    labels = np.zeros(mask.shape, dtype=np.int64)
    if fg.any():
        px = rgb[fg] * 255.0
        d2 = ((px[:, None, :] - palette.colors.astype(np.float64)[None]) ** 2).sum(-1)
        labels[fg] = np.argmin(d2, axis=1) + 1  # argmin takes the first = lowest index
    return labels


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def save_image(path, rgb):
    """Write a unit-interval float (H, W, 3) array as 8-bit RGB."""
    arr = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_image(path):
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def save_domain_b(b: DomainBImage, rgb_path, mask_path=None, labels_path=None):
    save_image(rgb_path, b.rgb)
    if mask_path is not None:
        Image.fromarray((b.mask * 255).astype(np.uint8), mode="L").save(mask_path)
    if labels_path is not None:
        Image.fromarray(b.labels.astype(np.uint8), mode="L").save(labels_path)


def load_labels(path):
    return np.asarray(Image.open(path), dtype=np.int64)

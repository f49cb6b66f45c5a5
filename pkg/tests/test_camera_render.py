import numpy as np
import pytest
import torch

from repcycle.body_model import (PoseParams, PosedMesh, ShapeParams, pose_body)
from repcycle.camera_render import (
    Camera, DomainBImage, Palette, composite, labels_from_colors, load_image,
    load_labels, project, rasterize, save_domain_b, save_image,
)
from repcycle.errors import ClippedGeometryError, ConfigError, InvalidLabelError
from conftest import centered_translation


def test_palette_well_separated(palette):
    c = palette.colors.astype(np.float64)
    d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 60.0
    assert len(np.unique(c, axis=0)) == 14


def test_palette_rejects_close_colors():
    colors = np.tile(np.array([[100, 100, 100]], dtype=np.uint8), (14, 1))
    with pytest.raises(ConfigError):
        Palette(colors=colors)


def test_project_principal_point(camera):
    for depth in (0.5, 2.0, 17.0):
        uv = project(camera, np.array([[0.0, 0.0, depth]]))
        assert np.abs(uv[0] - np.asarray(camera.principal_point)).max() < 1e-12


def test_project_behind_near_plane(camera):
    with pytest.raises(ClippedGeometryError):
        project(camera, np.array([[0.0, 0.0, 1e-5]]))
    with pytest.raises(ClippedGeometryError):
        project(camera, np.array([[0.1, 0.2, -1.0]]))


def test_project_gradient_matches_fd(camera):
    pts = torch.tensor([[0.3, -0.2, 2.1], [-0.5, 0.4, 1.4]],
                       dtype=torch.float64, requires_grad=True)
    out = project(camera, pts)
    w = torch.tensor([[0.7, -0.3], [0.2, 1.1]], dtype=torch.float64)
    (out * w).sum().backward()
    eps = 1e-6
    for r in range(2):
        for c in range(3):
            up = pts.detach().clone()
            dn = pts.detach().clone()
            up[r, c] += eps
            dn[r, c] -= eps
            fd = float(((project(camera, up) - project(camera, dn)) * w).sum()) / (2 * eps)
            an = float(pts.grad[r, c])
            assert abs(an - fd) / max(abs(fd), 1e-9) < 1e-6


def test_depth_doubling_halves_bbox(norm_template, camera):
    def bbox_h(labels):
        rows = np.nonzero(labels.any(axis=1))[0]
        return rows.max() - rows.min() + 1

    heights = {}
    for depth in (2.0, 4.0):
        pose = PoseParams(theta=np.zeros((16, 3)),
                          translation=centered_translation(norm_template, depth))
        labels, _ = rasterize(camera, pose_body(norm_template, ShapeParams.zeros(10), pose))
        heights[depth] = bbox_h(labels)
    ratio = heights[4.0] / heights[2.0]
    assert abs(heights[4.0] - 0.5 * heights[2.0]) <= 1.0  # within one pixel at 64x64
    assert 0.4 < ratio < 0.6


def _two_triangle_mesh(z_front, z_back):
    verts = np.array([
        [-0.4, -0.4, z_front], [0.4, -0.4, z_front], [0.0, 0.5, z_front],
        [-0.4, -0.4, z_back], [0.4, -0.4, z_back], [0.0, 0.5, z_back],
    ])
    return PosedMesh(vertices=verts, joints=np.zeros((1, 3)),
                     faces=np.array([[3, 4, 5], [0, 1, 2]]),
                     part_labels=np.array([2, 1]))


def test_rasterize_two_triangles_front_wins(camera):
    # back triangle drawn first, front (label 1) must win everywhere they overlap
    mesh = _two_triangle_mesh(z_front=1.5, z_back=3.0)
    labels, depth = rasterize(camera, mesh)
    covered = labels > 0
    assert covered.any()
    back_only = _two_triangle_mesh(z_front=1e9, z_back=3.0)  # push label-1 tri away
    labels_back, _ = rasterize(camera, back_only)
    overlap = covered & (labels_back == 2)
    assert overlap.any()
    assert np.all(labels[overlap] == 1)
    assert np.all(depth[labels == 1] < 1.5 + 1e-6)
    assert np.all(np.isinf(depth[~covered]))


def test_rasterize_empty_and_deterministic(norm_template, camera):
    off = PoseParams(theta=np.zeros((16, 3)),
                     translation=np.array([50.0, 0.0, 2.0]))  # far outside the view
    labels, depth = rasterize(camera, pose_body(norm_template, ShapeParams.zeros(10), off))
    assert not labels.any()
    assert np.isinf(depth).all()

    pose = PoseParams(theta=np.zeros((16, 3)),
                      translation=centered_translation(norm_template))
    mesh = pose_body(norm_template, ShapeParams.zeros(10), pose)
    l1, d1 = rasterize(camera, mesh)
    l2, d2 = rasterize(camera, mesh)
    assert np.array_equal(l1, l2) and np.array_equal(d1, d2)


def test_composite_trivial_cases(palette):
    bg = np.random.default_rng(0).uniform(size=(8, 8, 3))
    b = composite(np.zeros((8, 8), dtype=int), palette, bg)
    assert np.array_equal(b.rgb, bg)
    assert not b.mask.any()
    b1 = composite(np.ones((8, 8), dtype=int), palette, bg)
    assert np.all(b1.mask == 1)
    assert np.array_equal(b1.rgb, np.broadcast_to(palette.unit[0], (8, 8, 3)))


def test_composite_pixelwise_oracle(palette):
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 15, size=(3, 3))
    bg = rng.uniform(size=(3, 3, 3))
    b = composite(labels, palette, bg)
    for i in range(3):
        for j in range(3):
            expected = palette.unit[labels[i, j] - 1] if labels[i, j] >= 1 else bg[i, j]
            assert np.array_equal(b.rgb[i, j], expected)
            assert b.mask[i, j] == (1 if labels[i, j] >= 1 else 0)
    b.validate(palette)


def test_composite_rejects_bad_labels(palette):
    bg = np.zeros((2, 2, 3))
    with pytest.raises(InvalidLabelError):
        composite(np.array([[0, 15], [0, 0]]), palette, bg)
    with pytest.raises(InvalidLabelError):
        composite(np.array([[0, -1], [0, 0]]), palette, bg)


def test_labels_round_trip(palette):
    rng = np.random.default_rng(2)
    for _ in range(10):
        labels = rng.integers(0, 15, size=(16, 16))
        bg = rng.uniform(size=(16, 16, 3))
        b = composite(labels, palette, bg)
        assert np.array_equal(labels_from_colors(b.rgb, b.mask, palette), labels)


def test_labels_tie_goes_to_lowest(palette):
    # midpoint of two palette colors is exactly equidistant; find a pair for
    # which that midpoint is not closer to any third color
    unit = palette.unit
    found = None
    for a in range(14):
        for b in range(a + 1, 14):
            mid = (unit[a] + unit[b]) / 2.0
            d = ((mid - unit) ** 2).sum(-1)
            winners = np.isclose(d, d.min(), rtol=0, atol=1e-15)
            if winners[a] and winners[b] and winners.sum() == 2:
                found = (a, b, mid)
                break
        if found:
            break
    assert found is not None
    a, b, mid = found
    rgb = np.broadcast_to(mid, (1, 1, 3))
    lab = labels_from_colors(rgb, np.ones((1, 1)), palette)
    assert lab[0, 0] == a + 1  # lowest part index wins


def test_labels_noise_robust(palette):
    gap = np.inf
    c = palette.colors.astype(np.float64)
    for i in range(14):
        for j in range(i + 1, 14):
            gap = min(gap, np.linalg.norm(c[i] - c[j]))
    rng = np.random.default_rng(3)
    labels = rng.integers(1, 15, size=(12, 12))
    clean = palette.unit[labels - 1]
    noise = rng.uniform(-1, 1, size=clean.shape) * (0.45 * gap / 2 / 255.0)
    noisy = np.clip(clean + noise, 0, 1)
    assert np.array_equal(labels_from_colors(noisy, np.ones((12, 12)), palette), labels)


def test_labels_masked_out(palette):
    rgb = np.broadcast_to(palette.unit[3], (4, 4, 3))
    mask = np.zeros((4, 4))
    mask[0, 0] = 1.0
    lab = labels_from_colors(rgb, mask, palette)
    assert lab[0, 0] == 4
    assert (lab.sum() == 4)


def _convex_capsule_mesh(depth):
    from repcycle.body_model import _capsule_mesh
    verts, faces, _, _ = _capsule_mesh(
        np.array([0.0, -0.3, 0.0]), np.array([0.0, 0.3, 0.0]), 0.2, 12, 3, 2)
    verts = verts + np.array([0.0, 0.0, depth])
    return PosedMesh(vertices=verts, joints=np.zeros((1, 3)),
                     faces=faces, part_labels=np.full(len(faces), 1))


def test_occlusion_monotonic_convex_centered(camera):
    # centered convex solid: silhouette is star-shaped about the principal
    # point, so nearer placement covers a pixel superset
    masks = {}
    for depth in (3.0, 2.2, 1.5):
        labels, _ = rasterize(camera, _convex_capsule_mesh(depth))
        masks[depth] = labels > 0
    assert masks[3.0].sum() > 0
    assert np.all(masks[2.2] | ~masks[3.0])   # 3.0 mask subset of 2.2 mask
    assert np.all(masks[1.5] | ~masks[2.2])


def test_occlusion_area_monotonic_full_body(norm_template, camera):
    counts = []
    for depth in (3.0, 2.4, 1.9, 1.5):
        pose = PoseParams(theta=np.zeros((16, 3)),
                          translation=centered_translation(norm_template, depth))
        labels, _ = rasterize(camera, pose_body(norm_template, ShapeParams.zeros(10), pose))
        counts.append(int((labels > 0).sum()))
    assert all(b >= a for a, b in zip(counts, counts[1:]))


def test_rendered_sample_satisfies_invariants(norm_template, camera, palette):
    pose = PoseParams(theta=np.zeros((16, 3)),
                      translation=centered_translation(norm_template))
    labels, _ = rasterize(camera, pose_body(norm_template, ShapeParams.zeros(10), pose))
    bg = np.random.default_rng(4).uniform(size=(64, 64, 3))
    composite(labels, palette, bg).validate(palette)


def test_png_round_trip(tmp_path, palette):
    rng = np.random.default_rng(5)
    labels = rng.integers(0, 15, size=(16, 16))
    bg = rng.uniform(size=(16, 16, 3))
    b = composite(labels, palette, bg)
    save_domain_b(b, tmp_path / "rgb.png", tmp_path / "mask.png", tmp_path / "lab.png")
    rgb = load_image(tmp_path / "rgb.png")
    lab = load_labels(tmp_path / "lab.png")
    assert np.array_equal(lab, labels)
    # palette pixels are 8-bit exact; background suffers only quantization
    fg = b.mask.astype(bool)
    assert np.array_equal(rgb[fg], b.rgb[fg])
    assert np.abs(rgb - b.rgb).max() <= 0.5 / 255.0 + 1e-12

    arbitrary = rng.uniform(size=(8, 8, 3))
    save_image(tmp_path / "img.png", arbitrary)
    back = load_image(tmp_path / "img.png")
    assert np.abs(back - arbitrary).max() <= 0.5 / 255.0 + 1e-12

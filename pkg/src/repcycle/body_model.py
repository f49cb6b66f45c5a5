"""Parametric articulated toy body: shape blending, forward kinematics, skinning.

The template is a capsule-per-bone body with 14 part regions and a 10-component
shape basis. All posing math runs through torch so callers can differentiate
with respect to pose, shape and translation by passing tensors; numpy inputs
come back as numpy.
"""

import json
import hashlib
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .errors import ConfigError, GeometryError, InvalidInputError, ShapeMismatchError

N_PARTS = 14

PART_NAMES = [
    "head", "torso",
    "left_upper_arm", "right_upper_arm",
    "left_lower_arm", "right_lower_arm",
    "left_hand", "right_hand",
    "left_upper_leg", "right_upper_leg",
    "left_lower_leg", "right_lower_leg",
    "left_foot", "right_foot",
]

# label pairs swapped when an image is mirrored
LEFT_RIGHT_PAIRS = [(3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14)]

# 4-way grouping used by the coarse segmentation metric
PART_GROUPS_4 = {
    "head": (1,),
    "upper_body": (2,),
    "arms": (3, 4, 5, 6, 7, 8),
    "legs": (9, 10, 11, 12, 13, 14),
}

SMALL_ANGLE = 1e-8


@dataclass
class ShapeParams:
    """PCA-style shape coefficients (length must match the template basis)."""

    beta: np.ndarray

    @classmethod
    def zeros(cls, count=10):
        return cls(beta=np.zeros(count))


@dataclass
class PoseParams:
    """Axis-angle rotation per joint (joint 0 = root) plus a global translation."""

    theta: np.ndarray       # (J, 3) radians
    translation: np.ndarray  # (3,) normalized-height units

    @classmethod
    def zeros(cls, joint_count):
        return cls(theta=np.zeros((joint_count, 3)), translation=np.zeros(3))


@dataclass
class BodyTemplate:
    vertices: np.ndarray      # (V, 3) rest pose
    faces: np.ndarray         # (F, 3) vertex indices
    joint_tree: np.ndarray    # (J,) parent index, root = -1
    rest_joints: np.ndarray   # (J, 3)
    skin_weights: np.ndarray  # (V, J) rows sum to 1
    shape_basis: np.ndarray   # (S, V, 3) per-vertex offsets
    part_labels: np.ndarray   # (F,) ints in [1, 14]
    joint_names: list = field(default_factory=list)
    part_names: list = field(default_factory=lambda: list(PART_NAMES))

    @property
    def joint_count(self):
        return len(self.joint_tree)

    @property
    def shape_count(self):
        return self.shape_basis.shape[0]

    def validate(self):
        w = self.skin_weights
        if np.any(w < -1e-12):
            raise GeometryError("skin weights must be non-negative")
        if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-9:
            raise GeometryError("skin weight rows must sum to 1")
        tree = self.joint_tree
        if np.count_nonzero(tree < 0) != 1 or tree[0] != -1:
            raise GeometryError("joint tree needs exactly one root at index 0")
        if np.any(tree[1:] >= np.arange(1, len(tree))):
            raise GeometryError("parents must precede children")
        present = set(np.unique(self.part_labels).tolist())
        if not set(range(1, N_PARTS + 1)) <= present:
            raise GeometryError("every part label in [1,14] must occur on a face")
        return self

    def checksum(self):
        """Stable hash of the geometry, used to pair checkpoints with templates."""
        h = hashlib.sha256()
        for a in (self.vertices, self.faces, self.joint_tree, self.rest_joints,
                  self.skin_weights, self.shape_basis, self.part_labels):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]


@dataclass
class PosedMesh:
    vertices: np.ndarray  # (V, 3), torch.Tensor when posed from tensors
    joints: np.ndarray    # (J, 3)
    faces: np.ndarray
    part_labels: np.ndarray


def rodrigues(rotvec):
    """Axis-angle (..., 3) -> rotation matrices (..., 3, 3), safe at theta = 0.

    Below SMALL_ANGLE the sin/cos coefficients switch to their series so the
    map stays differentiable through zero.
    """
    rotvec = torch.as_tensor(rotvec)
    sq = (rotvec ** 2).sum(-1)
    small = sq < SMALL_ANGLE ** 2
    sq_safe = torch.where(small, torch.ones_like(sq), sq)
    theta = torch.sqrt(sq_safe)
    a1 = torch.where(small, 1.0 - sq / 6.0, torch.sin(theta) / theta)
    a2 = torch.where(small, 0.5 - sq / 24.0, (1.0 - torch.cos(theta)) / sq_safe)
    x, y, z = rotvec[..., 0], rotvec[..., 1], rotvec[..., 2]
    zero = torch.zeros_like(x)
    k = torch.stack([
        torch.stack([zero, -z, y], -1),
        torch.stack([z, zero, -x], -1),
        torch.stack([-y, x, zero], -1),
    ], -2)
    eye = torch.eye(3, dtype=rotvec.dtype, device=rotvec.device)
    return eye + a1[..., None, None] * k + a2[..., None, None] * (k @ k)


def _se3(rot, trans):
    out = torch.zeros(rot.shape[:-2] + (4, 4), dtype=rot.dtype, device=rot.device)
    out[..., :3, :3] = rot
    out[..., :3, 3] = trans
    out[..., 3, 3] = 1.0
    return out


def forward_kinematics(rest_joints, joint_tree, theta):
    """Per-joint world transforms and posed joint centers.

    Returns skinning transforms A (J, 4, 4) that map rest-space points to posed
    space (rest joint j maps to its posed position), plus posed joints (J, 3).
    """
    return forward_kinematics_rotmats(rest_joints, joint_tree, rodrigues(theta))


def forward_kinematics_rotmats(rest_joints, joint_tree, rots):
    """forward_kinematics with per-joint rotation matrices (J, 3, 3)."""
    j_count = rest_joints.shape[0]
    world = [None] * j_count
    world[0] = _se3(rots[0], rest_joints[0])
    for j in range(1, j_count):
        parent = int(joint_tree[j])
        local = _se3(rots[j], rest_joints[j] - rest_joints[parent])
        world[j] = world[parent] @ local
    world = torch.stack(world)
    posed_joints = world[:, :3, 3]
    # shift so each transform maps the rest joint onto the posed joint
    offset = torch.einsum("jab,jb->ja", world[:, :3, :3], rest_joints)
    skin = world.clone()
    skin[:, :3, 3] = posed_joints - offset
    return skin, posed_joints


def pose_body(template: BodyTemplate, beta: ShapeParams, pose: PoseParams) -> PosedMesh:
    """Shape-blend, pose via LBS, then translate.

    Differentiable end to end: pass torch tensors in `beta`/`pose` and the
    returned mesh holds tensors; numpy inputs return numpy.
    """
    tensor_in = any(isinstance(x, torch.Tensor)
                    for x in (beta.beta, pose.theta, pose.translation))
    dtype = torch.float64
    if tensor_in:
        for x in (pose.theta, pose.translation, beta.beta):
            if isinstance(x, torch.Tensor):
                dtype = x.dtype
                break

    b = torch.as_tensor(beta.beta, dtype=dtype)
    theta = torch.as_tensor(pose.theta, dtype=dtype)
    trans = torch.as_tensor(pose.translation, dtype=dtype)

    if theta.shape != (template.joint_count, 3):
        raise ShapeMismatchError(
            f"theta shape {tuple(theta.shape)} != ({template.joint_count}, 3)")
    if b.shape != (template.shape_count,):
        raise ShapeMismatchError(
            f"beta length {tuple(b.shape)} != ({template.shape_count},)")
    if trans.shape != (3,):
        raise ShapeMismatchError("translation must be a 3-vector")
    for x in (b, theta, trans):
        if not bool(torch.isfinite(x).all()):
            raise InvalidInputError("pose/shape inputs contain NaN or inf")

    rest_v = torch.as_tensor(template.vertices, dtype=dtype)
    basis = torch.as_tensor(template.shape_basis, dtype=dtype)
    rest_j = torch.as_tensor(template.rest_joints, dtype=dtype)
    weights = torch.as_tensor(template.skin_weights, dtype=dtype)

    v_shaped = rest_v + torch.einsum("s,svc->vc", b, basis)
    skin, posed_joints = forward_kinematics(rest_j, template.joint_tree, theta)
    per_vertex = torch.einsum("vj,jab->vab", weights, skin)
    ones = torch.ones(v_shaped.shape[0], 1, dtype=dtype)
    vh = torch.cat([v_shaped, ones], dim=1)
    verts = torch.einsum("vab,vb->va", per_vertex, vh)[:, :3] + trans
    joints = posed_joints + trans

    if not tensor_in:
        verts = verts.numpy()
        joints = joints.numpy()
    return PosedMesh(vertices=verts, joints=joints,
                     faces=template.faces, part_labels=template.part_labels)


def pose_body_rotmats(template: BodyTemplate, beta_vec, rotmats, translation) -> PosedMesh:
    """pose_body with per-joint rotation matrices instead of axis-angles.

    Used to pose from regressed rotations; same shape blending, skinning and
    translation semantics. Tensor inputs stay tensors.
    """
    tensor_in = any(isinstance(x, torch.Tensor) for x in (beta_vec, rotmats, translation))
    dtype = rotmats.dtype if isinstance(rotmats, torch.Tensor) else torch.float64
    b = torch.as_tensor(beta_vec, dtype=dtype)
    rots = torch.as_tensor(rotmats, dtype=dtype)
    trans = torch.as_tensor(translation, dtype=dtype)
    if rots.shape != (template.joint_count, 3, 3):
        raise ShapeMismatchError(
            f"rotmats shape {tuple(rots.shape)} != ({template.joint_count}, 3, 3)")

    rest_v = torch.as_tensor(template.vertices, dtype=dtype)
    basis = torch.as_tensor(template.shape_basis, dtype=dtype)
    rest_j = torch.as_tensor(template.rest_joints, dtype=dtype)
    weights = torch.as_tensor(template.skin_weights, dtype=dtype)

    v_shaped = rest_v + torch.einsum("s,svc->vc", b, basis)
    skin, posed_joints = forward_kinematics_rotmats(rest_j, template.joint_tree, rots)
    per_vertex = torch.einsum("vj,jab->vab", weights, skin)
    ones = torch.ones(v_shaped.shape[0], 1, dtype=dtype)
    vh = torch.cat([v_shaped, ones], dim=1)
    verts = torch.einsum("vab,vb->va", per_vertex, vh)[:, :3] + trans
    joints = posed_joints + trans
    if not tensor_in:
        verts = verts.numpy()
        joints = joints.numpy()
    return PosedMesh(vertices=verts, joints=joints,
                     faces=template.faces, part_labels=template.part_labels)


def joint_locations(mesh: PosedMesh):
    """Posed joint centers of a mesh; pure accessor."""
    return mesh.joints


def canonicalize_pose(pose: PoseParams) -> PoseParams:
    """Wrap axis-angle magnitudes into [0, 2*pi)."""
    theta = np.asarray(pose.theta, dtype=np.float64).copy()
    mag = np.linalg.norm(theta, axis=1)
    big = mag >= 2.0 * np.pi
    if big.any():
        wrapped = np.mod(mag[big], 2.0 * np.pi)
        theta[big] *= (wrapped / mag[big])[:, None]
    return PoseParams(theta=theta, translation=np.asarray(pose.translation, dtype=np.float64))


def height_normalize(template: BodyTemplate) -> BodyTemplate:
    """Scale the template so the rest-pose bounding box spans exactly 1 in y."""
    extent = float(template.vertices[:, 1].max() - template.vertices[:, 1].min())
    if extent <= 1e-12:
        raise GeometryError("template has zero vertical extent")
    s = 1.0 / extent
    return replace(
        template,
        vertices=template.vertices * s,
        rest_joints=template.rest_joints * s,
        shape_basis=template.shape_basis * s,
    )


# ---------------------------------------------------------------------------
# procedural toy template
# ---------------------------------------------------------------------------

# (name, parent, rest position) in priority order; builds with >= 8 joints
_JOINT_LADDER = [
    ("root",       None,         (0.0, 0.95, 0.0)),
    ("spine",      "root",       (0.0, 1.22, 0.0)),
    ("neck",       "spine",      (0.0, 1.46, 0.0)),
    ("head",       "neck",       (0.0, 1.56, 0.0)),
    ("l_shoulder", "spine",      (+0.18, 1.42, 0.0)),
    ("r_shoulder", "spine",      (-0.18, 1.42, 0.0)),
    ("l_hip",      "root",       (+0.10, 0.92, 0.0)),
    ("r_hip",      "root",       (-0.10, 0.92, 0.0)),
    ("l_elbow",    "l_shoulder", (+0.46, 1.42, 0.0)),
    ("r_elbow",    "r_shoulder", (-0.46, 1.42, 0.0)),
    ("l_knee",     "l_hip",      (+0.105, 0.52, 0.0)),
    ("r_knee",     "r_hip",      (-0.105, 0.52, 0.0)),
    ("l_wrist",    "l_elbow",    (+0.72, 1.42, 0.0)),
    ("r_wrist",    "r_elbow",    (-0.72, 1.42, 0.0)),
    ("l_ankle",    "l_knee",     (+0.11, 0.10, 0.0)),
    ("r_ankle",    "r_knee",     (-0.11, 0.10, 0.0)),
]

_TIPS = {
    "head_top": (0.0, 1.74, 0.0),
    "l_hand_tip": (+0.86, 1.42, 0.0),
    "r_hand_tip": (-0.86, 1.42, 0.0),
    "l_toe": (+0.11, 0.045, 0.18),
    "r_toe": (-0.11, 0.045, 0.18),
}

# (capsule name, part label, endpoint a, endpoint b, radius, driver chain).
# Endpoints name ladder joints or tips; the driver chain lists candidate
# driving joints from most specific to the fallback used on small skeletons.
_CAPSULES = [
    ("torso_lower", 2, "root", "spine", 0.145, ["root"]),
    ("torso_upper", 2, "spine", "neck", 0.135, ["spine", "root"]),
    ("head",        1, "head", "head_top", 0.095, ["head", "neck", "spine", "root"]),
    ("l_upper_arm", 3, "l_shoulder", "l_elbow", 0.050, ["l_shoulder", "spine", "root"]),
    ("r_upper_arm", 4, "r_shoulder", "r_elbow", 0.050, ["r_shoulder", "spine", "root"]),
    ("l_lower_arm", 5, "l_elbow", "l_wrist", 0.042, ["l_elbow", "l_shoulder", "spine", "root"]),
    ("r_lower_arm", 6, "r_elbow", "r_wrist", 0.042, ["r_elbow", "r_shoulder", "spine", "root"]),
    ("l_hand",      7, "l_wrist", "l_hand_tip", 0.038, ["l_wrist", "l_elbow", "l_shoulder", "spine", "root"]),
    ("r_hand",      8, "r_wrist", "r_hand_tip", 0.038, ["r_wrist", "r_elbow", "r_shoulder", "spine", "root"]),
    ("l_upper_leg", 9, "l_hip", "l_knee", 0.075, ["l_hip", "root"]),
    ("r_upper_leg", 10, "r_hip", "r_knee", 0.075, ["r_hip", "root"]),
    ("l_lower_leg", 11, "l_knee", "l_ankle", 0.055, ["l_knee", "l_hip", "root"]),
    ("r_lower_leg", 12, "r_knee", "r_ankle", 0.055, ["r_knee", "r_hip", "root"]),
    ("l_foot",      13, "l_ankle", "l_toe", 0.040, ["l_ankle", "l_knee", "l_hip", "root"]),
    ("r_foot",      14, "r_ankle", "r_toe", 0.040, ["r_ankle", "r_knee", "r_hip", "root"]),
]

_BLEND_FRACTION = 0.3  # of capsule length shared with the parent joint


def _capsule_mesh(a, b, radius, n_around, n_seg, n_cap):
    """Capsule from a to b: cylinder rings plus hemispherical caps.

    Returns vertices, faces, per-vertex axial coordinate t in [0, 1] along
    the a->b segment (caps clamp to the ends) and per-vertex radial unit
    directions off the segment.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    axis = b - a
    length = np.linalg.norm(axis)
    u = axis / length
    ref = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(u, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)

    angles = 2.0 * np.pi * np.arange(n_around) / n_around
    circle = np.outer(np.cos(angles), e1) + np.outer(np.sin(angles), e2)

    verts = [a - radius * u]  # bottom apex
    rings = []
    for i in range(1, n_cap + 1):  # bottom cap
        phi = 0.5 * np.pi * i / (n_cap + 1)
        center = a - radius * np.cos(phi) * u
        rings.append(center + radius * np.sin(phi) * circle)
    for j in range(n_seg + 1):  # cylinder
        t = j / n_seg
        rings.append(a + t * axis + radius * circle)
    for i in range(n_cap, 0, -1):  # top cap
        phi = 0.5 * np.pi * i / (n_cap + 1)
        center = b + radius * np.cos(phi) * u
        rings.append(center + radius * np.sin(phi) * circle)
    for ring in rings:
        verts.extend(ring)
    verts.append(b + radius * u)  # top apex
    verts = np.array(verts)

    faces = []
    top_apex = len(verts) - 1
    for k in range(n_around):  # bottom fan
        k2 = (k + 1) % n_around
        faces.append([0, 1 + k2, 1 + k])
    n_rings = len(rings)
    for r in range(n_rings - 1):
        base0 = 1 + r * n_around
        base1 = base0 + n_around
        for k in range(n_around):
            k2 = (k + 1) % n_around
            faces.append([base0 + k, base0 + k2, base1 + k])
            faces.append([base0 + k2, base1 + k2, base1 + k])
    last = 1 + (n_rings - 1) * n_around
    for k in range(n_around):  # top fan
        k2 = (k + 1) % n_around
        faces.append([top_apex, last + k, last + k2])
    faces = np.array(faces, dtype=np.int64)

    proj = np.clip((verts - a) @ u, 0.0, length)
    axial_t = proj / length
    on_axis = a + np.outer(proj, u)
    radial = verts - on_axis
    radial /= np.linalg.norm(radial, axis=1, keepdims=True)
    return verts, faces, axial_t, radial


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def build_toy_template(joint_count=16, detail=2, seed=0) -> BodyTemplate:
    """Deterministic capsule body with 14 parts and a 10-component shape basis.

    joint_count selects a prefix of the joint ladder (>= 8 required; extra
    joints beyond 16 become auxiliary spine leaves). detail scales the mesh
    resolution; seed drives the free shape-basis component.
    """
    if joint_count < 8:
        raise ConfigError("joint_count < 8 cannot realize the 14-part body")
    if detail < 1:
        raise ConfigError("detail must be >= 1")

    ladder = _JOINT_LADDER[:min(joint_count, len(_JOINT_LADDER))]
    joint_names = [name for name, _, _ in ladder]
    joint_pos = {name: np.array(p) for name, _, p in ladder}
    parents = {name: par for name, par, _ in ladder}
    n_aux = joint_count - len(ladder)
    for i in range(n_aux):  # auxiliary leaves spread along the spine
        name = f"aux_{i}"
        frac = (i + 1) / (n_aux + 1)
        joint_names.append(name)
        joint_pos[name] = (1 - frac) * joint_pos["root"] + frac * joint_pos["spine"]
        parents[name] = "spine"

    index = {n: i for i, n in enumerate(joint_names)}
    joint_tree = np.array(
        [-1 if parents[n] is None else index[parents[n]] for n in joint_names],
        dtype=np.int64)
    rest_joints = np.stack([joint_pos[n] for n in joint_names])

    endpoint = dict(_TIPS)
    for name, _, p in _JOINT_LADDER:
        endpoint[name] = np.array(p)

    n_around = 4 * detail
    n_seg = detail
    n_cap = max(1, detail - 1)

    all_verts, all_faces, all_labels, all_weights = [], [], [], []
    meta = []  # per-vertex (capsule name, part, axial t, radial dir, axis dir)
    for name, part, a_name, b_name, radius, chain in _CAPSULES:
        a = np.asarray(endpoint[a_name], dtype=np.float64)
        b = np.asarray(endpoint[b_name], dtype=np.float64)
        driver = next(index[c] for c in chain if c in index)
        verts, faces, axial_t, radial = _capsule_mesh(a, b, radius, n_around, n_seg, n_cap)

        w = np.zeros((len(verts), len(joint_names)))
        anchored = np.linalg.norm(a - rest_joints[driver]) < 1e-9
        parent = int(joint_tree[driver])
        if anchored and parent >= 0:
            w_driver = 0.5 + 0.5 * _smoothstep(axial_t / _BLEND_FRACTION)
            w[:, driver] = w_driver
            w[:, parent] = 1.0 - w_driver
        else:
            w[:, driver] = 1.0

        base = sum(len(v) for v in all_verts)
        all_verts.append(verts)
        all_faces.append(faces + base)
        all_labels.append(np.full(len(faces), part, dtype=np.int64))
        all_weights.append(w)
        axis_dir = (b - a) / np.linalg.norm(b - a)
        meta.append((name, part, axial_t, radial, axis_dir, verts))

    vertices = np.concatenate(all_verts)
    faces = np.concatenate(all_faces)
    part_labels = np.concatenate(all_labels)
    skin_weights = np.concatenate(all_weights)

    shape_basis = _build_shape_basis(vertices, meta, seed)

    return BodyTemplate(
        vertices=vertices, faces=faces, joint_tree=joint_tree,
        rest_joints=rest_joints, skin_weights=skin_weights,
        shape_basis=shape_basis, part_labels=part_labels,
        joint_names=joint_names,
    ).validate()


_ARM_PARTS = (3, 4, 5, 6, 7, 8)
_LEG_PARTS = (9, 10, 11, 12, 13, 14)


def _build_shape_basis(vertices, meta, seed):
    n_v = len(vertices)
    basis = np.zeros((10, n_v, 3))
    rng = np.random.default_rng(seed)

    # limb arc coordinate: position along the whole limb chain, continuous
    # across capsule seams so length changes do not tear the surface
    limb_span = {}
    for name, part, axial_t, radial, axis_dir, verts in meta:
        if part in _ARM_PARTS or part in _LEG_PARTS:
            side = name[:2]
            kind = "arm" if part in _ARM_PARTS else "leg"
            key = (side, kind)
            proj = verts @ axis_dir
            limb_span.setdefault(key, []).append((proj.min(), proj.max()))
    limb_range = {k: (min(lo for lo, _ in v), max(hi for _, hi in v))
                  for k, v in limb_span.items()}

    offset = 0
    root_y, neck_y = 0.95, 1.46
    for name, part, axial_t, radial, axis_dir, verts in meta:
        n = len(verts)
        sl = slice(offset, offset + n)
        is_arm = part in _ARM_PARTS
        is_leg = part in _LEG_PARTS
        is_torso = part == 2
        is_head = part == 1

        basis[0, sl] = 0.030 * radial  # overall girth

        if is_arm or is_leg:  # limb length, continuous along the chain
            side = name[:2]
            kind = "arm" if is_arm else "leg"
            lo, hi = limb_range[(side, kind)]
            s = (verts @ axis_dir - lo) / (hi - lo)
            basis[1, sl] = 0.060 * s[:, None] * axis_dir

        torso_s = np.clip((verts[:, 1] - root_y) / (neck_y - root_y), 0.0, 1.0)
        basis[2, sl, 1] = 0.050 * torso_s  # torso length

        if is_head:
            basis[3, sl] = 0.030 * radial
        if is_arm:
            basis[4, sl] = 0.020 * radial
        if is_leg:
            basis[5, sl] = 0.025 * radial
        if is_torso:
            basis[6, sl] = 0.035 * radial
        if is_arm:
            basis[7, sl, 0] = 0.035 * np.sign(verts[:, 0])  # shoulder width
        if is_leg:
            basis[8, sl, 0] = 0.025 * np.sign(verts[:, 0])  # hip width
        offset += n

    # free component: smooth seeded bump field
    k_vec = rng.uniform(1.5, 4.0, size=3) * rng.choice([-1.0, 1.0], size=3)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    bump = 0.020 * np.sin(vertices @ k_vec + phase)
    radial_all = np.concatenate([m[3] for m in meta])
    basis[9] = bump[:, None] * radial_all
    return basis


# ---------------------------------------------------------------------------
# template container (template.json + template.bin)
# ---------------------------------------------------------------------------

_ARRAY_FIELDS = ["vertices", "faces", "joint_tree", "rest_joints",
                 "skin_weights", "shape_basis", "part_labels"]


def save_template(template: BodyTemplate, directory):
    """Write template.json (metadata + layout) and template.bin (LE arrays)."""
    import os
    os.makedirs(directory, exist_ok=True)
    layout = {}
    blob = bytearray()
    for name in _ARRAY_FIELDS:
        arr = np.ascontiguousarray(getattr(template, name))
        arr = arr.astype("<f8") if arr.dtype.kind == "f" else arr.astype("<i8")
        layout[name] = {"dtype": str(arr.dtype.str), "shape": list(arr.shape),
                        "offset": len(blob), "nbytes": arr.nbytes}
        blob.extend(arr.tobytes())
    header = {
        "format": "toy-body-template",
        "version": 1,
        "joint_names": template.joint_names,
        "part_names": template.part_names,
        "checksum": template.checksum(),
        "arrays": layout,
    }
    with open(os.path.join(directory, "template.json"), "w") as f:
        json.dump(header, f, indent=2)
    with open(os.path.join(directory, "template.bin"), "wb") as f:
        f.write(bytes(blob))


def load_template(directory) -> BodyTemplate:
    import os
    with open(os.path.join(directory, "template.json")) as f:
        header = json.load(f)
    if header.get("format") != "toy-body-template":
        raise ConfigError(f"not a template container: {directory}")
    with open(os.path.join(directory, "template.bin"), "rb") as f:
        blob = f.read()
    arrays = {}
    for name, spec in header["arrays"].items():
        arr = np.frombuffer(blob, dtype=np.dtype(spec["dtype"]),
                            count=int(np.prod(spec["shape"])),
                            offset=spec["offset"]).reshape(spec["shape"])
        arrays[name] = arr.copy()
    return BodyTemplate(
        joint_names=header["joint_names"], part_names=header["part_names"],
        **{name: arrays[name] for name in _ARRAY_FIELDS},
    ).validate()

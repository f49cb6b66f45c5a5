"""Evaluation suite: IoU at 14/4/1-segment granularity over accumulated
confusion counts, the RMSE family with translation and rigid Procrustes
alignment, root-relative MPJPE, and best-of-4 left/right swap evaluation.

Internal lengths are normalized-height units; reports convert to millimetres
through a nominal body height (default 1700).
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import (DegenerateAlignmentError, InvalidLabelError, NoDataError,
                     ShapeMismatchError)
from .body_model import N_PARTS, LEFT_RIGHT_PAIRS, PART_GROUPS_4
from .camera_render import DomainBImage, Palette, composite
from .fitter_b2c import fit, fit_joints, neutralize

NOMINAL_HEIGHT_MM = 1700.0

_ARM_PAIRS = [(3, 4), (5, 6), (7, 8)]
_LEG_PAIRS = [(9, 10), (11, 12), (13, 14)]


def _grouping_map(grouping):
    """label -> class index under a grouping; background stays 0."""
    remap = np.zeros(N_PARTS + 1, dtype=np.int64)
    if grouping == 14:
        remap[1:] = np.arange(1, N_PARTS + 1)
    elif grouping == 4:
        for gi, (_, labels) in enumerate(sorted(PART_GROUPS_4.items()), start=1):
            for lab in labels:
                remap[lab] = gi
    elif grouping == 1:
        remap[1:] = 1
    else:
        raise ShapeMismatchError(f"grouping must be 14, 4 or 1, got {grouping}")
    return remap


class SegAccumulator:
    """Confusion-count accumulator; merging is associative and order-free."""

    def __init__(self):
        self.confusion = np.zeros((N_PARTS + 1, N_PARTS + 1), dtype=np.int64)
        self.per_image = []  # kept for the macro average variant

    def update(self, pred_labels, gt_labels):
        pred = np.asarray(pred_labels).ravel()
        gt = np.asarray(gt_labels).ravel()
        if pred.shape != gt.shape:
            raise ShapeMismatchError("pred/gt label shapes disagree")
        for arr in (pred, gt):
            if arr.size and (arr.min() < 0 or arr.max() > N_PARTS):
                raise InvalidLabelError(f"labels outside [0, {N_PARTS}]")
        conf = np.bincount(gt * (N_PARTS + 1) + pred,
                           minlength=(N_PARTS + 1) ** 2).reshape(N_PARTS + 1, N_PARTS + 1)
        self.confusion += conf
        self.per_image.append(conf)
        return self

    def merge(self, other):
        self.confusion += other.confusion
        self.per_image.extend(other.per_image)
        return self

    @staticmethod
    def _iou_from_confusion(conf, grouping):
        remap = _grouping_map(grouping)
        n_groups = int(remap.max())
        grouped = np.zeros((n_groups + 1, n_groups + 1), dtype=np.int64)
        for g in range(N_PARTS + 1):
            for p in range(N_PARTS + 1):
                grouped[remap[g], remap[p]] += conf[g, p]
        vals = []
        for c in range(1, n_groups + 1):  # background class 0 ignored
            tp = grouped[c, c]
            fn = grouped[c].sum() - tp
            fp = grouped[:, c].sum() - tp
            union = tp + fn + fp
            if union > 0:
                vals.append(tp / union)
        if not vals:
            raise NoDataError("no foreground pixels accumulated")
        return float(np.mean(vals))

    def iou(self, grouping, average="micro"):
        if not self.per_image:
            raise NoDataError("no samples accumulated")
        if average == "micro":
            return self._iou_from_confusion(self.confusion, grouping)
        if average == "macro":
            per = []
            for conf in self.per_image:
                try:
                    per.append(self._iou_from_confusion(conf, grouping))
                except NoDataError:
                    continue
            if not per:
                raise NoDataError("no foreground pixels accumulated")
            return float(np.mean(per))
        raise ShapeMismatchError(f"average must be micro or macro, got {average}")


def iou(pred_labels, gt_labels, grouping):
    """Micro IoU of one (or a stack of) label map(s), background ignored."""
    return SegAccumulator().update(pred_labels, gt_labels).iou(grouping)


# ---------------------------------------------------------------------------
# 3D error family
# ---------------------------------------------------------------------------

def _kabsch_rotation(pred_centered, gt_centered):
    h = pred_centered.T @ gt_centered
    u, s, vt = np.linalg.svd(h)
    if s[1] < 1e-12 * max(s[0], 1e-30):
        raise DegenerateAlignmentError("point sets too degenerate for Procrustes")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    fix = np.diag([1.0, 1.0, d])
    return vt.T @ fix @ u.T


def rmse_family(pred_joints, gt_joints, nominal_height_mm=NOMINAL_HEIGHT_MM):
    """(rmse, t_rmse, tr_rmse) in mm.

    t-RMSE after optimal translation (mean centering), tr-RMSE after optimal
    rotation+translation (rigid Procrustes, no scale).
    """
    pred = np.asarray(pred_joints, dtype=np.float64)
    gt = np.asarray(gt_joints, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ShapeMismatchError("joint arrays must both be (J, 3)")
    if pred.shape[0] < 3:
        raise ShapeMismatchError("need at least 3 joints")

    def rms(a, b):
        return float(np.sqrt(((a - b) ** 2).sum(axis=1).mean()))

    rmse = rms(pred, gt)
    pred_c = pred - pred.mean(axis=0)
    gt_c = gt - gt.mean(axis=0)
    t_rmse = rms(pred_c, gt_c)
    rot = _kabsch_rotation(pred_c, gt_c)
    tr_rmse = rms(pred_c @ rot.T, gt_c)
    s = nominal_height_mm
    return rmse * s, t_rmse * s, tr_rmse * s


def mpjpe_root_relative(pred_joints, gt_joints, root_index=0,
                        nominal_height_mm=NOMINAL_HEIGHT_MM):
    """Mean per-joint error in mm after subtracting each set's root joint."""
    pred = np.asarray(pred_joints, dtype=np.float64)
    gt = np.asarray(gt_joints, dtype=np.float64)
    if not (0 <= root_index < pred.shape[0]):
        raise ShapeMismatchError(f"root index {root_index} out of range")
    p = pred - pred[root_index]
    g = gt - gt[root_index]
    return float(np.sqrt(((p - g) ** 2).sum(axis=1)).mean()) * nominal_height_mm


# ---------------------------------------------------------------------------
# best-of-4 swap evaluation
# ---------------------------------------------------------------------------

def _swap_labels(labels, pairs):
    out = labels.copy()
    for a, b in pairs:
        out[labels == a] = b
        out[labels == b] = a
    return out


def swap_variants(labels):
    """The four label maps tried by the swap evaluation, identity first."""
    return [
        ("identity", labels),
        ("arm_swap", _swap_labels(labels, _ARM_PAIRS)),
        ("leg_swap", _swap_labels(labels, _LEG_PAIRS)),
        ("both_swap", _swap_labels(labels, _ARM_PAIRS + _LEG_PAIRS)),
    ]


def best_of_4(b: DomainBImage, fitter, gt_joints, template, palette: Palette,
              nominal_height_mm=NOMINAL_HEIGHT_MM):
    """Fit all four arm/leg swap variants and keep the best.

    Returns (best FitOutput by RMSE, per-metric minima (rmse, t, tr), variant
    name). The reported triple takes each metric's minimum across variants so
    best-of-4 can never exceed the normal metric; the identity variant always
    participates, and ties keep it (strict improvement required to switch).
    """
    gray = np.full(b.rgb.shape, 0.5)
    best = None
    minima = np.full(3, np.inf)
    for name, labels in swap_variants(b.labels):
        variant_b = composite(labels, palette, gray)
        out = fit(fitter, neutralize(variant_b))
        joints = fit_joints(template, out)
        triple = rmse_family(joints, gt_joints, nominal_height_mm)
        minima = np.minimum(minima, triple)
        if best is None or triple[0] < best[1][0]:
            best = (out, triple, name)
    return best[0], tuple(minima), best[2]


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    iou_14: float
    iou_4: float
    iou_1: float
    rmse: float
    t_rmse: float
    tr_rmse: float
    mpjpe: float
    best4_rmse: float
    best4_t_rmse: float
    best4_tr_rmse: float
    sample_count: int

    def validate(self):
        rel = 1e-9
        def leq(a, b):
            return a <= b * (1 + rel) + 1e-12
        if not (leq(self.tr_rmse, self.t_rmse) and leq(self.t_rmse, self.rmse)):
            raise ShapeMismatchError("alignment ordering tr <= t <= rmse violated")
        for b4, normal in ((self.best4_rmse, self.rmse),
                           (self.best4_t_rmse, self.t_rmse),
                           (self.best4_tr_rmse, self.tr_rmse)):
            if not leq(b4, normal):
                raise ShapeMismatchError("best-of-4 exceeded the normal metric")
        return self

    def to_json(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def from_json(cls, d):
        return cls(**d)


class EvalAccumulator:
    """Streaming metric accumulation; merge() is associative so per-sample
    work can run in parallel and combine in any order."""

    def __init__(self):
        self.seg = SegAccumulator()
        self.sums = np.zeros(7)  # rmse, t, tr, mpjpe, b4 rmse, b4 t, b4 tr
        self.count = 0

    def add_sample(self, pred_labels, gt_labels, triple, mpjpe, best4_triple):
        self.seg.update(pred_labels, gt_labels)
        self.sums += np.array([*triple, mpjpe, *best4_triple])
        self.count += 1
        return self

    def merge(self, other):
        self.seg.merge(other.seg)
        self.sums += other.sums
        self.count += other.count
        return self

    def report(self, average="micro") -> MetricReport:
        if self.count == 0:
            raise NoDataError("no samples evaluated")
        m = self.sums / self.count
        return MetricReport(
            iou_14=self.seg.iou(14, average), iou_4=self.seg.iou(4, average),
            iou_1=self.seg.iou(1, average),
            rmse=m[0], t_rmse=m[1], tr_rmse=m[2], mpjpe=m[3],
            best4_rmse=m[4], best4_t_rmse=m[5], best4_tr_rmse=m[6],
            sample_count=self.count).validate()


def evaluate_records(records, gen_a2b, fitter, template, palette: Palette,
                     nominal_height_mm=NOMINAL_HEIGHT_MM, limit=None,
                     average="micro") -> MetricReport:
    """Full-pipeline evaluation: parse each image, fit, score against gt."""
    from .body_model import pose_body
    from .translator_nets import encode_a2b, flood_segments

    acc = EvalAccumulator()
    for record in records[:limit]:
        record.unlock_for_eval()
        raw_b, _ = encode_a2b(gen_a2b, record.image)
        b = flood_segments(raw_b, palette)
        gt_mesh = pose_body(template, record.gt_beta, record.gt_pose)
        gt_joints = gt_mesh.joints

        out = fit(fitter, neutralize(b))
        joints = fit_joints(template, out)
        triple = rmse_family(joints, gt_joints, nominal_height_mm)
        mpjpe = mpjpe_root_relative(joints, gt_joints, 0, nominal_height_mm)
        _, best_triple, _ = best_of_4(b, fitter, gt_joints, template, palette,
                                      nominal_height_mm)
        acc.add_sample(b.labels, record.gt_labels, triple, mpjpe, best_triple)
    return acc.report(average)

"""Segmentation evaluation: overlap scores, surface distances, tumour burden."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import EmptyDataset, EmptyLiver, EmptyMask, ShapeMismatch

CSV_COLUMNS = ["case_id", "dice", "voe", "rvd", "assd", "mssd", "rmsd", "burden_gt", "burden_pred"]


def _data(m):
    return np.asarray(m.data if hasattr(m, "data") else m).astype(bool)


def confusion(pred, gt):
    p, g = _data(pred), _data(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"pred {p.shape} and gt {g.shape} differ")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn, p.size - tp - fp - fn


def overlap_metrics(tp, fp, fn):
    """(dice, voe, rvd); rvd is signed and +inf when gt is empty but pred is not."""
    gt_size = tp + fn
    pred_size = tp + fp
    if gt_size == 0:
        if pred_size == 0:
            return 1.0, 0.0, 0.0
        return 0.0, 1.0, math.inf
    dice = 2 * tp / (2 * tp + fp + fn)
    voe = 1 - tp / (tp + fp + fn)
    rvd = (pred_size - gt_size) / gt_size
    return dice, voe, rvd


_FACE = ndimage.generate_binary_structure(3, 1)


def surface_voxels(m):
    """Integer coordinates of foreground voxels with a background 6-neighbour."""
    m = _data(m)
    interior = ndimage.binary_erosion(m, structure=_FACE, border_value=0)
    return np.argwhere(m & ~interior)


def surface_distances(pred, gt, spacing=(1.0, 1.0, 1.0)):
    """(assd, mssd, rmsd) in mm between border-voxel centres of both masks."""
    a, b = surface_voxels(pred), surface_voxels(gt)
    if len(a) == 0 or len(b) == 0:
        raise EmptyMask("surface distances need two non-empty masks")
    d = np.concatenate([kernels.nearest_distances(a, b, spacing),
                        kernels.nearest_distances(b, a, spacing)])
    return float(d.mean()), float(d.max()), float(np.sqrt(np.mean(d * d)))


def tumor_burden(liver_gt, lesion_gt, lesion_pred):
    """(burden_gt, burden_pred, abs_error) with burden = lesion voxels / liver voxels."""
    n_liver = int(np.count_nonzero(_data(liver_gt)))
    if n_liver == 0:
        raise EmptyLiver("tumour burden needs a non-empty liver mask")
    bg = np.count_nonzero(_data(lesion_gt)) / n_liver
    bp = np.count_nonzero(_data(lesion_pred)) / n_liver
    return bg, bp, abs(bp - bg)


@dataclass
class CaseMetrics:
    case_id: str
    dice: float
    voe: float
    rvd: float
    assd: float
    mssd: float
    rmsd: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    burden_gt: float = float("nan")
    burden_pred: float = float("nan")

    @property
    def has_surface(self):
        return not math.isnan(self.assd)


@dataclass
class MetricsReport:
    cases: list
    dice_avg: float
    dice_global: float
    voe: float
    rvd: float
    assd: float
    mssd: float
    rmsd: float
    burden_rmse: float
    burden_max_error: float
    missed_cases: int = 0
    extra: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for c in self.cases:
                w.writerow([c.case_id] + [repr(float(getattr(c, k))) for k in CSV_COLUMNS[1:]])

    @staticmethod
    def read_csv(path):
        """Per-case rows back as :class:`CaseMetrics` (counts are not stored)."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return [CaseMetrics(r["case_id"], *(float(r[k]) for k in CSV_COLUMNS[1:7]),
                            burden_gt=float(r["burden_gt"]), burden_pred=float(r["burden_pred"]))
                for r in rows]

    def summary(self):
        return {
            "dice_avg": self.dice_avg, "dice_global": self.dice_global, "voe": self.voe,
            "rvd": self.rvd, "assd": self.assd, "mssd": self.mssd, "rmsd": self.rmsd,
            "burden_rmse": self.burden_rmse, "burden_max_error": self.burden_max_error,
            "missed_cases": self.missed_cases, "n_cases": len(self.cases),
        }


def evaluate_case(pred, gt, liver_gt=None, spacing=(1.0, 1.0, 1.0), case_id="0"):
    tp, fp, fn, tn = confusion(pred, gt)
    dice, voe, rvd = overlap_metrics(tp, fp, fn)
    if tp + fp and tp + fn:
        assd, mssd, rmsd = surface_distances(pred, gt, spacing)
    else:
        assd = mssd = rmsd = float("nan")
    bg = bp = float("nan")
    if liver_gt is not None:
        bg, bp, _ = tumor_burden(liver_gt, gt, pred)
    return CaseMetrics(str(case_id), dice, voe, rvd, assd, mssd, rmsd, tp, fp, fn, tn, bg, bp)


def evaluate_dataset(cases):
    """``cases``: iterable of ``(pred, gt, liver_gt, spacing)`` or ``(case_id, pred, gt, liver_gt, spacing)``."""
    results = []
    for i, case in enumerate(cases):
        if len(case) == 5:
            cid, pred, gt, liver, spacing = case
        else:
            (pred, gt, liver, spacing), cid = case, i
        results.append(evaluate_case(pred, gt, liver, spacing, cid))
    return summarize(results)


def summarize(results):
    if not results:
        raise EmptyDataset("no cases to evaluate")
    tp = sum(c.tp for c in results)
    fp = sum(c.fp for c in results)
    fn = sum(c.fn for c in results)
    dice_global = overlap_metrics(tp, fp, fn)[0]
    surf = [c for c in results if c.has_surface]
    finite_rvd = [c.rvd for c in results if math.isfinite(c.rvd)]

    def mean(xs):
        return float(np.mean(xs)) if len(xs) else float("nan")

    errors = [c.burden_pred - c.burden_gt for c in results if not math.isnan(c.burden_gt)]
    return MetricsReport(
        cases=results,
        dice_avg=mean([c.dice for c in results]),
        dice_global=dice_global,
        voe=mean([c.voe for c in results]),
        rvd=mean(finite_rvd),
        assd=mean([c.assd for c in surf]),
        mssd=mean([c.mssd for c in surf]),
        rmsd=mean([c.rmsd for c in surf]),
        burden_rmse=float(np.sqrt(np.mean(np.square(errors)))) if errors else float("nan"),
        burden_max_error=float(np.max(np.abs(errors))) if errors else float("nan"),
        missed_cases=len(results) - len(surf),
    )

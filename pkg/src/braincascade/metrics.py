"""Overlap metrics for extraction evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .volume import Kind, Volume


@dataclass(frozen=True)
class OverlapReport:
    dice: float
    tp: int
    fp: int
    fn: int
    fp_rate: float  # over ground-truth-negative voxels
    gt_voxels: int
    pred_voxels: int
    gt_mm3: float
    pred_mm3: float

    def to_dict(self) -> dict:
        return asdict(self)

    CSV_HEADER = "id,dice,tp,fp,fn,fp_rate,gt_voxels,pred_voxels,gt_mm3,pred_mm3"

    def csv_row(self, case_id: str) -> str:
        return (
            f"{case_id},{self.dice:.6f},{self.tp},{self.fp},{self.fn},"
            f"{self.fp_rate:.6f},{self.gt_voxels},{self.pred_voxels},"
            f"{self.gt_mm3:.3f},{self.pred_mm3:.3f}"
        )


def _check_dims(a: Volume, b: Volume):
    if a.dims != b.dims:
        raise ValueError(f"volume dims mismatch: {a.dims} vs {b.dims}")


def dice(a: Volume, b: Volume) -> float:
    """Dice overlap 2|A.B|/(|A|+|B|); two empty masks score 1.0."""
    _check_dims(a, b)
    inter = int(np.count_nonzero(a.data & b.data))
    total = int(np.count_nonzero(a.data)) + int(np.count_nonzero(b.data))
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def soft_dice(p: Volume, g: Volume, smooth: float = 1e-6) -> float:
    """Soft Dice (2.sum(p*g)+smooth)/(sum(p)+sum(g)+smooth); loss is 1 minus this."""
    _check_dims(p, g)
    if smooth < 0:
        raise ValueError("smooth must be >= 0")
    pd = p.data.astype(np.float64)
    gd = g.data.astype(np.float64)
    num = 2.0 * float((pd * gd).sum()) + smooth
    den = float(pd.sum()) + float(gd.sum()) + smooth
    if den == 0:
        return 1.0
    return num / den


def overlap_report(pred: Volume, gt: Volume, spacing=None) -> OverlapReport:
    _check_dims(pred, gt)
    if spacing is None:
        spacing = gt.spacing
    p = pred.data.astype(bool)
    g = gt.data.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    neg = g.size - int(np.count_nonzero(g))
    voxel_mm3 = float(np.prod(spacing))
    return OverlapReport(
        dice=dice(Volume(p.astype(np.uint8), gt.spacing, Kind.MASK),
                  Volume(g.astype(np.uint8), gt.spacing, Kind.MASK)),
        tp=tp, fp=fp, fn=fn,
        fp_rate=fp / neg if neg else 0.0,
        gt_voxels=int(np.count_nonzero(g)),
        pred_voxels=int(np.count_nonzero(p)),
        gt_mm3=float(np.count_nonzero(g)) * voxel_mm3,
        pred_mm3=float(np.count_nonzero(p)) * voxel_mm3,
    )

"""Detection and consistency metrics: DR, FAR, RC_HR, RC_NDCG."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .dataset import LabeledUsers


def round_half_up(x: float, ndigits: int = 2) -> float:
    """Round half away from zero at ndigits, matching table formatting."""
    q = Decimal(10) ** -ndigits
    return float(Decimal(str(x)).quantize(q, rounding=ROUND_HALF_UP))


def fmt2(x: float | None) -> str:
    return "n/a" if x is None else f"{round_half_up(x):.2f}"


@dataclass(frozen=True)
class DetectionReport:
    """Confusion counts with DR/FAR as raw percentages (None when undefined)."""

    true_positives: int
    false_positives: int
    false_negatives: int
    true_negatives: int
    dr: float | None
    far: float
    stage1_recall: float | None = None
    stage2_accuracy: float | None = None

    @property
    def n_users(self) -> int:
        return self.true_positives + self.false_positives + self.false_negatives + self.true_negatives

    def to_dict(self) -> dict:
        return {
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "true_negatives": self.true_negatives,
            "dr_raw": self.dr,
            "far_raw": self.far,
            "dr": fmt2(self.dr),
            "far": fmt2(self.far),
            "stage1_recall_raw": self.stage1_recall,
            "stage1_recall": fmt2(self.stage1_recall),
            "stage2_accuracy_raw": self.stage2_accuracy,
            "stage2_accuracy": fmt2(self.stage2_accuracy),
        }


def detection_metrics(
    flagged: set[int],
    labels: LabeledUsers,
    candidates: set[int] | None = None,
) -> DetectionReport:
    """Exact confusion counts over all labeled users.

    DR is the percentage of fake users flagged; FAR the percentage of
    genuine users flagged. With zero fake users DR is undefined and
    reported as None. When the Stage-I candidate set is supplied, the
    per-stage breakdown (Stage-I recall, Stage-II accuracy on the
    candidates) is attached as raw percentages.
    """
    for u in flagged:
        if not 0 <= u < labels.n_users:
            raise ValueError(f"flagged user index {u} outside labeled range")
    fakes = set(labels.fake_indices())
    genuine_count = labels.n_genuine
    tp = len(flagged & fakes)
    fp = len(flagged) - tp
    fn = len(fakes) - tp
    tn = genuine_count - fp

    dr = 100.0 * tp / len(fakes) if fakes else None
    far = 100.0 * fp / genuine_count if genuine_count else 0.0

    stage1_recall = None
    stage2_accuracy = None
    if candidates is not None:
        if fakes:
            stage1_recall = 100.0 * len(candidates & fakes) / len(fakes)
        if candidates:
            correct = len(candidates & flagged & fakes) + len(candidates - flagged - fakes)
            stage2_accuracy = 100.0 * correct / len(candidates)

    return DetectionReport(
        true_positives=tp,
        false_positives=fp,
        false_negatives=fn,
        true_negatives=tn,
        dr=dr,
        far=far,
        stage1_recall=stage1_recall,
        stage2_accuracy=stage2_accuracy,
    )


def recommendation_consistency(metric_after: float, metric_clean: float) -> float:
    """RC percentage, rounded half-up to 2 decimals."""
    if metric_clean <= 0:
        raise ValueError(f"clean metric must be > 0, got {metric_clean}")
    return round_half_up(100.0 * metric_after / metric_clean)

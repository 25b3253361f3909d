"""Lung-volume biomarker and its ROC/Youden classifier.

The expected total lung volume for a gestational age comes from a published
cubic growth model; the observed/expected ratio is standardized against the
control group and thresholded at the Youden-optimal operating point. Because
growth-restricted lungs are smaller, low scores normally indicate disease;
the training step measures both score directions and keeps the better one
rather than assuming a sign convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import UndefinedMetricError
from . import stats

GA_WEEKS_MIN = 15.0
GA_WEEKS_MAX = 45.0

# cubic gestational-age model for the expected total lung volume (mL)
_TLV_C3 = -0.0132
_TLV_C2 = 1.14
_TLV_C1 = -27.38
_TLV_C0 = 207.50


class Group(Enum):
    FGR = "fgr"
    CONTROL = "control"

    @classmethod
    def parse(cls, name: str) -> "Group":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown group {name!r}; expected fgr or control") from None


class Polarity(Enum):
    POSITIVE_HIGH = "positive_high"  # scores above the threshold are FGR
    POSITIVE_LOW = "positive_low"    # scores below the threshold are FGR


def parse_ga_weeks(text) -> float:
    """Gestational age from decimal weeks or clinical 'w+d' notation."""
    if isinstance(text, (int, float)):
        ga = float(text)
    else:
        token = str(text).strip()
        if "+" in token:
            w, _, d = token.partition("+")
            ga = float(w) + float(d) / 7.0
        else:
            ga = float(token)
    if not (GA_WEEKS_MIN <= ga <= GA_WEEKS_MAX):
        raise ValueError(f"gestational age {ga} outside [{GA_WEEKS_MIN}, {GA_WEEKS_MAX}] weeks")
    return ga


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    ga_weeks: float
    group: Group
    tlv_ml: float

    def __post_init__(self):
        if not (GA_WEEKS_MIN <= self.ga_weeks <= GA_WEEKS_MAX):
            raise ValueError(f"{self.id}: gestational age {self.ga_weeks} out of range")
        if not self.tlv_ml > 0:
            raise ValueError(f"{self.id}: measured lung volume must be positive")


def expected_tlv(ga_weeks: float) -> float:
    """Expected total lung volume (mL) at a gestational age, Horner form."""
    if not (GA_WEEKS_MIN <= ga_weeks <= GA_WEEKS_MAX):
        raise ValueError(f"gestational age {ga_weeks} outside [{GA_WEEKS_MIN}, {GA_WEEKS_MAX}]")
    value = ((_TLV_C3 * ga_weeks + _TLV_C2) * ga_weeks + _TLV_C1) * ga_weeks + _TLV_C0
    if value <= 0:
        raise UndefinedMetricError(f"growth model gives non-positive volume at GA {ga_weeks}")
    return value


def oe_tlv(observed_ml: float, ga_weeks: float) -> float:
    """Observed-to-expected lung volume ratio."""
    if not observed_ml > 0:
        raise ValueError("observed volume must be positive")
    return observed_ml / expected_tlv(ga_weeks)


def zscore_fit(control_values) -> tuple[float, float]:
    """Mean and sample sd of the control reference values."""
    v = np.asarray(control_values, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("need at least two control values to standardize")
    mean = float(v.mean())
    sd = float(v.std(ddof=1))
    if sd == 0.0:
        raise UndefinedMetricError("control values are constant; z-scores undefined")
    return mean, sd


def zscore_apply(value: float, mean: float, sd: float) -> float:
    if sd <= 0:
        raise UndefinedMetricError("z-score reference sd must be positive")
    return (value - mean) / sd


@dataclass(frozen=True)
class RocAnalysis:
    thresholds: np.ndarray  # strictly decreasing, +inf .. -inf
    sensitivity: np.ndarray
    specificity: np.ndarray
    auc: float
    youden_threshold: float
    youden_j: float
    polarity: Polarity


def roc(scores, labels, polarity: Polarity = Polarity.POSITIVE_HIGH) -> RocAnalysis:
    """ROC over midpoint thresholds, trapezoidal AUC, Youden operating point.

    ``labels`` is an iterable of booleans (True = positive/FGR). Candidate
    thresholds sit halfway between consecutive distinct scores plus the two
    infinite endpoints, so the decision boundary never coincides with a
    training score. Youden ties prefer the more specific threshold.

    The ``thresholds`` array is kept on the oriented scale (strictly
    decreasing for either polarity); ``youden_threshold`` is reported on the
    original score scale, directly usable with :func:`classify`.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    if s.size != y.size:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc needs both classes present")

    oriented = s if polarity is Polarity.POSITIVE_HIGH else -s
    distinct = np.unique(oriented)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    thr = np.concatenate([[math.inf], mids[::-1], [-math.inf]])

    sens = np.empty(thr.size)
    spec = np.empty(thr.size)
    for i, t in enumerate(thr):
        pred_pos = oriented > t
        sens[i] = (pred_pos & y).sum() / n_pos
        spec[i] = (~pred_pos & ~y).sum() / n_neg

    fpr = 1.0 - spec
    auc = float(np.trapezoid(sens, fpr)) if hasattr(np, "trapezoid") else float(np.trapz(sens, fpr))

    j = sens + spec - 1.0
    best = np.flatnonzero(j >= j.max() - 1e-15)
    # prefer high specificity, then the larger threshold, deterministically
    best = best[np.lexsort((-thr[best], -spec[best]))][0]
    youden_thr = float(thr[best])

    return RocAnalysis(
        thresholds=thr, sensitivity=sens, specificity=spec, auc=auc,
        youden_threshold=-youden_thr if polarity is Polarity.POSITIVE_LOW else youden_thr,
        youden_j=float(j[best]), polarity=polarity,
    )


def classify(score: float, threshold: float, polarity: Polarity) -> Group:
    """Strict-inequality decision; a score exactly at the threshold is Control."""
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    if polarity is Polarity.POSITIVE_HIGH:
        positive = score > threshold
    else:
        positive = score < threshold
    return Group.FGR if positive else Group.CONTROL


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def accuracy(self) -> float:
        total = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.tn) / total if total else math.nan


def confusion(predictions, labels) -> Confusion:
    """Counts with FGR as the positive class."""
    pred = list(predictions)
    lab = list(labels)
    if len(pred) != len(lab):
        raise ValueError("predictions and labels must have equal length")
    tp = sum(1 for p, l in zip(pred, lab) if p is Group.FGR and l is Group.FGR)
    tn = sum(1 for p, l in zip(pred, lab) if p is Group.CONTROL and l is Group.CONTROL)
    fp = sum(1 for p, l in zip(pred, lab) if p is Group.FGR and l is Group.CONTROL)
    fn = sum(1 for p, l in zip(pred, lab) if p is Group.CONTROL and l is Group.FGR)
    return Confusion(tp=tp, fp=fp, tn=tn, fn=fn)


@dataclass(frozen=True)
class TrainedClassifier:
    control_mean: float
    control_sd: float
    polarity: Polarity
    threshold: float  # on the z-score scale
    auc: float
    youden_j: float

    def score(self, record: SubjectRecord) -> float:
        return zscore_apply(oe_tlv(record.tlv_ml, record.ga_weeks),
                            self.control_mean, self.control_sd)

    def predict(self, record: SubjectRecord) -> Group:
        return classify(self.score(record), self.threshold, self.polarity)


def train_classifier(records: list[SubjectRecord]) -> TrainedClassifier:
    """Calibrate the volume-ratio classifier on a training cohort.

    Ratios are standardized against the control subjects; the score direction
    (high vs low = disease) is chosen by training AUC, so the classifier does
    not presuppose which way the ratios separate.
    """
    if len(records) < 2:
        raise ValueError("training needs at least two subjects")
    ratios = np.array([oe_tlv(r.tlv_ml, r.ga_weeks) for r in records])
    labels = np.array([r.group is Group.FGR for r in records])
    if labels.all() or not labels.any():
        raise ValueError("training set must contain both FGR and control subjects")
    mean, sd = zscore_fit(ratios[~labels])
    z = (ratios - mean) / sd

    high = roc(z, labels, Polarity.POSITIVE_HIGH)
    low = roc(z, labels, Polarity.POSITIVE_LOW)
    best = high if high.auc >= low.auc else low
    return TrainedClassifier(
        control_mean=mean, control_sd=sd, polarity=best.polarity,
        threshold=best.youden_threshold, auc=best.auc, youden_j=best.youden_j,
    )

"""Cohort-level comparison of manual vs automatic segmentation pipelines.

Works on a flat per-subject summary table (one row per subject, mask source
and fusion strategy) and produces three outputs: paired t-tests of manual vs
automatic for every metric, inter-subject coefficients of variation per
group, and the mean absolute percentage difference of those CVs as an
agreement score per fusion strategy.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import stats
from .fgr import Group
from .ivim import IvimMaps, summarize
from .masks import FusionStrategy

SOURCES = ("manual", "automatic")

MEAN_METRICS = ("volume_ml", "s0_mean", "f_mean", "d_star_mean", "adc_mean",
                "residual_mean")
VARIABILITY_METRICS = ("s0_cv", "f_cv", "d_star_cv", "adc_cv",
                       "f_entropy", "d_star_entropy", "adc_entropy")
ALL_METRICS = MEAN_METRICS + VARIABILITY_METRICS

SUMMARY_COLUMNS = ("subject", "group", "source", "strategy") + ALL_METRICS


def summary_row(subject: str, group: Group, source: str,
                strategy: FusionStrategy, maps: IvimMaps,
                entropy_bins: int = 64) -> dict:
    """One summaries-table row computed from a subject's fitted maps."""
    if source not in SOURCES:
        raise ValueError(f"source must be one of {SOURCES}, got {source!r}")
    summary = summarize(maps)
    if summary.empty:
        raise ValueError(f"{subject}: no fitted voxels, nothing to summarize")
    m = maps.mask.data
    row = {
        "subject": subject,
        "group": group.value,
        "source": source,
        "strategy": strategy.value,
        "volume_ml": summary.volume_ml,
        "s0_mean": summary.s0.mean,
        "f_mean": summary.f.mean,
        "d_star_mean": summary.d_star.mean,
        "adc_mean": summary.adc.mean,
        "residual_mean": summary.residual.mean,
        "s0_cv": stats.cv(maps.s0.data[m]),
        "f_cv": stats.cv(maps.f.data[m]),
        "d_star_cv": stats.cv(maps.d_star.data[m]),
        "adc_cv": stats.cv(maps.adc.data[m]),
        "f_entropy": stats.shannon_entropy(maps.f.data[m], entropy_bins),
        "d_star_entropy": stats.shannon_entropy(maps.d_star.data[m], entropy_bins),
        "adc_entropy": stats.shannon_entropy(maps.adc.data[m], entropy_bins),
    }
    return row


def _strategies(rows: list[dict]) -> list[str]:
    seen: list[str] = []
    for r in rows:
        if r["strategy"] not in seen:
            seen.append(r["strategy"])
    return seen


def _pick(rows, strategy, source):
    return {r["subject"]: r for r in rows
            if r["strategy"] == strategy and r["source"] == source}


def paired_table(rows: list[dict]) -> list[dict]:
    """Paired t-test p-values (manual vs automatic) per metric and strategy.

    Output rows look like {"metric": ..., "<strategy>": p, ...} with one
    column per fusion strategy present in the input.
    """
    strategies = _strategies(rows)
    out = [{"metric": metric} for metric in ALL_METRICS]
    for strategy in strategies:
        manual = _pick(rows, strategy, "manual")
        automatic = _pick(rows, strategy, "automatic")
        subjects = sorted(manual)
        if sorted(automatic) != subjects:
            raise ValueError(
                f"strategy {strategy}: manual and automatic rows cover different subjects"
            )
        if len(subjects) < 2:
            raise ValueError(
                f"strategy {strategy}: paired tests need at least two subjects"
            )
        for slot, metric in zip(out, ALL_METRICS):
            x = [float(manual[s][metric]) for s in subjects]
            y = [float(automatic[s][metric]) for s in subjects]
            slot[strategy] = stats.paired_t_test(x, y).p_value
    return out


def cv_table(rows: list[dict]) -> list[dict]:
    """Inter-subject CV (sample sd / mean) per parameter, strategy, source, group."""
    strategies = _strategies(rows)
    out = []
    for metric in MEAN_METRICS:
        entry: dict = {"parameter": metric}
        for strategy in strategies:
            for source in SOURCES:
                for group in ("control", "fgr"):
                    values = [float(r[metric]) for r in rows
                              if r["strategy"] == strategy and r["source"] == source
                              and r["group"] == group]
                    key = f"{strategy}_{source}_{group}"
                    if len(values) >= 2:
                        entry[key] = stats.cv(values, ddof=1)
                    else:
                        entry[key] = float("nan")
        out.append(entry)
    return out


def cv_agreement(rows: list[dict]) -> list[dict]:
    """Mean absolute % difference of inter-subject CVs, manual vs automatic."""
    cvs = cv_table(rows)
    out = []
    for strategy in _strategies(rows):
        manual_cvs = []
        auto_cvs = []
        for entry in cvs:
            for group in ("control", "fgr"):
                a = entry.get(f"{strategy}_manual_{group}")
                b = entry.get(f"{strategy}_automatic_{group}")
                if a is not None and b is not None and a == a and b == b:  # skip NaN
                    manual_cvs.append(a)
                    auto_cvs.append(b)
        if not manual_cvs:
            raise ValueError(f"strategy {strategy}: no CV pairs to compare")
        out.append({
            "strategy": strategy,
            "mean_abs_pct_diff": stats.mean_abs_pct_diff(manual_cvs, auto_cvs),
            "n_pairs": len(manual_cvs),
        })
    return out


@dataclass(frozen=True)
class ReportTables:
    paired: list[dict]
    cv: list[dict]
    agreement: list[dict]


def build_report(rows: list[dict]) -> ReportTables:
    for row in rows:
        missing = [c for c in SUMMARY_COLUMNS if c not in row]
        if missing:
            raise ValueError(f"summary row missing columns {missing}")
    return ReportTables(paired=paired_table(rows), cv=cv_table(rows),
                        agreement=cv_agreement(rows))

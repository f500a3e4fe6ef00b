"""Evaluation metrics: ROC/AUC, attack success ratio, system accuracy, reports.

AUC is the probability that a random adversarial score outranks a random
clean score, counting ties as one half (Mann-Whitney). The same number is
available through an explicit threshold sweep over the score values; the
two routes agree to floating-point precision and are cross-checked in the
test suite. Reports are CSV files with fixed column orders plus a JSON
mirror, byte-deterministic for identical inputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .adaptive import DecisionCounts
from .pipeline import CategorizedSets


@dataclass(frozen=True)
class ScoredPopulation:
    """Detection scores of the adversarial (positive) and clean (negative) sides."""

    positive: np.ndarray
    negative: np.ndarray


# Fixed report schemas.
MODEL_ACCURACY_COLUMNS = ("attack", "model", "clean_accuracy", "attacked_accuracy", "drop_points")
ATTACK_SUMMARY_COLUMNS = ("attack", "set_crc", "set_mis", "set_adv", "success_ratio")
DETECTOR_AUC_COLUMNS = ("attack", "auc", "n_clean", "n_adversarial")
K_SWEEP_COLUMNS = (
    "attack",
    "profile",
    "k",
    "n_a",
    "n_b",
    "n_c",
    "n_d",
    "n_e",
    "n_f",
    "f",
    "acc_with",
    "acc_without",
    "auc",
)
OPTIMAL_K_COLUMNS = ("attack", "profile", "k_star", "f_min", "acc_with", "acc_without")


def _as_scores(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape(-1)


def roc_auc(positive, negative) -> float:
    """Mann-Whitney AUC: P(positive > negative) + 0.5 * P(tie).

    Computed through midranks so heavy ties cost nothing.
    """
    pos = _as_scores(positive)
    neg = _as_scores(negative)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both populations must be nonempty")
    combined = np.concatenate([pos, neg])
    order = np.argsort(combined, kind="stable")
    ranks = np.empty(len(combined), dtype=np.float64)
    sorted_vals = combined[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank of the tie group
        i = j + 1
    rank_sum = ranks[: len(pos)].sum()
    u = rank_sum - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def roc_points(positive, negative) -> tuple[np.ndarray, np.ndarray]:
    """ROC curve (fpr, tpr) from sweeping a 'score > threshold' detector.

    Thresholds run over every distinct score value; the endpoints (0,0)
    and (1,1) are always included.
    """
    pos = _as_scores(positive)
    neg = _as_scores(negative)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both populations must be nonempty")
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    fpr = [0.0]
    tpr = [0.0]
    for t in thresholds:
        fpr.append(float((neg > t).mean()))
        tpr.append(float((pos > t).mean()))
    fpr.append(1.0)
    tpr.append(1.0)
    return np.array(fpr), np.array(tpr)


def roc_auc_sweep(positive, negative) -> float:
    """Trapezoid area under the threshold-sweep ROC curve."""
    fpr, tpr = roc_points(positive, negative)
    return float(((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0).sum())


def attack_success_ratio(sets: CategorizedSets) -> float:
    """Percentage of attack attempts (on correctly classified images) that succeeded."""
    attempts = len(sets.set_crc) + len(sets.set_adv)
    if attempts == 0:
        raise ValueError("no attack attempts: both set_crc and set_adv are empty")
    return 100.0 * len(sets.set_adv) / attempts


def system_accuracy(counts: DecisionCounts, include_misclassified: bool) -> float:
    """Percentage of good decisions.

    With misclassified samples included, every decision counts and the
    good ones are a, b, c. Without them, the misclassified set is dropped
    entirely and accuracy is (N_a + N_c) / (N_a + N_c + N_d + N_f).
    (Good-decision-fraction definition, v1.)
    """
    if include_misclassified:
        denominator = counts.total()
        numerator = counts.n_a + counts.n_b + counts.n_c
    else:
        denominator = counts.n_a + counts.n_c + counts.n_d + counts.n_f
        numerator = counts.n_a + counts.n_c
    if denominator == 0:
        raise ValueError("accuracy denominator is zero")
    return 100.0 * numerator / denominator


def emit_report(
    rows: Sequence[dict],
    csv_path: str | Path,
    columns: Sequence[str],
    *,
    note: str | None = None,
) -> None:
    """Write rows as a fixed-column CSV plus a JSON mirror next to it.

    Missing cells become empty fields. Output depends only on the inputs,
    so identical calls produce byte-identical files.
    """
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({col: _cell(row.get(col)) for col in columns})
    summary = {
        "columns": list(columns),
        "row_count": len(rows),
        "rows": [{col: row.get(col) for col in columns} for row in rows],
    }
    if note is not None:
        summary["note"] = note
    csv_path.with_suffix(".json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (np.integer,)):
        return str(int(value))
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)

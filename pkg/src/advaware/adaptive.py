"""Cost-weighted selection of the verifier's top-k parameter.

Six decision counters are tallied per k; a cost profile assigns gains to
the three good decisions and costs to the three bad ones. The objective

    f(k) = C_d*N_d + C_e*N_e + C_f*N_f - C_a*N_a - C_b*N_b - C_c*N_c

is evaluated exhaustively over the candidate k values and the minimizer
wins (ties toward the smaller, more security-conservative k). Four named
application profiles ship built in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .neuralnet import NeuralNet
from .pipeline import (
    CategorizedSets,
    DecisionKind,
    SetOrigin,
    adv_aware,
    decision_of,
    detection_scores,
    flatten,
)


@dataclass(frozen=True)
class CostProfile:
    """Gains for good decisions (a, b, c) and costs for bad ones (d, e, f)."""

    name: str
    c_a: float
    c_b: float
    c_c: float
    c_d: float
    c_e: float
    c_f: float

    def __post_init__(self) -> None:
        if min(self.c_a, self.c_b, self.c_c, self.c_d, self.c_e, self.c_f) < 0:
            raise ValueError("all six cost weights must be >= 0")

    def scaled(self, factor: float) -> "CostProfile":
        if factor <= 0:
            raise ValueError("scaling factor must be positive")
        return CostProfile(
            name=self.name,
            c_a=self.c_a * factor,
            c_b=self.c_b * factor,
            c_c=self.c_c * factor,
            c_d=self.c_d * factor,
            c_e=self.c_e * factor,
            c_f=self.c_f * factor,
        )


_BUILTIN_PROFILES = (
    CostProfile("autonomous-driving", c_a=0.3, c_b=0.1, c_c=0.5, c_d=0.1, c_e=0.3, c_f=0.8),
    CostProfile("healthcare", c_a=0.7, c_b=0.4, c_c=0.1, c_d=0.4, c_e=0.1, c_f=0.3),
    CostProfile("face-recognition", c_a=0.7, c_b=0.4, c_c=0.2, c_d=0.4, c_e=0.2, c_f=0.2),
    CostProfile("inappropriate-content", c_a=0.7, c_b=0.1, c_c=0.2, c_d=0.3, c_e=0.1, c_f=0.1),
)


def builtin_profiles() -> list[CostProfile]:
    """The four built-in application cost profiles."""
    return list(_BUILTIN_PROFILES)


def profile_by_name(name: str) -> CostProfile:
    for profile in _BUILTIN_PROFILES:
        if profile.name == name:
            return profile
    known = ", ".join(p.name for p in _BUILTIN_PROFILES)
    raise KeyError(f"unknown cost profile {name!r}; built-ins are: {known}")


@dataclass(frozen=True)
class DecisionCounts:
    n_a: int = 0
    n_b: int = 0
    n_c: int = 0
    n_d: int = 0
    n_e: int = 0
    n_f: int = 0

    def total(self) -> int:
        return self.n_a + self.n_b + self.n_c + self.n_d + self.n_e + self.n_f

    def as_dict(self) -> dict[str, int]:
        return {
            "n_a": self.n_a,
            "n_b": self.n_b,
            "n_c": self.n_c,
            "n_d": self.n_d,
            "n_e": self.n_e,
            "n_f": self.n_f,
        }


def count_decisions(sets: CategorizedSets, net: NeuralNet, verifier, k: int) -> DecisionCounts:
    """Run the detector at parameter k over all three sets and tally decisions.

    This is the literal per-sample route; the k-sweep below reaches the
    same counts through precomputed rank scores.
    """
    if not 1 <= k <= verifier.class_count:
        raise ValueError(f"k must lie in [1, {verifier.class_count}], got {k}")
    tally = {kind: 0 for kind in DecisionKind}
    for i in sets.set_crc:
        verdict = adv_aware(sets.dataset.pixels[i], net, verifier, k)
        tally[decision_of(SetOrigin.CRC, verdict)] += 1
    for i in sets.set_mis:
        verdict = adv_aware(sets.dataset.pixels[i], net, verifier, k)
        tally[decision_of(SetOrigin.MIS, verdict)] += 1
    for entry in sets.set_adv:
        verdict = adv_aware(entry.example.perturbed, net, verifier, k)
        tally[decision_of(SetOrigin.ADV, verdict)] += 1
    return DecisionCounts(
        n_a=tally[DecisionKind.DEC_A],
        n_b=tally[DecisionKind.DEC_B],
        n_c=tally[DecisionKind.DEC_C],
        n_d=tally[DecisionKind.DEC_D],
        n_e=tally[DecisionKind.DEC_E],
        n_f=tally[DecisionKind.DEC_F],
    )


def counts_at_k(scores, k: int) -> DecisionCounts:
    """Decision counts at parameter k from precomputed detection scores.

    A sample is accepted when its rank score is <= k, which is exactly
    the detector's top-k membership test.
    """
    crc_pass = int((scores.crc <= k).sum())
    mis_pass = int((scores.mis <= k).sum())
    adv_pass = int((scores.adv <= k).sum())
    return DecisionCounts(
        n_a=crc_pass,
        n_d=len(scores.crc) - crc_pass,
        n_e=mis_pass,
        n_b=len(scores.mis) - mis_pass,
        n_f=adv_pass,
        n_c=len(scores.adv) - adv_pass,
    )


def objective(counts: DecisionCounts, profile: CostProfile) -> float:
    """The weighted cost objective over raw decision counts."""
    return (
        profile.c_d * counts.n_d
        + profile.c_e * counts.n_e
        + profile.c_f * counts.n_f
        - profile.c_a * counts.n_a
        - profile.c_b * counts.n_b
        - profile.c_c * counts.n_c
    )


@dataclass(frozen=True)
class KSweepEntry:
    k: int
    counts: DecisionCounts
    objective: float


@dataclass(frozen=True)
class OptimalKResult:
    k_star: int
    table: tuple[KSweepEntry, ...]

    @property
    def best(self) -> KSweepEntry:
        for entry in self.table:
            if entry.k == self.k_star:
                return entry
        raise AssertionError("k_star missing from its own table")


def sweep_counts(sets: CategorizedSets, net: NeuralNet, verifier, k_range: Iterable[int]) -> list[tuple[int, DecisionCounts]]:
    """Decision counts for every k in k_range, scoring each sample once."""
    ks = _validated_k_range(k_range, verifier.class_count)
    scores = detection_scores(sets, net, verifier)
    return [(k, counts_at_k(scores, k)) for k in ks]


def optimal_k(
    sets: CategorizedSets,
    net: NeuralNet,
    verifier,
    profile: CostProfile,
    k_range: Iterable[int] | None = None,
) -> OptimalKResult:
    """Exhaustively minimize the cost objective over k.

    Returns the minimizing k (ties toward the smaller k) together with
    the full f(k) table for reporting.
    """
    ks = _validated_k_range(
        range(1, verifier.class_count + 1) if k_range is None else k_range,
        verifier.class_count,
    )
    scores = detection_scores(sets, net, verifier)
    table = []
    k_star = None
    best = np.inf
    for k in ks:
        counts = counts_at_k(scores, k)
        f = objective(counts, profile)
        table.append(KSweepEntry(k=k, counts=counts, objective=f))
        if f < best:
            best, k_star = f, k
    assert k_star is not None
    return OptimalKResult(k_star=k_star, table=tuple(table))


def _validated_k_range(k_range: Iterable[int], class_count: int) -> list[int]:
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range must not be empty")
    if ks[0] < 1 or ks[-1] > class_count:
        raise ValueError(f"k_range must lie within [1, {class_count}], got [{ks[0]}, {ks[-1]}]")
    return ks

"""Categorization, detection and decision bookkeeping.

`categorize` partitions a test set against a trained net and one attack:
mispredicted clean images, correctly predicted images the attack failed
on, and successfully attacked images (which carry their perturbed
pixels). `adv_aware` is the detector itself: the primary prediction is
accepted only if it appears in the verifier's top-k list. Each (origin
set, verdict) pair maps to one of six decision kinds; the continuous
detection score underneath is the verifier rank of the primary label.

Categorized sets persist as a JSON manifest plus a .npy sidecar of
perturbed pixels so that detection and k-selection can rerun without
regenerating attacks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .attacks import AdversarialExample, AttackConfig, attack_success, run_attack
from .data import Dataset, Image, flatten
from .neuralnet import NeuralNet

CATEGORIZED_FORMAT = "advaware.categorized/v1"


class SetOrigin(Enum):
    CRC = "crc"  # correctly classified, attack failed
    MIS = "mis"  # misclassified clean
    ADV = "adv"  # successfully attacked


class DecisionKind(Enum):
    DEC_A = "a"  # crc accepted: authentic and correctly identified
    DEC_B = "b"  # mis flagged: misclassification caught as forged
    DEC_C = "c"  # adv flagged: attack caught
    DEC_D = "d"  # crc flagged: authentic image misidentified as forged
    DEC_E = "e"  # mis accepted: misclassification passed as authentic
    DEC_F = "f"  # adv accepted: attack passed as authentic


GOOD_DECISIONS = (DecisionKind.DEC_A, DecisionKind.DEC_B, DecisionKind.DEC_C)


@dataclass(frozen=True)
class Verdict:
    """Detector output: forged flag, and the accepted label when not forged."""

    forged: bool
    label: int | None

    def __post_init__(self) -> None:
        if self.forged != (self.label is None):
            raise ValueError("verdict must carry a label exactly when not forged")


@dataclass
class AdvEntry:
    """A successfully attacked test sample: its index and the attack output."""

    index: int
    example: AdversarialExample


@dataclass
class CategorizedSets:
    """The three-way partition of one test set under one attack."""

    dataset: Dataset
    attack: AttackConfig
    set_crc: list[int]
    set_mis: list[int]
    set_adv: list[AdvEntry]

    def sizes(self) -> tuple[int, int, int]:
        return len(self.set_crc), len(self.set_mis), len(self.set_adv)

    def validate_partition(self) -> None:
        """Raise if the three sets are not a disjoint cover of the test set."""
        indices = sorted(self.set_crc + self.set_mis + [e.index for e in self.set_adv])
        if indices != list(range(len(self.dataset))):
            raise ValueError("set_crc/set_mis/set_adv must disjointly cover the test set")


def categorize(test: Dataset, net: NeuralNet, attack: AttackConfig) -> CategorizedSets:
    """Partition a test set: mispredicted, attack-resistant, successfully attacked.

    Each correctly predicted image gets one attack attempt; the attack
    output lands in set_adv only if it flips the prediction away from the
    true label.
    """
    predictions = net.predict_batch(test.features())
    set_crc: list[int] = []
    set_mis: list[int] = []
    set_adv: list[AdvEntry] = []
    for i in range(len(test)):
        image = test[i]
        if predictions[i] != image.label:
            set_mis.append(i)
            continue
        example = run_attack(net, image, attack)
        if attack_success(net, example, image.label):
            set_adv.append(AdvEntry(index=i, example=example))
        else:
            set_crc.append(i)
    return CategorizedSets(dataset=test, attack=attack, set_crc=set_crc, set_mis=set_mis, set_adv=set_adv)


def adv_aware(x: np.ndarray, net: NeuralNet, verifier, k: int) -> Verdict:
    """Accept the primary prediction only if the verifier ranks it in its top k."""
    if not 1 <= k <= verifier.class_count:
        raise ValueError(f"k must lie in [1, {verifier.class_count}], got {k}")
    y = net.predict(x)
    if y in verifier.top_k(flatten(x), k):
        return Verdict(forged=False, label=y)
    return Verdict(forged=True, label=None)


def decision_of(origin: SetOrigin, verdict: Verdict) -> DecisionKind:
    """Map (which set the sample came from, detector verdict) to a decision kind."""
    if origin is SetOrigin.CRC:
        return DecisionKind.DEC_D if verdict.forged else DecisionKind.DEC_A
    if origin is SetOrigin.MIS:
        return DecisionKind.DEC_B if verdict.forged else DecisionKind.DEC_E
    return DecisionKind.DEC_C if verdict.forged else DecisionKind.DEC_F


def detection_score(x: np.ndarray, net: NeuralNet, verifier) -> int:
    """Verifier rank of the primary label; the detector flags forged when rank > k."""
    return verifier.rank_of(flatten(x), net.predict(x))


@dataclass
class DetectionScores:
    """Per-set detection scores: clean pixels for crc/mis, perturbed for adv."""

    crc: np.ndarray
    mis: np.ndarray
    adv: np.ndarray


def detection_scores(sets: CategorizedSets, net: NeuralNet, verifier) -> DetectionScores:
    """Score every categorized sample in one batched pass per set."""

    def score_matrix(mat: np.ndarray) -> np.ndarray:
        if len(mat) == 0:
            return np.zeros(0, dtype=np.int64)
        predicted = net.predict_batch(mat)
        return verifier.rank_batch(mat, predicted)

    features = sets.dataset.features()
    crc = score_matrix(features[sets.set_crc])
    mis = score_matrix(features[sets.set_mis])
    adv_mat = (
        np.stack([e.example.perturbed.reshape(-1) for e in sets.set_adv])
        if sets.set_adv
        else np.zeros((0, sets.dataset.feature_dim))
    )
    adv = score_matrix(adv_mat)
    return DetectionScores(crc=crc, mis=mis, adv=adv)


# -- persistence --------------------------------------------------------


def save_categorized(sets: CategorizedSets, json_path: str | Path, blob_path: str | Path) -> None:
    """Write the partition manifest (JSON) and perturbed pixels (npy sidecar)."""
    json_path = Path(json_path)
    blob_path = Path(blob_path)
    blob = (
        np.stack([e.example.perturbed for e in sets.set_adv])
        if sets.set_adv
        else np.zeros((0, *sets.dataset.image_shape))
    )
    np.save(blob_path, blob)
    doc = {
        "format": CATEGORIZED_FORMAT,
        "attack": {
            "method": sets.attack.method,
            "epsilon": sets.attack.epsilon,
            "alpha": sets.attack.alpha,
            "steps": sets.attack.steps,
            "overshoot": sets.attack.overshoot,
            "c": sets.attack.c,
            "kappa": sets.attack.kappa,
            "lr": sets.attack.lr,
        },
        "test_size": len(sets.dataset),
        "set_crc": sets.set_crc,
        "set_mis": sets.set_mis,
        "set_adv": [
            {"index": e.index, "iterations_used": e.example.iterations_used}
            for e in sets.set_adv
        ],
        "blob": blob_path.name,
    }
    json_path.write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_categorized(json_path: str | Path, dataset: Dataset) -> CategorizedSets:
    """Rebuild a categorized partition from its manifest against the same test set."""
    json_path = Path(json_path)
    doc = json.loads(json_path.read_text())
    if doc.get("format") != CATEGORIZED_FORMAT:
        raise ValueError(f"unsupported manifest format {doc.get('format')!r}")
    if doc["test_size"] != len(dataset):
        raise ValueError(
            f"manifest was built for a {doc['test_size']}-image test set, got {len(dataset)}"
        )
    attack = AttackConfig(**doc["attack"])
    blob = np.load(json_path.parent / doc["blob"])
    if len(blob) != len(doc["set_adv"]):
        raise ValueError("perturbed-pixel sidecar does not match the manifest")
    set_adv = []
    for row, entry in zip(blob, doc["set_adv"]):
        index = entry["index"]
        image = dataset[index]
        set_adv.append(
            AdvEntry(
                index=index,
                example=AdversarialExample(
                    original=image,
                    perturbed=row,
                    attack=attack,
                    succeeded=True,
                    iterations_used=entry["iterations_used"],
                ),
            )
        )
    sets = CategorizedSets(
        dataset=dataset,
        attack=attack,
        set_crc=list(doc["set_crc"]),
        set_mis=list(doc["set_mis"]),
        set_adv=set_adv,
    )
    sets.validate_partition()
    return sets


def attack_dataset(net: NeuralNet, dataset: Dataset, attack: AttackConfig) -> np.ndarray:
    """Attack every image regardless of its clean prediction.

    Returns the perturbed pixel array, shape (n, c, h, w). This is the
    whole-test-set view used for before/after accuracy comparisons, as
    opposed to the partition above which only attacks correct predictions.
    """
    out = np.empty_like(dataset.pixels)
    for i in range(len(dataset)):
        image = dataset[i]
        out[i] = run_attack(net, image, attack).perturbed
    return out
